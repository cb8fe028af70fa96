"""Stochastic first/second-order oracles and sample-size schedules.

OracleState owns the RNG stream, the current batch sizes, the staged
geometric growth schedule and (optionally) the variance-reduction anchor.
It also counts component evaluations so the driver can report epochs
exactly: epochs = grad_evals / N (+ hess_evals / N when Hessian work is
charged).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from stochnewton.model import CompositeProblem, loss_grad, make_hess_operator


@dataclass
class OracleState:
    n_points: int
    grad_size: int
    hess_size: int
    grad_cap: int
    hess_cap: int
    rng: np.random.Generator
    growth_factor: float = 3.375
    grad_period: int = 30   # 0 disables gradient-batch growth
    hess_period: int = 15   # 0 disables Hessian-batch growth
    vr_enabled: bool = False
    vr_period: int = 6      # anchor refresh interval m
    vr_anchor_x: Optional[np.ndarray] = None
    vr_anchor_grad: Optional[np.ndarray] = None
    # evaluation counters (component gradient evals / Hessian-vector row applications)
    grad_evals: int = 0
    hess_evals: int = 0
    # iteration at which grad_size first reached grad_cap; Hessian growth is
    # armed from this point on
    hess_growth_anchor: Optional[int] = None
    last_batch: Optional[np.ndarray] = None

    def __post_init__(self):
        for name in ("grad_size", "hess_size", "grad_cap", "hess_cap"):
            v = getattr(self, name)
            if not (1 <= v <= self.n_points):
                raise ValueError(f"{name}={v} outside [1, N={self.n_points}]")
        if self.grad_size > self.grad_cap or self.hess_size > self.hess_cap:
            raise ValueError("batch size above its cap")
        if self.grad_size >= self.grad_cap:
            self.hess_growth_anchor = 0


def sample_without_replacement(N: int, size: int, rng: np.random.Generator) -> np.ndarray:
    """``size`` distinct indices drawn uniformly from range(N), sorted.

    size == N returns arange(N) without consuming the RNG stream, so full-batch
    runs stay deterministic regardless of seed.
    """
    if size < 1:
        raise ValueError(f"batch size must be >= 1, got {size}")
    if size > N:
        raise ValueError(f"batch size {size} exceeds N={N}")
    if size == N:
        return np.arange(N)
    idx = rng.choice(N, size=size, replace=False)
    idx.sort()
    return idx


def vr_due(st: OracleState, k: int) -> bool:
    """True when the VR anchor should be refreshed at iteration k."""
    if not st.vr_enabled:
        return False
    if st.vr_anchor_x is None:
        return True
    return st.vr_period > 0 and k % st.vr_period == 0


def vr_refresh(p: CompositeProblem, st: OracleState, x) -> np.ndarray:
    """Set the anchor to x and recompute its full gradient (costs N evals)."""
    st.vr_anchor_x = np.array(x, copy=True)
    st.vr_anchor_grad = loss_grad(p, x, None)
    st.grad_evals += st.n_points
    return st.vr_anchor_grad


def stochastic_gradient(p: CompositeProblem, st: OracleState, x, k: int,
                        allow_refresh: bool = True) -> np.ndarray:
    """Stochastic gradient estimate at x for iteration k.

    Plain mode: mean gradient over a fresh batch of st.grad_size indices
    (|S| component evals). VR mode: refreshes the anchor when k is a multiple
    of vr_period (or it is unset), in which case the estimator collapses to
    the anchor gradient exactly and no batch is drawn; otherwise draws a
    batch and returns mean(grad_i(x) - grad_i(x~)) + u~ (2|S| evals).

    ``allow_refresh=False`` suppresses the refresh; the driver uses it when
    evaluating trial points that may be rejected, so anchors only ever sit at
    settled iterates.
    """
    if st.vr_enabled:
        if allow_refresh and vr_due(st, k):
            return vr_refresh(p, st, x).copy()
        batch = sample_without_replacement(st.n_points, st.grad_size, st.rng)
        st.last_batch = batch
        g = loss_grad(p, x, batch) - loss_grad(p, st.vr_anchor_x, batch) + st.vr_anchor_grad
        st.grad_evals += 2 * batch.size
        return g
    batch = sample_without_replacement(st.n_points, st.grad_size, st.rng)
    st.last_batch = batch
    st.grad_evals += batch.size
    return loss_grad(p, x, batch)


def gradient_on_last_batch(p: CompositeProblem, st: OracleState, x) -> np.ndarray:
    """Re-evaluate the estimator at a new point over the most recent batch.

    Used by the rejected-Newton branch: the batch drawn for the acceptance
    test is reused at the fallback point, so each iteration consumes exactly
    one fresh batch either way. Charges the same evaluation cost as a fresh
    call.
    """
    if st.last_batch is None:
        raise RuntimeError("no batch drawn yet")
    batch = st.last_batch
    if st.vr_enabled:
        st.grad_evals += 2 * batch.size
        return loss_grad(p, x, batch) - loss_grad(p, st.vr_anchor_x, batch) + st.vr_anchor_grad
    st.grad_evals += batch.size
    return loss_grad(p, x, batch)


def stochastic_hess_operator(p: CompositeProblem, st: OracleState, x, k: int) -> Callable:
    """Linear operator v -> H_{t}(x) v over a fresh Hessian batch t.

    The batch is drawn once; every application within the iteration reuses it
    (the Newton solve must see one fixed operator). Each application charges
    |t| Hessian-row evaluations.
    """
    batch = sample_without_replacement(st.n_points, st.hess_size, st.rng)
    base = make_hess_operator(p, x, batch)
    bsize = batch.size

    def op(v):
        st.hess_evals += bsize
        return base(v)

    op.batch = batch
    return op


def _grow(size: int, factor: float, cap: int) -> int:
    return min(int(size * factor), cap)


def advance_schedule(st: OracleState, k: int) -> OracleState:
    """Apply the staged geometric growth due at iteration k (mutates st).

    Gradient batches grow by ``growth_factor`` every ``grad_period``
    iterations until grad_cap. Hessian growth arms only once the gradient
    batch is at its cap, then fires every ``hess_period`` iterations counted
    from the arming iteration. Call once per iteration, before drawing that
    iteration's batches.
    """
    if st.grad_period > 0 and k > 0 and k % st.grad_period == 0:
        st.grad_size = _grow(st.grad_size, st.growth_factor, st.grad_cap)
    if st.grad_size >= st.grad_cap and st.hess_growth_anchor is None:
        st.hess_growth_anchor = k
    if (st.hess_period > 0 and st.hess_growth_anchor is not None
            and k > st.hess_growth_anchor
            and (k - st.hess_growth_anchor) % st.hess_period == 0):
        st.hess_size = _grow(st.hess_size, st.growth_factor, st.hess_cap)
    return st


# ---------------------------------------------------------------------------
# Theoretical sample-size schedules
# ---------------------------------------------------------------------------

@dataclass
class ScheduleParams:
    """Constants defining the theoretical lower bounds on batch sizes.

    delta_rule, eps1_rule, eps2_rule map an iteration index to delta_k,
    eps1_k, eps2_k. sigma_bar / rho_bar are the gradient / Hessian variance
    proxies, lambda_m the metric floor (smallest eigenvalue of any admissible
    Lambda). lf_c is the product L_F * C entering mu(x); gamma_f the
    contraction constant; gamma_eta the target linear rate; dim the ambient
    dimension n (sets kappa_n). rho_rule and gamma_rule feed the superlinear
    variant.
    """

    delta_rule: Callable[[int], float]
    eps1_rule: Callable[[int], float]
    eps2_rule: Callable[[int], float]
    sigma_bar: float
    rho_bar: float
    lambda_m: float
    gamma_f: float
    p: float
    lf_c: float
    dim: int
    gamma_eta: float = 0.5
    ell_bar: int = 1
    kappa_n: Optional[float] = None
    rho_rule: Optional[Callable[[int], float]] = None
    gamma_rule: Optional[Callable[[int], float]] = None

    def __post_init__(self):
        if not (0 < self.p < 1):
            raise ValueError("p must lie in (0, 1)")
        if not (0 < self.gamma_eta < 1):
            raise ValueError("gamma_eta must lie in (0, 1)")
        for name in ("sigma_bar", "rho_bar", "lambda_m", "gamma_f", "lf_c"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")
        if self.kappa_n is None:
            self.kappa_n = kappa_dim(self.dim)


def kappa_dim(n: int) -> float:
    """Dimension constant (2 log(n+2) - 1) e of the matrix tail bound."""
    return (2.0 * math.log(n + 2) - 1.0) * math.e


def derive_gamma_f(eta: float, beta: float, p: float, L_F: float, L_psi: float,
                   C: float) -> float:
    """Contraction constant gamma_f from the acceptance-phase analysis.

    beta1 = min{beta, 1/2} / (2^p L_psi C); beta2 = min{6 eta / (4 L_F C + 3 eta),
    beta1^{1/(1-p)}}; gamma_f = min{1/2, beta2} / (2 max{C, 1}).
    """
    beta1 = min(beta, 0.5) / (2.0 ** p * L_psi * C)
    beta2 = min(6.0 * eta / (4.0 * L_F * C + 3.0 * eta), beta1 ** (1.0 / (1.0 - p)))
    return min(0.5, beta2) / (2.0 * max(C, 1.0))


def _mu(sp: ScheduleParams, x: float) -> float:
    return min(1.0 / (2.0 * sp.lf_c), 1.0) * x


def _mu_p(sp: ScheduleParams, x: float) -> float:
    return min(x, min(x ** (1.0 / sp.p), x ** (1.0 / (1.0 - sp.p))))


def _upsilon(sp: ScheduleParams, k: int, mode: str) -> float:
    e1 = sp.eps1_rule(k)
    e2 = sp.eps2_rule(k)
    if mode == "linear":
        e1 = min(e1, sp.gamma_eta ** (k - sp.ell_bar))
    elif mode == "superlinear":
        if sp.gamma_rule is None:
            raise ValueError("superlinear mode needs gamma_rule")
        e1 = min(e1, sp.gamma_rule(k) ** (k - sp.ell_bar))
    return min(_mu(sp, e1), _mu_p(sp, e2))


def _gamma_k(sp: ScheduleParams, k: int, mode: str) -> float:
    g = min(_upsilon(sp, max(k - 1, 0), mode), _upsilon(sp, k, mode))
    if g <= 0:
        raise ValueError(f"degenerate epsilon sequences: Gamma_{k} = {g}")
    return g


def theoretical_schedule(sp: ScheduleParams, k: int, mode: str = "global"):
    """Lower bounds (n_g, n_h) on the batch sizes at iteration k.

    Modes: "global" and "linear" use the 1/delta_k (Chebyshev-type) forms;
    "superlinear" additionally replaces n_h by ceil(1/(delta_k rho_k));
    "light_tail" uses the sharper log(1/delta_k) forms. Raises below the
    schedule start ell_bar or when the epsilon sequences degenerate.
    """
    if k < sp.ell_bar:
        raise ValueError(f"schedule starts at ell_bar={sp.ell_bar}, got k={k}")
    delta = sp.delta_rule(k)
    if not (0 < delta < 1):
        raise ValueError(f"delta_k must lie in (0,1), got {delta}")
    if mode in ("global", "linear", "superlinear"):
        gam = _gamma_k(sp, k, mode if mode != "superlinear" else "superlinear")
        n_g = (1.0 / delta) * (2.0 * sp.sigma_bar / (sp.lambda_m * gam)) ** 2
        if mode == "superlinear":
            if sp.rho_rule is None:
                raise ValueError("superlinear mode needs rho_rule")
            n_h = 1.0 / (delta * sp.rho_rule(k))
        else:
            n_h = (sp.kappa_n / delta) * (2.0 * sp.rho_bar / (sp.lambda_m * sp.gamma_f)) ** 2
        return math.ceil(n_g), math.ceil(n_h)
    if mode == "light_tail":
        gam = _gamma_k(sp, k, "global")
        n_g = ((1.0 + math.sqrt(3.0 * math.log(1.0 / delta)))
               * 2.0 * sp.sigma_bar / (sp.lambda_m * gam)) ** 2
        n_h = 3.0 * math.log(2.0 * sp.dim / delta) * (2.0 * sp.rho_bar / (sp.lambda_m * sp.gamma_f)) ** 2
        return math.ceil(n_g), math.ceil(n_h)
    if mode == "superlinear_light":
        gam = _gamma_k(sp, k, "superlinear")
        n_g = ((1.0 + math.sqrt(3.0 * math.log(1.0 / delta)))
               * 2.0 * sp.sigma_bar / (sp.lambda_m * gam)) ** 2
        if sp.rho_rule is None:
            raise ValueError("superlinear mode needs rho_rule")
        n_h = math.log(2.0 * sp.dim / delta) / sp.rho_rule(k)
        return math.ceil(n_g), math.ceil(n_h)
    raise ValueError(f"unknown mode {mode!r}")


def power_sequence(c: float, q: float):
    """Rule k -> c * max(k, 1)^(-q); the max keeps k = 0 well-defined."""

    def rule(k: int) -> float:
        return c * float(max(k, 1)) ** (-q)

    rule.c = c
    rule.q = q
    return rule
