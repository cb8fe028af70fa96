"""Globalized hybrid loop: stochastic semismooth Newton steps guarded by
growth conditions, with a proximal-gradient fallback.

Per iteration k the loop holds the iterate x^k, a gradient estimate over the
batch drawn for this iteration, the matching natural residual under the
current scalar metric, and the yardstick theta_k (the residual norm recorded
at the most recently accepted Newton step). A trial Newton point z_n is
accepted iff its residual over a fresh batch and next metric satisfies the
growth conditions; otherwise the iterate falls back to the damped
prox-gradient point z_p = x - alpha_k F. The drawn batch is reused at the
fallback point so each iteration consumes exactly one fresh gradient batch
on either branch.

Instrumented invariants (checked every iteration, counted in the summary):
theta equals the residual norm of the last accepted Newton step (or theta_0),
and x^{k+1} equals (1-Y) z_p + Y z_n exactly.
"""

from __future__ import annotations

import csv
import io
import math
import time
from dataclasses import dataclass, field, replace
from typing import Callable, Optional

import numpy as np

from stochnewton.model import CompositeProblem, loss_grad, objective
from stochnewton.newton import NewtonConfig, newton_step
from stochnewton.oracles import (OracleState, advance_schedule, gradient_on_last_batch,
                                 power_sequence, stochastic_gradient,
                                 stochastic_hess_operator, vr_due, vr_refresh)
from stochnewton.prox import ProxMetric, jacobian_mask, residual

TRACE_COLUMNS = ("k", "step_type", "psi", "full_res", "stoch_res", "theta",
                 "lambda", "grad_size", "hess_size", "epochs", "wall_ms")


@dataclass(frozen=True)
class S4NConfig:
    """Parameters of the hybrid loop.

    nu_rule / eps1_rule / eps2_rule map the iteration index to nu_k, eps1_k,
    eps2_k. Built-in power rules carry their exponent, which is checked for
    summability: nu and eps2 need exponent > 1; eps1 needs exponent > 1, and
    exponent * p_exp > 1 when the second growth condition is enabled.
    """

    eta: float = 0.85
    p_exp: float = 0.5
    beta: float = 1.0
    nu_rule: Optional[Callable[[int], float]] = None
    eps1_rule: Optional[Callable[[int], float]] = None
    eps2_rule: Optional[Callable[[int], float]] = None
    alpha: float | Callable[[int], float] = 1e-2
    check_growth2: bool = False
    theta0: Optional[float] = None
    lambda0: float = 0.1
    lambda_clip: tuple = (1e-3, 1e4)
    lambda_ema: float = 0.5
    max_iters: int = 500
    stop_tol: float = 1e-10
    check_every: int = 10
    charge_full_residual: bool = False
    count_hess_epochs: bool = True
    force_fallback: bool = False

    def __post_init__(self):
        if not (0 < self.eta < 1):
            raise ValueError("eta must lie in (0, 1)")
        if not (0 < self.p_exp < 1):
            raise ValueError("p_exp must lie in (0, 1)")
        if self.beta <= 0:
            raise ValueError("beta must be positive")
        if not (0 <= self.lambda_ema <= 1):
            raise ValueError("lambda_ema must lie in [0, 1]")
        if self.lambda0 <= 0:
            raise ValueError("lambda0 must be positive")
        if self.check_every < 1:
            raise ValueError("check_every must be >= 1")
        for name, default_rule in (("nu_rule", None), ("eps1_rule", None), ("eps2_rule", None)):
            if getattr(self, name) is None:
                object.__setattr__(self, name, power_sequence(500.0, 1.1))
        self._check_summability()

    def _check_summability(self):
        q = getattr(self.nu_rule, "q", None)
        if q is not None and q <= 1:
            raise ValueError(f"nu_rule exponent {q} not summable (need > 1)")
        q = getattr(self.eps2_rule, "q", None)
        if q is not None and q <= 1:
            raise ValueError(f"eps2_rule exponent {q} not summable (need > 1)")
        q = getattr(self.eps1_rule, "q", None)
        if q is not None:
            if q <= 1:
                raise ValueError(f"eps1_rule exponent {q} not summable (need > 1)")
            if self.check_growth2 and q * self.p_exp <= 1:
                raise ValueError(
                    f"eps1_rule exponent {q} with p_exp={self.p_exp} violates the "
                    f"l^p summability needed by the second growth condition "
                    f"(need exponent * p_exp > 1)")

    def alpha_at(self, k: int) -> float:
        a = self.alpha(k) if callable(self.alpha) else self.alpha
        if not (0 < a <= 1):
            raise ValueError(f"fallback step size must lie in (0, 1], got {a}")
        return a


@dataclass
class SolverState:
    """Mutable loop state (one owner per run)."""

    x: np.ndarray
    theta: float
    lam: float
    k: int = 0
    epochs: float = 0.0
    accepted_newton_count: int = 0
    fallback_count: int = 0
    pending_batch: Optional[np.ndarray] = None
    last_accepted_res: Optional[float] = None


@dataclass
class TraceRecord:
    k: int
    step_type: str  # init | newton | prox
    psi: float
    full_res: Optional[float]
    stoch_res: Optional[float]
    theta: Optional[float]
    lam: Optional[float]
    grad_size: int
    hess_size: int
    epochs: float
    wall_ms: Optional[float]


def _fmt(v) -> str:
    if v is None:
        return ""
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    return repr(float(v))  # shortest round-trip representation


def _parse_opt_float(s: str) -> Optional[float]:
    return None if s == "" else float(s)


@dataclass
class Trace:
    records: list
    summary: dict = field(default_factory=dict)

    def csv_text(self, with_timing: bool = True) -> str:
        """Serialize to the trace CSV schema.

        with_timing=False blanks the wall_ms column; the remaining content is
        bit-reproducible for a fixed seed (floats use shortest round-trip
        formatting).
        """
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(TRACE_COLUMNS)
        for r in self.records:
            w.writerow([
                r.k, r.step_type, _fmt(r.psi), _fmt(r.full_res), _fmt(r.stoch_res),
                _fmt(r.theta), _fmt(r.lam), r.grad_size, r.hess_size,
                _fmt(r.epochs), _fmt(r.wall_ms) if with_timing else "",
            ])
        return buf.getvalue()

    def to_csv(self, path, with_timing: bool = True) -> None:
        with open(path, "w", encoding="utf-8", newline="") as fh:
            fh.write(self.csv_text(with_timing=with_timing))

    @staticmethod
    def from_csv_text(text: str) -> "Trace":
        rows = list(csv.reader(io.StringIO(text)))
        if not rows or tuple(rows[0]) != TRACE_COLUMNS:
            raise ValueError("unrecognized trace CSV header")
        records = []
        for row in rows[1:]:
            records.append(TraceRecord(
                k=int(row[0]), step_type=row[1], psi=float(row[2]),
                full_res=_parse_opt_float(row[3]), stoch_res=_parse_opt_float(row[4]),
                theta=_parse_opt_float(row[5]), lam=_parse_opt_float(row[6]),
                grad_size=int(row[7]), hess_size=int(row[8]),
                epochs=float(row[9]), wall_ms=_parse_opt_float(row[10]),
            ))
        return Trace(records)

    @staticmethod
    def from_csv(path) -> "Trace":
        with open(path, "r", encoding="utf-8") as fh:
            return Trace.from_csv_text(fh.read())


def check_growth1(res_new: float, theta: float, k: int, cfg: S4NConfig) -> bool:
    """First growth condition: res_new <= (eta + nu_k) theta + eps1_k."""
    if theta < 0:
        raise ValueError("theta must be nonnegative")
    return res_new <= (cfg.eta + cfg.nu_rule(k)) * theta + cfg.eps1_rule(k)


def _pow0(base: float, exp: float) -> float:
    # 0^0 := 1 so a perfect step (theta = res = 0) is never rejected
    if exp == 0.0:
        return 1.0
    return base ** exp


def check_growth2(psi_new: float, psi_old: float, theta: float, res_new: float,
                  k: int, cfg: S4NConfig) -> bool:
    """Second growth condition: psi_new <= psi_old + beta theta^{1-p} res^p + eps2_k."""
    slack = cfg.beta * _pow0(theta, 1.0 - cfg.p_exp) * _pow0(res_new, cfg.p_exp)
    return psi_new <= psi_old + slack + cfg.eps2_rule(k)


def prox_grad_step(x, F_val, alpha: float):
    """Fallback step x + alpha v with v = -F."""
    if not (0 < alpha <= 1):
        raise ValueError(f"alpha must lie in (0, 1], got {alpha}")
    return x - alpha * F_val


def update_lambda(lam_old: float, x_prev, g_prev, x_new, g_new, cfg: S4NConfig) -> float:
    """Secant-type metric update from the latest settled difference pair.

    lam1 = ||x_new - x_prev|| / ||g_new - g_prev||, clipped to cfg.lambda_clip,
    then blended: (1 - w) lam_old + w lam1_clipped with w = cfg.lambda_ema.
    Degenerate denominators (or a missing pair) keep the previous value.
    """
    if x_prev is None or g_prev is None:
        return lam_old
    denom = float(np.linalg.norm(np.asarray(g_new) - np.asarray(g_prev)))
    if denom < 1e-15:
        return lam_old
    lam1 = float(np.linalg.norm(np.asarray(x_new) - np.asarray(x_prev))) / denom
    lo, hi = cfg.lambda_clip
    lam2 = min(max(lam1, lo), hi)
    w = cfg.lambda_ema
    return (1.0 - w) * lam_old + w * lam2


def _full_residual_norm(p: CompositeProblem, x) -> float:
    """||F^I(x)||: identity-metric residual with the exact gradient."""
    return float(np.linalg.norm(residual(x, loss_grad(p, x, None), ProxMetric(1.0),
                                         p.reg_weight).F))


def s4n_run(p: CompositeProblem, oracle: OracleState, cfg: S4NConfig,
            ncfg: Optional[NewtonConfig] = None, x0=None) -> Trace:
    """Run the hybrid loop; returns the per-iteration Trace.

    Trace row k describes iterate x^k: its objective, the stochastic residual
    carried into iteration k, theta_k, lambda_k, the batch sizes in force, and
    cumulative epochs. step_type names the branch that produced x^k. The full
    residual is evaluated every cfg.check_every iterations (plus the final
    row) and triggers termination at cfg.stop_tol.
    """
    if ncfg is None:
        ncfg = NewtonConfig()
    mu = p.reg_weight
    N = p.n_points
    n = p.n_features
    t0 = time.perf_counter()
    ge0, he0 = oracle.grad_evals, oracle.hess_evals

    def epochs_now() -> float:
        work = oracle.grad_evals - ge0
        if cfg.count_hess_epochs:
            work += oracle.hess_evals - he0
        return work / N

    x = np.zeros(n) if x0 is None else np.array(x0, dtype=float)
    g = stochastic_gradient(p, oracle, x, 0)
    lam = cfg.lambda0
    res = residual(x, g, ProxMetric(lam), mu)
    res_norm = float(np.linalg.norm(res.F))
    res_norm0 = res_norm
    theta0_val = cfg.theta0 if cfg.theta0 is not None else res_norm
    state = SolverState(x=x, theta=theta0_val, lam=lam)
    x_prev = None
    g_prev = None
    step_type = "init"
    records = []
    violations = 0
    stop_reason = "max_iters"
    converged = False
    final_full_res = None

    for k in range(cfg.max_iters + 1):
        state.k = k
        if k > 0 and vr_due(oracle, k):
            g = vr_refresh(p, oracle, x).copy()
            res = residual(x, g, ProxMetric(lam), mu)
            res_norm = float(np.linalg.norm(res.F))

        expected_theta = theta0_val if state.last_accepted_res is None else state.last_accepted_res
        if state.theta != expected_theta:
            violations += 1

        full_res = None
        if k % cfg.check_every == 0 or k == cfg.max_iters:
            full_res = _full_residual_norm(p, x)
            final_full_res = full_res
            if cfg.charge_full_residual:
                oracle.grad_evals += N

        psi_x = objective(p, x)
        records.append(TraceRecord(k, step_type, psi_x, full_res, res_norm,
                                   state.theta, lam, oracle.grad_size,
                                   oracle.hess_size, epochs_now(),
                                   (time.perf_counter() - t0) * 1e3))
        if full_res is not None and full_res <= cfg.stop_tol:
            stop_reason = "stop_tol"
            converged = True
            break
        if k == cfg.max_iters:
            break

        alpha_k = cfg.alpha_at(k)
        z_p = prox_grad_step(x, res.F, alpha_k)
        z_n = None
        if not cfg.force_fallback:
            mask = jacobian_mask(res.u, mu * lam)
            hess_op = stochastic_hess_operator(p, oracle, x, k)
            d, _stats = newton_step(res.F, mask, hess_op, ProxMetric(lam), ncfg,
                                    (res_norm0, res_norm))
            z_n = x + d

        lam_next = update_lambda(lam, x_prev, g_prev, x, g, cfg)
        advance_schedule(oracle, k + 1)

        accept = False
        g_new = None
        res_new = None
        res_new_norm = math.nan
        if z_n is not None:
            g_new = stochastic_gradient(p, oracle, z_n, k + 1, allow_refresh=False)
            state.pending_batch = oracle.last_batch
            res_new = residual(z_n, g_new, ProxMetric(lam_next), mu)
            res_new_norm = float(np.linalg.norm(res_new.F))
            # z_n in dom r is automatic for the l1 term but non-finite trial
            # points must not be accepted
            accept = (np.all(np.isfinite(z_n))
                      and check_growth1(res_new_norm, state.theta, k, cfg))
            if accept and cfg.check_growth2:
                accept = check_growth2(objective(p, z_n), psi_x, state.theta,
                                       res_new_norm, k, cfg)

        if accept:
            Y = 1.0
            x_next = z_n
            theta_next = res_new_norm
            state.last_accepted_res = res_new_norm
            g_next = g_new
            res_next = res_new
            res_next_norm = res_new_norm
            step_type = "newton"
            state.accepted_newton_count += 1
        else:
            Y = 0.0
            x_next = z_p
            theta_next = state.theta
            if g_new is not None:
                g_next = gradient_on_last_batch(p, oracle, z_p)
            else:
                g_next = stochastic_gradient(p, oracle, z_p, k + 1, allow_refresh=False)
                state.pending_batch = oracle.last_batch
            res_next = residual(z_p, g_next, ProxMetric(lam_next), mu)
            res_next_norm = float(np.linalg.norm(res_next.F))
            step_type = "prox"
            state.fallback_count += 1

        recon = z_p if z_n is None else (1.0 - Y) * z_p + Y * z_n
        if not np.array_equal(x_next, recon):
            violations += 1

        if not np.all(np.isfinite(x_next)):
            records.append(TraceRecord(k + 1, step_type, math.nan, None,
                                       res_next_norm, theta_next, lam_next,
                                       oracle.grad_size, oracle.hess_size,
                                       epochs_now(), (time.perf_counter() - t0) * 1e3))
            stop_reason = "nonfinite"
            break

        x_prev, g_prev = x, g
        x, g, res, res_norm = x_next, g_next, res_next, res_next_norm
        lam = lam_next
        state.x = x
        state.theta = theta_next
        state.lam = lam

    wall_s = time.perf_counter() - t0
    trace = Trace(records, {
        "converged": converged,
        "stop_reason": stop_reason,
        "iterations": state.k,
        "final_full_res": final_full_res,
        "epochs": epochs_now(),
        "wall_s": wall_s,
        "accepted_newton": state.accepted_newton_count,
        "fallbacks": state.fallback_count,
        "invariant_violations": violations,
        "x_final": x,
    })
    return trace


def s2nd_run(p: CompositeProblem, cfg: S4NConfig, ncfg: Optional[NewtonConfig] = None,
             x0=None) -> Trace:
    """Deterministic variant: full gradient and Hessian every iteration.

    Batch draws short-circuit to range(N) without touching the RNG, so the
    run is exactly reproducible; the full residual is checked every
    iteration. Used with a tight stop_tol to produce reference solutions.
    """
    N = p.n_points
    oracle = OracleState(n_points=N, grad_size=N, hess_size=N, grad_cap=N,
                         hess_cap=N, rng=np.random.default_rng(0),
                         grad_period=0, hess_period=0)
    cfg = replace(cfg, check_every=1)
    return s4n_run(p, oracle, cfg, ncfg, x0=x0)
