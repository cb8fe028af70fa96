"""First-order baselines sharing the trace format of the hybrid loop.

Both methods run proximal stochastic gradient iterations; neither draws
Hessian batches, so hess_size is 0 in every trace row and epochs count
gradient component evaluations only.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from stochnewton.driver import Trace, TraceRecord, update_lambda, _full_residual_norm
from stochnewton.model import (CompositeProblem, grad_lipschitz_bound,
                               loss_grad, objective)
from stochnewton.oracles import (OracleState, sample_without_replacement,
                                 stochastic_gradient, vr_due)
from stochnewton.prox import prox_l1


@dataclass(frozen=True)
class AdagradConfig:
    """Proximal adaptive diagonal-metric gradient method."""

    step_scale: float = 0.1
    delta: float = 1e-7
    batch_frac: float = 0.05
    max_iters: int = 500
    stop_tol: float = 1e-10
    check_every: int = 10

    def __post_init__(self):
        if self.step_scale <= 0:
            raise ValueError("step_scale must be positive")
        if self.delta <= 0:
            raise ValueError("delta must be positive")
        if not (0 < self.batch_frac <= 1):
            raise ValueError("batch_frac must lie in (0, 1]")
        if self.check_every < 1:
            raise ValueError("check_every must be >= 1")


@dataclass
class AdagradState:
    """Accumulated squared gradients and the derived diagonal metric."""

    accum: np.ndarray
    step_scale: float
    delta: float
    batch_size: int

    def step_vector(self) -> np.ndarray:
        """Per-coordinate step sizes step_scale / (delta + sqrt(accum))."""
        return self.step_scale / (self.delta + np.sqrt(self.accum))


def adagrad_apply(st: AdagradState, x: np.ndarray, g: np.ndarray, mu: float) -> np.ndarray:
    """One update: accumulate g*g, then a prox step under the diagonal metric.

    The metric is Lambda = diag(delta + sqrt(accum)) / step_scale, so the
    forward point is x - step * g and the shrinkage threshold is mu * step
    per coordinate, with step = step_scale / (delta + sqrt(accum)).
    """
    st.accum += g * g
    step = st.step_vector()
    return prox_l1(x - step * g, mu * step)


def adagrad_run(p: CompositeProblem, cfg: AdagradConfig, seed: int = 0,
                x0=None) -> Trace:
    """Run the adaptive diagonal baseline with a fresh batch per iteration."""
    mu = p.reg_weight
    N = p.n_points
    n = p.n_features
    rng = np.random.default_rng(seed)
    batch_size = max(1, int(cfg.batch_frac * N))
    st = AdagradState(accum=np.zeros(n), step_scale=cfg.step_scale,
                      delta=cfg.delta, batch_size=batch_size)
    x = np.zeros(n) if x0 is None else np.array(x0, dtype=float)
    t0 = time.perf_counter()
    grad_evals = 0
    records = []
    stop_reason = "max_iters"
    converged = False
    final_full_res = None
    step_type = "init"
    stoch_res = None
    k = 0

    for k in range(cfg.max_iters + 1):
        full_res = None
        if k % cfg.check_every == 0 or k == cfg.max_iters:
            full_res = _full_residual_norm(p, x)
            final_full_res = full_res
        records.append(TraceRecord(k, step_type, objective(p, x), full_res,
                                   stoch_res, None, cfg.step_scale, batch_size,
                                   0, grad_evals / N,
                                   (time.perf_counter() - t0) * 1e3))
        if full_res is not None and full_res <= cfg.stop_tol:
            stop_reason = "stop_tol"
            converged = True
            break
        if k == cfg.max_iters:
            break

        batch = sample_without_replacement(N, batch_size, rng)
        g = loss_grad(p, x, batch)
        grad_evals += batch_size
        x_next = adagrad_apply(st, x, g, mu)
        stoch_res = float(np.linalg.norm(x - x_next))
        step_type = "prox"
        if not np.all(np.isfinite(x_next)):
            records.append(TraceRecord(k + 1, step_type, math.nan, None,
                                       stoch_res, None, cfg.step_scale,
                                       batch_size, 0, grad_evals / N,
                                       (time.perf_counter() - t0) * 1e3))
            stop_reason = "nonfinite"
            break
        x = x_next

    return Trace(records, {
        "converged": converged,
        "stop_reason": stop_reason,
        "iterations": k,
        "final_full_res": final_full_res,
        "epochs": grad_evals / N,
        "wall_s": time.perf_counter() - t0,
        "accepted_newton": 0,
        "fallbacks": len([r for r in records if r.step_type == "prox"]),
        "invariant_violations": 0,
        "x_final": x,
    })


@dataclass(frozen=True)
class ProxSVRGConfig:
    """Variance-reduced proximal gradient baseline."""

    batch_frac: float = 0.01
    m: int = 10  # anchor refresh period
    lambda0: float = 0.1
    lambda_clip: tuple = (1e-3, 1e4)
    lambda_ema: float = 0.5
    max_iters: int = 500
    stop_tol: float = 1e-10
    check_every: int = 10

    def __post_init__(self):
        if not (0 < self.batch_frac <= 1):
            raise ValueError("batch_frac must lie in (0, 1]")
        if self.m < 1:
            raise ValueError("m must be >= 1")
        if self.lambda0 <= 0:
            raise ValueError("lambda0 must be positive")
        if not (0 <= self.lambda_ema <= 1):
            raise ValueError("lambda_ema must lie in [0, 1]")
        if self.check_every < 1:
            raise ValueError("check_every must be >= 1")


def proxsvrg_run(p: CompositeProblem, cfg: ProxSVRGConfig, seed: int = 0,
                 x0=None) -> Trace:
    """Variance-reduced prox-gradient loop with a secant-scaled step.

    The anchor refreshes every cfg.m iterations; the scalar step lambda is
    re-estimated at each refresh from consecutive anchor pairs via the same
    clipped secant blend the hybrid loop uses.  Because the secant ratio
    estimates a local inverse curvature, it can exceed the global stability
    range of a plain prox step; lambda is therefore additionally capped at
    the inverse of the certified gradient Lipschitz bound.
    """
    mu = p.reg_weight
    N = p.n_points
    n = p.n_features
    lam_cap = 1.0 / max(grad_lipschitz_bound(p), 1e-300)
    batch_size = max(1, int(cfg.batch_frac * N))
    oracle = OracleState(n_points=N, grad_size=batch_size, hess_size=1,
                         grad_cap=N, hess_cap=N, rng=np.random.default_rng(seed),
                         grad_period=0, hess_period=0, vr_enabled=True,
                         vr_period=cfg.m)
    x = np.zeros(n) if x0 is None else np.array(x0, dtype=float)
    lam = min(cfg.lambda0, lam_cap)
    t0 = time.perf_counter()
    records = []
    stop_reason = "max_iters"
    converged = False
    final_full_res = None
    step_type = "init"
    stoch_res = None
    k = 0

    for k in range(cfg.max_iters + 1):
        full_res = None
        if k % cfg.check_every == 0 or k == cfg.max_iters:
            full_res = _full_residual_norm(p, x)
            final_full_res = full_res
        records.append(TraceRecord(k, step_type, objective(p, x), full_res,
                                   stoch_res, None, lam, oracle.grad_size, 0,
                                   oracle.grad_evals / N,
                                   (time.perf_counter() - t0) * 1e3))
        if full_res is not None and full_res <= cfg.stop_tol:
            stop_reason = "stop_tol"
            converged = True
            break
        if k == cfg.max_iters:
            break

        refresh_due = vr_due(oracle, k)
        prev_anchor = (oracle.vr_anchor_x, oracle.vr_anchor_grad)
        g = stochastic_gradient(p, oracle, x, k)  # refreshes the anchor when due
        if refresh_due and prev_anchor[0] is not None:
            lam = min(update_lambda(lam, prev_anchor[0], prev_anchor[1],
                                    oracle.vr_anchor_x, oracle.vr_anchor_grad,
                                    cfg), lam_cap)
        x_next = prox_l1(x - lam * g, mu * lam)
        stoch_res = float(np.linalg.norm(x - x_next))
        step_type = "prox"
        if not np.all(np.isfinite(x_next)):
            records.append(TraceRecord(k + 1, step_type, math.nan, None,
                                       stoch_res, None, lam, oracle.grad_size,
                                       0, oracle.grad_evals / N,
                                       (time.perf_counter() - t0) * 1e3))
            stop_reason = "nonfinite"
            break
        x = x_next

    return Trace(records, {
        "converged": converged,
        "stop_reason": stop_reason,
        "iterations": k,
        "final_full_res": final_full_res,
        "epochs": oracle.grad_evals / N,
        "wall_s": time.perf_counter() - t0,
        "accepted_newton": 0,
        "fallbacks": len([r for r in records if r.step_type == "prox"]),
        "invariant_violations": 0,
        "x_final": x,
    })
