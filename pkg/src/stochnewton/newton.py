"""Semismooth Newton step via a reduced symmetric system.

The full (regularized) system is (M + rho I) d = -F with
M = (I - D) + D Lambda^{-1} H, D = diag(mask). Inactive rows decouple:
(1 + rho) d_i = -F_i. Substituting them into the active rows leaves the
symmetric reduced system

    (lam * H_AA + rho I) d_A = -F_A - lam * (H pad(d_I))|_A,

solved by an early-terminated Krylov method restricted to the active
coordinates. H is only ever touched through matrix-vector products: one
full application for the right-hand side (skipped when there are no
inactive coordinates) plus one A-supported application per Krylov
iteration.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse.linalg as spla

from stochnewton.prox import JacobianMask, ProxMetric

CG = "cg"
MINRES = "minres"


@dataclass(frozen=True)
class NewtonConfig:
    cg_tol0: float = 0.01
    cg_maxit0: int = 2
    cg_maxit_total: int = 12
    reg_coeff: float = 1e-4
    solver_kind: str = CG
    tol_floor: float = 1e-8

    def __post_init__(self):
        if not (0 < self.cg_tol0 < 1):
            raise ValueError("cg_tol0 must lie in (0, 1)")
        if not (1 <= self.cg_maxit0 <= self.cg_maxit_total):
            raise ValueError("need 1 <= cg_maxit0 <= cg_maxit_total")
        if self.reg_coeff < 0:
            raise ValueError("reg_coeff must be nonnegative")
        if self.solver_kind not in (CG, MINRES):
            raise ValueError(f"unknown solver kind {self.solver_kind!r}")


@dataclass
class SolveStats:
    iters: int
    rel_res: float
    tol: float
    maxit: int
    rho: float
    active: int
    hit_cap: bool


def adaptive_policy(res_norm: float, res_norm0: float, cfg: NewtonConfig):
    """(tol, maxit, rho) as a function of the current and initial residual norms.

    tol is the residual norm clamped to [tol_floor, cg_tol0]; maxit grows by
    two iterations per decade of residual decrease up to the hard cap; the
    Tikhonov weight rho = reg_coeff * min(1, res_norm) vanishes with the
    residual.
    """
    if res_norm < 0 or res_norm0 < 0:
        raise ValueError("residual norms must be nonnegative")
    tol = min(max(res_norm, cfg.tol_floor), cfg.cg_tol0)
    if res_norm > 0 and res_norm0 > 0:
        decades = int(np.floor(np.log10(res_norm0 / res_norm)))
    else:
        decades = cfg.cg_maxit_total  # residual at zero: allow the full budget
    maxit = min(cfg.cg_maxit_total, cfg.cg_maxit0 + 2 * max(0, decades))
    rho = cfg.reg_coeff * min(1.0, res_norm)
    return tol, maxit, rho


def _check_finite(v, what):
    if not np.all(np.isfinite(v)):
        raise FloatingPointError(f"non-finite values in {what}")


def _cg(op, b, tol, maxit):
    # plain conjugate gradients with relative-residual stopping; on a
    # nonpositive-curvature breakdown the current iterate is returned
    bnorm = np.linalg.norm(b)
    x = np.zeros_like(b)
    r = b.copy()
    p = r.copy()
    rs = float(r @ r)
    it = 0
    while it < maxit:
        Ap = op(p)
        _check_finite(Ap, "operator output")
        pAp = float(p @ Ap)
        if pAp <= 0.0:
            break
        a = rs / pAp
        x = x + a * p
        r = r - a * Ap
        it += 1
        rs_new = float(r @ r)
        if np.sqrt(rs_new) <= tol * bnorm:
            return x, it, float(np.sqrt(rs_new) / bnorm)
        p = r + (rs_new / rs) * p
        rs = rs_new
    return x, it, float(np.linalg.norm(r) / bnorm)


def _minres(op, b, tol, maxit):
    n = b.shape[0]
    count = {"it": 0}

    def cb(_xk):
        count["it"] += 1

    lin = spla.LinearOperator((n, n), matvec=op, dtype=float)
    try:
        sol, _info = spla.minres(lin, b, rtol=tol, maxiter=maxit, callback=cb)
    except TypeError:  # older scipy spells the tolerance 'tol'
        sol, _info = spla.minres(lin, b, tol=tol, maxiter=maxit, callback=cb)
    _check_finite(sol, "minres solution")
    rel = float(np.linalg.norm(b - op(sol)) / np.linalg.norm(b))
    return sol, count["it"], rel


def krylov_solve(op, rhs, tol: float, maxit: int, kind: str = CG):
    """Solve op(x) = rhs to relative residual tol, at most maxit iterations.

    Returns (sol, iters, rel_res). A zero right-hand side short-circuits to
    the zero solution with zero iterations. Non-finite inputs or operator
    outputs raise.
    """
    rhs = np.asarray(rhs, dtype=float)
    _check_finite(rhs, "right-hand side")
    if np.linalg.norm(rhs) == 0.0:
        return np.zeros_like(rhs), 0, 0.0
    if maxit < 1:
        raise ValueError("maxit must be >= 1")
    if kind == CG:
        return _cg(op, rhs, tol, maxit)
    if kind == MINRES:
        return _minres(op, rhs, tol, maxit)
    raise ValueError(f"unknown solver kind {kind!r}")


def newton_step(F, mask: JacobianMask, hess_op, metric: ProxMetric,
                cfg: NewtonConfig, res_norm_hist):
    """Solve (M + rho I) d = -F through the reduced active-set system.

    ``res_norm_hist`` is the pair (initial residual norm, current residual
    norm) feeding the adaptive accuracy policy. Returns (d, SolveStats); a
    Krylov iteration cap is not an error (hit_cap is flagged and the driver's
    growth test decides acceptance).
    """
    res_norm0, res_norm = res_norm_hist
    tol, maxit, rho = adaptive_policy(res_norm, res_norm0, cfg)
    F = np.asarray(F, dtype=float)
    active = np.asarray(mask.active, dtype=bool)
    lam = metric.lam

    d = np.empty_like(F)
    inactive = ~active
    d[inactive] = -F[inactive] / (1.0 + rho)
    n_active = int(active.sum())
    if n_active == 0:
        return d, SolveStats(0, 0.0, tol, maxit, rho, 0, False)

    if inactive.any():
        pad = np.zeros_like(F)
        pad[inactive] = d[inactive]
        coupling = hess_op(pad)  # the single full application
        rhs = -F[active] - lam * coupling[active]
    else:
        rhs = -F[active]

    def reduced_op(v_a):
        w = np.zeros_like(F)
        w[active] = v_a
        return lam * hess_op(w)[active] + rho * v_a

    sol, iters, rel_res = krylov_solve(reduced_op, rhs, tol, maxit, cfg.solver_kind)
    d[active] = sol
    hit_cap = iters >= maxit and rel_res > tol
    return d, SolveStats(iters, rel_res, tol, maxit, rho, n_active, hit_cap)
