"""Smooth finite-sum losses and the composite objective.

Two losses over labeled rows (a_i, b_i) with b_i in {-1, +1}:

- logistic: f_i(x) = log(1 + exp(-b_i <a_i, x>))
- sigmoid:  f_i(x) = 1 - tanh(b_i <a_i, x>)   (bounded, nonconvex)

The smooth part is the subset mean (1/|S|) sum_{i in S} f_i(x), optionally
augmented by an l2 term (l2_shift/2)||x||^2 added to every f_i, which makes
the smooth part strongly convex without touching the stochastic-gradient
error (the shift cancels in G_s - grad f). Hessians are exposed only through
matrix-vector products.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import expit

from stochnewton.datakit import SparseDataset

LOGISTIC = "logistic"
SIGMOID = "sigmoid"


@dataclass(frozen=True)
class CompositeProblem:
    """f(x) + mu ||x||_1 with f a finite-sum loss over ``dataset``."""

    dataset: SparseDataset
    loss_kind: str = LOGISTIC
    reg_weight: float = 0.01
    l2_shift: float = 0.0

    def __post_init__(self):
        if self.loss_kind not in (LOGISTIC, SIGMOID):
            raise ValueError(f"unknown loss kind {self.loss_kind!r}")
        if self.reg_weight < 0:
            raise ValueError("reg_weight must be nonnegative")
        if self.l2_shift < 0:
            raise ValueError("l2_shift must be nonnegative")

    @property
    def n_points(self) -> int:
        return self.dataset.n_points

    @property
    def n_features(self) -> int:
        return self.dataset.n_features


def _rows(p: CompositeProblem, subset):
    """(A_S, b_S, |S|) for a subset, or the full data for subset=None."""
    if subset is None:
        return p.dataset.matrix, p.dataset.labels, p.dataset.n_points
    subset = np.asarray(subset)
    if subset.size == 0:
        raise ValueError("empty subset")
    if subset.min() < 0 or subset.max() >= p.dataset.n_points:
        raise ValueError("subset index out of range")
    return p.dataset.matrix[subset], p.dataset.labels[subset], subset.size


def _margins(A, b, x):
    # z_i = b_i <a_i, x>
    return b * (A @ x)


def loss_value(p: CompositeProblem, x, subset) -> float:
    """Mean loss over the subset (None = full batch), plus the l2 shift."""
    A, b, m = _rows(p, subset)
    z = _margins(A, b, x)
    if p.loss_kind == LOGISTIC:
        # softplus(-z) = log(1 + exp(-z)), overflow-safe
        val = float(np.logaddexp(0.0, -z).sum() / m)
    else:
        val = float((1.0 - np.tanh(z)).sum() / m)
    if p.l2_shift:
        val += 0.5 * p.l2_shift * float(x @ x)
    return val


def loss_grad(p: CompositeProblem, x, subset) -> np.ndarray:
    """Mean gradient over the subset: (1/|S|) sum -b_i c(z_i) a_i + shift x."""
    A, b, m = _rows(p, subset)
    z = _margins(A, b, x)
    if p.loss_kind == LOGISTIC:
        coeff = -b * expit(-z)
    else:
        t = np.tanh(z)
        coeff = -b * (1.0 - t * t)
    g = np.asarray(A.T @ coeff).ravel() / m
    if p.l2_shift:
        g = g + p.l2_shift * x
    return g


def _curvature(p: CompositeProblem, z):
    if p.loss_kind == LOGISTIC:
        # sigma(z) sigma(-z) >= 0
        return expit(z) * expit(-z)
    t = np.tanh(z)
    return 2.0 * t * (1.0 - t * t)  # sign-indefinite


def loss_hess_vec(p: CompositeProblem, x, subset, v) -> np.ndarray:
    """Mean Hessian-vector product over the subset.

    Each term is c''(z_i) b_i^2 <a_i, v> a_i with b_i^2 = 1.
    """
    A, b, m = _rows(p, subset)
    z = _margins(A, b, x)
    w = _curvature(p, z)
    hv = np.asarray(A.T @ (w * (A @ v))).ravel() / m
    if p.l2_shift:
        hv = hv + p.l2_shift * v
    return hv


def make_hess_operator(p: CompositeProblem, x, subset):
    """Closure computing v -> H_S(x) v with rows and curvature cached.

    Cheaper than loss_hess_vec when applied repeatedly at fixed (x, subset),
    which is exactly the Krylov-solver access pattern.
    """
    A, b, m = _rows(p, subset)
    z = _margins(A, b, x)
    w = _curvature(p, z)
    shift = p.l2_shift

    def hess_vec(v):
        hv = np.asarray(A.T @ (w * (A @ v))).ravel() / m
        if shift:
            hv = hv + shift * v
        return hv

    return hess_vec


def objective(p: CompositeProblem, x) -> float:
    """psi(x) = full-batch loss + mu ||x||_1."""
    return loss_value(p, x, None) + p.reg_weight * float(np.abs(x).sum())


def grad_lipschitz_bound(p: CompositeProblem, method: str = "rowmax") -> float:
    """Upper estimate of the Lipschitz constant of grad f.

    "rowmax": 0.25 * max_i ||a_i||^2 (logistic curvature is at most 1/4;
    the sigmoid curvature magnitude is below 0.8, so 1/4 covers both up to a
    constant and we use the loss-specific curvature cap). Certified upper
    bound since lambda_max(A^T W A / m) <= w_max * max_i ||a_i||^2.

    "power": w_max * lambda_max(A^T A) / N estimated by power iteration and
    inflated by 2%; sharper but an estimate, not a certificate.
    """
    A = p.dataset.matrix
    # curvature caps: logistic sigma(1-sigma) <= 1/4; sigmoid |2t(1-t^2)| <= 4/(3 sqrt 3)
    wmax = 0.25 if p.loss_kind == LOGISTIC else 4.0 / (3.0 * np.sqrt(3.0))
    if method == "rowmax":
        sq = np.asarray(A.multiply(A).sum(axis=1)).ravel()
        return float(wmax * sq.max()) + p.l2_shift
    if method == "power":
        rng = np.random.default_rng(0)
        v = rng.normal(size=A.shape[1])
        v /= np.linalg.norm(v)
        lam = 0.0
        for _ in range(100):
            w = np.asarray(A.T @ (A @ v)).ravel()
            nw = np.linalg.norm(w)
            if nw == 0.0:
                return p.l2_shift
            lam = nw
            v = w / nw
        return float(wmax * lam * 1.02 / A.shape[0]) + p.l2_shift
    raise ValueError(f"unknown method {method!r}")
