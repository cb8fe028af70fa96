"""Soft-thresholding, natural residuals and generalized Jacobian masks.

All metrics here are scalar multiples of the identity: Lambda = (1/lam) I,
so Lambda^{-1} g = lam * g and the prox threshold for mu ||.||_1 is mu*lam.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple

import numpy as np


@dataclass(frozen=True)
class ProxMetric:
    """Scalar prox metric Lambda = (1/lam) * Identity."""

    lam: float

    def __post_init__(self):
        if not (self.lam > 0):
            raise ValueError(f"metric scalar must be positive, got {self.lam}")


@dataclass(frozen=True)
class JacobianMask:
    """Active-coordinate indicator d(u): active_i = 1 iff |u_i| > threshold."""

    active: np.ndarray  # bool vector


class ResidualParts(NamedTuple):
    """Natural residual F plus the intermediates u = x - lam*g and p = prox(u)."""

    F: np.ndarray
    u: np.ndarray
    p: np.ndarray


def prox_l1(u, threshold):
    """Componentwise soft-threshold: sign(u) max(|u| - threshold, 0).

    ``threshold`` may be a scalar or a vector (the diagonal-metric case,
    one threshold per coordinate).
    """
    t = np.asarray(threshold, dtype=float)
    if np.any(t < 0):
        raise ValueError("threshold must be nonnegative")
    u = np.asarray(u, dtype=float)
    return np.sign(u) * np.maximum(np.abs(u) - t, 0.0)


def residual(x, g, metric: ProxMetric, mu: float) -> ResidualParts:
    """Natural residual F(x) = x - prox(x - lam*g, mu*lam) under the scalar metric.

    Returns the residual together with u and p(u) so callers can build the
    Jacobian mask and the Newton right-hand side without recomputing the prox.
    Zero exactly at stationary points when g is the exact gradient.
    """
    u = x - metric.lam * g
    pu = prox_l1(u, mu * metric.lam)
    return ResidualParts(x - pu, u, pu)


def jacobian_mask(u, threshold: float) -> JacobianMask:
    """d(u)_i = 1 iff |u_i| > threshold; ties break to inactive."""
    if threshold < 0:
        raise ValueError("threshold must be nonnegative")
    return JacobianMask(np.abs(np.asarray(u)) > threshold)


def scaled_norm(v, metric: ProxMetric) -> float:
    """||v||_Lambda = sqrt(<v, v> / lam)."""
    v = np.asarray(v)
    return float(np.sqrt((v @ v) / metric.lam))
