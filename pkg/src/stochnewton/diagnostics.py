"""Randomized checks of the analytical guarantees.

Each check draws many random instances, evaluates the relevant inequality
with certified constants, and reports the worst slack. A violation means the
measured left side exceeded the guaranteed right side beyond numerical
tolerance; passing runs report max_slack <= 0 (up to the stated tolerance).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np
from scipy.special import zeta

from stochnewton.datakit import synth_binary
from stochnewton.driver import S4NConfig, s2nd_run
from stochnewton.model import (LOGISTIC, SIGMOID, CompositeProblem,
                               grad_lipschitz_bound, loss_grad, objective)
from stochnewton.oracles import kappa_dim
from stochnewton.prox import ProxMetric, residual

DIAG_TOL = 1e-10  # relative slack treated as numerical noise


@dataclass
class CheckReport:
    name: str
    trials: int
    max_slack: float
    passed: bool
    details: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {"check": self.name, "trials": self.trials,
                "max_slack": self.max_slack, "passed": self.passed,
                "details": self.details}


def power_rule_sum(c: float, q: float, power: float = 1.0) -> float:
    """Sum over k >= 0 of (c * max(k, 1)^{-q})^power, via the zeta function."""
    qq = q * power
    if qq <= 1:
        raise ValueError("series diverges: need q * power > 1")
    return c ** power * (1.0 + float(zeta(qq)))


# ---------------------------------------------------------------------------
# metric-change bound


def check_metric_bound(trials: int = 10_000, seed: int = 0) -> CheckReport:
    """Residual norms under two scalar metrics: ||F_1|| <= max(1, l1/l2) ||F_2||."""
    rng = np.random.default_rng(seed)
    worst = -math.inf
    violations = 0
    for _ in range(trials):
        n = int(rng.integers(1, 31))
        x = rng.standard_normal(n) * 10.0 ** rng.uniform(-2, 2)
        g = rng.standard_normal(n) * 10.0 ** rng.uniform(-2, 2)
        mu = float(rng.uniform(0, 0.5))
        lam1, lam2 = 10.0 ** rng.uniform(-3, 4, size=2)
        f1 = np.linalg.norm(residual(x, g, ProxMetric(lam1), mu).F)
        f2 = np.linalg.norm(residual(x, g, ProxMetric(lam2), mu).F)
        ratio = max(1.0, lam1 / lam2)
        rhs = ratio * f2
        # forward-error allowance: both norms come from differences at the
        # scale of x and lam g, and the lam ratio amplifies the right side
        noise = 8.0 * np.finfo(float).eps * (
            ratio * np.linalg.norm(x) + max(lam1, lam2) * np.linalg.norm(g))
        slack = (f1 - rhs - noise) / max(1.0, rhs)
        worst = max(worst, slack)
        if slack > 1e-12:
            violations += 1
    return CheckReport("metric_bound", trials, worst, violations == 0,
                       {"violations": violations})


# ---------------------------------------------------------------------------
# acceptance-recursion envelope


def genconv_simulate(eta: float, nu_rule: Callable[[int], float],
                     eps_rule: Callable[[int], float], a0: float,
                     accepts, q_exp: float,
                     nu_sum: Optional[float] = None,
                     eps_sum: Optional[float] = None,
                     eps_q_sum: Optional[float] = None) -> dict:
    """Simulate a_{k+1} = (eta + nu_k)^{Y_k} a_k + Y_k eps_k and its envelopes.

    Returns the sequence plus the two guaranteed bounds: the uniform cap
    C [a_0 + sum eps_k] with C = exp(sum nu_k / eta), and the accepted-step
    sum bound on sum Y_k a_{k+1}^q. Full-series sums may be supplied; power
    rules carrying .c/.q attributes get them computed exactly.
    """
    if not (0 < eta < 1):
        raise ValueError("eta must lie in (0, 1)")
    if nu_sum is None:
        nu_sum = power_rule_sum(nu_rule.c, nu_rule.q)
    if eps_sum is None:
        eps_sum = power_rule_sum(eps_rule.c, eps_rule.q)
    if eps_q_sum is None:
        eps_q_sum = power_rule_sum(eps_rule.c, eps_rule.q, power=q_exp)
    a = a0
    seq = [a0]
    accepted_sum = 0.0
    for k, y in enumerate(accepts):
        y = int(y)
        a = (eta + nu_rule(k)) ** y * a + y * eps_rule(k)
        seq.append(a)
        accepted_sum += y * a ** q_exp
    try:
        big_c = math.exp(nu_sum / eta)
    except OverflowError:
        big_c = math.inf  # envelope still valid, just uninformative
    cap = big_c * (a0 + eps_sum)
    sum_bound = (big_c ** q_exp / (1.0 - eta ** q_exp)) * ((eta * a0) ** q_exp + eps_q_sum)
    return {"sequence": seq, "cap": cap, "max_a": max(seq),
            "accepted_sum": accepted_sum, "sum_bound": sum_bound,
            "cap_slack": max(seq) - cap, "sum_slack": accepted_sum - sum_bound}


def check_genconv(trials: int = 1_000, seed: int = 0, horizon: int = 200) -> CheckReport:
    """Random recursions against both envelopes (zero violations expected)."""
    from stochnewton.oracles import power_sequence
    rng = np.random.default_rng(seed)
    worst = -math.inf
    violations = 0
    for _ in range(trials):
        eta = float(rng.uniform(0.3, 0.95))
        q_exp = float(rng.uniform(0.5, 1.0))
        # exp(sum nu_k / eta) must stay finite for the envelope to bite, so
        # the drawn series keeps its full sum under ~200
        nu = power_sequence(10.0 ** rng.uniform(-2, 1.5), rng.uniform(1.3, 3.0))
        # exponent kept steep enough that the q-powered series converges
        eps = power_sequence(10.0 ** rng.uniform(-2, 2),
                             rng.uniform(1.1 / q_exp + 0.05, 4.0))
        a0 = 10.0 ** rng.uniform(-3, 2)
        accepts = rng.random(horizon) < rng.uniform(0.1, 1.0)
        out = genconv_simulate(eta, nu, eps, a0, accepts, q_exp)
        scale_cap = max(1.0, out["cap"])
        scale_sum = max(1.0, out["sum_bound"])
        slack = max(out["cap_slack"] / scale_cap, out["sum_slack"] / scale_sum)
        worst = max(worst, slack)
        if slack > DIAG_TOL:
            violations += 1
    return CheckReport("genconv", trials, worst, violations == 0,
                       {"violations": violations, "horizon": horizon})


# ---------------------------------------------------------------------------
# descent of the fallback step


def _problem_pool(seed: int, count: int, loss_kinds, l2_shift: float = 0.0):
    pool = []
    rng = np.random.default_rng(seed)
    for i in range(count):
        kind = loss_kinds[i % len(loss_kinds)]
        ds = synth_binary(int(rng.integers(40, 120)), int(rng.integers(5, 25)),
                          density=float(rng.uniform(0.3, 0.9)),
                          seed=int(rng.integers(0, 2 ** 31)))
        pool.append(CompositeProblem(ds, loss_kind=kind, reg_weight=0.01,
                                     l2_shift=l2_shift))
    return pool


def check_prox_descent(trials: int = 1_000, seed: int = 0,
                       stochastic: bool = False) -> CheckReport:
    """Descent inequality for x + alpha v, v = -F, alpha <= 2(1 - g r) lam_m / L.

    With the exact gradient the decrease is at least alpha g ||v||_M^2; with a
    batch gradient the guarantee degrades by alpha / (4 g (r - 1) lam_m)
    times the squared gradient error.
    """
    rng = np.random.default_rng(seed)
    pool = _problem_pool(seed + 1, 8, (LOGISTIC, SIGMOID))
    lips = [grad_lipschitz_bound(p, method="rowmax") for p in pool]
    worst = -math.inf
    violations = 0
    for _ in range(trials):
        idx = int(rng.integers(len(pool)))
        p, big_l = pool[idx], lips[idx]
        n = p.n_features
        x = rng.standard_normal(n) * 10.0 ** rng.uniform(-1, 0.5)
        lam = 10.0 ** rng.uniform(-1.3, 1.3)
        lam_m = 1.0 / lam
        gam = float(rng.uniform(0.05, 0.95))
        rho = 1.0 + float(rng.uniform(0.02, 0.98)) * (1.0 / gam - 1.0)
        alpha_bar = 2.0 * (1.0 - gam * rho) * lam_m / big_l
        alpha = float(rng.uniform(0, 1)) * min(1.0, alpha_bar)
        if stochastic:
            size = max(1, p.n_points // 2)
            batch = np.sort(rng.choice(p.n_points, size=size, replace=False))
            g = loss_grad(p, x, batch)
            err2 = float(np.sum((loss_grad(p, x, None) - g) ** 2))
        else:
            g = loss_grad(p, x, None)
            err2 = 0.0
        v = -residual(x, g, ProxMetric(lam), p.reg_weight).F
        lhs = objective(p, x + alpha * v) - objective(p, x)
        rhs = -alpha * gam * float(v @ v) / lam
        if stochastic:
            rhs += alpha / (4.0 * gam * (rho - 1.0) * lam_m) * err2
        slack = (lhs - rhs) / max(1.0, abs(objective(p, x)))
        worst = max(worst, slack)
        if slack > DIAG_TOL:
            violations += 1
    name = "prox_descent_stoch" if stochastic else "prox_descent"
    return CheckReport(name, trials, worst, violations == 0,
                       {"violations": violations, "stochastic": stochastic})


# ---------------------------------------------------------------------------
# residual-to-distance bound under strong convexity


@dataclass(frozen=True)
class StrongConvexityCerts:
    """Constants entering the distance bound for mu-strongly-convex objectives.

    mu_f + mu_r must be positive; lam_m / lam_M bound the metric eigenvalues
    over the family of metrics being tested.
    """

    mu_f: float
    mu_r: float
    big_l: float
    lam_m: float
    lam_M: float

    def __post_init__(self):
        if self.mu_f + self.mu_r <= 0:
            raise ValueError("need mu_f + mu_r > 0")
        if not (0 < self.lam_m <= self.lam_M):
            raise ValueError("need 0 < lam_m <= lam_M")
        if self.big_l <= 0:
            raise ValueError("need big_l > 0")

    @property
    def mu_bar(self) -> float:
        return self.mu_f + self.mu_r

    @property
    def b1(self) -> float:
        return self.big_l - 2.0 * self.lam_m - self.mu_r

    @property
    def b2(self) -> float:
        return (self.lam_M + self.mu_r) ** 2 / self.mu_bar

    def alpha_of(self, tau: float) -> float:
        inner = self.b1 + self.b2 + tau
        if inner <= 0 or self.b2 <= 0:
            raise ValueError("constants outside the bound's domain")
        return math.sqrt(inner) / math.sqrt(self.b2)

    def big_b1(self, tau: float) -> float:
        if tau < 0:
            raise ValueError("tau must be nonnegative")
        inner = self.b1 + self.b2 + tau
        if inner < 0:
            raise ValueError("constants outside the bound's domain")
        return (1.0 + tau) / self.mu_bar * (math.sqrt(inner) + math.sqrt(self.b2)) ** 2

    def big_b2(self, tau: float) -> float:
        if tau <= 0:
            raise ValueError("tau must be positive for the error coefficient")
        a = self.alpha_of(tau)
        mb = self.mu_bar
        return (1.0 + tau) * (1.0 + a) * (a * mb + (1.0 + tau) * (1.0 + a)) / (
            tau * a ** 2 * mb ** 2)


def check_strconv_bound(trials: int = 1_000, seed: int = 0,
                        tau: float = 1.0) -> CheckReport:
    """||x - x*||^2 against B1 ||F||^2 (+ B2 ||grad error||^2 for batches).

    Problems carry a quadratic shift so the smooth part is strongly convex;
    reference minimizers come from the deterministic solver at tight
    tolerance. Metric scalars are drawn from [1/2, 2] and covered by family
    constants lam_m = 1/2, lam_M = 2.
    """
    shift = 0.1
    rng = np.random.default_rng(seed)
    pool = _problem_pool(seed + 2, 4, (LOGISTIC,), l2_shift=shift)
    cfg = S4NConfig(max_iters=300, stop_tol=1e-12)
    stars = [s2nd_run(p, cfg).summary["x_final"] for p in pool]
    certs = [StrongConvexityCerts(mu_f=shift, mu_r=0.0,
                                  big_l=grad_lipschitz_bound(p, method="rowmax"),
                                  lam_m=0.5, lam_M=2.0) for p in pool]
    worst = -math.inf
    violations = 0
    for t in range(trials):
        idx = int(rng.integers(len(pool)))
        p, x_star, cert = pool[idx], stars[idx], certs[idx]
        n = p.n_features
        x = x_star + rng.standard_normal(n) * 10.0 ** rng.uniform(-3, 0)
        lam = float(rng.uniform(0.5, 2.0))
        use_batch = bool(t % 2)
        if use_batch:
            size = max(1, p.n_points // 4)
            batch = np.sort(rng.choice(p.n_points, size=size, replace=False))
            g = loss_grad(p, x, batch)
            err2 = float(np.sum((loss_grad(p, x, None) - g) ** 2))
            fn2 = float(np.sum(residual(x, g, ProxMetric(lam), p.reg_weight).F ** 2))
            rhs = cert.big_b1(tau) * fn2 + cert.big_b2(tau) * err2
        else:
            g = loss_grad(p, x, None)
            fn2 = float(np.sum(residual(x, g, ProxMetric(lam), p.reg_weight).F ** 2))
            rhs = cert.big_b1(0.0) * fn2
        lhs = float(np.sum((x - x_star) ** 2))
        slack = (lhs - rhs) / max(1.0, rhs)
        worst = max(worst, slack)
        if slack > DIAG_TOL:
            violations += 1
    return CheckReport("strconv_bound", trials, worst, violations == 0,
                       {"violations": violations, "tau": tau})


# ---------------------------------------------------------------------------
# concentration of sampling errors


def sigma_bar(dist: str, dim: int, light_tail: bool) -> float:
    """Certified dispersion constant for each sampled family.

    normal_vector: iid standard normal in R^dim. Second moment E||X||^2 = dim;
    the light-tail premise E exp(||X||^2 / s^2) = e holds exactly at
    s^2 = 2 / (1 - exp(-2/dim)).

    goe_matrix: X = (Z + Z^T)/sqrt(2) with Z iid standard normal, measured in
    spectral norm, dominated by the Frobenius norm whose squared expectation
    is dim(dim+1); light-tail constant from ||X||_F^2 = 2 chi^2 with
    dim(dim+1)/2 degrees of freedom.

    sphere_vector: uniform on the unit sphere, ||X|| = 1 surely; s = 1 meets
    the light-tail premise with equality.
    """
    if dist == "normal_vector":
        if light_tail:
            return math.sqrt(2.0 / (1.0 - math.exp(-2.0 / dim)))
        return math.sqrt(float(dim))
    if dist == "goe_matrix":
        if light_tail:
            d_f = dim * (dim + 1) / 2.0
            return math.sqrt(4.0 / (1.0 - math.exp(-2.0 / d_f)))
        return math.sqrt(float(dim * (dim + 1)))
    if dist == "sphere_vector":
        return 1.0
    raise ValueError(f"unknown distribution {dist!r}")


def _sample_norms(dist: str, dim: int, n_avg: int, count: int, rng) -> np.ndarray:
    if dist == "normal_vector":
        draws = rng.standard_normal((count, n_avg, dim))
        return np.linalg.norm(draws.mean(axis=1), axis=1)
    if dist == "sphere_vector":
        draws = rng.standard_normal((count, n_avg, dim))
        draws /= np.linalg.norm(draws, axis=2, keepdims=True)
        return np.linalg.norm(draws.mean(axis=1), axis=1)
    if dist == "goe_matrix":
        z = rng.standard_normal((count, n_avg, dim, dim))
        sym = (z + np.swapaxes(z, 2, 3)) / math.sqrt(2.0)
        avg = sym.mean(axis=1)
        eig = np.linalg.eigvalsh(avg)
        return np.abs(eig).max(axis=1)
    raise ValueError(f"unknown distribution {dist!r}")


def concentration_mc(dist: str = "normal_vector", dim: int = 10, n_avg: int = 1,
                     tau: float = 2.0, trials: int = 100_000,
                     light_tail: bool = False, seed: int = 0,
                     chunk: int = 20_000) -> CheckReport:
    """Monte Carlo tail frequencies against the stated concentration bounds.

    Averages of n_avg iid draws use the scaled constant sigma / sqrt(n_avg);
    the normal and symmetric-matrix families are closed under averaging so
    the light-tail premise carries over, while the sphere family is not and
    is restricted to n_avg = 1 in light-tail mode. The empirical frequency
    must not exceed the bound by more than three standard errors.
    """
    if tau <= 0:
        raise ValueError("tau must be positive")
    if dist == "sphere_vector" and light_tail and n_avg != 1:
        raise ValueError("sphere light-tail premise does not survive averaging")
    sb = sigma_bar(dist, dim, light_tail)
    scale = sb / math.sqrt(n_avg)
    is_matrix = dist == "goe_matrix"
    if light_tail:
        bound = math.exp(-tau ** 2 / 3.0)
        if is_matrix:
            thr = tau * scale
            bound *= 2.0 * dim
        else:
            thr = (1.0 + tau) * scale
    else:
        bound = tau ** -2.0
        thr = tau * scale
        if is_matrix:
            bound *= kappa_dim(dim)
    bound_eff = min(1.0, bound)
    rng = np.random.default_rng(seed)
    exceed = 0
    done = 0
    while done < trials:
        count = min(chunk, trials - done)
        norms = _sample_norms(dist, dim, n_avg, count, rng)
        exceed += int(np.count_nonzero(norms >= thr))
        done += count
    emp = exceed / trials
    margin = 3.0 * math.sqrt(max(emp * (1.0 - emp), 1e-12) / trials)
    slack = emp - bound_eff
    passed = emp <= bound_eff + margin
    return CheckReport(f"concentration_{dist}" + ("_light" if light_tail else ""),
                       trials, slack, passed,
                       {"dim": dim, "n_avg": n_avg, "tau": tau,
                        "threshold": thr, "bound": bound,
                        "bound_effective": bound_eff, "empirical": emp,
                        "margin": margin})


# ---------------------------------------------------------------------------
# dispatch for the command-line entry point

CHECKS = {
    "metric": lambda **kw: check_metric_bound(**kw),
    "genconv": lambda **kw: check_genconv(**kw),
    "prox-descent": lambda **kw: check_prox_descent(**kw),
    "prox-descent-stoch": lambda **kw: check_prox_descent(stochastic=True, **kw),
    "strconv": lambda **kw: check_strconv_bound(**kw),
    "conc-vec": lambda **kw: concentration_mc("normal_vector", n_avg=10, **kw),
    "conc-vec-light": lambda **kw: concentration_mc("normal_vector", light_tail=True, **kw),
    "conc-mat": lambda **kw: concentration_mc("goe_matrix", dim=8, n_avg=20, **kw),
    "conc-mat-light": lambda **kw: concentration_mc("goe_matrix", dim=8,
                                                    light_tail=True, **kw),
    "conc-sphere": lambda **kw: concentration_mc("sphere_vector", **kw),
}


def run_check(name: str, **kwargs) -> CheckReport:
    if name not in CHECKS:
        raise ValueError(f"unknown check {name!r}; choose from {sorted(CHECKS)}")
    return CHECKS[name](**kwargs)
