"""Excess risk, 1-D empirical Wasserstein distances and rate regression."""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np
from scipy import integrate, optimize, stats

from .oracle import QuantileProblem

QUAD_TOL = 1e-10
GOLDEN_TOL = 1e-10


class QuadratureError(RuntimeError):
    pass


def _expected_pinball(theta: float, prob: QuantileProblem) -> float:
    q = prob.q
    pdf = prob.dist.pdf
    with warnings.catch_warnings():
        warnings.simplefilter("error", integrate.IntegrationWarning)
        try:
            lo, err_lo = integrate.quad(lambda x: (q - 1.0) * (x - theta) * pdf(x), -np.inf, theta,
                                        epsabs=QUAD_TOL / 2, epsrel=0, limit=200)
            hi, err_hi = integrate.quad(lambda x: q * (x - theta) * pdf(x), theta, np.inf,
                                        epsabs=QUAD_TOL / 2, epsrel=0, limit=200)
        except integrate.IntegrationWarning as exc:
            raise QuadratureError(f"quadrature did not converge at theta={theta}: {exc}") from None
    return lo + hi


def u_quantile(theta: float, prob: QuantileProblem) -> float:
    """E[l_q(X - theta)] + lambda_r * theta^2, the integral by adaptive quadrature
    split at the kink."""
    theta = float(theta)
    return _expected_pinball(theta, prob) + prob.lambda_r * theta * theta


@lru_cache(maxsize=256)
def argmin_u(prob: QuantileProblem) -> tuple[float, float]:
    """(argmin, min) of u by golden-section search on [Q* - 1, Q* + 1]."""
    q_star = prob.true_quantile
    lo, hi = q_star - 1.0, q_star + 1.0
    f = lambda t: u_quantile(t, prob)
    mid = optimize.minimize_scalar(f, bounds=(lo, hi), method="bounded").x
    if not (f(mid) <= f(lo) and f(mid) <= f(hi)):
        raise RuntimeError("bracket around the true quantile does not contain the minimum")
    res = optimize.minimize_scalar(f, bracket=(lo, mid, hi), method="golden",
                                   options={"xtol": GOLDEN_TOL})
    if not res.success:
        raise RuntimeError(f"golden-section search failed: {res.message}")
    return float(res.x), float(res.fun)


def inf_u(prob: QuantileProblem) -> float:
    return argmin_u(prob)[1]


@dataclass
class RiskReport:
    eta: float
    n_iters: int
    excess_risk_mean: float
    excess_risk_se: float
    seeds: list = field(default_factory=list)
    excess_risk_min: float = math.nan
    excess_risk_max: float = math.nan
    excess_risk_sd: float = math.nan


def excess_risk(endpoints, prob: QuantileProblem, eta: float = math.nan, n_iters: int = 0,
                seeds=()) -> RiskReport:
    pts = np.asarray(endpoints, dtype=float).reshape(-1)
    if pts.size == 0:
        raise ValueError("need at least one endpoint")
    floor = inf_u(prob)
    ex = np.array([u_quantile(t, prob) - floor for t in pts])
    sd = float(ex.std(ddof=1)) if ex.size > 1 else 0.0
    return RiskReport(eta=eta, n_iters=n_iters, excess_risk_mean=float(ex.mean()),
                      excess_risk_se=sd / math.sqrt(ex.size), seeds=list(seeds),
                      excess_risk_min=float(ex.min()), excess_risk_max=float(ex.max()),
                      excess_risk_sd=sd)


def tolerance_interval(prob: QuantileProblem, eps: float) -> tuple[float, float]:
    """The set {theta : u(theta) - inf u < eps}, an open interval since u is convex."""
    t_star, u_star = argmin_u(prob)
    g = lambda t: u_quantile(t, prob) - u_star - eps
    ends = []
    for sign in (-1.0, 1.0):
        step = 1.0
        while g(t_star + sign * step) <= 0:
            step *= 2.0
            if step > 1e8:
                raise RuntimeError("could not bracket the tolerance interval")
        a, b = sorted((t_star, t_star + sign * step))
        ends.append(optimize.brentq(g, a, b, xtol=1e-13, rtol=4 * np.finfo(float).eps))
    return ends[0], ends[1]


def _check_pair(a, b) -> tuple[np.ndarray, np.ndarray]:
    a = np.asarray(a, dtype=float).reshape(-1)
    b = np.asarray(b, dtype=float).reshape(-1)
    if a.size != b.size:
        raise ValueError(f"sample sizes differ: {a.size} vs {b.size}")
    if a.size == 0:
        raise ValueError("empty samples")
    return a, b


def empirical_w1_1d(a, b) -> float:
    """W1 between equal-size empirical measures given sorted samples."""
    a, b = _check_pair(a, b)
    return float(np.mean(np.abs(a - b)))


def empirical_w2_1d(a, b) -> float:
    a, b = _check_pair(a, b)
    d = np.abs(a - b)
    m = d.max()
    if m == 0:
        return 0.0
    return float(m * math.sqrt(np.mean((d / m) ** 2)))  # scaled against under/overflow


def wasserstein_1d(a, b, order: int = 2) -> float:
    """Convenience wrapper that sorts first."""
    a, b = np.sort(np.ravel(a)), np.sort(np.ravel(b))
    return empirical_w1_1d(a, b) if order == 1 else empirical_w2_1d(a, b)


def bootstrap_se(a, b, order: int = 2, n_boot: int = 200, seed: int = 0) -> float:
    """Bootstrap standard error of the empirical W_order distance."""
    a, b = np.ravel(a), np.ravel(b)
    r = np.random.Generator(np.random.Philox(seed))
    vals = np.empty(n_boot)
    for i in range(n_boot):
        vals[i] = wasserstein_1d(r.choice(a, a.size), r.choice(b, b.size), order)
    return float(vals.std(ddof=1))


def rate_slope(points) -> tuple[float, float, float]:
    """OLS of log(value) on log(eta); returns (slope, intercept, r^2)."""
    pts = np.asarray(points, dtype=float)
    if pts.ndim != 2 or pts.shape[1] != 2 or pts.shape[0] < 3:
        raise ValueError("need at least three (eta, value) pairs")
    if np.any(pts <= 0) or not np.all(np.isfinite(pts)):
        raise ValueError("all etas and values must be finite and positive")
    y = np.log(pts[:, 1])
    fit = stats.linregress(np.log(pts[:, 0]), y)
    # a perfectly flat series is fitted exactly, though linregress reports r = 0
    r2 = 1.0 if np.ptp(y) == 0 else float(fit.rvalue**2)
    return float(fit.slope), float(fit.intercept), r2
