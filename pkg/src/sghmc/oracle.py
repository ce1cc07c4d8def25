"""Stochastic gradient oracles.

An oracle draws data points ``x`` and evaluates ``H(theta, x) = F(theta, x) +
G(theta, x)``, where ``F`` is the locally Lipschitz part and ``G`` the bounded,
possibly discontinuous part. Data points are rows of a 2-D array; evaluation
functions accept a single row ``(m,)`` or a batch ``(n, m)`` and return
``(d,)`` or ``(n, d)`` accordingly.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Literal

import numpy as np
from scipy import special

from . import _kernels
from .errors import ConfigError

DistKind = Literal["gaussian", "logistic", "gumbel"]
_TINY_U = 2.0**-53


@dataclass(frozen=True)
class TargetDistribution:
    """Gaussian(loc=mu, scale=sigma), Logistic(loc=alpha, scale=beta) or
    Gumbel(loc=mu, scale=beta)."""

    kind: DistKind
    loc: float
    scale: float

    def __post_init__(self):
        if self.kind not in ("gaussian", "logistic", "gumbel"):
            raise ConfigError(f"unknown distribution kind {self.kind!r}", "dist")
        if not (math.isfinite(self.loc) and math.isfinite(self.scale)):
            raise ConfigError("parameters must be finite", "dist")
        if self.scale <= 0:
            raise ConfigError("scale must be positive", "dist")

    @classmethod
    def parse(cls, text: str) -> "TargetDistribution":
        """Parse strings like ``logistic(0,1)``, ``N(-1,1)`` or ``G(0,2)``."""
        aliases = {"n": "gaussian", "normal": "gaussian", "gaussian": "gaussian",
                   "l": "logistic", "logistic": "logistic", "g": "gumbel", "gumbel": "gumbel"}
        t = text.strip().lower().replace(" ", "")
        try:
            name, rest = t.split("(", 1)
            a, b = rest.rstrip(")").split(",")
            return cls(aliases[name], float(a), float(b))
        except (ValueError, KeyError):
            raise ConfigError(f"cannot parse distribution {text!r}", "dist") from None

    @property
    def label(self) -> str:
        short = {"gaussian": "N", "logistic": "L", "gumbel": "G"}[self.kind]
        return f"{short}({self.loc:g},{self.scale:g})"

    # -- distribution functions -------------------------------------------
    def cdf(self, x):
        z = (np.asarray(x, dtype=float) - self.loc) / self.scale
        if self.kind == "gaussian":
            return special.ndtr(z)
        if self.kind == "logistic":
            return special.expit(z)
        return np.exp(-np.exp(-np.maximum(z, -700.0)))

    def pdf(self, x):
        z = (np.asarray(x, dtype=float) - self.loc) / self.scale
        if self.kind == "gaussian":
            return np.exp(-0.5 * z * z) / (self.scale * math.sqrt(2 * math.pi))
        if self.kind == "logistic":
            e = np.exp(-np.abs(z))
            return e / (self.scale * (1 + e) ** 2)
        z = np.maximum(z, -700.0)  # exp(700) is finite; the density there is 0 anyway
        return np.exp(-z - np.exp(-z)) / self.scale

    def ppf(self, u):
        u = np.asarray(u, dtype=float)
        if self.kind == "gaussian":
            return self.loc + self.scale * special.ndtri(u)
        if self.kind == "logistic":
            return self.loc + self.scale * (np.log(u) - np.log1p(-u))
        return self.loc - self.scale * np.log(-np.log(u))

    @property
    def density_sup(self) -> float:
        if self.kind == "gaussian":
            return 1.0 / (self.scale * math.sqrt(2 * math.pi))
        if self.kind == "logistic":
            return 1.0 / (4.0 * self.scale)
        return math.exp(-1.0) / self.scale

    @property
    def mean(self) -> float:
        if self.kind == "gumbel":
            return self.loc + self.scale * np.euler_gamma
        return self.loc

    def sample(self, rng: np.random.Generator, n: int) -> np.ndarray:
        """``n`` draws. Logistic/Gumbel by inverse CDF, Gaussian by ziggurat."""
        if self.kind == "gaussian":
            return self.loc + self.scale * rng.standard_normal(n)
        u = rng.random(n)
        u[u == 0.0] = _TINY_U
        return self.ppf(u)


def sample_dist(dist: TargetDistribution, rng: np.random.Generator) -> float:
    return float(dist.sample(rng, 1)[0])


def true_quantile(dist: TargetDistribution, q: float) -> float:
    if not 0.0 < q < 1.0:
        raise ConfigError("q must lie in (0, 1)", "q")
    if dist.kind == "logistic":
        return dist.loc + dist.scale * math.log(q / (1.0 - q))
    if dist.kind == "gumbel":
        return dist.loc - dist.scale * math.log(-math.log(q))
    return float(dist.ppf(q))


@dataclass(frozen=True)
class QuantileProblem:
    dist: TargetDistribution
    q: float
    lambda_r: float

    def __post_init__(self):
        if not 0.0 < self.q < 1.0:
            raise ConfigError("q must lie in (0, 1)", "q")
        # zero is allowed for loss evaluation; the sampler settings use > 0
        if not self.lambda_r >= 0:
            raise ConfigError("must be nonnegative", "lambda_r")

    @property
    def true_quantile(self) -> float:
        return true_quantile(self.dist, self.q)


def quantile_grad(theta: float, x: float, q: float, lambda_r: float) -> float:
    """Pinball-loss stochastic gradient; the indicator uses strict ``x < theta``."""
    f = 2.0 * lambda_r * theta
    g = -q + (1.0 if x < theta else 0.0)
    return f + g


class GradientOracle:
    """Base class. Subclasses set ``dim``/``data_dim`` and implement
    ``draw_samples``, ``eval_F`` and ``eval_G``.

    ``grad_kernel`` (a compiled ``(theta, xs, params, out)`` function) and
    ``kernel_params`` enable the compiled chain loop; they must compute the
    batch mean of ``H`` exactly like :meth:`mean_H`.
    """

    dim: int
    data_dim: int
    grad_kernel: Callable | None = None
    kernel_params: np.ndarray | None = None

    def draw_samples(self, rng: np.random.Generator, n: int) -> np.ndarray:
        raise NotImplementedError

    def draw_sample(self, rng: np.random.Generator) -> np.ndarray:
        return self.draw_samples(rng, 1)[0]

    def eval_F(self, theta, x) -> np.ndarray:
        raise NotImplementedError

    def eval_G(self, theta, x) -> np.ndarray:
        raise NotImplementedError

    def eval_H(self, theta, x) -> np.ndarray:
        return self.eval_F(theta, x) + self.eval_G(theta, x)

    def mean_H(self, theta: np.ndarray, xs: np.ndarray) -> np.ndarray:
        """Batch-averaged ``H``; summed in row order, then divided."""
        h = self.eval_H(theta, xs)
        acc = h[0].copy()
        for row in h[1:]:
            acc += row
        return acc / len(h)

    @property
    def has_exact_mean_grad(self) -> bool:
        return callable(getattr(self, "exact_mean_grad", None))

    def objective(self, theta) -> float:
        """u(theta) when available; used by the Lyapunov monitor."""
        raise NotImplementedError


def _as_theta(theta, d: int) -> np.ndarray:
    t = np.asarray(theta, dtype=float)
    if t.shape != (d,):
        raise ValueError(f"theta must have shape ({d},), got {t.shape}")
    return t


@dataclass(frozen=True, eq=False)
class QuantileOracle(GradientOracle):
    """Regularized pinball loss: F = 2*lambda_r*theta, G = -q + 1{x < theta}."""

    problem: QuantileProblem
    dim: int = field(default=1, init=False)
    data_dim: int = field(default=1, init=False)

    @property
    def grad_kernel(self):
        return _kernels.quantile_grad_kernel

    @property
    def kernel_params(self):
        return np.array([self.problem.lambda_r, self.problem.q])

    def draw_samples(self, rng, n):
        return self.problem.dist.sample(rng, n).reshape(n, 1)

    def eval_F(self, theta, x):
        t = _as_theta(theta, 1)
        x = np.asarray(x, dtype=float)
        return 2.0 * self.problem.lambda_r * t + np.zeros_like(x)

    def eval_G(self, theta, x):
        t = _as_theta(theta, 1)
        x = np.asarray(x, dtype=float)
        return -self.problem.q + (x < t).astype(float)

    def exact_mean_grad(self, theta):
        t = _as_theta(theta, 1)
        return 2.0 * self.problem.lambda_r * t - self.problem.q + self.problem.dist.cdf(t)

    def G_bound(self, x) -> np.ndarray:
        """Pointwise bound on |G(theta, x)| used in the certifier."""
        return np.full(np.shape(x)[:-1] if np.ndim(x) > 1 else (), 2.0)

    def objective(self, theta):
        from .diagnostics import u_quantile
        return u_quantile(float(_as_theta(theta, 1)[0]), self.problem)


@dataclass(frozen=True, eq=False)
class QuadraticOracle(GradientOracle):
    """u(theta) = a|theta|^2/2 with additive Gaussian gradient noise."""

    a: float
    noise_sd: float = 0.0
    dim: int = 1

    def __post_init__(self):
        if not self.a > 0:
            raise ConfigError("must be positive", "a")
        if not self.noise_sd >= 0:
            raise ConfigError("must be nonnegative", "noise_sd")
        if self.dim < 1:
            raise ConfigError("must be >= 1", "dim")

    @property
    def data_dim(self) -> int:
        return self.dim

    @property
    def grad_kernel(self):
        return _kernels.quadratic_grad_kernel

    @property
    def kernel_params(self):
        return np.array([self.a, self.noise_sd])

    def draw_samples(self, rng, n):
        return rng.standard_normal((n, self.dim))

    def eval_F(self, theta, x):
        t = _as_theta(theta, self.dim)
        return self.a * t + np.zeros_like(np.asarray(x, dtype=float))

    def eval_G(self, theta, x):
        _as_theta(theta, self.dim)
        return self.noise_sd * np.asarray(x, dtype=float)

    def exact_mean_grad(self, theta):
        return self.a * _as_theta(theta, self.dim)

    def objective(self, theta):
        t = _as_theta(theta, self.dim)
        return 0.5 * self.a * float(t @ t)


def quadratic_oracle(a: float, noise_sd: float = 0.0, dim: int = 1) -> QuadraticOracle:
    return QuadraticOracle(a=a, noise_sd=noise_sd, dim=dim)


def quantile_oracle(dist: TargetDistribution, q: float, lambda_r: float) -> QuantileOracle:
    return QuantileOracle(QuantileProblem(dist, q, lambda_r))
