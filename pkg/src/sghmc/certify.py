"""Explicit step-size constants, the Lyapunov monitor, and Monte-Carlo
checks of the structural assumptions on a gradient oracle."""
from __future__ import annotations

import math
import warnings
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy import integrate

from .errors import ConfigError, UnsupportedCheck
from .oracle import GradientOracle, QuantileProblem


@dataclass(frozen=True)
class AssumptionInputs:
    """Constants of the oracle and moments of the data.

    ``moment_2rho2`` is E(1+|X|)^(2(rho+1)) and ``moment_4rho4`` is
    E(1+|X|)^(4(rho+1)). ``moment_K1`` / ``moment_K1_sq`` are the first two
    moments of the bound on |G|; ``moment_Fstar_sq`` is E[F*(X)^2].
    """

    L1: float
    L2: float
    rho: float
    L: float
    a: float
    b: float
    gamma: float
    beta: float
    u0: float
    h0_norm: float
    moment_2rho2: float
    moment_K1_sq: float
    moment_Fstar_sq: float
    d: int = 1
    moment_K1: float | None = None
    moment_4rho4: float | None = None

    def __post_init__(self):
        nonneg = ("L1", "L2", "rho", "b", "h0_norm", "moment_2rho2", "moment_K1_sq", "moment_Fstar_sq")
        for name in nonneg:
            val = getattr(self, name)
            if not (math.isfinite(val) and val >= 0):
                raise ConfigError("must be finite and nonnegative", name)
        for name in ("L", "a", "gamma", "beta"):
            val = getattr(self, name)
            if not (math.isfinite(val) and val > 0):
                raise ConfigError("must be finite and positive", name)
        if not math.isfinite(self.u0):
            raise ConfigError("must be finite", "u0")
        if self.d < 1:
            raise ConfigError("must be >= 1", "d")
        for name in ("moment_K1", "moment_4rho4"):
            val = getattr(self, name)
            if val is not None and not (math.isfinite(val) and val >= 0):
                raise ConfigError("must be finite and nonnegative", name)

    @property
    def k1_mean(self) -> float:
        # Jensen: (E K)^2 <= E K^2, so sqrt(E K^2) is a safe stand-in.
        return math.sqrt(self.moment_K1_sq) if self.moment_K1 is None else self.moment_K1

    @property
    def m4(self) -> float:
        # Fallback (E Y)^2 <= E Y^2 is optimistic; pass the real moment when known.
        return self.moment_2rho2**2 if self.moment_4rho4 is None else self.moment_4rho4


@dataclass(frozen=True)
class DerivedConstants:
    a_prime: float
    b_prime: float
    b_prime_second_moment: float
    b_prime_squared_mean: float
    lam: float
    A_c: float
    L1_tilde: float
    C1_tilde: float
    K1: float
    K2: float
    K3: float
    K1_tilde: float
    c3_tilde: float
    c3_hat: float
    c4_tilde: float
    c4_hat: float
    c7_tilde: float
    c7_tilde_table: float
    c8_tilde: float
    K_tilde: float
    eta_terms: tuple
    eta_max: float

    @property
    def binding_term(self) -> str:
        names = ("1", "2/gamma", "gamma*lambda/(2*K1)", "K3/K2", "lambda*gamma/(2*K_tilde)")
        return names[int(np.argmin(self.eta_terms))]

    def to_dict(self) -> dict:
        out = asdict(self)
        out["eta_terms"] = list(self.eta_terms)
        out["binding_term"] = self.binding_term
        return out


def derive_constants(inp: AssumptionInputs) -> DerivedConstants:
    """Evaluate the step-size restriction and its ingredients.

    Both versions of b' (second moment of the G bound, or squared first
    moment) are computed; the larger one is used downstream. Every
    eta-dependent factor inside K1_tilde is evaluated at eta = 1.
    """
    g = inp.gamma
    L = inp.L
    a_p = inp.a / 2.0
    b_sm = inp.b + inp.moment_K1_sq / (2.0 * inp.a)
    b_mean = inp.b + inp.k1_mean**2 / (2.0 * inp.a)
    b_p = max(b_sm, b_mean)
    lam = min(0.25, a_p / (L + 2.0 * L * inp.h0_norm + g * g / 2.0))
    A_c = inp.beta / 2.0 * (2.0 * lam * inp.u0 + 2.0 * lam * L * inp.h0_norm + b_p)
    m2 = inp.moment_2rho2
    m4 = inp.m4
    L1t = 2.0 * inp.L1**2 * m2
    C1t = 4.0 * inp.L2**2 * m2 + 4.0 * inp.moment_Fstar_sq
    one = 1.0 - 2.0 * lam
    K1 = 0.5 * max((L1t + g * L * L) / (g * g / 16.0 * one),
                   (L + g * g / 2.0 - g * g * lam / 2.0 + g / 2.0) / (one / 8.0))
    K2 = (g * inp.h0_norm**2 + C1t) / 2.0
    K3 = g * (inp.d + A_c) / inp.beta
    K1t = max((1.0 + g / 2.0) * inp.L1**2 * m2 / (g * g / 16.0 * one),
              (L / 2.0 + g * g / 4.0 - g * g * lam / 4.0 + g / 4.0) / (one / 8.0))
    c3t = 1.5 * g * g + 24.0 * (2.0 + g) ** 2 * (L**4 + inp.L1**4 * m4)
    c3h = 8.0 * (1.0 + g / 2.0) ** 2 * inp.L1**4 * m4
    c4t = 2.0 * (1.0 + lam * g - g) ** 2
    c4h = 2.0 * (L + g * g / 2.0 - lam * g * g / 2.0 + g) ** 2
    c7t = 120.0 * g * inp.d * inp.L2**2 * m2 + 120.0 * g * inp.d * inp.moment_Fstar_sq
    c7_table = 90.0 * g * inp.d * inp.L2**2 * m2 + 90.0 * g * inp.d * inp.moment_Fstar_sq
    c8t = max((c3t + c3h) / (one**2 * g**4 / 128.0), (c4t + c4h) / (one**2 / 32.0))
    Kt = 2.0 * K1t + c8t
    k3_over_k2 = math.inf if K2 == 0 else K3 / K2
    terms = (1.0, 2.0 / g, g * lam / (2.0 * K1), k3_over_k2, lam * g / (2.0 * Kt))
    return DerivedConstants(
        a_prime=a_p, b_prime=b_p, b_prime_second_moment=b_sm, b_prime_squared_mean=b_mean,
        lam=lam, A_c=A_c, L1_tilde=L1t, C1_tilde=C1t, K1=K1, K2=K2, K3=K3, K1_tilde=K1t,
        c3_tilde=c3t, c3_hat=c3h, c4_tilde=c4t, c4_hat=c4h, c7_tilde=c7t, c7_tilde_table=c7_table,
        c8_tilde=c8t, K_tilde=Kt, eta_terms=terms, eta_max=min(terms),
    )


def lyapunov(theta, v, u_val: float, beta: float, gamma: float, lam: float) -> float:
    t = np.asarray(theta, dtype=float)
    w = np.asarray(v, dtype=float) / gamma
    s = t + w
    return float(beta * u_val + beta / 4.0 * gamma**2 * (s @ s + w @ w - lam * (t @ t)))


def lyapunov_lower_bound(theta, v, beta: float, gamma: float, lam: float) -> float:
    t = np.asarray(theta, dtype=float)
    w = np.asarray(v, dtype=float)
    return max(beta * gamma**2 * (1 - 2 * lam) * (t @ t) / 8.0, beta * (1 - 2 * lam) * (w @ w) / 4.0)


def step_warnings(eta: float, constants: DerivedConstants) -> list[str]:
    if eta > constants.eta_max:
        return [f"eta={eta!r} exceeds the certified bound eta_max={constants.eta_max!r} "
                f"(binding term {constants.binding_term}); the bound is sufficient, not necessary"]
    return []


# -- quantile-oracle inputs ---------------------------------------------------

def _moment(dist, power: float) -> float:
    f = lambda x: (1.0 + abs(x)) ** power * float(dist.pdf(x))
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", integrate.IntegrationWarning)
        left, _ = integrate.quad(f, -np.inf, 0.0, epsabs=1e-12, epsrel=1e-12, limit=200)
        right, _ = integrate.quad(f, 0.0, np.inf, epsabs=1e-12, epsrel=1e-12, limit=200)
    return left + right


def quantile_assumptions(prob: QuantileProblem, gamma: float, beta: float) -> AssumptionInputs:
    """Constants for the pinball-loss oracle.

    F is linear (L1 = 2 lambda_r, L2 = 0, rho = 0), |G| <= 2 everywhere, the
    average-Lipschitz constant is 2(lambda_r + sup density), and
    dissipativity holds with A = 2 lambda_r I, B = 0. F*(x) = 2*2 + 2 + 0 = 6.
    """
    from .diagnostics import u_quantile

    lam_r = prob.lambda_r
    k1 = 2.0
    f_star = 2.0 * k1 + k1 + 0.0
    return AssumptionInputs(
        L1=2.0 * lam_r, L2=0.0, rho=0.0, L=2.0 * (lam_r + prob.dist.density_sup),
        a=2.0 * lam_r, b=0.0, gamma=gamma, beta=beta,
        u0=u_quantile(0.0, prob), h0_norm=abs(float(prob.dist.cdf(0.0)) - prob.q),
        moment_2rho2=_moment(prob.dist, 2.0), moment_K1_sq=k1 * k1,
        moment_Fstar_sq=f_star * f_star, d=1, moment_K1=k1,
        moment_4rho4=_moment(prob.dist, 4.0),
    )


# -- Monte-Carlo assumption checks ------------------------------------------

@dataclass
class CheckReport:
    name: str
    statistic: float
    threshold: float
    passed: bool
    details: list = field(default_factory=list)

    def to_dict(self) -> dict:
        return {"name": self.name, "statistic": self.statistic, "threshold": self.threshold,
                "pass": bool(self.passed), "details": self.details}


def _chunks(total: int, size: int):
    done = 0
    while done < total:
        n = min(size, total - done)
        yield n
        done += n


def check_unbiasedness(oracle: GradientOracle, thetas, n_samples: int, rng: np.random.Generator,
                       n_se: float = 4.0, chunk: int = 1 << 18) -> CheckReport:
    """Compare the MC mean of H with the exact mean gradient at each theta.

    The statistic is the largest |mean - exact| / SE over thetas and
    coordinates; the check passes when it is at most ``n_se``.
    """
    if not oracle.has_exact_mean_grad:
        raise UnsupportedCheck("oracle does not provide exact_mean_grad")
    worst = 0.0
    details = []
    for theta in thetas:
        t = np.atleast_1d(np.asarray(theta, dtype=float))
        s1 = np.zeros(oracle.dim)
        s2 = np.zeros(oracle.dim)
        for n in _chunks(n_samples, chunk):
            h = oracle.eval_H(t, oracle.draw_samples(rng, n))
            s1 += h.sum(axis=0)
            s2 += (h * h).sum(axis=0)
        mean = s1 / n_samples
        var = np.maximum(s2 / n_samples - mean**2, 0.0) * n_samples / max(n_samples - 1, 1)
        se = np.sqrt(var / n_samples)
        exact = np.asarray(oracle.exact_mean_grad(t), dtype=float)
        dev = np.abs(mean - exact)
        # zero variance means H is deterministic at this theta: require exact agreement
        z = np.where(se > 0, dev / np.where(se > 0, se, 1.0), np.where(dev <= 1e-12 * (1 + np.abs(exact)), 0.0, np.inf))
        worst = max(worst, float(z.max()))
        details.append({"theta": t.tolist(), "mean": mean.tolist(), "se": se.tolist(),
                        "exact": exact.tolist(), "z": z.tolist()})
    return CheckReport("unbiasedness", worst, n_se, worst <= n_se, details)


def check_avg_lipschitz(oracle: GradientOracle, L: float, n_pairs: int, n_samples: int,
                        rng: np.random.Generator, box=(-5.0, 5.0), n_se: float = 3.0,
                        chunk: int = 1 << 18, rtol: float = 1e-12) -> CheckReport:
    """MC test of E|H(theta,X) - H(theta',X)| <= L|theta - theta'|.

    Pairs are drawn uniformly from ``box`` (per coordinate); both points share
    the same data draws. The statistic is the worst ratio of the MC mean to
    the allowed bound; each pair must satisfy mean <= L|dtheta| + n_se*SE,
    up to a relative rounding slack ``rtol``.
    """
    if not L > 0:
        raise ConfigError("must be positive", "L")
    lo, hi = box
    worst = 0.0
    ok = True
    details = []
    for _ in range(n_pairs):
        t1 = rng.uniform(lo, hi, oracle.dim)
        t2 = rng.uniform(lo, hi, oracle.dim)
        s1 = 0.0
        s2 = 0.0
        for n in _chunks(n_samples, chunk):
            x = oracle.draw_samples(rng, n)
            diff = oracle.eval_H(t1, x) - oracle.eval_H(t2, x)
            norms = np.sqrt(np.sum(diff * diff, axis=1))
            s1 += norms.sum()
            s2 += (norms * norms).sum()
        mean = s1 / n_samples
        se = math.sqrt(max(s2 / n_samples - mean**2, 0.0) / max(n_samples - 1, 1))
        bound = L * float(np.linalg.norm(t1 - t2))
        ok &= mean <= bound * (1.0 + rtol) + n_se * se
        ratio = mean / bound if bound > 0 else (0.0 if mean == 0 else math.inf)
        worst = max(worst, ratio)
        details.append({"theta": t1.tolist(), "theta_prime": t2.tolist(), "mean": mean, "se": se,
                        "bound": bound})
    return CheckReport("avg_lipschitz", worst, 1.0, bool(ok), details)


def check_dissipativity(oracle: GradientOracle, a: float, b: float, points, rng: np.random.Generator,
                        n_x: int = 16, rtol: float = 1e-12) -> CheckReport:
    """Pointwise <theta, F(theta, x)> >= a|theta|^2 - b over the given thetas
    and ``n_x`` data draws each. A relative slack of ``rtol`` absorbs
    rounding when the two sides agree exactly in real arithmetic."""
    if not a > 0 or not b >= 0:
        raise ConfigError("need a > 0 and b >= 0", "a/b")
    worst = -math.inf
    ok = True
    for theta in points:
        t = np.atleast_1d(np.asarray(theta, dtype=float))
        x = oracle.draw_samples(rng, n_x)
        lhs = oracle.eval_F(t, x) @ t
        rhs = a * float(t @ t) - b
        gap = rhs - lhs
        slack = rtol * (abs(rhs) + np.abs(lhs) + b)
        ok &= bool(np.all(gap <= slack))
        worst = max(worst, float(np.max(gap)))
    return CheckReport("dissipativity", worst, 0.0, bool(ok))


def check_G_bound(oracle: GradientOracle, bound_fn, n_points: int, rng: np.random.Generator,
                  box=(-10.0, 10.0), n_x: int = 256) -> CheckReport:
    """|G(theta, x)| <= bound_fn(x) at random points."""
    worst = 0.0
    for _ in range(n_points):
        t = rng.uniform(*box, oracle.dim)
        x = oracle.draw_samples(rng, n_x)
        gn = np.sqrt(np.sum(oracle.eval_G(t, x) ** 2, axis=1))
        worst = max(worst, float(np.max(gn / bound_fn(x))))
    return CheckReport("G_bound", worst, 1.0, worst <= 1.0)
