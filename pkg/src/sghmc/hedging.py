"""Discrete-time hedging of a basket call under an asymmetric quadratic loss.

Excess returns follow a multidimensional lognormal (Black-Scholes-Merton)
model. Each rebalancing date has its own small ReLU network mapping the
state (wealth, prices) to investment fractions, and all networks are trained
jointly by SGHMC or SGLD on the batch-mean loss.
"""
from __future__ import annotations

import math
import time
from dataclasses import asdict, dataclass, field

import numpy as np

from . import rng as rngmod
from .autodiff import Tape
from .errors import ConfigError, DivergenceError
from .sampler import KineticState, SamplerConfig, sghmc_step, sgld_step

ACTION_SET_NOTE = ("actions are tanh outputs in (-1, 1)^p used directly as investment fractions; "
                   "the scenario table lists [0, 1]^p")


@dataclass(frozen=True, eq=False)
class MarketConfig:
    p: int
    m: int
    r_tilde: float
    Sigma: np.ndarray
    lambda_tilde: np.ndarray
    Delta: float
    K: int
    strike: float
    gamma_pen: float
    W0_wealth: float = 1.0
    S0: np.ndarray | None = None

    def __post_init__(self):
        Sigma = np.array(self.Sigma, dtype=float)
        lam = np.array(self.lambda_tilde, dtype=float).reshape(-1)
        S0 = np.ones(self.p) if self.S0 is None else np.array(self.S0, dtype=float).reshape(-1)
        object.__setattr__(self, "Sigma", Sigma)
        object.__setattr__(self, "lambda_tilde", lam)
        object.__setattr__(self, "S0", S0)
        if self.p < 1:
            raise ConfigError("must be >= 1", "p")
        if self.m < self.p:
            raise ConfigError("need m >= p", "m")
        if Sigma.shape != (self.p, self.m):
            raise ConfigError(f"expected shape ({self.p}, {self.m}), got {Sigma.shape}", "Sigma")
        if lam.shape != (self.m,):
            raise ConfigError(f"expected length {self.m}", "lambda_tilde")
        if S0.shape != (self.p,) or np.any(S0 <= 0):
            raise ConfigError(f"expected {self.p} positive prices", "S0")
        if not self.Delta > 0:
            raise ConfigError("must be positive", "Delta")
        if self.K < 1:
            raise ConfigError("must be >= 1", "K")
        if not 0 <= self.gamma_pen < 1:
            raise ConfigError("must lie in [0, 1)", "gamma_pen")
        if not self.r_tilde >= 0:
            raise ConfigError("must be nonnegative", "r_tilde")

    @property
    def R_f(self) -> float:
        return math.exp(self.r_tilde * self.Delta)

    @property
    def log_drift(self) -> np.ndarray:
        """Mean log gross return per period."""
        return (self.r_tilde + self.Sigma @ self.lambda_tilde
                - 0.5 * np.sum(self.Sigma**2, axis=1)) * self.Delta

    def to_dict(self) -> dict:
        d = asdict(self)
        for k in ("Sigma", "lambda_tilde", "S0"):
            d[k] = np.asarray(d[k]).tolist()
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "MarketConfig":
        return cls(**d)


def _sigma(p: int, m: int, diag: float, off: float) -> np.ndarray:
    S = np.full((p, m), off)
    S[np.arange(p), np.arange(p)] = diag
    return S


def scenario(name: str, K: int = 20) -> MarketConfig:
    """Preset markets. Entries of lambda_tilde the table leaves unspecified are 0."""
    common = dict(r_tilde=0.03, Delta=1 / 40, K=K, gamma_pen=0.5, W0_wealth=1.0)
    if name == "table-col1":
        lam = [0.1, 0.1, 0.2, 0.2, 0.2]
        return MarketConfig(p=5, m=5, Sigma=_sigma(5, 5, 0.15, 0.01), lambda_tilde=lam, strike=5.0, **common)
    if name == "table-col2":
        lam = [0.01] * 25 + [0.05] * 25
        return MarketConfig(p=50, m=50, Sigma=_sigma(50, 50, 0.15, 0.001), lambda_tilde=lam, strike=50.0, **common)
    if name == "table-col3":
        lam = [0.01, 0.01, 0.05, 0.05, 0.05] + [0.0] * 5
        return MarketConfig(p=5, m=10, Sigma=_sigma(5, 10, 0.15, 0.01), lambda_tilde=lam, strike=5.0, **common)
    if name == "table-col4":
        lam = [0.01] * 25 + [0.05] * 25 + [0.0] * 10
        return MarketConfig(p=50, m=60, Sigma=_sigma(50, 60, 0.15, 0.001), lambda_tilde=lam, strike=60.0, **common)
    raise ConfigError(f"unknown scenario {name!r}", "scenario")


SCENARIOS = ("table-col1", "table-col2", "table-col3", "table-col4")


def sample_returns(cfg: MarketConfig, rng: np.random.Generator, n: int | None = None) -> np.ndarray:
    """Excess returns, shape (K, p), or (n, K, p) when ``n`` is given."""
    shape = (cfg.K, cfg.m) if n is None else (n, cfg.K, cfg.m)
    eps = rng.standard_normal(shape)
    log_gross = cfg.log_drift + math.sqrt(cfg.Delta) * (eps @ cfg.Sigma.T)
    return np.exp(log_gross) - cfg.R_f


def asym_loss(y, gamma: float):
    y = np.asarray(y, dtype=float)
    return (1.0 - gamma * np.sign(y)) ** 2 * y * y / 2.0


# -- policies --------------------------------------------------------------------

@dataclass(frozen=True)
class PolicyLayout:
    """Parameter layout for K per-date networks of width ``nu``.

    Flat order: date k ascending, then W1, W2, W3, b1, b2, b3 (row-major).
    """

    p: int
    nu: int
    K: int

    def blocks(self):
        p, nu = self.p, self.nu
        return [("W1", (nu, 1 + p)), ("W2", (nu, nu)), ("W3", (p, nu)),
                ("b1", (nu,)), ("b2", (nu,)), ("b3", (p,))]

    @property
    def per_date(self) -> int:
        p, nu = self.p, self.nu
        return nu * (1 + p + nu + p + 2) + p

    @property
    def dim(self) -> int:
        return self.K * self.per_date

    def unflatten(self, theta) -> list[dict]:
        theta = np.asarray(theta, dtype=float)
        if theta.shape != (self.dim,):
            raise ValueError(f"theta must have shape ({self.dim},)")
        out, pos = [], 0
        for _ in range(self.K):
            blk = {}
            for name, shape in self.blocks():
                n = int(np.prod(shape))
                blk[name] = theta[pos:pos + n].reshape(shape)
                pos += n
            out.append(blk)
        return out

    def flatten(self, policies: list[dict]) -> np.ndarray:
        return np.concatenate([np.ravel(pk[name]) for pk in policies for name, _ in self.blocks()])

    def init(self, rng: np.random.Generator) -> np.ndarray:
        pols = []
        for _ in range(self.K):
            blk = {}
            for name, shape in self.blocks():
                if len(shape) == 2:
                    bound = math.sqrt(6.0 / (shape[0] + shape[1]))
                    blk[name] = rng.uniform(-bound, bound, size=shape)
                else:
                    blk[name] = np.zeros(shape)
            pols.append(blk)
        return self.flatten(pols)


def policy_eval(params_k: dict, wealth, prices) -> np.ndarray:
    """tanh(W3 relu(W2 relu(W1 x + b1) + b2) + b3) with x = (wealth, prices)."""
    wealth = np.asarray(wealth, dtype=float)
    prices = np.asarray(prices, dtype=float)
    x = np.concatenate([wealth[..., None], prices], axis=-1)
    y = np.maximum(x @ params_k["W1"].T + params_k["b1"], 0.0)
    z = np.maximum(y @ params_k["W2"].T + params_k["b2"], 0.0)
    return np.tanh(z @ params_k["W3"].T + params_k["b3"])


def _check_prices(returns: np.ndarray):
    if np.any(1.0 + returns <= 0):
        raise DivergenceError(-1, "prices", "a gross return was nonpositive")


def rollout(cfg: MarketConfig, policies: list[dict], returns):
    """Terminal wealth, claim and loss; ``returns`` is (K, p) or (n, K, p)."""
    R = np.asarray(returns, dtype=float)
    single = R.ndim == 2
    R = R[None] if single else R
    _check_prices(R)
    n = R.shape[0]
    W = np.full(n, cfg.W0_wealth)
    S = np.broadcast_to(cfg.S0, (n, cfg.p)).copy()
    for k in range(cfg.K):
        g = policy_eval(policies[k], W, S)
        W = W * (np.sum(g * R[:, k], axis=1) + cfg.R_f)
        S = S * (1.0 + R[:, k])
    if not np.all(np.isfinite(W)):
        raise DivergenceError(-1, "wealth")
    h = np.maximum(S.sum(axis=1) - cfg.strike, 0.0)
    loss = asym_loss(W - h, cfg.gamma_pen)
    if single:
        return float(W[0]), float(h[0]), float(loss[0])
    return W, h, loss


def batch_loss_grad(cfg: MarketConfig, layout: PolicyLayout, theta, returns) -> tuple[float, np.ndarray]:
    """Mean asymmetric loss over a batch of episodes and its gradient.

    The Sign factor is held constant in the backward pass.
    """
    R = np.asarray(returns, dtype=float)
    _check_prices(R)
    n = R.shape[0]
    tape = Tape()
    pols = layout.unflatten(theta)
    leaves = [{name: tape.leaf(pk[name]) for name, _ in layout.blocks()} for pk in pols]
    W = tape.const(np.full(n, cfg.W0_wealth))
    S = np.broadcast_to(cfg.S0, (n, cfg.p)).copy()
    for k in range(cfg.K):
        lk = leaves[k]
        x = tape.concat([tape.reshape(W, (n, 1)), S])
        y = tape.relu(tape.add(tape.matvec(lk["W1"], x), lk["b1"]))
        z = tape.relu(tape.add(tape.matvec(lk["W2"], y), lk["b2"]))
        g = tape.tanh(tape.add(tape.matvec(lk["W3"], z), lk["b3"]))
        W = tape.mul(W, tape.add(tape.inner(g, R[:, k]), cfg.R_f))
        S = S * (1.0 + R[:, k])
    h = np.maximum(S.sum(axis=1) - cfg.strike, 0.0)
    resid = tape.sub(W, h)
    weight = (1.0 - cfg.gamma_pen * np.sign(resid.value)) ** 2 / 2.0
    loss = tape.mean(tape.mul(weight, tape.square(resid)))
    if not math.isfinite(float(loss.value)):
        raise DivergenceError(-1, "loss")
    grads = tape.grad(loss, [lk[name] for lk in leaves for name, _ in layout.blocks()])
    return float(loss.value), np.concatenate([gr.ravel() for gr in grads])


def policy_score(cfg: MarketConfig, layout: PolicyLayout, theta, returns) -> float:
    return float(np.mean(rollout(cfg, layout.unflatten(theta), returns)[2]))


# -- training ----------------------------------------------------------------------

@dataclass
class HedgeTrainConfig:
    optimizer: str = "sghmc"
    eta: float = 0.1
    gamma: float = 0.5
    beta: float = 1e12
    steps: int = 50
    batch: int = 128
    samples_per_step: int = 20000
    nu: int = 5
    n_test: int = 10000
    seed: int = 0

    def __post_init__(self):
        if self.optimizer not in ("sghmc", "sgld"):
            raise ConfigError(f"unknown optimizer {self.optimizer!r}", "optimizer")
        for name in ("batch", "samples_per_step", "nu", "n_test"):
            if getattr(self, name) < 1:
                raise ConfigError("must be >= 1", name)
        if self.steps < 0:
            raise ConfigError("must be >= 0", "steps")

    @property
    def iters_per_step(self) -> int:
        return -(-self.samples_per_step // self.batch)


@dataclass
class HedgeResult:
    theta: np.ndarray
    initial_theta: np.ndarray
    curve: list = field(default_factory=list)  # (step, train_loss, test_score)
    initial_train_loss: float = math.nan
    initial_test_score: float = math.nan
    wall_time: float = 0.0

    @property
    def final_train_loss(self) -> float:
        return self.curve[-1][1] if self.curve else self.initial_train_loss

    @property
    def final_test_score(self) -> float:
        return self.curve[-1][2] if self.curve else self.initial_test_score


def train(cfg: MarketConfig, tcfg: HedgeTrainConfig, chain_id: int = 0) -> HedgeResult:
    """Each step draws fresh episodes and sweeps them in mini-batches.

    ``train_loss`` per step is the mean of the mini-batch losses seen during
    that step; ``test_score`` is the mean loss of the policy at the end of
    the step on a fixed held-out set.
    """
    t0 = time.perf_counter()
    layout = PolicyLayout(cfg.p, tcfg.nu, cfg.K)
    seed = tcfg.seed
    theta0 = layout.init(rngmod.stream(seed, chain_id, rngmod.Purpose.INIT))
    data_rng = rngmod.stream(seed, chain_id, rngmod.Purpose.DATA)
    noise_rng = rngmod.stream(seed, chain_id, rngmod.Purpose.NOISE)
    test_R = sample_returns(cfg, rngmod.stream(seed, chain_id, rngmod.Purpose.AUX), tcfg.n_test)
    scfg = SamplerConfig(tcfg.eta, tcfg.gamma, tcfg.beta, max(1, tcfg.steps * tcfg.iters_per_step), seed=seed,
                         batch_size=tcfg.batch)
    state = KineticState(theta0, np.zeros_like(theta0))
    res = HedgeResult(theta=theta0, initial_theta=theta0.copy(),
                      initial_test_score=policy_score(cfg, layout, theta0, test_R))
    it = 0
    for step in range(tcfg.steps):
        R = sample_returns(cfg, data_rng, tcfg.samples_per_step)
        if step == 0:
            res.initial_train_loss = policy_score(cfg, layout, theta0, R)
        total = 0.0
        for b in range(tcfg.iters_per_step):
            chunk = R[b * tcfg.batch:(b + 1) * tcfg.batch]
            loss, g = batch_loss_grad(cfg, layout, state.theta, chunk)
            total += loss * chunk.shape[0]
            xi = noise_rng.standard_normal(layout.dim)
            if tcfg.optimizer == "sghmc":
                state = sghmc_step(state, g, scfg, xi, it)
            else:
                state = KineticState(sgld_step(state.theta, g, scfg, xi, it), state.v)
            it += 1
        res.curve.append((step + 1, total / tcfg.samples_per_step, policy_score(cfg, layout, state.theta, test_R)))
    if tcfg.steps == 0:
        R = sample_returns(cfg, data_rng, tcfg.samples_per_step)
        res.initial_train_loss = policy_score(cfg, layout, theta0, R)
    res.theta = state.theta
    res.wall_time = time.perf_counter() - t0
    return res
