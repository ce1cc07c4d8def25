"""Transfer-learning networks.

``TLFN`` is the two-hidden-layer network with frozen input and output
matrices (ReLU then sigmoid, clipped weights); its stochastic gradient is
coded by hand. ``ThreeLFN`` is the three-hidden-layer network used to
pretrain those frozen matrices, differentiated through the tape in
:mod:`sghmc.autodiff`.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, replace

import numpy as np

from . import rng as rngmod
from .autodiff import Tape, sigmoid
from .errors import ConfigError, DivergenceError
from .oracle import GradientOracle
from .sampler import KineticState, SamplerConfig, sghmc_step, sgld_step


def clip_f(v, c: float):
    return c * np.tanh(np.asarray(v, dtype=float) / c)


def clip_f_prime(v, c: float):
    t = np.tanh(np.asarray(v, dtype=float) / c)
    return 1.0 - t * t


def xavier_uniform(rng: np.random.Generator, fan_out: int, fan_in: int) -> np.ndarray:
    bound = math.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-bound, bound, size=(fan_out, fan_in))


# -- TLFN ----------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class TLFNParams:
    """Frozen W0 (d1 x m1) and W2 (m2 x d2); trainable W1 (d2 x d1), b0 (d1), b1 (d2)."""

    W0: np.ndarray
    W2: np.ndarray
    W1: np.ndarray
    b0: np.ndarray
    b1: np.ndarray
    c: float = 1.0

    def __post_init__(self):
        for name in ("W0", "W2", "W1", "b0", "b1"):
            object.__setattr__(self, name, np.array(getattr(self, name), dtype=np.float64))
        d1, m1 = self.W0.shape
        m2, d2 = self.W2.shape
        if self.W1.shape != (d2, d1) or self.b0.shape != (d1,) or self.b1.shape != (d2,):
            raise ValueError("inconsistent TLFN shapes")
        if not self.c > 0:
            raise ConfigError("clip constant must be positive", "c")
        if np.any(np.all(self.W0 == 0, axis=1)):
            raise ValueError("every row of W0 needs a nonzero entry")

    @property
    def sizes(self) -> tuple[int, int, int, int]:
        """(m1, d1, d2, m2)."""
        return self.W0.shape[1], self.W0.shape[0], self.W2.shape[1], self.W2.shape[0]

    @property
    def dim(self) -> int:
        _, d1, d2, _ = self.sizes
        return d1 * d2 + d1 + d2

    def flatten(self) -> np.ndarray:
        return np.concatenate([self.W1.ravel(), self.b0, self.b1])

    def with_theta(self, theta) -> "TLFNParams":
        _, d1, d2, _ = self.sizes
        t = np.asarray(theta, dtype=np.float64)
        if t.shape != (self.dim,):
            raise ValueError(f"theta must have shape ({self.dim},)")
        W1 = t[: d1 * d2].reshape(d2, d1)
        b0 = t[d1 * d2: d1 * d2 + d1]
        b1 = t[d1 * d2 + d1:]
        return replace(self, W1=W1, b0=b0, b1=b1)

    def __eq__(self, other):
        if not isinstance(other, TLFNParams):
            return NotImplemented
        return self.c == other.c and all(
            np.array_equal(getattr(self, n), getattr(other, n)) for n in ("W0", "W2", "W1", "b0", "b1"))

    def to_json(self) -> str:
        m1, d1, d2, m2 = self.sizes
        return json.dumps({"shape": {"m1": m1, "d1": d1, "d2": d2, "m2": m2}, "c": self.c,
                           "order": ["W1 (row-major)", "b0", "b1"],
                           "theta": [repr(float(x)) for x in self.flatten()],
                           "W0": self.W0.tolist(), "W2": self.W2.tolist()})


def _tlfn_parts(p: TLFNParams, z):
    z = np.atleast_2d(np.asarray(z, dtype=float))
    pre0 = z @ p.W0.T + clip_f(p.b0, p.c)
    a0 = np.where(pre0 > 0, pre0, 0.0)
    fW1 = clip_f(p.W1, p.c)
    s = sigmoid(a0 @ fW1.T + p.b1)
    return pre0, a0, fW1, s, s @ p.W2.T


def tlfn_forward(params: TLFNParams, z) -> np.ndarray:
    single = np.ndim(z) == 1
    out = _tlfn_parts(params, z)[-1]
    return out[0] if single else out


def tlfn_grad(params: TLFNParams, y, z, lambda_r: float) -> np.ndarray:
    """Per-sample H = 2 lambda_r theta + G for the squared-error loss.

    The ReLU indicator is strict (pre-activation > 0). Accepts a single
    (y, z) pair or batches ``(n, m2)``, ``(n, m1)``.
    """
    single = np.ndim(z) == 1
    y = np.atleast_2d(np.asarray(y, dtype=float))
    pre0, a0, fW1, s, out = _tlfn_parts(params, z)
    resid = y - out                                   # (n, m2)
    delta = -2.0 * (resid @ params.W2) * s * (1.0 - s)  # (n, d2)
    g_W1 = delta[:, :, None] * a0[:, None, :] * clip_f_prime(params.W1, params.c)[None]
    g_b0 = (delta @ fW1) * clip_f_prime(params.b0, params.c) * (pre0 > 0)
    G = np.concatenate([g_W1.reshape(len(delta), -1), g_b0, delta], axis=1)
    H = 2.0 * lambda_r * params.flatten() + G
    return H[0] if single else H


def tlfn_mse(params: TLFNParams, y, z) -> float:
    r = np.atleast_2d(y) - tlfn_forward(params, np.atleast_2d(z))
    return float(np.mean(np.sum(r * r, axis=1)))


def tlfn_G_bound_constants(params: TLFNParams) -> dict:
    """Constants C with |G_b1| <= C(1+|x|), |G_b0| <= C(1+|x|), |G_W1| <= C(1+|x|)^2."""
    m1, d1, d2, m2 = params.sizes
    cW2 = float(np.max(np.abs(params.W2)))
    cW0 = float(np.max(np.abs(params.W0)))
    c = params.c
    base = 2.0 * m2 * cW2 * (1.0 + d2 * cW2)
    return {"b1": base, "b0": d2 * c * base, "W1": base * (m1 * cW0 + c)}


def init_tlfn(W0, W2, rng: np.random.Generator, c: float = 1.0) -> TLFNParams:
    """W1 uniform-Xavier, biases zero."""
    d1 = np.shape(W0)[0]
    d2 = np.shape(W2)[1]
    return TLFNParams(W0=W0, W2=W2, W1=xavier_uniform(rng, d2, d1), b0=np.zeros(d1), b1=np.zeros(d2), c=c)


# -- datasets and oracles ----------------------------------------------------

def pretrain_target(z) -> np.ndarray:
    z = np.atleast_2d(z)
    return np.abs(2.0 * z[:, 0] + 2.0 * z[:, 1] - 1.5)[:, None] ** 3


def transfer_target(z) -> np.ndarray:
    z = np.atleast_2d(z)
    return -np.abs(1.2 * z[:, 0] + 0.9 * z[:, 1] - 0.8)[:, None] ** 2


@dataclass(frozen=True, eq=False)
class Dataset:
    """Rows x = (y, z); ``train``/``val`` split in order after a shuffle."""

    y_train: np.ndarray
    z_train: np.ndarray
    y_val: np.ndarray
    z_val: np.ndarray

    @classmethod
    def generate(cls, target, n: int, rng: np.random.Generator, m1: int = 2, train_frac: float = 0.8):
        z = rng.random((n, m1))
        y = target(z)
        n_tr = int(round(train_frac * n))
        return cls(y[:n_tr], z[:n_tr], y[n_tr:], z[n_tr:])


@dataclass(frozen=True, eq=False)
class TLFNOracle(GradientOracle):
    """Stochastic gradient of |y - N(theta, z)|^2 + lambda_r |theta|^2 with
    (y, z) drawn uniformly from a training set."""

    base: TLFNParams
    y: np.ndarray
    z: np.ndarray
    lambda_r: float

    @property
    def dim(self):
        return self.base.dim

    @property
    def data_dim(self):
        return self.y.shape[1] + self.z.shape[1]

    def draw_samples(self, rng, n):
        idx = rng.integers(0, self.y.shape[0], size=n)
        return np.concatenate([self.y[idx], self.z[idx]], axis=1)

    def _split(self, x):
        x = np.asarray(x, dtype=float)
        m2 = self.y.shape[1]
        return x[..., :m2], x[..., m2:]

    def eval_F(self, theta, x):
        t = np.asarray(theta, dtype=float)
        x = np.asarray(x, dtype=float)
        return 2.0 * self.lambda_r * t + (np.zeros((x.shape[0], t.size)) if x.ndim == 2 else 0.0)

    def eval_G(self, theta, x):
        y, z = self._split(x)
        return tlfn_grad(self.base.with_theta(theta), y, z, 0.0)

    def eval_H(self, theta, x):
        y, z = self._split(x)
        return tlfn_grad(self.base.with_theta(theta), y, z, self.lambda_r)

    def mean_H(self, theta, xs):
        return self.eval_H(theta, xs).mean(axis=0)

    def objective(self, theta):
        t = np.asarray(theta, dtype=float)
        return tlfn_mse(self.base.with_theta(t), self.y, self.z) + self.lambda_r * float(t @ t)


# -- ThreeLFN ------------------------------------------------------------------

@dataclass(frozen=True)
class ThreeLFNShape:
    m1: int = 2
    d1: int = 30
    d2: int = 30
    d3: int = 30
    m2: int = 1

    def blocks(self) -> list[tuple[str, tuple]]:
        """Flattening order: W0, W1, W2, W3, b0, b1, b2."""
        return [("W0", (self.d1, self.m1)), ("W1", (self.d2, self.d1)), ("W2", (self.d3, self.d2)),
                ("W3", (self.m2, self.d3)), ("b0", (self.d1,)), ("b1", (self.d2,)), ("b2", (self.d3,))]

    @property
    def dim(self) -> int:
        return self.d1 * (self.m1 + 1) + self.d2 * (self.d1 + 1) + self.d3 * (self.d2 + self.m2 + 1)

    def unflatten(self, theta) -> dict:
        out, pos = {}, 0
        for name, shape in self.blocks():
            n = int(np.prod(shape))
            out[name] = np.asarray(theta[pos:pos + n]).reshape(shape)
            pos += n
        return out

    def flatten(self, parts: dict) -> np.ndarray:
        return np.concatenate([np.ravel(parts[name]) for name, _ in self.blocks()])

    def init(self, rng: np.random.Generator) -> np.ndarray:
        parts = {}
        for name, shape in self.blocks():
            parts[name] = xavier_uniform(rng, *shape) if len(shape) == 2 else np.zeros(shape)
        return self.flatten(parts)


def threelfn_forward(shape: ThreeLFNShape, theta, z) -> np.ndarray:
    p = shape.unflatten(theta)
    h = np.maximum(np.atleast_2d(z) @ p["W0"].T + p["b0"], 0.0)
    h = np.tanh(h @ p["W1"].T + p["b1"])
    h = np.tanh(h @ p["W2"].T + p["b2"])
    return h @ p["W3"].T


def threelfn_loss_grad(shape: ThreeLFNShape, theta, y, z, lambda_r: float) -> tuple[float, np.ndarray]:
    """Batch-mean of |y - N(theta, z)|^2 + lambda_r |theta|^2 and its gradient."""
    tape = Tape()
    parts = shape.unflatten(theta)
    leaves = {name: tape.leaf(parts[name]) for name, _ in shape.blocks()}
    z_c = tape.const(np.atleast_2d(z))
    h = tape.relu(tape.add(tape.matvec(leaves["W0"], z_c), leaves["b0"]))
    h = tape.tanh(tape.add(tape.matvec(leaves["W1"], h), leaves["b1"]))
    h = tape.tanh(tape.add(tape.matvec(leaves["W2"], h), leaves["b2"]))
    out = tape.matvec(leaves["W3"], h)
    resid = tape.sub(np.atleast_2d(y), out)
    n = resid.shape[0]
    data = tape.scale(tape.sum(tape.square(resid)), 1.0 / n)
    reg = tape.scale(tape.sum(tape.square(tape.concat([tape.reshape(leaves[k], (-1,)) for k, _ in shape.blocks()]))), lambda_r)
    loss = tape.add(data, reg)
    grads = tape.grad(loss, [leaves[name] for name, _ in shape.blocks()])
    return float(loss.value), np.concatenate([g.ravel() for g in grads])


def _mse(pred, y) -> float:
    r = np.atleast_2d(y) - pred
    return float(np.mean(np.sum(r * r, axis=1)))


@dataclass
class TrainConfig:
    """Sampler-driven training of a network on a fixed dataset."""

    eta: float = 1e-2
    gamma: float = 0.5
    beta: float = 1e8
    lambda_r: float = 1e-6
    iters: int = 20000
    batch: int = 32
    eval_every: int = 1000
    algo: str = "sghmc"
    seed: int = 0


@dataclass
class TrainResult:
    theta: np.ndarray
    curve: list = field(default_factory=list)  # (iteration, train_mse, val_mse)

    @property
    def initial_val(self) -> float:
        return self.curve[0][2]

    @property
    def final_val(self) -> float:
        return self.curve[-1][2]


def _train_loop(grad_fn, eval_fn, theta0, n_train: int, cfg: TrainConfig, chain_id: int) -> TrainResult:
    scfg = SamplerConfig(cfg.eta, cfg.gamma, cfg.beta, cfg.iters, seed=cfg.seed, batch_size=cfg.batch)
    data_rng = rngmod.stream(cfg.seed, chain_id, rngmod.Purpose.DATA)
    noise_rng = rngmod.stream(cfg.seed, chain_id, rngmod.Purpose.NOISE)
    state = KineticState(theta0, np.zeros_like(theta0))
    curve = [(0, *eval_fn(state.theta))]
    for it in range(cfg.iters):
        idx = data_rng.integers(0, n_train, size=cfg.batch)
        g = grad_fn(state.theta, idx)
        xi = noise_rng.standard_normal(theta0.size)
        if cfg.algo == "sghmc":
            state = sghmc_step(state, g, scfg, xi, it)
        else:
            state = KineticState(sgld_step(state.theta, g, scfg, xi, it), state.v)
        if (it + 1) % cfg.eval_every == 0 or it + 1 == cfg.iters:
            tr, va = eval_fn(state.theta)
            if not (math.isfinite(tr) and math.isfinite(va)):
                raise DivergenceError(it, "loss")
            curve.append((it + 1, tr, va))
    return TrainResult(state.theta, curve)


def threelfn_train(data: Dataset, cfg: TrainConfig, shape: ThreeLFNShape | None = None):
    """Pretrain a ThreeLFN with the sampler; returns (W0, W3, TrainResult)."""
    shape = shape or ThreeLFNShape(m1=data.z_train.shape[1], m2=data.y_train.shape[1])
    theta0 = shape.init(rngmod.stream(cfg.seed, 0, rngmod.Purpose.INIT))

    def grad_fn(theta, idx):
        return threelfn_loss_grad(shape, theta, data.y_train[idx], data.z_train[idx], cfg.lambda_r)[1]

    def eval_fn(theta):
        return (_mse(threelfn_forward(shape, theta, data.z_train), data.y_train),
                _mse(threelfn_forward(shape, theta, data.z_val), data.y_val))

    res = _train_loop(grad_fn, eval_fn, theta0, data.y_train.shape[0], cfg, chain_id=0)
    parts = shape.unflatten(res.theta)
    return parts["W0"].copy(), parts["W3"].copy(), res


def tlfn_train(base: TLFNParams, data: Dataset, cfg: TrainConfig) -> tuple[TLFNParams, TrainResult]:
    """Train the trainable TLFN block starting from ``base``."""

    def grad_fn(theta, idx):
        return tlfn_grad(base.with_theta(theta), data.y_train[idx], data.z_train[idx], cfg.lambda_r).mean(axis=0)

    def eval_fn(theta):
        p = base.with_theta(theta)
        return tlfn_mse(p, data.y_train, data.z_train), tlfn_mse(p, data.y_val, data.z_val)

    res = _train_loop(grad_fn, eval_fn, base.flatten(), data.y_train.shape[0], cfg, chain_id=1)
    return base.with_theta(res.theta), res
