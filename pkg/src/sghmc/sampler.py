"""SGHMC and SGLD recursions and the seeded chain driver."""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Literal, Sequence

import numpy as np

from . import _kernels, rng as rngmod
from .errors import ConfigError, DivergenceError

Algo = Literal["sghmc", "sgld"]
REFERENCE_ETA = 1e-5
_BLOCK_ELEMS = 1 << 18


def _vec(a, name: str) -> np.ndarray:
    out = np.array(a, dtype=np.float64, copy=True).reshape(-1)
    if out.size < 1:
        raise ValueError(f"{name} must have dimension >= 1")
    return out


@dataclass(frozen=True)
class KineticState:
    """Position ``theta`` and momentum ``v`` of a chain."""

    theta: np.ndarray
    v: np.ndarray

    def __post_init__(self):
        t = _vec(self.theta, "theta")
        v = _vec(self.v, "v")
        if t.shape != v.shape:
            raise ValueError("theta and v must have the same dimension")
        object.__setattr__(self, "theta", t)
        object.__setattr__(self, "v", v)

    @property
    def dim(self) -> int:
        return self.theta.shape[0]

    def __eq__(self, other):
        if not isinstance(other, KineticState):
            return NotImplemented
        return np.array_equal(self.theta, other.theta) and np.array_equal(self.v, other.v)


@dataclass(frozen=True)
class SamplerConfig:
    eta: float
    gamma: float
    beta: float
    n_iters: int
    seed: int = 0
    burn_in: int = 0
    batch_size: int = 1

    def __post_init__(self):
        for name in ("eta", "gamma", "beta"):
            val = getattr(self, name)
            if not (math.isfinite(val) and val > 0):
                raise ConfigError("must be a finite positive number", name)
        if self.n_iters < 0:
            raise ConfigError("must be nonnegative", "n_iters")
        if self.burn_in < 0 or self.burn_in > self.n_iters:
            raise ConfigError("must satisfy 0 <= burn_in <= n_iters", "burn_in")
        if not 0 <= self.seed < 2**64:
            raise ConfigError("must be a 64-bit unsigned integer", "seed")
        if self.batch_size < 1:
            raise ConfigError("must be >= 1", "batch_size")


@dataclass
class Trajectory:
    """Thinned record of a chain.

    ``theta[i]``/``v[i]`` is the state after ``iterations[i]`` steps.
    ``first_hit`` is the first step count at which theta entered the
    monitored box (``None`` if never or if no box was given).
    """

    theta: np.ndarray
    v: np.ndarray
    iterations: np.ndarray
    final_state: KineticState
    step_count: int
    first_hit: int | None = None
    metadata: dict = field(default_factory=dict)

    @property
    def states(self) -> list[KineticState]:
        return [KineticState(t, v) for t, v in zip(self.theta, self.v)]

    def __len__(self) -> int:
        return self.theta.shape[0]


def _check_finite(arr: np.ndarray, iteration: int, where: str):
    if not np.all(np.isfinite(arr)):
        raise DivergenceError(iteration, where)


def sghmc_step(state: KineticState, grad, cfg: SamplerConfig, noise, iteration: int = 0) -> KineticState:
    """One SGHMC step. The position moves with the momentum held *before*
    this step's momentum update."""
    g = np.asarray(grad, dtype=np.float64)
    xi = np.asarray(noise, dtype=np.float64)
    _check_finite(g, iteration, "gradient")
    _check_finite(xi, iteration, "noise")
    s = math.sqrt(2.0 * cfg.gamma * cfg.eta / cfg.beta)
    v_new = state.v - cfg.eta * (cfg.gamma * state.v + g) + s * xi
    theta_new = state.theta + cfg.eta * state.v
    if not (np.all(np.isfinite(v_new)) and np.all(np.isfinite(theta_new))):
        raise DivergenceError(iteration, "state")
    return KineticState(theta_new, v_new)


def sgld_step(theta, grad, cfg: SamplerConfig, noise, iteration: int = 0) -> np.ndarray:
    g = np.asarray(grad, dtype=np.float64)
    xi = np.asarray(noise, dtype=np.float64)
    _check_finite(g, iteration, "gradient")
    _check_finite(xi, iteration, "noise")
    s = math.sqrt(2.0 * cfg.eta / cfg.beta)
    out = np.asarray(theta, dtype=np.float64) - cfg.eta * g + s * xi
    if not np.all(np.isfinite(out)):
        raise DivergenceError(iteration, "state")
    return out


def n_records(n_iters: int, burn_in: int, stride: int) -> int:
    return (n_iters - burn_in) // stride + 1 if n_iters >= burn_in else 0


def _raise_from_status(code: int, iteration: int):
    where = {_kernels.BAD_GRAD: "gradient", _kernels.BAD_NOISE: "noise",
             _kernels.BAD_STATE: "state"}[code]
    raise DivergenceError(iteration, where)


def run_chain(oracle, cfg: SamplerConfig, init: KineticState, algo: Algo = "sghmc",
              stride: int = 1, chain_id: int = 0, hit_box: tuple | None = None,
              stop_on_hit: bool = False, compiled: bool | None = None) -> Trajectory:
    """Advance one chain ``cfg.n_iters`` steps.

    Each step draws ``cfg.batch_size`` fresh data points from the chain's data
    stream and ``d`` standard normals from its noise stream. Both streams are
    consumed in blocks; block boundaries do not affect the values.

    ``hit_box=(lo, hi)`` records the first step count with lo < theta < hi
    (componentwise); with ``stop_on_hit`` the chain stops there. ``compiled``
    forces (True) or forbids (False) the compiled loop; by default it is used
    whenever the oracle provides a kernel.
    """
    if algo not in ("sghmc", "sgld"):
        raise ConfigError(f"unknown algorithm {algo!r}", "algo")
    if stride < 1:
        raise ConfigError("must be >= 1", "stride")
    d = oracle.dim
    if init.dim != d:
        raise ValueError(f"init dimension {init.dim} does not match oracle dimension {d}")
    kernel = getattr(oracle, "grad_kernel", None)
    use_kernel = kernel is not None if compiled is None else compiled
    if use_kernel and kernel is None:
        raise ValueError("oracle has no compiled gradient kernel")

    theta = init.theta.copy()
    v = init.v.copy()
    batch = cfg.batch_size
    n_total = cfg.n_iters
    k = n_records(n_total, cfg.burn_in, stride)
    rec_theta = np.empty((k, d))
    rec_v = np.empty((k, d))
    pos = 0
    if cfg.burn_in == 0:
        rec_theta[0], rec_v[0] = theta, v
        pos = 1
    if hit_box is not None:
        lo = np.broadcast_to(np.asarray(hit_box[0], dtype=float), (d,)).copy()
        hi = np.broadcast_to(np.asarray(hit_box[1], dtype=float), (d,)).copy()
    else:
        lo = hi = np.zeros(d)
    first_hit = -1
    if hit_box is not None and np.all((lo < theta) & (theta < hi)):
        first_hit = 0

    data_rng = rngmod.stream(cfg.seed, chain_id, rngmod.Purpose.DATA)
    noise_rng = rngmod.stream(cfg.seed, chain_id, rngmod.Purpose.NOISE)
    block = max(1, _BLOCK_ELEMS // max(1, batch * oracle.data_dim + d))
    done = 0
    stopped = first_hit == 0 and stop_on_hit
    algo_code = _kernels.SGHMC if algo == "sghmc" else _kernels.SGLD

    while done < n_total and not stopped:
        nb = min(block, n_total - done)
        xs = np.ascontiguousarray(oracle.draw_samples(data_rng, nb * batch), dtype=np.float64)
        noise = noise_rng.standard_normal((nb, d))
        if use_kernel:
            status = np.array([0, 0, 0, first_hit], dtype=np.int64)
            rec_pos = np.array([pos], dtype=np.int64)
            _kernels.advance(kernel, oracle.kernel_params, algo_code, theta, v, xs, noise, batch,
                             cfg.eta, cfg.gamma, cfg.beta, done, cfg.burn_in, stride,
                             rec_theta, rec_v, rec_pos, lo, hi, hit_box is not None,
                             stop_on_hit, status)
            pos = int(rec_pos[0])
            first_hit = int(status[3])
            if status[0] in (_kernels.BAD_GRAD, _kernels.BAD_NOISE, _kernels.BAD_STATE):
                _raise_from_status(int(status[0]), int(status[1]))
            done += int(status[2])
            stopped = status[0] == _kernels.HIT
            continue
        state = KineticState(theta, v)
        for i in range(nb):
            it = done + i
            g = oracle.mean_H(state.theta, xs[i * batch:(i + 1) * batch])
            if algo == "sghmc":
                state = sghmc_step(state, g, cfg, noise[i], it)
            else:
                state = KineticState(sgld_step(state.theta, g, cfg, noise[i], it), state.v)
            n = it + 1
            if n >= cfg.burn_in and (n - cfg.burn_in) % stride == 0:
                rec_theta[pos], rec_v[pos] = state.theta, state.v
                pos += 1
            if hit_box is not None and first_hit < 0 and np.all((lo < state.theta) & (state.theta < hi)):
                first_hit = n
                if stop_on_hit:
                    done = n
                    stopped = True
                    break
        theta, v = state.theta.copy(), state.v.copy()
        if not stopped:
            done += nb

    iterations = cfg.burn_in + stride * np.arange(pos, dtype=np.int64)
    return Trajectory(
        theta=rec_theta[:pos], v=rec_v[:pos], iterations=iterations,
        final_state=KineticState(theta, v), step_count=done,
        first_hit=None if first_hit < 0 else first_hit,
        metadata={"algo": algo, "seed": cfg.seed, "chain_id": chain_id, "eta": cfg.eta,
                  "gamma": cfg.gamma, "beta": cfg.beta, "batch_size": batch, "stride": stride,
                  "bit_generator": rngmod.BIT_GENERATOR, "gaussian_method": rngmod.GAUSSIAN_METHOD,
                  "compiled": bool(use_kernel)},
    )


def run_reference_chain(oracle, cfg: SamplerConfig, init: KineticState, ref_eta: float = REFERENCE_ETA,
                        n_iters: int | None = None, stride: int = 1, chain_id: int = 0,
                        burn_in: int | None = None) -> Trajectory:
    """SGHMC at a tiny step used as a stand-in for exact Gibbs samples.

    By default the horizon keeps the same continuous time ``n_iters * eta``
    as ``cfg``.
    """
    if n_iters is None:
        n_iters = int(round(cfg.n_iters * cfg.eta / ref_eta))
    if burn_in is None:
        burn_in = int(round(cfg.burn_in * cfg.eta / ref_eta))
    ref_cfg = replace(cfg, eta=ref_eta, n_iters=n_iters, burn_in=min(burn_in, n_iters))
    return run_chain(oracle, ref_cfg, init, "sghmc", stride=stride, chain_id=chain_id)


def gaussian_init(seed: int, chain_id: int, d: int, theta_sd: float = 1.0, v_sd: float = 1.0,
                  theta_mean=0.0) -> KineticState:
    """theta ~ N(mean, sd^2), v ~ N(0, sd^2), from the chain's init stream."""
    r = rngmod.stream(seed, chain_id, rngmod.Purpose.INIT)
    z = r.standard_normal(2 * d)
    return KineticState(theta_mean + theta_sd * z[:d], v_sd * z[d:])


def endpoints(trajectories: Sequence[Trajectory]) -> np.ndarray:
    return np.array([t.final_state.theta for t in trajectories])
