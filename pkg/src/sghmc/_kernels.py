"""Compiled inner loops.

The chain driver in ``sampler`` hands whole blocks of pre-drawn data and
noise to :func:`advance`, which performs the same floating-point operations
in the same order as the pure-Python path, so both produce identical bits.
"""
from __future__ import annotations

import math

import numpy as np
from numba import njit

SGHMC = 0
SGLD = 1

OK = 0
BAD_GRAD = 1
BAD_NOISE = 2
BAD_STATE = 3
HIT = 4


@njit(cache=True)
def quantile_grad_kernel(theta, xs, params, out):
    lam = params[0]
    q = params[1]
    acc = 0.0
    for b in range(xs.shape[0]):
        ind = 1.0 if xs[b, 0] < theta[0] else 0.0
        acc += 2.0 * lam * theta[0] + (-q + ind)
    out[0] = acc / xs.shape[0]


@njit(cache=True)
def quadratic_grad_kernel(theta, xs, params, out):
    a = params[0]
    sd = params[1]
    d = theta.shape[0]
    for j in range(d):
        out[j] = 0.0
    for b in range(xs.shape[0]):
        for j in range(d):
            out[j] += a * theta[j] + sd * xs[b, j]
    for j in range(d):
        out[j] = out[j] / xs.shape[0]


@njit
def advance(grad_fn, params, algo, theta, v, xs, noise, batch,
            eta, gamma, beta, n0, burn_in, stride,
            rec_theta, rec_v, rec_pos, hit_lo, hit_hi, use_hit, stop_on_hit, status):
    """Run ``noise.shape[0]`` steps in place.

    ``status`` receives (code, iteration index, steps done, first hit). The
    recording rule matches the Python driver: state after step n is kept when
    n >= burn_in and (n - burn_in) % stride == 0.
    """
    d = theta.shape[0]
    g = np.empty(d)
    v_old = np.empty(d)
    nsteps = noise.shape[0]
    s_hmc = math.sqrt(2.0 * gamma * eta / beta)
    s_ld = math.sqrt(2.0 * eta / beta)
    for i in range(nsteps):
        it = n0 + i
        grad_fn(theta, xs[i * batch:(i + 1) * batch], params, g)
        for j in range(d):
            if not math.isfinite(g[j]):
                status[0] = BAD_GRAD
                status[1] = it
                status[2] = i
                return
            if not math.isfinite(noise[i, j]):
                status[0] = BAD_NOISE
                status[1] = it
                status[2] = i
                return
        if algo == SGHMC:
            for j in range(d):
                v_old[j] = v[j]
                v[j] = v[j] - eta * (gamma * v[j] + g[j]) + s_hmc * noise[i, j]
            for j in range(d):
                theta[j] = theta[j] + eta * v_old[j]
        else:
            for j in range(d):
                theta[j] = theta[j] - eta * g[j] + s_ld * noise[i, j]
        for j in range(d):
            if not (math.isfinite(theta[j]) and math.isfinite(v[j])):
                status[0] = BAD_STATE
                status[1] = it
                status[2] = i
                return
        n = it + 1
        if n >= burn_in and (n - burn_in) % stride == 0:
            k = rec_pos[0]
            for j in range(d):
                rec_theta[k, j] = theta[j]
                rec_v[k, j] = v[j]
            rec_pos[0] = k + 1
        if use_hit and status[3] < 0:
            inside = True
            for j in range(d):
                if not (hit_lo[j] < theta[j] < hit_hi[j]):
                    inside = False
            if inside:
                status[3] = n
                if stop_on_hit:
                    status[0] = HIT
                    status[2] = i + 1
                    return
    status[0] = OK
    status[2] = nsteps
