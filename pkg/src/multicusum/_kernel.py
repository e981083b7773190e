"""Fused simulate-and-detect kernel for Monte Carlo replications.

Consumes the same random blocks as :func:`multicusum.sde.simulate_paths`, so a
streamed replication reproduces the path-bundle detector bit for bit in the
statistic. Instead of a single threshold it tracks an ascending list of levels
and records the first step at which ``max_i (ysup_i - offset_i)`` reaches each
one; a single run therefore yields stopping times for every threshold on the
grid with common random numbers.
"""
from __future__ import annotations

import math

import numpy as np
from numba import njit

from .sde import KIND_AUTOREGRESSIVE, KIND_CONSTANT, KIND_ROTATIONAL, KIND_ROTATIONAL_STATE


@njit(cache=True, nogil=True)
def _model_drift(kind, param, z, out):
    n = z.shape[0]
    if kind == KIND_CONSTANT:
        for i in range(n):
            out[i] = param
    elif kind == KIND_AUTOREGRESSIVE:
        total = 0.0
        for i in range(n):
            total += z[i]
        for i in range(n):
            out[i] = -param * total
    elif kind == KIND_ROTATIONAL:
        out[0] = 1.0
        out[1] = -1.0
    elif kind == KIND_ROTATIONAL_STATE:
        a0 = z[1]
        a1 = -z[0]
        out[0] = a0
        out[1] = a1


@njit(cache=True, nogil=True)
def advance(kind, param, dt, kchange, offsets, levels, bridge,
            z, u, m, e_model, e_applied, state,
            normals, uniforms, step_limit,
            out_step, out_trigger, out_e_model, out_e_applied):
    """Advance one replication through one random block.

    ``state`` is ``int64[2]``: global step index and index of the next unreached
    level. Returns True when every level has been reached.
    """
    n = z.shape[0]
    n_levels = levels.shape[0]
    sqdt = math.sqrt(dt)
    alpha = np.empty(n)
    k = state[0]
    j = state[1]
    for b in range(normals.shape[0]):
        if k >= step_limit:
            break
        _model_drift(kind, param, z, alpha)
        best = -np.inf
        arg = 0
        for i in range(n):
            a = alpha[i]
            applied = a if k >= kchange[i] else 0.0
            dz = applied * dt + sqdt * normals[b, i]
            z[i] += dz
            u_old = u[i]
            u_new = u_old + (a * dz - 0.5 * a * a * dt)
            if bridge:
                d2 = (u_new - u_old) * (u_new - u_old)
                var = a * a * dt
                mx = 0.5 * (u_old + u_new + math.sqrt(d2 - 2.0 * var * math.log1p(-uniforms[b, i, 0])))
                mn = 0.5 * (u_old + u_new - math.sqrt(d2 - 2.0 * var * math.log1p(-uniforms[b, i, 1])))
                m_new = min(m[i], mn)
                sup = max(mx - m[i], u_new - m_new)
            else:
                m_new = min(m[i], u_new)
                sup = u_new - m_new
            u[i] = u_new
            m[i] = m_new
            e_model[i] += a * a * dt
            e_applied[i] += applied * applied * dt
            score = sup - offsets[i]
            if score > best:
                best = score
                arg = i
        while j < n_levels and best >= levels[j]:
            out_step[j] = k
            out_trigger[j] = arg
            em = 0.0
            for i in range(n):
                em += e_model[i]
                out_e_applied[j, i] = 0.5 * e_applied[i]
            out_e_model[j] = 0.5 * em / n
            j += 1
        k += 1
        if j >= n_levels:
            break
    state[0] = k
    state[1] = j
    return j >= n_levels


def warmup():
    """Compile the kernel once (tiny call)."""
    n = 1
    z = np.zeros(n)
    st = np.zeros(2, dtype=np.int64)
    advance(0, 1.0, 0.1, np.zeros(n, dtype=np.int64), np.zeros(n), np.array([0.5]), True,
            z, np.zeros(n), np.zeros(n), np.zeros(n), np.zeros(n), st,
            np.zeros((2, n)), np.full((2, n, 2), 0.5), 2,
            np.full(1, -1, dtype=np.int64), np.full(1, -1, dtype=np.int64), np.zeros(1), np.zeros((1, n)))
