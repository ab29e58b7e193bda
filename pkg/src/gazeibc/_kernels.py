"""Compiled inner loops.

The fused Langevin chain kernel runs every MCMC iteration of every chain
inside one numba call, so the per-iteration interpreter overhead of the
numpy path disappears while the matrix products still go through BLAS.
Set ``GAZEIBC_NUMBA=0`` (or run without numba installed) to route callers
to the pure-numpy implementation in :mod:`gazeibc.policy`.  Both paths
consume the same pre-drawn random numbers, so they agree to floating-point
rounding.
"""

from __future__ import annotations

import os

import numpy as np

try:
    import numba
    HAS_NUMBA = True
except ImportError:  # pragma: no cover
    numba = None
    HAS_NUMBA = False

ACT_RELU = 0
ACT_TANH = 1


def use_numba() -> bool:
    if not HAS_NUMBA:
        return False
    return os.environ.get("GAZEIBC_NUMBA", "1").strip().lower() not in ("0", "false", "no", "off")


def _langevin_mlp_chains(first_pre, act_rows, rest_w, rest_b, out_scale, act_code,
                         u0, fresh, etas, noise, noise_scale, grad_clip, noiseless_last):
    """Refine unit-box actions ``u0`` (n, 2); returns ``(u, restarts)``.

    ``first_pre[c]`` is chain ``c``'s observation-dependent first-layer
    pre-activation and ``act_rows`` (2, H1) maps unit-box actions into that
    layer, so ``z1 = first_pre[c] + u @ act_rows``.  ``rest_w``/``rest_b``
    hold the remaining dense layers; the last one is the scalar energy head.
    All chains advance together so every layer is a single matrix product.
    """
    n = u0.shape[0]
    n_steps = etas.shape[0]
    n_rest = len(rest_w)
    u = u0.copy()
    restarts = 0
    act_t = np.ascontiguousarray(act_rows.T)
    head = np.ascontiguousarray(rest_w[n_rest - 1][:, 0]) * out_scale
    h1 = first_pre.shape[1]
    # buffers reused across iterations: pre-activations, activations, deltas
    pres = [np.empty((n, h1))]
    posts = [np.empty((n, h1))]
    deltas = [np.empty((n, h1))]
    for li in range(n_rest - 1):
        width = rest_w[li].shape[1]
        pres.append(np.empty((n, width)))
        posts.append(np.empty((n, width)))
        deltas.append(np.empty((n, width)))
    g = np.empty((n, 2))
    for k in range(n_steps):
        z = pres[0]
        for c in range(n):
            ua = u[c, 0]
            ub = u[c, 1]
            for j in range(h1):
                z[c, j] = first_pre[c, j] + ua * act_rows[0, j] + ub * act_rows[1, j]
        _act(z, posts[0], act_code)
        for li in range(n_rest - 1):
            np.dot(posts[li], rest_w[li], pres[li + 1])
            _add_row(pres[li + 1], rest_b[li])
            _act(pres[li + 1], posts[li + 1], act_code)
        delta = deltas[n_rest - 1]
        for c in range(n):
            delta[c] = head
        for li in range(n_rest - 1, -1, -1):
            _mul_act_grad(deltas[li], pres[li], posts[li], act_code)
            if li > 0:
                np.dot(deltas[li], rest_w[li - 1].T, deltas[li - 1])
        np.dot(deltas[0], act_t, g)
        eta = etas[k]
        sigma = noise_scale * np.sqrt(eta)
        if noiseless_last and k == n_steps - 1:
            sigma = 0.0
        for c in range(n):
            g_a = g[c, 0]
            g_b = g[c, 1]
            if not (np.isfinite(g_a) and np.isfinite(g_b)):
                u[c, 0] = fresh[c, 0]
                u[c, 1] = fresh[c, 1]
                restarts += 1
                continue
            g_a = min(max(g_a, -grad_clip), grad_clip)
            g_b = min(max(g_b, -grad_clip), grad_clip)
            u[c, 0] = min(max(u[c, 0] - eta * g_a + sigma * noise[k, c, 0], -1.0), 1.0)
            u[c, 1] = min(max(u[c, 1] - eta * g_b + sigma * noise[k, c, 1], -1.0), 1.0)
    return u, restarts


def _act(z, out, act_code):
    n, m = z.shape
    for i in range(n):
        for j in range(m):
            v = z[i, j]
            if act_code == ACT_RELU:
                out[i, j] = v if v > 0.0 else 0.0
            else:
                out[i, j] = np.tanh(v)


def _add_row(z, b):
    n, m = z.shape
    for i in range(n):
        for j in range(m):
            z[i, j] += b[j]


def _mul_act_grad(delta, z, h, act_code):
    n, m = z.shape
    for i in range(n):
        for j in range(m):
            if act_code == ACT_RELU:
                if z[i, j] <= 0.0:
                    delta[i, j] = 0.0
            else:
                delta[i, j] *= 1.0 - h[i, j] * h[i, j]


if HAS_NUMBA:
    _jit = numba.njit(cache=True, nogil=True, error_model="numpy")
    _act = _jit(_act)
    _add_row = _jit(_add_row)
    _mul_act_grad = _jit(_mul_act_grad)
    langevin_mlp_chains = _jit(_langevin_mlp_chains)
else:  # pragma: no cover
    langevin_mlp_chains = _langevin_mlp_chains
