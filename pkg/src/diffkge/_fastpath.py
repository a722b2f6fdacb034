"""Fused kernels for the reverse-chain hot loop.

Numba-compiled when available (IEEE semantics, single-threaded, so results
are deterministic); plain numpy otherwise. Both paths compute the same
formulas; only the rounding order differs, so a given environment always
reproduces its own bytes.
"""

from __future__ import annotations

import numpy as np

from .nn import LN_EPS

try:
    from numba import njit

    HAVE_NUMBA = True
except ImportError:  # pragma: no cover - numba is a declared dependency
    HAVE_NUMBA = False

    def njit(*args, **kwargs):
        def wrap(fn):
            return fn

        if args and callable(args[0]):
            return args[0]
        return wrap


@njit(cache=True, fastmath=True)
def _silu_neg_jit(neg_hid, tb):
    h = neg_hid.reshape(-1)
    t = tb.reshape(-1)
    for i in range(h.size):
        t[i] = -h[i] / (1.0 + t[i])


@njit(cache=True, fastmath=True)
def _ln_update_jit(y, x, z, b2, g, b, c1, c2, sig, eps):
    m_n, r_n, d = y.shape
    for m in range(m_n):
        for r in range(r_n):
            mu = 0.0
            for j in range(d):
                v = y[m, r, j] + b2[m, j]
                y[m, r, j] = v
                mu += v
            mu /= d
            var = 0.0
            for j in range(d):
                dv = y[m, r, j] - mu
                var += dv * dv
            inv = 1.0 / np.sqrt(var / d + eps)
            for j in range(d):
                e = g[m, j] * ((y[m, r, j] - mu) * inv) + b[m, j]
                x[m, r, j] = c1 * x[m, r, j] - c2 * e + sig * z[m, r, j]


@njit(cache=True, fastmath=True)
def _ln_final_jit(y, x, b2, g, b, c1, c2, eps):
    m_n, r_n, d = y.shape
    for m in range(m_n):
        for r in range(r_n):
            mu = 0.0
            for j in range(d):
                v = y[m, r, j] + b2[m, j]
                y[m, r, j] = v
                mu += v
            mu /= d
            var = 0.0
            for j in range(d):
                dv = y[m, r, j] - mu
                var += dv * dv
            inv = 1.0 / np.sqrt(var / d + eps)
            for j in range(d):
                e = g[m, j] * ((y[m, r, j] - mu) * inv) + b[m, j]
                x[m, r, j] = c1 * x[m, r, j] - c2 * e


def silu_from_neg(neg_hid: np.ndarray, tb: np.ndarray) -> None:
    """tb := silu(-neg_hid) = -neg_hid / (1 + exp(neg_hid)). The caller hands
    in the negated pre-activations (cheap to produce by negating the affine
    weights). Overflow in exp maps to the exact limit silu(-large) = 0."""
    with np.errstate(over="ignore"):
        np.exp(neg_hid, out=tb)
    if HAVE_NUMBA:
        _silu_neg_jit(neg_hid, tb)
    else:
        tb += 1.0
        np.divide(neg_hid, tb, out=tb)
        np.negative(tb, out=tb)


def layernorm_state_update(y, x, z, b2, g, b, c1, c2, sig) -> None:
    """In place: eps_hat = g * normalize(y + b2) + b per row, then
    x := c1 * x - c2 * eps_hat (+ sig * z when z is given)."""
    if HAVE_NUMBA:
        if z is None:
            _ln_final_jit(y, x, b2, g, b, float(c1), float(c2), LN_EPS)
        else:
            _ln_update_jit(y, x, z, b2, g, b, float(c1), float(c2),
                           float(sig), LN_EPS)
        return
    y += b2[:, None, :]
    mu = np.einsum("mri->mr", y)
    mu /= y.shape[-1]
    y -= mu[..., None]
    var = np.einsum("mri,mri->mr", y, y)
    var /= y.shape[-1]
    var += LN_EPS
    np.sqrt(var, out=var)
    y /= var[..., None]
    y *= g[:, None, :]
    y += b[:, None, :]
    x *= c1
    y *= c2
    x -= y
    if z is not None:
        x += sig * z
