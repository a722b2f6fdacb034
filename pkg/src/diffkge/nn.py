"""Dense 64-bit vector math: a two-layer perceptron with output layer
normalization, hand-derived reverse-mode gradients, the Adam optimizer, and a
central finite-difference gradient checker.

Every function is a pure function of (inputs, parameters, explicit Generator
state); nothing touches the global numpy RNG. All arrays are float64.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field

import numpy as np

Array = np.ndarray

# Layer-norm variance epsilon. Hand-computed expected values in the test
# suite depend on this exact constant.
LN_EPS = 1e-5

# The perceptron nonlinearity is fixed: SiLU (x * sigmoid(x)).
ACTIVATION = "silu"


def make_rng(seed: int, *labels) -> np.random.Generator:
    """Deterministic PCG64 generator keyed by (seed, labels).

    Identical key material yields an identical stream on every platform
    (numpy guarantees PCG64 stream stability). Distinct labels derive
    statistically independent substreams of one run seed, so consuming one
    substream never perturbs another.
    """
    entropy = [int(seed) & (2**64 - 1)]
    for lab in labels:
        digest = hashlib.sha256(repr(lab).encode("utf-8")).digest()
        entropy.append(int.from_bytes(digest[:8], "little"))
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(entropy)))


def sigmoid(x: Array) -> Array:
    # tanh form: no overflow for large |x|, and numpy's tanh is SIMD-vectorized
    return 0.5 * (1.0 + np.tanh(0.5 * x))


def silu(x: Array) -> Array:
    return x * sigmoid(x)


def silu_grad(x: Array) -> Array:
    s = sigmoid(x)
    return s * (1.0 + x * (1.0 - s))


def layer_norm(y: Array, gain: Array, shift: Array, eps: float = LN_EPS) -> Array:
    """Normalize the last axis to zero mean / unit variance (population
    variance plus eps), then scale by gain and add shift."""
    mu = y.mean(axis=-1, keepdims=True)
    yc = y - mu
    var = np.mean(yc * yc, axis=-1, keepdims=True)
    return gain * (yc / np.sqrt(var + eps)) + shift


@dataclass
class MlpParams:
    """input -> hidden -> output affine stack with SiLU between the layers and
    layer normalization (per-coordinate gain/shift) applied to the output."""

    w1: Array  # (hidden, in)
    b1: Array  # (hidden,)
    w2: Array  # (out, hidden)
    b2: Array  # (out,)
    ln_g: Array  # (out,)
    ln_b: Array  # (out,)

    @property
    def in_dim(self) -> int:
        return self.w1.shape[1]

    @property
    def hidden_dim(self) -> int:
        return self.w1.shape[0]

    @property
    def out_dim(self) -> int:
        return self.w2.shape[0]

    def tensors(self) -> dict[str, Array]:
        return {"w1": self.w1, "b1": self.b1, "w2": self.w2, "b2": self.b2,
                "ln_g": self.ln_g, "ln_b": self.ln_b}


def mlp_init(in_dim: int, hidden_dim: int, out_dim: int,
             rng: np.random.Generator) -> MlpParams:
    """Uniform fan-based weight init, zero biases, unit layer-norm gain."""
    if min(in_dim, hidden_dim, out_dim) < 1:
        raise ValueError(f"mlp dims must be positive, got "
                         f"({in_dim}, {hidden_dim}, {out_dim})")
    lim1 = np.sqrt(6.0 / (in_dim + hidden_dim))
    lim2 = np.sqrt(6.0 / (hidden_dim + out_dim))
    return MlpParams(
        w1=rng.uniform(-lim1, lim1, size=(hidden_dim, in_dim)),
        b1=np.zeros(hidden_dim),
        w2=rng.uniform(-lim2, lim2, size=(out_dim, hidden_dim)),
        b2=np.zeros(out_dim),
        ln_g=np.ones(out_dim),
        ln_b=np.zeros(out_dim),
    )


def _check_last_dim(what: str, x: Array, expected: int) -> None:
    if x.shape[-1] != expected:
        raise ValueError(f"{what}: dimension mismatch, expected {expected}, "
                         f"got {x.shape[-1]}")


def _forward_cached(p: MlpParams, x: Array):
    """Forward pass keeping the intermediates needed for the reverse sweep.
    Accepts any leading batch axes: x has shape (..., in)."""
    h = x @ p.w1.T + p.b1
    s = sigmoid(h)
    a = h * s
    y = a @ p.w2.T + p.b2
    mu = y.mean(axis=-1, keepdims=True)
    yc = y - mu
    var = np.mean(yc * yc, axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + LN_EPS)
    z = yc * inv
    out = p.ln_g * z + p.ln_b
    return out, (x, h, s, z, inv)


def _backward_cached(p: MlpParams, cache, dout: Array):
    """Reverse sweep. Returns (parameter grads dict, input grad). Gradients
    are summed over all leading batch axes."""
    x, h, s, z, inv = cache
    a = h * s
    dz = dout * p.ln_g
    # layer-norm backward (population variance):
    #   dy = inv * (dz - mean(dz) - z * mean(dz * z))
    m1 = dz.mean(axis=-1, keepdims=True)
    m2 = np.mean(dz * z, axis=-1, keepdims=True)
    dy = inv * (dz - m1 - z * m2)
    da = dy @ p.w2
    dh = da * (s * (1.0 + h * (1.0 - s)))
    dx = dh @ p.w1
    # parameter grads: flatten leading axes so the reductions are plain gemms
    lead = int(np.prod(dout.shape[:-1], dtype=int))
    do2 = dout.reshape(lead, -1)
    z2 = z.reshape(lead, -1)
    dy2 = dy.reshape(lead, -1)
    a2 = a.reshape(lead, -1)
    dh2 = dh.reshape(lead, -1)
    x2 = x.reshape(lead, -1)
    grads = {"w1": dh2.T @ x2, "b1": dh2.sum(axis=0),
             "w2": dy2.T @ a2, "b2": dy2.sum(axis=0),
             "ln_g": np.sum(do2 * z2, axis=0), "ln_b": do2.sum(axis=0)}
    return grads, dx


def mlp_forward(p: MlpParams, x: Array) -> Array:
    """LayerNorm(MLP(x)). x: (..., in) -> (..., out). Deterministic."""
    x = np.asarray(x, dtype=float)
    _check_last_dim("mlp_forward input", x, p.in_dim)
    out, _ = _forward_cached(p, x)
    return out


def mlp_backward(p: MlpParams, x: Array, out_grad: Array):
    """Gradients of a scalar loss w.r.t. all parameters and the input, given
    the loss gradient at the output. Returns (param_grads, input_grad)."""
    x = np.asarray(x, dtype=float)
    out_grad = np.asarray(out_grad, dtype=float)
    _check_last_dim("mlp_backward input", x, p.in_dim)
    _check_last_dim("mlp_backward out_grad", out_grad, p.out_dim)
    _, cache = _forward_cached(p, x)
    return _backward_cached(p, cache, out_grad)


@dataclass
class AdamState:
    """Bias-corrected Adam over a named parameter dict."""

    lr: float
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    count: int = 0
    m: dict[str, Array] = field(default_factory=dict)
    v: dict[str, Array] = field(default_factory=dict)

    def tensors(self) -> dict[str, Array]:
        out = {}
        for k, arr in self.m.items():
            out[f"m.{k}"] = arr
        for k, arr in self.v.items():
            out[f"v.{k}"] = arr
        return out


def adam_init(params: dict[str, Array], lr: float, beta1: float = 0.9,
              beta2: float = 0.999, eps: float = 1e-8) -> AdamState:
    state = AdamState(lr=lr, beta1=beta1, beta2=beta2, eps=eps)
    for k, pv in params.items():
        state.m[k] = np.zeros_like(pv)
        state.v[k] = np.zeros_like(pv)
    return state


def adam_step(state: AdamState, params: dict[str, Array],
              grads: dict[str, Array]):
    """One Adam update, in place on the parameter arrays. Returns
    (params, state) for convenience."""
    if set(grads) != set(params):
        raise ValueError(f"adam_step: key mismatch, params={sorted(params)} "
                         f"grads={sorted(grads)}")
    state.count += 1
    t = state.count
    bc1 = 1.0 - state.beta1 ** t
    bc2 = 1.0 - state.beta2 ** t
    for k, pv in params.items():
        g = np.asarray(grads[k], dtype=float)
        if g.shape != pv.shape:
            raise ValueError(f"adam_step: shape mismatch for '{k}', "
                             f"expected {pv.shape}, got {g.shape}")
        m = state.m[k]
        v = state.v[k]
        m *= state.beta1
        m += (1.0 - state.beta1) * g
        v *= state.beta2
        v += (1.0 - state.beta2) * (g * g)
        pv -= state.lr * (m / bc1) / (np.sqrt(v / bc2) + state.eps)
    return params, state


def finite_diff_grad(f, x: Array, h: float = 1e-5) -> Array:
    """Central finite-difference gradient of scalar f at x. Perturbs x in
    place and restores it, so f must read x fresh on every call."""
    x = np.asarray(x, dtype=float)
    g = np.zeros_like(x)
    flat = x.reshape(-1)
    gflat = g.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + h
        fp = f(x)
        flat[i] = orig - h
        fm = f(x)
        flat[i] = orig
        gflat[i] = (fp - fm) / (2.0 * h)
    return g


def rel_error(a: Array, b: Array) -> float:
    """Norm-based relative error between two gradient arrays."""
    a = np.asarray(a, dtype=float).ravel()
    b = np.asarray(b, dtype=float).ravel()
    denom = max(np.linalg.norm(a), np.linalg.norm(b), 1e-12)
    return float(np.linalg.norm(a - b) / denom)
