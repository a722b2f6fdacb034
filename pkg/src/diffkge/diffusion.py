"""Noise schedule, sinusoidal time embedding, closed-form forward noising,
the conditional denoisers, reverse sampling, and the denoising training loss.

Schedule convention: alpha_t is the per-step noise variance, beta_t = 1 -
alpha_t the signal retention, and beta_bar_t the running product of beta.
The closed-form noising is x_t = sqrt(beta_bar_t) x0 + sqrt(1-beta_bar_t) eps.

The reverse mean defaults to the form that makes one-step reconstruction
exact: x_{t-1} = (x_t - ((1-beta_t)/sqrt(1-beta_bar_t)) eps_hat)/sqrt(beta_t).
An alternate variant with beta_t as the eps_hat numerator, and an alternate
noise scale alpha_t (instead of sqrt(alpha_t)), sit behind flags.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ._fastpath import layernorm_state_update, silu_from_neg
from .models import MODALITIES
from .nn import (Array, MlpParams, _backward_cached, _forward_cached,
                 mlp_forward, mlp_init)

ALPHA_START = 1e-4
ALPHA_END = 0.02


@dataclass
class NoiseSchedule:
    """Per-step variance constants, index 1..T (slot 0 holds the t=0
    identities: alpha 0, beta 1, beta_bar 1)."""

    total: int
    alpha: Array     # (T+1,)
    beta: Array      # (T+1,), beta = 1 - alpha
    beta_bar: Array  # (T+1,), cumulative product of beta

    def check_t(self, t: int, low: int = 1) -> int:
        t = int(t)
        if not low <= t <= self.total:
            raise ValueError(f"time step {t} out of range [{low}, {self.total}]")
        return t


def make_schedule(total: int, kind: str = "linear") -> NoiseSchedule:
    """Linear variance schedule: alpha rises from 1e-4 to 0.02 over t=1..T."""
    if kind != "linear":
        raise ValueError(f"unknown schedule kind '{kind}'")
    total = int(total)
    if total < 2:
        raise ValueError(f"schedule needs T >= 2, got {total}")
    alpha = np.zeros(total + 1)
    alpha[1:] = np.linspace(ALPHA_START, ALPHA_END, total)
    beta = 1.0 - alpha
    beta_bar = np.cumprod(beta)
    return NoiseSchedule(total=total, alpha=alpha, beta=beta, beta_bar=beta_bar)


def positional_embedding(t: int, d_pe: int) -> Array:
    """Sinusoidal time embedding: entry 2i is sin(t / 1000^(2i/d_pe)) and
    entry 2i+1 the matching cosine."""
    if d_pe % 2 != 0 or d_pe < 2:
        raise ValueError(f"d_pe must be even and positive, got {d_pe}")
    i = np.arange(d_pe // 2)
    angle = t / np.power(1000.0, 2.0 * i / d_pe)
    out = np.empty(d_pe)
    out[0::2] = np.sin(angle)
    out[1::2] = np.cos(angle)
    return out


def pe_table(total: int, d_pe: int) -> Array:
    """(T+1, d_pe) table of positional embeddings for t = 0..T."""
    return np.stack([positional_embedding(t, d_pe) for t in range(total + 1)])


def forward_noise(s: NoiseSchedule, x0: Array, t: int, eps: Array) -> Array:
    """Closed-form noising: sqrt(beta_bar_t) x0 + sqrt(1-beta_bar_t) eps."""
    t = s.check_t(t)
    x0 = np.asarray(x0, dtype=float)
    eps = np.asarray(eps, dtype=float)
    if x0.shape[-1] != eps.shape[-1]:
        raise ValueError(f"forward_noise: x0 dim {x0.shape[-1]} != eps dim "
                         f"{eps.shape[-1]}")
    bb = s.beta_bar[t]
    return np.sqrt(bb) * x0 + np.sqrt(1.0 - bb) * eps


@dataclass
class DenoiserParams:
    """Three independent noise predictors (structural, visual, textual),
    each LayerNorm(MLP(x_t, PE(t), condition)) with a shared time-embedding
    width. MLP input width is dim + pe_dim + dim; output width is dim."""

    dim: int
    pe_dim: int
    struc: MlpParams
    vis: MlpParams
    text: MlpParams

    def mlp(self, modality: str) -> MlpParams:
        if modality not in MODALITIES:
            raise ValueError(f"unknown modality '{modality}'")
        return getattr(self, modality)

    def tensors(self) -> dict[str, Array]:
        out = {}
        for m in MODALITIES:
            for name, arr in self.mlp(m).tensors().items():
                out[f"{m}.{name}"] = arr
        return out


def init_denoiser(dim: int, rng: np.random.Generator,
                  hidden: int | None = None,
                  pe_dim: int | None = None) -> DenoiserParams:
    """Hidden width defaults to 2*dim, time-embedding width to dim
    (rounded up to even, since the embedding comes in sin/cos pairs)."""
    pe_dim = dim + dim % 2 if pe_dim is None else pe_dim
    hidden = 2 * dim if hidden is None else hidden
    in_dim = dim + pe_dim + dim
    mlps = {m: mlp_init(in_dim, hidden, dim, rng) for m in MODALITIES}
    return DenoiserParams(dim=dim, pe_dim=pe_dim, **mlps)


def predict_noise(p: DenoiserParams, modality: str, x_t: Array, t: int,
                  c: Array) -> Array:
    """eps_hat = LayerNorm(MLP(concat(x_t, PE(t), c))) with the modality's MLP."""
    x_t = np.asarray(x_t, dtype=float)
    c = np.asarray(c, dtype=float)
    for name, v in (("x_t", x_t), ("condition", c)):
        if v.shape[-1] != p.dim:
            raise ValueError(f"predict_noise {name}: dimension mismatch, "
                             f"expected {p.dim}, got {v.shape[-1]}")
    pe = positional_embedding(int(t), p.pe_dim)
    pe = np.broadcast_to(pe, x_t.shape[:-1] + (p.pe_dim,))
    inp = np.concatenate([x_t, pe, c], axis=-1)
    return mlp_forward(p.mlp(modality), inp)


def _mean_coeffs(s: NoiseSchedule, t: int, reverse_scale_beta: bool):
    c1 = 1.0 / np.sqrt(s.beta[t])
    num = s.beta[t] if reverse_scale_beta else 1.0 - s.beta[t]
    c2 = num / (np.sqrt(s.beta[t]) * np.sqrt(1.0 - s.beta_bar[t]))
    return c1, c2


def reverse_step(s: NoiseSchedule, x_t: Array, t: int, eps_hat: Array,
                 z: Array, *, reverse_scale_beta: bool = False,
                 noise_scale_alpha: bool = False) -> Array:
    """One reverse step x_t -> x_{t-1} for 2 <= t <= T. z is a standard
    normal draw (zeros give the deterministic mean)."""
    t = s.check_t(t, low=2)
    x_t = np.asarray(x_t, dtype=float)
    eps_hat = np.asarray(eps_hat, dtype=float)
    z = np.asarray(z, dtype=float)
    c1, c2 = _mean_coeffs(s, t, reverse_scale_beta)
    sig = s.alpha[t] if noise_scale_alpha else np.sqrt(s.alpha[t])
    return c1 * x_t - c2 * eps_hat + sig * z


def reverse_final(s: NoiseSchedule, x_1: Array, eps_hat: Array, *,
                  reverse_scale_beta: bool = False) -> Array:
    """Final denoise x_1 -> x0_hat, no added noise."""
    x_1 = np.asarray(x_1, dtype=float)
    eps_hat = np.asarray(eps_hat, dtype=float)
    c1, c2 = _mean_coeffs(s, 1, reverse_scale_beta)
    return c1 * x_1 - c2 * eps_hat


# ---------------------------------------------------------------------------
# denoising loss


@dataclass
class DiffusionBatch:
    """One training batch for the denoisers. Modality axis follows
    MODALITIES order; eps is shared across the three modalities of an item."""

    x0: Array    # (3, n, d) clean embeddings per modality
    cond: Array  # (3, n, d) condition per modality
    t: Array     # (n,) int time steps in [1, T]
    eps: Array   # (n, d) the noise that was added


def _denoiser_inputs(p: DenoiserParams, s: NoiseSchedule, batch: DiffusionBatch):
    t = np.asarray(batch.t, dtype=np.int64)
    if t.size == 0:
        raise ValueError("diffusion_loss: empty batch")
    if t.min() < 1 or t.max() > s.total:
        raise ValueError(f"diffusion_loss: time steps out of range [1, {s.total}]")
    bb = s.beta_bar[t][:, None]
    x_t = np.sqrt(bb) * batch.x0 + np.sqrt(1.0 - bb) * batch.eps
    pe = pe_table(s.total, p.pe_dim)[t]
    n = t.shape[0]
    pe3 = np.broadcast_to(pe, (3, n, p.pe_dim))
    return np.concatenate([x_t, pe3, batch.cond], axis=-1)


def diffusion_loss(p: DenoiserParams, s: NoiseSchedule,
                   batch: DiffusionBatch) -> float:
    """Sum over the three modalities of ||eps_hat - eps||^2, averaged over
    the batch items."""
    inp = _denoiser_inputs(p, s, batch)
    n = batch.t.shape[0]
    total = 0.0
    for mi, m in enumerate(MODALITIES):
        eps_hat = mlp_forward(p.mlp(m), inp[mi])
        diff = eps_hat - batch.eps
        total += float(np.sum(diff * diff)) / n
    return total


def diffusion_loss_grads(p: DenoiserParams, s: NoiseSchedule,
                         batch: DiffusionBatch):
    """(loss, grads) where grads is keyed like DenoiserParams.tensors()."""
    inp = _denoiser_inputs(p, s, batch)
    n = batch.t.shape[0]
    total = 0.0
    grads: dict[str, Array] = {}
    for mi, m in enumerate(MODALITIES):
        mlp = p.mlp(m)
        out, cache = _forward_cached(mlp, inp[mi])
        diff = out - batch.eps
        total += float(np.sum(diff * diff)) / n
        g, _ = _backward_cached(mlp, cache, (2.0 / n) * diff)
        for name, arr in g.items():
            grads[f"{m}.{name}"] = arr
    return total, grads


# ---------------------------------------------------------------------------
# reverse sampling


def chain_noise_shape(total: int, steps, n: int, dim: int) -> tuple[int, ...]:
    """Shape of the per-step noise block a reverse_chain call consumes."""
    lowest = min(int(t) for t in np.atleast_1d(np.asarray(steps, dtype=int)))
    return (total - lowest, 3, n, dim)


def reverse_chain(p: DenoiserParams, s: NoiseSchedule, cond: Array,
                  steps, rng: np.random.Generator, *,
                  noise: Array | None = None,
                  reverse_scale_beta: bool = False,
                  noise_scale_alpha: bool = False) -> dict[int, Array]:
    """Run conditioned reverse chains from x_T ~ N(0, I) down to the smallest
    requested step, harvesting the state at every step in `steps`.

    cond: (3, n, d), one condition row per chain per modality. Returns
    {t: (3, n, d)} states. All chains in the call share the denoiser
    parameters; rows are independent.

    The initial x_T always comes from rng. Per-step noise is drawn from rng
    too unless a pre-drawn block of chain_noise_shape() is supplied (the
    trainer streams those blocks from a producer process).

    The per-step work is organized so the first affine layer only multiplies
    the state block plus one constant column carrying the time-embedding
    projection; the condition contribution is precomputed once.
    """
    steps = sorted({int(t) for t in np.atleast_1d(np.asarray(steps, dtype=int))})
    if not steps:
        raise ValueError("reverse_chain: empty step set")
    if steps[0] < 1 or steps[-1] > s.total:
        raise ValueError(f"reverse_chain: steps {steps} out of range "
                         f"[1, {s.total}]")
    cond = np.asarray(cond, dtype=float)
    d, pe_dim = p.dim, p.pe_dim
    if cond.ndim != 3 or cond.shape[0] != 3 or cond.shape[2] != d:
        raise ValueError(f"reverse_chain: cond must be (3, n, {d}), "
                         f"got {cond.shape}")
    n = cond.shape[1]
    lowest = steps[0]
    n_noise = s.total - lowest
    if noise is not None and noise.shape != (n_noise, 3, n, d):
        raise ValueError(f"reverse_chain: noise block must have shape "
                         f"{(n_noise, 3, n, d)}, got {noise.shape}")

    mlps = [p.mlp(m) for m in MODALITIES]
    hidden = mlps[0].hidden_dim
    w1 = np.stack([m.w1 for m in mlps])            # (3, H, in)
    w1p = w1[:, :, d:d + pe_dim]
    b1 = np.stack([m.b1 for m in mlps])
    w2_t = np.ascontiguousarray(np.stack([m.w2 for m in mlps]).transpose(0, 2, 1))
    b2 = np.stack([m.b2 for m in mlps])
    ln_g = np.stack([m.ln_g for m in mlps])
    ln_b = np.stack([m.ln_b for m in mlps])

    pe = pe_table(s.total, pe_dim)                       # (T+1, pe)
    # the first layer is evaluated negated so exp() applies directly to it
    pe_proj = -(np.einsum("tp,mhp->mth", pe, w1p) + b1[:, None, :])
    base = np.matmul(cond, -w1[:, :, d + pe_dim:].transpose(0, 2, 1))

    # state columns plus a constant-one column carrying -(pe_proj[t] + b1)
    waug = np.empty((3, d + 1, hidden))
    waug[:, :d] = -w1[:, :, :d].transpose(0, 2, 1)
    xaug = np.empty((3, n, d + 1))
    xaug[..., d] = 1.0
    hid = np.empty((3, n, hidden))
    tb = np.empty((3, n, hidden))
    y = np.empty((3, n, d))

    step_set = set(steps)
    out: dict[int, Array] = {}
    x = rng.standard_normal((3, n, d))
    for i, t in enumerate(range(s.total, lowest, -1)):
        if t in step_set:
            out[t] = x.copy()
        xaug[..., :d] = x
        waug[:, d] = pe_proj[:, t]
        np.matmul(xaug, waug, out=hid)
        hid += base
        silu_from_neg(hid, tb)
        np.matmul(tb, w2_t, out=y)
        c1, c2 = _mean_coeffs(s, t, reverse_scale_beta)
        if t >= 2:
            sig = s.alpha[t] if noise_scale_alpha else np.sqrt(s.alpha[t])
            z = noise[i] if noise is not None else rng.standard_normal((3, n, d))
            layernorm_state_update(y, x, z, b2, ln_g, ln_b, c1, c2, sig)
        else:
            layernorm_state_update(y, x, None, b2, ln_g, ln_b, c1, c2, 0.0)
    out[lowest] = x.copy() if lowest not in out else out[lowest]
    return out
