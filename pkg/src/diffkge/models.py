"""Per-modality embedding spaces, the three KGE energy functions, and the
matching condition operators.

Energy convention: lower is more plausible for every kind. The bilinear
triple product natively scores higher-is-better, so it is negated here to
keep one convention.

Rotation embeddings interleave real/imaginary parts: even indices are real,
odd indices imaginary, so a dim-d vector holds d/2 complex coordinates.
Rotation relations are stored as phase vectors of length d/2 and materialized
to unit-modulus complex numbers on demand.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .data import Mmkg
from .nn import Array

KINDS = ("translation", "bilinear", "rotation")
MODALITIES = ("struc", "vis", "text")


def _check_kind(kind: str) -> None:
    if kind not in KINDS:
        raise ValueError(f"unknown model kind '{kind}', expected one of {KINDS}")


def _check_same_dim(op: str, *vecs: Array) -> None:
    dims = {v.shape[-1] for v in vecs}
    if len(dims) != 1:
        raise ValueError(f"{op}: dimension mismatch, got dims "
                         f"{[v.shape[-1] for v in vecs]}")


def materialize_phases(phases: Array) -> Array:
    """Phase vector (..., d/2) -> interleaved unit-modulus vector (..., d)."""
    phases = np.asarray(phases, dtype=float)
    out = np.empty(phases.shape[:-1] + (2 * phases.shape[-1],))
    out[..., 0::2] = np.cos(phases)
    out[..., 1::2] = np.sin(phases)
    return out


def complex_hadamard(a: Array, b: Array) -> Array:
    """Coordinate-wise complex product of interleaved vectors."""
    ar, ai = a[..., 0::2], a[..., 1::2]
    br, bi = b[..., 0::2], b[..., 1::2]
    out = np.empty(np.broadcast_shapes(a.shape, b.shape))
    out[..., 0::2] = ar * br - ai * bi
    out[..., 1::2] = ar * bi + ai * br
    return out


def conj_interleaved(x: Array) -> Array:
    out = np.array(x, dtype=float, copy=True)
    out[..., 1::2] = -out[..., 1::2]
    return out


@dataclass
class EmbeddingSpace:
    """Trainable structural tables plus learnable projections of frozen
    visual/textual features. One relation table is shared across modalities."""

    kind: str
    dim: int
    ent: Array        # (n_ent, d)
    rel: Array        # (n_rel, d), or (n_rel, d/2) phases for rotation
    vis_w: Array      # (d, d_vis)
    vis_b: Array      # (d,)
    txt_w: Array      # (d, d_txt)
    txt_b: Array      # (d,)
    absent_vis: Array  # (d,) used in place of missing visual rows
    absent_txt: Array
    vis_feat: Array    # frozen (n_ent, d_vis)
    txt_feat: Array
    vis_missing: Array  # (n_ent,) bool
    txt_missing: Array

    @property
    def n_ent(self) -> int:
        return self.ent.shape[0]

    @property
    def n_rel(self) -> int:
        return self.rel.shape[0]

    def tensors(self) -> dict[str, Array]:
        """Trainable tensors only (frozen features and masks excluded)."""
        return {"ent": self.ent, "rel": self.rel,
                "vis_w": self.vis_w, "vis_b": self.vis_b,
                "txt_w": self.txt_w, "txt_b": self.txt_b,
                "absent_vis": self.absent_vis, "absent_txt": self.absent_txt}


def init_space(kg: Mmkg, kind: str, dim: int,
               rng: np.random.Generator) -> EmbeddingSpace:
    """Uniform init in [-6/sqrt(d), 6/sqrt(d)]; rotation phases in [-pi, pi].
    Draw order is fixed: ent, rel, vis_w, txt_w, absent_vis, absent_txt."""
    _check_kind(kind)
    if kind == "rotation" and dim % 2 != 0:
        raise ValueError(f"rotation kind needs an even dim, got {dim}")
    lim = 6.0 / np.sqrt(dim)
    ent = rng.uniform(-lim, lim, size=(kg.n_ent, dim))
    if kind == "rotation":
        rel = rng.uniform(-np.pi, np.pi, size=(kg.n_rel, dim // 2))
    else:
        rel = rng.uniform(-lim, lim, size=(kg.n_rel, dim))
    lim_v = np.sqrt(6.0 / (dim + kg.d_vis))
    lim_t = np.sqrt(6.0 / (dim + kg.d_txt))
    vis_w = rng.uniform(-lim_v, lim_v, size=(dim, kg.d_vis))
    txt_w = rng.uniform(-lim_t, lim_t, size=(dim, kg.d_txt))
    absent_vis = rng.uniform(-lim, lim, size=dim)
    absent_txt = rng.uniform(-lim, lim, size=dim)
    return EmbeddingSpace(
        kind=kind, dim=dim, ent=ent, rel=rel,
        vis_w=vis_w, vis_b=np.zeros(dim), txt_w=txt_w, txt_b=np.zeros(dim),
        absent_vis=absent_vis, absent_txt=absent_txt,
        vis_feat=np.asarray(kg.visual, dtype=float),
        txt_feat=np.asarray(kg.textual, dtype=float),
        vis_missing=np.asarray(kg.visual_missing, dtype=bool),
        txt_missing=np.asarray(kg.textual_missing, dtype=bool))


def rel_vec(space: EmbeddingSpace, rid: int) -> Array:
    """Materialized relation embedding of length d."""
    if not 0 <= rid < space.n_rel:
        raise ValueError(f"invalid relation id {rid}")
    if space.kind == "rotation":
        return materialize_phases(space.rel[rid])
    return space.rel[rid].copy()


def rel_rows(space: EmbeddingSpace, rids: Array) -> Array:
    if space.kind == "rotation":
        return materialize_phases(space.rel[rids])
    return space.rel[rids]


def modality_embed(space: EmbeddingSpace, entity_id: int, modality: str) -> Array:
    """struc -> table row; vis/text -> affine projection of the frozen
    feature row, or the learnable absent embedding when the row is masked."""
    if not 0 <= entity_id < space.n_ent:
        raise ValueError(f"invalid entity id {entity_id}")
    if modality == "struc":
        return space.ent[entity_id].copy()
    if modality == "vis":
        if space.vis_missing[entity_id]:
            return space.absent_vis.copy()
        return space.vis_w @ space.vis_feat[entity_id] + space.vis_b
    if modality == "text":
        if space.txt_missing[entity_id]:
            return space.absent_txt.copy()
        return space.txt_w @ space.txt_feat[entity_id] + space.txt_b
    raise ValueError(f"unknown modality '{modality}'")


def modality_rows(space: EmbeddingSpace, ids: Array, modality: str) -> Array:
    """Batched modality_embed over an id array, shape (n, d)."""
    ids = np.asarray(ids, dtype=np.int64)
    if modality == "struc":
        return space.ent[ids]
    if modality == "vis":
        rows = space.vis_feat[ids] @ space.vis_w.T + space.vis_b
        miss = space.vis_missing[ids]
        if miss.any():
            rows[miss] = space.absent_vis
        return rows
    if modality == "text":
        rows = space.txt_feat[ids] @ space.txt_w.T + space.txt_b
        miss = space.txt_missing[ids]
        if miss.any():
            rows[miss] = space.absent_txt
        return rows
    raise ValueError(f"unknown modality '{modality}'")


# ---------------------------------------------------------------------------
# energies


def energy(kind: str, h: Array, r: Array, t: Array) -> float:
    """Scalar triple energy; lower means more plausible.

    translation: ||h + r - t||_2
    rotation:    ||h o r - t||_2 over complex coordinates (r unit modulus)
    bilinear:    -<h, r, t>
    """
    _check_kind(kind)
    h, r, t = (np.asarray(v, dtype=float) for v in (h, r, t))
    _check_same_dim(f"energy[{kind}]", h, r, t)
    return float(energy_rows(kind, h[None], r[None], t[None])[0])


def _as_complex(x: Array) -> Array:
    """Interleaved real view -> complex view (no copy for contiguous input)."""
    x = np.ascontiguousarray(x)
    return x.view(np.complex128)


def energy_rows(kind: str, H: Array, R: Array, T: Array) -> Array:
    """Row-wise energies for (n, d) stacks (leading axes broadcast)."""
    if kind == "translation":
        u = H + R - T
        return np.sqrt(np.sum(u * u, axis=-1))
    if kind == "bilinear":
        return -np.sum(H * R * T, axis=-1)
    if kind == "rotation":
        u = _as_complex(H) * _as_complex(R) - _as_complex(T)
        return np.sqrt(np.sum(u.real * u.real + u.imag * u.imag, axis=-1))
    raise ValueError(f"unknown model kind '{kind}'")


def energy_rows_grads(kind: str, H: Array, R: Array, T: Array,
                      need: tuple[str, ...] = ("h", "r", "t")):
    """Row-wise energies plus gradients w.r.t. each argument (R gradients are
    w.r.t. the materialized relation vector). Inputs may broadcast against
    each other; gradients come back at the full broadcast shape, or None for
    arguments not listed in `need`. Zero-norm rows get zero grads."""
    shape = np.broadcast_shapes(H.shape, R.shape, T.shape)
    if kind == "translation":
        u = np.broadcast_to(H + R - T, shape)
        e = np.sqrt(np.sum(u * u, axis=-1))
        g = u / np.where(e > 0.0, e, 1.0)[..., None]
        return (e, g if "h" in need else None,
                g.copy() if "r" in need else None,
                -g if "t" in need else None)
    if kind == "bilinear":
        e = -np.sum(H * R * T, axis=-1)
        dH = np.broadcast_to(-(R * T), shape).copy() if "h" in need else None
        dR = np.broadcast_to(-(H * T), shape).copy() if "r" in need else None
        dT = np.broadcast_to(-(H * R), shape).copy() if "t" in need else None
        return e, dH, dR, dT
    if kind == "rotation":
        hc, rc, tc = _as_complex(H), _as_complex(R), _as_complex(T)
        u = hc * rc - tc  # full broadcast shape: all three operands enter
        e = np.sqrt(np.sum(u.real * u.real + u.imag * u.imag, axis=-1))
        g = u / np.where(e > 0.0, e, 1.0)[..., None]
        dH = dR = dT = None
        if "h" in need:
            dH = np.ascontiguousarray(np.conj(rc) * g).view(np.float64)
        if "r" in need:
            dR = np.ascontiguousarray(np.conj(hc) * g).view(np.float64)
        if "t" in need:
            dT = np.ascontiguousarray(-g).view(np.float64)
        return e, dH, dR, dT
    raise ValueError(f"unknown model kind '{kind}'")


def energy_grads(kind: str, h: Array, r: Array, t: Array):
    """Scalar energy with gradients w.r.t. h, r (materialized), t."""
    _check_kind(kind)
    h, r, t = (np.asarray(v, dtype=float) for v in (h, r, t))
    _check_same_dim(f"energy[{kind}]", h, r, t)
    e, gh, gr, gt = energy_rows_grads(kind, h[None], r[None], t[None])
    return float(e[0]), gh[0], gr[0], gt[0]


def phase_grad_from_materialized(phases: Array, grad_mat: Array) -> Array:
    """Chain a gradient on the materialized (cos, sin) vector back to the
    underlying phases."""
    return (-np.sin(phases) * grad_mat[..., 0::2]
            + np.cos(phases) * grad_mat[..., 1::2])


# ---------------------------------------------------------------------------
# condition operators


def condition(kind: str, x_e: Array, x_r: Array, invert: bool = False) -> Array:
    """Condition embedding pairing an observed entity with the relation.

    rotation:    x_e o x_r (complex Hadamard; invert conjugates the relation)
    bilinear:    x_e * x_r elementwise (self-inverse up to the relation sign,
                 reused for both corruption directions)
    translation: x_e + x_r (invert subtracts, the composition inverse used
                 when the head entity is the one being generated)
    """
    _check_kind(kind)
    x_e = np.asarray(x_e, dtype=float)
    x_r = np.asarray(x_r, dtype=float)
    _check_same_dim(f"condition[{kind}]", x_e, x_r)
    if kind == "translation":
        return x_e - x_r if invert else x_e + x_r
    if kind == "bilinear":
        return x_e * x_r
    if kind == "rotation":
        return complex_hadamard(x_e, conj_interleaved(x_r) if invert else x_r)
    raise ValueError(f"unknown model kind '{kind}'")
