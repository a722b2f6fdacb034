"""Hierarchical generated negatives and the classical baseline samplers.

A bundle holds, for one positive triple and one corruption side, the three
modality-specific embeddings harvested from a single reverse chain at each
requested time step, together with the step's hardness level (1/t), its
normalized weight (triangular, peaking at T/2), and its margin (linear
interpolation between the configured bounds; smaller t means harder and gets
the smaller margin).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .data import BernoulliStats, Mmkg
from .diffusion import DenoiserParams, NoiseSchedule, reverse_chain
from .models import MODALITIES, EmbeddingSpace, condition, modality_rows, rel_rows
from .nn import Array

SIDES = ("head", "tail")

# Default harvest points as fractions of the total step count.
STEP_FRACTIONS = (1 / 20, 1 / 10, 1 / 5, 1 / 2)

DEFAULT_MARGIN_MIN = 3.0
DEFAULT_MARGIN_MAX = 9.0


def _round_half_up(x: float) -> int:
    return int(np.floor(x + 0.5))


def default_steps(total: int) -> tuple[int, ...]:
    """T/20, T/10, T/5, T/2 rounded half-up, clamped to >= 1, deduplicated."""
    steps = sorted({max(1, _round_half_up(total * f)) for f in STEP_FRACTIONS})
    return tuple(steps)


def hardness_level(t: int) -> float:
    """1/t: smaller time steps yield harder negatives."""
    t = int(t)
    if t < 1:
        raise ValueError(f"hardness_level needs t >= 1, got {t}")
    return 1.0 / t


def level_margin(t: int, total: int, gamma_min: float, gamma_max: float) -> float:
    """Margin for hardness level 1/t: gamma_min at t=1 rising linearly to
    gamma_max at t=T."""
    t = int(t)
    if not 1 <= t <= total:
        raise ValueError(f"level_margin: t={t} outside [1, {total}]")
    if not gamma_min < gamma_max:
        raise ValueError(f"level_margin: need gamma_min < gamma_max, got "
                         f"({gamma_min}, {gamma_max})")
    return gamma_min + (gamma_max - gamma_min) * (t - 1) / (total - 1)


def level_weight(t: int, total: int, steps) -> float:
    """Normalized triangular weight peaking at T/2: u(t) = 1 - |t - T/2|/(T/2),
    divided by the sum of u over the step set. A step set whose u-sum is zero
    (only possible for {T}) falls back to uniform weights."""
    steps = sorted({int(v) for v in steps})
    t = int(t)
    if t not in steps:
        raise ValueError(f"level_weight: t={t} not in step set {steps}")
    half = total / 2.0
    u = np.array([1.0 - abs(v - half) / half for v in steps])
    total_u = float(u.sum())
    if total_u == 0.0:
        return 1.0 / len(steps)
    return float(u[steps.index(t)] / total_u)


@dataclass
class SampledNegatives:
    """k corrupted entity ids for one positive triple, all on one side."""

    side: str
    entity_ids: Array  # (k,) int64

    def __post_init__(self):
        if self.side not in SIDES:
            raise ValueError(f"side must be one of {SIDES}, got '{self.side}'")


@dataclass
class NegativeBundle:
    """Generated negatives for one (positive triple, corruption side)."""

    triple: tuple[int, int, int]
    side: str
    steps: tuple[int, ...]
    embeddings: dict[int, dict[str, Array]]  # t -> modality -> (d,)
    hardness: dict[int, float]
    weights: dict[int, float]
    margins: dict[int, float]

    def __len__(self) -> int:
        return len(self.steps)

    def mean_margin(self) -> float:
        """Weight-averaged margin, used for the positive term of the
        hardness-adaptive loss."""
        return float(sum(self.weights[t] * self.margins[t] for t in self.steps))


def bundle_conditions(space: EmbeddingSpace, triples: Array, side: str,
                      zero_condition: bool = False) -> Array:
    """Condition rows (3, n, d) for generating the `side` entity of each
    triple, conditioned on the observed entity and the relation."""
    triples = np.asarray(triples, dtype=np.int64).reshape(-1, 3)
    observed = triples[:, 2] if side == "head" else triples[:, 0]
    if zero_condition:
        return np.zeros((3, triples.shape[0], space.dim))
    rel = rel_rows(space, triples[:, 1])
    rows = [condition(space.kind, modality_rows(space, observed, m), rel,
                      invert=(side == "head")) for m in MODALITIES]
    return np.stack(rows)


def generate_bundle_states(denoiser: DenoiserParams, schedule: NoiseSchedule,
                           space: EmbeddingSpace, triples: Array, side: str,
                           steps, rng: np.random.Generator, *,
                           zero_condition: bool = False,
                           reverse_scale_beta: bool = False,
                           noise_scale_alpha: bool = False) -> dict[int, Array]:
    """Batched reverse-chain harvest: {t: (3, n, d)} generated embeddings."""
    if side not in SIDES:
        raise ValueError(f"side must be one of {SIDES}, got '{side}'")
    cond = bundle_conditions(space, triples, side, zero_condition)
    return reverse_chain(denoiser, schedule, cond, steps, rng,
                         reverse_scale_beta=reverse_scale_beta,
                         noise_scale_alpha=noise_scale_alpha)


def generate_bundle(denoiser: DenoiserParams, schedule: NoiseSchedule,
                    space: EmbeddingSpace, triple, side: str, steps,
                    rng: np.random.Generator, *,
                    gamma_min: float = DEFAULT_MARGIN_MIN,
                    gamma_max: float = DEFAULT_MARGIN_MAX,
                    zero_condition: bool = False,
                    reverse_scale_beta: bool = False,
                    noise_scale_alpha: bool = False) -> NegativeBundle:
    """Run one reverse chain for a single positive triple and harvest the
    generated embeddings at every requested step."""
    steps = tuple(sorted({int(t) for t in np.atleast_1d(np.asarray(steps, int))}))
    if not steps:
        raise ValueError("generate_bundle: empty step set")
    triple = tuple(int(v) for v in triple)
    states = generate_bundle_states(
        denoiser, schedule, space, np.asarray([triple]), side, steps, rng,
        zero_condition=zero_condition, reverse_scale_beta=reverse_scale_beta,
        noise_scale_alpha=noise_scale_alpha)
    embeddings = {t: {m: states[t][mi, 0] for mi, m in enumerate(MODALITIES)}
                  for t in steps}
    return NegativeBundle(
        triple=triple, side=side, steps=steps, embeddings=embeddings,
        hardness={t: hardness_level(t) for t in steps},
        weights={t: level_weight(t, schedule.total, steps) for t in steps},
        margins={t: level_margin(t, schedule.total, gamma_min, gamma_max)
                 for t in steps})


# ---------------------------------------------------------------------------
# baseline samplers


def _draw_excluding(n_ent: int, exclude: int, k: int,
                    rng: np.random.Generator) -> Array:
    if n_ent < 2:
        raise ValueError("cannot corrupt entities in a vocabulary of size 1")
    ids = rng.integers(0, n_ent, size=k)
    while True:
        clash = ids == exclude
        if not clash.any():
            return ids.astype(np.int64)
        ids[clash] = rng.integers(0, n_ent, size=int(clash.sum()))


def sample_uniform(kg: Mmkg, triple, side: str, k: int,
                   rng: np.random.Generator) -> SampledNegatives:
    """k entity ids drawn uniformly, excluding the entity being replaced."""
    if side not in SIDES:
        raise ValueError(f"side must be one of {SIDES}, got '{side}'")
    if k < 1:
        raise ValueError(f"need k >= 1 sampled negatives, got {k}")
    h, _, t = (int(v) for v in triple)
    true_ent = h if side == "head" else t
    return SampledNegatives(side=side,
                            entity_ids=_draw_excluding(kg.n_ent, true_ent, k, rng))


def sample_bernoulli(kg: Mmkg, stats: BernoulliStats, triple, k: int,
                     rng: np.random.Generator) -> SampledNegatives:
    """Corrupt the head with probability tph/(tph+hpt), else the tail;
    entities drawn uniformly excluding the original."""
    h, r, t = (int(v) for v in triple)
    p_head = stats.head_corruption_prob(r)
    side = "head" if rng.random() < p_head else "tail"
    return sample_uniform(kg, triple, side, k, rng)
