"""Joint training objective and the full interleaved loop: per batch, a
denoiser update on the noise-prediction loss, a harvest of generated
negatives along reverse chains, and a KGE update on the margin objective
over generated plus sampled negatives.

Loss shapes (softplus(x) = -log sigmoid(-x)):
    kgc  = softplus(E_pos - margin) + mean_j softplus(margin - E_neg_j)
    ha   = softplus(E_pos - mean_margin)
           + (1/S) sum_s w_s softplus(margin_s - score_s)
    total = kgc + ha_weight * ha

Generated embeddings enter the KGE objective as constants; no gradient flows
back into the denoiser through them.
"""

from __future__ import annotations

import json
import logging
import time
from dataclasses import dataclass, field, fields
from typing import Optional

import numpy as np

from .data import Mmkg, bernoulli_stats
from .diffusion import (DenoiserParams, DiffusionBatch, NoiseSchedule,
                        chain_noise_shape, diffusion_loss_grads,
                        init_denoiser, make_schedule, reverse_chain)
from .noise import ChainNoiseSource
from .evaluation import evaluate
from .models import (MODALITIES, EmbeddingSpace, energy, energy_rows_grads,
                     init_space, modality_embed, modality_rows,
                     phase_grad_from_materialized, rel_rows, rel_vec)
from .negatives import (SIDES, NegativeBundle, SampledNegatives,
                        bundle_conditions, default_steps, level_margin,
                        level_weight, sample_bernoulli, sample_uniform)
from .nn import Array, adam_init, adam_step, make_rng

log = logging.getLogger(__name__)


class ConfigError(ValueError):
    """Raised for inconsistent or malformed training configuration."""


class TrainingDiverged(RuntimeError):
    """Raised when a loss component stops being finite."""


def _softplus(x):
    return np.logaddexp(0.0, x)


def _sigmoid(x):
    return 0.5 * (1.0 + np.tanh(0.5 * x))


@dataclass
class TrainConfig:
    model: str = "rotation"
    dim: int = 32
    total_steps: int = 100
    steps: Optional[tuple[int, ...]] = None  # None -> T/20, T/10, T/5, T/2
    margin: float = 6.0
    margin_min: float = 3.0
    margin_max: float = 9.0
    ha_weight: float = 1.0
    negatives: int = 8
    batch_size: int = 400
    epochs: int = 50
    lr_kge: float = 1e-2
    lr_diff: float = 1e-3
    seed: int = 0
    sampler: str = "uniform"
    no_mmc: bool = False
    no_mhld: bool = False
    no_ntat: bool = False
    no_hal: bool = False
    no_diffheg: bool = False
    reverse_scale_beta: bool = False
    noise_scale_alpha: bool = False
    joint_score_sampled: bool = False
    eval_joint: bool = False

    @property
    def effective_ha_weight(self) -> float:
        if self.no_ntat or self.no_diffheg:
            return 0.0
        return self.ha_weight

    def resolved_steps(self) -> tuple[int, ...]:
        if self.no_mhld:
            return (max(1, int(np.floor(self.total_steps / 2 + 0.5))),)
        if self.steps is not None:
            return tuple(sorted({int(t) for t in self.steps}))
        return default_steps(self.total_steps)

    def validate(self) -> None:
        checks = [
            ("model", self.model in ("translation", "bilinear", "rotation")),
            ("dim", self.dim >= 1),
            ("total_steps", self.total_steps >= 2),
            ("margin", self.margin > 0),
            ("margin_min", 0 < self.margin_min < self.margin_max),
            ("ha_weight", self.ha_weight >= 0),
            ("negatives", self.negatives >= 1),
            ("batch_size", self.batch_size >= 1),
            ("epochs", self.epochs >= 1),
            ("lr_kge", self.lr_kge > 0),
            ("lr_diff", self.lr_diff > 0),
            ("sampler", self.sampler in ("uniform", "bernoulli")),
        ]
        for name, ok in checks:
            if not ok:
                raise ConfigError(f"invalid value for config field '{name}'")
        if self.model == "rotation" and self.dim % 2 != 0:
            raise ConfigError("invalid value for config field 'dim': rotation "
                              "needs an even dim")
        if self.no_diffheg and self.ha_weight != 0:
            raise ConfigError("invalid value for config field 'ha_weight': "
                              "no_diffheg leaves no generated negatives, "
                              "set ha_weight = 0")
        steps = self.resolved_steps()
        if any(not 1 <= t <= self.total_steps for t in steps):
            raise ConfigError("invalid value for config field 'steps': out of "
                              f"range [1, {self.total_steps}]")

    def to_dict(self) -> dict:
        out = {}
        for f in fields(self):
            v = getattr(self, f.name)
            out[f.name] = list(v) if isinstance(v, tuple) else v
        return out

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown config field '{sorted(unknown)[0]}'")
        kwargs = dict(d)
        if kwargs.get("steps") is not None:
            kwargs["steps"] = tuple(int(t) for t in kwargs["steps"])
        return cls(**kwargs)

    @classmethod
    def from_json(cls, path) -> "TrainConfig":
        with open(path, encoding="utf-8") as fh:
            try:
                d = json.load(fh)
            except json.JSONDecodeError as exc:
                raise ConfigError(f"config is not valid JSON: {exc}") from exc
        if not isinstance(d, dict):
            raise ConfigError("config must be a JSON object")
        return cls.from_dict(d)


@dataclass
class TrainReport:
    epochs: int
    loss_total: list[float]
    loss_kgc: list[float]
    loss_ha: list[float]
    loss_diff: list[float]
    final_valid: Optional[dict]
    config: dict
    wall_time_s: float = 0.0

    def to_dict(self, include_timing: bool = False) -> dict:
        out = {"epochs": self.epochs, "loss_total": self.loss_total,
               "loss_kgc": self.loss_kgc, "loss_ha": self.loss_ha,
               "loss_diff": self.loss_diff, "final_valid": self.final_valid,
               "config": self.config}
        # timing is excluded by default so emitted reports stay byte-stable
        if include_timing:
            out["wall_time_s"] = self.wall_time_s
        return out


# ---------------------------------------------------------------------------
# scalar loss operations


def joint_score(space: EmbeddingSpace, triple, side: str,
                gen: dict[str, Array]) -> float:
    """Mean of the three modality energies of a generated negative, pairing
    each generated embedding with the observed side's same-modality
    embedding."""
    if side not in SIDES:
        raise ValueError(f"side must be one of {SIDES}, got '{side}'")
    h, r, t = (int(v) for v in triple)
    rv = rel_vec(space, r)
    obs = t if side == "head" else h
    total = 0.0
    for m in MODALITIES:
        obs_vec = modality_embed(space, obs, m)
        if side == "head":
            total += energy(space.kind, gen[m], rv, obs_vec)
        else:
            total += energy(space.kind, obs_vec, rv, gen[m])
    return total / len(MODALITIES)


def hardness_adaptive_loss(space: EmbeddingSpace, positive,
                           bundle: NegativeBundle) -> float:
    """Margin loss over one bundle; each negative uses its own step margin,
    the positive term uses the bundle's weight-averaged margin."""
    if len(bundle) == 0:
        raise ValueError("hardness_adaptive_loss: empty bundle")
    h, r, t = (int(v) for v in positive)
    e_pos = energy(space.kind, space.ent[h], rel_vec(space, r), space.ent[t])
    val = float(_softplus(e_pos - bundle.mean_margin()))
    for step in bundle.steps:
        score = joint_score(space, positive, bundle.side,
                            bundle.embeddings[step])
        val += (bundle.weights[step] / len(bundle)
                * float(_softplus(bundle.margins[step] - score)))
    return val


def kgc_loss(space: EmbeddingSpace, positive, sampled: SampledNegatives,
             gamma: float, joint: bool = False) -> float:
    """Fixed-margin loss over sampled negatives; negatives score by the
    structural energy of the corrupted triple unless joint is set."""
    if len(sampled.entity_ids) == 0:
        raise ValueError("kgc_loss: empty negative set")
    h, r, t = (int(v) for v in positive)
    rv = rel_vec(space, r)
    e_pos = energy(space.kind, space.ent[h], rv, space.ent[t])
    val = float(_softplus(e_pos - gamma))
    mods = MODALITIES if joint else ("struc",)
    neg_total = 0.0
    for c in sampled.entity_ids:
        c = int(c)
        e = 0.0
        for m in mods:
            if sampled.side == "head":
                e += energy(space.kind, modality_embed(space, c, m), rv,
                            modality_embed(space, t, m))
            else:
                e += energy(space.kind, modality_embed(space, h, m), rv,
                            modality_embed(space, c, m))
        neg_total += float(_softplus(gamma - e / len(mods)))
    return val + neg_total / len(sampled.entity_ids)


def total_loss(l_kgc: float, l_ha: float, ha_weight: float) -> float:
    return l_kgc + ha_weight * l_ha


# ---------------------------------------------------------------------------
# batched loss + gradient kernel


def _zero_grads(space: EmbeddingSpace) -> dict[str, Array]:
    return {k: np.zeros_like(v) for k, v in space.tensors().items()}


def _acc_rel(space, grads, rids, gmat):
    if space.kind == "rotation":
        gph = phase_grad_from_materialized(space.rel[rids], gmat)
        np.add.at(grads["rel"], rids, gph)
    else:
        np.add.at(grads["rel"], rids, gmat)


def _acc_modality(space, grads, modality, ids, g):
    """Accumulate gradient g (n, d) on the modality embeddings of `ids`."""
    if modality == "struc":
        np.add.at(grads["ent"], ids, g)
        return
    feat = space.vis_feat if modality == "vis" else space.txt_feat
    missing = space.vis_missing if modality == "vis" else space.txt_missing
    wkey, bkey, akey = (("vis_w", "vis_b", "absent_vis") if modality == "vis"
                        else ("txt_w", "txt_b", "absent_txt"))
    miss = missing[ids]
    pres = ~miss
    if pres.any():
        grads[wkey] += g[pres].T @ feat[ids[pres]]
        grads[bkey] += g[pres].sum(axis=0)
    if miss.any():
        grads[akey] += g[miss].sum(axis=0)


def kge_batch_loss_grads(space: EmbeddingSpace, pos: Array, neg_ids: Array,
                         neg_is_head: Array, gen: Optional[dict],
                         gamma: float, ha_weight: float,
                         joint_sampled: bool = False):
    """(l_kgc, l_ha, grads) for one batch.

    pos: (b, 3); neg_ids: (b, k) sampled corruptions with per-positive side
    neg_is_head; gen: None or {"states": (S, 3, 2b, d) with tail-corruption
    rows first, "weights": (S,), "margins": (S,)} whose states are treated
    as constants. Gradients are accumulated with the ha term scaled by
    ha_weight.
    """
    kind = space.kind
    pos = np.asarray(pos, dtype=np.int64)
    b = pos.shape[0]
    hs, rs, ts = pos[:, 0], pos[:, 1], pos[:, 2]
    grads = _zero_grads(space)
    rmat = rel_rows(space, rs)

    # positive structural energy, shared by both objectives
    e_pos, gh, gr, gt = energy_rows_grads(kind, space.ent[hs], rmat,
                                          space.ent[ts])
    coeff_pos = _sigmoid(e_pos - gamma) / b
    l_kgc = float(np.mean(_softplus(e_pos - gamma)))

    l_ha = 0.0
    if gen is not None:
        mean_margin = float(np.sum(gen["weights"] * gen["margins"]))
        l_ha += 2.0 * float(np.sum(_softplus(e_pos - mean_margin))) / (2 * b)
        coeff_pos = coeff_pos + ha_weight * _sigmoid(e_pos - mean_margin) / b

    c = coeff_pos[:, None]
    np.add.at(grads["ent"], hs, c * gh)
    np.add.at(grads["ent"], ts, c * gt)
    _acc_rel(space, grads, rs, c * gr)

    # sampled negatives
    k = neg_ids.shape[1]
    neg_is_head = np.asarray(neg_is_head, dtype=bool)
    head_idx = np.where(neg_is_head[:, None], neg_ids, hs[:, None])
    tail_idx = np.where(neg_is_head[:, None], ts[:, None], neg_ids)
    mods = MODALITIES if joint_sampled else ("struc",)
    per_mod = []
    for m in mods:
        hm = modality_rows(space, head_idx.ravel(), m).reshape(b, k, -1)
        tm = modality_rows(space, tail_idx.ravel(), m).reshape(b, k, -1)
        per_mod.append(energy_rows_grads(kind, hm, rmat[:, None, :], tm))
    e_neg = sum(pm[0] for pm in per_mod) / len(mods)
    l_kgc += float(np.mean(_softplus(gamma - e_neg)))
    cneg = (-_sigmoid(gamma - e_neg) / (b * k) / len(mods))[..., None]
    for m, (_, gnh, gnr, gnt) in zip(mods, per_mod):
        _acc_modality(space, grads, m, head_idx.ravel(),
                      (cneg * gnh).reshape(b * k, -1))
        _acc_modality(space, grads, m, tail_idx.ravel(),
                      (cneg * gnt).reshape(b * k, -1))
        _acc_rel(space, grads, np.repeat(rs, k), (cneg * gnr).reshape(b * k, -1))

    # generated negatives (constants w.r.t. this objective)
    if gen is not None:
        states = gen["states"]  # (S, 3, 2b, d)
        n_steps = states.shape[0]
        weights = np.asarray(gen["weights"], dtype=float)
        margins = np.asarray(gen["margins"], dtype=float)
        obs_ids = {"tail": hs, "head": ts}
        obs_rows = {side: np.stack([modality_rows(space, obs_ids[side], m)
                                    for m in MODALITIES])
                    for side in ("tail", "head")}
        rel_acc = np.zeros((b, rmat.shape[1]))
        for si, side in enumerate(("tail", "head")):
            block = states[:, :, si * b:(si + 1) * b, :]
            obs = obs_rows[side][None]  # (1, 3, b, d)
            rm = rmat[None, None]       # (1, 1, b, d)
            if side == "tail":
                e, gobs, grel, _ = energy_rows_grads(kind, obs, rm, block,
                                                     need=("h", "r"))
            else:
                e, _, grel, gobs = energy_rows_grads(kind, block, rm, obs,
                                                     need=("r", "t"))
            score = e.mean(axis=1)  # (S, b), modality-averaged joint score
            sp = _softplus(margins[:, None] - score)
            l_ha += float(np.sum(weights[:, None] / n_steps * sp)) / (2 * b)
            cgen = (-_sigmoid(margins[:, None] - score) * weights[:, None]
                    / n_steps / (2 * b) / 3.0 * ha_weight)
            cgen = cgen[:, None, :, None]  # (S, 1, b, 1)
            gm = np.sum(cgen * gobs, axis=0)  # (3, b, d)
            for mi, m in enumerate(MODALITIES):
                _acc_modality(space, grads, m, obs_ids[side], gm[mi])
            rel_acc += np.sum(cgen * grel, axis=(0, 1))
        _acc_rel(space, grads, rs, rel_acc)

    return l_kgc, l_ha, grads


# ---------------------------------------------------------------------------
# samplers (batched)


def _draw_neg_matrix(n_ent: int, exclude: Array, k: int,
                     rng: np.random.Generator) -> Array:
    if n_ent < 2:
        raise ValueError("cannot corrupt entities in a vocabulary of size 1")
    ids = rng.integers(0, n_ent, size=(exclude.shape[0], k))
    while True:
        clash = ids == exclude[:, None]
        if not clash.any():
            return ids.astype(np.int64)
        ids[clash] = rng.integers(0, n_ent, size=int(clash.sum()))


def _sample_batch(kg: Mmkg, batch: Array, k: int, sampler: str, stats,
                  rng: np.random.Generator):
    if sampler == "uniform":
        sides_head = rng.random(batch.shape[0]) < 0.5
    else:
        p_head = stats.tph[batch[:, 1]] / (stats.tph[batch[:, 1]]
                                           + stats.hpt[batch[:, 1]])
        sides_head = rng.random(batch.shape[0]) < p_head
    exclude = np.where(sides_head, batch[:, 0], batch[:, 2])
    ids = _draw_neg_matrix(kg.n_ent, exclude, k, rng)
    return ids, sides_head


# ---------------------------------------------------------------------------
# training loop


def train(kg: Mmkg, cfg: TrainConfig):
    """Run the full interleaved loop. Returns (space, denoiser, report);
    denoiser is None when the generation module is disabled."""
    cfg.validate()
    t_start = time.perf_counter()
    schedule = make_schedule(cfg.total_steps)
    steps = cfg.resolved_steps()

    space = init_space(kg, cfg.model, cfg.dim, make_rng(cfg.seed, "init-space"))
    denoiser = None
    diff_opt = None
    if not cfg.no_diffheg:
        denoiser = init_denoiser(cfg.dim, make_rng(cfg.seed, "init-denoiser"))
        diff_opt = adam_init(denoiser.tensors(), cfg.lr_diff)
    kge_opt = adam_init(space.tensors(), cfg.lr_kge)

    rng_shuffle = make_rng(cfg.seed, "shuffle")
    rng_sample = make_rng(cfg.seed, "sampled-negatives")
    rng_diff = make_rng(cfg.seed, "diffusion-train")
    rng_chain = make_rng(cfg.seed, "reverse-chain")

    stats = bernoulli_stats(kg) if cfg.sampler == "bernoulli" else None
    lam = cfg.effective_ha_weight
    use_gen = denoiser is not None and lam > 0.0
    if cfg.no_hal:
        margins = np.full(len(steps), cfg.margin)
    else:
        margins = np.array([level_margin(t, cfg.total_steps, cfg.margin_min,
                                         cfg.margin_max) for t in steps])
    weights = np.array([level_weight(t, cfg.total_steps, steps) for t in steps])

    train_arr = kg.train
    if len(train_arr) == 0:
        raise ConfigError("cannot train on an empty train split")
    n = len(train_arr)
    hist_kgc, hist_ha, hist_diff, hist_total = [], [], [], []

    noise_src = None
    if use_gen:
        # the whole run's noise-block schedule is known up front, so the
        # blocks can be streamed from a producer process
        sizes = [cfg.batch_size] * (n // cfg.batch_size)
        if n % cfg.batch_size:
            sizes.append(n % cfg.batch_size)
        blocks = [chain_noise_shape(cfg.total_steps, steps, 2 * b, cfg.dim)
                  for b in sizes] * cfg.epochs
        noise_src = ChainNoiseSource(make_rng(cfg.seed, "chain-noise"), blocks)

    try:
        for epoch in range(cfg.epochs):
            perm = rng_shuffle.permutation(n)
            sums = {"kgc": 0.0, "ha": 0.0, "diff": 0.0}
            for start in range(0, n, cfg.batch_size):
                batch = train_arr[perm[start:start + cfg.batch_size]]
                bsz = batch.shape[0]
                conds = None
                l_diff = 0.0
                if denoiser is not None:
                    conds = np.concatenate(
                        [bundle_conditions(space, batch, "tail", cfg.no_mmc),
                         bundle_conditions(space, batch, "head", cfg.no_mmc)],
                        axis=1)
                    x0 = np.concatenate(
                        [np.stack([modality_rows(space, batch[:, 2], m)
                                   for m in MODALITIES]),
                         np.stack([modality_rows(space, batch[:, 0], m)
                                   for m in MODALITIES])], axis=1)
                    t_draw = rng_diff.integers(1, cfg.total_steps + 1,
                                               size=2 * bsz)
                    eps = rng_diff.standard_normal((2 * bsz, cfg.dim))
                    l_diff, dgrads = diffusion_loss_grads(
                        denoiser, schedule,
                        DiffusionBatch(x0=x0, cond=conds, t=t_draw, eps=eps))
                    adam_step(diff_opt, denoiser.tensors(), dgrads)
                gen = None
                if use_gen:
                    block = noise_src.acquire()
                    harvested = reverse_chain(
                        denoiser, schedule, conds, steps, rng_chain,
                        noise=block,
                        reverse_scale_beta=cfg.reverse_scale_beta,
                        noise_scale_alpha=cfg.noise_scale_alpha)
                    noise_src.release()
                    gen = {"states": np.stack([harvested[t] for t in steps]),
                           "weights": weights, "margins": margins}
                neg_ids, sides_head = _sample_batch(kg, batch, cfg.negatives,
                                                    cfg.sampler, stats,
                                                    rng_sample)
                l_kgc, l_ha, grads = kge_batch_loss_grads(
                    space, batch, neg_ids, sides_head, gen, cfg.margin, lam,
                    cfg.joint_score_sampled)
                if not np.isfinite(l_kgc + l_ha + l_diff):
                    raise TrainingDiverged(
                        f"non-finite loss at epoch {epoch}, batch offset "
                        f"{start}: kgc={l_kgc} ha={l_ha} diff={l_diff}")
                adam_step(kge_opt, space.tensors(), grads)
                sums["kgc"] += bsz * l_kgc
                sums["ha"] += bsz * l_ha
                sums["diff"] += bsz * l_diff
            kgc_m, ha_m = sums["kgc"] / n, sums["ha"] / n
            diff_m = sums["diff"] / n
            hist_kgc.append(kgc_m)
            hist_ha.append(ha_m)
            hist_diff.append(diff_m)
            hist_total.append(total_loss(kgc_m, ha_m, lam))
            log.info("epoch %d/%d  L=%.4f  kgc=%.4f  ha=%.4f  diff=%.4f",
                     epoch + 1, cfg.epochs, hist_total[-1], kgc_m, ha_m,
                     diff_m)
    finally:
        if noise_src is not None:
            noise_src.close()

    final_valid = None
    if len(kg.valid) > 0:
        final_valid = evaluate(space, cfg.model, kg, "valid",
                               joint=cfg.eval_joint).to_dict()
    report = TrainReport(
        epochs=cfg.epochs, loss_total=hist_total, loss_kgc=hist_kgc,
        loss_ha=hist_ha, loss_diff=hist_diff, final_valid=final_valid,
        config=cfg.to_dict(), wall_time_s=time.perf_counter() - t_start)
    return space, denoiser, report
