"""Filtered link-prediction evaluation: MRR and Hits@{1,3,10} over tail and
head prediction.

Candidates already observed in any split are removed (except the query's true
answer). Ties are broken by the expected rank over random permutations:
rank = 1 + #strictly-better + #ties/2, which can be half-integral.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .data import FilterIndex, Mmkg, build_filter_index
from .models import (MODALITIES, EmbeddingSpace, energy_rows, modality_embed,
                     modality_rows, rel_vec)
from .nn import Array

HITS_LEVELS = (1, 3, 10)
DIRECTIONS = ("tail", "head")


@dataclass
class EvalResult:
    mrr: float
    hits1: float
    hits3: float
    hits10: float
    by_direction: dict[str, dict[str, float]]
    n_queries: int

    def to_dict(self) -> dict:
        return {"mrr": self.mrr, "hits1": self.hits1, "hits3": self.hits3,
                "hits10": self.hits10, "by_direction": self.by_direction,
                "n_queries": self.n_queries}


def _metrics(ranks: Array) -> dict[str, float]:
    ranks = np.asarray(ranks, dtype=float)
    out = {"mrr": float(np.mean(1.0 / ranks))}
    for n in HITS_LEVELS:
        out[f"hits{n}"] = float(np.mean(ranks <= n))
    return out


def _scoring_tables(space: EmbeddingSpace, joint: bool) -> dict[str, Array]:
    all_ids = np.arange(space.n_ent)
    mods = MODALITIES if joint else ("struc",)
    return {m: modality_rows(space, all_ids, m) for m in mods}


def _candidate_energies(space: EmbeddingSpace, kind: str, known: int, rid: int,
                        direction: str, tables: dict[str, Array]) -> Array:
    """Energy of every entity substituted into the open slot; averaged over
    modalities when more than one scoring table is active."""
    r = rel_vec(space, rid)
    total = np.zeros(space.n_ent)
    for m, cands in tables.items():
        known_vec = modality_embed(space, known, m)
        if direction == "tail":
            total += energy_rows(kind, known_vec, r, cands)
        else:
            total += energy_rows(kind, cands, r, known_vec)
    return total / len(tables)


def _rank_from_energies(energies: Array, true_id: int, removed: Array) -> float:
    keep = np.ones(energies.shape[0], dtype=bool)
    keep[removed] = False
    keep[true_id] = True
    e_true = energies[true_id]
    kept = energies[keep]
    better = int(np.sum(kept < e_true))
    ties = int(np.sum(kept == e_true)) - 1  # the true answer ties itself
    return 1.0 + better + 0.5 * ties


def rank_query(space: EmbeddingSpace, kind: str, triple, direction: str,
               filt: FilterIndex, *, joint: bool = False,
               tables: dict[str, Array] | None = None) -> float:
    """Filtered rank of the triple's true entity. direction='tail' ranks
    candidates for (h, r, ?), 'head' for (?, r, t). Half-integral values
    arise from the tie convention."""
    h, r, t = (int(v) for v in triple)
    for name, v, bound in (("head", h, space.n_ent),
                           ("relation", r, space.n_rel),
                           ("tail", t, space.n_ent)):
        if not 0 <= v < bound:
            raise ValueError(f"invalid {name} id {v}")
    if direction not in DIRECTIONS:
        raise ValueError(f"direction must be one of {DIRECTIONS}, "
                         f"got '{direction}'")
    if tables is None:
        tables = _scoring_tables(space, joint)
    if direction == "tail":
        energies = _candidate_energies(space, kind, h, r, "tail", tables)
        return _rank_from_energies(energies, t, filt.tails(h, r))
    energies = _candidate_energies(space, kind, t, r, "head", tables)
    return _rank_from_energies(energies, h, filt.heads(r, t))


def evaluate(space: EmbeddingSpace, kind: str, kg: Mmkg, split: str, *,
             filt: FilterIndex | None = None, joint: bool = False) -> EvalResult:
    """Average reciprocal ranks and top-N rates over both prediction
    directions for every triple in the split."""
    triples = kg.split(split)
    if len(triples) == 0:
        raise ValueError(f"split '{split}' is empty")
    if filt is None:
        filt = build_filter_index(kg)
    tables = _scoring_tables(space, joint)
    tail_ranks = np.array([rank_query(space, kind, tr, "tail", filt,
                                      tables=tables) for tr in triples])
    head_ranks = np.array([rank_query(space, kind, tr, "head", filt,
                                      tables=tables) for tr in triples])
    all_ranks = np.concatenate([tail_ranks, head_ranks])
    overall = _metrics(all_ranks)
    by_dir = {"tail": _metrics(tail_ranks), "head": _metrics(head_ranks)}
    return EvalResult(mrr=overall["mrr"], hits1=overall["hits1"],
                      hits3=overall["hits3"], hits10=overall["hits10"],
                      by_direction=by_dir, n_queries=int(all_ranks.size))


def format_table(result: EvalResult) -> str:
    """Aligned plain-text table, percentages to two decimals."""
    cols = ["MRR", "Hits@1", "Hits@3", "Hits@10"]
    keys = ["mrr", "hits1", "hits3", "hits10"]
    rows = [("all", {k: getattr(result, k) for k in keys}),
            ("tail", result.by_direction["tail"]),
            ("head", result.by_direction["head"])]
    lines = ["{:<6s}".format("") + "".join(f"{c:>9s}" for c in cols)]
    for name, vals in rows:
        lines.append(f"{name:<6s}"
                     + "".join(f"{100.0 * vals[k]:>9.2f}" for k in keys))
    return "\n".join(lines)
