"""Multimodal KG ingestion, filtered-candidate indexes, and per-relation
corruption statistics.

Dataset directory layout:
    entities.txt, relations.txt   one name per line; line order defines ids
    train.tsv, valid.tsv, test.tsv   head<TAB>relation<TAB>tail, UTF-8
    visual.f32, textual.f32      raw little-endian float32, row-major,
                                 one row per entity id
    visual.json, textual.json    {"rows": R, "cols": C,
                                  "masked_row_indices": [...]}

Rows listed in masked_row_indices belong to entities lacking that modality;
they are stored as zeros and flagged missing after load.
"""

from __future__ import annotations

import json
import warnings
from dataclasses import dataclass
from pathlib import Path

import numpy as np

Array = np.ndarray


class DatasetError(ValueError):
    """Raised for malformed or inconsistent dataset files."""


@dataclass
class Mmkg:
    """An immutable multimodal knowledge graph: vocabularies, triple splits,
    and frozen per-entity modality feature matrices."""

    entities: list[str]
    relations: list[str]
    ent_id: dict[str, int]
    rel_id: dict[str, int]
    train: Array  # (n, 3) int64 rows of (head, relation, tail)
    valid: Array
    test: Array
    visual: Array  # (n_ent, d_vis) float64, missing rows zero
    textual: Array
    visual_missing: Array  # (n_ent,) bool, True where the modality is absent
    textual_missing: Array

    @property
    def n_ent(self) -> int:
        return len(self.entities)

    @property
    def n_rel(self) -> int:
        return len(self.relations)

    @property
    def d_vis(self) -> int:
        return self.visual.shape[1]

    @property
    def d_txt(self) -> int:
        return self.textual.shape[1]

    def split(self, name: str) -> Array:
        if name not in ("train", "valid", "test"):
            raise ValueError(f"unknown split '{name}'")
        return getattr(self, name)


def _read_names(path: Path) -> list[str]:
    if not path.is_file():
        raise DatasetError(f"missing file: {path}")
    with open(path, encoding="utf-8") as fh:
        names = [line.rstrip("\n") for line in fh]
    while names and names[-1] == "":
        names.pop()
    if len(set(names)) != len(names):
        raise DatasetError(f"duplicate names in {path.name}")
    return names


def _read_triples(path: Path, ent_id: dict[str, int],
                  rel_id: dict[str, int]) -> Array:
    if not path.is_file():
        raise DatasetError(f"missing file: {path}")
    rows = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.rstrip("\n")
            if not line:
                continue
            parts = line.split("\t")
            if len(parts) != 3:
                raise DatasetError(f"{path.name}:{lineno}: expected 3 "
                                   f"tab-separated fields, got {len(parts)}")
            h, r, t = parts
            for name, vocab, kind in ((h, ent_id, "entity"),
                                      (r, rel_id, "relation"),
                                      (t, ent_id, "entity")):
                if name not in vocab:
                    raise DatasetError(f"{path.name}:{lineno}: unknown "
                                       f"{kind} '{name}'")
            rows.append((ent_id[h], rel_id[r], ent_id[t]))
    return np.asarray(rows, dtype=np.int64).reshape(-1, 3)


def _read_features(base: Path, stem: str, n_ent: int) -> tuple[Array, Array]:
    raw_path = base / f"{stem}.f32"
    meta_path = base / f"{stem}.json"
    for p in (raw_path, meta_path):
        if not p.is_file():
            raise DatasetError(f"missing file: {p}")
    with open(meta_path, encoding="utf-8") as fh:
        meta = json.load(fh)
    rows, cols = int(meta["rows"]), int(meta["cols"])
    if rows != n_ent:
        raise DatasetError(f"{raw_path.name}: row count {rows} does not "
                           f"match entity count {n_ent}")
    flat = np.fromfile(raw_path, dtype="<f4")
    if flat.size != rows * cols:
        raise DatasetError(f"{raw_path.name}: expected {rows * cols} floats, "
                           f"found {flat.size}")
    feat = flat.reshape(rows, cols).astype(np.float64)
    missing = np.zeros(n_ent, dtype=bool)
    masked = [int(i) for i in meta.get("masked_row_indices", [])]
    for i in masked:
        if not 0 <= i < n_ent:
            raise DatasetError(f"{meta_path.name}: masked row {i} out of range")
        missing[i] = True
    if masked:
        feat[missing] = 0.0
        warnings.warn(f"{stem}: {len(masked)} entities lack this modality; "
                      f"zero rows substituted", stacklevel=3)
    return feat, missing


def load_mmkg(dataset_dir) -> Mmkg:
    """Load and validate a dataset directory. Ids are assigned by file order,
    so loading is deterministic and independent of filesystem iteration."""
    base = Path(dataset_dir)
    if not base.is_dir():
        raise DatasetError(f"dataset directory not found: {base}")
    entities = _read_names(base / "entities.txt")
    relations = _read_names(base / "relations.txt")
    ent_id = {name: i for i, name in enumerate(entities)}
    rel_id = {name: i for i, name in enumerate(relations)}
    splits = {name: _read_triples(base / f"{name}.tsv", ent_id, rel_id)
              for name in ("train", "valid", "test")}
    seen: dict[tuple[int, int, int], str] = {}
    for name, arr in splits.items():
        for row in map(tuple, arr.tolist()):
            if row in seen and seen[row] != name:
                raise DatasetError(f"triple {row} appears in both "
                                   f"'{seen[row]}' and '{name}' splits")
            seen[row] = name
    visual, vis_missing = _read_features(base, "visual", len(entities))
    textual, txt_missing = _read_features(base, "textual", len(entities))
    return Mmkg(entities=entities, relations=relations, ent_id=ent_id,
                rel_id=rel_id, train=splits["train"], valid=splits["valid"],
                test=splits["test"], visual=visual, textual=textual,
                visual_missing=vis_missing, textual_missing=txt_missing)


def write_mmkg(dataset_dir, entities: list[str], relations: list[str],
               train: Array, valid: Array, test: Array,
               visual: Array, textual: Array,
               visual_missing: Array | None = None,
               textual_missing: Array | None = None) -> None:
    """Serialize a dataset in the directory layout load_mmkg expects."""
    base = Path(dataset_dir)
    base.mkdir(parents=True, exist_ok=True)
    for fname, names in (("entities.txt", entities), ("relations.txt", relations)):
        with open(base / fname, "w", encoding="utf-8") as fh:
            for name in names:
                fh.write(name + "\n")
    for fname, arr in (("train.tsv", train), ("valid.tsv", valid),
                       ("test.tsv", test)):
        with open(base / fname, "w", encoding="utf-8") as fh:
            for h, r, t in np.asarray(arr).reshape(-1, 3):
                fh.write(f"{entities[h]}\t{relations[r]}\t{entities[t]}\n")
    for stem, feat, missing in (("visual", visual, visual_missing),
                                ("textual", textual, textual_missing)):
        feat = np.asarray(feat, dtype=np.float64).copy()
        if missing is None:
            missing = np.zeros(len(entities), dtype=bool)
        missing = np.asarray(missing, dtype=bool)
        feat[missing] = 0.0
        feat.astype("<f4").tofile(base / f"{stem}.f32")
        meta = {"rows": int(feat.shape[0]), "cols": int(feat.shape[1]),
                "masked_row_indices": [int(i) for i in np.nonzero(missing)[0]]}
        with open(base / f"{stem}.json", "w", encoding="utf-8") as fh:
            json.dump(meta, fh, separators=(",", ":"))
            fh.write("\n")


@dataclass
class FilterIndex:
    """Observed-triple lookup over train + valid + test, keyed both ways."""

    tails_by_hr: dict[tuple[int, int], set[int]]
    heads_by_rt: dict[tuple[int, int], set[int]]

    def contains(self, h: int, r: int, t: int) -> bool:
        return t in self.tails_by_hr.get((h, r), ())

    def tails(self, h: int, r: int) -> Array:
        return np.fromiter(sorted(self.tails_by_hr.get((h, r), ())), dtype=np.int64)

    def heads(self, r: int, t: int) -> Array:
        return np.fromiter(sorted(self.heads_by_rt.get((r, t), ())), dtype=np.int64)


def build_filter_index(kg: Mmkg) -> FilterIndex:
    tails: dict[tuple[int, int], set[int]] = {}
    heads: dict[tuple[int, int], set[int]] = {}
    for arr in (kg.train, kg.valid, kg.test):
        for h, r, t in arr.tolist():
            tails.setdefault((h, r), set()).add(t)
            heads.setdefault((r, t), set()).add(h)
    return FilterIndex(tails_by_hr=tails, heads_by_rt=heads)


@dataclass
class BernoulliStats:
    """Per-relation mean tails-per-head and heads-per-tail over the train
    split. Relations absent from train get the neutral value 1.0."""

    tph: Array  # (n_rel,)
    hpt: Array

    def head_corruption_prob(self, r: int) -> float:
        return float(self.tph[r] / (self.tph[r] + self.hpt[r]))


def bernoulli_stats(kg: Mmkg) -> BernoulliStats:
    if len(kg.train) == 0:
        raise ValueError("bernoulli_stats requires a nonempty train split")
    n_rel = kg.n_rel
    counts = np.bincount(kg.train[:, 1], minlength=n_rel).astype(float)
    hr = np.unique(kg.train[:, [1, 0]], axis=0)  # distinct (r, head)
    rt = np.unique(kg.train[:, [1, 2]], axis=0)  # distinct (r, tail)
    n_heads = np.bincount(hr[:, 0], minlength=n_rel).astype(float)
    n_tails = np.bincount(rt[:, 0], minlength=n_rel).astype(float)
    tph = np.ones(n_rel)
    hpt = np.ones(n_rel)
    seen = counts > 0
    tph[seen] = counts[seen] / n_heads[seen]
    hpt[seen] = counts[seen] / n_tails[seen]
    return BernoulliStats(tph=tph, hpt=hpt)
