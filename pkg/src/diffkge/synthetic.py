"""Cluster-planted synthetic multimodal KG for desk-scale experiments.

Entities carry latent cluster ids. Each relation maps head clusters to tail
clusters through a fixed permutation; most triples follow their relation's
rule and a small fraction are uniform noise. Modality features are the
entity's cluster centroid plus noise, so the visual/textual signal genuinely
predicts link structure.

Alongside the dataset files, meta.json records the cluster assignment and
rule table so the planted structure can be re-verified independently.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from .data import write_mmkg
from .nn import make_rng

RULE_FOLLOW_P = 0.95
FEATURE_NOISE = 0.3
SPLIT_FRACTIONS = (0.8, 0.1, 0.1)


def make_synthetic(n_entities: int, n_relations: int, n_triples: int,
                   d_vis: int, d_txt: int, seed: int, out_dir) -> dict:
    """Write a synthetic dataset into out_dir; returns the meta dict."""
    for name, v in (("n_entities", n_entities), ("n_relations", n_relations),
                    ("n_triples", n_triples), ("d_vis", d_vis),
                    ("d_txt", d_txt)):
        if int(v) < 1:
            raise ValueError(f"{name} must be >= 1, got {v}")
    n_entities, n_relations, n_triples = map(int, (n_entities, n_relations,
                                                   n_triples))
    if n_entities < 2:
        raise ValueError("need at least 2 entities to form triples")
    rng = make_rng(seed, "synthetic")
    n_clusters = max(2, min(10, n_entities // 20)) if n_entities >= 40 else 2
    clusters = rng.integers(0, n_clusters, size=n_entities)
    # every cluster needs at least one member so rules always have targets
    for c in range(n_clusters):
        if not (clusters == c).any():
            clusters[rng.integers(0, n_entities)] = c
    members = [np.nonzero(clusters == c)[0] for c in range(n_clusters)]
    rules = np.stack([rng.permutation(n_clusters) for _ in range(n_relations)])

    triples: list[tuple[int, int, int]] = []
    seen: set[tuple[int, int, int]] = set()
    attempts = 0
    max_attempts = 50 * n_triples
    while len(triples) < n_triples and attempts < max_attempts:
        attempts += 1
        r = int(rng.integers(0, n_relations))
        h = int(rng.integers(0, n_entities))
        if rng.random() < RULE_FOLLOW_P:
            target = members[rules[r][clusters[h]]]
            t = int(target[rng.integers(0, len(target))])
        else:
            t = int(rng.integers(0, n_entities))
        key = (h, r, t)
        if key in seen:
            continue
        seen.add(key)
        triples.append(key)
    if len(triples) < n_triples:
        raise ValueError(f"graph too small for {n_triples} distinct triples")

    arr = np.asarray(triples, dtype=np.int64)
    order = rng.permutation(len(arr))
    arr = arr[order]
    n_train = int(round(SPLIT_FRACTIONS[0] * len(arr)))
    n_valid = int(round(SPLIT_FRACTIONS[1] * len(arr)))
    train, valid, test = (arr[:n_train], arr[n_train:n_train + n_valid],
                          arr[n_train + n_valid:])

    def features(width: int) -> np.ndarray:
        centroids = rng.standard_normal((n_clusters, width))
        return (centroids[clusters]
                + FEATURE_NOISE * rng.standard_normal((n_entities, width)))

    visual = features(int(d_vis))
    textual = features(int(d_txt))

    out_dir = Path(out_dir)
    entities = [f"e{i:05d}" for i in range(n_entities)]
    relations = [f"r{i:03d}" for i in range(n_relations)]
    write_mmkg(out_dir, entities, relations, train, valid, test,
               visual, textual)
    meta = {"n_clusters": n_clusters,
            "clusters": [int(c) for c in clusters],
            "rules": [[int(c) for c in row] for row in rules],
            "rule_follow_p": RULE_FOLLOW_P,
            "seed": int(seed)}
    with open(out_dir / "meta.json", "w", encoding="utf-8") as fh:
        json.dump(meta, fh, separators=(",", ":"))
        fh.write("\n")
    return meta
