import os
import sys
from pathlib import Path

# Keep BLAS pools to one thread: the heavy tests overlap a noise-producer
# process with the math, and this box has few cores. Must happen before
# numpy's first import.
for _var in ("OPENBLAS_NUM_THREADS", "OMP_NUM_THREADS", "MKL_NUM_THREADS"):
    os.environ.setdefault(_var, "1")

SRC = Path(__file__).resolve().parents[1] / "src"
if str(SRC) not in sys.path:
    sys.path.insert(0, str(SRC))

import numpy as np
import pytest

from diffkge.data import Mmkg
from diffkge.nn import make_rng


def make_kg(n_ent=12, n_rel=3, n_train=40, n_valid=8, n_test=8, d_vis=5,
            d_txt=4, seed=123, vis_missing=(), txt_missing=()) -> Mmkg:
    """Random in-memory KG with disjoint splits."""
    rng = make_rng(seed, "test-kg")
    want = n_train + n_valid + n_test
    triples = set()
    while len(triples) < want:
        triples.add((int(rng.integers(n_ent)), int(rng.integers(n_rel)),
                     int(rng.integers(n_ent))))
    arr = np.array(sorted(triples), dtype=np.int64)
    arr = arr[rng.permutation(len(arr))]
    vis_miss = np.zeros(n_ent, dtype=bool)
    txt_miss = np.zeros(n_ent, dtype=bool)
    vis_miss[list(vis_missing)] = True
    txt_miss[list(txt_missing)] = True
    visual = rng.standard_normal((n_ent, d_vis))
    textual = rng.standard_normal((n_ent, d_txt))
    visual[vis_miss] = 0.0
    textual[txt_miss] = 0.0
    return Mmkg(
        entities=[f"e{i}" for i in range(n_ent)],
        relations=[f"r{i}" for i in range(n_rel)],
        ent_id={f"e{i}": i for i in range(n_ent)},
        rel_id={f"r{i}": i for i in range(n_rel)},
        train=arr[:n_train],
        valid=arr[n_train:n_train + n_valid],
        test=arr[n_train + n_valid:want],
        visual=visual, textual=textual,
        visual_missing=vis_miss, textual_missing=txt_miss)


@pytest.fixture
def tiny_kg():
    return make_kg()
