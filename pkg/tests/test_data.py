import numpy as np
import pytest

from diffkge.data import (DatasetError, bernoulli_stats, build_filter_index,
                          load_mmkg, write_mmkg)
from diffkge.nn import make_rng
from tests.conftest import make_kg


def write_toy(tmp_path, train, valid=(), test=(), entities=("a", "b", "c"),
              relations=("r",), d_vis=2, d_txt=2, vis_missing=()):
    n = len(entities)
    rng = make_rng(0, "toy-feat")
    write_mmkg(tmp_path, list(entities), list(relations),
               np.asarray(train, dtype=np.int64).reshape(-1, 3),
               np.asarray(valid, dtype=np.int64).reshape(-1, 3),
               np.asarray(test, dtype=np.int64).reshape(-1, 3),
               rng.standard_normal((n, d_vis)),
               rng.standard_normal((n, d_txt)),
               visual_missing=np.isin(np.arange(n), list(vis_missing)),
               )


def test_toy_dataset_counts(tmp_path):
    write_toy(tmp_path, train=[(0, 0, 1), (1, 0, 2)])
    kg = load_mmkg(tmp_path)
    assert kg.n_ent == 3
    assert kg.n_rel == 1
    assert len(kg.train) == 2 and len(kg.valid) == 0 and len(kg.test) == 0
    assert kg.train.tolist() == [[0, 0, 1], [1, 0, 2]]


def test_full_scale_metadata_counts(tmp_path):
    # dataset shaped like the largest published multimodal KG benchmark:
    # 12842 entities, 279 relations, 79222/9902/9904 triples
    n_ent, n_rel = 12842, 279
    sizes = (79222, 9902, 9904)
    rng = make_rng(9, "big")
    want = sum(sizes)
    cols = rng.integers(0, [[n_ent, n_rel, n_ent]], size=(int(want * 1.3), 3))
    triples = np.unique(cols, axis=0)
    rng.shuffle(triples)
    assert len(triples) >= want
    train = triples[:sizes[0]]
    valid = triples[sizes[0]:sizes[0] + sizes[1]]
    test = triples[sizes[0] + sizes[1]:want]
    entities = [f"e{i}" for i in range(n_ent)]
    relations = [f"r{i}" for i in range(n_rel)]
    write_mmkg(tmp_path, entities, relations, train, valid, test,
               np.zeros((n_ent, 2)), np.zeros((n_ent, 2)))
    kg = load_mmkg(tmp_path)
    assert (kg.n_ent, kg.n_rel) == (n_ent, n_rel)
    assert (len(kg.train), len(kg.valid), len(kg.test)) == sizes


def test_masked_visual_row_zeroed_with_warning(tmp_path):
    write_toy(tmp_path, train=[(0, 0, 1)], vis_missing=(2,))
    with pytest.warns(UserWarning, match="lack this modality"):
        kg = load_mmkg(tmp_path)
    assert kg.visual_missing.tolist() == [False, False, True]
    assert np.array_equal(kg.visual[2], np.zeros(2))
    assert not kg.textual_missing.any()


def test_missing_file_error(tmp_path):
    write_toy(tmp_path, train=[(0, 0, 1)])
    (tmp_path / "relations.txt").unlink()
    with pytest.raises(DatasetError, match="missing file"):
        load_mmkg(tmp_path)


def test_unknown_entity_error(tmp_path):
    write_toy(tmp_path, train=[(0, 0, 1)])
    with open(tmp_path / "train.tsv", "a", encoding="utf-8") as fh:
        fh.write("zz\tr\ta\n")
    with pytest.raises(DatasetError, match="unknown entity 'zz'"):
        load_mmkg(tmp_path)


def test_feature_row_count_mismatch(tmp_path):
    write_toy(tmp_path, train=[(0, 0, 1)])
    np.zeros(4, dtype="<f4").tofile(tmp_path / "visual.f32")
    with pytest.raises(DatasetError, match="expected .* floats"):
        load_mmkg(tmp_path)


def test_split_overlap_rejected(tmp_path):
    write_toy(tmp_path, train=[(0, 0, 1)], valid=[(0, 0, 1)])
    with pytest.raises(DatasetError, match="both"):
        load_mmkg(tmp_path)


def test_vocabulary_round_trip(tmp_path):
    kg = make_kg(n_ent=9, n_rel=2, seed=5)
    write_mmkg(tmp_path, kg.entities, kg.relations, kg.train, kg.valid,
               kg.test, kg.visual, kg.textual)
    again = load_mmkg(tmp_path)
    assert again.entities == kg.entities
    assert again.relations == kg.relations
    assert again.ent_id == kg.ent_id
    assert np.array_equal(again.train, kg.train)
    # ids are file-order, so a second load is identical too
    third = load_mmkg(tmp_path)
    assert third.ent_id == again.ent_id


class TestFilterIndex:
    def test_membership_true_for_valid_split_triple(self, tiny_kg):
        filt = build_filter_index(tiny_kg)
        h, r, t = tiny_kg.valid[0]
        assert filt.contains(h, r, t)

    def test_membership_false_for_absent_triple(self, tiny_kg):
        filt = build_filter_index(tiny_kg)
        observed = {tuple(x) for x in
                    np.concatenate([tiny_kg.train, tiny_kg.valid,
                                    tiny_kg.test]).tolist()}
        for h in range(tiny_kg.n_ent):
            if (h, 0, 0) not in observed:
                assert not filt.contains(h, 0, 0)
                break

    def test_matches_brute_force_scan(self):
        kg = make_kg(n_train=34, n_valid=8, n_test=8, seed=77)
        filt = build_filter_index(kg)
        observed = {tuple(x) for x in
                    np.concatenate([kg.train, kg.valid, kg.test]).tolist()}
        for h in range(kg.n_ent):
            for r in range(kg.n_rel):
                for t in range(kg.n_ent):
                    assert filt.contains(h, r, t) == ((h, r, t) in observed)
                    expect_tails = sorted(tt for (hh, rr, tt) in observed
                                          if hh == h and rr == r)
                    assert filt.tails(h, r).tolist() == expect_tails


class TestBernoulliStats:
    def base_kg(self, triples, n_ent=4, n_rel=2):
        kg = make_kg(n_ent=n_ent, n_rel=n_rel, n_train=1, n_valid=1,
                     n_test=1, seed=3)
        kg.train = np.asarray(triples, dtype=np.int64).reshape(-1, 3)
        return kg

    def test_hand_counted_example(self):
        # relation 0: {(a, r, b), (a, r, c)} -> tph 2, hpt 1
        kg = self.base_kg([(0, 0, 1), (0, 0, 2)])
        stats = bernoulli_stats(kg)
        assert stats.tph[0] == 2.0
        assert stats.hpt[0] == 1.0
        assert stats.head_corruption_prob(0) == pytest.approx(2 / 3)

    def test_single_triple_relation(self):
        kg = self.base_kg([(1, 1, 2)])
        stats = bernoulli_stats(kg)
        assert stats.tph[1] == 1.0 and stats.hpt[1] == 1.0

    def test_random_fixture_matches_recount(self):
        kg = make_kg(n_ent=15, n_rel=4, n_train=100, n_valid=5, n_test=5,
                     seed=21)
        stats = bernoulli_stats(kg)
        for r in range(kg.n_rel):
            rows = [tr for tr in kg.train.tolist() if tr[1] == r]
            if not rows:
                assert stats.tph[r] == 1.0 and stats.hpt[r] == 1.0
                continue
            heads = {h for h, _, _ in rows}
            tails = {t for _, _, t in rows}
            assert stats.tph[r] == pytest.approx(len(rows) / len(heads))
            assert stats.hpt[r] == pytest.approx(len(rows) / len(tails))
            assert stats.tph[r] >= 1.0 and stats.hpt[r] >= 1.0

    def test_empty_train_rejected(self, tiny_kg):
        tiny_kg.train = np.empty((0, 3), dtype=np.int64)
        with pytest.raises(ValueError, match="nonempty"):
            bernoulli_stats(tiny_kg)
