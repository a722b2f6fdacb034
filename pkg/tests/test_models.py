import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from diffkge.models import (KINDS, condition, energy, energy_grads,
                            energy_rows, energy_rows_grads, init_space,
                            materialize_phases, modality_embed, modality_rows,
                            phase_grad_from_materialized, rel_vec)
from diffkge.nn import finite_diff_grad, make_rng, rel_error
from tests.conftest import make_kg


class TestEnergy:
    def test_translation_exact_composition_is_zero(self):
        h = np.array([0.5, -1.0, 2.0])
        r = np.array([0.1, 0.2, -0.3])
        assert energy("translation", h, r, h + r) == 0.0

    def test_rotation_identity_relation(self):
        h = np.array([0.3, -0.4, 1.0, 0.25])
        r = materialize_phases(np.zeros(2))
        assert energy("rotation", h, r, h) == pytest.approx(0.0, abs=1e-15)

    def test_bilinear_hand_value(self):
        e = energy("bilinear", np.array([1.0, 2.0]), np.array([1.0, 1.0]),
                   np.array([3.0, -1.0]))
        assert e == pytest.approx(-1.0)

    def test_norm_kinds_nonnegative(self):
        rng = make_rng(0, "nonneg")
        for _ in range(25):
            d = 2 * int(rng.integers(1, 5))
            h, t = rng.standard_normal((2, d))
            assert energy("translation", h, rng.standard_normal(d), t) >= 0.0
            r = materialize_phases(rng.uniform(-np.pi, np.pi, d // 2))
            assert energy("rotation", h, r, t) >= 0.0

    def test_dimension_mismatch(self):
        with pytest.raises(ValueError, match="dimension mismatch"):
            energy("translation", np.zeros(3), np.zeros(3), np.zeros(4))

    def test_unknown_kind(self):
        with pytest.raises(ValueError, match="unknown model kind"):
            energy("quaternion", np.zeros(2), np.zeros(2), np.zeros(2))


def test_materialization_unit_modulus():
    rng = make_rng(1, "phases")
    phases = rng.uniform(-np.pi, np.pi, size=(50, 8))
    mat = materialize_phases(phases)
    mod = np.sqrt(mat[..., 0::2] ** 2 + mat[..., 1::2] ** 2)
    assert np.max(np.abs(mod - 1.0)) <= 1e-12


class TestEnergyGradients:
    @pytest.mark.parametrize("kind", KINDS)
    def test_matches_finite_differences(self, kind):
        rng = make_rng(2, "egrad", kind)
        for _ in range(10):
            d = 2 * int(rng.integers(1, 5))  # even for rotation
            h, t = rng.standard_normal((2, d))
            if kind == "rotation":
                r = materialize_phases(rng.uniform(-np.pi, np.pi, d // 2))
            else:
                r = rng.standard_normal(d)
            _, gh, gr, gt = energy_grads(kind, h, r, t)
            for vec, grad, wrap in (
                    (h, gh, lambda v: energy(kind, v, r, t)),
                    (r, gr, lambda v: energy(kind, h, v, t)),
                    (t, gt, lambda v: energy(kind, h, r, v))):
                fd = finite_diff_grad(wrap, vec.copy())
                assert rel_error(grad, fd) <= 1e-5

    def test_phase_chain_rule(self):
        rng = make_rng(3, "pgrad")
        d = 6
        h, t = rng.standard_normal((2, d))
        phases = rng.uniform(-np.pi, np.pi, d // 2)
        _, _, gr, _ = energy_grads("rotation", h, materialize_phases(phases), t)
        gph = phase_grad_from_materialized(phases, gr)
        fd = finite_diff_grad(
            lambda p: energy("rotation", h, materialize_phases(p), t),
            phases.copy())
        assert rel_error(gph, fd) <= 1e-6

    def test_need_filters_outputs(self):
        rng = make_rng(4, "need")
        h, r, t = rng.standard_normal((3, 4))
        e, gh, gr, gt = energy_rows_grads("translation", h[None], r[None],
                                          t[None], need=("r",))
        assert gh is None and gt is None and gr is not None


class TestCondition:
    def test_translation_zero_relation_identity(self):
        x = np.array([1.0, -2.0, 0.5])
        assert np.array_equal(condition("translation", x, np.zeros(3)), x)

    def test_bilinear_ones_identity(self):
        x = np.array([1.0, -2.0, 0.5])
        assert np.array_equal(condition("bilinear", x, np.ones(3)), x)

    def test_rotation_hand_complex_product(self):
        # (1+0i, 0+1i) o (0+1i, 0+1i) = (0+1i, -1+0i)
        x_e = np.array([1.0, 0.0, 0.0, 1.0])
        x_r = np.array([0.0, 1.0, 0.0, 1.0])
        got = condition("rotation", x_e, x_r)
        assert np.allclose(got, [0.0, 1.0, -1.0, 0.0], atol=1e-15)

    def test_rotation_identity_element(self):
        x = np.array([0.2, -0.7, 1.5, 0.25])
        ident = materialize_phases(np.zeros(2))
        assert np.allclose(condition("rotation", x, ident), x)

    def test_invert_is_algebraic_inverse(self):
        rng = make_rng(5, "inv")
        x = rng.standard_normal(6)
        r = rng.standard_normal(6)
        # translation: (x + r) inverted recovers x
        assert np.allclose(
            condition("translation", condition("translation", x, r), r,
                      invert=True), x)
        # rotation: multiplying by conj(r) undoes a unit rotation
        rm = materialize_phases(rng.uniform(-np.pi, np.pi, 3))
        assert np.allclose(
            condition("rotation", condition("rotation", x, rm), rm,
                      invert=True), x, atol=1e-12)

    def test_dim_mismatch(self):
        with pytest.raises(ValueError, match="dimension mismatch"):
            condition("translation", np.zeros(3), np.zeros(2))


class TestEmbeddingSpace:
    def make_space(self, kind="rotation", dim=6, **kw):
        kg = make_kg(n_ent=8, n_rel=3, d_vis=5, d_txt=4, seed=10, **kw)
        return kg, init_space(kg, kind, dim, make_rng(0, "space"))

    def test_init_ranges(self):
        _, space = self.make_space("translation", dim=16)
        lim = 6.0 / np.sqrt(16)
        assert np.abs(space.ent).max() <= lim
        assert np.abs(space.rel).max() <= lim
        _, space = self.make_space("rotation", dim=16)
        assert space.rel.shape == (3, 8)
        assert np.abs(space.rel).max() <= np.pi

    def test_rotation_needs_even_dim(self):
        kg = make_kg(seed=11)
        with pytest.raises(ValueError, match="even"):
            init_space(kg, "rotation", 5, make_rng(0, "space"))

    def test_rel_vec_rotation_unit_modulus(self):
        _, space = self.make_space("rotation")
        r = rel_vec(space, 1)
        mod = np.sqrt(r[0::2] ** 2 + r[1::2] ** 2)
        assert np.max(np.abs(mod - 1.0)) <= 1e-12

    def test_zero_projection_gives_zero(self):
        _, space = self.make_space()
        space.vis_w[:] = 0.0
        space.vis_b[:] = 0.0
        assert np.array_equal(modality_embed(space, 3, "vis"), np.zeros(6))

    def test_masked_entity_uses_absent_embedding(self):
        kg, space = self.make_space(vis_missing=(2,), txt_missing=(4,))
        assert np.array_equal(modality_embed(space, 2, "vis"),
                              space.absent_vis)
        assert np.array_equal(modality_embed(space, 4, "text"),
                              space.absent_txt)
        rows = modality_rows(space, np.array([1, 2]), "vis")
        assert np.array_equal(rows[1], space.absent_vis)
        assert not np.array_equal(rows[0], space.absent_vis)

    def test_identity_projection_returns_feature_row(self):
        kg = make_kg(n_ent=6, n_rel=2, d_vis=6, d_txt=3, seed=12)
        space = init_space(kg, "translation", 6, make_rng(1, "space"))
        space.vis_w[:] = np.eye(6)
        space.vis_b[:] = 0.0
        assert np.allclose(modality_embed(space, 4, "vis"), kg.visual[4])

    def test_struc_is_table_row(self):
        _, space = self.make_space()
        assert np.array_equal(modality_embed(space, 5, "struc"), space.ent[5])

    def test_invalid_ids(self):
        _, space = self.make_space()
        with pytest.raises(ValueError, match="invalid entity id"):
            modality_embed(space, 99, "vis")
        with pytest.raises(ValueError, match="invalid relation id"):
            rel_vec(space, 99)


@settings(max_examples=40, deadline=None)
@given(st.integers(1, 6).flatmap(
    lambda half: st.lists(st.floats(-5, 5), min_size=4 * half,
                          max_size=4 * half)))
def test_energy_rows_agree_with_scalar(vals):
    arr = np.asarray(vals)
    d = arr.size // 2
    if d % 2:
        d -= 1
    if d < 2:
        return
    h, t = arr[:d], arr[d:2 * d]
    r = materialize_phases(np.linspace(-1, 1, d // 2))
    rows = energy_rows("rotation", h[None], r[None], t[None])
    assert rows[0] == pytest.approx(energy("rotation", h, r, t), abs=1e-12)
