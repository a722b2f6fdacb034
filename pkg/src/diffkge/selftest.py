"""Fast built-in invariant suite, runnable without pytest via the CLI
`selftest` subcommand. Each check prints one line; the suite passes only if
every check does."""

from __future__ import annotations

import io
import sys

import numpy as np

from . import checkpoint, data, diffusion, models, negatives, nn, training


def _tiny_kg(n_ent=12, n_rel=3, n_tr=40, seed=7) -> data.Mmkg:
    rng = nn.make_rng(seed, "selftest-kg")
    triples = set()
    while len(triples) < n_tr:
        triples.add((int(rng.integers(n_ent)), int(rng.integers(n_rel)),
                     int(rng.integers(n_ent))))
    arr = np.array(sorted(triples), dtype=np.int64)
    arr = arr[rng.permutation(len(arr))]
    k = len(arr) // 5
    return data.Mmkg(
        entities=[f"e{i}" for i in range(n_ent)],
        relations=[f"r{i}" for i in range(n_rel)],
        ent_id={f"e{i}": i for i in range(n_ent)},
        rel_id={f"r{i}": i for i in range(n_rel)},
        train=arr[: len(arr) - 2 * k], valid=arr[len(arr) - 2 * k: len(arr) - k],
        test=arr[len(arr) - k:],
        visual=rng.standard_normal((n_ent, 5)),
        textual=rng.standard_normal((n_ent, 4)),
        visual_missing=np.zeros(n_ent, dtype=bool),
        textual_missing=np.zeros(n_ent, dtype=bool))


def check_schedule():
    s = diffusion.make_schedule(100)
    assert np.all(s.alpha[1:] > 0) and np.all(s.alpha[1:] < 1)
    assert np.all(np.diff(s.beta_bar[1:]) < 0) and s.beta_bar[0] == 1.0
    s2 = diffusion.make_schedule(2)
    assert abs(s2.beta_bar[2] - 0.9999 * 0.98) < 1e-15


def check_positional_embedding():
    pe = diffusion.positional_embedding(0, 6)
    assert np.allclose(pe, [0, 1, 0, 1, 0, 1])
    pe = diffusion.positional_embedding(1, 4)
    expect = [np.sin(1), np.cos(1), np.sin(1000 ** -0.5), np.cos(1000 ** -0.5)]
    assert np.allclose(pe, expect, atol=1e-12)


def check_one_step_reconstruction():
    rng = nn.make_rng(0, "selftest-recon")
    for total in (20, 50, 70, 100):
        s = diffusion.make_schedule(total)
        x0 = rng.standard_normal(16)
        eps = rng.standard_normal(16)
        x1 = diffusion.forward_noise(s, x0, 1, eps)
        back = diffusion.reverse_final(s, x1, eps)
        assert np.max(np.abs(back - x0)) <= 1e-9


def check_forward_noise_moments():
    s = diffusion.make_schedule(50)
    rng = nn.make_rng(1, "selftest-moments")
    x0 = rng.standard_normal(8)
    t = 25
    eps = rng.standard_normal((20000, 8))
    samples = diffusion.forward_noise(s, x0, t, eps)
    bb = s.beta_bar[t]
    assert np.max(np.abs(samples.mean(0) - np.sqrt(bb) * x0)) < 4 * np.sqrt(1 - bb) / np.sqrt(20000)
    assert np.max(np.abs(samples.var(axis=0) / (1 - bb) - 1)) < 0.05


def check_mlp_gradients():
    rng = nn.make_rng(2, "selftest-mlp")
    p = nn.mlp_init(4, 3, 2, rng)
    x = rng.standard_normal(4)
    og = rng.standard_normal(2)
    grads, dx = nn.mlp_backward(p, x, og)

    def loss_of_x(v):
        return float(nn.mlp_forward(p, v) @ og)

    fd = nn.finite_diff_grad(loss_of_x, x.copy())
    assert nn.rel_error(dx, fd) < 1e-6


def check_energy_gradients():
    rng = nn.make_rng(3, "selftest-energy")
    for kind in models.KINDS:
        h = rng.standard_normal(6)
        t = rng.standard_normal(6)
        r = (models.materialize_phases(rng.uniform(-np.pi, np.pi, 3))
             if kind == "rotation" else rng.standard_normal(6))
        _, gh, _, gt = models.energy_grads(kind, h, r, t)
        fd_h = nn.finite_diff_grad(
            lambda v: models.energy(kind, v, r, t), h.copy())
        fd_t = nn.finite_diff_grad(
            lambda v: models.energy(kind, h, r, v), t.copy())
        assert nn.rel_error(gh, fd_h) < 1e-6 and nn.rel_error(gt, fd_t) < 1e-6


def check_condition_identities():
    x = np.array([0.3, -1.2, 0.5, 2.0])
    assert np.allclose(models.condition("translation", x, np.zeros(4)), x)
    assert np.allclose(models.condition("bilinear", x, np.ones(4)), x)
    ident = models.materialize_phases(np.zeros(2))
    assert np.allclose(models.condition("rotation", x, ident), x)


def check_level_weights_and_margins():
    steps = negatives.default_steps(100)
    assert steps == (5, 10, 20, 50)
    w = [negatives.level_weight(t, 100, steps) for t in steps]
    assert abs(sum(w) - 1.0) <= 1e-12
    assert np.allclose(w, [1 / 17, 2 / 17, 4 / 17, 10 / 17], atol=1e-12)
    assert negatives.level_margin(1, 100, 2.0, 8.0) == 2.0
    assert negatives.level_margin(100, 100, 2.0, 8.0) == 8.0


def check_adam_first_step():
    params = {"w": np.array([0.5])}
    st = nn.adam_init(params, lr=0.1)
    nn.adam_step(st, params, {"w": np.array([1.0])})
    assert abs(params["w"][0] - (0.5 - 0.1 / (1 + 1e-8))) < 1e-15


def check_loss_hand_values():
    assert abs(training.total_loss(1.0, 0.5, 1.0) - 1.5) < 1e-15
    # sigma(0) = 1/2 twice
    v = training._softplus(0.0) * 2
    assert abs(v - 2 * np.log(2)) < 1e-12


def check_filter_and_bernoulli():
    kg = _tiny_kg()
    filt = data.build_filter_index(kg)
    allt = np.concatenate([kg.train, kg.valid, kg.test])
    for h, r, t in allt[:10].tolist():
        assert filt.contains(h, r, t)
    assert not filt.contains(0, 0, kg.n_ent - 1) or \
        (0, 0, kg.n_ent - 1) in {tuple(x) for x in allt.tolist()}
    stats = data.bernoulli_stats(kg)
    assert np.all(stats.tph >= 1) and np.all(stats.hpt >= 1)


def check_checkpoint_roundtrip(tmpdir="/tmp"):
    import tempfile
    rng = nn.make_rng(4, "selftest-ckpt")
    tensors = {"a": rng.standard_normal((3, 2)), "b": rng.standard_normal(5)}
    with tempfile.NamedTemporaryFile(suffix=".ckpt") as fh:
        checkpoint.save_checkpoint(fh.name, tensors, meta={"x": 1})
        loaded, meta = checkpoint.load_checkpoint(fh.name)
    assert meta == {"x": 1}
    for k in tensors:
        assert np.array_equal(tensors[k], loaded[k])


def check_chain_shapes():
    rng = nn.make_rng(5, "selftest-chain")
    s = diffusion.make_schedule(20)
    den = diffusion.init_denoiser(4, rng)
    cond = rng.standard_normal((3, 2, 4))
    out = diffusion.reverse_chain(den, s, cond, [1, 2, 10], rng)
    assert set(out) == {1, 2, 10}
    for v in out.values():
        assert v.shape == (3, 2, 4) and np.all(np.isfinite(v))


CHECKS = [
    ("noise schedule", check_schedule),
    ("positional embedding", check_positional_embedding),
    ("one-step reconstruction", check_one_step_reconstruction),
    ("forward-noise moments", check_forward_noise_moments),
    ("mlp gradients", check_mlp_gradients),
    ("energy gradients", check_energy_gradients),
    ("condition identities", check_condition_identities),
    ("level weights and margins", check_level_weights_and_margins),
    ("adam first step", check_adam_first_step),
    ("loss hand values", check_loss_hand_values),
    ("filter index and bernoulli stats", check_filter_and_bernoulli),
    ("checkpoint round-trip", check_checkpoint_roundtrip),
    ("reverse chain shapes", check_chain_shapes),
]


def run_selftest(out=None) -> bool:
    out = out or sys.stderr
    ok = True
    for name, fn in CHECKS:
        try:
            fn()
            print(f"[ok]   {name}", file=out)
        except Exception as exc:  # noqa: BLE001 - report and continue
            ok = False
            buf = io.StringIO()
            print(f"[FAIL] {name}: {type(exc).__name__}: {exc}", file=buf)
            print(buf.getvalue(), end="", file=out)
    print("selftest: " + ("all checks passed" if ok else "FAILURES above"),
          file=out)
    return ok
