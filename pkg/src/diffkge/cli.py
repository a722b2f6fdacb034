"""Command-line entry point.

Subcommands: train, evaluate, generate, make-synthetic, selftest. Every
command is deterministic given identical inputs, seed and thread count.
Errors print a single machine-parsable line ("error: ...") and exit 2 for
bad inputs/configs, 1 for unexpected failures.

Thread count (--threads, or the DHNS_THREADS environment variable) is
applied to the BLAS pools before numpy is imported, which is why all heavy
imports happen inside main().
"""

from __future__ import annotations

import argparse
import json
import os
import sys


def _apply_threads(threads: int | None) -> None:
    if threads is None:
        env = os.environ.get("DHNS_THREADS")
        if env is None:
            return
        try:
            threads = int(env)
        except ValueError as exc:
            raise UsageError(f"DHNS_THREADS must be an integer, got '{env}'") from exc
    if threads < 1:
        raise UsageError(f"--threads must be >= 1, got {threads}")
    for var in ("OPENBLAS_NUM_THREADS", "OMP_NUM_THREADS", "MKL_NUM_THREADS",
                "NUMEXPR_NUM_THREADS"):
        os.environ[var] = str(threads)


class UsageError(ValueError):
    pass


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="diffkge")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="train a model from a JSON config")
    p.add_argument("--config", required=True)
    p.add_argument("--dataset", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=None,
                   help="override the config seed")
    p.add_argument("--threads", type=int, default=None)

    p = sub.add_parser("evaluate", help="filtered MRR / Hits@N on a split")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--dataset", required=True)
    p.add_argument("--split", default="test", choices=["valid", "test"])
    p.add_argument("--out", default=None, help="write JSON here (default stdout)")
    p.add_argument("--threads", type=int, default=None)

    p = sub.add_parser("generate", help="dump generated-negative bundles")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--dataset", required=True)
    p.add_argument("--out", required=True, help="JSON-lines output file")
    p.add_argument("--split", default="test",
                   choices=["train", "valid", "test"])
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--limit", type=int, default=None,
                   help="only the first N triples of the split")
    p.add_argument("--threads", type=int, default=None)

    p = sub.add_parser("make-synthetic", help="emit a cluster-planted dataset")
    p.add_argument("--entities", type=int, required=True)
    p.add_argument("--relations", type=int, required=True)
    p.add_argument("--triples", type=int, required=True)
    p.add_argument("--d-vis", type=int, default=24)
    p.add_argument("--d-txt", type=int, default=16)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)

    p = sub.add_parser("selftest", help="run the built-in invariant suite")
    p.add_argument("--threads", type=int, default=None)

    return parser


def _space_meta(cfg) -> dict:
    return {"kind": cfg.model, "dim": cfg.dim, "config": cfg.to_dict()}


def _save_model(path, space, denoiser, cfg) -> None:
    from .checkpoint import save_checkpoint
    tensors = {f"space.{k}": v for k, v in space.tensors().items()}
    if denoiser is not None:
        tensors.update({f"denoiser.{k}": v for k, v in denoiser.tensors().items()})
    save_checkpoint(path, tensors, meta=_space_meta(cfg))


def _load_model(path, kg):
    from .checkpoint import load_checkpoint
    from .diffusion import DenoiserParams
    from .models import EmbeddingSpace
    from .nn import MlpParams
    tensors, meta = load_checkpoint(path)
    from .training import TrainConfig
    cfg = TrainConfig.from_dict(meta["config"])
    import numpy as np
    space = EmbeddingSpace(
        kind=meta["kind"], dim=int(meta["dim"]),
        ent=tensors["space.ent"], rel=tensors["space.rel"],
        vis_w=tensors["space.vis_w"], vis_b=tensors["space.vis_b"],
        txt_w=tensors["space.txt_w"], txt_b=tensors["space.txt_b"],
        absent_vis=tensors["space.absent_vis"],
        absent_txt=tensors["space.absent_txt"],
        vis_feat=np.asarray(kg.visual, dtype=float),
        txt_feat=np.asarray(kg.textual, dtype=float),
        vis_missing=np.asarray(kg.visual_missing, dtype=bool),
        txt_missing=np.asarray(kg.textual_missing, dtype=bool))
    denoiser = None
    if any(k.startswith("denoiser.") for k in tensors):
        mlps = {}
        for m in ("struc", "vis", "text"):
            mlps[m] = MlpParams(**{
                name: tensors[f"denoiser.{m}.{name}"]
                for name in ("w1", "b1", "w2", "b2", "ln_g", "ln_b")})
        denoiser = DenoiserParams(dim=space.dim, pe_dim=space.dim, **mlps)
    return space, denoiser, cfg


def _cmd_train(args) -> int:
    from pathlib import Path

    from .data import load_mmkg
    from .evaluation import evaluate, format_table
    from .training import TrainConfig, train

    cfg = TrainConfig.from_json(args.config)
    if args.seed is not None:
        cfg.seed = int(args.seed)
    cfg.validate()
    kg = load_mmkg(args.dataset)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    space, denoiser, report = train(kg, cfg)
    _save_model(out / "model.ckpt", space, denoiser, cfg)
    with open(out / "report.json", "w", encoding="utf-8") as fh:
        json.dump(report.to_dict(), fh, separators=(",", ":"))
        fh.write("\n")
    result = evaluate(space, cfg.model, kg, "valid", joint=cfg.eval_joint)
    with open(out / "eval_valid.json", "w", encoding="utf-8") as fh:
        json.dump(result.to_dict(), fh, separators=(",", ":"))
        fh.write("\n")
    print(f"trained {cfg.epochs} epochs in {report.wall_time_s:.1f}s; "
          f"outputs in {out}", file=sys.stderr)
    print(format_table(result), file=sys.stderr)
    return 0


def _cmd_evaluate(args) -> int:
    from .data import load_mmkg
    from .evaluation import evaluate, format_table

    kg = load_mmkg(args.dataset)
    space, _, cfg = _load_model(args.checkpoint, kg)
    result = evaluate(space, cfg.model, kg, args.split, joint=cfg.eval_joint)
    payload = json.dumps(result.to_dict(), separators=(",", ":")) + "\n"
    if args.out:
        with open(args.out, "w", encoding="utf-8") as fh:
            fh.write(payload)
    else:
        sys.stdout.write(payload)
    print(format_table(result), file=sys.stderr)
    return 0


def _cmd_generate(args) -> int:
    from .data import load_mmkg
    from .diffusion import make_schedule
    from .negatives import generate_bundle
    from .nn import make_rng

    kg = load_mmkg(args.dataset)
    space, denoiser, cfg = _load_model(args.checkpoint, kg)
    if denoiser is None:
        raise UsageError("checkpoint has no denoiser (trained with "
                         "no_diffheg); nothing to generate")
    schedule = make_schedule(cfg.total_steps)
    steps = cfg.resolved_steps()
    triples = kg.split(args.split)
    if args.limit is not None:
        triples = triples[:args.limit]
    rng = make_rng(args.seed, "generate-cli")
    with open(args.out, "w", encoding="utf-8") as fh:
        for triple in triples:
            h, r, t = (int(v) for v in triple)
            record = {"head": kg.entities[h], "relation": kg.relations[r],
                      "tail": kg.entities[t], "bundles": {}}
            for side in ("tail", "head"):
                bundle = generate_bundle(
                    denoiser, schedule, space, (h, r, t), side, steps, rng,
                    gamma_min=cfg.margin_min, gamma_max=cfg.margin_max,
                    zero_condition=cfg.no_mmc,
                    reverse_scale_beta=cfg.reverse_scale_beta,
                    noise_scale_alpha=cfg.noise_scale_alpha)
                record["bundles"][side] = {
                    str(step): {
                        "hardness": bundle.hardness[step],
                        "weight": bundle.weights[step],
                        "margin": bundle.margins[step],
                        "embeddings": {m: bundle.embeddings[step][m].tolist()
                                       for m in ("struc", "vis", "text")}}
                    for step in bundle.steps}
            fh.write(json.dumps(record, separators=(",", ":")) + "\n")
    return 0


def _cmd_make_synthetic(args) -> int:
    from .synthetic import make_synthetic

    make_synthetic(args.entities, args.relations, args.triples,
                   args.d_vis, args.d_txt, args.seed, args.out)
    print(f"synthetic dataset written to {args.out}", file=sys.stderr)
    return 0


def _cmd_selftest(args) -> int:
    from .selftest import run_selftest

    return 0 if run_selftest() else 1


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    try:
        _apply_threads(getattr(args, "threads", None))
        import logging
        logging.basicConfig(level=logging.INFO, stream=sys.stderr,
                            format="%(levelname)s %(name)s: %(message)s")
        handler = {"train": _cmd_train, "evaluate": _cmd_evaluate,
                   "generate": _cmd_generate,
                   "make-synthetic": _cmd_make_synthetic,
                   "selftest": _cmd_selftest}[args.command]
        return handler(args)
    except BrokenPipeError:
        return 1
    except Exception as exc:  # noqa: BLE001 - single-line CLI error contract
        kind = type(exc).__name__
        print(f"error: {kind}: {exc}", file=sys.stderr)
        from .data import DatasetError
        from .training import ConfigError
        bad_input = (UsageError, ConfigError, DatasetError, FileNotFoundError,
                     json.JSONDecodeError, KeyError)
        return 2 if isinstance(exc, bad_input) else 1


if __name__ == "__main__":
    sys.exit(main())
