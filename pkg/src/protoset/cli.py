"""Command-line interface.

Subcommands: gen-data, train, eval, partition, grad-check, bench. Exit codes:
0 success, 1 bad input or configuration (including unknown flags), 2 internal
failure. Identical flags and seeds reproduce identical output files.
"""

from __future__ import annotations

import argparse
import json
import sys
import time
import traceback
from pathlib import Path

import numpy as np

from . import figures
from .data import (
    MediaFeature,
    MediaSet,
    SynthConfig,
    generate_synthetic,
    load_dataset,
    load_pairs,
    sample_pairs,
)
from .errors import ProtoSetError
from .matching import prepare_set, score_templates
from .metrics import (
    MetricReport,
    export_curves,
    identification_metrics,
    identification_protocol,
    score_pairs,
    verification_metrics,
)
from .model import init_model, load_checkpoint, save_checkpoint
from .oracle import BRUTE_FORCE_CAP, brute_force_partition, load_distance_csv
from .prototypes import distance_evals, minimize_partition_cost, reset_distance_evals
from .training import (
    TrainConfig,
    audit_case,
    fit,
    grad_check,
    load_config,
    save_config,
    save_history,
)


class _Parser(argparse.ArgumentParser):
    """argparse variant that exits 1 (not 2) on usage errors."""

    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        raise SystemExit(1)


def _build_parser() -> _Parser:
    parser = _Parser(prog="protoset", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", parser_class=_Parser)

    p = sub.add_parser("gen-data", help="write a synthetic multi-mode dataset")
    p.add_argument("--out", required=True, help="output dataset path")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--n-subjects", type=int, default=20)
    p.add_argument("--modes", type=int, default=3)
    p.add_argument("--media-min", type=int, default=12)
    p.add_argument("--media-max", type=int, default=24)
    p.add_argument("--dim", type=int, default=16)
    p.add_argument("--noise", type=float, default=0.05)
    p.add_argument("--offset", type=float, default=0.5)
    p.set_defaults(func=_cmd_gen_data)

    p = sub.add_parser("train", help="train a model and write checkpoint + loss report")
    p.add_argument("--dataset", required=True)
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--config", help="key=value config file")
    p.add_argument("--desk", action="store_true", help="desk-scale sizes (k=8, r=16)")
    p.add_argument("--seed", type=int, help="override the config seed")
    p.add_argument("--epochs", type=int, help="override the config epoch count")
    p.add_argument("--pairs-per-epoch", type=int)
    p.add_argument("--lambda", dest="lam", type=float, help="partition loss weight")
    p.add_argument("--lr-drop-iter", type=int)
    p.set_defaults(func=_cmd_train)

    p = sub.add_parser("eval", help="score a dataset and write metric reports + curves")
    p.add_argument("--dataset", required=True)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--mode", choices=("media", "proto"), default="proto")
    p.add_argument("--pairs", help="verification pairs file (default: sample from the dataset)")
    p.add_argument("--n-pairs", type=int, default=400)
    p.add_argument("--holdout", type=float, default=0.25,
                   help="fraction of subjects left out of the gallery")
    p.set_defaults(func=_cmd_eval)

    p = sub.add_parser("partition", help="partition a distance matrix and compare to brute force")
    p.add_argument("--distances", required=True, help="square distance matrix CSV")
    p.add_argument("--k", type=int, required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--iters", type=int, default=300)
    p.add_argument("--restarts", type=int, default=8)
    p.add_argument("--cap", type=int, default=BRUTE_FORCE_CAP,
                   help="largest instance the exact oracle will enumerate")
    p.set_defaults(func=_cmd_partition)

    p = sub.add_parser("grad-check", help="audit analytic gradients against finite differences")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--coords", type=int, default=100)
    p.add_argument("--step", type=float, default=1e-5)
    p.add_argument("--tol", type=float, default=1e-4)
    p.set_defaults(func=_cmd_grad_check)

    p = sub.add_parser("bench", help="compare media-level and prototype-level scoring cost")
    p.add_argument("--n-media", type=int, default=256)
    p.add_argument("--k", type=int, default=8)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--trials", type=int, default=20)
    p.add_argument("--checkpoint", help="model to benchmark (default: a random desk model)")
    p.set_defaults(func=_cmd_bench)
    return parser


def _cmd_gen_data(args) -> int:
    cfg = SynthConfig(
        n_subjects=args.n_subjects,
        modes_per_subject=args.modes,
        media_range=(args.media_min, args.media_max),
        dim=args.dim,
        mode_noise=args.noise,
        mode_offset=args.offset,
        seed=args.seed,
    )
    ds = generate_synthetic(cfg)
    from .data import save_dataset

    save_dataset(ds, args.out)
    n_media = sum(len(s) for s in ds.sets)
    print(f"wrote {args.out}: {len(ds.sets)} sets, {n_media} media, dim {ds.dim}")
    return 0


def _resolve_train_config(args) -> TrainConfig:
    cfg = TrainConfig.desk() if args.desk else TrainConfig()
    if args.config:
        cfg = load_config(args.config, base=cfg)
    for name in ("seed", "epochs", "pairs_per_epoch", "lam", "lr_drop_iter"):
        value = getattr(args, name)
        if value is not None:
            setattr(cfg, name, value)
    cfg.validate()
    return cfg


def _cmd_train(args) -> int:
    cfg = _resolve_train_config(args)
    ds = load_dataset(args.dataset)
    model, history = fit(ds, cfg)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    save_checkpoint(model, out / "checkpoint.npz")
    save_history(history, out / "loss_history.csv")
    save_config(cfg, out / "config.txt")
    figures.plot_loss(history, out / "loss.png")
    last = history[-1] if history else None
    if last is not None:
        print(
            f"trained {len(history)} iterations: ranking {last.ranking:.6f} "
            f"partition {last.partition:.6f} joint {last.joint:.6f}"
        )
    print(f"wrote {out / 'checkpoint.npz'}, {out / 'loss_history.csv'}, {out / 'loss.png'}")
    return 0


def _cmd_eval(args) -> int:
    ds = load_dataset(args.dataset)
    model = load_checkpoint(args.checkpoint)
    rng = np.random.default_rng(args.seed)
    if args.pairs:
        pairs = load_pairs(args.pairs, ds)
    else:
        pairs = sample_pairs(ds, args.n_pairs, 0.5, rng)
    samples = score_pairs(pairs, model, args.mode)
    verification = verification_metrics(samples)
    gallery, probes = identification_protocol(ds, rng, args.holdout)
    identification = identification_metrics(gallery, probes, model, args.mode)
    report = MetricReport(
        tar_at_far=verification.tar_at_far,
        auc=verification.auc,
        fnir_at_fpir=identification.fnir_at_fpir,
        rank_n=identification.rank_n,
        roc_curve=verification.roc_curve,
        cmc_curve=identification.cmc_curve,
    )
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    export_curves(report, out)
    figures.plot_roc(report, out / "roc.png")
    figures.plot_cmc(report, out / "cmc.png")
    text = json.dumps(report.summary(), indent=2, sort_keys=True)
    (out / "metrics.json").write_text(text + "\n")
    print(text)
    return 0


def _cmd_partition(args) -> int:
    dists = load_distance_csv(args.distances)
    labels, value, _ = minimize_partition_cost(
        dists, args.k, iters=args.iters, restarts=args.restarts, seed=args.seed
    )
    print("labels " + " ".join(str(int(l)) for l in labels))
    print(f"value {value!r}")
    if dists.shape[0] <= args.cap:
        _, best = brute_force_partition(dists, args.k, cap=args.cap)
        print(f"optimum {best!r}")
        print(f"gap {value - best!r}")
    else:
        print(f"optimum unavailable ({dists.shape[0]} media exceeds cap {args.cap})")
    return 0


def _cmd_grad_check(args) -> int:
    model, xa, xb, label, cfg = audit_case(args.seed)
    report = grad_check(
        model, xa, xb, label, cfg,
        n_coords=args.coords, step=args.step, tolerance=args.tol, seed=args.seed,
    )
    for t in report.tensors:
        status = "ok" if t.passed else "FAIL"
        print(f"{t.name:12s} max_rel_err {t.max_rel_err:.3e} over {t.checked} coords [{status}]")
    print(f"gradient audit {'passed' if report.passed else 'FAILED'} at tol {report.tolerance}")
    return 0 if report.passed else 1


def _bench_sets(n_media: int, dim: int, rng) -> tuple[MediaSet, MediaSet]:
    def build(set_id, subject):
        media = [
            MediaFeature(set_id * n_media + i, "image", rng.standard_normal(dim))
            for i in range(n_media)
        ]
        return MediaSet(set_id, subject, media)

    return build(0, 0), build(1, 1)


def _cmd_bench(args) -> int:
    rng = np.random.default_rng(args.seed)
    if args.checkpoint:
        model = load_checkpoint(args.checkpoint)
    else:
        model = init_model(16, 32, 16, args.k, rng, std=0.3)
    a, b = _bench_sets(args.n_media, model.encoder.d_in, rng)
    counts, times = {}, {}
    for mode in ("media", "proto"):
        ta = prepare_set(model, a, mode)
        tb = prepare_set(model, b, mode)
        reset_distance_evals()
        score_templates(ta, tb, model.beta)
        counts[mode] = distance_evals()
        expected = ta.features.shape[0] * tb.features.shape[0]
        if counts[mode] != expected:
            print(f"error: {mode} counter {counts[mode]} != {expected}", file=sys.stderr)
            return 2
        best = min(
            _timed(score_templates, ta, tb, model.beta) for _ in range(args.trials)
        )
        times[mode] = best
        print(f"{mode:6s} distance evals {counts[mode]:6d}  best time {best * 1e6:9.1f} us")
    speedup = times["media"] / times["proto"] if times["proto"] > 0 else float("inf")
    print(f"prototype scoring speedup {speedup:.1f}x "
          f"({counts['media']} vs {counts['proto']} distance evaluations)")
    return 0


def _timed(fn, *fn_args) -> float:
    start = time.perf_counter()
    fn(*fn_args)
    return time.perf_counter() - start


def main(argv=None) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    if getattr(args, "func", None) is None:
        parser.print_usage(sys.stderr)
        return 1
    try:
        return args.func(args)
    except (ProtoSetError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except Exception:
        traceback.print_exc()
        return 2


def entry() -> None:
    sys.exit(main())


if __name__ == "__main__":
    entry()
