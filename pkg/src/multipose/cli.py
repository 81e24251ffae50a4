"""Command-line entry point: table, gen, train, eval, sample.

Exit codes: 0 success, 1 runtime failure, 2 usage error.
"""
import argparse
import json
import logging
import os
import sys
import zlib
from dataclasses import asdict
from pathlib import Path

import numpy as np

from . import metrics, regressor, scenes
from .errors import ConfigurationError
from .mixtures import sample_mixture
from .normtable import MIN_MC_SAMPLES, NormTable, axis_nodes, build_norm_table

log = logging.getLogger("multipose")

TABLE_ENV = "MULTIPOSE_TABLE"
_D = regressor.TrainConfig()
_S = scenes.SceneSpec()


class UsageError(Exception):
    pass


def _write_config(path, command, values):
    """Resolved configuration of a run, next to its main artifact."""
    with open(path, "w") as fh:
        json.dump({"command": command, **values}, fh, indent=2, sort_keys=True, default=list)
        fh.write("\n")


def _table_path(args):
    path = args.table or os.environ.get(TABLE_ENV)
    if not path:
        raise UsageError(f"no table given; pass --table or set {TABLE_ENV}")
    return path


def _require(path, what):
    if not Path(path).is_file():
        raise FileNotFoundError(f"{what} not found: {path}")


# --- subcommands ---------------------------------------------------------------


def cmd_table(args):
    if args.mc_samples < MIN_MC_SAMPLES:
        raise UsageError(f"--mc-samples must be at least {MIN_MC_SAMPLES}")
    if args.nodes < 2 or args.lam_min >= 0:
        raise UsageError("need --nodes >= 2 and a negative --lam-min")
    axis = axis_nodes(args.lam_min, args.nodes)
    table = build_norm_table([axis] * 3, mc_samples=args.mc_samples, seed=args.seed, method=args.method)
    table.save(args.out)
    crc = zlib.crc32(Path(args.out).read_bytes())
    _write_config(args.out + ".config.json", "table", {
        "nodes": args.nodes, "lam_min": args.lam_min, "method": args.method,
        "mc_samples": args.mc_samples, "seed": args.seed, "out": args.out})
    print(f"log F(0,0,0) = {float(table.log_norm([0.0, 0.0, 0.0])):.6f} (log 2 pi^2 = {np.log(2 * np.pi ** 2):.6f})")
    print(f"wrote {args.out} crc32={crc:08x}")


def _spec_from_args(args):
    return scenes.SceneSpec(
        symmetry=args.symmetry, radius=args.radius, height_range=(args.h_min, args.h_max), n_train=args.n,
        n_test=args.n_test, feature_dim=args.feature_dim, nuisance_dim=args.nuisance_dim, noise=args.noise, seed=args.seed,
        staircase_levels=args.staircase_levels, staircase_period=args.staircase_period)


def cmd_gen(args):
    spec = _spec_from_args(args)
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    train, test = scenes.generate(spec)
    scenes.write_jsonl(out / "train.jsonl", train, spec, "train")
    scenes.write_jsonl(out / "test.jsonl", test, spec, "test")
    _write_config(out / "gen.config.json", "gen", {"spec": asdict(spec)})
    print(f"wrote {len(train)} train / {len(test)} test samples to {out} (symmetry {spec.symmetry})")


def _train_config(args):
    return regressor.TrainConfig(
        scheme=args.scheme, K=args.K, eps=args.eps, lr=args.lr, lr_decay=args.lr_decay, optimizer=args.optimizer,
        epochs_translation=args.epochs_translation, epochs_full=args.epochs_full, batch_size=args.batch_size,
        seed=args.seed, ewta_interval=args.ewta_interval, winner=args.winner, hidden=tuple(args.hidden),
        aug_noise=args.aug_noise)


def cmd_train(args):
    cfg = _train_config(args)
    table_path = _table_path(args)
    _require(table_path, "table")
    _require(args.data, "dataset")
    table = NormTable.load(table_path)
    samples, spec, _ = scenes.read_jsonl(args.data)
    X, Q, T = scenes.as_arrays(samples)
    model = regressor.MhpRegressor.create(X.shape[1], cfg.K, cfg.hidden, cfg.pi_hidden, cfg.leak, table.lam_min,
                                          seed=cfg.seed, head_init=args.head_init)
    train_log = regressor.train(model, X, Q, T, table, cfg)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    regressor.save_checkpoint(model, out, cfg, epoch=len(train_log.epochs))
    with open(str(out) + ".log.json", "w") as fh:
        json.dump({"epochs": train_log.epochs, "aborted": train_log.aborted}, fh, indent=1)
        fh.write("\n")
    _write_config(str(out) + ".config.json", "train", {
        "train": asdict(cfg), "head_init": args.head_init, "table": table_path, "data": args.data,
        "scene": asdict(spec)})
    if train_log.aborted:
        print(f"training aborted: {train_log.aborted}", file=sys.stderr)
        return 1
    print(f"wrote {out}; final loss {train_log.losses[-1]:.4f}")
    return 0


GNUPLOT_CURVE = """set datafile separator ","
set xlabel "fraction removed"
set ylabel "mean rotation error (deg)"
set y2label "mean translation error (m)"
set y2tics
set terminal pngcairo size 800,500
set output "{stem}_curve.png"
plot "< grep '^curve' {csv}" using 2:4 with linespoints title "rotation", \\
     "" using 2:5 axes x1y2 with linespoints title "translation"
"""

GNUPLOT_RECALL = """set datafile separator ","
set style data histograms
set style fill solid 0.6
set yrange [0:1]
set terminal pngcairo size 800,500
set output "{stem}_recall.png"
plot "< grep '^recall' {csv}" using 4:xtic(2) title "recall", "" using 5 title "oracle recall"
"""


def cmd_eval(args):
    table_path = _table_path(args)
    for path, what in ((table_path, "table"), (args.checkpoint, "checkpoint"), (args.data, "dataset")):
        _require(path, what)
    table = NormTable.load(table_path)
    model, _ = regressor.load_checkpoint(args.checkpoint)
    samples, spec, _ = scenes.read_jsonl(args.data)
    if spec.feature_dim != model.input_dim:
        raise ConfigurationError(f"dataset feature dim {spec.feature_dim} does not match model ({model.input_dim})")
    mixtures = regressor.predict(model, scenes.as_arrays(samples)[0])
    diameter = scenes.trajectory_diameter(samples) if len(samples) > 1 else None
    if diameter is not None and diameter <= 0:
        diameter = None
    report = metrics.evaluate(mixtures, samples, table, diameter=diameter)
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "report.json").write_text(report.to_json() + "\n")
    (out / "report.csv").write_text(report.to_csv())
    _write_config(out / "eval.config.json", "eval", {
        "table": table_path, "checkpoint": args.checkpoint, "data": args.data, "diameter": diameter})
    if args.emit_gnuplot:
        (out / "curve.gp").write_text(GNUPLOT_CURVE.format(stem="report", csv="report.csv"))
        (out / "recall.gp").write_text(GNUPLOT_RECALL.format(stem="report", csv="report.csv"))
    print(f"median error {report.median_rot_deg:.2f} deg / {report.median_trans_m:.3f} m; "
          f"mode detection {report.mode_detection}; mean SEMD {report.mean_semd:.3f}")


def cmd_sample(args):
    _require(args.checkpoint, "checkpoint")
    _require(args.data, "dataset")
    model, _ = regressor.load_checkpoint(args.checkpoint)
    samples, _, _ = scenes.read_jsonl(args.data)
    if not 0 <= args.index < len(samples):
        raise UsageError(f"--index must lie in [0, {len(samples)})")
    mix = regressor.forward(model, samples[args.index].features)
    quats, trans, comp = sample_mixture(mix, args.n, args.seed)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    with open(out, "w") as fh:
        for q, t, j in zip(quats, trans, comp):
            fh.write(json.dumps({"q": q.tolist(), "t": t.tolist(), "component": int(j)}) + "\n")
    _write_config(str(out) + ".config.json", "sample", {
        "checkpoint": args.checkpoint, "data": args.data, "index": args.index, "n": args.n, "seed": args.seed,
        "mixture": mix.to_dict()})
    print(f"wrote {args.n} samples to {out}")


# --- argument parsing ---------------------------------------------------------------


def build_parser():
    parser = argparse.ArgumentParser(prog="multipose", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="count", default=0)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("table", help="build the normalizer lookup table")
    p.add_argument("--nodes", type=int, default=83, help="grid nodes per axis")
    p.add_argument("--lam-min", type=float, default=-900.0)
    p.add_argument("--method", choices=("quadrature", "mc"), default="quadrature")
    p.add_argument("--mc-samples", type=int, default=MIN_MC_SAMPLES)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_table)

    p = sub.add_parser("gen", help="generate a synthetic ambiguous scene")
    p.add_argument("--symmetry", type=int, default=_S.symmetry)
    p.add_argument("--n", type=int, default=_S.n_train, help="training samples")
    p.add_argument("--n-test", type=int, default=_S.n_test)
    p.add_argument("--radius", type=float, default=_S.radius)
    p.add_argument("--h-min", type=float, default=_S.height_range[0])
    p.add_argument("--h-max", type=float, default=_S.height_range[1])
    p.add_argument("--feature-dim", type=int, default=_S.feature_dim)
    p.add_argument("--nuisance-dim", type=int, default=_S.nuisance_dim, help="height-only feature channels")
    p.add_argument("--noise", type=float, default=_S.noise)
    p.add_argument("--staircase-levels", type=int, default=_S.staircase_levels)
    p.add_argument("--staircase-period", type=float, default=_S.staircase_period)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out-dir", required=True)
    p.set_defaults(func=cmd_gen)

    p = sub.add_parser("train", help="train a multi-hypothesis regressor")
    p.add_argument("--table", help=f"normalizer table (default ${TABLE_ENV})")
    p.add_argument("--data", required=True, help="training JSONL")
    p.add_argument("--scheme", choices=regressor.SCHEMES, default=_D.scheme)
    p.add_argument("--K", type=int, default=_D.K)
    p.add_argument("--eps", type=float, default=_D.eps)
    p.add_argument("--lr", type=float, default=_D.lr)
    p.add_argument("--lr-decay", type=float, default=_D.lr_decay)
    p.add_argument("--optimizer", choices=regressor.OPTIMIZERS, default=_D.optimizer)
    p.add_argument("--epochs-translation", type=int, default=_D.epochs_translation)
    p.add_argument("--epochs-full", type=int, default=_D.epochs_full)
    p.add_argument("--batch-size", type=int, default=_D.batch_size)
    p.add_argument("--ewta-interval", type=int, default=_D.ewta_interval)
    p.add_argument("--winner", choices=regressor.WINNERS, default=_D.winner)
    p.add_argument("--hidden", type=int, nargs="+", default=list(_D.hidden))
    p.add_argument("--head-init", choices=regressor.HEAD_INITS, default="uniform")
    p.add_argument("--aug-noise", type=float, default=_D.aug_noise)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True, help="checkpoint path")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint on a dataset")
    p.add_argument("--table", help=f"normalizer table (default ${TABLE_ENV})")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--out-dir", required=True)
    p.add_argument("--emit-gnuplot", action="store_true", help="also write gnuplot scripts")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("sample", help="draw poses from a predicted mixture")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--index", type=int, default=0, help="sample whose prediction is used")
    p.add_argument("--n", type=int, default=1000)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_sample)
    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2), format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args) or 0
    except (UsageError, ConfigurationError) as exc:
        print(f"{parser.prog} {args.command}: error: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:  # any runtime failure maps to exit code 1
        print(f"{parser.prog} {args.command}: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
