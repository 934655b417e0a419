"""Command line interface.

Stages communicate through files, so they can run one at a time::

    leafwood synth --preset cycle --count 3 --out trees/
    leafwood features trees/tree_01_leafy.ply --out f.csv
    leafwood sample trees/tree_01_leafy.ply --features f.csv --out training.csv
    leafwood train training.csv --out model.txt
    leafwood classify --model model.txt --features f.csv --out labels.txt
    leafwood eval --pred labels.txt --truth trees/tree_01_leafy.ply

or all at once with ``leafwood pipeline``.

Exit codes: 0 ok, 2 configuration, 3 input/output or parse, 4 numerical
(including convergence and single-class training sets).
"""

from __future__ import annotations

import argparse
import logging
import os
import sys

from . import evaluation, io, sampling, svm, synthgen
from .errors import ConfigError, NumericalError, ParseError
from .features import compute_features
from .pipeline import (METHODS, PLANAR_LEAF_CAVEAT, PROFILE_CHOICES, RunConfig, TreeInput,
                       build_training_set, fit_model, run_pipeline, write_samples)
from .spatial import build_index

log = logging.getLogger("leafwood")

EXIT_OK, EXIT_CONFIG, EXIT_IO, EXIT_NUMERIC = 0, 2, 3, 4
WORKERS_ENV = "LEAFWOOD_WORKERS"


def _default_workers():
    try:
        return max(1, int(os.environ.get(WORKERS_ENV, "1")))
    except ValueError:
        return 1


def _add_common(p):
    p.add_argument("--config", help="key=value file supplying defaults (flags win)")
    p.add_argument("--workers", type=int, default=_default_workers(),
                   help=f"worker threads (default ${WORKERS_ENV} or 1)")
    p.add_argument("-v", "--verbose", action="store_true")


def _add_k(p):
    p.add_argument("--k", type=int, default=100, help="neighbourhood size (default 100)")


def _add_svm(p):
    p.add_argument("--C", type=float, default=10.0, dest="C")
    p.add_argument("--gamma", type=float, default=0.2)
    p.add_argument("--tol", type=float, default=1e-3)
    p.add_argument("--max-iter", type=int, default=1_000_000)
    p.add_argument("--grid-search", action="store_true",
                   help="choose C and gamma by 5-fold cross-validation")
    p.add_argument("--no-scaling", action="store_true",
                   help="feed raw features to the kernel (no standardisation)")


def _add_sampling(p):
    p.add_argument("--profile", choices=PROFILE_CHOICES, default="leafy",
                   help="leaf/wood sample counts: leafy 1200/800, balanced 1000/1000, "
                        "woody 800/1200; 'match' follows synthetic presets")
    p.add_argument("--candidates", type=int, default=sampling.DEFAULT_CANDIDATES,
                   dest="n_candidates")
    p.add_argument("--seed", type=int, default=42)
    p.add_argument("--radius", type=float, default=0.1, help="seed-sphere radius in metres")
    p.add_argument("--n-seeds", type=int, default=20, help="seed points per class")
    p.add_argument("--n-labeled", type=int, default=10_000,
                   help="random labelled points for --method labels")


def build_parser():
    parser = argparse.ArgumentParser(prog="leafwood",
                                     description="Leaf/wood separation of tree point clouds.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate labelled synthetic trees (PLY)")
    p.add_argument("--preset", choices=("leafy", "balanced", "woody", "cycle"), default="cycle")
    p.add_argument("--count", type=int, default=10)
    p.add_argument("--points", type=int, default=100_000)
    p.add_argument("--seed", type=int, default=42)
    p.add_argument("--planar-leaves", action="store_true")
    p.add_argument("--out", required=True, help="output directory")
    _add_common(p)

    p = sub.add_parser("features", help="compute (x, y, z, c_lambda, rho) per point")
    p.add_argument("input")
    p.add_argument("--out", required=True, help="features CSV")
    _add_k(p)
    _add_common(p)

    p = sub.add_parser("sample", help="build a training set")
    p.add_argument("input", help="point cloud (XYZ or PLY)")
    p.add_argument("--features", required=True, help="features CSV for the same cloud")
    p.add_argument("--method", choices=METHODS, default="auto")
    p.add_argument("--truth", help="labels (text or PLY) for seed-sphere/labels methods")
    p.add_argument("--out", required=True, help="training CSV")
    p.add_argument("--audit", help="sample audit CSV (point_index,sigma,class)")
    _add_k(p)
    _add_sampling(p)
    _add_common(p)

    p = sub.add_parser("train", help="train the SVM on a training CSV")
    p.add_argument("training")
    p.add_argument("--out", required=True, help="model file")
    p.add_argument("--seed", type=int, default=42)
    _add_svm(p)
    _add_common(p)

    p = sub.add_parser("classify", help="label every point with a trained model")
    p.add_argument("--model", required=True)
    p.add_argument("--features", required=True)
    p.add_argument("--out", required=True, help="label file (one 0/1 per line)")
    p.add_argument("--ply", help="also write a coloured classified PLY")
    _add_common(p)

    p = sub.add_parser("eval", help="compare predicted labels with truth")
    p.add_argument("--pred", required=True)
    p.add_argument("--truth", required=True)
    p.add_argument("--tree", default="tree")
    p.add_argument("--method", default="auto")
    p.add_argument("--out", help="report CSV")
    _add_common(p)

    p = sub.add_parser("pipeline", help="run every stage on one or more clouds")
    p.add_argument("inputs", nargs="*", help="point clouds (XYZ or PLY)")
    p.add_argument("--truth", action="append", default=[],
                   help="truth labels per input, in order (repeatable)")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--method", action="append", choices=METHODS, dest="methods",
                   help="training-set method (repeatable; default auto)")
    p.add_argument("--synth", choices=("leafy", "balanced", "woody", "cycle"),
                   help="generate synthetic trees instead of / in addition to inputs")
    p.add_argument("--count", type=int, default=10, dest="synth_count")
    p.add_argument("--points", type=int, default=100_000, dest="synth_points")
    p.add_argument("--planar-leaves", action="store_true")
    p.add_argument("--kappa", choices=evaluation.KAPPA_VARIANTS, default="paper",
                   dest="kappa_variant", help="kappa variant shown in the log")
    p.add_argument("--dump-features", action="store_true")
    _add_k(p)
    _add_sampling(p)
    _add_svm(p)
    _add_common(p)
    return parser


_TRUE = {"1", "true", "yes", "on"}
_FALSE = {"0", "false", "no", "off"}


def _read_config(path):
    values = {}
    with open(path) as fh:
        for lineno, line in enumerate(fh, start=1):
            text = line.split("#", 1)[0].strip()
            if not text:
                continue
            key, sep, value = text.partition("=")
            if not sep:
                raise ConfigError(f"{path}:{lineno}: expected key=value")
            values[key.strip().replace("-", "_")] = value.strip()
    return values


def _apply_config(parser, sub_name, argv):
    """Reparse with config-file values installed as subcommand defaults."""
    sub = parser._subparsers._group_actions[0].choices[sub_name]
    probe = argparse.ArgumentParser(add_help=False)
    probe.add_argument("--config")
    known, _ = probe.parse_known_args(argv)
    if not known.config:
        return None
    values = _read_config(known.config)
    actions = {a.dest: a for a in sub._actions}
    for a in sub._actions:
        for opt in a.option_strings:
            actions.setdefault(opt.lstrip("-").replace("-", "_"), a)
    defaults = {}
    for key, raw in values.items():
        action = actions.get(key)
        if action is None:
            raise ConfigError(f"unknown config key {key!r} for {sub_name}")
        if isinstance(action, argparse._StoreTrueAction):
            low = raw.lower()
            if low not in _TRUE | _FALSE:
                raise ConfigError(f"config key {key!r} expects a boolean")
            defaults[action.dest] = low in _TRUE
        elif isinstance(action, argparse._AppendAction) or action.nargs in ("*", "+"):
            defaults[action.dest] = [v.strip() for v in raw.split(",") if v.strip()]
        else:
            defaults[action.dest] = action.type(raw) if action.type else raw
    sub.set_defaults(**defaults)
    return parser.parse_args(argv)


# --- commands ------------------------------------------------------------------


def cmd_synth(args):
    if args.count < 1:
        raise ConfigError("--count must be at least 1")
    os.makedirs(args.out, exist_ok=True)
    for cloud, labels in synthgen.generate_suite(args.preset, args.count, args.seed, args.points,
                                                 args.planar_leaves):
        path = os.path.join(args.out, f"{cloud.name}.ply")
        io.write_ply(cloud, path, labels=labels)
        log.info("wrote %s (%d points)", path, len(cloud))
    if args.planar_leaves:
        log.warning(PLANAR_LEAF_CAVEAT)
    return EXIT_OK


def cmd_features(args):
    cloud, _ = io.read_cloud(args.input)
    feats = compute_features(cloud, build_index(cloud), args.k, workers=args.workers)
    io.write_features_csv(feats, args.out)
    log.info("wrote %d feature rows to %s", len(feats), args.out)
    return EXIT_OK


def _config_from(args, **extra):
    fields = {f for f in RunConfig.__dataclass_fields__}
    values = {k: v for k, v in vars(args).items() if k in fields}
    values.update(extra)
    return RunConfig(**values)


def cmd_sample(args):
    cloud, labels = io.read_cloud(args.input)
    if args.truth:
        labels = io.read_truth(args.truth, len(cloud))
    feats = io.read_features_csv(args.features)
    if feats.shape[0] != len(cloud):
        raise ParseError(f"features have {feats.shape[0]} rows but the cloud has {len(cloud)} points",
                         args.features)
    if args.profile == "match":
        raise ConfigError("--profile match is only available in the pipeline")
    cfg = _config_from(args, out_dir=os.path.dirname(args.out) or ".")
    tree = TreeInput(os.path.splitext(os.path.basename(args.input))[0], cloud, labels)
    ts = build_training_set(args.method, cfg, tree, build_index(cloud), feats)
    io.write_training_csv(ts, args.out)
    if args.audit:
        write_samples(ts, args.audit)
    n_leaf, n_wood = ts.counts()
    log.info("training set: %d leaf, %d wood -> %s", n_leaf, n_wood, args.out)
    return EXIT_OK


def cmd_train(args):
    ts = io.read_training_csv(args.training)
    model = fit_model(ts, _config_from(args))
    svm.save_model(model, args.out)
    log.info("model: %d support vectors, %d SMO iterations -> %s", model.n_support,
             model.info["iterations"], args.out)
    return EXIT_OK


def cmd_classify(args):
    model = svm.load_model(args.model)
    feats = io.read_features_csv(args.features)
    pred = svm.classify_cloud(model, feats)
    io.write_labels(pred, args.out)
    if args.ply:
        io.write_classified_ply(io.PointCloud(feats[:, :3]), pred, args.ply)
    log.info("%d leaf / %d wood points", int((pred == io.LEAF).sum()), int((pred == io.WOOD).sum()))
    return EXIT_OK


def cmd_eval(args):
    pred = io.read_labels(args.pred)
    truth = io.read_truth(args.truth, len(pred))
    row = evaluation.ReportRow(args.tree, args.method, evaluation.confusion(pred, truth))
    table = [row.as_dict()]
    if args.out:
        evaluation.write_report_csv(table, args.out)
    sys.stdout.write(evaluation.format_report(table))
    return EXIT_OK


def cmd_pipeline(args):
    cfg = _config_from(args, out_dir=args.out, methods=args.methods or ["auto"])
    os.makedirs(cfg.out_dir, exist_ok=True)
    handler = logging.FileHandler(os.path.join(cfg.out_dir, "run.log"), mode="w")
    handler.setFormatter(logging.Formatter("%(levelname)s %(name)s: %(message)s"))
    log.addHandler(handler)
    try:
        summary = run_pipeline(cfg)
    finally:
        log.removeHandler(handler)
        handler.close()
    report = os.path.join(cfg.out_dir, "report.txt")
    if os.path.exists(report) and "means" in summary:
        with open(report) as fh:
            sys.stdout.write(fh.read())
    return EXIT_OK


COMMANDS = {
    "synth": cmd_synth,
    "features": cmd_features,
    "sample": cmd_sample,
    "train": cmd_train,
    "classify": cmd_classify,
    "eval": cmd_eval,
    "pipeline": cmd_pipeline,
}


def main(argv=None):
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    args = parser.parse_args(argv)
    stderr = logging.StreamHandler(sys.stderr)
    stderr.setLevel(logging.INFO if args.verbose else logging.WARNING)
    stderr.setFormatter(logging.Formatter("%(levelname)s: %(message)s"))
    log.handlers[:] = [stderr]
    log.setLevel(logging.INFO)
    log.propagate = False
    try:
        reparsed = _apply_config(parser, args.command, argv)
        if reparsed is not None:
            args = reparsed
        if getattr(args, "workers", 1) < 1:
            raise ConfigError("--workers must be at least 1")
        return COMMANDS[args.command](args)
    except ConfigError as exc:
        print(f"leafwood: config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (ParseError, OSError) as exc:
        print(f"leafwood: io error: {exc}", file=sys.stderr)
        return EXIT_IO
    except (NumericalError, ArithmeticError) as exc:
        print(f"leafwood: numerical error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except ValueError as exc:
        print(f"leafwood: config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
