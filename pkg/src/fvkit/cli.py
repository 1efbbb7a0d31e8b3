"""Command-line front end: ``fvk <verb> [options]``.

Exit codes: 0 success, 1 usage error, 2 missing or unreadable input,
3 numerical or convergence failure. On failure one line of the form
``fvk: error category=<category>: <message>`` is written to stderr.
"""
from __future__ import annotations

import argparse
import csv
import io
import logging
import os
import sys
from pathlib import Path

import numpy as np

from .classifier import evaluate, svm_predict, svm_train
from .core import (Dictionary, FeatureSet, GmmModel, PcaModel, load_model, read_features,
                   read_features_csv, save_model, write_features)
from .errors import ConvergenceError, FvkError, NumericalError
from .gmm import gmm_fit_em, gmmfv_encode
from .partition import ResolutionConfig, plot_svg, resolution_experiment, rows_to_csv
from .pca import pca_fit, pca_transform
from .pooling import NormalizationSpec
from .scfvc import scfv_encode_images
from .sparse_coding import SparseCodingParams, default_lambda, dict_learn
from .synthetic import image_dataset

log = logging.getLogger("fvkit")

EXIT_OK, EXIT_USAGE, EXIT_INPUT, EXIT_NUMERIC = 0, 1, 2, 3


class UsageError(Exception):
    category = "usage"


class MissingInput(Exception):
    def __init__(self, message, category="input-not-found"):
        super().__init__(message)
        self.category = category


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


# ---------------------------------------------------------------- file helpers

def _write_bytes(path, data: bytes):
    path = Path(path)
    if path.parent and not path.parent.exists():
        path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_bytes(data)
    os.replace(tmp, path)


def _write_text(path, text: str):
    _write_bytes(path, text.encode("utf-8"))


def _read_feature_file(path) -> FeatureSet:
    path = Path(path)
    if not path.is_file():
        raise MissingInput(f"feature file not found: {path}")
    if path.suffix.lower() == ".csv":
        return read_features_csv(path)
    return read_features(path)


def _load(path, cls):
    if path is None:
        raise UsageError(f"a {cls.__name__} model file is required (--model)")
    if not Path(path).is_file():
        raise MissingInput(f"model file not found: {path}", category="model-not-found")
    return load_model(path, expected=cls)


def read_labels(path):
    """Rows (file, label, split) of a labels CSV; file paths resolved against its directory."""
    path = Path(path)
    if not path.is_file():
        raise MissingInput(f"labels file not found: {path}")
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None or not {"file", "label", "split"} <= set(reader.fieldnames):
            raise UsageError(f"{path}: labels CSV needs columns file,label,split")
        rows = [(path.parent / r["file"], int(r["label"]), r["split"]) for r in reader]
    if not rows:
        raise UsageError(f"{path}: labels CSV has no rows")
    return rows


def _select_images(args, default_split):
    """(images as float64 arrays, labels, splits) from --labels and/or --features."""
    images, labels, splits = [], [], []
    split = getattr(args, "split", None) or default_split
    if args.labels:
        for f, y, s in read_labels(args.labels):
            if split == "all" or s == split:
                images.append(_read_feature_file(f).as_float64())
                labels.append(y)
                splits.append(s)
    for f in args.features or []:
        images.append(_read_feature_file(f).as_float64())
        labels.append(-1)
        splits.append("")
    if not images:
        raise UsageError("no input features: give --labels and/or --features")
    pca_path = getattr(args, "pca", None)
    if pca_path:
        pca = _load(pca_path, PcaModel)
        images = [pca_transform(X, pca) for X in images]
    return images, np.asarray(labels, dtype=np.int64), splits


def _stack(images, max_features, seed):
    X = np.vstack(images)
    if max_features and X.shape[0] > max_features:
        idx = np.sort(np.random.default_rng(seed).choice(X.shape[0], size=max_features, replace=False))
        X = X[idx]
    return X


# ---------------------------------------------------------------- commands

def cmd_gen_synthetic(args):
    for name in ("classes", "train_per_class", "features_per_image", "dim", "atoms", "patterns", "pattern_size"):
        if getattr(args, name) < 1:
            raise UsageError(f"--{name.replace('_', '-')} must be positive")
    if args.test_per_class < 0 or args.noise < 0 or args.jitter < 0:
        raise UsageError("--test-per-class, --noise and --jitter must be non-negative")
    if not 0 <= args.class_fraction <= 1:
        raise UsageError("--class-fraction must lie in [0, 1]")
    if args.pattern_size > args.atoms:
        raise UsageError("--pattern-size cannot exceed --atoms")
    ds = image_dataset(seed=args.seed, n_classes=args.classes, n_train=args.train_per_class,
                       n_test=args.test_per_class, n_features=args.features_per_image, dim=args.dim,
                       n_atoms=args.atoms, n_patterns=args.patterns, pattern_size=args.pattern_size,
                       class_fraction=args.class_fraction, jitter=args.jitter, noise=args.noise)
    out = Path(args.out)
    (out / "features").mkdir(parents=True, exist_ok=True)
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["file", "label", "split"])
    for i, (X, y, s) in enumerate(zip(ds.images, ds.labels, ds.split)):
        name = f"features/img_{i:05d}.fvk"
        write_features(FeatureSet(X), out / name)
        w.writerow([name, int(y), s])
    _write_text(out / "labels.csv", buf.getvalue())
    log.info("wrote %d images to %s", len(ds.images), out)


def cmd_train_dict(args):
    images, _, _ = _select_images(args, "train")
    X = _stack(images, args.max_features, args.seed)
    lam = args.lam if args.lam is not None else default_lambda(X)
    p = SparseCodingParams(lam=lam, sigma2=args.sigma2, max_iter=args.max_iter)
    D, info = dict_learn(X, args.codebook_size, p, outer_iters=args.iters, seed=args.seed, return_log=True)
    save_model(D, args.out)
    log.info("dictionary %dx%d, lambda %.6g, final objective %.6g", D.d, D.K, lam, info.objective[-1])


def cmd_train_gmm(args):
    images, _, _ = _select_images(args, "train")
    X = _stack(images, args.max_features, args.seed)
    g, info = gmm_fit_em(X, args.components, max_iter=args.em_iters, seed=args.seed, return_log=True)
    save_model(g, args.out)
    log.info("GMM with %d components, %d EM iterations, mean log-likelihood %.6g",
             g.m, info.n_iter, info.loglik[-1])


def cmd_train_pca(args):
    if args.pca_dim is None:
        raise UsageError("--pca-dim is required")
    images, _, _ = _select_images(args, "train")
    X = _stack(images, args.max_features, args.seed)
    model = pca_fit(X, args.pca_dim, whiten=args.whiten)
    save_model(model, args.out)
    log.info("PCA %d -> %d, effective rank %d", model.d, model.out_dim, model.effective_rank)


def _norm_spec(args, sub_len):
    return NormalizationSpec(subvector_len=sub_len, power_alpha=args.alpha, apply_power=not args.no_power,
                             apply_intra=not args.no_intra, order=args.order, global_l2=args.global_l2)


def cmd_encode(args):
    if args.encoder == "scfvc":
        model = _load(args.model, Dictionary)
    else:
        model = _load(args.model, GmmModel)
    images, _, _ = _select_images(args, "all")
    if args.encoder == "scfvc":
        if args.lam is not None:
            lam = args.lam
        elif model.lam is not None:
            lam = model.lam
        else:
            lam = default_lambda(np.vstack(images))
        p = SparseCodingParams(lam=lam, sigma2=model.sigma2, max_iter=args.max_iter)
        fvs = scfv_encode_images(images, model, p, _norm_spec(args, model.d), on_fail="raise")
    else:
        fvs = [gmmfv_encode(X, model, _norm_spec(args, model.d), include_variance=not args.mean_only)
               for X in images]
    write_features(FeatureSet(np.stack([f.values for f in fvs])), args.out)
    log.info("encoded %d images with %s into vectors of length %d", len(fvs), args.encoder, fvs[0].values.size)


def _parse_named(specs):
    out = []
    for s in specs:
        name, sep, path = s.partition("=")
        if not sep:
            name, path = Path(s).stem, s
        out.append((name, path))
    return out


def cmd_classify(args):
    rows = read_labels(args.labels)
    y = np.array([r[1] for r in rows], dtype=np.int64)
    split = np.array([r[2] for r in rows])
    tr, te = split == "train", split == "test"
    if not tr.any() or not te.any():
        raise UsageError("labels CSV needs both train and test rows")
    metrics = args.metrics.split(",")
    for m in metrics:
        if m not in ("accuracy", "map"):
            raise UsageError(f"unknown metric {m!r}; choose from accuracy,map")
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["encoder", *metrics, "n_train", "n_test"])
    for name, path in _parse_named(args.encoded):
        V = _read_feature_file(path).as_float64()
        if V.shape[0] != y.size:
            raise UsageError(f"{path} has {V.shape[0]} rows but the labels file lists {y.size} images")
        model = svm_train(V[tr], y[tr], C=args.C, epochs=args.epochs, seed=args.seed)
        pred = svm_predict(model, V[te])
        vals = [evaluate(pred, y[te], m) for m in metrics]
        w.writerow([name, *(repr(v) for v in vals), int(tr.sum()), int(te.sum())])
        if args.save_models:
            Path(args.save_models).mkdir(parents=True, exist_ok=True)
            save_model(model, Path(args.save_models) / f"svm_{name}.fvm")
        log.info("%s: %s", name, ", ".join(f"{m}={v:.4f}" for m, v in zip(metrics, vals)))
    _write_text(args.out, buf.getvalue())


def _int_list(text):
    try:
        return tuple(int(t) for t in str(text).split(",") if t.strip())
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from exc


def cmd_resolution(args):
    features = None
    if args.source:
        features = _read_feature_file(args.source).as_float64()
    cfg = ResolutionConfig(seed=args.seed, dims=args.dims, gmm_components=args.components,
                           sweep_dim=args.sweep_dim, sweep_components=args.sweep_components,
                           codebook_size=args.codebook_size, lam=args.lam, n_atoms=args.atoms,
                           n_active=args.active, noise=args.noise, n_train=args.n_train, n_test=args.n_test,
                           em_iters=args.em_iters, dict_iters=args.iters, features=features)
    rows = resolution_experiment(cfg)
    _write_text(args.out, rows_to_csv(rows))
    if args.svg:
        _write_text(args.svg, plot_svg(rows, cfg.sweep_dim))


# ---------------------------------------------------------------- parser

def _add_inputs(sp, split_default):
    sp.add_argument("--labels", help="labels CSV (columns file,label,split)")
    sp.add_argument("--features", nargs="+", metavar="FILE", help="feature files (.fvk or .csv)")
    sp.add_argument("--split", choices=["train", "test", "all"], default=None,
                    help=f"images of the labels CSV to use (default {split_default})")
    sp.add_argument("--pca", metavar="MODEL", help="PCA model applied to features first")


def _add_common(sp):
    sp.add_argument("--config", metavar="FILE", help="key=value file; explicit flags take precedence")
    sp.add_argument("--seed", type=int, default=0)


def _add_norm(sp):
    sp.add_argument("--alpha", type=float, default=0.5, help="power-normalisation exponent")
    sp.add_argument("--order", choices=["power-intra", "intra-power"], default="power-intra")
    sp.add_argument("--no-power", action="store_true")
    sp.add_argument("--no-intra", action="store_true")
    sp.add_argument("--global-l2", action="store_true")


def build_parser() -> argparse.ArgumentParser:
    ap = _Parser(prog="fvk", description="Sparse-coding and GMM Fisher vector toolkit.")
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", parser_class=_Parser)

    sp = sub.add_parser("gen-synthetic", help="write a seeded synthetic image dataset")
    _add_common(sp)
    sp.add_argument("--out", required=True, help="output directory")
    sp.add_argument("--classes", type=int, default=5)
    sp.add_argument("--train-per-class", type=int, default=50)
    sp.add_argument("--test-per-class", type=int, default=20)
    sp.add_argument("--features-per-image", type=int, default=64)
    sp.add_argument("--dim", type=int, default=256)
    sp.add_argument("--atoms", type=int, default=100)
    sp.add_argument("--patterns", type=int, default=60, help="atom combinations per class")
    sp.add_argument("--pattern-size", type=int, default=3)
    sp.add_argument("--class-fraction", type=float, default=0.15)
    sp.add_argument("--jitter", type=float, default=0.3)
    sp.add_argument("--noise", type=float, default=0.005)
    sp.set_defaults(func=cmd_gen_synthetic)

    sp = sub.add_parser("train-dict", help="learn a sparse-coding dictionary")
    _add_common(sp)
    _add_inputs(sp, "train")
    sp.add_argument("--out", required=True)
    sp.add_argument("--codebook-size", type=int, default=100)
    sp.add_argument("--lambda", dest="lam", type=float, default=None)
    sp.add_argument("--sigma2", type=float, default=1.0)
    sp.add_argument("--max-iter", type=int, default=1000, help="lasso sweeps per feature")
    sp.add_argument("--iters", type=int, default=10, help="outer alternating iterations")
    sp.add_argument("--max-features", type=int, default=0, help="random subsample size (0 = all)")
    sp.set_defaults(func=cmd_train_dict)

    sp = sub.add_parser("train-gmm", help="fit a diagonal GMM by EM")
    _add_common(sp)
    _add_inputs(sp, "train")
    sp.add_argument("--out", required=True)
    sp.add_argument("--components", type=int, default=100)
    sp.add_argument("--em-iters", type=int, default=100)
    sp.add_argument("--max-features", type=int, default=0)
    sp.set_defaults(func=cmd_train_gmm)

    sp = sub.add_parser("train-pca", help="fit a PCA projection")
    _add_common(sp)
    _add_inputs(sp, "train")
    sp.add_argument("--out", required=True)
    sp.add_argument("--pca-dim", type=int, default=None)
    sp.add_argument("--whiten", action="store_true")
    sp.add_argument("--max-features", type=int, default=0)
    sp.set_defaults(func=cmd_train_pca)

    sp = sub.add_parser("encode", help="encode images into normalised Fisher vectors")
    _add_common(sp)
    sp.add_argument("encoder", choices=["scfvc", "gmmfvc"])
    _add_inputs(sp, "all")
    sp.add_argument("--model", help="dictionary (scfvc) or GMM (gmmfvc) model file")
    sp.add_argument("--out", required=True, help="output feature file, one row per image")
    sp.add_argument("--lambda", dest="lam", type=float, default=None)
    sp.add_argument("--mean-only", action="store_true", help="gmmfvc: drop the variance block")
    sp.add_argument("--max-iter", type=int, default=1000, help="scfvc: lasso sweeps per feature")
    _add_norm(sp)
    sp.set_defaults(func=cmd_encode)

    sp = sub.add_parser("classify", help="train and evaluate one-vs-rest linear SVMs")
    _add_common(sp)
    sp.add_argument("--labels", required=True)
    sp.add_argument("--encoded", nargs="+", required=True, metavar="NAME=FILE")
    sp.add_argument("--out", required=True, help="metrics CSV")
    sp.add_argument("--C", type=float, default=1.0)
    sp.add_argument("--epochs", type=int, default=1000)
    sp.add_argument("--metrics", default="accuracy,map")
    sp.add_argument("--save-models", metavar="DIR")
    sp.set_defaults(func=cmd_classify)

    sp = sub.add_parser("resolution", help="partition-resolution sweep (CSV and SVG)")
    _add_common(sp)
    sp.add_argument("--out", required=True, help="CSV output")
    sp.add_argument("--svg", help="SVG plot output")
    sp.add_argument("--source", metavar="FILE", help="feature file used instead of synthetic features")
    sp.add_argument("--dims", type=_int_list, default=(100, 200, 500, 1000))
    sp.add_argument("--components", type=int, default=100)
    sp.add_argument("--sweep-dim", type=int, default=500)
    sp.add_argument("--sweep-components", type=_int_list, default=(100, 200, 500, 1000))
    sp.add_argument("--codebook-size", type=int, default=100)
    sp.add_argument("--lambda", dest="lam", type=float, default=None)
    sp.add_argument("--atoms", type=int, default=100)
    sp.add_argument("--active", type=int, default=5, help="atoms per synthetic feature")
    sp.add_argument("--noise", type=float, default=0.03)
    sp.add_argument("--n-train", type=int, default=4000)
    sp.add_argument("--n-test", type=int, default=1000)
    sp.add_argument("--em-iters", type=int, default=30)
    sp.add_argument("--iters", type=int, default=10)
    sp.set_defaults(func=cmd_resolution)
    return ap


def read_config(path) -> dict:
    path = Path(path)
    if not path.is_file():
        raise MissingInput(f"config file not found: {path}")
    out = {}
    for n, line in enumerate(path.read_text().splitlines(), 1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        key, sep, value = line.partition("=")
        if not sep:
            raise UsageError(f"{path}:{n}: expected key=value")
        out[key.strip().replace("-", "_")] = value.strip()
    return out


_TRUE = {"1", "true", "yes", "on"}
_FALSE = {"0", "false", "no", "off"}


def _apply_config(sp: argparse.ArgumentParser, values: dict):
    actions = {a.dest: a for a in sp._actions}
    aliases = {"lambda": "lam"}
    defaults = {}
    for key, raw in values.items():
        dest = aliases.get(key, key)
        act = actions.get(dest)
        if act is None or dest in ("config", "help", "func"):
            raise UsageError(f"unknown config key {key!r}")
        if isinstance(act, argparse._StoreTrueAction):
            if raw.lower() not in _TRUE | _FALSE:
                raise UsageError(f"config key {key!r} expects true/false, got {raw!r}")
            defaults[dest] = raw.lower() in _TRUE
        elif act.nargs in ("+", "*"):
            defaults[dest] = raw.split()
        else:
            try:
                val = act.type(raw) if act.type else raw
            except (TypeError, ValueError, argparse.ArgumentTypeError) as exc:
                raise UsageError(f"config key {key!r}: {exc}") from exc
            if act.choices is not None and val not in act.choices:
                raise UsageError(f"config key {key!r}: {val!r} is not one of {list(act.choices)}")
            defaults[dest] = val
        # a required option satisfied by the config file
        act.required = False
    sp.set_defaults(**defaults)


def _subparsers(ap) -> dict:
    for act in ap._actions:
        if isinstance(act, argparse._SubParsersAction):
            return act.choices
    return {}


def _parse(argv):
    ap = build_parser()
    pre = _Parser(add_help=False)
    pre.add_argument("--config")
    known, _ = pre.parse_known_args(argv)
    if known.config:
        values = read_config(known.config)
        verb = next((a for a in argv if a in _subparsers(ap)), None)
        if verb is None:
            raise UsageError("--config needs a command")
        _apply_config(_subparsers(ap)[verb], values)
    args = ap.parse_args(argv)
    if not getattr(args, "command", None):
        raise UsageError("a command is required; see fvk --help")
    return args


def _fail(category, message, code):
    print(f"fvk: error category={category}: {message}", file=sys.stderr)
    return code


def main(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    try:
        args = _parse(argv)
    except UsageError as exc:
        return _fail("usage", str(exc), EXIT_USAGE)
    except MissingInput as exc:
        return _fail(exc.category, str(exc), EXIT_INPUT)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    try:
        args.func(args)
    except UsageError as exc:
        return _fail("usage", str(exc), EXIT_USAGE)
    except MissingInput as exc:
        return _fail(exc.category, str(exc), EXIT_INPUT)
    except (ConvergenceError, NumericalError, FloatingPointError, np.linalg.LinAlgError) as exc:
        return _fail(getattr(exc, "category", "numerical"), str(exc), EXIT_NUMERIC)
    except FvkError as exc:
        return _fail(exc.category, str(exc), EXIT_INPUT)
    except FileNotFoundError as exc:
        return _fail("input-not-found", str(exc), EXIT_INPUT)
    except ValueError as exc:
        return _fail("usage", str(exc), EXIT_USAGE)
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
