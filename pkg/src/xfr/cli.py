"""Command-line entry point: ``xfr <command> ...``.

Exit codes: 0 success, 1 runtime or check failure, 2 usage/config error.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__
from .checkpoint import CheckpointError, load_checkpoint
from .config import ConfigError, RunConfig, load_config, with_overrides

logger = logging.getLogger("xfr")

EXIT_OK, EXIT_FAIL, EXIT_USAGE = 0, 1, 2


class UsageError(Exception):
    pass


def _out_dir(path: str) -> Path:
    out = Path(path)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _config(args) -> RunConfig:
    cfg = load_config(getattr(args, "config", None))
    return with_overrides(
        cfg,
        train__epochs=getattr(args, "epochs", None),
        train__seed=getattr(args, "seed", None),
        train__batch=getattr(args, "batch", None),
        explain__threshold=_threshold_arg(getattr(args, "threshold", None)),
        explain__mode=getattr(args, "mode", None),
        hiding__sigma=getattr(args, "sigma", None),
        hiding__seed=getattr(args, "hiding_seed", None),
    )


def _threshold_arg(value):
    if value is None or value == "auto":
        return value
    try:
        return float(value)
    except ValueError:
        raise ConfigError(f'--threshold must be a number or "auto", got {value!r}') from None


def _fmt(x: float) -> str:
    return f"{x:.9g}"


# -- commands ------------------------------------------------------------------


def cmd_synth(args) -> int:
    from .synth import generate_dataset

    out = generate_dataset(args.out, args.identities, args.per_identity, args.seed)
    print(f"wrote {args.identities} identities x {args.per_identity} images to {out}")
    return EXIT_OK


def cmd_pairs(args) -> int:
    from .data import FaceDataset, generate_pairs, write_pairs_csv

    cfg = _config(args)
    ds = FaceDataset.scan(args.data)
    if args.split != "all":
        train, val = ds.split_by_identity(cfg.train.val_fraction, cfg.train.seed)
        ds = val if args.split == "val" else train
    pairs = generate_pairs(ds, args.n, args.pair_seed)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    write_pairs_csv(out, pairs)
    print(f"wrote {len(pairs)} pairs ({sum(p.label for p in pairs)} matching) to {out}")
    return EXIT_OK


def cmd_train(args) -> int:
    from .data import FaceDataset
    from .train import train

    cfg = _config(args)
    ds = FaceDataset.scan(args.data)
    train_ds, val_ds = ds.split_by_identity(cfg.train.val_fraction, cfg.train.seed)
    out = _out_dir(args.out)
    train_ds.save_manifest(out / "train_manifest.json")
    val_ds.save_manifest(out / "val_manifest.json")
    x, y = train_ds.load_arrays(cfg.model.img_ch)
    arch = cfg.model.architecture(len(train_ds.identities))
    (out / "config.json").write_text(json.dumps(cfg.to_dict(), indent=2))
    meta = {
        "dataset": str(ds.root),
        "train_identities": [name for name, _ in train_ds.identities],
        "val_identities": [name for name, _ in val_ds.identities],
    }
    t0 = time.perf_counter()
    result = train(x, y, cfg.train, arch, out, meta)
    last = result.history[-1]
    print(f"trained {cfg.train.epochs} epochs in {time.perf_counter() - t0:.1f}s; final total loss {last.total:.4f}")
    print(f"checkpoints and losses.csv in {out}")
    return EXIT_OK


def cmd_verify(args) -> int:
    from .data import ImageCache, read_pairs_csv
    from .hiding import best_threshold, pair_scores, roc_auc

    ckpt = load_checkpoint(args.ckpt)
    pairs = read_pairs_csv(args.pairs)
    images = ImageCache(ckpt.arch.img_ch, Path(args.pairs).parent)
    scores = pair_scores(pairs, ckpt.model, images)
    labels = np.array([p.label for p in pairs])
    out = _out_dir(args.out)
    with open(out / "scores.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["path_a", "path_b", "label", "cosine"])
        for p, s in zip(pairs, scores):
            w.writerow([p.path_a, p.path_b, p.label, _fmt(s)])
    threshold, acc = best_threshold(scores, labels)
    summary = {"n_pairs": len(pairs), "threshold": threshold, "accuracy": acc}
    if 0 < labels.sum() < len(labels):
        summary["roc_auc"] = roc_auc(scores, labels)
    (out / "summary.json").write_text(json.dumps(summary, indent=2, sort_keys=True))
    print(json.dumps(summary, sort_keys=True))
    return EXIT_OK


def cmd_explain(args) -> int:
    from .data import load_image
    from .explain import generate_saliency
    from .export import write_explanation

    cfg = _config(args)
    ckpt = load_checkpoint(args.ckpt)
    a = load_image(args.img_a, ckpt.arch.img_ch, ckpt.arch.resolution)
    b = load_image(args.img_b, ckpt.arch.img_ch, ckpt.arch.resolution)
    exp = generate_saliency(a, b, ckpt.model, cfg.explain.threshold, cfg.explain.mode)
    out = _out_dir(args.out_dir)
    write_explanation(out, a, exp)
    print(f"cosine {exp.score:.6f}; threshold T={exp.weights.threshold:.6g}; maps in {out}")
    return EXIT_OK


def _write_curve(out: Path, curve) -> None:
    with open(out / "curve.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["percent", "accuracy"])
        for p, a in zip(curve.percentages, curve.accuracies):
            w.writerow([_fmt(p), _fmt(a)])
    (out / "auc.txt").write_text(f"{curve.auc:.6f}\n")


def cmd_hiding_game(args) -> int:
    from dataclasses import replace

    from .data import ImageCache, read_pairs_csv
    from .hiding import make_explainer, run_hiding_game

    cfg = _config(args)
    ckpt = load_checkpoint(args.ckpt)
    pairs = read_pairs_csv(args.pairs)
    images = ImageCache(ckpt.arch.img_ch, Path(args.pairs).parent)
    out = _out_dir(args.out)
    methods = [args.method]
    if args.check and "random" not in methods:
        methods.append("random")
    aucs = {}
    for method in methods:
        hcfg = replace(cfg.hiding, method=method)
        explainer = make_explainer(method, ckpt.model, hcfg.seed, cfg.explain.threshold, cfg.explain.mode)
        curve = run_hiding_game(pairs, ckpt.model, explainer, hcfg, images)
        target = out if method == args.method else _out_dir(str(out / method))
        _write_curve(target, curve)
        aucs[method] = curve.auc
        print(f"{method}: AUC {curve.auc:.2f}  threshold {curve.threshold:.4f}  accuracies {[round(a, 3) for a in curve.accuracies]}")
    if args.check and args.method != "random":
        gap = aucs[args.method] - aucs["random"]
        ok = gap >= args.check_margin
        print(f"check: {args.method} - random = {gap:.2f} AUC points (need >= {args.check_margin}) -> {'PASS' if ok else 'FAIL'}")
        return EXIT_OK if ok else EXIT_FAIL
    return EXIT_OK


def cmd_gradcheck(args) -> int:
    from .gradcheck import run_suite

    t0 = time.perf_counter()
    results = run_suite(instances=args.instances, seed=args.seed)
    failed = [r for r in results if not r.passed]
    for r in results:
        print(f"{'PASS' if r.passed else 'FAIL'}  {r.name:<22} max rel err {r.max_rel_err:.2e} over {r.instances} instances")
    print(f"{len(results) - len(failed)}/{len(results)} ops within tolerance in {time.perf_counter() - t0:.1f}s")
    return EXIT_FAIL if failed else EXIT_OK


def cmd_reconstruct(args) -> int:
    from . import tensor as T
    from .data import load_image, save_image
    from .losses import mse_loss

    ckpt = load_checkpoint(args.ckpt)
    img = load_image(args.img, ckpt.arch.img_ch, ckpt.arch.resolution)
    with T.no_grad():
        recon = ckpt.model.reconstruct(ckpt.model.encode(img[None]).C)
        mse = mse_loss(recon, img[None]).item()
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    save_image(out, recon.data[0])
    print(f"mse {mse:.6f}")
    return EXIT_OK


# -- parser ----------------------------------------------------------------------


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(message)


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="xfr", description="Explainable face verification via feature-guided reconstruction.")
    p.add_argument("--version", action="version", version=f"xfr {__version__}")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    s = sub.add_parser("synth", help="generate a synthetic face dataset")
    s.add_argument("--out", required=True)
    s.add_argument("--identities", type=int, default=50)
    s.add_argument("--per-identity", type=int, default=10)
    s.add_argument("--seed", type=int, default=0)
    s.set_defaults(func=cmd_synth)

    s = sub.add_parser("pairs", help="write a balanced verification pairs CSV")
    s.add_argument("--data", required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--n", type=int, default=200)
    s.add_argument("--split", choices=("val", "train", "all"), default="val")
    s.add_argument("--pair-seed", type=int, default=0)
    s.add_argument("--config")
    s.set_defaults(func=cmd_pairs)

    s = sub.add_parser("train", help="jointly train encoder and reconstructor")
    s.add_argument("--config")
    s.add_argument("--data", required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--epochs", type=int)
    s.add_argument("--batch", type=int)
    s.add_argument("--seed", type=int)
    s.set_defaults(func=cmd_train)

    s = sub.add_parser("verify", help="score pairs and report best-threshold accuracy")
    s.add_argument("--ckpt", required=True)
    s.add_argument("--pairs", required=True)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_verify)

    s = sub.add_parser("explain", help="similarity/dissimilarity saliency for one pair")
    s.add_argument("--ckpt", required=True)
    s.add_argument("--img-a", required=True)
    s.add_argument("--img-b", required=True)
    s.add_argument("--out-dir", required=True)
    s.add_argument("--threshold")
    s.add_argument("--mode", choices=("isolated", "cumulative"))
    s.add_argument("--config")
    s.set_defaults(func=cmd_explain)

    s = sub.add_parser("hiding-game", help="blur-based hiding game for a saliency method")
    s.add_argument("--ckpt", required=True)
    s.add_argument("--pairs", required=True)
    s.add_argument("--method", choices=("ours", "gradient", "random"), default="ours")
    s.add_argument("--out", required=True)
    s.add_argument("--check", action="store_true", help="fail unless method beats random by --check-margin AUC points")
    s.add_argument("--check-margin", type=float, default=10.0)
    s.add_argument("--sigma", type=float)
    s.add_argument("--hiding-seed", type=int)
    s.add_argument("--threshold")
    s.add_argument("--mode", choices=("isolated", "cumulative"))
    s.add_argument("--config")
    s.set_defaults(func=cmd_hiding_game)

    s = sub.add_parser("gradcheck", help="finite-difference check of every differentiable op")
    s.add_argument("--instances", type=int, default=20)
    s.add_argument("--seed", type=int, default=0)
    s.set_defaults(func=cmd_gradcheck)

    s = sub.add_parser("reconstruct", help="reconstruct a face from its feature map")
    s.add_argument("--ckpt", required=True)
    s.add_argument("--img", required=True)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_reconstruct)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        print(f"xfr: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(asctime)s %(name)s %(message)s")
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"xfr: config error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (CheckpointError, OSError, ValueError, RuntimeError, ArithmeticError) as exc:
        print(f"xfr: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_FAIL


if __name__ == "__main__":
    sys.exit(main())
