"""Command-line interface.

Exit codes: 0 success, 1 usage error, 2 runtime error.
"""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

import numpy as np

from . import metrics as M
from .config import load_config
from .errors import PDCovidNetError
from .explain import METHODS, saliency, upsample_overlay
from .imaging import ensure_writable, generate_synthetic, load_image, save_png, scan_dataset
from .model import CLASS_NAMES, ModelConfig, build_pdcovidnet
from .train import TrainConfig, evaluate_loss_acc, split_dataset, train
from .weights import model_from_file, save_weights

log = logging.getLogger("pdcovidnet")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.format_usage()}{self.prog}: error: {message}")


def _split_indices(labels, which: str, seed: int, k: int):
    if which == "all":
        return np.arange(len(labels))
    parts = dict(zip(("train", "val", "test"), split_dataset(labels, rng_seed=seed, num_classes=k)))
    return np.asarray(parts[which], dtype=np.int64)


def cmd_synth_data(args):
    manifest = generate_synthetic(args.out, args.per_class, args.size, args.seed)
    print(f"wrote {len(manifest.items)} images under {args.out}")


def cmd_train(args):
    train_cfg, model_cfg = load_config(args.config) if args.config else (TrainConfig(), None)
    if args.seed is not None:
        train_cfg = TrainConfig(**{**train_cfg.__dict__, "rng_seed": args.seed})
    manifest = scan_dataset(args.data)
    if model_cfg is None:
        model_cfg = ModelConfig(classes=len(manifest.class_names))
    if len(manifest.class_names) != model_cfg.classes:
        raise PDCovidNetError(
            f"dataset has {len(manifest.class_names)} classes, model config expects {model_cfg.classes}"
        )
    for path in (args.out, args.report):
        ensure_writable(path)
    images, labels = manifest.load(model_cfg.input_size, model_cfg.in_channels)
    tr, va, te = split_dataset(labels, rng_seed=train_cfg.rng_seed, num_classes=model_cfg.classes)
    model = build_pdcovidnet(model_cfg, rng=train_cfg.rng_seed, class_names=manifest.class_names)
    report = train(model, (images[tr], labels[tr]), train_cfg, val_data=(images[va], labels[va]))
    save_weights(model, args.out)
    report.to_csv(args.report)
    last = report.epochs[-1] if report.epochs else None
    if last is not None:
        print(f"epoch {last.epoch}: train_acc {last.train_acc:.4f} val_acc {last.val_acc:.4f}")
    if te:
        _, test_acc = evaluate_loss_acc(model, images[te], labels[te])
        print(f"test_acc {test_acc:.4f} on {len(te)} held-out images")


def cmd_evaluate(args):
    manifest = scan_dataset(args.data)
    model = model_from_file(args.weights, class_names=manifest.class_names)
    cfg = model.config
    ensure_writable(args.report)
    labels_all = manifest.labels
    idx = _split_indices(labels_all, args.split, args.seed, cfg.classes)
    paths = manifest.paths()
    images = np.stack([load_image(paths[i], cfg.input_size, cfg.in_channels) for i in idx])
    labels = labels_all[idx]
    probs = model.predict_proba(images)
    cm = M.confusion(labels, probs.argmax(axis=1), cfg.classes, manifest.class_names)
    report = M.class_metrics(cm)
    roc = M.roc_auc(labels, probs)
    M.write_metrics_csv(args.report, report)
    stem = Path(args.report).with_suffix("")
    cm.to_csv(f"{stem}_confusion.csv")
    roc.to_csv(f"{stem}_roc.csv", manifest.class_names)
    print(M.format_report(report, cm, roc))


def _class_names(arg):
    return [s.strip() for s in arg.split(",")] if arg else None


def _load_model(args):
    names = _class_names(args.classes)
    model = model_from_file(args.weights, class_names=names)
    if names is None and model.config.classes != len(CLASS_NAMES):
        model.class_names = [f"class_{i}" for i in range(model.config.classes)]
    return model


def cmd_predict(args):
    model = _load_model(args)
    cfg = model.config
    image = load_image(args.image, cfg.input_size, cfg.in_channels)
    probs = model.predict_proba(image)
    c = int(np.argmax(probs))
    print(f"Pred: {model.class_names[c]} ({probs[c]:.4f}) [class {c}]")


def cmd_explain(args):
    model = _load_model(args)
    cfg = model.config
    ensure_writable(args.out)
    image = load_image(args.image, cfg.input_size, cfg.in_channels)
    if args.class_ == "auto":
        c = int(np.argmax(model.predict_proba(image)))
    else:
        try:
            c = int(args.class_)
        except ValueError:
            raise UsageError(f"--class must be 'auto' or an integer, got {args.class_!r}") from None
    heat = saliency(model, image, c, args.method, args.score)
    if args.heatmap_csv:
        heat.to_csv(args.heatmap_csv)
    if heat.is_zero:
        log.warning("heatmap for class %d is identically zero", c)
    display = load_image(args.image, args.size, 1)[0]
    save_png(args.out, upsample_overlay(heat.normalize(), display, alpha=args.alpha))
    print(f"wrote {args.method} overlay for class {c} ({model.class_names[c]}) to {args.out}")


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="pdcovidnet", description="Parallel-dilated CNN for chest X-ray classification.")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", parser_class=_Parser)

    s = sub.add_parser("synth-data", help="write a synthetic 3-class PNG dataset")
    s.add_argument("--out", required=True)
    s.add_argument("--per-class", type=int, required=True)
    s.add_argument("--size", type=int, default=64)
    s.add_argument("--seed", type=int, default=0)
    s.set_defaults(func=cmd_synth_data)

    s = sub.add_parser("train", help="train on a class-per-directory dataset")
    s.add_argument("--data", required=True)
    s.add_argument("--config")
    s.add_argument("--out", required=True, help="weight file to write")
    s.add_argument("--report", required=True, help="per-epoch CSV report")
    s.add_argument("--seed", type=int)
    s.set_defaults(func=cmd_train)

    s = sub.add_parser("evaluate", help="confusion matrix, metrics, CIs and ROC")
    s.add_argument("--data", required=True)
    s.add_argument("--weights", required=True)
    s.add_argument("--report", required=True)
    s.add_argument("--split", choices=("all", "train", "val", "test"), default="all")
    s.add_argument("--seed", type=int, default=0, help="split seed (must match training)")
    s.set_defaults(func=cmd_evaluate)

    s = sub.add_parser("predict", help="classify one image")
    s.add_argument("--image", required=True)
    s.add_argument("--weights", required=True)
    s.add_argument("--classes", help="comma-separated class names")
    s.set_defaults(func=cmd_predict)

    s = sub.add_parser("explain", help="Grad-CAM / Grad-CAM++ overlay")
    s.add_argument("--image", required=True)
    s.add_argument("--weights", required=True)
    s.add_argument("--method", choices=sorted(METHODS), default="grad-cam")
    s.add_argument("--class", dest="class_", default="auto")
    s.add_argument("--out", required=True)
    s.add_argument("--score", choices=("prob", "logit"), default="prob")
    s.add_argument("--alpha", type=float, default=0.4)
    s.add_argument("--size", type=int, default=224, help="overlay side length")
    s.add_argument("--heatmap-csv")
    s.add_argument("--classes", help="comma-separated class names")
    s.set_defaults(func=cmd_explain)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if args.command is None:
            raise UsageError(parser.format_usage() + "pdcovidnet: error: a command is required")
        logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                            format="%(levelname)s %(name)s: %(message)s")
        args.func(args)
    except SystemExit as exc:  # --help
        return int(exc.code or 0)
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return 1
    except (PDCovidNetError, OSError) as exc:
        print(f"pdcovidnet: error: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
