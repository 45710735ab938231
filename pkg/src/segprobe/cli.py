"""Command-line entry point.

Subcommands: synth-labels, train, eval, cluster, verify-store. Every run
reads stores, writes all artifacts to a separate output directory, and
drops a run.json describing exactly what produced those artifacts (argv,
resolved config, seed, store fingerprint, wall clock). Input stores are
never modified.

Exit codes: 0 success; 1 usage or bad argument; 2 missing or invalid
data; 3 runtime failure (calibration, numerics, I/O).

Configuration for `train` comes from defaults, then an optional TOML file
(flat keys matching TrainConfig fields), then flags; later layers win.
One --seed feeds every random decision through per-purpose derived
streams, so a single integer reproduces a run.
"""

from __future__ import annotations

import argparse
import csv
import json
import os
import sys
import time
from dataclasses import asdict, fields

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

from PIL import Image

from . import __version__, cluster as cluster_mod, labels as labels_mod, metrics, probe, seeding
from .errors import (
    DataError,
    InvalidArgumentError,
    SegProbeError,
    UndefinedMetricError,
    UsageError,
)
from .store import FeatureStore, SampleEntry, create_store, open_store, audit_store


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _write_json(path, payload: dict) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(payload, fh, indent=2)
        fh.write("\n")


def _run_record(args, out_dir, *, seed, outputs, extra=None, started=None):
    record = {
        "tool": "segprobe",
        "artifact_version": __version__,
        "command": sys.argv[1:] if args.argv is None else list(args.argv),
        "subcommand": args.subcommand,
        "seed": seed,
        "outputs": outputs,
        "started_unix": started,
        "wall_clock_seconds": None if started is None else round(time.time() - started, 3),
    }
    if extra:
        record.update(extra)
    _write_json(os.path.join(out_dir, "run.json"), record)


def _resolve_train_config(args) -> probe.TrainConfig:
    """defaults <- TOML file <- flags; flags win."""
    values = asdict(probe.TrainConfig())
    if args.config:
        with open(args.config, "rb") as fh:
            try:
                doc = tomllib.load(fh)
            except tomllib.TOMLDecodeError as exc:
                raise UsageError(f"{args.config}: invalid TOML ({exc})") from exc
        unknown = set(doc) - set(values)
        if unknown:
            raise UsageError(f"{args.config}: unknown config keys {sorted(unknown)}")
        values.update(doc)
    for name in values:
        flag = getattr(args, name, None)
        if flag is not None:
            values[name] = flag
    try:
        config = probe.TrainConfig(**values)
        config.validate()
    except (TypeError, InvalidArgumentError) as exc:
        raise UsageError(str(exc)) from exc
    return config


# ---------------------------------------------------------------------------
# synth-labels


def _cmd_synth_labels(args) -> int:
    started = time.time()
    src = open_store(args.store)
    os.makedirs(args.out, exist_ok=True)
    out_store = create_store(args.out, patch_size=src.patch_size,
                             feature_dim=src.feature_dim, num_classes=src.num_classes,
                             ignore_index=src.ignore_index)
    os.makedirs(os.path.join(args.out, "masks"), exist_ok=True)
    achieved = {}
    for i, image_id in enumerate(src.image_ids()):
        gt = src.load_labels(image_id)
        if gt is None:
            raise DataError(f"sample {image_id!r} has no mask to synthesize from")
        seed = seeding.derive_seed(args.seed, "synth", i)
        if args.regime == "point":
            mask = labels_mod.synth_points(gt, args.k, seed)
        elif args.regime == "scribble":
            mask = labels_mod.synth_scribble(gt, args.thickness, args.length_frac, seed)
        else:
            if args.target_quality is None:
                raise UsageError("--target-quality is required for --regime noisy")
            mask = labels_mod.synth_noisy(gt, args.target_quality, seed)
            achieved[image_id] = round(labels_mod.mask_quality(mask, gt), 4)
        entry = src.entry(image_id)
        mask_rel = f"masks/{image_id}.png"
        labels_mod.save_mask(mask, os.path.join(args.out, mask_rel))
        # The new store points back at the source's feature files instead
        # of copying them; masks are the only new payload.
        feature_rel = os.path.relpath(src._resolve(entry.feature_path), out_store.root)
        out_store.add_entry(SampleEntry(
            image_id=image_id,
            feature_path=feature_rel,
            image_h=entry.image_h,
            image_w=entry.image_w,
            mask_path=mask_rel,
            provenance=args.regime,
        ))
    out_store.write_manifest()
    extra = {"regime": args.regime, "source_store_fingerprint": src.fingerprint()}
    if args.regime == "point":
        extra["k_per_class"] = args.k
    elif args.regime == "scribble":
        extra.update(thickness=args.thickness, length_frac=args.length_frac)
    else:
        extra.update(target_quality=args.target_quality, achieved_miou_pct=achieved)
    _run_record(args, args.out, seed=args.seed, started=started,
                outputs={"store": args.out}, extra=extra)
    print(f"wrote {len(out_store)} {args.regime} masks to {args.out}")
    return 0


# ---------------------------------------------------------------------------
# train


def _select_train_ids(store: FeatureStore, args) -> list:
    if args.sample_ids:
        return [s for s in args.sample_ids.split(",") if s]
    ids = []
    for image_id in store.image_ids():
        entry = store.entry(image_id)
        if entry.mask_path is None:
            continue
        if args.labels_provenance and entry.provenance != args.labels_provenance:
            continue
        ids.append(image_id)
    if not ids:
        raise DataError(
            "no labeled samples to train on"
            + (f" with provenance {args.labels_provenance!r}" if args.labels_provenance else "")
        )
    return ids


def _cmd_train(args) -> int:
    started = time.time()
    config = _resolve_train_config(args)
    print(json.dumps({"resolved_config": asdict(config)}))
    if args.dry_run:
        return 0
    if not args.out:
        raise UsageError("--out is required unless --dry-run")
    store = open_store(args.store)
    config.validate(store.patch_size)
    ids = _select_train_ids(store, args)
    fingerprint = store.fingerprint()
    params, history = probe.train(store, ids, config)
    os.makedirs(args.out, exist_ok=True)
    ckpt_path = os.path.join(args.out, "checkpoint.json")
    history_path = os.path.join(args.out, "history.csv")
    probe.save_checkpoint(ckpt_path, params, config, store_fingerprint=fingerprint)
    with open(history_path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["iteration", "loss"])
        for i, loss in enumerate(history):
            writer.writerow([i, f"{loss:.10g}"])
    _run_record(args, args.out, seed=config.seed, started=started,
                outputs={"checkpoint": ckpt_path, "history": history_path},
                extra={"train_config": asdict(config), "trained_on": ids,
                       "store_fingerprint": fingerprint,
                       "final_loss": history[-1] if history else None})
    print(f"trained {len(history)} iterations on {len(ids)} samples; "
          f"final loss {history[-1]:.6f}")
    return 0


# ---------------------------------------------------------------------------
# eval


def _cmd_eval(args) -> int:
    started = time.time()
    store = open_store(args.store)
    params, config, _ = probe.load_checkpoint(args.checkpoint)
    if params.feature_dim != store.feature_dim or params.num_classes != store.num_classes:
        raise DataError(
            f"checkpoint is {params.feature_dim}x{params.num_classes} but store has "
            f"feature_dim={store.feature_dim}, num_classes={store.num_classes}"
        )
    report = metrics.MetricReport(store.num_classes)
    evaluated = []
    for image_id in store.image_ids():
        sample = store.load_sample(image_id)
        if sample.labels is None:
            continue
        out = probe.forward(sample.features, params)
        metrics.accumulate(report, out.argmax_map, sample.labels)
        evaluated.append(image_id)
    if not evaluated:
        raise DataError("store has no labeled samples to evaluate")
    per_class, mean_iou = metrics.miou(report)
    os.makedirs(args.out, exist_ok=True)
    report_json = os.path.join(args.out, "report.json")
    report_csv = os.path.join(args.out, "report.csv")
    _write_json(report_json, {
        "miou": mean_iou,
        "per_class_iou": per_class,
        "evaluated_pixels": report.evaluated_pixels,
        "evaluated_samples": evaluated,
        "confusion": report.confusion.tolist(),
    })
    with open(report_csv, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["class", "iou"])
        for c, iou in enumerate(per_class):
            writer.writerow([c, "" if iou is None else f"{iou:.6f}"])
    _run_record(args, args.out, seed=None, started=started,
                outputs={"report_json": report_json, "report_csv": report_csv},
                extra={"miou": mean_iou, "checkpoint": args.checkpoint,
                       "loss_head": config.loss_head})
    print(f"mIoU {mean_iou:.4f} over {len(evaluated)} samples "
          f"({report.evaluated_pixels} pixels)")
    return 0


# ---------------------------------------------------------------------------
# cluster


def _cmd_cluster(args) -> int:
    started = time.time()
    store = open_store(args.store)
    features = store.load_features(args.image_id)
    seed = seeding.derive_seed(args.seed, "cluster", 0)
    result, index_map = cluster_mod.cluster_map(features, args.k, seed,
                                                l2_normalize=args.l2_normalize)
    os.makedirs(args.out, exist_ok=True)
    png_path = os.path.join(args.out, f"{args.image_id}.clusters.png")
    img = Image.fromarray(index_map, mode="P")
    img.putpalette(labels_mod.class_palette())
    img.save(png_path)
    stats_path = os.path.join(args.out, f"{args.image_id}.clusters.json")
    _write_json(stats_path, {
        "image_id": args.image_id,
        "k": args.k,
        "inertia": result.inertia,
        "iterations_run": result.iterations_run,
        "l2_normalize": bool(args.l2_normalize),
    })
    _run_record(args, args.out, seed=args.seed, started=started,
                outputs={"map": png_path, "stats": stats_path},
                extra={"k": args.k, "image_id": args.image_id})
    print(f"k={args.k} inertia {result.inertia:.4f} "
          f"after {result.iterations_run} iterations -> {png_path}")
    return 0


# ---------------------------------------------------------------------------
# verify-store


def _cmd_verify_store(args) -> int:
    started = time.time()
    report = audit_store(args.store)
    print(json.dumps(report, indent=2))
    if args.out:
        os.makedirs(args.out, exist_ok=True)
        _write_json(os.path.join(args.out, "verify.json"), report)
        _run_record(args, args.out, seed=None, started=started,
                    outputs={"verify": os.path.join(args.out, "verify.json")},
                    extra={"ok": report["ok"]})
    return 0 if report["ok"] else 2


# ---------------------------------------------------------------------------
# wiring


def build_parser() -> _Parser:
    parser = _Parser(prog="segprobe",
                     description="Train and probe linear segmentation heads "
                                 "over frozen self-supervised features.")
    parser.add_argument("--version", action="version", version=f"segprobe {__version__}")
    sub = parser.add_subparsers(dest="subcommand", required=True)

    p = sub.add_parser("synth-labels", help="degrade dense masks into sparse or noisy ones")
    p.add_argument("--store", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--regime", required=True, choices=("point", "scribble", "noisy"))
    p.add_argument("--k", type=int, default=10, help="labeled pixels per class (point)")
    p.add_argument("--thickness", type=int, default=3, help="stroke width in pixels (scribble)")
    p.add_argument("--length-frac", type=float, default=0.5, dest="length_frac",
                   help="walk length as fraction of component diameter (scribble)")
    p.add_argument("--target-quality", type=float, default=None, dest="target_quality",
                   help="target mIoU pct against ground truth (noisy)")
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=_cmd_synth_labels)

    p = sub.add_parser("train", help="fit the linear head on a labeled store")
    p.add_argument("--store", required=True)
    p.add_argument("--out", default=None)
    p.add_argument("--config", default=None, help="TOML file of TrainConfig fields")
    p.add_argument("--labels-provenance", default=None, dest="labels_provenance",
                   choices=("gt", "point", "scribble", "noisy", "external-pseudo"))
    p.add_argument("--sample-ids", default=None, dest="sample_ids",
                   help="comma-separated explicit training ids")
    p.add_argument("--dry-run", action="store_true", dest="dry_run",
                   help="echo the resolved config and exit")
    p.add_argument("--learning-rate", type=float, default=None, dest="learning_rate")
    p.add_argument("--iterations", type=int, default=None)
    p.add_argument("--batch-size", type=int, default=None, dest="batch_size")
    p.add_argument("--momentum", type=float, default=None)
    p.add_argument("--weight-decay", type=float, default=None, dest="weight_decay")
    p.add_argument("--crop-pixels", type=int, default=None, dest="crop_pixels")
    p.add_argument("--flip-prob", type=float, default=None, dest="flip_prob")
    p.add_argument("--normalization-mode", default=None, dest="normalization_mode",
                   choices=probe.NORMALIZATION_MODES)
    p.add_argument("--loss-head", default=None, dest="loss_head", choices=probe.LOSS_HEADS)
    p.add_argument("--standardize-features", action="store_const", const=True,
                   default=None, dest="standardize_features")
    p.add_argument("--seed", type=int, default=None)
    p.set_defaults(func=_cmd_train)

    p = sub.add_parser("eval", help="score a checkpoint against a labeled store")
    p.add_argument("--store", required=True)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_eval)

    p = sub.add_parser("cluster", help="k-means over one image's patch tokens")
    p.add_argument("--store", required=True)
    p.add_argument("--image-id", required=True, dest="image_id")
    p.add_argument("--k", type=int, required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--l2-normalize", action="store_true", dest="l2_normalize")
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_cluster)

    p = sub.add_parser("verify-store", help="audit a store; exit 2 on any issue")
    p.add_argument("--store", required=True)
    p.add_argument("--out", default=None)
    p.set_defaults(func=_cmd_verify_store)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        args.argv = argv
        return args.func(args)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return 1
    except InvalidArgumentError as exc:
        print(f"invalid argument: {exc}", file=sys.stderr)
        return 1
    except (DataError, UndefinedMetricError, FileNotFoundError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return 2
    except (SegProbeError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
