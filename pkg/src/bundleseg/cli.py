"""Command-line pipeline driver.

Subcommands: generate-phantom, preprocess, train, infer, evaluate, merge,
compare-stats, report.  Every command exits 0 on success; failures print
one line to stderr of the form ``error:<category>: <message>`` and exit
nonzero.  Flags override config-file settings which override built-in
defaults, and each run persists its effective configuration alongside the
outputs.
"""

import argparse
import csv
import json
import os
import sys

import numpy as np
import pandas as pd

from . import __version__
from .config import ConfigError, load_config
from .nifti import NiftiError
from .volume import load_volume, save_volume, resample
from .preprocess import normalize_peaks, binarize_masks, brain_mask_from_peaks
from .model import UNetConfig, load_weights, save_weights
from .training import TrainingError, TrainSettings, make_folds, train_fold, infer_subject
from .metrics import evaluate_cohort, write_metrics_csv
from .tractometry import mask_surface_area, mask_volume, streamline_length, streamline_curl
from .stats import compare_methods, write_stats_csv
from .registry import load_merge_rules, merge_tractseg_masks, exclusion_filter
from .phantom import PhantomError, PhantomSpec, generate_cohort, generate_streamlines
from .report import ReportError, dice_boxplots, shape_effect_heatmap
from . import cohort
from .cohort import CohortError

_CATEGORIES = (
    (ConfigError, "config"),
    (NiftiError, "file-format"),
    (CohortError, "cohort"),
    (TrainingError, "training"),
    (PhantomError, "phantom"),
    (ReportError, "report"),
    (FileNotFoundError, "io"),
    (PermissionError, "io"),
    (IsADirectoryError, "io"),
    (KeyError, "invalid-input"),
    (ValueError, "invalid-input"),
    (OSError, "io"),
)


def _fail(exc):
    for klass, category in _CATEGORIES:
        if isinstance(exc, klass):
            break
    else:
        category = "internal"
    message = " ".join(str(exc).split()) or exc.__class__.__name__
    print(f"error:{category}: {message}", file=sys.stderr)
    return 1


def _config_from(args, extra=None):
    overrides = dict(extra or {})
    return load_config(path=getattr(args, "config", None), overrides=overrides)


def _persist_config(cfg, out_dir):
    os.makedirs(out_dir, exist_ok=True)
    cfg.write(os.path.join(out_dir, "config_used.ini"))


def _require_out(args, cfg):
    out = args.out or cfg.get("paths", "output_root")
    if not out:
        raise ConfigError("no output directory: pass --out or set [paths] output_root")
    return out


def _require_data(args, cfg, flag="--in"):
    root = getattr(args, "in_dir", None) or cfg.get("paths", "data_root")
    if not root:
        raise ConfigError(f"no data directory: pass {flag} or set [paths] data_root")
    return root


# ---------------------------------------------------------------- commands

def cmd_generate_phantom(args):
    cfg = _config_from(args, {
        ("phantom", "subjects"): args.subjects,
        ("phantom", "seed"): args.seed,
        ("phantom", "noise_sigma"): args.noise_sigma,
        ("phantom", "jitter"): args.jitter,
        ("phantom", "drop_probability"): args.drop_probability,
        ("phantom", "streamlines_per_bundle"): args.streamlines,
        ("paths", "output_root"): args.out,
    })
    out = _require_out(args, cfg)
    n = cfg.get_int("phantom", "subjects")
    if n < 1:
        raise PhantomError("subjects must be >= 1")
    spec = PhantomSpec(
        shape=cfg.get_ints("phantom", "shape"),
        noise_sigma=cfg.get_float("phantom", "noise_sigma"),
        jitter=cfg.get_float("phantom", "jitter"),
    )
    seed = cfg.get_int("phantom", "seed")
    n_lines = cfg.get_int("phantom", "streamlines_per_bundle")
    subjects = generate_cohort(
        spec, n, seed=seed,
        drop_probability=cfg.get_float("phantom", "drop_probability"),
    )
    manifest = {"subjects": [], "bundles": list(spec.bundle_names()), "seed": seed}
    for subject in subjects:
        lines = {}
        if n_lines > 0:
            sub_spec = subject["spec"]
            for tube in sub_spec.tubes:
                lines[tube.name] = generate_streamlines(
                    sub_spec, tube.name, n_lines, seed=subject["seed"])
        cohort.save_subject(out, subject["subject_id"], subject["peaks"],
                            subject["masks"], subject["brain_mask"], lines)
        manifest["subjects"].append(subject["subject_id"])
    with open(os.path.join(out, "cohort.json"), "w") as f:
        json.dump(manifest, f, indent=1, sort_keys=True)
    _persist_config(cfg, out)
    print(json.dumps(manifest, sort_keys=True))
    return 0


def cmd_preprocess(args):
    cfg = _config_from(args, {
        ("preprocessing", "voxel_size"): args.voxel_size,
        ("preprocessing", "mask_threshold"): args.mask_threshold,
        ("paths", "data_root"): args.in_dir,
        ("paths", "output_root"): args.out,
    })
    src = _require_data(args, cfg)
    out = _require_out(args, cfg)
    size = cfg.get_float("preprocessing", "voxel_size")
    target = (size, size, size)
    threshold = cfg.get_float("preprocessing", "mask_threshold")
    subjects = cohort.list_subjects(src)
    if not subjects:
        raise CohortError(f"no subjects under {src!r}")
    for sid in subjects:
        d = cohort.subject_dir(src, sid)
        peaks = load_volume(os.path.join(d, cohort.PEAKS_FILE), kind="peaks")
        # zero non-finite components before interpolation so they cannot
        # spread, then resample and rescale
        clean = np.nan_to_num(peaks.peaks, nan=0.0, posinf=0.0, neginf=0.0)
        peaks = type(peaks)(peaks.grid, clean)
        peaks = normalize_peaks(resample(peaks, target, mode="cubic"))
        masks = load_volume(os.path.join(d, cohort.MASKS_FILE), kind="masks")
        masks = binarize_masks(resample(masks, target, mode="nearest"), threshold)
        brain_path = os.path.join(d, cohort.BRAIN_FILE)
        if os.path.isfile(brain_path):
            brain = resample(load_volume(brain_path, kind="scalar"), target, mode="nearest")
        else:
            brain = brain_mask_from_peaks(peaks)
        lines = cohort.load_subject_streamlines(src, sid)
        cohort.save_subject(out, sid, peaks, masks, brain, lines)
        print(f"{sid}: {masks.grid.shape} at {masks.grid.voxel_size} mm")
    _persist_config(cfg, out)
    return 0


def _write_train_log(path, record):
    with open(path, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(("epoch", "loss", "val_dice"))
        for row in record.rows():
            writer.writerow([row["epoch"], repr(row["loss"]),
                             "" if row["val_dice"] is None else repr(row["val_dice"])])


def cmd_train(args):
    cfg = _config_from(args, {
        ("training", "folds"): args.folds,
        ("training", "fold_seed"): args.fold_seed,
        ("training", "shuffle_seed"): args.shuffle_seed,
        ("training", "max_epochs"): args.epochs,
        ("training", "patience"): args.patience,
        ("training", "batch_size"): args.batch_size,
        ("training", "learning_rate"): args.learning_rate,
        ("model", "base_width"): args.base_width,
        ("model", "seed"): args.model_seed,
        ("paths", "data_root"): args.in_dir,
        ("paths", "output_root"): args.out,
    })
    src = _require_data(args, cfg)
    out = _require_out(args, cfg)
    ids = cohort.list_subjects(src)
    if not ids:
        raise CohortError(f"no subjects under {src!r}")
    k = cfg.get_int("training", "folds")
    fold_seed = cfg.get_int("training", "fold_seed")
    plan = make_folds(ids, k, seed=fold_seed)

    os.makedirs(out, exist_ok=True)
    folds_path = os.path.join(out, "folds.json")
    folds_doc = {"k": plan.k, "seed": fold_seed,
                 "folds": [list(f) for f in plan.folds]}
    if os.path.exists(folds_path):
        with open(folds_path) as f:
            existing = json.load(f)
        if existing != folds_doc:
            raise TrainingError(
                f"{folds_path} disagrees with the requested split; "
                "use a fresh output directory")
    else:
        with open(folds_path, "w") as f:
            json.dump(folds_doc, f, indent=1, sort_keys=True)

    subjects = {sid: cohort.load_subject(src, sid) for sid in ids}
    n_channels = len(subjects[ids[0]].masks.channels)
    model_cfg = UNetConfig(
        in_channels=cfg.get_int("model", "in_channels"),
        out_channels=n_channels,
        base_width=cfg.get_int("model", "base_width"),
        seed=cfg.get_int("model", "seed"),
    )
    settings = TrainSettings(
        learning_rate=cfg.get_float("training", "learning_rate"),
        max_epochs=cfg.get_int("training", "max_epochs"),
        patience=cfg.get_int("training", "patience"),
        batch_size=cfg.get_int("training", "batch_size"),
        shuffle_seed=cfg.get_int("training", "shuffle_seed"),
    )

    pred_dir = os.path.join(out, "predictions")
    for i in range(plan.k):
        fold_dir = os.path.join(out, f"fold_{i}")
        os.makedirs(fold_dir, exist_ok=True)
        ckpt_path = os.path.join(fold_dir, "checkpoint.zip")
        val_ids = plan.validation_subjects(i)
        if os.path.exists(ckpt_path):
            weights = load_weights(ckpt_path)
            print(f"fold {i}: checkpoint exists, skipping training")
        else:
            weights, record = train_fold(
                [subjects[s] for s in plan.train_subjects(i)],
                [subjects[s] for s in val_ids],
                model_cfg, settings)
            save_weights(weights, ckpt_path)
            _write_train_log(os.path.join(fold_dir, "train_log.csv"), record)
            print(f"fold {i}: stopped at epoch {record.stopped_epoch}, "
                  f"best epoch {record.best_epoch}, "
                  f"val dice {weights.val_dice}")
        model = weights.build()
        for sid in val_ids:
            if not os.path.exists(cohort.prediction_path(pred_dir, sid)):
                predicted = infer_subject(model, weights.channels, subjects[sid].peaks)
                cohort.save_prediction(pred_dir, sid, predicted)
    _persist_config(cfg, out)
    return 0


def cmd_infer(args):
    cfg = _config_from(args, {
        ("paths", "data_root"): args.in_dir,
        ("paths", "output_root"): args.out,
    })
    src = _require_data(args, cfg)
    out = _require_out(args, cfg)
    weights = load_weights(args.checkpoint)
    model = weights.build()
    channels = weights.channels
    if channels is None:
        channels = [f"channel_{c}" for c in range(weights.config.out_channels)]
    ids = cohort.list_subjects(src)
    if not ids:
        raise CohortError(f"no subjects under {src!r}")
    for sid in ids:
        peaks = load_volume(
            os.path.join(cohort.subject_dir(src, sid), cohort.PEAKS_FILE), kind="peaks")
        predicted = infer_subject(model, channels, peaks)
        cohort.save_prediction(out, sid, predicted)
        print(f"{sid}: predicted {len(channels)} channels")
    _persist_config(cfg, out)
    return 0


def _list_reference_subjects(ref_root):
    if not os.path.isdir(ref_root):
        raise CohortError(f"reference root {ref_root!r} is not a directory")
    out = []
    for name in sorted(os.listdir(ref_root)):
        if os.path.isfile(os.path.join(ref_root, name, cohort.MASKS_FILE)):
            out.append(name)
    return out


def _shape_rows(pred_sets, ref_root):
    """Shape metrics of predicted masks; lengths from reference streamlines."""
    rows = []
    for sid in sorted(pred_sets):
        masks = pred_sets[sid]
        lines = cohort.load_subject_streamlines(ref_root, sid)
        for name in masks.channels:
            mask = masks.channel(name) > 0
            row = {
                "subject": sid,
                "bundle": name,
                "surface_area": mask_surface_area(mask, masks.grid.voxel_size),
                "volume": mask_volume(mask, masks.grid.voxel_size),
                "mean_length": None,
                "curl": None,
            }
            if name in lines and lines[name]:
                lengths = [streamline_length(s) for s in lines[name]]
                curls = [c for c in (streamline_curl(s) for s in lines[name])
                         if c is not None]
                row["mean_length"] = float(np.mean(lengths))
                row["curl"] = float(np.mean(curls)) if curls else None
            rows.append(row)
    return rows


def cmd_evaluate(args):
    cfg = _config_from(args, {
        ("evaluation", "adjacency_radius"): args.adjacency_radius,
    })
    preds_root, refs_root = args.pred, args.ref
    pred_ids = cohort.list_predictions(preds_root)
    ref_ids = _list_reference_subjects(refs_root)
    if set(pred_ids) != set(ref_ids):
        diff = sorted(set(pred_ids) ^ set(ref_ids))
        raise CohortError(f"prediction and reference subject sets differ: {diff}")
    preds, refs = {}, {}
    for sid in pred_ids:
        preds[sid] = cohort.load_prediction(preds_root, sid)
        refs[sid] = load_volume(
            os.path.join(cohort.subject_dir(refs_root, sid), cohort.MASKS_FILE),
            kind="masks")

    report = exclusion_filter(refs, missing_fraction=args.missing_fraction)
    all_bundles = []
    for refset in refs.values():
        for name in refset.channels:
            if name not in all_bundles:
                all_bundles.append(name)
    bundles = report.reportable(all_bundles)
    rows = evaluate_cohort(preds, refs, bundles=bundles,
                           adjacency_radius=cfg.get_int("evaluation", "adjacency_radius"))
    write_metrics_csv(rows, args.out)
    print(f"{len(rows)} metric rows over {len(bundles)} bundles "
          f"({len(report.cohort_excluded)} cohort-excluded)")
    if args.exclusions:
        with open(args.exclusions, "w") as f:
            json.dump({
                "cohort_excluded": report.cohort_excluded,
                "missing_counts": report.missing_counts,
                "subject_missing": [list(p) for p in report.subject_missing],
                "threshold": report.threshold,
                "n_subjects": report.n_subjects,
            }, f, indent=1, sort_keys=True)
    if args.shapes:
        shape_rows = _shape_rows(preds, refs_root)
        with open(args.shapes, "w", newline="") as f:
            writer = csv.writer(f)
            header = ("subject", "bundle", "surface_area", "volume",
                      "mean_length", "curl")
            writer.writerow(header)
            for row in shape_rows:
                writer.writerow([row["subject"], row["bundle"]]
                                + ["" if row[k] is None else repr(row[k])
                                   for k in header[2:]])
    cfg.write(args.out + ".config.ini")
    return 0


def cmd_merge(args):
    rules = load_merge_rules(args.rules)
    src, out = args.in_dir, args.out
    ids = _list_reference_subjects(src)
    if not ids:
        raise CohortError(f"no subjects with masks under {src!r}")
    for sid in ids:
        masks = load_volume(
            os.path.join(cohort.subject_dir(src, sid), cohort.MASKS_FILE), kind="masks")
        merged = merge_tractseg_masks(masks, rules)
        d = cohort.subject_dir(out, sid)
        os.makedirs(d, exist_ok=True)
        save_volume(merged, os.path.join(d, cohort.MASKS_FILE))
        print(f"{sid}: {len(masks.channels)} -> {len(merged.channels)} channels")
    return 0


def cmd_compare_stats(args):
    cfg = _config_from(args, {("stats", "alpha"): args.alpha})
    table_a = pd.read_csv(args.a)
    table_b = pd.read_csv(args.b)
    results = compare_methods(table_a, table_b,
                              alpha=cfg.get_float("stats", "alpha"))
    write_stats_csv(results, args.out)
    n_sig = int(results["significant"].sum())
    print(f"{len(results)} tests, {n_sig} significant after correction")
    cfg.write(args.out + ".config.ini")
    return 0


def cmd_report(args):
    metrics_a = pd.read_csv(args.metrics_a)
    metrics_b = pd.read_csv(args.metrics_b)
    if len(metrics_a) == 0 or len(metrics_b) == 0:
        raise ReportError("metrics tables must be non-empty")
    stats_table = pd.read_csv(args.stats) if args.stats else None
    os.makedirs(args.out, exist_ok=True)
    box_path = os.path.join(args.out, "dice_by_bundle.png")
    labels = tuple(args.labels)
    dice_boxplots(metrics_a, metrics_b, stats_table, box_path, labels=labels)
    written = [box_path]
    if args.shapes_a and args.shapes_b:
        shapes_a = pd.read_csv(args.shapes_a)
        shapes_b = pd.read_csv(args.shapes_b)
        heat_path = os.path.join(args.out, "shape_effect_sizes.png")
        shape_effect_heatmap(shapes_a, shapes_b, heat_path, labels=labels)
        written.append(heat_path)
    for path in written:
        print(path)
    return 0


# ---------------------------------------------------------------- parser

def _add_config_flag(p):
    p.add_argument("--config", default=None, help="INI config file")


def build_parser():
    parser = argparse.ArgumentParser(
        prog="bundleseg",
        description="White-matter bundle segmentation pipeline")
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("generate-phantom", help="write a synthetic tube cohort")
    _add_config_flag(p)
    p.add_argument("--out", default=None, help="cohort output directory")
    p.add_argument("--subjects", type=int, default=None)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--noise-sigma", type=float, default=None)
    p.add_argument("--jitter", type=float, default=None)
    p.add_argument("--drop-probability", type=float, default=None)
    p.add_argument("--streamlines", type=int, default=None,
                   help="streamlines per bundle (0 disables)")
    p.set_defaults(func=cmd_generate_phantom)

    p = sub.add_parser("preprocess", help="resample, normalize and binarize a cohort")
    _add_config_flag(p)
    p.add_argument("--in", dest="in_dir", default=None, help="raw cohort directory")
    p.add_argument("--out", default=None, help="preprocessed cohort directory")
    p.add_argument("--voxel-size", type=float, default=None)
    p.add_argument("--mask-threshold", type=float, default=None)
    p.set_defaults(func=cmd_preprocess)

    p = sub.add_parser("train", help="k-fold cross-validated training")
    _add_config_flag(p)
    p.add_argument("--in", dest="in_dir", default=None, help="preprocessed cohort")
    p.add_argument("--out", default=None, help="run output directory")
    p.add_argument("--folds", type=int, default=None)
    p.add_argument("--fold-seed", type=int, default=None)
    p.add_argument("--shuffle-seed", type=int, default=None)
    p.add_argument("--epochs", type=int, default=None)
    p.add_argument("--patience", type=int, default=None)
    p.add_argument("--batch-size", type=int, default=None)
    p.add_argument("--learning-rate", type=float, default=None)
    p.add_argument("--base-width", type=int, default=None)
    p.add_argument("--model-seed", type=int, default=None)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("infer", help="predict masks with a saved checkpoint")
    _add_config_flag(p)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--in", dest="in_dir", default=None, help="cohort with peak volumes")
    p.add_argument("--out", default=None, help="prediction directory")
    p.set_defaults(func=cmd_infer)

    p = sub.add_parser("evaluate", help="score predictions against references")
    _add_config_flag(p)
    p.add_argument("--pred", required=True, help="prediction directory")
    p.add_argument("--ref", required=True, help="reference cohort directory")
    p.add_argument("--out", required=True, help="metrics CSV path")
    p.add_argument("--shapes", default=None, help="optional shape metrics CSV")
    p.add_argument("--exclusions", default=None, help="optional exclusion report JSON")
    p.add_argument("--missing-fraction", type=float, default=1.0 / 3.0)
    p.add_argument("--adjacency-radius", type=int, default=None)
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("merge", help="combine mask channels by merge rules")
    _add_config_flag(p)
    p.add_argument("--in", dest="in_dir", required=True, help="cohort with source masks")
    p.add_argument("--out", required=True, help="merged cohort directory")
    p.add_argument("--rules", default=None, help="merge rules JSON (default built-in)")
    p.set_defaults(func=cmd_merge)

    p = sub.add_parser("compare-stats", help="paired tests between two metric tables")
    _add_config_flag(p)
    p.add_argument("--a", required=True, help="first metrics CSV")
    p.add_argument("--b", required=True, help="second metrics CSV")
    p.add_argument("--out", required=True, help="stats CSV path")
    p.add_argument("--alpha", type=float, default=None)
    p.set_defaults(func=cmd_compare_stats)

    p = sub.add_parser("report", help="render comparison figures")
    _add_config_flag(p)
    p.add_argument("--metrics-a", required=True)
    p.add_argument("--metrics-b", required=True)
    p.add_argument("--stats", default=None)
    p.add_argument("--shapes-a", default=None)
    p.add_argument("--shapes-b", default=None)
    p.add_argument("--labels", nargs=2, default=("method A", "method B"))
    p.add_argument("--out", required=True, help="figure output directory")
    p.set_defaults(func=cmd_report)
    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except Exception as exc:  # noqa: BLE001 - single reporting point
        return _fail(exc)


if __name__ == "__main__":
    sys.exit(main())
