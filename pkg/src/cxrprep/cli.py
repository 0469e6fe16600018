"""Command-line interface.

Exit codes:
  0  success
  1  unexpected internal error (traceback on stderr)
  2  usage error (bad flags or values)
  3  a required input file does not exist
  4  input failed schema or content validation
  5  output already exists and neither --force nor --resume was given
  6  per-record failure rate exceeded the failure threshold
  7  internal invariant violated (bug; please report)
"""
import argparse
import json
import os
import sys
import traceback

import numpy as np

from . import __version__
from .config import load_config
from .errors import (
    CxrPrepError,
    FailureThresholdError,
    InternalInvariantError,
    OverlapViolationError,
)
from .image import load_image
from .manifest import (
    SamplingSpec,
    build_manifest,
    ingest_metadata,
    read_manifest,
    write_exclusion_log,
    write_manifest,
)
from .metrics import build_report, read_predictions, render_report_csv, render_report_markdown
from .pipeline import MASK_METHODS, METHODS, run_prep
from .probe import (
    ProbeHyper,
    featurize,
    load_probe,
    predict_proba,
    probe_auroc,
    save_probe,
    train_probe,
)

EXIT_OK = 0
EXIT_UNEXPECTED = 1
EXIT_USAGE = 2
EXIT_MISSING_INPUT = 3
EXIT_SCHEMA = 4
EXIT_EXISTS = 5
EXIT_FAILURES = 6
EXIT_INVARIANT = 7

_EPILOG = __doc__.split("Exit codes:")[1] if __doc__ else ""
_EPILOG = "exit codes:" + _EPILOG


def _bool_flag(parser, name, help_text):
    parser.add_argument(name, action=argparse.BooleanOptionalAction,
                        default=None, help=help_text)


def _add_common_config_flags(p):
    p.add_argument("--config", metavar="FILE",
                   help="JSON config file (defaults < file < CXRPREP_* env < flags)")
    p.add_argument("--seed", type=int, default=None, help="RNG seed")


def _add_prep_config_flags(p):
    p.add_argument("--clip-limit", type=float, default=None,
                   help="contrast clip as a multiple of the uniform bin count")
    p.add_argument("--grid-rows", type=int, default=None, help="tile grid rows")
    p.add_argument("--grid-cols", type=int, default=None, help="tile grid columns")
    p.add_argument("--bins", type=int, default=None, help="histogram bins")
    p.add_argument("--target-size", type=int, default=None,
                   help="output side length in pixels")
    p.add_argument("--margin", type=int, default=None,
                   help="dilation margin in pixels at the mask's reference resolution")
    p.add_argument("--mask-native-resolution", type=int, default=None,
                   help="reference resolution the margin is defined at")
    _bool_flag(p, "--clahe-after-downscale",
               "equalize after downscaling instead of before")
    _bool_flag(p, "--crop-raw-mask",
               "crop to the raw mask bounding box instead of the dilated one")
    _bool_flag(p, "--letterbox", "pad crops to square before downscaling")
    _bool_flag(p, "--export-8bit", "also write 8-bit preview images")
    p.add_argument("--workers", type=int, default=None,
                   help="parallel workers (outputs are identical for any value)")
    p.add_argument("--failure-threshold", type=float, default=None,
                   help="abort when the failed fraction exceeds this")


def _add_manifest_config_flags(p):
    p.add_argument("--positives-per-cell", type=int, default=None,
                   help="positives sampled per (label, group) cell")
    p.add_argument("--val-fraction", type=float, default=None,
                   help="fraction of train/val patients routed to val")
    p.add_argument("--rca-threshold", type=float, default=None,
                   help="strict lower bound on mask quality score")
    p.add_argument("--labels", default=None,
                   help="comma-separated label list override")
    p.add_argument("--groups", default=None,
                   help="comma-separated group list override")


_CONFIG_FIELDS = (
    "seed", "clip_limit", "grid_rows", "grid_cols", "bins", "target_size",
    "margin", "mask_native_resolution", "clahe_after_downscale",
    "crop_raw_mask", "letterbox", "export_8bit", "workers",
    "failure_threshold", "positives_per_cell", "val_fraction",
    "rca_threshold", "labels", "groups",
)


def _config_from_args(args):
    overrides = {}
    for field in _CONFIG_FIELDS:
        value = getattr(args, field, None)
        if value is not None:
            overrides[field] = value
    return load_config(file_path=getattr(args, "config", None), overrides=overrides)


def _require_inputs(*paths):
    for p in paths:
        if p is not None and not os.path.exists(p):
            raise FileNotFoundError(2, "no such file or directory", p)


def _refuse_existing(path, force):
    if not force and path is not None and os.path.exists(path):
        raise FileExistsError(f"{path} exists; pass --force to overwrite")


def _method_family(method):
    return "mask" if method in MASK_METHODS else "plain"


def _cmd_manifest(args):
    cfg = _config_from_args(args)
    _require_inputs(args.records, args.labels_csv, args.demographics, args.rca)
    exclusions_path = args.exclusion_log or (
        os.path.splitext(args.out)[0] + ".exclusions.csv")
    _refuse_existing(args.out, args.force)
    _refuse_existing(exclusions_path, args.force)

    records, issues = ingest_metadata(
        args.records, args.labels_csv, args.demographics, args.rca,
        label_list=cfg.labels)
    spec = SamplingSpec(positives_per_cell=cfg.positives_per_cell,
                        label_list=cfg.labels, groups=cfg.groups,
                        seed=cfg.seed, val_fraction=cfg.val_fraction)
    build = build_manifest(records, spec, method=args.method,
                           rca_threshold=cfg.rca_threshold,
                           no_split=args.no_split)
    build.issues = issues
    config_hash = cfg.config_hash()
    write_manifest(build, args.out, __version__, config_hash, args.method)
    write_exclusion_log(build, exclusions_path, __version__, config_hash)

    counts = {}
    for r in build.records:
        counts[r.split] = counts.get(r.split, 0) + 1
    print(f"manifest: {args.out}")
    for split in ("train", "val", "test"):
        print(f"  {split}: {counts.get(split, 0)}")
    print(f"  excluded: {len(build.exclusions)} (log: {exclusions_path})")
    print(f"  shortfall cells: {len(build.shortfalls)}")
    for label, group, wanted, got in build.shortfalls:
        print(f"    {label} / {group}: wanted {wanted}, found {got}")
    return EXIT_OK


def _cmd_prep(args):
    cfg = _config_from_args(args)
    _require_inputs(args.manifest)
    records, meta = read_manifest(args.manifest)
    method = args.method or meta.get("method")
    if method not in METHODS:
        raise CxrPrepError(f"unknown method {method!r}; choose from {METHODS}")
    manifest_method = meta.get("method")
    if (manifest_method and manifest_method in METHODS
            and _method_family(manifest_method) != _method_family(method)):
        raise CxrPrepError(
            f"manifest was built for {manifest_method!r}; preprocessing with "
            f"{method!r} would bypass its record filters")
    if method in MASK_METHODS and not args.masks_root:
        raise CxrPrepError(f"method {method!r} needs --masks-root")

    log_path = os.path.join(args.out_dir, "prep_log.csv")
    if os.path.exists(log_path) and not (args.force or args.resume):
        raise FileExistsError(
            f"{args.out_dir} holds a previous run; pass --resume to keep "
            "verified outputs or --force to redo everything")
    os.makedirs(args.out_dir, exist_ok=True)

    wanted = records
    if args.split:
        wanted = [r for r in records if r.split in args.split]
    result = run_prep(wanted, method, cfg, args.images_root,
                      args.masks_root or "", args.out_dir,
                      tool_version=__version__, resume=args.resume)
    print(f"prep: {len(result.outcomes)} records -> {args.out_dir} "
          f"(ok {result.n_ok}, kept {result.n_kept}, failed {result.n_failed})")
    return EXIT_OK


def _cmd_eval(args):
    _require_inputs(*args.predictions)
    report_csv = os.path.join(args.out_dir, "report.csv")
    report_md = os.path.join(args.out_dir, "report.md")
    _refuse_existing(report_csv, args.force)
    _refuse_existing(report_md, args.force)
    cfg = _config_from_args(args)

    runs = [read_predictions(p) for p in args.predictions]
    table = build_report(runs, disparity_mode=args.disparity_mode,
                         tool_version=__version__,
                         config_hash=cfg.config_hash())
    os.makedirs(args.out_dir, exist_ok=True)
    with open(report_csv, "w", newline="", encoding="utf-8") as fh:
        fh.write(render_report_csv(table))
    with open(report_md, "w", newline="", encoding="utf-8") as fh:
        fh.write(render_report_markdown(table))
    print(f"report: {report_csv}")
    print(f"report: {report_md}")
    return EXIT_OK


def _find_prep_output(images_dir, record_id):
    for ext in (".png", ".pgm"):
        path = os.path.join(images_dir, record_id + ext)
        if os.path.exists(path):
            return path
    raise FileNotFoundError(2, "no preprocessed image for record",
                            os.path.join(images_dir, record_id + ".png"))


def _probe_dataset(manifest_path, images_dir, splits, groups, bins, exclude_zero):
    records, meta = read_manifest(manifest_path)
    chosen = [r for r in records
              if r.split in splits and r.race_group in groups]
    if not chosen:
        raise CxrPrepError(
            f"no records with split in {sorted(splits)} and a configured group")
    features = np.empty((len(chosen), bins), dtype=np.float64)
    labels = []
    for i, r in enumerate(chosen):
        img = load_image(_find_prep_output(images_dir, r.record_id))
        features[i] = featurize(img, bins=bins, exclude_zero=exclude_zero)
        labels.append(r.race_group)
    return features, labels


def _effective_exclude_zero(flag_value, manifest_path):
    """Default ON for mask-based pipelines so the probe does not just
    detect injected black background mass."""
    if flag_value is not None:
        return bool(flag_value)
    _, meta = read_manifest(manifest_path)
    return meta.get("method") in MASK_METHODS


def _cmd_probe_train(args):
    cfg = _config_from_args(args)
    _require_inputs(args.manifest)
    _refuse_existing(args.out, args.force)
    exclude_zero = _effective_exclude_zero(args.exclude_zero, args.manifest)
    features, groups = _probe_dataset(
        args.manifest, args.images_dir, set(args.split), set(cfg.groups),
        cfg.bins, exclude_zero)
    hyper = ProbeHyper(
        learning_rate=args.lr if args.lr is not None else 0.1,
        steps=args.steps if args.steps is not None else 2000,
        l2=args.l2 if args.l2 is not None else 1e-3,
        seed=cfg.seed,
        batch_size=args.batch_size,
    )
    model = train_probe(features, groups, hyper, n_bins=cfg.bins,
                        exclude_zero=exclude_zero)
    save_probe(model, args.out)
    print(f"probe: {args.out}")
    print(f"  groups: {', '.join(model.group_names)}")
    print(f"  samples: {len(groups)}")
    print(f"  final loss: {model.final_loss:.6f}")
    return EXIT_OK


def _cmd_probe_eval(args):
    _require_inputs(args.model, args.manifest)
    model = load_probe(args.model)
    features, groups = _probe_dataset(
        args.manifest, args.images_dir, set(args.split),
        set(model.group_names), model.n_bins, model.exclude_zero)
    overall = probe_auroc(model, features, groups)
    probs = predict_proba(model, features)
    groups_arr = np.asarray(groups, dtype=np.str_)
    per_group = {}
    for i, g in enumerate(model.group_names):
        mask = (groups_arr == g).astype(np.int64)
        if 0 < mask.sum() < mask.size:
            from .metrics import auroc
            per_group[g] = auroc(probs[:, i], mask)
    payload = {
        "macro_auroc": overall,
        "per_group_auroc": {g: per_group[g] for g in sorted(per_group)},
        "n_samples": len(groups),
        "groups": list(model.group_names),
        "exclude_zero": model.exclude_zero,
    }
    if args.out:
        _refuse_existing(args.out, args.force)
        with open(args.out, "w", newline="", encoding="utf-8") as fh:
            fh.write("#cxrprep_probe_report_v1\n")
            fh.write(f"#tool_version={__version__}\n")
            fh.write(f"#model={os.path.basename(args.model)}\n")
            fh.write(f"#exclude_zero={int(model.exclude_zero)}\n")
            fh.write(f"#n_samples={len(groups)}\n")
            fh.write("metric,group,value\n")
            fh.write(f"macro_auroc,,{overall:.10g}\n")
            for g in sorted(per_group):
                fh.write(f"group_auroc,{g},{per_group[g]:.10g}\n")
    print(json.dumps(payload, indent=2, sort_keys=True))
    return EXIT_OK


def build_parser():
    parser = argparse.ArgumentParser(
        prog="cxrprep",
        description="Deterministic chest-radiograph preprocessing, "
                    "shortcut probing, and fairness-aware evaluation.",
        epilog=_EPILOG,
        formatter_class=argparse.RawDescriptionHelpFormatter)
    parser.add_argument("--version", action="version",
                        version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("manifest", help="build a train/val/test manifest",
                       epilog=_EPILOG,
                       formatter_class=argparse.RawDescriptionHelpFormatter)
    p.add_argument("--records", required=True, help="records CSV")
    p.add_argument("--labels-csv", required=True, help="labels CSV")
    p.add_argument("--demographics", required=True, help="demographics CSV")
    p.add_argument("--rca", default=None, help="mask quality scores CSV")
    p.add_argument("--method", required=True, choices=METHODS,
                   help="preprocessing method the manifest is for")
    p.add_argument("--out", required=True, help="manifest CSV to write")
    p.add_argument("--exclusion-log", default=None,
                   help="exclusion log path (default: <out>.exclusions.csv)")
    p.add_argument("--no-split", action="store_true",
                   help="route every surviving record to test (external eval)")
    p.add_argument("--force", action="store_true", help="overwrite outputs")
    _add_common_config_flags(p)
    _add_manifest_config_flags(p)
    p.set_defaults(func=_cmd_manifest)

    p = sub.add_parser("prep", help="preprocess images listed in a manifest",
                       epilog=_EPILOG,
                       formatter_class=argparse.RawDescriptionHelpFormatter)
    p.add_argument("--manifest", required=True, help="manifest CSV")
    p.add_argument("--images-root", required=True,
                   help="directory image_path entries are relative to")
    p.add_argument("--masks-root", default=None,
                   help="directory mask_path entries are relative to")
    p.add_argument("--out-dir", required=True, help="output directory")
    p.add_argument("--method", default=None, choices=METHODS,
                   help="override the manifest's method (same filter family)")
    p.add_argument("--split", action="append", default=None,
                   choices=("train", "val", "test"),
                   help="only these splits (repeatable; default all)")
    p.add_argument("--resume", action="store_true",
                   help="keep outputs whose checksum sidecar verifies")
    p.add_argument("--force", action="store_true", help="redo everything")
    _add_common_config_flags(p)
    _add_prep_config_flags(p)
    p.set_defaults(func=_cmd_prep)

    p = sub.add_parser("eval", help="aggregate prediction files into a report",
                       epilog=_EPILOG,
                       formatter_class=argparse.RawDescriptionHelpFormatter)
    p.add_argument("predictions", nargs="+", help="prediction CSV files")
    p.add_argument("--out-dir", required=True, help="report directory")
    p.add_argument("--disparity-mode", default="pairwise",
                   choices=("pairwise", "range"),
                   help="per-label group spread: mean |pairwise diff| or max-min")
    p.add_argument("--force", action="store_true", help="overwrite reports")
    _add_common_config_flags(p)
    p.set_defaults(func=_cmd_eval)

    p = sub.add_parser("probe", help="histogram shortcut probe")
    probe_sub = p.add_subparsers(dest="probe_command", required=True)

    q = probe_sub.add_parser("train", help="fit the probe on a split",
                             epilog=_EPILOG,
                             formatter_class=argparse.RawDescriptionHelpFormatter)
    q.add_argument("--manifest", required=True)
    q.add_argument("--images-dir", required=True,
                   help="directory of preprocessed <record_id>.png files")
    q.add_argument("--out", required=True, help="model file (.npz)")
    q.add_argument("--split", action="append", default=None,
                   choices=("train", "val", "test"))
    q.add_argument("--exclude-zero", action=argparse.BooleanOptionalAction,
                   default=None,
                   help="ignore exact-zero pixels (masked background); "
                        "default: on for masking/cropping manifests")
    q.add_argument("--lr", type=float, default=None, help="learning rate")
    q.add_argument("--steps", type=int, default=None, help="gradient steps")
    q.add_argument("--l2", type=float, default=None, help="L2 strength")
    q.add_argument("--batch-size", type=int, default=None,
                   help="minibatch size (default: full batch)")
    q.add_argument("--force", action="store_true")
    _add_common_config_flags(q)
    q.set_defaults(func=_cmd_probe_train)

    q = probe_sub.add_parser("eval", help="evaluate a saved probe",
                             epilog=_EPILOG,
                             formatter_class=argparse.RawDescriptionHelpFormatter)
    q.add_argument("--model", required=True)
    q.add_argument("--manifest", required=True)
    q.add_argument("--images-dir", required=True)
    q.add_argument("--split", action="append", default=None,
                   choices=("train", "val", "test"))
    q.add_argument("--out", default=None,
                   help="write probe_report.csv-style results here")
    q.add_argument("--force", action="store_true")
    q.set_defaults(func=_cmd_probe_eval)

    return parser


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return exc.code if isinstance(exc.code, int) else EXIT_USAGE
    if args.command == "probe" and getattr(args, "split", None) is None:
        args.split = ["train"] if args.probe_command == "train" else ["test"]
    try:
        return args.func(args)
    except FileNotFoundError as exc:
        print(f"error: missing input: {exc.filename or exc}", file=sys.stderr)
        return EXIT_MISSING_INPUT
    except FileExistsError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_EXISTS
    except FailureThresholdError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_FAILURES
    except (OverlapViolationError, InternalInvariantError, AssertionError) as exc:
        print(f"internal error: {exc}", file=sys.stderr)
        return EXIT_INVARIANT
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except CxrPrepError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_SCHEMA
    except Exception:
        traceback.print_exc()
        return EXIT_UNEXPECTED


if __name__ == "__main__":
    sys.exit(main())
