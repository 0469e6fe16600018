"""cxrharness: train classifiers over a preprocessed corpus and export
prediction CSVs.

Commands:
  train      finetune the diagnostic classifier on a manifest's train split
  race-head  train the demographic head on frozen encoder features
  predict    score a manifest split and write a prediction CSV

Exit codes:
  0  success
  1  unexpected internal error
  2  usage error (bad flags or values)
  3  a required input file is missing
  4  a harness error (schema violation, corrupt image, empty split)
  5  an output already exists (pass --force)
  7  invariant violation (the frozen encoder changed)
"""
import argparse
import os
import sys
import traceback

from . import __version__
from .errors import FrozenEncoderViolation, HarnessError
from .predict import predict
from .spec import TrainSpec
from .train import train_diagnostic, train_race_head

_EPILOG = __doc__.split("Exit codes:")[1] if __doc__ else ""


def _require_inputs(*paths):
    for path in paths:
        if path is not None and not os.path.exists(path):
            raise FileNotFoundError(2, "no such file or directory", path)


def _add_common(p):
    p.add_argument("--seed", type=int, default=0, help="training seed")
    p.add_argument("--max-epochs", type=int, default=None,
                   help="cap on epochs actually run (smoke testing); the "
                        "full schedule stays in the logged metadata")
    p.add_argument("--device", default="cpu", help="torch device")
    p.add_argument("--force", action="store_true", help="overwrite outputs")


def _build_parser():
    parser = argparse.ArgumentParser(
        prog="cxrharness",
        description=__doc__.split("\n\n")[0],
        epilog="exit codes:" + _EPILOG,
        formatter_class=argparse.RawDescriptionHelpFormatter)
    parser.add_argument("--version", action="version",
                        version=f"cxrharness {__version__}")
    sub = parser.add_subparsers(dest="command")

    p = sub.add_parser("train", help="finetune the diagnostic classifier",
                       formatter_class=argparse.RawDescriptionHelpFormatter)
    p.add_argument("--manifest", required=True, help="manifest CSV")
    p.add_argument("--images-dir", required=True,
                   help="directory of preprocessed images")
    p.add_argument("--out-dir", required=True,
                   help="where checkpoint.pt, train_log.csv, run.json land")
    p.add_argument("--no-pretrained", dest="pretrained", action="store_false",
                   help="start from random weights instead of the packaged "
                        "starting point (offline smoke runs)")
    _add_common(p)

    p = sub.add_parser("race-head", help="train the demographic head",
                       formatter_class=argparse.RawDescriptionHelpFormatter)
    p.add_argument("--checkpoint", required=True, help="diagnostic checkpoint")
    p.add_argument("--manifest", required=True, help="manifest CSV")
    p.add_argument("--images-dir", required=True,
                   help="directory of preprocessed images")
    p.add_argument("--out-dir", required=True,
                   help="where race_head.pt, train_log.csv, run.json land")
    _add_common(p)

    p = sub.add_parser("predict", help="score a split into a prediction CSV",
                       formatter_class=argparse.RawDescriptionHelpFormatter)
    p.add_argument("--checkpoint", required=True, help="diagnostic checkpoint")
    p.add_argument("--race-head", default=None,
                   help="demographic head (adds race_score columns)")
    p.add_argument("--manifest", required=True, help="manifest CSV")
    p.add_argument("--images-dir", required=True,
                   help="directory of preprocessed images")
    p.add_argument("--out", required=True, help="prediction CSV to write")
    p.add_argument("--dataset", required=True,
                   choices=("internal", "external"),
                   help="which evaluation corpus this manifest represents")
    p.add_argument("--method", default=None,
                   help="method tag (default: the manifest's)")
    p.add_argument("--seed", type=int, default=None,
                   help="seed tag (default: the checkpoint's)")
    p.add_argument("--split", action="append", default=None,
                   help="manifest split(s) to score (default: test)")
    p.add_argument("--device", default="cpu", help="torch device")
    p.add_argument("--force", action="store_true", help="overwrite outputs")

    return parser


def _cmd_train(args):
    _require_inputs(args.manifest, args.images_dir)
    spec = TrainSpec(pretrained=args.pretrained)
    summary = train_diagnostic(args.manifest, args.images_dir, args.out_dir,
                               spec, args.seed, max_epochs=args.max_epochs,
                               device=args.device, force=args.force)
    best = summary["best_val_auroc"]
    shown = "undefined" if best is None else f"{best:.4f}"
    print(f"checkpoint: {summary['checkpoint']}")
    print(f"  epochs run: {summary['epochs_run']}, "
          f"best val auroc: {shown} (epoch {summary['best_epoch']})")
    return 0


def _cmd_race_head(args):
    _require_inputs(args.checkpoint, args.manifest, args.images_dir)
    spec = TrainSpec()
    summary = train_race_head(args.checkpoint, args.manifest, args.images_dir,
                              args.out_dir, spec, args.seed,
                              max_epochs=args.max_epochs,
                              device=args.device, force=args.force)
    best = summary["best_val_auroc"]
    shown = "undefined" if best is None else f"{best:.4f}"
    print(f"race head: {summary['race_head']}")
    print(f"  epochs run: {summary['epochs_run']}, "
          f"best val auroc: {shown} (epoch {summary['best_epoch']})")
    print(f"  encoder checksum held: {summary['encoder_checksum_before'][:12]}")
    return 0


def _cmd_predict(args):
    _require_inputs(args.checkpoint, args.race_head, args.manifest,
                    args.images_dir)
    splits = tuple(args.split) if args.split else ("test",)
    summary = predict(args.checkpoint, args.manifest, args.images_dir,
                      args.out, args.dataset, race_head_path=args.race_head,
                      method=args.method, seed=args.seed, splits=splits,
                      device=args.device, force=args.force)
    print(f"predictions: {summary['path']}")
    print(f"  rows: {summary['n_rows']}, labels: {len(summary['labels'])}, "
          f"race score columns: {len(summary['race_groups'])}")
    return 0


_COMMANDS = {"train": _cmd_train, "race-head": _cmd_race_head,
             "predict": _cmd_predict}


def main(argv=None):
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return exc.code if exc.code is not None else 0
    if args.command is None:
        parser.print_usage(sys.stderr)
        return 2
    try:
        return _COMMANDS[args.command](args)
    except FileNotFoundError as exc:
        print(f"error: missing file: {exc.filename}", file=sys.stderr)
        return 3
    except FileExistsError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 5
    except FrozenEncoderViolation as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 7
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except HarnessError as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 4
    except Exception:
        traceback.print_exc()
        return 1


if __name__ == "__main__":
    sys.exit(main())
