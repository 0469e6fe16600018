"""The prediction CSV contract: writer plus standalone validator.

Layout: leading `#method=`, `#seed=`, `#dataset=` metadata lines (plus
any additional `#key=value` lines, which downstream readers skip), then
a header of `sample_id`, `race_group`, one `gt:<label>` and one
`score:<label>` column per label, and optionally one
`race_score:<group>` column per demographic group.  Ground-truth cells
are empty when a label was not assessed; every score is a float in
[0, 1].
"""
import csv
import math

import numpy as np

from .errors import SchemaViolationError


def _check_unit_interval(name, values):
    arr = np.asarray(values, dtype=np.float64)
    if not np.all(np.isfinite(arr)):
        raise SchemaViolationError(f"{name} contains non-finite values")
    if arr.size and (arr.min() < 0.0 or arr.max() > 1.0):
        raise SchemaViolationError(f"{name} falls outside [0, 1]")


def validate_prediction_table(label_list, gt, scores,
                              race_groups=None, race_scores=None):
    """Validate in-memory prediction arrays before anything is written."""
    gt = np.asarray(gt, dtype=np.float64)
    scores = np.asarray(scores, dtype=np.float64)
    if gt.shape != scores.shape or gt.shape[1] != len(label_list):
        raise SchemaViolationError(
            f"gt {gt.shape} and scores {scores.shape} must both be "
            f"(n, {len(label_list)})")
    known = np.isnan(gt) | (gt == 0.0) | (gt == 1.0)
    if not known.all():
        raise SchemaViolationError("ground truth cells must be 0, 1, or absent")
    _check_unit_interval("scores", scores)
    if (race_groups is None) != (race_scores is None):
        raise SchemaViolationError(
            "race_groups and race_scores must be given together")
    if race_scores is not None:
        race_scores = np.asarray(race_scores, dtype=np.float64)
        if race_scores.shape != (gt.shape[0], len(race_groups)):
            raise SchemaViolationError(
                f"race_scores {race_scores.shape} must be "
                f"(n, {len(race_groups)})")
        _check_unit_interval("race scores", race_scores)


def write_prediction_csv(path, *, method, seed, dataset, extra_meta,
                         label_list, sample_ids, row_groups, gt, scores,
                         race_groups=None, race_scores=None):
    """Validate the table, then write it in the documented layout."""
    validate_prediction_table(label_list, gt, scores, race_groups, race_scores)
    gt = np.asarray(gt, dtype=np.float64)
    scores = np.asarray(scores, dtype=np.float64)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        fh.write(f"#method={method}\n")
        fh.write(f"#seed={seed}\n")
        fh.write(f"#dataset={dataset}\n")
        for key, value in (extra_meta or {}).items():
            fh.write(f"#{key}={value}\n")
        writer = csv.writer(fh, lineterminator="\n")
        header = ["sample_id", "race_group"]
        header += [f"gt:{lb}" for lb in label_list]
        header += [f"score:{lb}" for lb in label_list]
        if race_groups:
            header += [f"race_score:{g}" for g in race_groups]
        writer.writerow(header)
        for i, sid in enumerate(sample_ids):
            row = [sid, row_groups[i]]
            row += ["" if math.isnan(v) else str(int(v)) for v in gt[i]]
            row += [f"{v:.10g}" for v in scores[i]]
            if race_groups:
                row += [f"{v:.10g}" for v in race_scores[i]]
            writer.writerow(row)


def validate_prediction_csv(path):
    """Structural check of a written prediction file.

    Raises SchemaViolationError on any deviation; returns a small
    summary dict (metadata, labels, groups, row count) when the file
    conforms.
    """
    meta = {}
    with open(path, newline="", encoding="utf-8") as fh:
        pos = fh.tell()
        line = fh.readline()
        while line.startswith("#"):
            body = line[1:].rstrip("\n")
            if "=" in body:
                key, value = body.split("=", 1)
                meta[key] = value
            pos = fh.tell()
            line = fh.readline()
        fh.seek(pos)
        for key in ("method", "seed", "dataset"):
            if key not in meta:
                raise SchemaViolationError(f"{path}: missing #{key}= line")
        try:
            int(meta["seed"])
        except ValueError:
            raise SchemaViolationError(f"{path}: #seed= must be an integer")
        reader = csv.DictReader(fh)
        fields = reader.fieldnames or []
        for col in ("sample_id", "race_group"):
            if col not in fields:
                raise SchemaViolationError(f"{path}: missing {col} column")
        labels = tuple(c[len("gt:"):] for c in fields if c.startswith("gt:"))
        if not labels:
            raise SchemaViolationError(f"{path}: no gt:<label> columns")
        for lb in labels:
            if f"score:{lb}" not in fields:
                raise SchemaViolationError(
                    f"{path}: gt:{lb} has no score:{lb} column")
        for col in fields:
            if col.startswith("score:") and f"gt:{col[len('score:'):]}" not in fields:
                raise SchemaViolationError(f"{path}: {col} has no gt column")
        groups = tuple(c[len("race_score:"):]
                       for c in fields if c.startswith("race_score:"))
        n_rows = 0
        for ln, row in enumerate(reader, start=len(meta) + 2):
            for lb in labels:
                cell = row[f"gt:{lb}"]
                if cell not in ("", "0", "1"):
                    raise SchemaViolationError(
                        f"{path}:{ln}: gt cell {cell!r} not in {{'', 0, 1}}")
                score = _parse_unit(path, ln, row[f"score:{lb}"])
                del score
            for g in groups:
                _parse_unit(path, ln, row[f"race_score:{g}"])
            n_rows += 1
    return {"meta": meta, "labels": labels, "race_groups": groups,
            "n_rows": n_rows}


def _parse_unit(path, line_no, cell):
    try:
        value = float(cell)
    except (TypeError, ValueError):
        raise SchemaViolationError(f"{path}:{line_no}: bad numeric cell {cell!r}")
    if not math.isfinite(value) or not 0.0 <= value <= 1.0:
        raise SchemaViolationError(
            f"{path}:{line_no}: score {cell!r} outside [0, 1]")
    return value
