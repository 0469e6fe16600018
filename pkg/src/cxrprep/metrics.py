"""Evaluation metrics and the cross-method report.

AUROC is the tie-aware rank statistic (each tied pair counts half), so
it matches pairwise counting to within float addition error.  The
disparity summary compares per-group diagnostic AUROCs within each
label and averages over labels; cells that cannot support an AUROC are
skipped and reported, never silently zeroed.
"""
import csv
from dataclasses import dataclass, field

import numpy as np

from .errors import (
    DegenerateLabelsError,
    DuplicateRunError,
    EmptyRunSetError,
    MissingRaceScoresError,
    NoValidCellsError,
    SchemaMismatchError,
)

METHOD_ORDER = ("baseline", "masking", "cropping", "clahe")
METHOD_DISPLAY = {"baseline": "Baseline", "masking": "Masking",
                  "cropping": "Cropping", "clahe": "CLAHE"}
DATASET_ORDER = ("internal", "external")


def auroc(scores, labels):
    """Area under the ROC curve with half credit for tied scores."""
    s = np.asarray(scores, dtype=np.float64)
    y = np.asarray(labels)
    if s.ndim != 1 or y.shape != s.shape:
        raise ValueError("scores and labels must be 1-D and the same length")
    if not np.all(np.isfinite(s)):
        raise ValueError("scores must be finite")
    pos = y == 1
    neg = y == 0
    n_pos = int(pos.sum())
    n_neg = int(neg.sum())
    if n_pos == 0 or n_neg == 0:
        raise DegenerateLabelsError(
            f"need at least one positive and one negative (got {n_pos} pos, {n_neg} neg)")
    if n_pos + n_neg != s.size:
        raise ValueError("labels must be 0 or 1")
    order = np.argsort(s, kind="mergesort")
    ranks = np.empty(s.size, dtype=np.float64)
    sorted_s = s[order]
    i = 0
    while i < s.size:
        j = i
        while j + 1 < s.size and sorted_s[j + 1] == sorted_s[i]:
            j += 1
        # average rank (1-based) of the tie group [i, j]
        ranks[order[i:j + 1]] = 0.5 * (i + j) + 1.0
        i = j + 1
    rank_sum = float(ranks[pos].sum())
    return (rank_sum - 0.5 * n_pos * (n_pos + 1)) / (n_pos * n_neg)


@dataclass
class PredictionSet:
    """One run's scores: per-label ground truth and scores, plus
    optional per-group scores from a demographics head."""
    method: str
    seed: int
    dataset: str
    sample_ids: list
    race_groups: np.ndarray          # (n,) unicode
    labels: tuple                    # label names, file order
    gt: np.ndarray                   # (n, L) float, NaN where unlabeled
    scores: np.ndarray               # (n, L) float
    race_score_groups: tuple = None  # group names or None
    race_scores: np.ndarray = None   # (n, G) float or None


def write_predictions(pred, path):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        fh.write(f"#method={pred.method}\n")
        fh.write(f"#seed={pred.seed}\n")
        fh.write(f"#dataset={pred.dataset}\n")
        writer = csv.writer(fh, lineterminator="\n")
        header = ["sample_id", "race_group"]
        header += [f"gt:{lb}" for lb in pred.labels]
        header += [f"score:{lb}" for lb in pred.labels]
        if pred.race_score_groups:
            header += [f"race_score:{g}" for g in pred.race_score_groups]
        writer.writerow(header)
        for i, sid in enumerate(pred.sample_ids):
            row = [sid, str(pred.race_groups[i])]
            row += ["" if np.isnan(v) else str(int(v)) for v in pred.gt[i]]
            row += [f"{v:.10g}" for v in pred.scores[i]]
            if pred.race_score_groups:
                row += [f"{v:.10g}" for v in pred.race_scores[i]]
            writer.writerow(row)


def read_predictions(path):
    meta = {}
    with open(path, newline="", encoding="utf-8") as fh:
        pos = fh.tell()
        line = fh.readline()
        while line.startswith("#"):
            body = line[1:].rstrip("\n")
            if "=" in body:
                k, v = body.split("=", 1)
                meta[k] = v
            pos = fh.tell()
            line = fh.readline()
        fh.seek(pos)
        reader = csv.DictReader(fh)
        fields = reader.fieldnames or []
        for key in ("method", "seed", "dataset"):
            if key not in meta:
                raise SchemaMismatchError(f"{path}: missing #{key}= metadata line")
        if "sample_id" not in fields or "race_group" not in fields:
            raise SchemaMismatchError(f"{path}: missing sample_id/race_group columns")
        labels = tuple(c[len("gt:"):] for c in fields if c.startswith("gt:"))
        if not labels:
            raise SchemaMismatchError(f"{path}: no gt:<label> columns")
        for lb in labels:
            if f"score:{lb}" not in fields:
                raise SchemaMismatchError(f"{path}: gt:{lb} has no score:{lb} column")
        race_groups_cols = tuple(c[len("race_score:"):]
                                 for c in fields if c.startswith("race_score:"))
        sample_ids, races, gt_rows, score_rows, race_rows = [], [], [], [], []
        for ln, row in enumerate(reader, start=5):
            sample_ids.append(row["sample_id"])
            races.append(row["race_group"])
            try:
                gt_rows.append([float("nan") if row[f"gt:{lb}"] == ""
                                else float(row[f"gt:{lb}"]) for lb in labels])
                score_rows.append([float(row[f"score:{lb}"]) for lb in labels])
                if race_groups_cols:
                    race_rows.append([float(row[f"race_score:{g}"])
                                      for g in race_groups_cols])
            except (ValueError, TypeError) as exc:
                raise SchemaMismatchError(f"{path}:{ln}: bad numeric cell ({exc})")
    try:
        seed = int(meta["seed"])
    except ValueError:
        raise SchemaMismatchError(f"{path}: #seed= must be an integer")
    n = len(sample_ids)
    return PredictionSet(
        method=meta["method"], seed=seed, dataset=meta["dataset"],
        sample_ids=sample_ids,
        race_groups=np.asarray(races, dtype=np.str_),
        labels=labels,
        gt=np.asarray(gt_rows, dtype=np.float64).reshape(n, len(labels)),
        scores=np.asarray(score_rows, dtype=np.float64).reshape(n, len(labels)),
        race_score_groups=race_groups_cols or None,
        race_scores=(np.asarray(race_rows, dtype=np.float64).reshape(n, len(race_groups_cols))
                     if race_groups_cols else None),
    )


def _labeled_rows(pred, col):
    mask = ~np.isnan(pred.gt[:, col])
    return pred.scores[mask, col], pred.gt[mask, col].astype(np.int64), mask


def macro_diagnostic_auroc(pred, label_list=None):
    """Unweighted mean of per-label AUROC over labeled rows."""
    names = label_list if label_list is not None else pred.labels
    values = []
    for lb in names:
        if lb not in pred.labels:
            raise SchemaMismatchError(f"label {lb!r} absent from predictions")
        col = pred.labels.index(lb)
        s, y, _ = _labeled_rows(pred, col)
        try:
            values.append(auroc(s, y))
        except DegenerateLabelsError as exc:
            raise DegenerateLabelsError(f"label {lb!r}: {exc}")
    return float(np.mean(values))


def race_auroc(pred):
    """Macro one-vs-rest AUROC of the demographics-head scores."""
    if pred.race_scores is None:
        raise MissingRaceScoresError(
            f"run {pred.method}/seed{pred.seed}/{pred.dataset} has no race_score columns")
    present = [g for g in pred.race_score_groups
               if np.any(pred.race_groups == g)]
    if len(set(pred.race_groups.tolist())) < 2:
        raise DegenerateLabelsError("need at least two demographic groups represented")
    values = []
    for g in present:
        col = pred.race_score_groups.index(g)
        values.append(auroc(pred.race_scores[:, col],
                            (pred.race_groups == g).astype(np.int64)))
    return float(np.mean(values))


@dataclass
class DisparityCoverage:
    valid_labels: int = 0
    total_labels: int = 0
    skipped_cells: int = 0
    total_cells: int = 0


def group_disparity(pred, mode="pairwise", label_list=None, groups=None):
    """Spread of per-group diagnostic AUROC, averaged over labels.

    mode="pairwise": mean absolute difference over unordered group
    pairs (default).  mode="range": max minus min.  Returns
    (value, DisparityCoverage).
    """
    if mode not in ("pairwise", "range"):
        raise ValueError(f"unknown disparity mode {mode!r}")
    names = label_list if label_list is not None else pred.labels
    group_names = (list(groups) if groups is not None
                   else sorted(set(pred.race_groups.tolist())))
    cov = DisparityCoverage(total_labels=len(names))
    per_label = []
    for lb in names:
        if lb not in pred.labels:
            raise SchemaMismatchError(f"label {lb!r} absent from predictions")
        col = pred.labels.index(lb)
        group_values = []
        for g in group_names:
            cov.total_cells += 1
            sel = (pred.race_groups == g) & ~np.isnan(pred.gt[:, col])
            s = pred.scores[sel, col]
            y = pred.gt[sel, col].astype(np.int64)
            try:
                group_values.append(auroc(s, y))
            except DegenerateLabelsError:
                cov.skipped_cells += 1
        if len(group_values) < 2:
            continue
        v = np.asarray(group_values, dtype=np.float64)
        if mode == "range":
            per_label.append(float(v.max() - v.min()))
        else:
            diffs = [abs(v[i] - v[j])
                     for i in range(len(v)) for j in range(i + 1, len(v))]
            per_label.append(float(np.mean(diffs)))
        cov.valid_labels += 1
    if not per_label:
        raise NoValidCellsError(
            "no label had two or more groups with a defined AUROC")
    return float(np.mean(per_label)), cov


def aggregate_seeds(values):
    """Mean and sample standard deviation across seeds; std is None
    when only one seed is present."""
    v = np.asarray(list(values), dtype=np.float64)
    if v.size == 0:
        raise EmptyRunSetError("no values to aggregate")
    mean = float(v.mean())
    std = float(v.std(ddof=1)) if v.size > 1 else None
    return mean, std


@dataclass
class ReportCell:
    mean: float
    std: float  # None for single seed
    n: int


@dataclass
class ReportTable:
    methods: list
    datasets: list
    race: dict = field(default_factory=dict)       # (method, dataset) -> ReportCell
    diagnostic: dict = field(default_factory=dict)
    disparity: dict = field(default_factory=dict)
    coverage: dict = field(default_factory=dict)   # (method, dataset) -> DisparityCoverage
    disparity_mode: str = "pairwise"
    tool_version: str = ""
    config_hash: str = ""


def _method_sort_key(method):
    try:
        return (0, METHOD_ORDER.index(method))
    except ValueError:
        return (1, method)


def _dataset_sort_key(dataset):
    try:
        return (0, DATASET_ORDER.index(dataset))
    except ValueError:
        return (1, dataset)


def build_report(runs, disparity_mode="pairwise", label_list=None,
                 tool_version="", config_hash=""):
    """Aggregate PredictionSets (one per method/seed/dataset) into a table."""
    runs = list(runs)
    if not runs:
        raise EmptyRunSetError("no prediction files supplied")
    seen = set()
    for p in runs:
        key = (p.method, p.seed, p.dataset)
        if key in seen:
            raise DuplicateRunError(f"duplicate run {key}")
        seen.add(key)

    methods = sorted({p.method for p in runs}, key=_method_sort_key)
    datasets = sorted({p.dataset for p in runs}, key=_dataset_sort_key)
    table = ReportTable(methods=methods, datasets=datasets,
                        disparity_mode=disparity_mode,
                        tool_version=tool_version, config_hash=config_hash)
    for method in methods:
        for dataset in datasets:
            cell_runs = sorted((p for p in runs
                                if p.method == method and p.dataset == dataset),
                               key=lambda p: p.seed)
            if not cell_runs:
                continue
            diag = [macro_diagnostic_auroc(p, label_list) for p in cell_runs]
            m, s = aggregate_seeds(diag)
            table.diagnostic[(method, dataset)] = ReportCell(m, s, len(diag))
            if all(p.race_scores is not None for p in cell_runs):
                race = [race_auroc(p) for p in cell_runs]
                m, s = aggregate_seeds(race)
                table.race[(method, dataset)] = ReportCell(m, s, len(race))
            disp, covs = [], []
            for p in cell_runs:
                value, cov = group_disparity(p, disparity_mode, label_list)
                disp.append(value)
                covs.append(cov)
            m, s = aggregate_seeds(disp)
            table.disparity[(method, dataset)] = ReportCell(m, s, len(disp))
            total_cov = DisparityCoverage(
                valid_labels=sum(c.valid_labels for c in covs),
                total_labels=sum(c.total_labels for c in covs),
                skipped_cells=sum(c.skipped_cells for c in covs),
                total_cells=sum(c.total_cells for c in covs))
            table.coverage[(method, dataset)] = total_cov
    return table


def _num(x):
    return "" if x is None else f"{x:.10g}"


def render_report_csv(table):
    lines = ["#cxrprep_report_v1"]
    if table.tool_version:
        lines.append(f"#tool_version={table.tool_version}")
    if table.config_hash:
        lines.append(f"#config_hash={table.config_hash}")
    lines.append(f"#disparity_mode={table.disparity_mode}")
    lines.append("method,dataset,n_seeds,race_auroc_mean,race_auroc_std,"
                 "diagnostic_auroc_mean,diagnostic_auroc_std,"
                 "disparity_mean,disparity_std,skipped_cells,total_cells")
    for method in table.methods:
        for dataset in table.datasets:
            key = (method, dataset)
            if key not in table.diagnostic:
                continue
            diag = table.diagnostic[key]
            race = table.race.get(key)
            disp = table.disparity[key]
            cov = table.coverage[key]
            lines.append(",".join([
                method, dataset, str(diag.n),
                _num(race.mean if race else None), _num(race.std if race else None),
                _num(diag.mean), _num(diag.std),
                _num(disp.mean), _num(disp.std),
                str(cov.skipped_cells), str(cov.total_cells),
            ]))
    return "\n".join(lines) + "\n"


def _fmt_cell(cell):
    if cell is None:
        return "-"
    if cell.std is None:
        return f"{cell.mean:.3f}"
    return f"{cell.mean:.3f} ± {cell.std:.3f}"


def render_report_markdown(table):
    out = ["# Preprocessing comparison", ""]
    if table.tool_version:
        out.append(f"Tool version: {table.tool_version}")
    if table.config_hash:
        out.append(f"Config hash: `{table.config_hash}`")
    out.append(f"Disparity mode: {table.disparity_mode} "
               "(mean absolute pairwise gap between per-group AUROCs, "
               "averaged over labels)" if table.disparity_mode == "pairwise"
               else f"Disparity mode: {table.disparity_mode} "
               "(max minus min per-group AUROC, averaged over labels)")
    out.append("")

    def display(method):
        return METHOD_DISPLAY.get(method, method)

    header = ["Method"]
    for dataset in table.datasets:
        header.append(f"Race AUROC ({dataset})")
    for dataset in table.datasets:
        header.append(f"Diagnostic AUROC ({dataset})")
    out.append("| " + " | ".join(header) + " |")
    out.append("|" + "---|" * len(header))
    for method in table.methods:
        row = [display(method)]
        for dataset in table.datasets:
            row.append(_fmt_cell(table.race.get((method, dataset))))
        for dataset in table.datasets:
            row.append(_fmt_cell(table.diagnostic.get((method, dataset))))
        out.append("| " + " | ".join(row) + " |")
    out.append("")

    header = ["Method"] + [f"Disparity ({d})" for d in table.datasets]
    out.append("| " + " | ".join(header) + " |")
    out.append("|" + "---|" * len(header))
    for method in table.methods:
        row = [display(method)]
        for dataset in table.datasets:
            row.append(_fmt_cell(table.disparity.get((method, dataset))))
        out.append("| " + " | ".join(row) + " |")
    out.append("")

    skipped = sum(c.skipped_cells for c in table.coverage.values())
    total = sum(c.total_cells for c in table.coverage.values())
    out.append(f"Disparity coverage: {total - skipped}/{total} "
               "(label, group) cells had a defined AUROC.")
    return "\n".join(out) + "\n"
