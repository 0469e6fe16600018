"""Reproducible train/val/test manifest building.

Policy order: frontal filter -> one record per patient -> (mask-quality
filter when the method consumes masks) -> stratified positive sampling
into the test set -> patient-disjoint train/val split.  Records are
kept sorted by record_id before any seeded step, and all randomness
comes from named PCG64 streams, so identical inputs and seed produce
byte-identical manifests.
"""
import csv
from dataclasses import dataclass, field, replace

import numpy as np

from .errors import DuplicateRecordIdError, OverlapViolationError, SchemaMismatchError

RNG_NAME = "pcg64"

# disease subset of the CheXpert label schema used unless configured otherwise
DEFAULT_LABELS = (
    "Enlarged Cardiomediastinum",
    "Cardiomegaly",
    "Lung Opacity",
    "Lung Lesion",
    "Edema",
    "Consolidation",
    "Pneumonia",
    "Atelectasis",
    "Pneumothorax",
    "Pleural Effusion",
    "Fracture",
)

DEFAULT_GROUPS = ("White", "Black", "Asian", "Hispanic")

FRONTAL_VIEWS = ("AP", "PA")
SPLITS = ("train", "val", "test", "excluded")

_SAMPLE_STREAM = 0
_SPLIT_STREAM = 1


@dataclass
class ManifestRecord:
    record_id: str
    patient_id: str
    view: str
    labels: dict
    race_group: str
    rca_score: float | None
    image_path: str
    mask_path: str | None
    split: str = "excluded"

    def labeled_count(self):
        return sum(1 for v in self.labels.values() if v is not None)


@dataclass(frozen=True)
class SamplingSpec:
    positives_per_cell: int = 35
    label_list: tuple = DEFAULT_LABELS
    groups: tuple = DEFAULT_GROUPS
    seed: int = 0
    val_fraction: float = 0.05

    def __post_init__(self):
        if self.positives_per_cell < 1:
            raise ValueError("positives_per_cell must be >= 1")
        if not 0 < self.val_fraction < 1:
            raise ValueError("val_fraction must be in (0, 1)")


@dataclass
class IngestIssue:
    source: str
    line: int
    record_id: str
    reason: str


@dataclass
class ManifestBuild:
    records: list            # included records with split assigned
    exclusions: list         # (record_id, reason)
    issues: list             # IngestIssue rows from parsing
    shortfalls: list         # (label, group, wanted, got)
    spec: SamplingSpec = field(default=None)


def normalize_race(raw):
    """Map a free-text race/ethnicity string onto the configured groups."""
    s = (raw or "").strip().upper()
    if "HISPANIC" in s or "LATINO" in s:
        return "Hispanic"
    if "WHITE" in s:
        return "White"
    if "BLACK" in s or "AFRICAN" in s:
        return "Black"
    if "ASIAN" in s:
        return "Asian"
    return "Other"


def normalize_view(raw):
    s = (raw or "").strip().upper()
    if s in ("AP", "PA"):
        return s
    if "LATERAL" in s or s in ("LL", "L"):
        return "LATERAL"
    return "OTHER"


def parse_label_value(raw):
    """CheXpert-style cell: 1 positive, 0 negative, -1/blank unlabeled."""
    s = (raw or "").strip()
    if s == "":
        return None
    v = float(s)
    if v == 1:
        return 1
    if v == 0:
        return 0
    if v == -1:
        return None
    raise ValueError(f"label value {raw!r} not in {{1, 0, -1, blank}}")


def _read_csv(path):
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None:
            raise SchemaMismatchError(f"{path}: empty file")
        rows = list(reader)
    return reader.fieldnames, rows


def _require_columns(path, fieldnames, required):
    missing = [c for c in required if c not in fieldnames]
    if missing:
        raise SchemaMismatchError(f"{path}: missing columns {missing}")


def ingest_metadata(records_csv, labels_csv, demographics_csv, rca_csv=None,
                    label_list=DEFAULT_LABELS):
    """Join the metadata files into one record per recording.

    Returns (records sorted by record_id, ingest issues).  Unparseable
    rows land in the issue list, never silently dropped; missing
    demographics map to group Other.
    """
    issues = []

    fields, rows = _read_csv(records_csv)
    _require_columns(records_csv, fields, ["record_id", "patient_id", "view", "image_path"])
    has_mask_col = "mask_path" in fields

    lfields, lrows = _read_csv(labels_csv)
    _require_columns(labels_csv, lfields, ["record_id"] + list(label_list))
    labels_by_id = {}
    for i, row in enumerate(lrows, start=2):
        rid = (row.get("record_id") or "").strip()
        if not rid:
            issues.append(IngestIssue(labels_csv, i, "", "labels:missing_record_id"))
            continue
        if rid in labels_by_id:
            issues.append(IngestIssue(labels_csv, i, rid, "labels:duplicate_row"))
            continue
        try:
            labels_by_id[rid] = {lb: parse_label_value(row.get(lb)) for lb in label_list}
        except ValueError as exc:
            issues.append(IngestIssue(labels_csv, i, rid, f"labels:{exc}"))

    dfields, drows = _read_csv(demographics_csv)
    _require_columns(demographics_csv, dfields, ["patient_id", "race"])
    race_by_patient = {}
    for i, row in enumerate(drows, start=2):
        pid = (row.get("patient_id") or "").strip()
        if not pid:
            issues.append(IngestIssue(demographics_csv, i, "", "demographics:missing_patient_id"))
            continue
        race_by_patient[pid] = normalize_race(row.get("race"))

    rca_by_id = {}
    if rca_csv is not None:
        rfields, rrows = _read_csv(rca_csv)
        _require_columns(rca_csv, rfields, ["record_id", "rca_score"])
        for i, row in enumerate(rrows, start=2):
            rid = (row.get("record_id") or "").strip()
            raw = (row.get("rca_score") or "").strip()
            if not rid:
                issues.append(IngestIssue(rca_csv, i, "", "rca:missing_record_id"))
                continue
            try:
                score = float(raw)
            except ValueError:
                issues.append(IngestIssue(rca_csv, i, rid, f"rca:bad_score {raw!r}"))
                continue
            if not 0.0 <= score <= 1.0:
                issues.append(IngestIssue(rca_csv, i, rid, f"rca:score_out_of_range {raw!r}"))
                continue
            rca_by_id[rid] = score

    records = {}
    for i, row in enumerate(rows, start=2):
        rid = (row.get("record_id") or "").strip()
        pid = (row.get("patient_id") or "").strip()
        if not rid or not pid:
            issues.append(IngestIssue(records_csv, i, rid, "records:missing_id"))
            continue
        if rid in records:
            raise DuplicateRecordIdError(f"{records_csv}:{i}: duplicate record_id {rid!r}")
        labels = labels_by_id.pop(rid, None)
        if labels is None:
            issues.append(IngestIssue(records_csv, i, rid, "labels:missing_row"))
            labels = {lb: None for lb in label_list}
        mask_path = (row.get("mask_path") or "").strip() if has_mask_col else ""
        records[rid] = ManifestRecord(
            record_id=rid,
            patient_id=pid,
            view=normalize_view(row.get("view")),
            labels=labels,
            race_group=race_by_patient.get(pid, "Other"),
            rca_score=rca_by_id.get(rid),
            image_path=(row.get("image_path") or "").strip(),
            mask_path=mask_path or None,
        )

    for rid in sorted(labels_by_id):
        issues.append(IngestIssue(labels_csv, 0, rid, "labels:orphan_row"))

    return [records[rid] for rid in sorted(records)], issues


def select_frontal(records):
    return [r for r in records if r.view in FRONTAL_VIEWS]


def select_one_per_patient(records):
    """Keep, per patient, the record with the most labels provided;
    ties break to the lexicographically smallest record_id."""
    best = {}
    for r in records:
        cur = best.get(r.patient_id)
        if cur is None:
            best[r.patient_id] = r
            continue
        key = (-r.labeled_count(), r.record_id)
        cur_key = (-cur.labeled_count(), cur.record_id)
        if key < cur_key:
            best[r.patient_id] = r
    kept_ids = {r.record_id for r in best.values()}
    return [r for r in records if r.record_id in kept_ids]


def filter_by_rca(records, threshold=0.7):
    """Strictly-greater-than quality gate; records without a score are
    excluded with their own reason."""
    kept, excluded = [], []
    for r in records:
        if r.rca_score is None:
            excluded.append((r, "rca:missing_score"))
        elif r.rca_score > threshold:
            kept.append(r)
        else:
            excluded.append((r, f"rca:not_above_{threshold:g}"))
    return kept, excluded


def _stream_rng(seed, stream):
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence([seed, stream])))


def sample_test_set(records, spec):
    """Draw up to positives_per_cell positives per (label, group) cell.

    A record positive for several labels may fill several cells but
    appears once in the output.  Returns (test records in record_id
    order, shortfall list).
    """
    rng = _stream_rng(spec.seed, _SAMPLE_STREAM)
    chosen = set()
    shortfalls = []
    for label in spec.label_list:
        for group in spec.groups:
            cell = [r for r in records
                    if r.race_group == group and r.labels.get(label) == 1]
            k = min(spec.positives_per_cell, len(cell))
            if k < spec.positives_per_cell:
                shortfalls.append((label, group, spec.positives_per_cell, len(cell)))
            if k == 0:
                continue
            idx = rng.choice(len(cell), size=k, replace=False)
            chosen.update(cell[i].record_id for i in idx)
    return [r for r in records if r.record_id in chosen], shortfalls


def split_train_val(records, spec, test_patient_ids=frozenset()):
    """Patient-level split: every record of a patient lands on one side."""
    rng = _stream_rng(spec.seed, _SPLIT_STREAM)
    patients = sorted({r.patient_id for r in records})
    overlap = set(patients) & set(test_patient_ids)
    if overlap:
        raise OverlapViolationError(
            f"patients present in both test and train/val pool: {sorted(overlap)[:5]}")
    n_val = int(round(len(patients) * spec.val_fraction))
    n_val = min(n_val, max(len(patients) - 1, 0))
    perm = rng.permutation(len(patients))
    val_patients = {patients[i] for i in perm[:n_val]}
    train = [r for r in records if r.patient_id not in val_patients]
    val = [r for r in records if r.patient_id in val_patients]
    train_p = {r.patient_id for r in train}
    val_p = {r.patient_id for r in val}
    if train_p & val_p or (train_p | val_p) & set(test_patient_ids):
        raise OverlapViolationError("patient sets are not disjoint")
    return train, val


def build_manifest(records, spec, method="baseline", rca_threshold=0.7,
                   no_split=False):
    """Apply the full policy and return a ManifestBuild."""
    exclusions = []

    frontal = select_frontal(records)
    frontal_ids = {r.record_id for r in frontal}
    for r in records:
        if r.record_id not in frontal_ids:
            exclusions.append((r.record_id, f"view:{r.view.lower()}"))

    selected = select_one_per_patient(frontal)
    selected_ids = {r.record_id for r in selected}
    for r in frontal:
        if r.record_id not in selected_ids:
            exclusions.append((r.record_id, "selection:not_most_labeled"))

    pool = selected
    if method in ("masking", "cropping"):
        no_mask = [r for r in pool if r.mask_path is None]
        for r in no_mask:
            exclusions.append((r.record_id, "mask:missing_path"))
        pool = [r for r in pool if r.mask_path is not None]
        pool, rca_excluded = filter_by_rca(pool, rca_threshold)
        for r, reason in rca_excluded:
            exclusions.append((r.record_id, reason))

    shortfalls = []
    if no_split:
        included = [replace(r, split="test") for r in pool]
    else:
        test, shortfalls = sample_test_set(pool, spec)
        test_ids = {r.record_id for r in test}
        test_patients = {r.patient_id for r in test}
        rest = [r for r in pool if r.record_id not in test_ids
                and r.patient_id not in test_patients]
        for r in pool:
            if r.record_id not in test_ids and r.patient_id in test_patients:
                exclusions.append((r.record_id, "split:patient_in_test"))
        train, val = split_train_val(rest, spec, test_patients)
        included = ([replace(r, split="train") for r in train]
                    + [replace(r, split="val") for r in val]
                    + [replace(r, split="test") for r in test])
        included.sort(key=lambda r: r.record_id)

    exclusions.sort()
    return ManifestBuild(records=included, exclusions=exclusions, issues=[],
                         shortfalls=shortfalls, spec=spec)


def _format_rca(score):
    return "" if score is None else f"{score:.6g}"


def _format_label(value):
    return "" if value is None else str(value)


def write_manifest(build, path, tool_version, config_hash, method):
    spec = build.spec
    with open(path, "w", newline="", encoding="utf-8") as fh:
        fh.write("#cxrprep_manifest_v1\n")
        fh.write(f"#tool_version={tool_version}\n")
        fh.write(f"#config_hash={config_hash}\n")
        fh.write(f"#rng={RNG_NAME}\n")
        fh.write(f"#seed={spec.seed}\n")
        fh.write(f"#method={method}\n")
        fh.write("#labels=" + "|".join(spec.label_list) + "\n")
        fh.write("#groups=" + "|".join(spec.groups) + "\n")
        fh.write(f"#positives_per_cell={spec.positives_per_cell}\n")
        fh.write(f"#val_fraction={spec.val_fraction:g}\n")
        fh.write(f"#shortfall_cells={len(build.shortfalls)}\n")
        writer = csv.writer(fh, lineterminator="\n")
        header = (["record_id", "patient_id", "view", "race_group", "rca_score",
                   "image_path", "mask_path", "split"]
                  + [f"label:{lb}" for lb in spec.label_list])
        writer.writerow(header)
        for r in build.records:
            writer.writerow(
                [r.record_id, r.patient_id, r.view, r.race_group,
                 _format_rca(r.rca_score), r.image_path, r.mask_path or "",
                 r.split]
                + [_format_label(r.labels.get(lb)) for lb in spec.label_list])


def write_exclusion_log(build, path, tool_version, config_hash):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        fh.write("#cxrprep_exclusions_v1\n")
        fh.write(f"#tool_version={tool_version}\n")
        fh.write(f"#config_hash={config_hash}\n")
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["record_id", "reason"])
        for rid, reason in build.exclusions:
            writer.writerow([rid, reason])
        for issue in build.issues:
            writer.writerow([issue.record_id,
                             f"ingest:{issue.source}:{issue.line}:{issue.reason}"])


def read_manifest(path):
    """Load a manifest written by write_manifest; returns (records, meta)."""
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
        if reader.fieldnames is None or "record_id" not in reader.fieldnames:
            raise SchemaMismatchError(f"{path}: not a manifest file")
        label_cols = [c for c in reader.fieldnames if c.startswith("label:")]
        records = []
        for row in reader:
            labels = {c[len("label:"):]: (None if row[c] == "" else int(row[c]))
                      for c in label_cols}
            rca = row.get("rca_score", "")
            records.append(ManifestRecord(
                record_id=row["record_id"],
                patient_id=row["patient_id"],
                view=row["view"],
                labels=labels,
                race_group=row["race_group"],
                rca_score=float(rca) if rca else None,
                image_path=row["image_path"],
                mask_path=row["mask_path"] or None,
                split=row["split"],
            ))
    return records, meta
