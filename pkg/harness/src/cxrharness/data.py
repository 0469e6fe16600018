"""Manifest reading and image loading.

The manifest format is the preprocessing tool's documented CSV layout:
leading `#key=value` metadata lines, then a header row with fixed
columns plus one `label:<name>` column per label.  This module
implements its own reader for that contract.
"""
import csv
import os
from dataclasses import dataclass

import numpy as np
import torch
from PIL import Image, UnidentifiedImageError

from .errors import CorruptImageError, EmptySplitError, SchemaViolationError

_REQUIRED_COLUMNS = ("record_id", "patient_id", "race_group",
                     "image_path", "split")


@dataclass(frozen=True)
class Record:
    """One manifest row: identity, targets, and where its image lives."""
    record_id: str
    patient_id: str
    race_group: str
    image_path: str
    split: str
    labels: dict  # label name -> 1, 0, or None


def read_manifest(path):
    """Parse a manifest CSV; returns (records, metadata dict).

    Metadata is every leading `#key=value` line; `labels` and `groups`
    values are |-separated lists there.
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
        reader = csv.DictReader(fh)
        fields = reader.fieldnames or []
        missing = [c for c in _REQUIRED_COLUMNS if c not in fields]
        if missing:
            raise SchemaViolationError(
                f"{path}: not a manifest (missing columns {missing})")
        label_cols = [c for c in fields if c.startswith("label:")]
        records = []
        for row in reader:
            labels = {}
            for col in label_cols:
                cell = row[col]
                labels[col[len("label:"):]] = None if cell == "" else int(cell)
            records.append(Record(
                record_id=row["record_id"],
                patient_id=row["patient_id"],
                race_group=row["race_group"],
                image_path=row["image_path"],
                split=row["split"],
                labels=labels,
            ))
    return records, meta


def manifest_labels(meta, records):
    """Label names, preferring the manifest's own header metadata."""
    if "labels" in meta and meta["labels"]:
        return tuple(meta["labels"].split("|"))
    if records:
        return tuple(sorted(records[0].labels))
    return ()


def manifest_groups(meta):
    """Demographic group names declared by the manifest header."""
    if "groups" in meta and meta["groups"]:
        return tuple(meta["groups"].split("|"))
    raise SchemaViolationError("manifest declares no #groups= metadata")


def select_split(records, splits):
    """Records whose split is in `splits`; error if none are."""
    chosen = [r for r in records if r.split in splits]
    if not chosen:
        raise EmptySplitError(f"no manifest records with split in {list(splits)}")
    return chosen


def resolve_image_path(images_dir, record):
    """Preprocessed image for a record: its own container kept, else .png."""
    base = os.path.splitext(os.path.basename(record.image_path))[0]
    ext = os.path.splitext(record.image_path)[1].lower()
    candidates = [base + ext, base + ".png", base + ".pgm"]
    for name in candidates:
        full = os.path.join(images_dir, name)
        if os.path.exists(full):
            return full
    raise FileNotFoundError(
        2, "no preprocessed image for record",
        os.path.join(images_dir, candidates[0]))


def load_image_tensor(path):
    """Decode a grayscale image to a float32 (1, H, W) tensor in [0, 1]."""
    try:
        with Image.open(path) as img:
            arr = np.asarray(img)
    except (UnidentifiedImageError, OSError, SyntaxError) as exc:
        raise CorruptImageError(f"{path}: cannot decode image ({exc})")
    if arr.ndim != 2:
        raise CorruptImageError(f"{path}: expected one channel, got shape {arr.shape}")
    scale = 255.0 if arr.dtype == np.uint8 else 65535.0
    x = torch.from_numpy(np.ascontiguousarray(arr.astype(np.float32))) / scale
    return x.unsqueeze(0)


def target_vector(record, label_list):
    """(targets, mask) float32 vectors; mask is 1 where the label is 0/1."""
    targets = torch.zeros(len(label_list))
    mask = torch.zeros(len(label_list))
    for i, name in enumerate(label_list):
        value = record.labels.get(name)
        if value in (0, 1):
            targets[i] = float(value)
            mask[i] = 1.0
    return targets, mask


class XrayDataset(torch.utils.data.Dataset):
    """Preprocessed images with per-label targets and optional augmentation.

    Augmentation draws (angle, flips) from a torch.Generator owned by the
    dataset, so a single-process loader replays identically for a seed.
    """

    def __init__(self, records, images_dir, label_list, augment=False,
                 rotation_degrees=10.0, horizontal_flip=True,
                 vertical_flip=True, seed=0):
        self.records = list(records)
        self.images_dir = images_dir
        self.label_list = tuple(label_list)
        self.augment = augment
        self.rotation_degrees = rotation_degrees
        self.horizontal_flip = horizontal_flip
        self.vertical_flip = vertical_flip
        self._gen = torch.Generator().manual_seed(seed)

    def __len__(self):
        return len(self.records)

    def _augmented(self, x):
        from torchvision.transforms import functional as TF
        angle = (torch.rand(1, generator=self._gen).item() * 2 - 1) \
            * self.rotation_degrees
        x = TF.rotate(x, angle, interpolation=TF.InterpolationMode.BILINEAR)
        if self.horizontal_flip and torch.rand(1, generator=self._gen).item() < 0.5:
            x = torch.flip(x, dims=(2,))
        if self.vertical_flip and torch.rand(1, generator=self._gen).item() < 0.5:
            x = torch.flip(x, dims=(1,))
        return x

    def __getitem__(self, index):
        record = self.records[index]
        x = load_image_tensor(resolve_image_path(self.images_dir, record))
        if self.augment:
            x = self._augmented(x)
        x = x.expand(3, -1, -1).contiguous()  # encoder expects three channels
        targets, mask = target_vector(record, self.label_list)
        return x, targets, mask, index
