"""Shared test helpers: image factories and synthetic metadata fixtures."""
import csv
import os

import numpy as np
import pytest

from cxrprep.image import GrayImage


def make_image(rng, height, width, bit_depth=8):
    if bit_depth == 8:
        px = rng.integers(0, 256, size=(height, width), dtype=np.uint8)
    else:
        px = rng.integers(0, 65536, size=(height, width), dtype=np.uint16)
    return GrayImage(px, bit_depth)


def constant_image(value, height, width, bit_depth=8):
    dtype = np.uint8 if bit_depth == 8 else np.uint16
    return GrayImage(np.full((height, width), value, dtype=dtype), bit_depth)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


LABELS = (
    "Enlarged Cardiomediastinum", "Cardiomegaly", "Lung Opacity",
    "Lung Lesion", "Edema", "Consolidation", "Pneumonia", "Atelectasis",
    "Pneumothorax", "Pleural Effusion", "Fracture",
)

RACE_STRINGS = (
    "WHITE", "BLACK OR AFRICAN AMERICAN", "ASIAN",
    "HISPANIC OR LATINO", "UNKNOWN", "AMERICAN INDIAN",
)


def write_metadata_fixture(root, n_records, seed=0, n_patients=None,
                           rca_pattern=None, lateral_every=7):
    """Write records/labels/demographics/rca CSVs; returns their paths.

    rca_pattern: optional callable record_index -> score string or ""
    (absent); default draws uniform scores with a spread around 0.7.
    """
    rng = np.random.default_rng(seed)
    n_patients = n_patients or max(2, (2 * n_records) // 3)
    os.makedirs(root, exist_ok=True)
    paths = {k: os.path.join(root, f"{k}.csv")
             for k in ("records", "labels", "demographics", "rca")}

    with open(paths["records"], "w", newline="", encoding="utf-8") as fr, \
            open(paths["labels"], "w", newline="", encoding="utf-8") as fl, \
            open(paths["rca"], "w", newline="", encoding="utf-8") as fq:
        wr = csv.writer(fr)
        wl = csv.writer(fl)
        wq = csv.writer(fq)
        wr.writerow(["record_id", "patient_id", "view", "image_path", "mask_path"])
        wl.writerow(["record_id"] + list(LABELS))
        wq.writerow(["record_id", "rca_score"])
        for i in range(n_records):
            rid = f"r{i:06d}"
            pid = f"p{int(rng.integers(0, n_patients)):06d}"
            view = "LATERAL" if (lateral_every and i % lateral_every == 0) else \
                ("AP" if i % 2 else "PA")
            wr.writerow([rid, pid, view, f"img/{rid}.png", f"msk/{rid}.png"])
            cells = []
            for _ in LABELS:
                u = rng.random()
                if u < 0.25:
                    cells.append("")          # unlabeled
                elif u < 0.30:
                    cells.append("-1.0")      # uncertain
                elif u < 0.60:
                    cells.append("1.0")
                else:
                    cells.append("0.0")
            wl.writerow([rid] + cells)
            if rca_pattern is not None:
                score = rca_pattern(i)
                if score != "":
                    wq.writerow([rid, score])
            else:
                wq.writerow([rid, f"{0.4 + 0.6 * rng.random():.4f}"])

    with open(paths["demographics"], "w", newline="", encoding="utf-8") as fd:
        wd = csv.writer(fd)
        wd.writerow(["patient_id", "race"])
        for j in range(n_patients):
            wd.writerow([f"p{j:06d}", RACE_STRINGS[j % len(RACE_STRINGS)]])
    return paths
