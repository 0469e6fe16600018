"""Prediction export: run the trained models over a manifest split and
emit a prediction CSV, self-validated against the schema before and
after writing."""
import os

import numpy as np
import torch

from .data import XrayDataset, read_manifest, select_split
from .schema import validate_prediction_csv, write_prediction_csv
from .train import load_checkpoint, load_race_head


def _refuse_existing(path, force):
    if not force and os.path.exists(path):
        raise FileExistsError(f"{path} exists; pass --force to overwrite")


def _forward_batch(model, x):
    """One trunk pass yielding (label logits, pooled features)."""
    fmap = model.features(x)
    act = torch.relu(fmap)
    pooled = torch.nn.functional.adaptive_avg_pool2d(act, (1, 1)).flatten(1)
    return model.classifier(pooled), pooled


def predict(checkpoint_path, manifest_path, images_dir, out_path, dataset_tag,
            race_head_path=None, method=None, seed=None, splits=("test",),
            device="cpu", force=False):
    """Score every record of the chosen splits; returns a summary dict.

    `method` defaults to the manifest's own method tag and `seed` to the
    checkpoint's training seed, so a default invocation is traceable to
    its inputs without repeating them.
    """
    _refuse_existing(out_path, force)
    model, payload = load_checkpoint(checkpoint_path, device)
    label_list = tuple(payload["labels"])

    head = None
    head_groups = None
    if race_head_path is not None:
        head, head_payload = load_race_head(race_head_path, device)
        head_groups = tuple(head_payload["groups"])

    records, meta = read_manifest(manifest_path)
    chosen = select_split(records, splits)
    if method is None:
        method = meta.get("method", "unknown")
    if seed is None:
        seed = payload["seed"]

    dataset = XrayDataset(chosen, images_dir, label_list, augment=False)
    loader = torch.utils.data.DataLoader(dataset, batch_size=8, shuffle=False,
                                         num_workers=0)
    score_chunks, race_chunks = [], []
    with torch.no_grad():
        for x, _, _, _ in loader:
            logits, pooled = _forward_batch(model, x.to(device))
            score_chunks.append(torch.sigmoid(logits).cpu().numpy())
            if head is not None:
                race_chunks.append(
                    torch.softmax(head(pooled), dim=1).cpu().numpy())
    scores = np.concatenate(score_chunks) if score_chunks \
        else np.empty((0, len(label_list)))
    race_scores = (np.concatenate(race_chunks) if race_chunks else None) \
        if head is not None else None

    gt = np.full((len(chosen), len(label_list)), np.nan)
    for i, record in enumerate(chosen):
        for j, name in enumerate(label_list):
            value = record.labels.get(name)
            if value in (0, 1):
                gt[i, j] = float(value)

    extra_meta = {f"trainspec_{k}": v for k, v in payload["spec"].items()}
    write_prediction_csv(
        out_path, method=method, seed=seed, dataset=dataset_tag,
        extra_meta=extra_meta, label_list=label_list,
        sample_ids=[r.record_id for r in chosen],
        row_groups=[r.race_group for r in chosen],
        gt=gt, scores=scores,
        race_groups=head_groups, race_scores=race_scores)
    summary = validate_prediction_csv(out_path)
    summary["path"] = os.path.abspath(out_path)
    return summary
