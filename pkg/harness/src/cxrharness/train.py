"""Training: diagnostic finetuning and the frozen-encoder demographic head.

Both trainers share the same shape: seeded single-process loops, cosine
learning-rate annealing from `learning_rate` down to `lr_min` over
`epochs`, early stopping with `patience` epochs of grace on the
validation metric, and the best-scoring weights kept.  Every TrainSpec
field is written verbatim into the run metadata.
"""
import csv
import json
import os

import numpy as np
import torch
from torch import nn

from .data import XrayDataset, manifest_groups, manifest_labels, \
    read_manifest, select_split
from .errors import DegenerateTargetsError, FrozenEncoderViolation
from .metrics import macro_auroc, one_vs_rest_auroc
from .model import build_diagnostic_model, build_race_head, \
    encoder_checksum, pooled_features

CHECKPOINT_NAME = "checkpoint.pt"
HEAD_NAME = "race_head.pt"
RUN_METADATA_NAME = "run.json"
LOG_NAME = "train_log.csv"


def _refuse_existing(path, force):
    if not force and os.path.exists(path):
        raise FileExistsError(f"{path} exists; pass --force to overwrite")


def _clone_state(module):
    return {k: v.detach().clone() for k, v in module.state_dict().items()}


def _write_log(path, rows):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["epoch", "train_loss", "val_auroc", "learning_rate"])
        for row in rows:
            writer.writerow([row["epoch"], f"{row['train_loss']:.10g}",
                             f"{row['val_auroc']:.10g}",
                             f"{row['learning_rate']:.10g}"])


def _write_run_metadata(out_dir, payload):
    path = os.path.join(out_dir, RUN_METADATA_NAME)
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return path


def _masked_smoothed_bce(logits, targets, mask, smoothing):
    smoothed = targets * (1.0 - smoothing) + 0.5 * smoothing
    raw = nn.functional.binary_cross_entropy_with_logits(
        logits, smoothed, reduction="none")
    denom = mask.sum().clamp(min=1.0)
    return (raw * mask).sum() / denom


def _diagnostic_scores(model, loader, device):
    model.eval()
    scores, targets, masks = [], [], []
    with torch.no_grad():
        for x, y, m, _ in loader:
            logits = model(x.to(device))
            scores.append(torch.sigmoid(logits).cpu().numpy())
            targets.append(y.numpy())
            masks.append(m.numpy())
    return (np.concatenate(scores), np.concatenate(targets),
            np.concatenate(masks))


def train_diagnostic(manifest_path, images_dir, out_dir, spec, seed,
                     max_epochs=None, device="cpu", force=False):
    """Finetune the classifier on the manifest's train split.

    Keeps the weights of the epoch with the best validation macro AUROC;
    writes checkpoint.pt, train_log.csv, and run.json into out_dir.
    Returns a summary dict (the run metadata payload).
    """
    os.makedirs(out_dir, exist_ok=True)
    checkpoint_path = os.path.join(out_dir, CHECKPOINT_NAME)
    _refuse_existing(checkpoint_path, force)
    _refuse_existing(os.path.join(out_dir, RUN_METADATA_NAME), force)

    records, meta = read_manifest(manifest_path)
    label_list = manifest_labels(meta, records)
    train_records = select_split(records, ("train",))
    val_records = select_split(records, ("val",))

    torch.manual_seed(seed)
    model = build_diagnostic_model(len(label_list), pretrained=spec.pretrained)
    model.to(device)

    train_set = XrayDataset(
        train_records, images_dir, label_list, augment=True,
        rotation_degrees=spec.rotation_degrees,
        horizontal_flip=spec.horizontal_flip,
        vertical_flip=spec.vertical_flip, seed=seed)
    val_set = XrayDataset(val_records, images_dir, label_list, augment=False)
    loader_gen = torch.Generator().manual_seed(seed)
    train_loader = torch.utils.data.DataLoader(
        train_set, batch_size=spec.batch_size, shuffle=True,
        generator=loader_gen, num_workers=0)
    val_loader = torch.utils.data.DataLoader(
        val_set, batch_size=spec.batch_size, shuffle=False, num_workers=0)

    optimizer = torch.optim.AdamW(model.parameters(), lr=spec.learning_rate)
    scheduler = torch.optim.lr_scheduler.CosineAnnealingLR(
        optimizer, T_max=spec.epochs, eta_min=spec.lr_min)

    horizon = spec.epochs if max_epochs is None else min(max_epochs, spec.epochs)
    best_metric = float("-inf")
    best_state = _clone_state(model)
    best_epoch = 0
    stale = 0
    log_rows = []
    epochs_run = 0
    for epoch in range(1, horizon + 1):
        model.train()
        losses = []
        for x, y, m, _ in train_loader:
            optimizer.zero_grad()
            logits = model(x.to(device))
            loss = _masked_smoothed_bce(logits, y.to(device), m.to(device),
                                        spec.label_smoothing)
            loss.backward()
            optimizer.step()
            losses.append(float(loss.detach()))
        lr_now = optimizer.param_groups[0]["lr"]
        scheduler.step()
        scores, targets, masks = _diagnostic_scores(model, val_loader, device)
        val_metric = macro_auroc(scores, targets, masks)
        log_rows.append({"epoch": epoch,
                         "train_loss": float(np.mean(losses)) if losses else 0.0,
                         "val_auroc": val_metric,
                         "learning_rate": lr_now})
        epochs_run = epoch
        if not np.isnan(val_metric) and val_metric > best_metric:
            best_metric = val_metric
            best_state = _clone_state(model)
            best_epoch = epoch
            stale = 0
        else:
            stale += 1
            if stale >= spec.patience:
                break

    model.load_state_dict(best_state)
    torch.save({
        "format": "cxrharness_checkpoint_v1",
        "architecture": spec.architecture,
        "pretrained": spec.pretrained,
        "labels": list(label_list),
        "seed": seed,
        "spec": spec.metadata(),
        "best_val_auroc": None if best_metric == float("-inf") else best_metric,
        "best_epoch": best_epoch,
        "epochs_run": epochs_run,
        "state_dict": model.state_dict(),
    }, checkpoint_path)
    _write_log(os.path.join(out_dir, LOG_NAME), log_rows)

    summary = {
        "command": "train",
        "manifest": os.path.abspath(manifest_path),
        "images_dir": os.path.abspath(images_dir),
        "seed": seed,
        "spec": spec.metadata(),
        "labels": list(label_list),
        "n_train": len(train_records),
        "n_val": len(val_records),
        "epochs_run": epochs_run,
        "best_epoch": best_epoch,
        "best_val_auroc": None if best_metric == float("-inf") else best_metric,
        "checkpoint": os.path.abspath(checkpoint_path),
    }
    _write_run_metadata(out_dir, summary)
    return summary


def load_checkpoint(path, device="cpu"):
    """Rebuild the diagnostic model saved by train_diagnostic."""
    payload = torch.load(path, map_location=device, weights_only=True)
    model = build_diagnostic_model(len(payload["labels"]), pretrained=False)
    model.load_state_dict(payload["state_dict"])
    model.to(device)
    model.eval()
    return model, payload


def extract_features(model, records, images_dir, batch_size, device="cpu"):
    """Pooled encoder features for each record, in record order."""
    dataset = XrayDataset(records, images_dir, label_list=(), augment=False)
    loader = torch.utils.data.DataLoader(dataset, batch_size=batch_size,
                                         shuffle=False, num_workers=0)
    model.eval()
    chunks = []
    with torch.no_grad():
        for x, _, _, _ in loader:
            chunks.append(pooled_features(model, x.to(device)).cpu())
    return torch.cat(chunks) if chunks else torch.empty(0, 0)


def fit_head(train_features, train_targets, val_features, val_targets,
             n_groups, spec, seed, max_epochs=None, device="cpu"):
    """Train a linear group classifier on fixed feature tensors.

    Targets are integer class indices.  Returns (head, best validation
    one-vs-rest AUROC, log rows, epochs actually run).
    """
    if len(torch.unique(train_targets)) < 2:
        raise DegenerateTargetsError(
            "group head needs at least two groups in the training split")
    torch.manual_seed(seed)
    head = build_race_head(n_groups, train_features.shape[1]).to(device)
    optimizer = torch.optim.AdamW(head.parameters(), lr=spec.learning_rate)
    scheduler = torch.optim.lr_scheduler.CosineAnnealingLR(
        optimizer, T_max=spec.epochs, eta_min=spec.lr_min)
    loss_fn = nn.CrossEntropyLoss(label_smoothing=spec.label_smoothing)
    dataset = torch.utils.data.TensorDataset(train_features, train_targets)
    loader_gen = torch.Generator().manual_seed(seed)
    loader = torch.utils.data.DataLoader(
        dataset, batch_size=spec.batch_size, shuffle=True, generator=loader_gen)

    group_ids = list(range(n_groups))
    horizon = spec.epochs if max_epochs is None else min(max_epochs, spec.epochs)
    best_metric = float("-inf")
    best_state = _clone_state(head)
    best_epoch = 0
    stale = 0
    log_rows = []
    epochs_run = 0
    for epoch in range(1, horizon + 1):
        head.train()
        losses = []
        for fx, fy in loader:
            optimizer.zero_grad()
            loss = loss_fn(head(fx.to(device)), fy.to(device))
            loss.backward()
            optimizer.step()
            losses.append(float(loss.detach()))
        lr_now = optimizer.param_groups[0]["lr"]
        scheduler.step()
        head.eval()
        with torch.no_grad():
            probs = torch.softmax(head(val_features.to(device)), dim=1)
        val_metric = one_vs_rest_auroc(probs.cpu().numpy(), group_ids,
                                       val_targets.numpy())
        log_rows.append({"epoch": epoch,
                         "train_loss": float(np.mean(losses)) if losses else 0.0,
                         "val_auroc": val_metric,
                         "learning_rate": lr_now})
        epochs_run = epoch
        if not np.isnan(val_metric) and val_metric > best_metric:
            best_metric = val_metric
            best_state = _clone_state(head)
            best_epoch = epoch
            stale = 0
        else:
            stale += 1
            if stale >= spec.patience:
                break
    head.load_state_dict(best_state)
    head.eval()
    best = None if best_metric == float("-inf") else best_metric
    return head, best, log_rows, epochs_run, best_epoch


def train_race_head(checkpoint_path, manifest_path, images_dir, out_dir,
                    spec, seed, max_epochs=None, device="cpu", force=False):
    """Train the demographic head on frozen encoder features.

    The encoder is checksummed before and after; any drift raises
    FrozenEncoderViolation.  Writes race_head.pt, train_log.csv, and
    run.json into out_dir; returns the run metadata payload.
    """
    os.makedirs(out_dir, exist_ok=True)
    head_path = os.path.join(out_dir, HEAD_NAME)
    _refuse_existing(head_path, force)
    _refuse_existing(os.path.join(out_dir, RUN_METADATA_NAME), force)

    model, payload = load_checkpoint(checkpoint_path, device)
    for param in model.parameters():
        param.requires_grad_(False)
    checksum_before = encoder_checksum(model)

    records, meta = read_manifest(manifest_path)
    groups = manifest_groups(meta)
    group_index = {name: i for i, name in enumerate(groups)}
    train_records = [r for r in select_split(records, ("train",))
                     if r.race_group in group_index]
    val_records = [r for r in select_split(records, ("val",))
                   if r.race_group in group_index]
    if not train_records or not val_records:
        raise DegenerateTargetsError(
            "train/val splits contain no records from the configured groups")

    train_features = extract_features(model, train_records, images_dir,
                                      spec.batch_size, device)
    val_features = extract_features(model, val_records, images_dir,
                                    spec.batch_size, device)
    train_targets = torch.tensor([group_index[r.race_group]
                                  for r in train_records])
    val_targets = torch.tensor([group_index[r.race_group]
                                for r in val_records])

    head, best_metric, log_rows, epochs_run, best_epoch = fit_head(
        train_features, train_targets, val_features, val_targets,
        len(groups), spec, seed, max_epochs=max_epochs, device=device)

    checksum_after = encoder_checksum(model)
    if checksum_after != checksum_before:
        raise FrozenEncoderViolation(
            f"encoder changed during head training: "
            f"{checksum_before[:12]} -> {checksum_after[:12]}")

    torch.save({
        "format": "cxrharness_race_head_v1",
        "groups": list(groups),
        "seed": seed,
        "spec": spec.metadata(),
        "encoder_checksum": checksum_before,
        "best_val_auroc": best_metric,
        "best_epoch": best_epoch,
        "epochs_run": epochs_run,
        "state_dict": head.state_dict(),
    }, head_path)
    _write_log(os.path.join(out_dir, LOG_NAME), log_rows)

    summary = {
        "command": "race-head",
        "checkpoint": os.path.abspath(checkpoint_path),
        "manifest": os.path.abspath(manifest_path),
        "images_dir": os.path.abspath(images_dir),
        "seed": seed,
        "spec": spec.metadata(),
        "groups": list(groups),
        "n_train": len(train_records),
        "n_val": len(val_records),
        "epochs_run": epochs_run,
        "best_epoch": best_epoch,
        "best_val_auroc": best_metric,
        "encoder_checksum_before": checksum_before,
        "encoder_checksum_after": checksum_after,
        "race_head": os.path.abspath(head_path),
    }
    _write_run_metadata(out_dir, summary)
    return summary


def load_race_head(path, device="cpu"):
    """Rebuild the demographic head saved by train_race_head."""
    payload = torch.load(path, map_location=device, weights_only=True)
    width = payload["state_dict"]["weight"].shape[1]
    head = build_race_head(len(payload["groups"]), width)
    head.load_state_dict(payload["state_dict"])
    head.to(device)
    head.eval()
    return head, payload
