"""Rank-based AUROC, used for validation tracking and early stopping."""
import numpy as np


def auroc(scores, labels):
    """Tie-aware AUROC via midranks; NaN when a class is absent."""
    s = np.asarray(scores, dtype=np.float64)
    y = np.asarray(labels)
    n_pos = int((y == 1).sum())
    n_neg = int((y == 0).sum())
    if n_pos == 0 or n_neg == 0:
        return float("nan")
    ordered = np.sort(s)
    lo = np.searchsorted(ordered, s, side="left")
    hi = np.searchsorted(ordered, s, side="right")
    midranks = (lo + hi + 1) / 2.0
    rank_sum = float(midranks[y == 1].sum())
    return (rank_sum - n_pos * (n_pos + 1) / 2.0) / (n_pos * n_neg)


def macro_auroc(scores, targets, mask):
    """Mean per-column AUROC over columns where both classes appear."""
    values = []
    for col in range(scores.shape[1]):
        keep = mask[:, col] > 0
        if not keep.any():
            continue
        value = auroc(scores[keep, col], targets[keep, col])
        if not np.isnan(value):
            values.append(value)
    return float(np.mean(values)) if values else float("nan")


def one_vs_rest_auroc(group_scores, group_names, groups):
    """Macro AUROC of per-group score columns against group membership."""
    values = []
    targets = np.asarray(groups)
    for col, name in enumerate(group_names):
        value = auroc(group_scores[:, col], (targets == name).astype(int))
        if not np.isnan(value):
            values.append(value)
    return float(np.mean(values)) if values else float("nan")
