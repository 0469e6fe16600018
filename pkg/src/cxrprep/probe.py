"""Linear probe: can a demographic group be read off the intensity
histogram alone?

Features are normalized histograms; the classifier is multinomial
logistic regression trained with full-batch gradient descent from a
zero initialization, so training is deterministic without a seed.  The
seed only matters in optional minibatch mode, where it drives epoch
shuffling.
"""
from dataclasses import dataclass

import numpy as np

from .errors import SingleGroupError
from .image import histogram
from .metrics import auroc


@dataclass(frozen=True)
class ProbeHyper:
    learning_rate: float = 0.1
    steps: int = 2000
    l2: float = 1e-3
    seed: int = 0
    batch_size: int = None  # None = full batch (deterministic)

    def __post_init__(self):
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be positive")
        if self.steps < 0:
            raise ValueError("steps must be >= 0")
        if self.l2 < 0:
            raise ValueError("l2 must be >= 0")
        if self.batch_size is not None and self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")


@dataclass
class ProbeModel:
    weights: np.ndarray        # (G, D+1); last column is the bias
    group_names: tuple
    n_bins: int
    exclude_zero: bool
    hyper: ProbeHyper
    final_loss: float
    loss_history: np.ndarray   # loss before each step, then final


def featurize(img, bins=256, exclude_zero=False):
    """Normalized intensity histogram of one image.

    With exclude_zero, pixels whose value is exactly zero (the fill
    used for masked-out background) do not contribute.
    """
    counts = histogram(img, bins).counts.astype(np.float64)
    if exclude_zero:
        counts = counts.copy()
        counts[0] -= float(np.count_nonzero(img.pixels == 0))
    total = counts.sum()
    if total <= 0:
        return np.zeros(bins, dtype=np.float64)
    return counts / total


def _one_hot(indices, n_classes):
    out = np.zeros((indices.size, n_classes), dtype=np.float64)
    out[np.arange(indices.size), indices] = 1.0
    return out


def _log_softmax(z):
    zmax = z.max(axis=1, keepdims=True)
    shifted = z - zmax
    return shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))


def loss_and_grad(weights, features1, targets, l2):
    """Mean cross-entropy plus L2 on everything but the bias column.

    features1 is the design matrix with the trailing 1s column already
    appended; targets is one-hot (n, G).  Returns (loss, grad) with
    grad shaped like weights.
    """
    n = features1.shape[0]
    logits = features1 @ weights.T
    logp = _log_softmax(logits)
    data_loss = -float((targets * logp).sum()) / n
    reg_loss = 0.5 * l2 * float((weights[:, :-1] ** 2).sum())
    probs = np.exp(logp)
    grad = (probs - targets).T @ features1 / n
    grad[:, :-1] += l2 * weights[:, :-1]
    return data_loss + reg_loss, grad


def _design(features):
    x = np.asarray(features, dtype=np.float64)
    if x.ndim != 2:
        raise ValueError("features must be a 2-D array (n_samples, n_bins)")
    return np.hstack([x, np.ones((x.shape[0], 1), dtype=np.float64)])


def train_probe(features, groups, hyper=ProbeHyper(), n_bins=None,
                exclude_zero=False):
    """Fit the probe.  Group names are the sorted distinct values."""
    x1 = _design(features)
    names = tuple(sorted(set(groups)))
    if len(names) < 2:
        raise SingleGroupError(f"need >= 2 groups, got {names}")
    index = {g: i for i, g in enumerate(names)}
    y = np.asarray([index[g] for g in groups], dtype=np.int64)
    if y.size != x1.shape[0]:
        raise ValueError("features and groups disagree on sample count")
    targets = _one_hot(y, len(names))
    weights = np.zeros((len(names), x1.shape[1]), dtype=np.float64)

    rng = np.random.Generator(np.random.PCG64(hyper.seed))
    order = np.arange(x1.shape[0])
    cursor = x1.shape[0]  # force a shuffle on first minibatch step

    history = np.empty(hyper.steps + 1, dtype=np.float64)
    for step in range(hyper.steps):
        loss, grad = loss_and_grad(weights, x1, targets, hyper.l2)
        history[step] = loss
        if hyper.batch_size is not None:
            if cursor + hyper.batch_size > order.size:
                rng.shuffle(order)
                cursor = 0
            take = order[cursor:cursor + hyper.batch_size]
            cursor += hyper.batch_size
            _, grad = loss_and_grad(weights, x1[take], targets[take], hyper.l2)
        weights -= hyper.learning_rate * grad
    final_loss, _ = loss_and_grad(weights, x1, targets, hyper.l2)
    history[hyper.steps] = final_loss

    bins = n_bins if n_bins is not None else x1.shape[1] - 1
    return ProbeModel(weights=weights, group_names=names, n_bins=bins,
                      exclude_zero=exclude_zero, hyper=hyper,
                      final_loss=final_loss, loss_history=history)


def predict_proba(model, features):
    """Softmax probabilities, columns in model.group_names order.
    With zero training steps this is exactly uniform."""
    x1 = _design(features)
    if x1.shape[1] != model.weights.shape[1]:
        raise ValueError(
            f"feature width {x1.shape[1] - 1} does not match the model "
            f"({model.weights.shape[1] - 1})")
    return np.exp(_log_softmax(x1 @ model.weights.T))


def probe_auroc(model, features, groups):
    """Macro one-vs-rest AUROC of the probe on held-out samples."""
    probs = predict_proba(model, features)
    groups = np.asarray(list(groups), dtype=np.str_)
    values = []
    for i, g in enumerate(model.group_names):
        mask = (groups == g).astype(np.int64)
        if mask.sum() == 0 or mask.sum() == mask.size:
            continue
        values.append(auroc(probs[:, i], mask))
    if not values:
        raise SingleGroupError("no evaluable group: each needs members and non-members")
    return float(np.mean(values))


def save_probe(model, path):
    np.savez(
        path,
        weights=model.weights,
        group_names=np.asarray(model.group_names, dtype=np.str_),
        n_bins=np.int64(model.n_bins),
        exclude_zero=np.bool_(model.exclude_zero),
        learning_rate=np.float64(model.hyper.learning_rate),
        steps=np.int64(model.hyper.steps),
        l2=np.float64(model.hyper.l2),
        seed=np.int64(model.hyper.seed),
        batch_size=np.int64(-1 if model.hyper.batch_size is None
                            else model.hyper.batch_size),
        final_loss=np.float64(model.final_loss),
        loss_history=model.loss_history,
    )


def load_probe(path):
    with np.load(path, allow_pickle=False) as data:
        batch = int(data["batch_size"])
        hyper = ProbeHyper(
            learning_rate=float(data["learning_rate"]),
            steps=int(data["steps"]),
            l2=float(data["l2"]),
            seed=int(data["seed"]),
            batch_size=None if batch < 0 else batch,
        )
        return ProbeModel(
            weights=data["weights"],
            group_names=tuple(str(g) for g in data["group_names"]),
            n_bins=int(data["n_bins"]),
            exclude_zero=bool(data["exclude_zero"]),
            hyper=hyper,
            final_loss=float(data["final_loss"]),
            loss_history=data["loss_history"],
        )
