"""Histogram probe: features, optimization, evaluation, persistence."""
import numpy as np
import pytest

from conftest import constant_image, make_image
from cxrprep.errors import SingleGroupError
from cxrprep.image import GrayImage
from cxrprep.probe import (
    ProbeHyper,
    ProbeModel,
    featurize,
    load_probe,
    loss_and_grad,
    predict_proba,
    probe_auroc,
    save_probe,
    train_probe,
)


def synthetic_features(rng, n, shift, bins=32):
    """Histogram features for two groups of blob images whose mean
    intensity differs by `shift` gray levels."""
    features, groups = [], []
    for i in range(n):
        group = "A" if i % 2 == 0 else "B"
        base = 120 + (shift if group == "B" else 0)
        px = np.clip(rng.normal(base, 30, size=(16, 16)), 0, 255)
        img = GrayImage(px.astype(np.uint8), 8)
        features.append(featurize(img, bins=bins))
        groups.append(group)
    return np.asarray(features), groups


class TestFeaturize:
    def test_constant_image_one_hot(self):
        f = featurize(constant_image(37, 5, 5, 8))
        assert f[37] == 1.0
        assert f.sum() == 1.0
        assert np.count_nonzero(f) == 1

    def test_half_zero_half_max(self):
        px = np.zeros((2, 2), dtype=np.uint8)
        px[:, 1] = 255
        f = featurize(GrayImage(px, 8))
        assert f[0] == 0.5 and f[255] == 0.5

    def test_sums_to_one(self, rng):
        for _ in range(20):
            img = make_image(rng, int(rng.integers(1, 40)),
                             int(rng.integers(1, 40)),
                             int(rng.choice([8, 16])))
            f = featurize(img, bins=64)
            assert abs(f.sum() - 1.0) < 1e-9

    def test_exclude_zero_drops_background(self):
        px = np.zeros((4, 4), dtype=np.uint8)
        px[0, 0] = 200
        f = featurize(GrayImage(px, 8), exclude_zero=True)
        assert f[200] == 1.0
        assert f[0] == 0.0

    def test_exclude_zero_all_zero_image_is_zero_vector(self):
        f = featurize(constant_image(0, 4, 4, 8), exclude_zero=True)
        assert not f.any()

    def test_exclude_zero_keeps_nonzero_bin_zero_mass(self):
        # 16-bit values 1 and 2 land in bin 0 of a 256-bin histogram but
        # are not background; only exact zeros are dropped
        px = np.array([[0, 1], [2, 60000]], dtype=np.uint16)
        f = featurize(GrayImage(px, 16), exclude_zero=True)
        assert f[0] == pytest.approx(2 / 3)


class TestLossAndGrad:
    def test_gradient_matches_finite_differences(self, rng):
        n, bins, groups = 40, 8, 3
        x1 = np.hstack([rng.random((n, bins)), np.ones((n, 1))])
        y = rng.integers(0, groups, size=n)
        targets = np.zeros((n, groups))
        targets[np.arange(n), y] = 1.0
        h = 1e-6
        for _ in range(10):
            w = rng.normal(0, 1, size=(groups, bins + 1))
            _, grad = loss_and_grad(w, x1, targets, l2=1e-3)
            num = np.empty_like(w)
            for i in range(w.shape[0]):
                for j in range(w.shape[1]):
                    wp = w.copy()
                    wp[i, j] += h
                    lp, _ = loss_and_grad(wp, x1, targets, l2=1e-3)
                    wm = w.copy()
                    wm[i, j] -= h
                    lm, _ = loss_and_grad(wm, x1, targets, l2=1e-3)
                    num[i, j] = (lp - lm) / (2 * h)
            denom = np.maximum(np.abs(grad), np.abs(num))
            denom[denom == 0] = 1.0
            rel = np.abs(grad - num) / denom
            assert rel.max() < 1e-5

    def test_bias_column_not_regularized(self):
        w = np.zeros((2, 3))
        w[:, -1] = 100.0  # only bias is nonzero
        x1 = np.array([[0.5, 0.5, 1.0], [0.25, 0.75, 1.0]])
        targets = np.array([[1.0, 0.0], [0.0, 1.0]])
        loss_big_bias, _ = loss_and_grad(w, x1, targets, l2=10.0)
        loss_no_reg, _ = loss_and_grad(w, x1, targets, l2=0.0)
        assert loss_big_bias == loss_no_reg


class TestTrainProbe:
    def test_zero_steps_gives_uniform_probabilities(self, rng):
        x = rng.random((10, 6))
        groups = ["A", "B", "C"] * 3 + ["A"]
        model = train_probe(x, groups, ProbeHyper(steps=0))
        probs = predict_proba(model, x)
        assert np.allclose(probs, 1.0 / 3.0)
        assert len(model.loss_history) == 1

    def test_separable_toy_reaches_perfect_training_accuracy(self):
        # one-hot features keyed to the group are linearly separable
        x = np.zeros((30, 3))
        groups = []
        for i in range(30):
            g = i % 3
            x[i, g] = 1.0
            groups.append("ABC"[g])
        model = train_probe(x, groups, ProbeHyper(steps=500))
        predicted = np.argmax(predict_proba(model, x), axis=1)
        want = np.array([model.group_names.index(g) for g in groups])
        assert np.array_equal(predicted, want)

    def test_loss_monotone_nonincreasing_at_default_rate(self, rng):
        x, groups = synthetic_features(rng, 60, shift=10)
        model = train_probe(x, groups, ProbeHyper(steps=300))
        hist = model.loss_history
        assert len(hist) == 301
        assert np.all(np.diff(hist) <= 1e-12)
        assert model.final_loss == hist[-1]

    def test_deterministic_without_seed_dependence(self, rng):
        x, groups = synthetic_features(rng, 40, shift=10)
        a = train_probe(x, groups, ProbeHyper(steps=50, seed=1))
        b = train_probe(x, groups, ProbeHyper(steps=50, seed=99))
        assert np.array_equal(a.weights, b.weights)

    def test_minibatch_mode_is_seed_deterministic(self, rng):
        x, groups = synthetic_features(rng, 40, shift=10)
        a = train_probe(x, groups, ProbeHyper(steps=50, batch_size=8, seed=3))
        b = train_probe(x, groups, ProbeHyper(steps=50, batch_size=8, seed=3))
        assert np.array_equal(a.weights, b.weights)

    def test_single_group_rejected(self, rng):
        x = rng.random((5, 4))
        with pytest.raises(SingleGroupError):
            train_probe(x, ["A"] * 5)

    def test_group_names_sorted(self, rng):
        x = rng.random((6, 4))
        model = train_probe(x, ["zeta", "alpha"] * 3, ProbeHyper(steps=1))
        assert model.group_names == ("alpha", "zeta")

    def test_hyper_validation(self):
        with pytest.raises(ValueError):
            ProbeHyper(learning_rate=0.0)
        with pytest.raises(ValueError):
            ProbeHyper(steps=-1)
        with pytest.raises(ValueError):
            ProbeHyper(l2=-0.1)
        with pytest.raises(ValueError):
            ProbeHyper(batch_size=0)


class TestProbeAuroc:
    def test_shifted_groups_recovered(self, rng):
        x_train, g_train = synthetic_features(rng, 400, shift=10)
        x_test, g_test = synthetic_features(rng, 400, shift=10)
        model = train_probe(x_train, g_train, ProbeHyper(steps=800))
        assert probe_auroc(model, x_test, g_test) >= 0.9

    def test_null_shift_near_half(self, rng):
        x_train, g_train = synthetic_features(rng, 500, shift=0)
        x_test, g_test = synthetic_features(rng, 500, shift=0)
        model = train_probe(x_train, g_train, ProbeHyper(steps=400))
        assert 0.45 <= probe_auroc(model, x_test, g_test) <= 0.55

    def test_perfect_probe_on_one_hot_features(self):
        x = np.zeros((20, 2))
        groups = []
        for i in range(20):
            g = i % 2
            x[i, g] = 1.0
            groups.append("AB"[g])
        model = train_probe(x, groups, ProbeHyper(steps=300))
        assert probe_auroc(model, x, groups) == 1.0

    def test_permutation_of_group_names_equivariant(self, rng):
        x, groups = synthetic_features(rng, 80, shift=10)
        base = train_probe(x, groups, ProbeHyper(steps=200))
        swap = {"A": "Z", "B": "Y"}
        swapped = train_probe(x, [swap[g] for g in groups],
                              ProbeHyper(steps=200))
        # names sort to (Y, Z) = old (B, A): weight rows swap
        assert np.array_equal(swapped.weights[::-1], base.weights)
        a = probe_auroc(base, x, groups)
        b = probe_auroc(swapped, x, [swap[g] for g in groups])
        assert a == pytest.approx(b, abs=1e-15)

    def test_feature_width_mismatch_rejected(self, rng):
        x, groups = synthetic_features(rng, 20, shift=0, bins=16)
        model = train_probe(x, groups, ProbeHyper(steps=1))
        with pytest.raises(ValueError):
            predict_proba(model, np.zeros((3, 32)))

    def test_unevaluable_groups_rejected(self, rng):
        x, groups = synthetic_features(rng, 20, shift=0)
        model = train_probe(x, groups, ProbeHyper(steps=1))
        with pytest.raises(SingleGroupError):
            probe_auroc(model, x[:4], ["A", "A", "A", "A"])


class TestPersistence:
    def test_roundtrip(self, tmp_path, rng):
        x, groups = synthetic_features(rng, 30, shift=10)
        model = train_probe(x, groups,
                            ProbeHyper(steps=25, batch_size=None),
                            n_bins=32, exclude_zero=True)
        path = tmp_path / "probe.npz"
        save_probe(model, path)
        got = load_probe(path)
        assert isinstance(got, ProbeModel)
        assert np.array_equal(got.weights, model.weights)
        assert got.group_names == model.group_names
        assert got.n_bins == 32
        assert got.exclude_zero is True
        assert got.hyper == model.hyper
        assert got.final_loss == model.final_loss
        assert np.array_equal(got.loss_history, model.loss_history)

    def test_roundtrip_minibatch_sentinel(self, tmp_path, rng):
        x, groups = synthetic_features(rng, 20, shift=0)
        model = train_probe(x, groups, ProbeHyper(steps=5, batch_size=4))
        path = tmp_path / "probe.npz"
        save_probe(model, path)
        assert load_probe(path).hyper.batch_size == 4
