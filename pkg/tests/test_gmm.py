"""EM training, likelihood evaluation, and the model bank container."""

import numpy as np
import pytest

from scenefuse.dataio import FeatureStoreError
from scenefuse.gmm import (
    GmmBank,
    GmmModel,
    VARIANCE_FLOOR_ABS,
    VARIANCE_FLOOR_SCALE,
    classify_gmm,
    fit_gmm,
    fit_gmm_bank,
    frame_log_likelihoods,
    load_gmm_bank,
    log_likelihood,
    predict_index,
    save_gmm_bank,
)


def naive_log_likelihood(model, features):
    """Loop-and-logsumexp reference evaluation."""
    total = 0.0
    for x in features:
        comps = []
        for w, mu, var in zip(model.weights, model.means, model.variances):
            ll = np.log(w) - 0.5 * np.sum(
                np.log(2 * np.pi * var) + (x - mu) ** 2 / var
            )
            comps.append(ll)
        comps = np.array(comps)
        peak = comps.max()
        total += peak + np.log(np.exp(comps - peak).sum())
    return total


def two_blobs(rng, separation=100.0, n=200, dim=3):
    a = rng.standard_normal((n, dim))
    b = rng.standard_normal((n, dim)) + separation
    return np.vstack([a, b]), a, b


class TestModelValidation:
    def test_weights_must_sum_to_one(self):
        with pytest.raises(ValueError):
            GmmModel(np.array([0.6, 0.6]), np.zeros((2, 1)), np.ones((2, 1)))

    def test_negative_weight_rejected(self):
        with pytest.raises(ValueError):
            GmmModel(np.array([1.5, -0.5]), np.zeros((2, 1)), np.ones((2, 1)))

    def test_nonpositive_variance_rejected(self):
        with pytest.raises(ValueError):
            GmmModel(np.array([1.0]), np.zeros((1, 2)), np.array([[1.0, 0.0]]))

    def test_shape_mismatch_rejected(self):
        with pytest.raises(ValueError):
            GmmModel(np.array([1.0]), np.zeros((1, 2)), np.ones((1, 3)))

    def test_bank_dim_agreement(self):
        m1 = GmmModel(np.array([1.0]), np.zeros((1, 2)), np.ones((1, 2)))
        m2 = GmmModel(np.array([1.0]), np.zeros((1, 3)), np.ones((1, 3)))
        with pytest.raises(ValueError, match="disagree on dim"):
            GmmBank([m1, m2])
        with pytest.raises(ValueError):
            GmmBank([]).dim


class TestLikelihood:
    def test_standard_normal_value(self):
        model = GmmModel(np.array([1.0]), np.zeros((1, 1)), np.ones((1, 1)))
        got = frame_log_likelihoods(model, np.array([[0.0]]))
        assert got[0] == pytest.approx(-0.5 * np.log(2 * np.pi), abs=1e-12)
        assert log_likelihood(model, np.array([[1.0]])) == pytest.approx(
            -0.5 * np.log(2 * np.pi) - 0.5, abs=1e-12
        )

    def test_matches_naive_evaluation(self):
        rng = np.random.default_rng(1)
        model = GmmModel(
            np.array([0.2, 0.5, 0.3]),
            rng.standard_normal((3, 4)),
            rng.uniform(0.5, 2.0, size=(3, 4)),
        )
        feats = rng.standard_normal((20, 4))
        want = naive_log_likelihood(model, feats)
        assert log_likelihood(model, feats) == pytest.approx(want, rel=1e-9)

    def test_duplicating_frames_doubles_total(self):
        rng = np.random.default_rng(2)
        model = GmmModel(
            np.array([0.4, 0.6]),
            rng.standard_normal((2, 3)),
            rng.uniform(0.5, 1.5, size=(2, 3)),
        )
        feats = rng.standard_normal((10, 3))
        one = log_likelihood(model, feats)
        two = log_likelihood(model, np.vstack([feats, feats]))
        assert two == pytest.approx(2 * one, rel=1e-12)

    def test_component_permutation_invariant(self):
        rng = np.random.default_rng(3)
        weights = np.array([0.1, 0.3, 0.6])
        means = rng.standard_normal((3, 2))
        variances = rng.uniform(0.5, 2.0, size=(3, 2))
        feats = rng.standard_normal((15, 2))
        base = log_likelihood(GmmModel(weights, means, variances), feats)
        perm = [2, 0, 1]
        shuffled = log_likelihood(
            GmmModel(weights[perm], means[perm], variances[perm]), feats
        )
        assert abs(base - shuffled) <= 1e-12 * abs(base)

    def test_rejects_bad_features(self):
        model = GmmModel(np.array([1.0]), np.zeros((1, 2)), np.ones((1, 2)))
        with pytest.raises(ValueError):
            log_likelihood(model, np.zeros((0, 2)))
        with pytest.raises(ValueError):
            log_likelihood(model, np.array([[1.0, np.nan]]))
        with pytest.raises(ValueError, match="dim"):
            log_likelihood(model, np.zeros((3, 5)))


class TestFitGmm:
    def test_single_component_closed_form(self):
        rng = np.random.default_rng(4)
        feats = rng.standard_normal((500, 6)) * 2.0 + 1.0
        model = fit_gmm(feats, 1, seed=0)
        assert model.weights[0] == 1.0
        assert np.abs(model.means[0] - feats.mean(axis=0)).max() < 1e-9
        assert np.abs(model.variances[0] - feats.var(axis=0)).max() < 1e-9

    def test_separated_clusters_recovered(self):
        rng = np.random.default_rng(5)
        feats, a, b = two_blobs(rng)
        model = fit_gmm(feats, 2, seed=1)
        order = np.argsort(model.means[:, 0])
        assert np.abs(model.means[order[0]] - a.mean(axis=0)).max() < 1e-3
        assert np.abs(model.means[order[1]] - b.mean(axis=0)).max() < 1e-3
        assert np.abs(model.weights - 0.5).max() < 1e-3

    def test_monotone_log_likelihood(self):
        rng = np.random.default_rng(6)
        for run in range(10):
            feats = rng.standard_normal((80, 3)) + rng.integers(0, 4, size=(80, 1))
            model = fit_gmm(feats, int(rng.integers(1, 5)), seed=run)
            trace = np.array(model.train_log_likelihoods)
            assert trace.size >= 1
            gaps = np.diff(trace)
            assert np.all(gaps >= -1e-8 * np.maximum(np.abs(trace[:-1]), 1.0))

    def test_deterministic_for_seed(self):
        rng = np.random.default_rng(7)
        feats = rng.standard_normal((120, 4))
        a = fit_gmm(feats, 3, seed=9)
        b = fit_gmm(feats, 3, seed=9)
        assert np.array_equal(a.weights, b.weights)
        assert np.array_equal(a.means, b.means)
        assert np.array_equal(a.variances, b.variances)

    def test_variance_floor_applied(self):
        rng = np.random.default_rng(8)
        feats = rng.standard_normal((60, 3))
        # one dimension is constant, so only the absolute floor can hold it up
        feats[:, 2] = 5.0
        model = fit_gmm(feats, 2, seed=0)
        floor = np.maximum(VARIANCE_FLOOR_SCALE * feats.var(axis=0), VARIANCE_FLOOR_ABS)
        assert np.all(model.variances >= floor - 1e-18)
        assert np.all(model.variances[:, 2] >= VARIANCE_FLOOR_ABS)

    def test_weights_sum_exactly_one(self):
        rng = np.random.default_rng(9)
        feats = rng.standard_normal((100, 2))
        model = fit_gmm(feats, 4, seed=3)
        assert model.weights.sum() == pytest.approx(1.0, abs=1e-15)

    def test_more_components_than_frames_rejected(self):
        with pytest.raises(ValueError, match="cannot support"):
            fit_gmm(np.zeros((3, 2)), 4, seed=0)

    def test_duplicate_frames_fit(self):
        # all-identical data collapses every component onto one point
        feats = np.tile(np.array([[1.0, -2.0]]), (50, 1))
        model = fit_gmm(feats, 3, seed=0)
        assert np.abs(model.means - feats[0]).max() < 1e-9


class TestClassification:
    def train_bank(self, rng):
        a = rng.standard_normal((300, 3))
        b = rng.standard_normal((300, 3)) + 4.0
        return fit_gmm_bank([a, b], 2, seeds=[0, 1])

    def test_two_class_accuracy(self):
        rng = np.random.default_rng(10)
        bank = self.train_bank(rng)
        correct = 0
        for _ in range(100):
            which = rng.integers(2)
            clip = rng.standard_normal((30, 3)) + (4.0 if which else 0.0)
            scores = classify_gmm(bank, clip)
            assert scores.shape == (2,)
            correct += int(predict_index(scores) == which)
        assert correct >= 99

    def test_tie_breaks_to_lowest_index(self):
        model = GmmModel(np.array([1.0]), np.zeros((1, 2)), np.ones((1, 2)))
        twin = GmmModel(np.array([1.0]), np.zeros((1, 2)), np.ones((1, 2)))
        bank = GmmBank([model, twin])
        scores = classify_gmm(bank, np.ones((5, 2)))
        assert scores[0] == scores[1]
        assert predict_index(scores) == 0

    def test_empty_bank_rejected(self):
        with pytest.raises(ValueError, match="empty bank"):
            classify_gmm(GmmBank([]), np.ones((2, 2)))

    def test_bank_needs_one_seed_per_class(self):
        with pytest.raises(ValueError, match="one seed per class"):
            fit_gmm_bank([np.ones((5, 2))], 1, seeds=[0, 1])


class TestBankFile:
    def build_bank(self):
        rng = np.random.default_rng(11)
        feats = [rng.standard_normal((100, 4)), rng.standard_normal((100, 4)) + 2]
        return fit_gmm_bank(feats, 3, seeds=[5, 6])

    def test_round_trip_bit_exact(self, tmp_path):
        bank = self.build_bank()
        path = tmp_path / "bank.sfg"
        save_gmm_bank(path, bank)
        back = load_gmm_bank(path)
        assert back.n_classes == bank.n_classes
        for got, want in zip(back.models, bank.models):
            assert np.array_equal(got.weights, want.weights)
            assert np.array_equal(got.means, want.means)
            assert np.array_equal(got.variances, want.variances)
        path2 = tmp_path / "again.sfg"
        save_gmm_bank(path2, back)
        assert path.read_bytes() == path2.read_bytes()

    def test_scores_survive_round_trip(self, tmp_path):
        bank = self.build_bank()
        path = tmp_path / "bank.sfg"
        save_gmm_bank(path, bank)
        back = load_gmm_bank(path)
        clip = np.random.default_rng(12).standard_normal((20, 4))
        assert np.array_equal(classify_gmm(bank, clip), classify_gmm(back, clip))

    def test_corruption_detected(self, tmp_path):
        bank = self.build_bank()
        path = tmp_path / "bank.sfg"
        save_gmm_bank(path, bank)
        blob = bytearray(path.read_bytes())
        blob[30] ^= 0x01
        path.write_bytes(bytes(blob))
        with pytest.raises(FeatureStoreError, match="checksum"):
            load_gmm_bank(path)

    def test_bad_magic(self, tmp_path):
        path = tmp_path / "bank.sfg"
        path.write_bytes(b"XXXX" + b"\x00" * 32)
        with pytest.raises(FeatureStoreError, match="bad magic"):
            load_gmm_bank(path)

    def test_truncation(self, tmp_path):
        bank = self.build_bank()
        path = tmp_path / "bank.sfg"
        save_gmm_bank(path, bank)
        blob = path.read_bytes()
        path.write_bytes(blob[:10])
        with pytest.raises(FeatureStoreError):
            load_gmm_bank(path)
