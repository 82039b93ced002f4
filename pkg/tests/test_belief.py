import math

import numpy as np
import pytest

from faq.belief import (
    GaussianBelief,
    laplace_update,
    load_belief,
    posterior_nll_check,
    predict,
    save_belief,
    sigmoid,
)
from faq.errors import DimensionError, NumericalError


def random_spd(rng, k, scale=1.0):
    A = rng.normal(0, scale, (k, k))
    return A @ A.T + 0.5 * np.eye(k)


def random_belief(rng, k, scale=1.0):
    return GaussianBelief(rng.normal(0, 1, k), random_spd(rng, k, scale))


class TestPredict:
    def test_zero_mean_gives_half(self):
        b = GaussianBelief(np.zeros(3), np.eye(3))
        p = predict(b, np.random.default_rng(0).normal(0, 1, (9, 3)))
        np.testing.assert_allclose(p.values, 0.5)

    def test_scalar_value(self):
        b = GaussianBelief(np.array([3.0]), np.eye(1))
        p = predict(b, np.array([[1.0]]))
        assert p.values[0] == pytest.approx(0.9525741268224334, abs=1e-12)

    def test_clamped_at_saturation(self):
        b = GaussianBelief(np.array([40.0]), np.eye(1))
        p = predict(b, np.array([[1.0], [-1.0]]))
        assert p.values[0] == 1 - 1e-6
        assert p.values[1] == 1e-6

    def test_sum_cache(self):
        rng = np.random.default_rng(1)
        b = random_belief(rng, 4)
        p = predict(b, rng.normal(0, 1, (31, 4)))
        assert p.sum_cache == pytest.approx(p.values.sum(), rel=1e-9)

    def test_dimension_mismatch(self):
        b = GaussianBelief(np.zeros(3), np.eye(3))
        with pytest.raises(DimensionError):
            predict(b, np.zeros((4, 2)))

    def test_scale_consistency(self):
        rng = np.random.default_rng(2)
        b = random_belief(rng, 3)
        V = rng.normal(0, 1, (11, 3))
        doubled = GaussianBelief(2 * b.mean, b.cov)
        np.testing.assert_allclose(
            predict(b, V).values, predict(doubled, 0.5 * V).values, atol=1e-12
        )


class TestLaplaceUpdate:
    def test_scalar_hand_values(self):
        b = GaussianBelief(np.zeros(1), np.eye(1))
        nb = laplace_update(b, np.array([1.0]), 1)
        assert nb.cov[0, 0] == pytest.approx(0.8, abs=1e-12)
        assert nb.mean[0] == pytest.approx(0.4, abs=1e-12)

    def test_zero_feature_is_noop(self):
        rng = np.random.default_rng(3)
        b = random_belief(rng, 3)
        nb = laplace_update(b, np.zeros(3), 1)
        np.testing.assert_array_equal(nb.mean, b.mean)
        np.testing.assert_array_equal(nb.cov, b.cov)

    def test_matches_explicit_inverse(self):
        # rank-1 downdate vs inv(inv(S) + w v v') across dimensions
        rng = np.random.default_rng(4)
        for k in (1, 2, 4, 8):
            for _ in range(100):
                b = random_belief(rng, k)
                v = rng.normal(0, 1, k)
                z = int(rng.integers(0, 2))
                nb = laplace_update(b, v, z)
                p = float(sigmoid(b.mean @ v))
                w = p * (1 - p)
                direct = np.linalg.inv(np.linalg.inv(b.cov) + w * np.outer(v, v))
                assert np.abs(nb.cov - direct).max() < 1e-10

    def test_variance_never_increases(self):
        rng = np.random.default_rng(5)
        for _ in range(50):
            b = random_belief(rng, 4)
            v = rng.normal(0, 2, 4)
            nb = laplace_update(b, v, int(rng.integers(0, 2)))
            x = rng.normal(0, 1, 4)
            assert x @ nb.cov @ x <= x @ b.cov @ x + 1e-12

    def test_mean_moves_toward_agreement(self):
        rng = np.random.default_rng(6)
        for _ in range(200):
            b = random_belief(rng, 3)
            v = rng.normal(0, 1, 3)
            z = int(rng.integers(0, 2))
            p = float(sigmoid(b.mean @ v))
            nb = laplace_update(b, v, z)
            if v @ nb.cov @ v > 0:
                assert math.copysign(1, nb.mean @ v - b.mean @ v) == math.copysign(
                    1, z - p
                )

    def test_symmetry_preserved(self):
        rng = np.random.default_rng(7)
        b = random_belief(rng, 6)
        for _ in range(300):
            v = rng.normal(0, 1, 6)
            b = laplace_update(b, v, int(rng.integers(0, 2)))
        assert np.abs(b.cov - b.cov.T).max() == 0.0


class TestPosteriorCheck:
    def test_zero_feature_zero_residual(self):
        b = GaussianBelief(np.zeros(2), np.eye(2))
        nb = laplace_update(b, np.zeros(2), 1)
        assert posterior_nll_check(b, np.zeros(2), 1, nb) == pytest.approx(0.0, abs=1e-9)

    def test_scalar_gap_is_small(self):
        b = GaussianBelief(np.zeros(1), np.eye(1))
        v = np.array([1.0])
        nb = laplace_update(b, v, 1)
        assert posterior_nll_check(b, v, 1, nb) < 0.05

    def test_confident_agreeing_observation(self):
        b = GaussianBelief(np.array([6.0]), np.eye(1))
        v = np.array([1.0])
        nb = laplace_update(b, v, 1)
        assert posterior_nll_check(b, v, 1, nb) < 1e-3


class TestValidation:
    def test_asymmetric_covariance_rejected(self):
        cov = np.array([[1.0, 0.5], [0.2, 1.0]])
        with pytest.raises(NumericalError):
            GaussianBelief(np.zeros(2), cov)

    def test_non_spd_rejected(self):
        with pytest.raises(NumericalError):
            GaussianBelief(np.zeros(2), np.diag([1.0, -0.1]))

    def test_shape_mismatch(self):
        with pytest.raises(DimensionError):
            GaussianBelief(np.zeros(3), np.eye(2))


def test_snapshot_round_trip(tmp_path):
    rng = np.random.default_rng(8)
    b = random_belief(rng, 5)
    path = tmp_path / "belief.csv"
    save_belief(b, path)
    loaded = load_belief(path)
    np.testing.assert_array_equal(b.mean, loaded.mean)
    np.testing.assert_array_equal(b.cov, loaded.cov)
