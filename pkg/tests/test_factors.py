import math

import numpy as np
import pytest

from faq.belief import GaussianBelief
from faq.errors import DataError, DimensionError
from faq.factors import (
    FactorSet,
    FitConfig,
    cross_validate,
    empirical_prior,
    fit,
    fit_traced,
    load_factors,
    masked_nll,
    masked_nll_grad,
    save_factors,
)
from faq.history import UNOBSERVED, OutcomeMatrix


def sigmoid(x):
    return 1.0 / (1.0 + np.exp(-x))


def random_instance(rng, n=6, q=7, k=3, obs_frac=0.7):
    U = rng.normal(0, 0.8, (n, k))
    V = rng.normal(0, 0.8, (q, k))
    entries = rng.integers(0, 2, (n, q)).astype(np.int8)
    entries[rng.random((n, q)) > obs_frac] = UNOBSERVED
    if (entries == UNOBSERVED).all():
        entries[0, 0] = 1
    return FactorSet(U, V), OutcomeMatrix(entries)


class TestMaskedNll:
    def test_zero_factors_give_log2_per_entry(self):
        f, m = random_instance(np.random.default_rng(0))
        f = FactorSet(np.zeros_like(f.U), np.zeros_like(f.V))
        assert masked_nll(f, m) == pytest.approx(m.n_observed * math.log(2), rel=1e-12)

    def test_single_entry_hand_value(self):
        f = FactorSet(np.array([[3.0]]), np.array([[1.0]]))
        m = OutcomeMatrix(np.array([[1]], dtype=np.int8))
        assert masked_nll(f, m) == pytest.approx(math.log1p(math.exp(-3)), rel=1e-12)

    def test_no_observations(self):
        f = FactorSet(np.zeros((1, 1)), np.zeros((1, 1)))
        m = OutcomeMatrix(np.array([[UNOBSERVED]], dtype=np.int8))
        with pytest.raises(DataError):
            masked_nll(f, m)

    def test_dimension_mismatch(self):
        f = FactorSet(np.zeros((2, 1)), np.zeros((3, 1)))
        m = OutcomeMatrix(np.ones((2, 2), dtype=np.int8))
        with pytest.raises(DimensionError):
            masked_nll(f, m)

    def test_stable_at_large_logits(self):
        f = FactorSet(np.array([[400.0]]), np.array([[1.0]]))
        m = OutcomeMatrix(np.array([[0]], dtype=np.int8))
        assert masked_nll(f, m) == pytest.approx(400.0)


class TestMaskedNllGrad:
    def test_zero_factors_zero_grad(self):
        f, m = random_instance(np.random.default_rng(1))
        f = FactorSet(np.zeros_like(f.U), np.zeros_like(f.V))
        dU, dV = masked_nll_grad(f, m)
        assert (dU == 0).all() and (dV == 0).all()

    def test_scalar_chain_rule(self):
        f = FactorSet(np.array([[1.0]]), np.array([[1.0]]))
        m = OutcomeMatrix(np.array([[1]], dtype=np.int8))
        dU, dV = masked_nll_grad(f, m)
        assert dU[0, 0] == pytest.approx(sigmoid(1.0) - 1.0, abs=1e-12)
        assert dV[0, 0] == pytest.approx(sigmoid(1.0) - 1.0, abs=1e-12)

    def test_unobserved_column_has_zero_grad(self):
        entries = np.array([[1, UNOBSERVED], [0, UNOBSERVED]], dtype=np.int8)
        f, _ = random_instance(np.random.default_rng(2), n=2, q=2, k=2)
        _, dV = masked_nll_grad(f, OutcomeMatrix(entries))
        assert (dV[1] == 0).all()

    def test_matches_central_differences(self):
        rng = np.random.default_rng(3)
        for _ in range(10):
            f, m = random_instance(rng)
            dU, dV = masked_nll_grad(f, m)
            h = 1e-5
            for arr, grad, which in ((f.U, dU, "U"), (f.V, dV, "V")):
                flat = arr.ravel()
                gflat = grad.ravel()
                for i in range(flat.size):
                    orig = flat[i]
                    flat[i] = orig + h
                    up = masked_nll(f, m)
                    flat[i] = orig - h
                    dn = masked_nll(f, m)
                    flat[i] = orig
                    fd = (up - dn) / (2 * h)
                    assert abs(fd - gflat[i]) / max(1e-3, abs(fd)) < 1e-5, which


class TestMaskIndependence:
    def test_hidden_values_do_not_matter(self):
        rng = np.random.default_rng(4)
        base = rng.integers(0, 2, (8, 8)).astype(np.int8)
        other = base.copy()
        other[2, 3] = 1 - other[2, 3]
        for e in (base, other):
            e[2, 3] = UNOBSERVED
        f, _ = random_instance(rng, n=8, q=8)
        ma, mb = OutcomeMatrix(base), OutcomeMatrix(other)
        assert masked_nll(f, ma) == masked_nll(f, mb)
        cfg = FitConfig(max_iters=50, seed=5)
        fa, fb = fit(ma, 2, cfg), fit(mb, 2, cfg)
        np.testing.assert_array_equal(fa.U, fb.U)
        np.testing.assert_array_equal(fa.V, fb.V)


class TestFit:
    def test_separable_rank1_drives_loss_down(self):
        u = np.where(np.arange(20) % 2 == 0, 2.0, -2.0)
        v = np.where(np.arange(20) % 3 == 0, 2.0, -2.0)
        m = OutcomeMatrix((np.outer(u, v) > 0).astype(np.int8))
        _, trace = fit_traced(m, 1, FitConfig(weight_decay=0.0, seed=3))
        assert trace[-1] < 0.05 * trace[0]
        # planted factors are a feasible point; the fit should do better
        planted = masked_nll(FactorSet(u[:, None], v[:, None]), m)
        assert trace[-1] < planted

    def test_monotone_after_burn_in(self):
        rng = np.random.default_rng(0)
        U = rng.normal(0, 1, (60, 4))
        V = rng.normal(0, 1, (80, 4))
        H = (rng.random((60, 80)) < sigmoid(U @ V.T)).astype(np.int8)
        _, trace = fit_traced(OutcomeMatrix(H), 4, FitConfig(weight_decay=1e-3, seed=1))
        diffs = np.diff(trace)[10:]
        assert (diffs <= 1e-6).all()
        assert trace[-1] <= trace[0]

    def test_seed_stability_on_heldout_accuracy(self):
        rng = np.random.default_rng(42)
        U = rng.normal(0, 1, (100, 4))
        V = rng.normal(0, 1, (100, 4))
        H = (rng.random((100, 100)) < sigmoid(U @ V.T)).astype(np.int8)
        hold = rng.random((100, 100)) < 0.2
        train = H.copy()
        train[hold] = UNOBSERVED
        m = OutcomeMatrix(train)
        accs, fsets = [], []
        for seed in (1, 2):
            f = fit(m, 8, FitConfig(weight_decay=1e-3, seed=seed, max_iters=800))
            fsets.append(f)
            pred = (f.U @ f.V.T)[hold] > 0
            accs.append(np.mean(pred == (H[hold] == 1)))
        assert not np.array_equal(fsets[0].U, fsets[1].U)
        assert abs(accs[0] - accs[1]) < 0.02

    def test_all_unobserved_rejected(self):
        m = OutcomeMatrix(np.full((3, 3), UNOBSERVED, dtype=np.int8))
        with pytest.raises(DataError):
            fit(m, 2, FitConfig())

    def test_weight_decay_shrinks_factors(self):
        rng = np.random.default_rng(6)
        H = rng.integers(0, 2, (30, 30)).astype(np.int8)
        m = OutcomeMatrix(H)
        norms = {}
        for wd in (1e1, 1e-5):
            f = fit(m, 3, FitConfig(weight_decay=wd, seed=2, max_iters=400))
            norms[wd] = np.sqrt((f.U**2).sum() + (f.V**2).sum())
        assert norms[1e1] < norms[1e-5]

    def test_deterministic_given_seed(self):
        _, m = random_instance(np.random.default_rng(7), n=10, q=10)
        cfg = FitConfig(max_iters=60, seed=9)
        a, b = fit(m, 2, cfg), fit(m, 2, cfg)
        np.testing.assert_array_equal(a.U, b.U)


class TestCrossValidate:
    def test_single_point_grid(self):
        _, m = random_instance(np.random.default_rng(8), n=12, q=12, obs_frac=1.0)
        got = cross_validate(m, [2], [0.1], folds=2, seed=0, cfg=FitConfig(max_iters=40))
        assert got == (2, 0.1)

    def test_planted_dimension_recovery(self):
        # planted k=2: the 1-SE rule must never pick the overparameterized k=8
        for hseed in range(10):
            rng = np.random.default_rng(100 + hseed)
            U = rng.normal(0, 1.2, (50, 2))
            V = rng.normal(0, 1.2, (60, 2))
            H = (rng.random((50, 60)) < sigmoid(U @ V.T)).astype(np.int8)
            k, _ = cross_validate(
                OutcomeMatrix(H),
                [1, 2, 8],
                [1e-3],
                folds=3,
                seed=hseed,
                cfg=FitConfig(max_iters=300),
            )
            assert k in (1, 2)

    def test_requires_two_folds(self):
        _, m = random_instance(np.random.default_rng(9))
        with pytest.raises(ValueError):
            cross_validate(m, [1], [0.1], folds=1, seed=0)


class TestEmpiricalPrior:
    def test_single_factor_jitter_only(self):
        b = empirical_prior(np.array([[1.0, -2.0]]))
        np.testing.assert_array_equal(b.mean, [1.0, -2.0])
        np.testing.assert_allclose(b.cov, 1e-6 * np.eye(2))

    def test_two_factor_hand_covariance(self):
        b = empirical_prior(np.array([[0.0, 0.0], [2.0, 0.0]]))
        np.testing.assert_allclose(b.mean, [1.0, 0.0])
        eps = 1e-6 * 1.0  # mean diagonal of diag(2, 0) is 1
        np.testing.assert_allclose(b.cov, np.diag([2.0, 0.0]) + eps * np.eye(2))

    def test_law_of_large_numbers(self):
        rng = np.random.default_rng(10)
        b = empirical_prior(rng.normal(0, 1, (10_000, 3)))
        assert np.abs(b.cov - np.eye(3)).max() < 0.1

    def test_always_spd(self):
        rng = np.random.default_rng(11)
        for n in (1, 2, 3, 50):
            b = empirical_prior(rng.normal(0, 1, (n, 4)) * rng.uniform(0, 2))
            assert isinstance(b, GaussianBelief)  # constructor Cholesky-validates


def test_factor_serialization_round_trip(tmp_path):
    f, _ = random_instance(np.random.default_rng(12))
    save_factors(f, tmp_path / "fac", meta={"weight_decay": 1e-3, "seed": 4})
    g, meta = load_factors(tmp_path / "fac")
    np.testing.assert_array_equal(f.U, g.U)
    np.testing.assert_array_equal(f.V, g.V)
    assert meta["k"] == f.k and meta["weight_decay"] == 1e-3
