import math

import numpy as np
import pytest

from faq.belief import GaussianBelief
from faq.estimators import (
    EstimateReport,
    QueryTrace,
    _pai_variance_terms,
    aipw_stream_run,
    ess,
    load_trace,
    pai_estimate,
    pai_run,
    pai_variance,
    report_from_trace,
    save_trace,
    traditional_ai_run,
    wald_ci,
)
from faq.history import DifficultyVector
from faq.policies import BERNOULLI, MINRULE, NEYMAN, WITHOUT_REPLACEMENT, PolicyConfig


def make_trace(rows):
    cols = list(zip(*rows))
    return QueryTrace(
        idx=np.array(cols[0], dtype=np.int64),
        q_sel=np.array(cols[1]),
        z=np.array(cols[2], dtype=np.int8),
        p_sel=np.array(cols[3]),
        pred_sum=np.array(cols[4]),
    )


def small_bank(seed=0, n=60, k=2, scale=1.5):
    rng = np.random.default_rng(seed)
    V = rng.normal(0, scale / k**0.25, (n, k))
    u = rng.normal(0, scale / k**0.25, k)
    p = 1 / (1 + np.exp(-(V @ u)))
    z = (rng.random(n) < p).astype(np.int8)
    prior = GaussianBelief(np.zeros(k), np.eye(k))
    return z, V, prior


class TestPaiEstimate:
    def test_exact_predictions_recover_truth(self):
        # p_sel = z and pred_sum = N*theta on every round
        theta = 0.4
        tr = make_trace([(0, 0.2, 1, 1.0, 2.0), (1, 0.3, 0, 0.0, 2.0)])
        assert pai_estimate(tr, 5) == pytest.approx(theta, abs=1e-15)

    def test_single_round_hand_value(self):
        tr = make_trace([(2, 0.25, 1, 0.5, 2.0)])
        assert pai_estimate(tr, 4) == pytest.approx(1.0, abs=1e-15)

    def test_matches_independent_ipw_average(self):
        z, V, prior = small_bank(3)
        cfg = PolicyConfig(tau=1.0, n_b=20)
        tr, report = pai_run(z, V, prior, cfg, seed=11)
        n = len(z)
        acc = 0.0
        for t in range(tr.n_b):
            acc += tr.pred_sum[t] / n + (float(tr.z[t]) - tr.p_sel[t]) / (
                n * tr.q_sel[t]
            )
        assert report.theta_hat == pytest.approx(acc / tr.n_b, abs=1e-12)


class TestPaiVariance:
    def test_perfect_predictions_zero(self):
        tr = make_trace([(0, 0.5, 1, 1.0, 1.0), (1, 0.5, 0, 0.0, 1.0)])
        # S = mean(z/q) = 1; pred_sum = 1 for both rounds; residuals zero
        assert pai_variance(tr, 2) == 0.0

    def test_two_round_hand_value(self):
        tr = make_trace([(0, 0.5, 1, 0.5, 1.0), (1, 0.5, 0, 0.5, 1.0)])
        assert pai_variance(tr, 2) == pytest.approx(0.25, abs=1e-15)

    def test_unfloored_value_on_perfect_predictor(self):
        # all answers correct + saturated predictor: both terms ~1e-12, the
        # difference sits within rounding of zero
        z = np.ones(30, dtype=np.int8)
        V = np.full((30, 1), 40.0)
        prior = GaussianBelief(np.array([1.0]), 1e-6 * np.eye(1))
        tr, _ = pai_run(z, V, prior, PolicyConfig(tau=1.0, n_b=10), seed=5)
        t1, t2 = _pai_variance_terms(tr, len(z))
        assert t1 - t2 >= -1e-12

    def test_floor_engages_on_mixed_answers(self):
        # mixed answers + near-perfect predictions: the self-normalized sum
        # is noisy, the raw difference dips negative, the floor holds at 0
        z, _, _ = small_bank(4)
        V = np.where(z == 1, 40.0, -40.0)[:, None]
        prior = GaussianBelief(np.array([1.0]), 1e-6 * np.eye(1))
        tr, _ = pai_run(z, V, prior, PolicyConfig(tau=1.0, n_b=10), seed=5)
        assert pai_variance(tr, len(z)) >= 0.0


class TestWaldCi:
    def test_zero_sigma_degenerate(self):
        assert wald_ci(0.37, 0.0, 50) == (0.37, 0.37)
        assert wald_ci(1.2, 0.0, 50) == (1.0, 1.0)

    def test_hand_interval(self):
        low, high = wald_ci(0.5, 0.2, 100, alpha=0.05)
        assert low == pytest.approx(0.460801, abs=5e-7)
        assert high == pytest.approx(0.539199, abs=5e-7)

    def test_clipped_to_unit_interval(self):
        low, high = wald_ci(0.99, 0.5, 25, alpha=0.05)
        assert high == 1.0 and low >= 0.0

    def test_bad_args(self):
        with pytest.raises(ValueError):
            wald_ci(0.5, -0.1, 10)
        with pytest.raises(ValueError):
            wald_ci(0.5, 0.1, 10, alpha=1.5)


class TestPaiRun:
    def test_budget_and_determinism(self):
        z, V, prior = small_bank(5)
        cfg = PolicyConfig(n_b=25)
        tr1, rep1 = pai_run(z, V, prior, cfg, seed=42)
        tr2, rep2 = pai_run(z, V, prior, cfg, seed=42)
        assert tr1.n_b == 25 and rep1.n_labels == 25
        np.testing.assert_array_equal(tr1.idx, tr2.idx)
        assert rep1 == rep2

    def test_single_round_unrolls_formula(self):
        z, V, prior = small_bank(6)
        cfg = PolicyConfig(n_b=1)
        tr, rep = pai_run(z, V, prior, cfg, seed=7)
        n = len(z)
        expected = tr.pred_sum[0] / n + (float(tr.z[0]) - tr.p_sel[0]) / (
            n * tr.q_sel[0]
        )
        assert rep.theta_hat == pytest.approx(expected, abs=1e-15)

    def test_uniform_policy_unbiased(self):
        z, V, prior = small_bank(7, n=40)
        theta = z.mean()
        cfg = PolicyConfig(tau=1.0, n_b=12)
        est = np.array(
            [pai_run(z, V, prior, cfg, seed=s)[1].theta_hat for s in range(500)]
        )
        se = est.std(ddof=1) / math.sqrt(len(est))
        assert abs(est.mean() - theta) < 3 * se

    def test_perfect_predictor_degenerates(self):
        z, _, _ = small_bank(8, n=30)
        V = np.where(z == 1, 40.0, -40.0)[:, None]
        prior = GaussianBelief(np.array([1.0]), 1e-6 * np.eye(1))
        cfg = PolicyConfig(n_b=10)
        tr, rep = pai_run(z, V, prior, cfg, seed=1)
        assert abs(rep.theta_hat - z.mean()) < 1e-4
        assert rep.sigma_hat < 1e-4
        assert rep.width < 1e-3

    def test_with_replacement_repeats_same_answer(self):
        z, V, prior = small_bank(9, n=4)
        cfg = PolicyConfig(tau=1.0, n_b=4)
        tr, _ = pai_run(z, V, prior, cfg, seed=0)
        assert len(np.unique(tr.idx)) < 4  # this seed revisits a question
        for j in np.unique(tr.idx):
            assert (tr.z[tr.idx == j] == z[j]).all()

    def test_without_replacement_indices_distinct(self):
        z, V, prior = small_bank(10, n=25)
        cfg = PolicyConfig(n_b=20, replacement_mode=WITHOUT_REPLACEMENT)
        tr, _ = pai_run(z, V, prior, cfg, seed=4)
        assert len(np.unique(tr.idx)) == 20

    def test_budget_exceeding_bank_rejected(self):
        z, V, prior = small_bank(11, n=10)
        with pytest.raises(ValueError):
            pai_run(z, V, prior, PolicyConfig(n_b=11), seed=0)


class TestTraceSufficiency:
    def test_report_recomputed_bit_identically(self, tmp_path):
        z, V, prior = small_bank(12)
        cfg = PolicyConfig(n_b=15)
        tr, rep = pai_run(z, V, prior, cfg, seed=9, method="faq")
        path = tmp_path / "trace.csv"
        save_trace(tr, path)
        tr2 = load_trace(path)
        rep2 = report_from_trace(tr2, len(z), method="faq")
        assert rep == rep2  # float-exact equality across the round trip


class TestStreamRuns:
    def test_census_recovers_truth_exactly(self):
        z, _, _ = small_bank(13, n=20)
        cfg = PolicyConfig(n_b=20, tau=0.05)
        rep = aipw_stream_run(z, None, BERNOULLI, cfg, seed=0)
        assert rep.theta_hat == pytest.approx(z.mean(), abs=1e-15)
        assert rep.sigma_hat == 0.0
        assert rep.n_labels == 20

    def test_oracle_predictor_zero_variance(self):
        z, _, _ = small_bank(14, n=30)
        cfg = PolicyConfig(n_b=10, tau=0.25)
        d = DifficultyVector(np.full(30, 0.5), np.zeros(30, bool))
        rep = aipw_stream_run(
            z, z.astype(np.float64), NEYMAN, cfg, seed=1, difficulty=d
        )
        assert rep.theta_hat == pytest.approx(z.mean(), abs=1e-15)
        assert rep.sigma_hat == 0.0

    def test_uniform_stream_unbiased(self):
        z, _, _ = small_bank(15, n=50)
        cfg = PolicyConfig(n_b=15, tau=0.25)
        est = np.array(
            [
                aipw_stream_run(z, None, BERNOULLI, cfg, seed=s).theta_hat
                for s in range(500)
            ]
        )
        se = est.std(ddof=1) / math.sqrt(len(est))
        assert abs(est.mean() - z.mean()) < 3 * se

    def test_budget_never_exceeded(self):
        z, _, _ = small_bank(16, n=40)
        d = DifficultyVector(np.random.default_rng(2).random(40), np.zeros(40, bool))
        cfg = PolicyConfig(n_b=12, tau=0.25)
        for rule in (BERNOULLI, NEYMAN, MINRULE):
            base = d if rule != BERNOULLI else None
            for s in range(50):
                rep = aipw_stream_run(z, base, rule, cfg, seed=s, difficulty=d)
                assert rep.n_labels <= 12

    def test_difficulty_required_for_scored_rules(self):
        z, _, _ = small_bank(17, n=10)
        with pytest.raises(ValueError):
            aipw_stream_run(z, None, NEYMAN, PolicyConfig(n_b=3), seed=0)


class TestTraditionalRun:
    def test_saturated_prior_degenerates(self):
        z, _, _ = small_bank(18, n=30)
        V = np.where(z == 1, 40.0, -40.0)[:, None]
        prior = GaussianBelief(np.array([1.0]), 1e-6 * np.eye(1))
        rep = traditional_ai_run(z, V, prior, tau=0.25, n_b=10, seed=2)
        assert rep.theta_hat == pytest.approx(z.mean(), abs=1e-4)
        assert rep.var_hat < 1e-6

    def test_unbiased_over_seeds(self):
        z, V, prior = small_bank(19, n=50)
        est = np.array(
            [
                traditional_ai_run(z, V, prior, tau=0.25, n_b=15, seed=s).theta_hat
                for s in range(500)
            ]
        )
        se = est.std(ddof=1) / math.sqrt(len(est))
        assert abs(est.mean() - z.mean()) < 3 * se

    def test_full_tau_plan_is_flat(self):
        # tau=1 leaves only the uniform component: plan = n_b/N before stabilization
        z, V, prior = small_bank(20, n=40)
        rep = traditional_ai_run(z, V, prior, tau=1.0, n_b=8, seed=3)
        assert rep.n_labels <= 8


class TestEss:
    def test_equal_variances(self):
        assert ess(0.02, 0.02, 150) == 150

    def test_multiplier(self):
        v_u = 0.05
        assert ess(v_u / 5.01, v_u, 1500) == pytest.approx(7515.0)

    def test_inverse_proportionality(self):
        assert ess(0.4, 0.1, 100) == pytest.approx(25.0)

    def test_zero_method_variance_sentinel(self):
        assert ess(0.0, 0.1, 10) == float("inf")

    def test_invalid_uniform_variance(self):
        with pytest.raises(ValueError):
            ess(0.1, 0.0, 10)


def test_estimate_report_helpers():
    rep = EstimateReport(
        method="faq",
        n_b=50,
        theta_hat=0.5,
        sigma_hat=0.2,
        ci_low=0.4,
        ci_high=0.6,
        n_labels=50,
    )
    assert rep.var_hat == pytest.approx(0.2**2 / 50)
    assert rep.width == pytest.approx(0.2)
    assert rep.covers(0.45) and not rep.covers(0.7)
