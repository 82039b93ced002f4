"""Evaluation runs and the estimators they feed.

One run of the adaptive querier yields a per-round trace; the point
estimate averages, per round, a plug-in prediction mean plus an
inverse-probability correction on the drawn question. The matching
variance estimate self-normalizes the correction terms, giving Wald
intervals whose coverage does not depend on prediction quality.

Stream baselines walk the bank in native order and label item t with a
(budget-stabilized) probability, yielding the standard augmented
inverse-probability estimator and its plug-in variance.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from statistics import NormalDist

import numpy as np

from . import backend, policies
from .belief import GaussianBelief
from .history import DifficultyVector

_NORMAL = NormalDist()


@dataclass
class QueryTrace:
    """Per-round log of one adaptive run; sufficient to recompute its report."""

    idx: np.ndarray  # drawn question indices
    q_sel: np.ndarray  # selection probability of the drawn question
    z: np.ndarray  # observed outcome
    p_sel: np.ndarray  # prediction for the drawn question, pre-update
    pred_sum: np.ndarray  # sum of all predictions, pre-update
    seed: int = 0
    replacement_mode: str = policies.WITH_REPLACEMENT

    @property
    def n_b(self) -> int:
        return self.idx.shape[0]


@dataclass
class EstimateReport:
    """Point estimate, uncertainty, and interval for one evaluation run.

    sigma_hat is scaled so the interval is theta_hat +- z * sigma_hat /
    sqrt(n_b) for every method; var_hat = sigma_hat^2 / n_b is the
    estimator variance used for effective-sample-size comparisons.
    """

    method: str
    n_b: int
    theta_hat: float
    sigma_hat: float
    ci_low: float
    ci_high: float
    n_labels: int
    n_eff: float = field(default=float("nan"))

    @property
    def var_hat(self) -> float:
        return self.sigma_hat**2 / self.n_b

    @property
    def width(self) -> float:
        return self.ci_high - self.ci_low

    def covers(self, theta: float) -> bool:
        return self.ci_low <= theta <= self.ci_high


def pai_estimate(trace: QueryTrace, n_questions: int) -> float:
    """Round-averaged plug-in mean plus inverse-probability correction."""
    if trace.n_b == 0:
        raise ValueError("trace is empty")
    zf = trace.z.astype(np.float64)
    phi = trace.pred_sum / n_questions + (zf - trace.p_sel) / (n_questions * trace.q_sel)
    return float(phi.mean())


def _pai_variance_terms(trace: QueryTrace, n_questions: int) -> tuple[float, float]:
    zf = trace.z.astype(np.float64)
    nq2 = float(n_questions) ** 2
    r = (zf - trace.p_sel) / trace.q_sel
    term1 = float((r * r).mean() / nq2)
    s = float((zf / trace.q_sel).mean())
    d = s - trace.pred_sum
    term2 = float((d * d).mean() / nq2)
    return term1, term2


def pai_variance(trace: QueryTrace, n_questions: int) -> float:
    """Self-normalized variance estimate, floored at 0.

    The two-term difference form can dip a hair below zero on
    near-perfect-prediction traces; the floor removes that artifact.
    """
    if trace.n_b == 0:
        raise ValueError("trace is empty")
    term1, term2 = _pai_variance_terms(trace, n_questions)
    return max(term1 - term2, 0.0)


def wald_ci(
    theta_hat: float, sigma_hat: float, n_b: int, alpha: float = 0.05
) -> tuple[float, float]:
    """Normal-quantile interval theta_hat +- z * sigma_hat / sqrt(n_b), clipped to [0, 1]."""
    if sigma_hat < 0:
        raise ValueError("sigma_hat must be nonnegative")
    if not 0.0 < alpha < 1.0:
        raise ValueError("alpha must lie in (0, 1)")
    half = _NORMAL.inv_cdf(1.0 - alpha / 2.0) * sigma_hat / math.sqrt(n_b)
    clip = lambda x: min(max(x, 0.0), 1.0)
    return clip(theta_hat - half), clip(theta_hat + half)


def report_from_trace(
    trace: QueryTrace, n_questions: int, alpha: float = 0.05, method: str = "faq"
) -> EstimateReport:
    """Assemble the estimate/CI report for a finished trace."""
    theta = pai_estimate(trace, n_questions)
    sigma = math.sqrt(pai_variance(trace, n_questions))
    low, high = wald_ci(theta, sigma, trace.n_b, alpha)
    return EstimateReport(
        method=method,
        n_b=trace.n_b,
        theta_hat=theta,
        sigma_hat=sigma,
        ci_low=low,
        ci_high=high,
        n_labels=trace.n_b,
    )


def pai_run(
    answers,
    V: np.ndarray,
    prior: GaussianBelief,
    cfg: policies.PolicyConfig,
    seed: int,
    alpha: float = 0.05,
    method: str = "faq",
) -> tuple[QueryTrace, EstimateReport]:
    """Run the adaptive querier for cfg.n_b rounds against an answer oracle."""
    answers = np.asarray(answers, dtype=np.int8)
    V = np.asarray(V, dtype=np.float64)
    if V.shape[0] != answers.shape[0]:
        raise ValueError("answers and V must have matching question counts")
    if cfg.n_b > answers.shape[0]:
        raise ValueError(f"budget {cfg.n_b} exceeds bank size {answers.shape[0]}")
    without = cfg.replacement_mode == policies.WITHOUT_REPLACEMENT
    idx, q_sel, z_sel, p_sel, pred_sum, _ = backend.kernels.run_pai(
        answers,
        V,
        prior.mean,
        prior.cov,
        cfg.rho,
        cfg.gamma,
        cfg.beta0,
        cfg.tau,
        cfg.n_b,
        seed,
        without,
    )
    trace = QueryTrace(
        idx=idx,
        q_sel=q_sel,
        z=z_sel,
        p_sel=p_sel,
        pred_sum=pred_sum,
        seed=seed,
        replacement_mode=cfg.replacement_mode,
    )
    return trace, report_from_trace(trace, answers.shape[0], alpha, method)


def _aipw_report(z, p_base, xi, pi_plan, n_b, used, alpha, method) -> EstimateReport:
    # pi_plan is the unadjusted labeling plan: the budget-stabilized draw
    # probabilities keep the plan's marginal inclusion rates, so dividing
    # by the plan keeps the estimator unbiased under the hard budget cap.
    zf = z.astype(np.float64)
    labeled = xi == 1
    assert not (labeled & (pi_plan <= 0.0)).any(), "labeled an item with zero probability"
    corr = np.zeros_like(zf)
    corr[labeled] = (zf[labeled] - p_base[labeled]) / pi_plan[labeled]
    theta = float((p_base + corr).mean())
    n_q = zf.shape[0]
    vterm = np.zeros_like(zf)
    vterm[labeled] = (
        (zf[labeled] - p_base[labeled]) ** 2
        * (1.0 - pi_plan[labeled])
        / pi_plan[labeled] ** 2
    )
    v_hat = float(vterm.sum()) / n_q**2
    sigma = math.sqrt(v_hat * n_b)
    low, high = wald_ci(theta, sigma, n_b, alpha)
    return EstimateReport(
        method=method,
        n_b=n_b,
        theta_hat=theta,
        sigma_hat=sigma,
        ci_low=low,
        ci_high=high,
        n_labels=int(used),
    )


def aipw_stream_run(
    answers,
    p_base,
    rule: str,
    cfg: policies.PolicyConfig,
    seed: int,
    alpha: float = 0.05,
    difficulty: DifficultyVector | None = None,
    method: str | None = None,
) -> EstimateReport:
    """Stream-order baseline: label item t w.p. pi_t, estimate by AIPW.

    p_base is None for the zero predictor or a DifficultyVector of
    historical means. Non-Bernoulli rules score items from ``difficulty``
    (defaulting to p_base when that is a DifficultyVector).
    """
    answers = np.asarray(answers, dtype=np.int8)
    n_q = answers.shape[0]
    if cfg.n_b > n_q:
        raise ValueError(f"budget {cfg.n_b} exceeds bank size {n_q}")
    if isinstance(p_base, DifficultyVector):
        base_vals = np.asarray(p_base.values, dtype=np.float64)
    elif p_base is None:
        base_vals = np.zeros(n_q)
    else:
        base_vals = np.asarray(p_base, dtype=np.float64)
    if base_vals.shape != (n_q,):
        raise ValueError("p_base length does not match the bank size")

    if rule == policies.BERNOULLI:
        plan = np.full(n_q, cfg.n_b / n_q)
    else:
        diff = difficulty if difficulty is not None else p_base
        if not isinstance(diff, DifficultyVector):
            raise ValueError(f"rule {rule!r} needs a DifficultyVector of means")
        plan = policies.stream_label_probs(diff, rule, cfg.n_b, cfg.tau)

    xi, _, used = backend.kernels.run_stream_fixed(answers, plan, cfg.n_b, seed)
    return _aipw_report(
        answers, base_vals, xi, plan, cfg.n_b, used, alpha, method or f"stream_{rule}"
    )


def traditional_ai_run(
    answers,
    V: np.ndarray,
    prior: GaussianBelief,
    tau: float,
    n_b: int,
    seed: int,
    alpha: float = 0.05,
    method: str = "traditional",
) -> EstimateReport:
    """Stream-order run using belief predictions for both labeling and AIPW.

    Item t is labeled w.p. proportional to min(p_t, 1-p_t) under the
    current belief (tau-mixed, scaled to the budget, stabilized); labeled
    outcomes update the belief. Predictions enter the estimator for every
    item, labels only where drawn.
    """
    answers = np.asarray(answers, dtype=np.int8)
    V = np.asarray(V, dtype=np.float64)
    n_q = answers.shape[0]
    if n_b > n_q:
        raise ValueError(f"budget {n_b} exceeds bank size {n_q}")
    xi, pi_plan, p_base, used = backend.kernels.run_stream_adaptive(
        answers, V, prior.mean, prior.cov, tau, n_b, seed
    )
    return _aipw_report(answers, p_base, xi, pi_plan, n_b, used, alpha, method)


def ess(v_method: float, v_uniform: float, n_b: int) -> float:
    """Uniform-sampling budget matching the method's estimator variance."""
    if v_uniform <= 0:
        raise ValueError("v_uniform must be positive")
    if v_method == 0:
        return float("inf")
    if v_method < 0:
        raise ValueError("v_method must be nonnegative")
    return (v_uniform / v_method) * n_b


def save_trace(trace: QueryTrace, path) -> None:
    """Write the trace CSV (columns t, I_t, q_sel, z, p_sel, pred_sum)."""
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("t,I_t,q_sel,z,p_sel,pred_sum\n")
        for t in range(trace.n_b):
            fh.write(
                f"{t + 1},{int(trace.idx[t])},{repr(float(trace.q_sel[t]))},"
                f"{int(trace.z[t])},{repr(float(trace.p_sel[t]))},"
                f"{repr(float(trace.pred_sum[t]))}\n"
            )


def load_trace(
    path, seed: int = 0, replacement_mode: str = policies.WITH_REPLACEMENT
) -> QueryTrace:
    with open(path, encoding="utf-8") as fh:
        lines = [ln.strip() for ln in fh if ln.strip()]
    if not lines or lines[0] != "t,I_t,q_sel,z,p_sel,pred_sum":
        raise ValueError(f"{path}: not a trace CSV")
    rows = [ln.split(",") for ln in lines[1:]]
    return QueryTrace(
        idx=np.array([int(r[1]) for r in rows], dtype=np.int64),
        q_sel=np.array([float(r[2]) for r in rows]),
        z=np.array([int(r[3]) for r in rows], dtype=np.int8),
        p_sel=np.array([float(r[4]) for r in rows]),
        pred_sum=np.array([float(r[5]) for r in rows]),
        seed=seed,
        replacement_mode=replacement_mode,
    )
