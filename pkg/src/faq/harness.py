"""Synthetic banks, experiment orchestration, aggregation, and audits.

A sweep is a work queue of independent (method, budget, model, seed)
tasks over a shared read-only bank; results merge into one raw CSV and a
metrics CSV. Task seeds derive from the tuple itself, so any degree of
parallelism (FAQ_THREADS) leaves the outputs byte-identical.
"""

from __future__ import annotations

import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass

import numpy as np

from . import estimators, factors, history, policies
from ._rng import counter_uniform, derive_seed
from .belief import GaussianBelief, sigmoid
from .config import ExperimentConfig, write_config
from .errors import DataError
from .estimators import EstimateReport, QueryTrace, report_from_trace
from .history import DifficultyVector, OutcomeMatrix

METHODS = {
    "faq": 1,
    "faq_wor": 2,
    "uniform": 3,
    "bernoulli": 4,
    "neyman": 5,
    "minrule": 6,
    "traditional": 7,
}
BASELINE_METHODS = ("uniform", "bernoulli", "neyman", "minrule")

RAW_COLUMNS = [
    "method",
    "budget_frac",
    "n_b",
    "model",
    "seed",
    "theta_true",
    "theta_hat",
    "sigma_hat",
    "ci_low",
    "ci_high",
    "covered",
    "n_labels",
    "var_hat",
    "n_eff",
    "error",
]

METRIC_COLUMNS = [
    "method",
    "budget_frac",
    "n_b",
    "n_runs",
    "n_failed",
    "coverage",
    "coverage_se",
    "width",
    "width_se",
    "rmse",
    "rmse_se",
    "mean_var",
    "n_eff",
    "n_eff_se",
]


@dataclass
class SyntheticBankSpec:
    """Planted low-rank world used by the simulation harness."""

    n_questions: int = 500
    n_hist: int = 300
    n_test: int = 50
    k_true: int = 4
    logit_scale: float = 2.0
    seed: int = 0

    def __post_init__(self):
        if min(self.n_questions, self.n_hist, self.n_test, self.k_true) < 1:
            raise ValueError("all counts must be at least 1")
        if self.logit_scale <= 0:
            raise ValueError("logit_scale must be positive")


@dataclass
class SyntheticBank:
    history: OutcomeMatrix  # fully observed
    test_answers: np.ndarray  # (n_test, n_questions)
    true_thetas: np.ndarray
    factors: factors.FactorSet  # planted historical factors
    test_factors: np.ndarray  # planted test-model factors


def generate_bank(spec: SyntheticBankSpec) -> SyntheticBank:
    """Draw a planted factor world and freeze every outcome once.

    Factor entries are N(0, s^2) with s chosen so the logits u.v have
    standard deviation spec.logit_scale.
    """
    rng = np.random.default_rng(spec.seed)
    s = math.sqrt(spec.logit_scale / math.sqrt(spec.k_true))
    n_rows = spec.n_hist + spec.n_test
    U = rng.normal(0.0, s, (n_rows, spec.k_true))
    V = rng.normal(0.0, s, (spec.n_questions, spec.k_true))
    probs = sigmoid(U @ V.T)
    Z = (rng.random((n_rows, spec.n_questions)) < probs).astype(np.int8)
    hist = OutcomeMatrix(
        Z[: spec.n_hist],
        model_ids=[f"hist{i:04d}" for i in range(spec.n_hist)],
        release_ordinals=np.arange(spec.n_hist),
    )
    test = Z[spec.n_hist :]
    return SyntheticBank(
        history=hist,
        test_answers=test,
        true_thetas=test.mean(axis=1),
        factors=factors.FactorSet(U[: spec.n_hist], V),
        test_factors=U[spec.n_hist :],
    )


def constant_prediction_run(
    answers, c: float, tau: float, n_b: int, seed: int, alpha: float = 0.05
) -> EstimateReport:
    """Evaluation run with predictions pinned to a constant.

    Equal scores collapse the hybrid policy to exactly uniform sampling,
    so this isolates the estimator's model-free behavior.
    """
    answers = np.asarray(answers, dtype=np.int8)
    n = answers.shape[0]
    idx = np.empty(n_b, dtype=np.int64)
    for t in range(1, n_b + 1):
        idx[t - 1] = min(int(counter_uniform(seed, t) * n), n - 1)
    trace = QueryTrace(
        idx=idx,
        q_sel=np.full(n_b, 1.0 / n),
        z=answers[idx],
        p_sel=np.full(n_b, float(c)),
        pred_sum=np.full(n_b, n * float(c)),
        seed=seed,
    )
    return report_from_trace(trace, n, alpha, method="constant")


@dataclass
class RunContext:
    """Read-only data shared by every task of a sweep."""

    answers: np.ndarray  # (n_models, n_questions)
    thetas: np.ndarray
    V: np.ndarray
    prior_mean: np.ndarray
    prior_cov: np.ndarray
    difficulty: np.ndarray
    difficulty_imputed: np.ndarray
    alpha: float
    rho: float
    gamma: float
    beta0: float
    tau: float


_CTX: RunContext | None = None


def _init_worker(ctx: RunContext):
    global _CTX
    _CTX = ctx


def _execute_task(task):
    method, budget_frac, n_b, model_idx, seed_idx, run_seed = task
    ctx = _CTX
    seed = derive_seed(run_seed, METHODS[method], n_b, model_idx, seed_idx)
    answers = ctx.answers[model_idx]
    theta = float(ctx.thetas[model_idx])
    row = {
        "method": method,
        "budget_frac": budget_frac,
        "n_b": n_b,
        "model": model_idx,
        "seed": seed_idx,
        "theta_true": theta,
        "error": "",
    }
    try:
        rep = _dispatch(method, ctx, answers, n_b, seed)
        row.update(
            theta_hat=rep.theta_hat,
            sigma_hat=rep.sigma_hat,
            ci_low=rep.ci_low,
            ci_high=rep.ci_high,
            covered=int(rep.covers(theta)),
            n_labels=rep.n_labels,
            var_hat=rep.var_hat,
            n_eff=float("nan"),
        )
    except Exception as exc:  # failed runs are recorded, not fatal
        row.update(
            theta_hat=float("nan"),
            sigma_hat=float("nan"),
            ci_low=float("nan"),
            ci_high=float("nan"),
            covered=0,
            n_labels=0,
            var_hat=float("nan"),
            n_eff=float("nan"),
            error=f"{type(exc).__name__}: {exc}",
        )
    return row


def _dispatch(method, ctx: RunContext, answers, n_b, seed) -> EstimateReport:
    prior = GaussianBelief(ctx.prior_mean.copy(), ctx.prior_cov.copy())
    diff = DifficultyVector(ctx.difficulty, ctx.difficulty_imputed)
    if method in ("faq", "faq_wor"):
        mode = (
            policies.WITHOUT_REPLACEMENT if method == "faq_wor" else policies.WITH_REPLACEMENT
        )
        cfg = policies.PolicyConfig(
            rho=ctx.rho,
            gamma=ctx.gamma,
            beta0=ctx.beta0,
            tau=ctx.tau,
            n_b=n_b,
            replacement_mode=mode,
        )
        _, rep = estimators.pai_run(
            answers, ctx.V, prior, cfg, seed, ctx.alpha, method=method
        )
        return rep
    if method == "uniform":
        cfg = policies.PolicyConfig(tau=ctx.tau, n_b=n_b)
        return estimators.aipw_stream_run(
            answers, None, policies.BERNOULLI, cfg, seed, ctx.alpha, method=method
        )
    if method in ("bernoulli", "neyman", "minrule"):
        rule = {
            "bernoulli": policies.BERNOULLI,
            "neyman": policies.NEYMAN,
            "minrule": policies.MINRULE,
        }[method]
        cfg = policies.PolicyConfig(tau=ctx.tau, n_b=n_b)
        return estimators.aipw_stream_run(
            answers, diff, rule, cfg, seed, ctx.alpha, difficulty=diff, method=method
        )
    if method == "traditional":
        return estimators.traditional_ai_run(
            answers, ctx.V, prior, ctx.tau, n_b, seed, ctx.alpha, method=method
        )
    raise ValueError(f"unknown method {method!r}")


def prepare_context(cfg: ExperimentConfig) -> tuple[RunContext, dict]:
    """Build the shared bank/fit context for a sweep; returns (ctx, info)."""
    if cfg.source == "synthetic":
        bank = generate_bank(
            SyntheticBankSpec(
                n_questions=cfg.n_questions,
                n_hist=cfg.n_hist,
                n_test=cfg.n_test,
                k_true=cfg.k_true,
                logit_scale=cfg.logit_scale,
                seed=cfg.bank_seed,
            )
        )
        hist_full = bank.history
        answers = bank.test_answers
        thetas = bank.true_thetas
    else:
        hist_full = history.load_matrix(cfg.history_csv)
        test = history.load_matrix(cfg.answers_csv)
        if (test.entries == history.UNOBSERVED).any():
            raise DataError("test answer matrix must be fully observed")
        answers = test.entries
        thetas = answers.mean(axis=1)
    degraded = (
        history.induce_missingness(hist_full, cfg.n_full_obs, cfg.p_obs, cfg.mask_seed)
        if cfg.p_obs < 1.0
        else hist_full
    )
    k, wd = cfg.fit_k, cfg.fit_weight_decay
    fit_cfg = factors.FitConfig(
        weight_decay=wd,
        learning_rate=cfg.fit_lr,
        max_iters=cfg.fit_max_iters,
        seed=cfg.fit_seed,
    )
    if cfg.cv:
        k, wd = factors.cross_validate(
            degraded, cfg.k_grid, cfg.lambda_grid, cfg.folds, cfg.cv_seed, fit_cfg
        )
        fit_cfg.weight_decay = wd
    fset = factors.fit(degraded, k, fit_cfg)
    prior = factors.empirical_prior(fset.U)
    diff = history.difficulty_means(degraded)
    if cfg.n_models_eval > 0:
        answers = answers[: cfg.n_models_eval]
        thetas = thetas[: cfg.n_models_eval]
    ctx = RunContext(
        answers=np.ascontiguousarray(answers, dtype=np.int8),
        thetas=np.asarray(thetas, dtype=np.float64),
        V=np.ascontiguousarray(fset.V),
        prior_mean=prior.mean,
        prior_cov=prior.cov,
        difficulty=diff.values,
        difficulty_imputed=diff.imputed,
        alpha=cfg.alpha,
        rho=cfg.rho,
        gamma=cfg.gamma,
        beta0=cfg.beta0,
        tau=cfg.tau,
    )
    info = {"k": k, "weight_decay": wd, "n_hist": degraded.n_models}
    return ctx, info


def _thread_count() -> int:
    raw = os.environ.get("FAQ_THREADS", "1").strip()
    try:
        return max(1, int(raw))
    except ValueError:
        return 1


def run_experiment(cfg: ExperimentConfig, out_dir=None):
    """Execute the full sweep; returns (raw_rows, metrics_rows).

    With out_dir set, writes raw.csv, metrics.csv, and the resolved
    config. Two invocations with one config produce byte-identical files
    regardless of FAQ_THREADS.
    """
    for m in cfg.methods:
        if m not in METHODS:
            raise ValueError(f"unknown method {m!r}; known: {sorted(METHODS)}")
    ctx, info = prepare_context(cfg)
    n_q = ctx.answers.shape[1]
    n_models = ctx.answers.shape[0]
    tasks = []
    for method in cfg.methods:
        for frac in cfg.budget_fracs:
            n_b = max(1, round(frac * n_q))
            for model_idx in range(n_models):
                for seed_idx in range(cfg.seeds):
                    tasks.append((method, frac, n_b, model_idx, seed_idx, cfg.run_seed))

    threads = _thread_count()
    if threads == 1:
        _init_worker(ctx)
        rows = [_execute_task(t) for t in tasks]
    else:
        with ProcessPoolExecutor(
            max_workers=threads, initializer=_init_worker, initargs=(ctx,)
        ) as pool:
            chunk = max(1, len(tasks) // (8 * threads))
            rows = list(pool.map(_execute_task, tasks, chunksize=chunk))

    _fill_n_eff(rows)
    metrics = aggregate_metrics(rows, method_order=cfg.methods)
    if out_dir is not None:
        os.makedirs(out_dir, exist_ok=True)
        write_raw_csv(rows, os.path.join(out_dir, "raw.csv"))
        write_metrics_csv(metrics, os.path.join(out_dir, "metrics.csv"))
        write_config(cfg, os.path.join(out_dir, "config.cfg"))
    return rows, metrics


def _fill_n_eff(rows) -> None:
    """Per-row effective sample size against mean uniform variance at the budget."""
    uniform_var = {}
    for frac in {r["budget_frac"] for r in rows}:
        vs = [
            r["var_hat"]
            for r in rows
            if r["method"] == "uniform"
            and r["budget_frac"] == frac
            and not r["error"]
            and math.isfinite(r["var_hat"])
        ]
        if vs:
            uniform_var[frac] = float(np.mean(vs))
    for r in rows:
        v_u = uniform_var.get(r["budget_frac"])
        if r["error"] or v_u is None or not math.isfinite(r["var_hat"]):
            continue
        r["n_eff"] = (
            float("inf") if r["var_hat"] == 0 else (v_u / r["var_hat"]) * r["n_b"]
        )


def _mean_se(x: np.ndarray) -> tuple[float, float]:
    m = float(x.mean())
    se = float(x.std(ddof=1) / math.sqrt(len(x))) if len(x) > 1 else 0.0
    return m, se


def aggregate_metrics(rows, method_order=None):
    """Collapse raw rows into per-(method, budget) summaries.

    The headline n_eff is the ratio of mean variances
    n_b * mean(var_uniform) / mean(var_method) with a delta-method MC-SE;
    the uniform method's own entry is exactly n_b by construction.
    """
    methods = method_order or sorted({r["method"] for r in rows})
    fracs = sorted({r["budget_frac"] for r in rows})
    uniform_stats = {}
    for frac in fracs:
        ok = [
            r
            for r in rows
            if r["method"] == "uniform" and r["budget_frac"] == frac and not r["error"]
        ]
        if ok:
            v = np.array([r["var_hat"] for r in ok])
            uniform_stats[frac] = _mean_se(v)
    out = []
    for method in methods:
        for frac in fracs:
            sel = [
                r for r in rows if r["method"] == method and r["budget_frac"] == frac
            ]
            if not sel:
                continue
            ok = [r for r in sel if not r["error"]]
            entry = {
                "method": method,
                "budget_frac": frac,
                "n_b": sel[0]["n_b"],
                "n_runs": len(ok),
                "n_failed": len(sel) - len(ok),
            }
            if ok:
                cov, cov_se = _mean_se(np.array([r["covered"] for r in ok], dtype=float))
                wid, wid_se = _mean_se(
                    np.array([r["ci_high"] - r["ci_low"] for r in ok])
                )
                err2 = np.array([(r["theta_hat"] - r["theta_true"]) ** 2 for r in ok])
                mse, mse_se = _mean_se(err2)
                rmse = math.sqrt(mse)
                rmse_se = mse_se / (2 * rmse) if rmse > 0 else 0.0
                v_m, v_m_se = _mean_se(np.array([r["var_hat"] for r in ok]))
                entry.update(
                    coverage=cov,
                    coverage_se=cov_se,
                    width=wid,
                    width_se=wid_se,
                    rmse=rmse,
                    rmse_se=rmse_se,
                    mean_var=v_m,
                )
                if frac in uniform_stats and v_m > 0:
                    v_u, v_u_se = uniform_stats[frac]
                    n_eff = entry["n_b"] * v_u / v_m
                    if method == "uniform":
                        n_eff_se = 0.0
                    else:
                        n_eff_se = n_eff * math.sqrt(
                            (v_u_se / v_u) ** 2 + (v_m_se / v_m) ** 2
                        )
                    entry.update(n_eff=n_eff, n_eff_se=n_eff_se)
                else:
                    entry.update(n_eff=float("nan"), n_eff_se=float("nan"))
            else:
                entry.update(
                    coverage=float("nan"),
                    coverage_se=float("nan"),
                    width=float("nan"),
                    width_se=float("nan"),
                    rmse=float("nan"),
                    rmse_se=float("nan"),
                    mean_var=float("nan"),
                    n_eff=float("nan"),
                    n_eff_se=float("nan"),
                )
            out.append(entry)
    return out


def posthoc_best_rows(metrics):
    """Best recorded baseline per budget (favoring the baselines, as reported)."""
    out = []
    for frac in sorted({m["budget_frac"] for m in metrics}):
        candidates = [
            m
            for m in metrics
            if m["budget_frac"] == frac
            and m["method"] in BASELINE_METHODS
            and m["n_runs"] > 0
            and math.isfinite(m.get("n_eff", float("nan")))
        ]
        if not candidates:
            continue
        best = max(candidates, key=lambda m: m["n_eff"])
        row = dict(best)
        row["method"] = f"posthoc_best({best['method']})"
        out.append(row)
    return out


def tune_policy(
    val_answers,
    V,
    prior: GaussianBelief,
    grids: dict,
    budgets,
    seeds: int = 5,
    alpha: float = 0.05,
    base_seed: int = 0,
):
    """Grid-search hybrid-policy hyperparameters to minimize mean CI width.

    grids maps 'rho'/'gamma'/'beta0'/'tau' to candidate lists; budgets are
    n_b values. Returns {n_b: (rho, gamma, beta0, tau, mean_width)} with
    ties broken toward larger tau.
    """
    val_answers = np.asarray(val_answers, dtype=np.int8)
    for key in ("rho", "gamma", "beta0", "tau"):
        if not grids.get(key):
            raise ValueError(f"empty grid for {key}")
    results = {}
    for n_b in budgets:
        best = None
        for rho in grids["rho"]:
            for gamma in grids["gamma"]:
                for beta0 in grids["beta0"]:
                    for tau in grids["tau"]:
                        cfg = policies.PolicyConfig(
                            rho=rho, gamma=gamma, beta0=beta0, tau=tau, n_b=n_b
                        )
                        widths = []
                        for mi in range(val_answers.shape[0]):
                            for s in range(seeds):
                                seed = derive_seed(base_seed, n_b, mi, s)
                                _, rep = estimators.pai_run(
                                    val_answers[mi], V, prior, cfg, seed, alpha
                                )
                                widths.append(rep.width)
                        key = (float(np.mean(widths)), -tau)
                        if best is None or key < best[0]:
                            best = (key, (rho, gamma, beta0, tau, key[0]))
        results[n_b] = best[1]
    return results


def smooth_coverage(group_values, coverages, k: int) -> tuple[np.ndarray, np.ndarray]:
    """Nearest-neighbor Gaussian smoothing of per-model coverage.

    For each model: take its k nearest neighbors in the grouping variable
    (ties broken by index), weight them by a Gaussian with bandwidth equal
    to the k-th neighbor distance, and return the weighted mean and SD.
    """
    g = np.asarray(group_values, dtype=np.float64)
    c = np.asarray(coverages, dtype=np.float64)
    n = g.shape[0]
    if k % 2 == 0:
        raise ValueError("window k must be odd")
    if k > n:
        raise ValueError(f"window k={k} exceeds the number of models {n}")
    means = np.empty(n)
    sds = np.empty(n)
    order_idx = np.arange(n)
    for i in range(n):
        d = np.abs(g - g[i])
        sel = np.lexsort((order_idx, d))[:k]
        h = d[sel].max()
        w = np.exp(-0.5 * (d[sel] / h) ** 2) if h > 0 else np.ones(k)
        wsum = w.sum()
        mu = float((w * c[sel]).sum() / wsum)
        var = float((w * (c[sel] - mu) ** 2).sum() / wsum)
        means[i] = mu
        sds[i] = math.sqrt(max(var, 0.0))
    return means, sds


def audit_rows(raw_rows, method: str, budget_frac: float, group_key: str, k: int):
    """Per-model smoothed coverage for one (method, budget) slice."""
    sel = [
        r
        for r in raw_rows
        if r["method"] == method and r["budget_frac"] == budget_frac and not r["error"]
    ]
    if not sel:
        raise ValueError(f"no runs recorded for {method} at budget {budget_frac}")
    models = sorted({r["model"] for r in sel})
    cov = []
    gval = []
    for m in models:
        mine = [r for r in sel if r["model"] == m]
        cov.append(float(np.mean([r["covered"] for r in mine])))
        if group_key == "accuracy":
            gval.append(mine[0]["theta_true"])
        elif group_key == "release_ordinal":
            gval.append(float(m))
        else:
            raise ValueError(f"unknown group key {group_key!r}")
    means, sds = smooth_coverage(np.array(gval), np.array(cov), k)
    return [
        {
            "model": m,
            "group_value": gval[i],
            "coverage": cov[i],
            "smooth_mean": means[i],
            "smooth_sd": sds[i],
        }
        for i, m in enumerate(models)
    ]


def _fmt(v) -> str:
    if isinstance(v, float):
        return repr(v)
    return str(v)


def write_raw_csv(rows, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(",".join(RAW_COLUMNS) + "\n")
        for r in rows:
            fh.write(",".join(_fmt(r[c]) for c in RAW_COLUMNS) + "\n")


def read_raw_csv(path):
    with open(path, encoding="utf-8") as fh:
        lines = [ln.rstrip("\n") for ln in fh]
    if not lines or lines[0] != ",".join(RAW_COLUMNS):
        raise ValueError(f"{path}: not a raw results CSV")
    rows = []
    for ln in lines[1:]:
        if not ln:
            continue
        # the trailing error column may itself contain commas
        parts = ln.split(",", len(RAW_COLUMNS) - 1)
        r = dict(zip(RAW_COLUMNS, parts))
        for key in ("budget_frac", "theta_true", "theta_hat", "sigma_hat", "ci_low",
                    "ci_high", "var_hat", "n_eff"):
            r[key] = float(r[key])
        for key in ("n_b", "model", "seed", "covered", "n_labels"):
            r[key] = int(r[key])
        rows.append(r)
    return rows


def write_metrics_csv(metrics, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(",".join(METRIC_COLUMNS) + "\n")
        for m in metrics:
            fh.write(",".join(_fmt(m[c]) for c in METRIC_COLUMNS) + "\n")


def write_audit_csv(rows, path) -> None:
    cols = ["model", "group_value", "coverage", "smooth_mean", "smooth_sd"]
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(",".join(cols) + "\n")
        for r in rows:
            fh.write(",".join(_fmt(r[c]) for c in cols) + "\n")
