"""Command-line interface.

Subcommands:
  fit                fit the factor model on a history CSV
  tune-factors       pick (k, weight decay) by cross-validation, then fit
  tune-policy        grid-search policy hyperparameters on validation models
  run                execute an experiment sweep from a config file
  ablate-replacement compare with- vs without-replacement sampling
  audit              smoothed per-model coverage curves from a raw CSV
  report             aggregate a raw CSV into metrics (optionally post-hoc best)
  bench-kernels      time the compiled kernels against the python fallback
"""

from __future__ import annotations

import argparse
import math
import os
import sys
import time

import numpy as np

from . import backend, factors, harness, history
from .config import ExperimentConfig, parse_config
from .errors import FaqError


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (FaqError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="faq", description=__doc__)
    sub = p.add_subparsers(dest="command", required=True)

    f = sub.add_parser("fit", help="fit the factor model on a history CSV")
    f.add_argument("--history", required=True)
    f.add_argument("--k", type=int, required=True)
    f.add_argument("--weight-decay", type=float, default=1e-3)
    f.add_argument("--lr", type=float, default=1e-2)
    f.add_argument("--max-iters", type=int, default=2000)
    f.add_argument("--seed", type=int, default=0)
    f.add_argument("--out", required=True)
    f.set_defaults(func=cmd_fit)

    t = sub.add_parser("tune-factors", help="cross-validate (k, weight decay)")
    t.add_argument("--history", required=True)
    t.add_argument("--folds", type=int, default=5)
    t.add_argument("--k-grid", default="8,16,32,64")
    t.add_argument("--lambda-grid", default="1e1,1e0,1e-1,1e-2,1e-3,1e-4,1e-5")
    t.add_argument("--max-iters", type=int, default=2000)
    t.add_argument("--seed", type=int, default=0)
    t.add_argument("--out", required=True)
    t.set_defaults(func=cmd_tune_factors)

    tp = sub.add_parser("tune-policy", help="grid-search policy hyperparameters")
    tp.add_argument("--config", required=True)
    tp.add_argument("--out", required=True)
    tp.set_defaults(func=cmd_tune_policy)

    r = sub.add_parser("run", help="run an experiment sweep")
    r.add_argument("--config", required=True)
    r.add_argument("--out", required=True)
    r.set_defaults(func=cmd_run)

    ar = sub.add_parser(
        "ablate-replacement", help="with- vs without-replacement comparison"
    )
    ar.add_argument("--config", required=True)
    ar.add_argument("--out", required=True)
    ar.set_defaults(func=cmd_ablate)

    a = sub.add_parser("audit", help="smoothed per-model coverage")
    a.add_argument("raw", help="raw.csv from a sweep (or its directory)")
    a.add_argument("--group", choices=("accuracy", "release_ordinal"), default="accuracy")
    a.add_argument("--k", type=int, default=501)
    a.add_argument("--method", default="faq")
    a.add_argument("--budget-frac", type=float, default=None)
    a.add_argument("--out", required=True)
    a.set_defaults(func=cmd_audit)

    rep = sub.add_parser("report", help="aggregate raw results into metrics")
    rep.add_argument("raw", help="raw.csv from a sweep (or its directory)")
    rep.add_argument("--out", required=True)
    rep.add_argument(
        "--posthoc-best",
        action="store_true",
        help="append the best recorded baseline per budget",
    )
    rep.set_defaults(func=cmd_report)

    b = sub.add_parser("bench-kernels", help="compiled vs python backend timing")
    b.add_argument("--n-questions", type=int, default=2000)
    b.add_argument("--k", type=int, default=8)
    b.add_argument("--budget", type=int, default=200)
    b.add_argument("--repeats", type=int, default=20)
    b.add_argument("--out", default=None)
    b.set_defaults(func=cmd_bench)
    return p


def cmd_fit(args) -> int:
    h = history.load_matrix(args.history)
    cfg = factors.FitConfig(
        weight_decay=args.weight_decay,
        learning_rate=args.lr,
        max_iters=args.max_iters,
        seed=args.seed,
    )
    fset = factors.fit(h, args.k, cfg)
    final = factors.masked_nll(fset, h)
    factors.save_factors(
        fset,
        args.out,
        meta={
            "weight_decay": args.weight_decay,
            "seed": args.seed,
            "final_objective": final,
        },
    )
    print(f"fit k={args.k} weight_decay={args.weight_decay} nll={final:.4f} -> {args.out}")
    return 0


def cmd_tune_factors(args) -> int:
    h = history.load_matrix(args.history)
    k_grid = [int(x) for x in args.k_grid.split(",")]
    wd_grid = [float(x) for x in args.lambda_grid.split(",")]
    cfg = factors.FitConfig(max_iters=args.max_iters, seed=args.seed)
    k, wd = factors.cross_validate(h, k_grid, wd_grid, args.folds, args.seed, cfg)
    print(f"selected k={k} weight_decay={wd}")
    cfg.weight_decay = wd
    fset = factors.fit(h, k, cfg)
    final = factors.masked_nll(fset, h)
    factors.save_factors(
        fset,
        args.out,
        meta={"weight_decay": wd, "seed": args.seed, "final_objective": final},
    )
    print(f"fitted factors -> {args.out}")
    return 0


def cmd_tune_policy(args) -> int:
    cfg = parse_config(args.config)
    ctx, val_answers = _tuning_context(cfg)
    budgets = [max(1, round(f * ctx.V.shape[0])) for f in cfg.budget_fracs]
    grids = {
        "rho": cfg.rho_grid,
        "gamma": cfg.gamma_grid,
        "beta0": cfg.beta0_grid,
        "tau": cfg.tau_grid,
    }
    from .belief import GaussianBelief

    prior = GaussianBelief(ctx.prior_mean, ctx.prior_cov)
    best = harness.tune_policy(
        val_answers,
        ctx.V,
        prior,
        grids,
        budgets,
        seeds=cfg.tune_seeds,
        alpha=cfg.alpha,
        base_seed=cfg.run_seed,
    )
    os.makedirs(args.out, exist_ok=True)
    path = os.path.join(args.out, "tuned_policy.csv")
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("n_b,rho,gamma,beta0,tau,mean_width\n")
        for n_b in budgets:
            rho, gamma, beta0, tau, width = best[n_b]
            fh.write(f"{n_b},{rho},{gamma},{beta0},{tau},{repr(width)}\n")
    print(f"tuned {len(budgets)} budget(s) -> {path}")
    return 0


def _tuning_context(cfg: ExperimentConfig):
    """Context fitted on the train split; validation answers played by the oracle."""
    if cfg.source == "synthetic":
        bank = harness.generate_bank(
            harness.SyntheticBankSpec(
                n_questions=cfg.n_questions,
                n_hist=cfg.n_hist,
                n_test=cfg.n_test,
                k_true=cfg.k_true,
                logit_scale=cfg.logit_scale,
                seed=cfg.bank_seed,
            )
        )
        full_hist = bank.history
    else:
        full_hist = history.load_matrix(cfg.history_csv)
        if (full_hist.entries == history.UNOBSERVED).any():
            raise ValueError("tune-policy needs fully observed validation answers")
    degraded = (
        history.induce_missingness(full_hist, cfg.n_full_obs, cfg.p_obs, cfg.mask_seed)
        if cfg.p_obs < 1.0
        else full_hist
    )
    n_train = max(1, round((1.0 - cfg.val_frac) * degraded.n_models))
    train, val = history.split_rows(degraded, None, n_train)
    if val.n_models == 0:
        raise ValueError("validation split is empty; lower val_frac or add models")
    fit_cfg = factors.FitConfig(
        weight_decay=cfg.fit_weight_decay,
        learning_rate=cfg.fit_lr,
        max_iters=cfg.fit_max_iters,
        seed=cfg.fit_seed,
    )
    fset = factors.fit(train, cfg.fit_k, fit_cfg)
    prior = factors.empirical_prior(fset.U)
    diff = history.difficulty_means(train)
    # play oracle: validation answers come from the pre-missingness matrix
    by_id = {mid: i for i, mid in enumerate(full_hist.model_ids)}
    val_answers = np.stack([full_hist.entries[by_id[mid]] for mid in val.model_ids])
    ctx = harness.RunContext(
        answers=val_answers.astype(np.int8),
        thetas=val_answers.mean(axis=1),
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
    return ctx, val_answers


def cmd_run(args) -> int:
    cfg = parse_config(args.config)
    rows, metrics = harness.run_experiment(cfg, out_dir=args.out)
    failed = sum(1 for r in rows if r["error"])
    print(f"{len(rows)} runs ({failed} failed) -> {args.out}/raw.csv")
    for m in metrics:
        print(
            f"  {m['method']:<22} frac={m['budget_frac']:<6} coverage={m['coverage']:.3f} "
            f"width={m['width']:.4f} n_eff={m['n_eff']:.1f}"
        )
    return 0


def cmd_ablate(args) -> int:
    cfg = parse_config(args.config)
    cfg.methods = ["faq", "faq_wor", "uniform"]
    rows, metrics = harness.run_experiment(cfg, out_dir=args.out)
    path = os.path.join(args.out, "replacement_comparison.csv")
    by = {(m["method"], m["budget_frac"]): m for m in metrics}
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(
            "budget_frac,n_b,coverage_with,coverage_without,coverage_deficit,"
            "rmse_with,rmse_without,rmse_rel_diff\n"
        )
        for frac in sorted({m["budget_frac"] for m in metrics}):
            wr = by.get(("faq", frac))
            wo = by.get(("faq_wor", frac))
            if not wr or not wo:
                continue
            rel = (
                abs(wo["rmse"] - wr["rmse"]) / wr["rmse"] if wr["rmse"] > 0 else 0.0
            )
            fh.write(
                f"{frac},{wr['n_b']},{repr(wr['coverage'])},{repr(wo['coverage'])},"
                f"{repr(wr['coverage'] - wo['coverage'])},{repr(wr['rmse'])},"
                f"{repr(wo['rmse'])},{repr(rel)}\n"
            )
    print(f"replacement ablation -> {path}")
    return 0


def _raw_path(arg: str) -> str:
    return os.path.join(arg, "raw.csv") if os.path.isdir(arg) else arg


def cmd_audit(args) -> int:
    rows = harness.read_raw_csv(_raw_path(args.raw))
    fracs = sorted({r["budget_frac"] for r in rows if r["method"] == args.method})
    if not fracs:
        raise ValueError(f"no rows for method {args.method!r}")
    frac = args.budget_frac if args.budget_frac is not None else fracs[0]
    audit = harness.audit_rows(rows, args.method, frac, args.group, args.k)
    harness.write_audit_csv(audit, args.out)
    print(f"audit of {args.method} at budget {frac} ({len(audit)} models) -> {args.out}")
    return 0


def cmd_report(args) -> int:
    rows = harness.read_raw_csv(_raw_path(args.raw))
    metrics = harness.aggregate_metrics(rows)
    if args.posthoc_best:
        metrics = metrics + harness.posthoc_best_rows(metrics)
    harness.write_metrics_csv(metrics, args.out)
    print(f"{len(metrics)} metric rows -> {args.out}")
    return 0


def cmd_bench(args) -> int:
    from . import _kernels_py

    try:
        from . import _kernels
    except ImportError:
        _kernels = None
    bank = harness.generate_bank(
        harness.SyntheticBankSpec(
            n_questions=args.n_questions, n_hist=50, n_test=1, k_true=args.k, seed=1
        )
    )
    fset = bank.factors
    prior = factors.empirical_prior(fset.U)
    z = bank.test_answers[0]
    results = []
    impls = [("python", _kernels_py)] + ([("compiled", _kernels)] if _kernels else [])
    for name, mod in impls:
        t0 = time.perf_counter()
        for rep in range(args.repeats):
            mod.run_pai(
                z, fset.V, prior.mean, prior.cov, 0.5, 0.25, 1.0, 0.25,
                args.budget, 1000 + rep, False,
            )
        dt = (time.perf_counter() - t0) / args.repeats
        results.append((name, "run_pai", dt))
        t0 = time.perf_counter()
        for rep in range(args.repeats):
            mod.run_stream_adaptive(
                z, fset.V, prior.mean, prior.cov, 0.25, args.budget, 2000 + rep
            )
        dt = (time.perf_counter() - t0) / args.repeats
        results.append((name, "run_stream_adaptive", dt))
    print(f"active backend: {backend.BACKEND}")
    print(f"{'backend':<10} {'kernel':<22} {'sec/run':>12}")
    for name, kern, dt in results:
        print(f"{name:<10} {kern:<22} {dt:>12.6f}")
    by_kernel = {}
    for name, kern, dt in results:
        by_kernel.setdefault(kern, {})[name] = dt
    for kern, d in by_kernel.items():
        if "compiled" in d and "python" in d:
            print(f"speedup {kern}: {d['python'] / d['compiled']:.1f}x")
    if args.out:
        with open(args.out, "w", encoding="utf-8") as fh:
            fh.write("backend,kernel,sec_per_run\n")
            for name, kern, dt in results:
                fh.write(f"{name},{kern},{repr(dt)}\n")
    if _kernels is None:
        print("compiled backend unavailable; showed python fallback only")
    return 0


if __name__ == "__main__":
    sys.exit(main())
