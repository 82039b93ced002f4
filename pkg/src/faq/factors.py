"""Low-rank logistic modeling of historical outcomes.

The probability that model i answers question j correctly is sigma(u_i.v_j)
with latent factors u_i, v_j learned from the observed entries only. The
fitted question factors double as question features during evaluation runs;
the fitted model factors seed the prior belief for a new model.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass

import numpy as np

from .belief import GaussianBelief
from .errors import DataError, DimensionError, FoldError, NumericalError
from .history import UNOBSERVED, OutcomeMatrix


@dataclass
class FactorSet:
    """Model factors U (n_models x k) and question factors V (n_questions x k)."""

    U: np.ndarray
    V: np.ndarray

    def __post_init__(self):
        self.U = np.asarray(self.U, dtype=np.float64)
        self.V = np.asarray(self.V, dtype=np.float64)
        if self.U.ndim != 2 or self.V.ndim != 2 or self.U.shape[1] != self.V.shape[1]:
            raise DimensionError("U and V must be 2-D with a shared latent dimension")
        if not (np.isfinite(self.U).all() and np.isfinite(self.V).all()):
            raise NumericalError("factor matrices contain non-finite values")

    @property
    def k(self) -> int:
        return self.U.shape[1]


@dataclass
class FitConfig:
    weight_decay: float = 1e-3
    learning_rate: float = 1e-2
    max_iters: int = 2000
    init_scale: float = 0.1
    seed: int = 0
    convergence_tol: float = 1e-6

    def __post_init__(self):
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be positive")
        if self.max_iters < 1:
            raise ValueError("max_iters must be at least 1")
        if self.weight_decay < 0:
            raise ValueError("weight_decay must be nonnegative")


def _check_dims(f: FactorSet, h: OutcomeMatrix):
    if f.U.shape[0] != h.n_models or f.V.shape[0] != h.n_questions:
        raise DimensionError(
            f"factors ({f.U.shape[0]}x{f.V.shape[0]}) do not match matrix "
            f"({h.n_models}x{h.n_questions})"
        )


def _bce_from_logits(logits: np.ndarray, labels: np.ndarray, mask: np.ndarray) -> float:
    # max(x,0) - x*y + log1p(exp(-|x|)) is the stable form of the
    # per-entry negative log-likelihood; never exponentiates a positive.
    per = np.maximum(logits, 0.0) - logits * labels + np.log1p(np.exp(-np.abs(logits)))
    return float(per[mask].sum())


def masked_nll(f: FactorSet, h: OutcomeMatrix) -> float:
    """Negative log-likelihood of the observed entries under the factor model."""
    _check_dims(f, h)
    mask = h.observed_mask
    if not mask.any():
        raise DataError("matrix has no observed entries")
    logits = f.U @ f.V.T
    labels = (h.entries == 1).astype(np.float64)
    return _bce_from_logits(logits, labels, mask)


def masked_nll_grad(f: FactorSet, h: OutcomeMatrix) -> tuple[np.ndarray, np.ndarray]:
    """Gradient of masked_nll with respect to (U, V)."""
    _check_dims(f, h)
    mask = h.observed_mask
    if not mask.any():
        raise DataError("matrix has no observed entries")
    logits = f.U @ f.V.T
    labels = (h.entries == 1).astype(np.float64)
    resid = np.where(mask, _sigmoid(logits) - labels, 0.0)
    return resid @ f.V, resid.T @ f.U


def _sigmoid(x: np.ndarray) -> np.ndarray:
    out = np.empty_like(x, dtype=np.float64)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def fit_traced(h: OutcomeMatrix, k: int, cfg: FitConfig) -> tuple[FactorSet, np.ndarray]:
    """Fit factors by AdamW on the masked objective; also return the loss trace.

    Full-batch gradients; decoupled weight decay is applied directly to the
    parameters each step. Stops early once the relative objective change
    over a 10-iteration window falls below cfg.convergence_tol.
    """
    if k < 1:
        raise ValueError("latent dimension k must be at least 1")
    mask = h.observed_mask
    if not mask.any():
        raise DataError("matrix has no observed entries")
    labels = (h.entries == 1).astype(np.float64)

    rng = np.random.default_rng(cfg.seed)
    U = rng.normal(0.0, cfg.init_scale, size=(h.n_models, k))
    V = rng.normal(0.0, cfg.init_scale, size=(h.n_questions, k))

    beta1, beta2, eps = 0.9, 0.999, 1e-8
    mom = [np.zeros_like(U), np.zeros_like(V)]
    sec = [np.zeros_like(U), np.zeros_like(V)]

    trace = np.empty(cfg.max_iters + 1)
    trace[0] = _bce_from_logits(U @ V.T, labels, mask)
    n_done = 0
    for it in range(1, cfg.max_iters + 1):
        logits = U @ V.T
        resid = np.where(mask, _sigmoid(logits) - labels, 0.0)
        grads = (resid @ V, resid.T @ U)
        bc1 = 1.0 - beta1**it
        bc2 = 1.0 - beta2**it
        for p, (param, grad) in enumerate(((U, grads[0]), (V, grads[1]))):
            mom[p] *= beta1
            mom[p] += (1.0 - beta1) * grad
            sec[p] *= beta2
            sec[p] += (1.0 - beta2) * grad * grad
            param *= 1.0 - cfg.learning_rate * cfg.weight_decay
            param -= cfg.learning_rate * (mom[p] / bc1) / (np.sqrt(sec[p] / bc2) + eps)
        loss = _bce_from_logits(U @ V.T, labels, mask)
        if not np.isfinite(loss):
            raise NumericalError(f"non-finite objective at iteration {it}")
        trace[it] = loss
        n_done = it
        if it >= 10:
            ref = trace[it - 10]
            if abs(ref - loss) / max(abs(ref), 1e-12) < cfg.convergence_tol:
                break
    return FactorSet(U, V), trace[: n_done + 1]


def fit(h: OutcomeMatrix, k: int, cfg: FitConfig) -> FactorSet:
    """Fit the logistic factor model (see fit_traced)."""
    return fit_traced(h, k, cfg)[0]


def cross_validate(
    h_train: OutcomeMatrix,
    k_grid,
    weight_decay_grid,
    folds: int,
    seed: int,
    cfg: FitConfig | None = None,
) -> tuple[int, float]:
    """Pick (k, weight_decay) by masked-holdout CV with the 1-SE rule.

    Each fold hides an independent 1/folds MCAR slice of the observed
    entries, fits on the rest, and scores 0.5-thresholded accuracy on the
    hidden slice. Among configurations whose mean accuracy is within one
    standard error of the best, the most regularized wins: smallest k
    first, then largest weight decay.
    """
    if folds < 2:
        raise ValueError("folds must be at least 2")
    k_grid = list(k_grid)
    weight_decay_grid = list(weight_decay_grid)
    if not k_grid or not weight_decay_grid:
        raise ValueError("grids must be nonempty")
    base = cfg or FitConfig()
    obs_idx = np.argwhere(h_train.observed_mask)
    if obs_idx.size == 0:
        raise DataError("matrix has no observed entries")

    fold_masks = []
    for f in range(folds):
        frng = np.random.default_rng(np.random.SeedSequence((seed, f)))
        hold = frng.random(len(obs_idx)) < 1.0 / folds
        if not hold.any():
            raise FoldError(f"fold {f} has zero holdout entries")
        fold_masks.append(hold)

    results = {}
    for k in k_grid:
        for wd in weight_decay_grid:
            accs = np.empty(folds)
            for f, hold in enumerate(fold_masks):
                held = obs_idx[hold]
                entries = h_train.entries.copy()
                entries[held[:, 0], held[:, 1]] = UNOBSERVED
                masked = OutcomeMatrix(
                    entries, list(h_train.model_ids), list(h_train.question_ids)
                )
                cfg_f = FitConfig(
                    weight_decay=wd,
                    learning_rate=base.learning_rate,
                    max_iters=base.max_iters,
                    init_scale=base.init_scale,
                    seed=int(np.random.default_rng((seed, f, 1)).integers(2**31)),
                    convergence_tol=base.convergence_tol,
                )
                fset = fit(masked, k, cfg_f)
                logits = np.einsum(
                    "ij,ij->i", fset.U[held[:, 0]], fset.V[held[:, 1]]
                )
                pred = logits > 0.0
                truth = h_train.entries[held[:, 0], held[:, 1]] == 1
                accs[f] = float(np.mean(pred == truth))
            results[(k, wd)] = (accs.mean(), accs.std(ddof=1) / np.sqrt(folds))

    best_key = max(results, key=lambda kk: results[kk][0])
    best_mean, best_se = results[best_key]
    threshold = best_mean - best_se
    admissible = [kk for kk, (m, _) in results.items() if m >= threshold]
    # most regularized: smallest k, then largest weight decay
    k_star, wd_star = min(admissible, key=lambda kk: (kk[0], -kk[1]))
    return k_star, wd_star


def empirical_prior(u_hist: np.ndarray) -> GaussianBelief:
    """Gaussian prior for a new model factor from historical model factors."""
    u_hist = np.asarray(u_hist, dtype=np.float64)
    if u_hist.ndim != 2 or u_hist.shape[0] < 1:
        raise DimensionError("need at least one historical factor row")
    mean = u_hist.mean(axis=0)
    k = u_hist.shape[1]
    if u_hist.shape[0] >= 2:
        cov = np.cov(u_hist, rowvar=False, ddof=1).reshape(k, k)
    else:
        cov = np.zeros((k, k))
    diag_mean = float(np.trace(cov)) / k
    jitter = 1e-6 * (diag_mean if diag_mean > 0 else 1.0)
    return GaussianBelief(mean, cov + jitter * np.eye(k))


def save_factors(f: FactorSet, out_dir, meta: dict | None = None) -> None:
    """Write U.csv, V.csv and a factors.json sidecar into out_dir."""
    os.makedirs(out_dir, exist_ok=True)
    _write_float_csv(os.path.join(out_dir, "U.csv"), f.U)
    _write_float_csv(os.path.join(out_dir, "V.csv"), f.V)
    sidecar = {"k": f.k}
    sidecar.update(meta or {})
    with open(os.path.join(out_dir, "factors.json"), "w", encoding="utf-8") as fh:
        json.dump(sidecar, fh, indent=2, sort_keys=True)
        fh.write("\n")


def load_factors(out_dir) -> tuple[FactorSet, dict]:
    U = _read_float_csv(os.path.join(out_dir, "U.csv"))
    V = _read_float_csv(os.path.join(out_dir, "V.csv"))
    with open(os.path.join(out_dir, "factors.json"), encoding="utf-8") as fh:
        meta = json.load(fh)
    return FactorSet(U, V), meta


def _write_float_csv(path, arr: np.ndarray) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for row in np.atleast_2d(arr):
            fh.write(",".join(repr(float(x)) for x in row) + "\n")


def _read_float_csv(path) -> np.ndarray:
    with open(path, encoding="utf-8") as fh:
        rows = [[float(t) for t in ln.strip().split(",")] for ln in fh if ln.strip()]
    return np.asarray(rows, dtype=np.float64)
