"""Running Gaussian belief over a new model's latent factor.

One Bernoulli observation updates the belief in closed form: a rank-1
covariance downdate followed by a mean shift along the question factor.
The update linearizes the log-posterior at the prior mean, so it is exact
only to second order; posterior_nll_check measures the gap against a
Newton solve of the exact one-observation posterior.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from .errors import DimensionError, NumericalError

logger = logging.getLogger(__name__)

PROB_CLAMP = 1e-6  # predictions live in [PROB_CLAMP, 1 - PROB_CLAMP]
_SYM_TOL = 1e-10
REJITTER = 1e-10


@dataclass
class GaussianBelief:
    """Mean and covariance of the latent-factor belief."""

    mean: np.ndarray
    cov: np.ndarray

    def __post_init__(self):
        self.mean = np.asarray(self.mean, dtype=np.float64).reshape(-1)
        self.cov = np.asarray(self.cov, dtype=np.float64)
        k = self.mean.shape[0]
        if self.cov.shape != (k, k):
            raise DimensionError(f"covariance must be {k}x{k}")
        if np.abs(self.cov - self.cov.T).max() > _SYM_TOL:
            raise NumericalError("covariance is not symmetric")
        try:
            np.linalg.cholesky(self.cov)
        except np.linalg.LinAlgError:
            raise NumericalError("covariance is not positive definite") from None

    @property
    def k(self) -> int:
        return self.mean.shape[0]


@dataclass
class PredictionVector:
    """Clamped per-question correctness probabilities plus their sum."""

    values: np.ndarray
    sum_cache: float = None  # type: ignore[assignment]

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.sum_cache is None:
            self.sum_cache = float(self.values.sum())


def sigmoid(x):
    x = np.asarray(x, dtype=np.float64)
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def predict(b: GaussianBelief, V: np.ndarray) -> PredictionVector:
    """Per-question probabilities sigma(mean . v_j), clamped away from {0, 1}."""
    V = np.asarray(V, dtype=np.float64)
    if V.ndim != 2 or V.shape[1] != b.k:
        raise DimensionError(f"V must be (n_questions, {b.k})")
    p = sigmoid(V @ b.mean)
    np.clip(p, PROB_CLAMP, 1.0 - PROB_CLAMP, out=p)
    return PredictionVector(p)


def laplace_update(
    b: GaussianBelief, v: np.ndarray, z: int, rejitter: bool = False
) -> GaussianBelief:
    """Absorb one Bernoulli observation z for question factor v.

    Raises NumericalError if the downdated covariance fails a Cholesky
    check after symmetrization. With rejitter=True a failing covariance
    gets one diagonal bump of REJITTER before giving up (the policy used
    inside evaluation runs).
    """
    v = np.asarray(v, dtype=np.float64).reshape(-1)
    if v.shape[0] != b.k:
        raise DimensionError(f"v must have length {b.k}")
    p = float(sigmoid(float(b.mean @ v)))
    w = p * (1.0 - p)
    Sv = b.cov @ v
    denom = 1.0 + w * float(v @ Sv)
    cov_new = b.cov - (w / denom) * np.outer(Sv, Sv)
    cov_new = 0.5 * (cov_new + cov_new.T)
    if not _spd(cov_new):
        if rejitter:
            cov_new = cov_new + REJITTER * np.eye(b.k)
        if not rejitter or not _spd(cov_new):
            raise NumericalError("downdated covariance lost positive-definiteness")
    mean_new = b.mean + cov_new @ ((z - p) * v)
    return GaussianBelief(mean_new, cov_new)


def _spd(cov: np.ndarray) -> bool:
    try:
        np.linalg.cholesky(cov)
        return True
    except np.linalg.LinAlgError:
        return False


def posterior_nll_check(
    b_prior: GaussianBelief, v: np.ndarray, z: int, b_post: GaussianBelief
) -> float:
    """Max-abs gap between the updated mean and the exact posterior mode.

    Damped Newton on the one-observation log-posterior, started at the
    prior mean, capped at 50 iterations. Diagnostic only; divergence is
    reported as NaN with a warning rather than raised.
    """
    v = np.asarray(v, dtype=np.float64).reshape(-1)
    prec = np.linalg.inv(b_prior.cov)
    u = b_prior.mean.copy()

    def neg_logpost_grad_hess(u_):
        s = float(sigmoid(float(u_ @ v)))
        g = -(z - s) * v + prec @ (u_ - b_prior.mean)
        h = s * (1.0 - s) * np.outer(v, v) + prec
        return g, h

    def neg_logpost(u_):
        x = float(u_ @ v)
        nll = max(x, 0.0) - x * z + np.log1p(np.exp(-abs(x)))
        d = u_ - b_prior.mean
        return nll + 0.5 * float(d @ prec @ d)

    f = neg_logpost(u)
    for _ in range(50):
        g, h = neg_logpost_grad_hess(u)
        step = np.linalg.solve(h, g)
        if float(np.abs(step).max()) < 1e-12:
            break
        t = 1.0
        while t > 1e-8:
            cand = u - t * step
            fc = neg_logpost(cand)
            if fc <= f + 1e-15:
                u, f = cand, fc
                break
            t *= 0.5
        else:
            logger.warning("posterior check: Newton line search stalled")
            return float("nan")
        if not np.isfinite(f):
            logger.warning("posterior check: Newton diverged")
            return float("nan")
    return float(np.abs(b_post.mean - u).max())


def save_belief(b: GaussianBelief, path) -> None:
    """Snapshot to CSV: first line the mean, then one line per covariance row."""
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(",".join(repr(float(x)) for x in b.mean) + "\n")
        for row in b.cov:
            fh.write(",".join(repr(float(x)) for x in row) + "\n")


def load_belief(path) -> GaussianBelief:
    with open(path, encoding="utf-8") as fh:
        rows = [[float(t) for t in ln.strip().split(",")] for ln in fh if ln.strip()]
    return GaussianBelief(np.asarray(rows[0]), np.asarray(rows[1:]))
