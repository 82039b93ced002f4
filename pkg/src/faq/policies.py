"""Per-round sampling distributions and stream labeling plans.

Two scores drive question selection for a new model: an exploitation score
sqrt(p(1-p)) targeting the variance-minimizing draw, and an exploration
score measuring how much labeling a question would shrink the posterior
variance of the bank-mean accuracy. A schedule mixes and tempers them,
then a tau-uniform floor keeps every question selectable.

Stream baselines instead walk questions in native order and label item t
with probability pi_t built from historical difficulty means.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from .belief import GaussianBelief, PredictionVector, sigmoid
from .errors import DimensionError
from .history import DifficultyVector

logger = logging.getLogger(__name__)

WITH_REPLACEMENT = "with_replacement"
WITHOUT_REPLACEMENT = "without_replacement"

BERNOULLI = "bernoulli"
NEYMAN = "neyman"
MINRULE = "minrule"

_SCORE_FLOOR = 1e-300  # guards log() of denormal mixture weights


@dataclass
class PolicyConfig:
    """Hybrid-policy hyperparameters plus the query budget."""

    rho: float = 0.5
    gamma: float = 0.25
    beta0: float = 1.0
    tau: float = 0.25
    n_b: int = 1
    replacement_mode: str = WITH_REPLACEMENT

    def __post_init__(self):
        # rho/gamma = 0 are degenerate-schedule conventions: alpha_t = 0 and
        # beta_t = beta0 for all t. tau = 1 is the fully uniform policy.
        if not 0.0 <= self.rho <= 1.0 or not 0.0 <= self.gamma <= 1.0:
            raise ValueError("rho and gamma must lie in [0, 1]")
        if not 0.0 < self.beta0 <= 1.0:
            raise ValueError("beta0 must lie in (0, 1]")
        if not 0.0 <= self.tau <= 1.0:
            raise ValueError("tau must lie in [0, 1]")
        if self.n_b < 1:
            raise ValueError("n_b must be at least 1")
        if self.replacement_mode not in (WITH_REPLACEMENT, WITHOUT_REPLACEMENT):
            raise ValueError(f"unknown replacement mode {self.replacement_mode!r}")


@dataclass
class SamplingDistribution:
    """Selection probabilities for one round."""

    probs: np.ndarray
    t: int | None = None
    uniform_fallback: bool = False


def oracle_score(p_hat: PredictionVector) -> np.ndarray:
    """Exploitation score sqrt(p(1-p)) per question."""
    p = p_hat.values
    return np.sqrt(p * (1.0 - p))


def active_learning_score(b: GaussianBelief, V: np.ndarray) -> np.ndarray:
    """Approximate reduction of the bank-mean posterior variance per question.

    O(n_questions * k^2): uses the precomputed gradient direction and the
    diagonal quadratic forms only, never an n_questions^2 object. Weights
    come from the raw (unclamped) sigmoid so saturated questions score 0.
    """
    V = np.asarray(V, dtype=np.float64)
    if V.ndim != 2 or V.shape[1] != b.k:
        raise DimensionError(f"V must be (n_questions, {b.k})")
    p = sigmoid(V @ b.mean)
    w = p * (1.0 - p)
    g = (w[:, None] * V).sum(axis=0) / V.shape[0]
    Sg = b.cov @ g
    a = V @ Sg
    quad = np.einsum("ij,ij->i", V @ b.cov, V)
    return w * a * a / (1.0 + w * quad)


def schedule(t: int, cfg: PolicyConfig) -> tuple[float, float]:
    """Mixing weight alpha_t and tempering exponent beta_t at round t (1-based)."""
    alpha = 0.0 if cfg.rho == 0.0 else max(0.0, 1.0 - t / (cfg.rho * cfg.n_b))
    beta = cfg.beta0 if cfg.gamma == 0.0 else cfg.beta0 * min(1.0, t / (cfg.gamma * cfg.n_b))
    return alpha, beta


def _normalize_or_zero(x: np.ndarray) -> np.ndarray:
    s = float(x.sum())
    if s <= 0.0:
        return np.zeros_like(x)
    return x / s


def hybrid_policy(
    s_o: np.ndarray,
    s_a: np.ndarray,
    alpha_t: float,
    beta_t: float,
    tau: float,
    queried=None,
) -> SamplingDistribution:
    """Combine, temper, and tau-mix the two scores into selection probabilities.

    A score vector that is identically zero contributes nothing to the
    mixture; if both are zero the round falls back to uniform (flagged).
    With a boolean ``queried`` mask, previously drawn questions are zeroed
    out of the tempered vector and the tau floor spreads over the remaining
    questions only (the ad-hoc without-replacement variant).
    """
    s_o = np.asarray(s_o, dtype=np.float64)
    s_a = np.asarray(s_a, dtype=np.float64)
    if (s_o < 0).any() or (s_a < 0).any():
        raise ValueError("scores must be nonnegative")
    n = s_o.shape[0]
    mix = (1.0 - alpha_t) * _normalize_or_zero(s_o) + alpha_t * _normalize_or_zero(s_a)

    fallback = False
    if float(mix.sum()) <= 0.0:
        fallback = True
        logger.debug("hybrid policy: degenerate all-zero scores, using uniform")
        h_cat = np.ones(n)
    elif beta_t == 0.0:
        h_cat = np.ones(n)
    else:
        h_cat = np.zeros(n)
        pos = mix > 0.0
        h_cat[pos] = np.exp(beta_t * np.log(np.maximum(mix[pos], _SCORE_FLOOR)))
    nh = h_cat / h_cat.sum()

    if queried is None:
        probs = tau / n + (1.0 - tau) * nh
        return SamplingDistribution(probs, uniform_fallback=fallback)

    queried = np.asarray(queried, dtype=bool)
    remaining = ~queried
    n_rem = int(remaining.sum())
    if n_rem == 0:
        raise ValueError("no unqueried questions remain")
    nh = nh.copy()
    nh[queried] = 0.0
    s = float(nh.sum())
    if s <= 0.0:
        fallback = True
        nh = remaining / n_rem
    else:
        nh /= s
    probs = np.where(remaining, tau / n_rem, 0.0) + (1.0 - tau) * nh
    return SamplingDistribution(probs, uniform_fallback=fallback)


def stream_label_probs(
    p_bar: DifficultyVector, rule: str, n_b: int, tau: float
) -> np.ndarray:
    """Per-item labeling probabilities for a stream walk, summing to n_b.

    Bernoulli is the flat plan n_b/N. Neyman and min-rule score items by
    historical difficulty, normalize, tau-mix with uniform, scale to the
    budget, and water-fill any probabilities past 1 back onto the rest.
    """
    p = np.asarray(p_bar.values, dtype=np.float64)
    n = p.shape[0]
    if n_b > n:
        raise ValueError(f"n_b={n_b} exceeds the number of questions {n}")
    if rule == BERNOULLI:
        return np.full(n, n_b / n)
    if rule == NEYMAN:
        raw = np.sqrt(p * (1.0 - p))
    elif rule == MINRULE:
        raw = np.minimum(p, 1.0 - p)
    else:
        raise ValueError(f"unknown labeling rule {rule!r}")
    if float(raw.sum()) <= 0.0:
        # all difficulties saturated at 0/1: no signal, flat scores
        raw = np.ones(n)
    mixed = tau / n + (1.0 - tau) * (raw / raw.sum())
    return _waterfill(mixed, n_b)


def _waterfill(weights: np.ndarray, total: float) -> np.ndarray:
    """Scale weights to sum to ``total`` with every entry capped at 1."""
    n = weights.shape[0]
    pi = total * weights / weights.sum()
    capped = np.zeros(n, dtype=bool)
    while True:
        over = (pi > 1.0) & ~capped
        if not over.any():
            return pi
        capped |= over
        pi[capped] = 1.0
        remaining = total - float(capped.sum())
        mass = float(weights[~capped].sum())
        if remaining <= 0.0 or mass <= 0.0:
            pi[~capped] = 0.0
            return pi
        pi[~capped] = remaining * weights[~capped] / mass


def stabilized_prob(pi_t: float, e_remaining: float, labels_used: int, n_b: int) -> float:
    """Budget-stabilized labeling probability for the current item.

    Scales pi_t by remaining-budget over expected-remaining-labels and
    clips to [0, 1]; zero once the budget is spent or no plan mass remains.
    """
    remaining = n_b - labels_used
    if remaining <= 0 or e_remaining <= 0.0:
        return 0.0
    return min(1.0, max(0.0, pi_t * remaining / e_remaining))


def budget_stabilized(plan: np.ndarray, t: int, labels_used: int, n_b: int) -> float:
    """stabilized_prob for 0-based stream position t under an unadjusted plan."""
    plan = np.asarray(plan, dtype=np.float64)
    return stabilized_prob(float(plan[t]), float(plan[t:].sum()), labels_used, n_b)
