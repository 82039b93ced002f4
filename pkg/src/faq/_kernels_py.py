"""Pure-python evaluation loops: the reference backend.

faq._kernels reimplements these loops in C (via Cython) for speed;
faq.backend picks whichever is importable. Both backends draw from the
same counter-based generator, so a run replays identically across
backends: selected indices match exactly, floats to rounding error.
"""

from __future__ import annotations

import numpy as np

from . import policies
from ._rng import counter_uniform
from .belief import GaussianBelief, laplace_update, predict
from .errors import NumericalError

BACKEND_NAME = "python"


def _draw_index(probs: np.ndarray, u: float) -> int:
    cum = np.cumsum(probs)
    j = int(np.searchsorted(cum, u, side="right"))
    return min(j, probs.shape[0] - 1)


def run_pai(z, V, u0, S0, rho, gamma, beta0, tau, n_b, seed, without_replacement):
    """Budgeted adaptive-querying loop; returns per-round trace arrays.

    Returns (idx, q_sel, z_sel, p_sel, pred_sum, n_fallback).
    """
    z = np.asarray(z, dtype=np.int8)
    V = np.ascontiguousarray(V, dtype=np.float64)
    n = V.shape[0]
    belief = GaussianBelief(np.array(u0, dtype=np.float64), np.array(S0, dtype=np.float64))
    cfg = policies.PolicyConfig(rho=rho, gamma=gamma, beta0=beta0, tau=tau, n_b=n_b)

    idx = np.empty(n_b, dtype=np.int64)
    q_sel = np.empty(n_b)
    z_sel = np.empty(n_b, dtype=np.int8)
    p_sel = np.empty(n_b)
    pred_sum = np.empty(n_b)
    queried = np.zeros(n, dtype=bool) if without_replacement else None
    n_fallback = 0

    for t in range(1, n_b + 1):
        pv = predict(belief, V)
        s_o = policies.oracle_score(pv)
        s_a = policies.active_learning_score(belief, V)
        alpha_t, beta_t = policies.schedule(t, cfg)
        dist = policies.hybrid_policy(s_o, s_a, alpha_t, beta_t, tau, queried=queried)
        if dist.uniform_fallback:
            n_fallback += 1
        j = _draw_index(dist.probs, counter_uniform(seed, t))
        idx[t - 1] = j
        q_sel[t - 1] = dist.probs[j]
        z_sel[t - 1] = z[j]
        p_sel[t - 1] = pv.values[j]
        pred_sum[t - 1] = pv.sum_cache
        try:
            belief = laplace_update(belief, V[j], int(z[j]), rejitter=True)
        except NumericalError as exc:
            raise NumericalError(f"belief update failed at round {t}: {exc}") from exc
        if without_replacement:
            queried[j] = True
    return idx, q_sel, z_sel, p_sel, pred_sum, n_fallback


def run_stream_fixed(z, plan, n_b, seed):
    """Walk the stream labeling item t w.p. stabilized plan[t].

    Returns (xi, pi_adj, labels_used).
    """
    z = np.asarray(z, dtype=np.int8)
    plan = np.asarray(plan, dtype=np.float64)
    n = z.shape[0]
    suffix = np.cumsum(plan[::-1])[::-1]
    xi = np.zeros(n, dtype=np.int8)
    pi_adj = np.zeros(n)
    used = 0
    for t in range(n):
        pa = policies.stabilized_prob(float(plan[t]), float(suffix[t]), used, n_b)
        pi_adj[t] = pa
        if counter_uniform(seed, t + 1) < pa:
            xi[t] = 1
            used += 1
    return xi, pi_adj, used


def run_stream_adaptive(z, V, u0, S0, tau, n_b, seed):
    """Stream walk with belief-driven min-rule labeling probabilities.

    The full labeling plan is rebuilt from the current belief after every
    labeled item; skipped items leave it unchanged. Draws use the
    budget-stabilized probability; the returned pi_plan holds the
    unadjusted plan value at each position (the estimator's divisor).
    Returns (xi, pi_plan, p_base, labels_used).
    """
    z = np.asarray(z, dtype=np.int8)
    V = np.ascontiguousarray(V, dtype=np.float64)
    n = V.shape[0]
    belief = GaussianBelief(np.array(u0, dtype=np.float64), np.array(S0, dtype=np.float64))

    def make_plan(b):
        p = predict(b, V).values
        raw = np.minimum(p, 1.0 - p)
        mixed = tau / n + (1.0 - tau) * (raw / raw.sum())
        plan = policies._waterfill(mixed, n_b)
        return p, plan, np.cumsum(plan[::-1])[::-1]

    p, plan, suffix = make_plan(belief)
    xi = np.zeros(n, dtype=np.int8)
    pi_plan = np.zeros(n)
    p_base = np.zeros(n)
    used = 0
    for t in range(n):
        p_base[t] = p[t]
        pi_plan[t] = plan[t]
        pa = policies.stabilized_prob(float(plan[t]), float(suffix[t]), used, n_b)
        if counter_uniform(seed, t + 1) < pa:
            xi[t] = 1
            used += 1
            try:
                belief = laplace_update(belief, V[t], int(z[t]), rejitter=True)
            except NumericalError as exc:
                raise NumericalError(
                    f"belief update failed at stream position {t}: {exc}"
                ) from exc
            p, plan, suffix = make_plan(belief)
    return xi, pi_plan, p_base, used
