"""Model-selection criteria and external-label cluster purity.

LOO follows the importance-sampling estimator over posterior draws, with
Pareto-smoothed weights by default: the largest M = min(0.2 T, 3 sqrt(T))
ratios are replaced by expected order statistics of a generalized Pareto
distribution fitted to the exceedances (Zhang-Stephens profile estimator),
then truncated at the raw maximum. ``method="raw"`` bypasses the smoothing
while still reporting the tail-shape diagnostic.
"""

from __future__ import annotations

from collections import Counter
from dataclasses import dataclass

import numpy as np

from .errors import ChainTooShort, ConfigError, DomainError, LengthMismatch
from .model import (
    MixtureParams,
    MoeParams,
    log_component_weights,
    model_dimension,
)
from .numcore import SpdMatrix, log_sum_exp_rows

KHAT_THRESHOLD = 0.7


def bic(loglik_hat, K, p, q, family, n):
    """-2 loglik + D_K log n with the family's free-parameter count."""
    return -2.0 * float(loglik_hat) + model_dimension(K, p, q, family) * float(np.log(n))


def assignment_entropy(r):
    """Total entropy -sum_ik r_ik log r_ik with the 0 log 0 := 0 convention."""
    r = np.asarray(r, dtype=float)
    with np.errstate(divide="ignore", invalid="ignore"):
        terms = np.where(r > 0, r * np.log(r), 0.0)
    return -float(terms.sum())


def icl(bic_value, resp):
    """BIC plus twice the total assignment entropy (hard assignments add 0)."""
    r = resp.r if hasattr(resp, "r") else resp
    return float(bic_value) + 2.0 * assignment_entropy(r)


@dataclass
class PsisDiagnostics:
    """Per-observation Pareto tail-shape estimates and derived quantities."""

    khat: np.ndarray       # (n,)
    n_high: int            # count of khat > 0.7
    pointwise: np.ndarray  # (n,) elpd_i
    se: float

    def __post_init__(self):
        if not np.all(np.isfinite(self.khat)):
            raise DomainError("Pareto shape diagnostics must be finite")

    @property
    def reliable(self):
        return self.n_high == 0


def fit_generalized_pareto(x):
    """Zhang-Stephens profile estimate of (k, sigma) for exceedances x > 0."""
    x = np.sort(np.asarray(x, dtype=float))
    n = x.size
    m = 30 + int(np.sqrt(n))
    b = 1.0 - np.sqrt(m / (np.arange(1, m + 1) - 0.5))
    b = b / (3.0 * x[(n - 1) // 4]) + 1.0 / x[-1]
    k = np.mean(np.log1p(-b[:, None] * x), axis=1)
    profile = n * (np.log(-b / k) - k - 1.0)
    with np.errstate(over="ignore"):  # dominated candidates underflow to weight 0
        weights = 1.0 / np.exp(profile - profile[:, None]).sum(axis=1)
    b_post = float(np.sum(b * weights) / np.sum(weights))
    k_post = float(np.mean(np.log1p(-b_post * x)))
    sigma = -k_post / b_post
    k_reg = (n * k_post + 5.0) / (n + 10.0)  # shrink toward 0.5, 10 pseudo-obs
    return k_reg, sigma


def _gpd_quantile(u, k, sigma):
    if abs(k) < 1e-12:
        return -sigma * np.log1p(-u)
    return sigma / k * (np.power(1.0 - u, -k) - 1.0)


def smooth_log_ratios(log_ratios):
    """Pareto-smooth one observation's log importance ratios.

    Returns (log-weights shifted so max = 0, khat). Weights above the tail
    cutoff are replaced by GPD expected order statistics and truncated at the
    raw maximum; a tail with no variation is left untouched with khat = -1.
    """
    lr = np.asarray(log_ratios, dtype=float)
    t = lr.size
    lw = lr - lr.max()
    m = int(min(0.2 * t, 3.0 * np.sqrt(t)))
    if m < 5:
        return lw, -1.0
    order = np.argsort(lw)
    tail_idx = order[-m:]
    w = np.exp(lw)
    cutoff = w[order[-m - 1]]
    exceed = w[tail_idx] - cutoff
    if exceed[-1] - exceed[0] < 1e-12 or exceed[-1] <= 1e-12:
        return lw, -1.0
    khat, sigma = fit_generalized_pareto(exceed[exceed > 0] if np.any(exceed <= 0) else exceed)
    if not np.isfinite(khat) or not np.isfinite(sigma) or sigma <= 0:
        return lw, 5.0  # fit failed; flag as unreliable, keep raw weights
    qs = _gpd_quantile((np.arange(1, m + 1) - 0.5) / m, khat, sigma)
    smoothed = np.minimum(cutoff + qs, w.max())
    out = w.copy()
    out[tail_idx] = smoothed  # tail_idx ascending in w, qs ascending
    with np.errstate(divide="ignore"):
        return np.log(out), float(khat)


def _params_at_draw(chain, t):
    sigma = [SpdMatrix(chain.sigma[t, k]) for k in range(chain.K)]
    if chain.family == "mixture":
        pi = chain.pi[t]
        return MixtureParams(K=chain.K, pi=pi / pi.sum(), nu=chain.nu[t], sigma=sigma)
    return MoeParams(K=chain.K, beta=chain.beta[t], nu=chain.nu[t], sigma=sigma)


def pointwise_logdensity(data, chain):
    """n-by-T matrix of log p(S_i | Theta^(t)) over kept draws."""
    t_draws = chain.n_draws
    out = np.empty((data.n, t_draws))
    for t in range(t_draws):
        lw = log_component_weights(data, _params_at_draw(chain, t))
        out[:, t] = log_sum_exp_rows(lw)
    return out


def elpd_loo(data, chain, method="psis"):
    """Expected log pointwise predictive density by importance-sampling LOO.

    Ratios for observation i are 1 / p(S_i | Theta^(t)); with ``psis`` the
    tail is smoothed before the self-normalized estimate
    elpd_i = log sum_t w_t p(S_i | Theta^(t)) - log sum_t w_t.
    Returns (elpd, PsisDiagnostics); khat > 0.7 raises no error, it is only
    flagged in the diagnostics.
    """
    if method not in ("psis", "raw"):
        raise ConfigError(f"unknown LOO method {method!r}")
    if chain.n_draws < 100:
        raise ChainTooShort(f"need >= 100 kept draws, got {chain.n_draws}")
    logp = pointwise_logdensity(data, chain)
    n = data.n
    pointwise = np.empty(n)
    khat = np.empty(n)
    for i in range(n):
        raw_lw = -logp[i]
        smoothed_lw, k_i = smooth_log_ratios(raw_lw)
        lw = smoothed_lw if method == "psis" else raw_lw - raw_lw.max()
        denom = log_sum_exp_rows(lw[None, :])[0]
        numer = log_sum_exp_rows((lw + logp[i])[None, :])[0]
        pointwise[i] = numer - denom
        khat[i] = k_i
    se = float(np.sqrt(n * np.var(pointwise, ddof=1))) if n > 1 else 0.0
    diag = PsisDiagnostics(
        khat=khat,
        n_high=int(np.sum(khat > KHAT_THRESHOLD)),
        pointwise=pointwise,
        se=se,
    )
    return float(pointwise.sum()), diag


@dataclass
class CriterionReport:
    """Per-K criterion table with the chosen K under the smallest-optimizer
    rule and a modal combined recommendation."""

    ks: list
    table: dict      # criterion name -> list of values aligned with ks
    se: dict         # criterion name -> list of standard errors (or None)
    chosen: dict     # criterion name -> chosen K
    recommended: int


_MAXIMIZE = {"elpd"}


def select_k(ks, table, se=None):
    """Choose K per criterion: smallest argmin (BIC/ICL) or argmax (elpd).

    The combined recommendation is the modal per-criterion choice, breaking
    ties toward the smallest K.
    """
    ks = [int(k) for k in ks]
    if not ks or ks != list(range(ks[0], ks[0] + len(ks))):
        raise ConfigError("select_k requires a contiguous K range")
    chosen = {}
    for crit, values in table.items():
        vals = np.asarray(values, dtype=float)
        if vals.size != len(ks):
            raise LengthMismatch(f"criterion {crit} has {vals.size} values for {len(ks)} Ks")
        opt = np.nanmax(vals) if crit in _MAXIMIZE else np.nanmin(vals)
        idx = int(np.flatnonzero(vals == opt)[0])  # smallest K on plateaus
        chosen[crit] = ks[idx]
    counts = Counter(chosen.values())
    top = max(counts.values())
    recommended = min(k for k, c in counts.items() if c == top)
    return CriterionReport(
        ks=ks,
        table={c: [float(v) for v in vals] for c, vals in table.items()},
        se={c: list(v) for c, v in (se or {}).items()},
        chosen=chosen,
        recommended=recommended,
    )


def cluster_purity(assignments, labels):
    """Fraction of items whose cluster's majority external class they share:
    (1/n) sum_k max_c |{i : cluster(i) = k and class(i) = c}|."""
    assignments = list(assignments)
    labels = list(labels)
    if len(assignments) != len(labels):
        raise LengthMismatch(
            f"{len(assignments)} assignments vs {len(labels)} external labels"
        )
    per_cluster = {}
    for a, c in zip(assignments, labels):
        per_cluster.setdefault(a, Counter())[c] += 1
    total = sum(max(counter.values()) for counter in per_cluster.values())
    return total / len(assignments)
