"""Gibbs-within-MH sampler for the Wishart mixture, Metropolis-within-Gibbs
for the mixture-of-experts variant, chain storage, and diagnostics.

Sweep order is fixed (labels, weights/gating, scales, degrees of freedom);
proposal scales are adapted by Robbins-Monro on the log scale during burn-in
only, so the retained segment is a fixed-kernel systematic-scan Gibbs chain.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np
from scipy.optimize import linear_sum_assignment

from ._kmeans import kmeans_labels
from ._labelsweep import collapsed_sweep
from .errors import ConfigError, DegenerateData, DimensionMismatch, TooShort
from .model import (
    Dataset,
    Hyperparams,
    MixtureParams,
    MoeParams,
    gating_log_probs,
    log_component_weights,
    wishart_logdensity_matrix,
)
from .numcore import LOG_2, SpdMatrix, log_multigamma, log_sum_exp_rows, symmetrize
from .sampling import RngState, draw_dirichlet, draw_inverse_wishart

_ADAPT_TARGET = 0.3
_LOG_SCALE_BOUNDS = (np.log(1e-3), np.log(10.0))


@dataclass
class SamplerConfig:
    """Run-length and kernel options shared by both samplers."""

    iterations: int
    burnin: int
    thin: int = 1
    seed: int = 0
    label_every: int = 10          # store z every label_every-th kept draw
    adapt: bool = True
    label_update: str = "collapsed"   # or "explicit"
    beta_update: str = "blocked"      # or "joint"

    def __post_init__(self):
        if self.iterations < 1 or not 0 <= self.burnin < self.iterations:
            raise ConfigError(
                f"need 0 <= burnin < iterations, got ({self.burnin}, {self.iterations})"
            )
        if self.thin < 1 or self.label_every < 1:
            raise ConfigError("thin and label_every must be >= 1")
        if self.label_update not in ("collapsed", "explicit"):
            raise ConfigError(f"unknown label_update {self.label_update!r}")
        if self.beta_update not in ("blocked", "joint"):
            raise ConfigError(f"unknown beta_update {self.beta_update!r}")

    @property
    def n_kept(self):
        return (self.iterations - self.burnin) // self.thin


@dataclass
class Chain:
    """Stored post-burn-in draws plus monitoring traces.

    Acceptance counts and proposal-scale traces are indexed by the sampler's
    raw component order (relabeling leaves them untouched; they diagnose the
    kernel, not the posterior).
    """

    family: str
    K: int
    p: int
    q: int
    config: SamplerConfig
    nu: np.ndarray                    # (T, K)
    sigma: np.ndarray                 # (T, K, p, p)
    pi: np.ndarray = None             # (T, K) for the mixture family
    beta: np.ndarray = None           # (T, q, K-1) for the moe family
    labels: np.ndarray = None         # (Tz, n)
    label_indices: np.ndarray = None  # kept-draw index of each stored z row
    loglik_trace: np.ndarray = None   # (iterations,) observed-data loglik
    kept_loglik: np.ndarray = None    # (T,)
    accept_nu: np.ndarray = None      # (K,) post-burn-in acceptance counts
    attempts_nu: int = 0
    accept_beta: np.ndarray = None    # (K-1,) post-burn-in counts
    attempts_beta: int = 0
    scale_nu_trace: np.ndarray = None    # (T, K) proposal scales at kept draws
    scale_beta_trace: np.ndarray = None  # (T, K-1)

    @property
    def n_draws(self):
        return self.nu.shape[0]

    def accept_rate_nu(self):
        return self.accept_nu / max(self.attempts_nu, 1)

    def accept_rate_beta(self):
        if self.accept_beta is None:
            return None
        return self.accept_beta / max(self.attempts_beta, 1)


def gibbs_step_labels(data, params, hyper, rng, logdens=None):
    """Collapsed label update: one sequential scan in index order.

    P(z_i = k | z_{-i}, S_i, nu, Sigma) propto f_W(S_i | nu_k, Sigma_k) *
    (alpha_k + n_{-i,k}); leave-one-out counts are maintained incrementally.
    Returns the new label vector.
    """
    if logdens is None:
        logdens = wishart_logdensity_matrix(data, params.nu, params.sigma)
    labels = np.asarray(params.labels, dtype=np.int64).copy()
    counts = np.bincount(labels, minlength=params.K).astype(np.int64)
    uniforms = rng.generator.uniform(size=data.n)
    collapsed_sweep(logdens, labels, counts, np.asarray(hyper.alpha, float), uniforms)
    return labels


def _categorical_rows(logweights, rng):
    """One categorical draw per row of a log-weight matrix (vectorized)."""
    m = logweights.max(axis=1, keepdims=True)
    w = np.exp(logweights - m)
    cdf = np.cumsum(w, axis=1)
    u = rng.generator.uniform(size=logweights.shape[0]) * cdf[:, -1]
    z = (cdf < u[:, None]).sum(axis=1)
    return np.minimum(z, logweights.shape[1] - 1).astype(np.int64)


def gibbs_step_weights(labels, hyper, rng):
    """Conjugate Dirichlet draw of the mixture weights given label counts."""
    counts = np.bincount(np.asarray(labels), minlength=hyper.K)
    return draw_dirichlet(rng, hyper.alpha + counts)


def gibbs_step_scales(data, labels, nu, hyper, rng):
    """Conjugate inverse-Wishart draws of every scale matrix.

    Posterior for component k: IW(nu0 + n_k nu_k, Psi0^{-1} + S_(k)) with
    S_(k) the sum of the member matrices; empty components draw from the
    prior IW(nu0, Psi0^{-1}).
    """
    labels = np.asarray(labels)
    K = len(nu)
    p = data.p
    out = []
    for k in range(K):
        mask = labels == k
        n_k = int(mask.sum())
        if n_k == 0:
            out.append(draw_inverse_wishart(rng, hyper.nu0, hyper.psi0_inv))
            continue
        s_k = symmetrize(data.vec_stack[mask].sum(axis=0).reshape(p, p))
        post_scale = SpdMatrix(hyper.psi0_inv.entries + s_k)
        out.append(draw_inverse_wishart(rng, hyper.nu0 + n_k * nu[k], post_scale))
    return out


def _nu_logpost(nu, p, n_k, l_k, sigma_logdet, hyper):
    # cluster log posterior in nu, trace term dropped (constant in nu)
    return (
        0.5 * (nu - p - 1) * l_k
        - n_k * (0.5 * nu * p * LOG_2 + 0.5 * nu * sigma_logdet
                 + log_multigamma(p, 0.5 * nu))
        + (hyper.a_nu - 1.0) * np.log(nu)
        - hyper.b_nu * nu
    )


def mh_step_nu(data_summaries, sigma_k, nu_k, hyper, rng, scale=None):
    """Log-scale random-walk MH update of one component's degrees of freedom.

    ``data_summaries`` is (n_k, S_(k), L_(k)); only n_k and L_(k) enter the
    acceptance ratio because the trace term does not depend on nu. The extra
    log-nu terms are the Jacobian of the log-scale proposal. Proposals at or
    below p - 1 are rejected without evaluating the target.
    """
    n_k, _, l_k = data_summaries
    p = sigma_k.dim
    if scale is None:
        scale = hyper.prop_scale_nu
    step = scale * rng.generator.normal()
    nu_star = float(np.exp(np.log(nu_k) + step))
    if nu_star <= p - 1:
        return nu_k, False
    sld = sigma_k.logdet
    log_ratio = (
        _nu_logpost(nu_star, p, n_k, l_k, sld, hyper) + np.log(nu_star)
        - _nu_logpost(nu_k, p, n_k, l_k, sld, hyper) - np.log(nu_k)
    )
    if np.log(rng.generator.uniform()) < log_ratio:
        return nu_star, True
    return nu_k, False


def _gating_loglik(x, beta, labels):
    logp = gating_log_probs(x, beta)
    return float(logp[np.arange(x.shape[0]), labels].sum())


def mh_step_beta(data, labels, beta, hyper, rng, scales=None, joint=False):
    """Random-walk MH update of the gating coefficients given the labels.

    Blocked mode updates each column k = 1..K-1 sequentially with its own
    accept/reject (prior ratio restricted to that block); joint mode perturbs
    all blocks at once with the summed prior delta and a single decision.
    The target is the conditional gating likelihood sum_i log pi_{i, z_i}
    plus the zero-mean Gaussian prior.
    """
    if not data.has_covariates:
        from .errors import MissingCovariates

        raise MissingCovariates("gating update requires covariates")
    x = data.covariates
    labels = np.asarray(labels)
    q, km1 = beta.shape
    if scales is None:
        scales = np.full(km1, hyper.prop_scale_beta)
    scales = np.asarray(scales, dtype=float)
    beta = beta.copy()
    cur_ll = _gating_loglik(x, beta, labels)
    inv_2s2 = 0.5 / hyper.sigma_beta2

    if joint:
        eps = rng.generator.normal(size=(q, km1)) * scales[None, :]
        prop = beta + eps
        prior_delta = -inv_2s2 * float((prop**2).sum() - (beta**2).sum())
        log_ratio = _gating_loglik(x, prop, labels) - cur_ll + prior_delta
        accepted = np.log(rng.generator.uniform()) < log_ratio
        flags = np.full(km1, bool(accepted))
        return (prop if accepted else beta), flags

    flags = np.zeros(km1, dtype=bool)
    for k in range(km1):
        eps = rng.generator.normal(size=q) * scales[k]
        prop = beta.copy()
        prop[:, k] = beta[:, k] + eps
        prior_delta = -inv_2s2 * float(prop[:, k] @ prop[:, k] - beta[:, k] @ beta[:, k])
        prop_ll = _gating_loglik(x, prop, labels)
        if np.log(rng.generator.uniform()) < prop_ll - cur_ll + prior_delta:
            beta = prop
            cur_ll = prop_ll
            flags[k] = True
    return beta, flags


def _init_components(data, K, rng):
    """k-means labels on vec(S_i); scales from cluster sample means / (p+2)."""
    labels = kmeans_labels(data.vec_stack, K, rng)
    p = data.p
    nu = np.full(K, float(p + 2))
    sigma = []
    for k in range(K):
        mask = labels == k
        if mask.any():
            mean_k = symmetrize(data.vec_stack[mask].mean(axis=0).reshape(p, p))
            sigma.append(SpdMatrix(mean_k / nu[k]))
        else:
            sigma.append(SpdMatrix(np.eye(p)))
    return labels, nu, sigma


def _rm_step(t):
    # Robbins-Monro gain; decays slowly enough to keep adapting over burn-in
    return float(t) ** -0.6


def _run_sampler(data, hyper, K, config, rng, family):
    if data.n < K:
        raise DegenerateData(f"n = {data.n} observations cannot support K = {K}")
    if hyper.K != K:
        raise ConfigError(f"hyperparameters specify K = {hyper.K}, requested {K}")
    if family == "moe":
        if not data.has_covariates:
            from .errors import MissingCovariates

            raise MissingCovariates("MoE sampler requires covariates with intercept")
        q = data.q
    else:
        q = data.q

    p = data.p
    n = data.n
    T = config.n_kept

    labels, nu, sigma = _init_components(data, K, rng)
    counts = np.bincount(labels, minlength=K)
    if family == "mixture":
        pi = counts / n
        beta = None
        log_mix = None
    else:
        pi = None
        beta = np.zeros((q, K - 1))
        log_mix = gating_log_probs(data.covariates, beta)

    # adaptive proposal scales, per component / per gating block
    log_scale_nu = np.full(K, np.log(hyper.prop_scale_nu))
    log_scale_beta = np.full(max(K - 1, 0), np.log(hyper.prop_scale_beta))

    nu_draws = np.empty((T, K))
    sigma_draws = np.empty((T, K, p, p))
    pi_draws = np.empty((T, K)) if family == "mixture" else None
    beta_draws = np.empty((T, q, K - 1)) if family == "moe" else None
    scale_nu_trace = np.empty((T, K))
    scale_beta_trace = np.empty((T, max(K - 1, 0))) if family == "moe" else None
    kept_loglik = np.empty(T)
    loglik_trace = np.empty(config.iterations)
    z_rows = []
    z_indices = []
    accept_nu = np.zeros(K)
    accept_beta = np.zeros(max(K - 1, 0))

    logdens = wishart_logdensity_matrix(data, nu, sigma)
    alpha = np.asarray(hyper.alpha, dtype=float)

    for t in range(1, config.iterations + 1):
        in_burnin = t <= config.burnin

        # Step 1: labels
        if family == "mixture" and config.label_update == "collapsed":
            uniforms = rng.generator.uniform(size=n)
            collapsed_sweep(logdens, labels, counts, alpha, uniforms)
        else:
            with np.errstate(divide="ignore"):
                lw = logdens + (np.log(pi)[None, :] if family == "mixture" else log_mix)
            labels = _categorical_rows(lw, rng)
            counts = np.bincount(labels, minlength=K)

        # Step 2: weights / gating coefficients
        if family == "mixture":
            pi = draw_dirichlet(rng, alpha + counts)
        else:
            beta, flags = mh_step_beta(
                data, labels, beta, hyper, rng,
                scales=np.exp(log_scale_beta),
                joint=(config.beta_update == "joint"),
            )
            if config.adapt and in_burnin:
                gain = _rm_step(t)
                log_scale_beta += gain * (flags.astype(float) - _ADAPT_TARGET)
                np.clip(log_scale_beta, *_LOG_SCALE_BOUNDS, out=log_scale_beta)
            if not in_burnin:
                accept_beta += flags
            log_mix = gating_log_probs(data.covariates, beta)

        # Step 3: scale matrices
        sigma = gibbs_step_scales(data, labels, nu, hyper, rng)

        # Step 4: degrees of freedom
        for k in range(K):
            mask = labels == k
            n_k = int(counts[k])
            l_k = float(data.logdets[mask].sum()) if n_k else 0.0
            nu_k, acc = mh_step_nu(
                (n_k, None, l_k), sigma[k], nu[k], hyper, rng,
                scale=float(np.exp(log_scale_nu[k])),
            )
            nu[k] = nu_k
            if config.adapt and in_burnin:
                gain = _rm_step(t)
                log_scale_nu[k] += gain * (float(acc) - _ADAPT_TARGET)
                log_scale_nu[k] = np.clip(log_scale_nu[k], *_LOG_SCALE_BOUNDS)
            if not in_burnin:
                accept_nu[k] += acc

        # refresh the density matrix once; it is reused by the next sweep
        logdens = wishart_logdensity_matrix(data, nu, sigma)
        with np.errstate(divide="ignore"):
            lw = logdens + (np.log(pi)[None, :] if family == "mixture" else log_mix)
        loglik_trace[t - 1] = float(log_sum_exp_rows(lw).sum())

        if not in_burnin and (t - config.burnin) % config.thin == 0:
            j = (t - config.burnin) // config.thin - 1
            nu_draws[j] = nu
            for k in range(K):
                sigma_draws[j, k] = sigma[k].entries
            if family == "mixture":
                pi_draws[j] = pi
            else:
                beta_draws[j] = beta
                scale_beta_trace[j] = np.exp(log_scale_beta)
            scale_nu_trace[j] = np.exp(log_scale_nu)
            kept_loglik[j] = loglik_trace[t - 1]
            if j % config.label_every == 0:
                z_rows.append(labels.copy())
                z_indices.append(j)

    return Chain(
        family=family,
        K=K,
        p=p,
        q=q,
        config=config,
        nu=nu_draws,
        sigma=sigma_draws,
        pi=pi_draws,
        beta=beta_draws,
        labels=np.array(z_rows, dtype=np.int64) if z_rows else None,
        label_indices=np.array(z_indices, dtype=np.int64) if z_indices else None,
        loglik_trace=loglik_trace,
        kept_loglik=kept_loglik,
        accept_nu=accept_nu,
        attempts_nu=config.iterations - config.burnin,
        accept_beta=accept_beta if family == "moe" else None,
        attempts_beta=(config.iterations - config.burnin) if family == "moe" else 0,
        scale_nu_trace=scale_nu_trace,
        scale_beta_trace=scale_beta_trace,
    )


def run_mixture_sampler(data, hyper, K, config, rng):
    """Fit the Wishart mixture by the collapsed-label Gibbs-within-MH sampler."""
    return _run_sampler(data, hyper, K, config, rng, family="mixture")


def run_moe_sampler(data, hyper, K, config, rng):
    """Fit the MoE-Wishart model by Metropolis-within-Gibbs."""
    return _run_sampler(data, hyper, K, config, rng, family="moe")


def ess(trace):
    """Effective sample size N / (1 + 2 sum rho_t).

    Autocorrelations are truncated by Geyer's initial positive monotone
    sequence on paired sums; the result is clamped to [1, N].
    """
    x = np.asarray(trace, dtype=float)
    n = x.size
    if n < 10:
        raise TooShort(f"need at least 10 points for ESS, got {n}")
    x = x - x.mean()
    if np.allclose(x, 0.0):
        return 1.0
    nfft = 1 << (2 * n - 1).bit_length()
    f = np.fft.rfft(x, nfft)
    acov = np.fft.irfft(f * np.conj(f), nfft)[:n].real / n
    rho = acov / acov[0]

    tau = -1.0
    prev = np.inf
    m = 0
    while 2 * m + 1 < n:
        gamma = rho[2 * m] + rho[2 * m + 1]
        if gamma <= 0:
            break
        gamma = min(gamma, prev)
        tau += 2.0 * gamma
        prev = gamma
        m += 1
    if tau <= 0:
        return float(n)
    return float(np.clip(n / tau, 1.0, n))


def _flat_param_traces(chain):
    """Named scalar traces of every stored parameter (CSV column order)."""
    cols = {}
    K, p = chain.K, chain.p
    if chain.pi is not None:
        for k in range(K):
            cols[f"pi_{k + 1}"] = chain.pi[:, k]
    if chain.beta is not None:
        for j in range(chain.q):
            for k in range(K - 1):
                cols[f"beta_{j + 1}_{k + 1}"] = chain.beta[:, j, k]
    for k in range(K):
        cols[f"nu_{k + 1}"] = chain.nu[:, k]
    for k in range(K):
        for i in range(p):
            for j in range(p):
                cols[f"sigma_{k + 1}_{i + 1}_{j + 1}"] = chain.sigma[:, k, i, j]
    return cols


def ess_report(chain):
    """Per-parameter ESS (nu, pi or beta, and the upper triangle of Sigma)."""
    report = {}
    for name, trace in _flat_param_traces(chain).items():
        if name.startswith("sigma_"):
            _, k, i, j = name.split("_")
            if int(i) > int(j):
                continue
        report[name] = ess(trace)
    return report


def relabel_chain(chain):
    """Align component labels across draws against the first kept draw.

    Every draw's components are permuted to minimize the total Frobenius
    distance between its scale matrices and the reference draw's (Hungarian
    assignment). Gating coefficients are re-referenced so the matched K-th
    class is again the zero baseline. No-op for K = 1.
    """
    if chain.K == 1 or chain.n_draws == 0:
        return chain
    K = chain.K
    ref = chain.sigma[0]
    nu = chain.nu.copy()
    sigma = chain.sigma.copy()
    pi = chain.pi.copy() if chain.pi is not None else None
    beta = chain.beta.copy() if chain.beta is not None else None
    labels = chain.labels.copy() if chain.labels is not None else None

    for t in range(chain.n_draws):
        cost = np.empty((K, K))
        for a in range(K):
            diff = chain.sigma[t] - ref[a][None, :, :]
            cost[:, a] = np.sqrt((diff**2).sum(axis=(1, 2)))
        row, col = linear_sum_assignment(cost)
        # draw component r=row goes to aligned slot col[r]
        perm = np.empty(K, dtype=np.int64)
        perm[col] = row
        if np.array_equal(perm, np.arange(K)):
            continue
        nu[t] = chain.nu[t, perm]
        sigma[t] = chain.sigma[t, perm]
        if pi is not None:
            pi[t] = chain.pi[t, perm]
        if beta is not None:
            full = np.concatenate(
                [chain.beta[t], np.zeros((chain.q, 1))], axis=1
            )[:, perm]
            beta[t] = (full - full[:, -1][:, None])[:, :-1]
        if labels is not None and chain.label_indices is not None:
            relmap = np.empty(K, dtype=np.int64)
            relmap[perm] = np.arange(K)
            sel = chain.label_indices == t
            if sel.any():
                labels[sel] = relmap[chain.labels[sel]]
    return replace(chain, nu=nu, sigma=sigma, pi=pi, beta=beta, labels=labels)


def posterior_means(chain):
    """Post-relabeling point estimates (call on an aligned chain)."""
    nu = chain.nu.mean(axis=0)
    sigma = [SpdMatrix(symmetrize(chain.sigma[:, k].mean(axis=0)))
             for k in range(chain.K)]
    if chain.family == "mixture":
        pi = chain.pi.mean(axis=0)
        pi = pi / pi.sum()
        return MixtureParams(K=chain.K, pi=pi, nu=nu, sigma=sigma)
    beta = chain.beta.mean(axis=0)
    return MoeParams(K=chain.K, beta=beta, nu=nu, sigma=sigma)


def chain_summary(chain):
    """Posterior means, 95% equal-tail intervals, acceptance rates, ESS."""
    traces = _flat_param_traces(chain)
    means = {name: float(np.mean(tr)) for name, tr in traces.items()}
    intervals = {
        name: [float(np.percentile(tr, 2.5)), float(np.percentile(tr, 97.5))]
        for name, tr in traces.items()
    }
    summary = {
        "family": chain.family,
        "K": chain.K,
        "p": chain.p,
        "q": chain.q,
        "config": {
            "iterations": chain.config.iterations,
            "burnin": chain.config.burnin,
            "thin": chain.config.thin,
            "seed": chain.config.seed,
        },
        "posterior_mean": means,
        "interval_95": intervals,
        "acceptance": {"nu": chain.accept_rate_nu().tolist()},
        "ess": ess_report(chain),
    }
    if chain.family == "moe":
        summary["acceptance"]["beta"] = chain.accept_rate_beta().tolist()
    return summary
