"""Maximum-likelihood estimation by EM for both model families.

The degrees-of-freedom update deserves a note: the score solved here is the
derivative of the complete-data objective profiled over the scale matrix
(substituting Sigma_k = Sbar_k / nu), namely

    g(nu) = wavg_logdet_k - log|Sbar_k| + p log(nu) - p log(2) - psi_p(nu/2).

Published formulations of this update sometimes print a different equation
that is inconsistent with the closed-form Sigma update (wrong coefficient on
log nu and a spurious log n_k term); the form above is validated against a
finite-difference derivative oracle and a grid-search argmax oracle in the
test suite, and README documents the discrepancy.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ._kmeans import kmeans_labels
from .dataio import FitReport
from .errors import (
    AllRestartsFailed,
    DegenerateData,
    DomainError,
    EmMonotonicityError,
    EmptyComponent,
    MissingCovariates,
    RankDeficientDesign,
)
from .model import (
    MixtureParams,
    MoeParams,
    gating_log_probs,
    log_component_weights,
)
from .numcore import LOG_2, SpdMatrix, cholesky_logdet, multidigamma, multitrigamma, symmetrize
from .sampling import RngState

_RIDGE = 1e-8
_GRAD_TOL = 1e-8
_NEWTON_CAP = 100
_NU_HI = 1e6
_COLLAPSE_FRAC = 1e-8


@dataclass
class EmConfig:
    max_iter: int = 500
    tol_loglik: float = 1e-8   # relative change of the observed-data loglik
    restarts: int = 5
    nu_floor_pad: float = 1e-6

    def __post_init__(self):
        if min(self.max_iter, self.restarts) < 1 or min(self.tol_loglik, self.nu_floor_pad) <= 0:
            raise DomainError("EmConfig fields must be positive")


@dataclass
class Responsibilities:
    """Posterior membership probabilities with the per-component summaries
    every M-step consumes: n_k, M_k = sum_i r_ik S_i, and the weighted
    average log-determinant."""

    r: np.ndarray             # (n, K)
    n_k: np.ndarray           # (K,)
    m_k: np.ndarray           # (K, p, p)
    wavg_logdet: np.ndarray   # (K,)

    @property
    def n(self):
        return self.r.shape[0]

    @property
    def K(self):
        return self.r.shape[1]

    def sbar(self, k):
        return self.m_k[k] / self.n_k[k]


def responsibilities_from_matrix(data, r):
    r = np.asarray(r, dtype=float)
    n_k = r.sum(axis=0)
    p = data.p
    m_k = symmetrize_stack((r.T @ data.vec_stack).reshape(-1, p, p))
    with np.errstate(invalid="ignore", divide="ignore"):
        wavg = (r.T @ data.logdets) / n_k
    return Responsibilities(r=r, n_k=n_k, m_k=m_k, wavg_logdet=wavg)


def symmetrize_stack(stack):
    return 0.5 * (stack + np.transpose(stack, (0, 2, 1)))


def _e_step_full(data, params):
    lw = log_component_weights(data, params)
    m = lw.max(axis=1, keepdims=True)
    w = np.exp(lw - m)
    norm = w.sum(axis=1, keepdims=True)
    r = w / norm
    loglik = float((m[:, 0] + np.log(norm[:, 0])).sum())
    return responsibilities_from_matrix(data, r), loglik


def e_step(data, params):
    """Responsibilities r_ik by log-space normalization of the shared
    per-observation component log-weights."""
    return _e_step_full(data, params)[0]


def _gating_objective(x, r, beta):
    logp = gating_log_probs(x, beta)
    return float((r * logp).sum()) - _RIDGE * float((beta**2).sum())


def m_step_beta(resp, x, beta_init, max_iter=_NEWTON_CAP):
    """Weighted multinomial logistic fit of the gating coefficients.

    Damped Newton ascent on the exact gradient X^T (R - Pi) with Fisher
    blocks, warm-started at ``beta_init``; a 1e-8 ridge keeps separable
    configurations bounded. Returns (beta, converged); on hitting the
    iteration cap the best iterate seen is returned with converged=False.
    """
    x = np.asarray(x, dtype=float)
    r = resp.r if isinstance(resp, Responsibilities) else np.asarray(resp, float)
    n, q = x.shape
    K = r.shape[1]
    if K == 1:
        return np.zeros((q, 0)), True
    if np.linalg.matrix_rank(x) < q:
        raise RankDeficientDesign("gating design matrix is rank deficient")

    beta = np.asarray(beta_init, dtype=float).copy()
    km1 = K - 1
    best = (_gating_objective(x, r, beta), beta.copy())
    converged = False
    for _ in range(max_iter):
        probs = np.exp(gating_log_probs(x, beta))
        grad = x.T @ (r[:, :km1] - probs[:, :km1]) - 2.0 * _RIDGE * beta
        if np.max(np.abs(grad)) < _GRAD_TOL:
            converged = True
            break
        # Fisher information of the multinomial logit, block (k, l)
        h = np.empty((q * km1, q * km1))
        for k in range(km1):
            for l in range(k, km1):
                w = probs[:, k] * ((k == l) - probs[:, l])
                block = x.T @ (x * w[:, None])
                h[k * q:(k + 1) * q, l * q:(l + 1) * q] = block
                h[l * q:(l + 1) * q, k * q:(k + 1) * q] = block.T
        h[np.diag_indices_from(h)] += 2.0 * _RIDGE
        step = np.linalg.solve(h, grad.T.ravel()).reshape(km1, q).T

        obj = _gating_objective(x, r, beta)
        scale = 1.0
        for _ in range(30):
            cand = beta + scale * step
            if _gating_objective(x, r, cand) > obj:
                beta = cand
                break
            scale *= 0.5
        else:
            converged = np.max(np.abs(grad)) < 1e-6
            break
        cur = _gating_objective(x, r, beta)
        if cur > best[0]:
            best = (cur, beta.copy())
    if not converged:
        beta = best[1] if best[0] >= _gating_objective(x, r, beta) else beta
    return beta, converged


def m_step_sigma(resp, nu_new):
    """Closed-form scale update Sigma_k = M_k / (n_k nu_k).

    Raises EmptyComponent when a component carries numerically zero mass;
    the caller aborts that restart and relies on the restart loop.
    """
    nu_new = np.asarray(nu_new, dtype=float)
    out = []
    for k in range(resp.K):
        if resp.n_k[k] < _COLLAPSE_FRAC * resp.n:
            raise EmptyComponent(f"component {k} collapsed (n_k = {resp.n_k[k]:.3g})")
        out.append(SpdMatrix(symmetrize(resp.m_k[k] / (resp.n_k[k] * nu_new[k]))))
    return out


def _nu_score(nu, p, target):
    return target + p * np.log(nu) - p * LOG_2 - multidigamma(p, 0.5 * nu)


def m_step_nu(resp, k, nu_floor=None):
    """Root of the profile score for one component's degrees of freedom.

    Solves g(nu) = 0 on (nu_floor, 1e6) by safeguarded Newton (trigamma
    derivative) with bisection fallback. Returns (nu, at_boundary); when the
    score has the same sign at both bracket ends the boundary value is
    returned with at_boundary=True instead of raising.
    """
    p = resp.m_k.shape[1]
    if resp.n_k[k] < _COLLAPSE_FRAC * resp.n:
        raise EmptyComponent(f"component {k} collapsed (n_k = {resp.n_k[k]:.3g})")
    if nu_floor is None:
        nu_floor = p - 1 + 1e-6
    _, logdet_sbar, _ = cholesky_logdet(resp.sbar(k))
    target = float(resp.wavg_logdet[k]) - logdet_sbar

    lo, hi = nu_floor, _NU_HI
    g_lo = _nu_score(lo, p, target)
    g_hi = _nu_score(hi, p, target)
    if g_lo <= 0.0:
        return lo, True
    if g_hi >= 0.0:
        return hi, True

    # moment-style start: p log nu - p log 2 - psi_p(nu/2) ~ p(p+1)/(2 nu)
    nu = np.clip(-p * (p + 1) / (2.0 * target) if target < 0 else p + 1.0,
                 lo * (1 + 1e-9), hi)
    for _ in range(200):
        g = _nu_score(nu, p, target)
        if abs(g) < 1e-12:
            break
        if g > 0:
            lo = nu
        else:
            hi = nu
        dg = p / nu - 0.5 * multitrigamma(p, 0.5 * nu)
        if dg != 0.0:
            step = nu - g / dg
        else:
            step = np.nan
        nu_next = step if lo < step < hi else 0.5 * (lo + hi)
        if abs(nu_next - nu) < 1e-14 * nu:
            nu = nu_next
            break
        nu = nu_next
    return float(nu), False


def _init_responsibilities(data, K, rng):
    labels = kmeans_labels(data.vec_stack, K, rng)
    r = np.full((data.n, K), 0.1 / K)
    r[np.arange(data.n), labels] += 0.9
    return responsibilities_from_matrix(data, r)


def _m_step(data, resp, family, beta_prev, nu_floor):
    warnings = []
    if family == "moe":
        beta, bconv = m_step_beta(resp, data.covariates, beta_prev)
        if not bconv:
            warnings.append("gating update hit iteration cap")
    else:
        beta = None
    nu = np.empty(resp.K)
    for k in range(resp.K):
        nu[k], clamped = m_step_nu(resp, k, nu_floor=nu_floor)
        if clamped:
            warnings.append(f"nu_{k + 1} clamped to bracket boundary")
    sigma = m_step_sigma(resp, nu)
    if family == "moe":
        params = MoeParams(K=resp.K, beta=beta, nu=nu, sigma=sigma)
    else:
        pi = resp.n_k / resp.n
        params = MixtureParams(K=resp.K, pi=pi / pi.sum(), nu=nu, sigma=sigma)
    return params, warnings


def run_em(data, K, family, config=None, rng=None):
    """Best-of-restarts EM fit; the observed-data log-likelihood is checked
    to be non-decreasing (1e-8 slack) at every iteration of every restart.

    Initialization per restart: k-means labels hardened to responsibilities
    (0.9 hard + 0.1 uniform), nu = p + 2, closed-form Sigma, beta = 0.
    """
    config = config or EmConfig()
    rng = rng or RngState(0)
    if data.n < K:
        raise DegenerateData(f"n = {data.n} observations cannot support K = {K}")
    if family == "moe" and not data.has_covariates:
        raise MissingCovariates("MoE EM requires covariates (intercept column)")
    nu_floor = data.p - 1 + config.nu_floor_pad

    candidates = []
    failures = []
    for restart in range(config.restarts):
        sub = rng.derive(restart)
        try:
            resp = _init_responsibilities(data, K, sub)
            nu0 = np.full(K, float(data.p + 2))
            sigma0 = m_step_sigma(resp, nu0)
            if family == "moe":
                params = MoeParams(K=K, beta=np.zeros((data.q, K - 1)), nu=nu0,
                                   sigma=sigma0)
            else:
                pi0 = resp.n_k / resp.n
                params = MixtureParams(K=K, pi=pi0 / pi0.sum(), nu=nu0, sigma=sigma0)

            history = []
            warnings = []
            converged = False
            for _ in range(config.max_iter):
                resp, ll = _e_step_full(data, params)
                if history:
                    if ll < history[-1] - 1e-8:
                        raise EmMonotonicityError(
                            f"log-likelihood decreased: {history[-1]} -> {ll}"
                        )
                    if abs(ll - history[-1]) <= config.tol_loglik * max(1.0, abs(ll)):
                        history.append(ll)
                        converged = True
                        break
                history.append(ll)
                params, step_warnings = _m_step(data, resp, family, getattr(params, "beta", None), nu_floor)
                warnings.extend(step_warnings)
            candidates.append(
                (history[-1], restart, params, history, converged, sorted(set(warnings)))
            )
        except EmptyComponent as exc:
            failures.append(f"restart {restart}: {exc}")

    if not candidates:
        raise AllRestartsFailed("; ".join(failures))
    ll, restart, params, history, converged, warnings = max(candidates, key=lambda c: c[0])
    return FitReport(
        method="em-moe" if family == "moe" else "em",
        family=family,
        K=K,
        params=params,
        loglik=ll,
        loglik_history=history,
        restart_index=restart,
        converged=converged,
        warnings=list(warnings) + failures,
    )
