"""Model data containers, log-densities, gating, and the model dimension.

The n-by-K matrix of per-observation, per-component log-weights (mixing
log-weight plus Wishart log-density) is exposed as a single shared kernel,
:func:`log_component_weights`. The label sampler, the EM E-step, the ICL
entropy, and importance-sampling LOO all consume that kernel, so every
downstream quantity agrees bit-for-bit.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import cho_solve

from .errors import (
    DegenerateData,
    DimensionMismatch,
    DomainError,
    MissingCovariates,
    RankDeficientDesign,
)
from .numcore import (
    LOG_2,
    SpdMatrix,
    log_multigamma,
    log_sum_exp_rows,
    symmetrize,
    trace_prod_batch,
)


class Dataset:
    """n SPD observations of shared dimension p plus optional covariates.

    Caches the per-observation log-determinants and the n-by-p^2 row-major
    vec-stack once, since every sweep of every algorithm reuses them.
    The covariate matrix, when present, must carry an intercept first column
    and have full column rank.
    """

    def __init__(self, matrices, covariates=None, covariate_names=None):
        matrices = list(matrices)
        if not matrices:
            raise DegenerateData("dataset must contain at least one matrix")
        p = matrices[0].dim
        for i, s in enumerate(matrices):
            if s.dim != p:
                raise DimensionMismatch(
                    f"matrix {i} has dimension {s.dim}, expected {p}"
                )
        self.matrices = matrices
        self.n = len(matrices)
        self.p = p
        self.logdets = np.array([s.logdet for s in matrices])
        self.vec_stack = np.stack([s.entries.ravel() for s in matrices])

        if covariates is None:
            self.covariates = None
            self.covariate_names = None
        else:
            x = np.asarray(covariates, dtype=float)
            if x.ndim != 2 or x.shape[0] != self.n:
                raise DimensionMismatch(
                    f"covariates must be ({self.n}, q), got {x.shape}"
                )
            if not np.all(x[:, 0] == 1.0):
                raise MissingCovariates(
                    "covariate matrix must have an all-ones intercept first column"
                )
            if x.shape[1] > self.n or np.linalg.matrix_rank(x) < x.shape[1]:
                raise RankDeficientDesign(
                    "covariate matrix must have full column rank q <= n"
                )
            self.covariates = x
            if covariate_names is not None:
                covariate_names = list(covariate_names)
                if len(covariate_names) != x.shape[1]:
                    raise DimensionMismatch("one name per covariate column required")
            self.covariate_names = covariate_names

    @classmethod
    def from_entries(cls, entry_arrays, covariates=None, covariate_names=None,
                     allow_jitter=True):
        mats = [SpdMatrix(a, allow_jitter=allow_jitter) for a in entry_arrays]
        return cls(mats, covariates=covariates, covariate_names=covariate_names)

    @property
    def q(self):
        return 0 if self.covariates is None else self.covariates.shape[1]

    @property
    def has_covariates(self):
        return self.covariates is not None

    def with_intercept_only(self):
        """Copy of this dataset carrying just an intercept column."""
        return Dataset(
            self.matrices,
            covariates=np.ones((self.n, 1)),
            covariate_names=["intercept"],
        )


def _check_component_arrays(nu, sigma):
    nu = np.asarray(nu, dtype=float)
    if nu.ndim != 1 or len(sigma) != nu.size:
        raise DimensionMismatch("need one degrees-of-freedom value per scale matrix")
    p = sigma[0].dim
    for s in sigma:
        if s.dim != p:
            raise DimensionMismatch("scale matrices must share one dimension")
    if np.any(nu <= p - 1):
        raise DomainError(f"every nu must exceed p - 1 = {p - 1}")
    return nu, p


@dataclass
class MixtureParams:
    """Mixture state: weights, degrees of freedom, scales, optional labels."""

    K: int
    pi: np.ndarray
    nu: np.ndarray
    sigma: list
    labels: np.ndarray = None

    def __post_init__(self):
        self.pi = np.asarray(self.pi, dtype=float)
        if self.pi.shape != (self.K,) or np.any(self.pi < 0):
            raise DomainError("pi must be a nonnegative vector of length K")
        if abs(float(self.pi.sum()) - 1.0) > 1e-12:
            raise DomainError(f"pi must sum to 1 within 1e-12, got {self.pi.sum()!r}")
        self.nu, self._p = _check_component_arrays(self.nu, self.sigma)
        if len(self.sigma) != self.K:
            raise DimensionMismatch("need exactly K scale matrices")

    @property
    def p(self):
        return self._p


@dataclass
class MoeParams:
    """Mixture-of-experts state.

    ``beta`` is q-by-(K-1); the K-th gating class is the implicit zero
    baseline and is never stored, which enforces identifiability by
    representation.
    """

    K: int
    beta: np.ndarray
    nu: np.ndarray
    sigma: list
    labels: np.ndarray = None

    def __post_init__(self):
        self.beta = np.asarray(self.beta, dtype=float)
        if self.beta.ndim != 2 or self.beta.shape[1] != self.K - 1:
            raise DimensionMismatch(
                f"beta must be (q, K-1) = (q, {self.K - 1}), got {self.beta.shape}"
            )
        self.nu, self._p = _check_component_arrays(self.nu, self.sigma)
        if len(self.sigma) != self.K:
            raise DimensionMismatch("need exactly K scale matrices")

    @property
    def p(self):
        return self._p

    @property
    def q(self):
        return self.beta.shape[0]


@dataclass
class Hyperparams:
    """Prior and proposal hyperparameters shared by both samplers."""

    alpha: np.ndarray
    nu0: float
    psi0: SpdMatrix
    a_nu: float
    b_nu: float
    sigma_beta2: float = 100.0
    prop_scale_nu: float = 0.5
    prop_scale_beta: float = 0.5
    _psi0_inv: SpdMatrix = field(default=None, repr=False, compare=False)

    def __post_init__(self):
        self.alpha = np.asarray(self.alpha, dtype=float)
        p = self.psi0.dim
        positives = [self.nu0, self.a_nu, self.b_nu, self.sigma_beta2,
                     self.prop_scale_nu, self.prop_scale_beta]
        if np.any(self.alpha <= 0) or any(v <= 0 for v in positives):
            raise DomainError("all hyperparameters must be strictly positive")
        if not self.a_nu / self.b_nu > p - 1:
            raise DomainError(
                f"gamma prior mean a/b = {self.a_nu / self.b_nu} must exceed p-1 = {p - 1}"
            )

    @classmethod
    def defaults(cls, K, p):
        """Weakly informative defaults: symmetric alpha_0/K Dirichlet with
        alpha_0 = 1, nu0 = p + 2, Psi0 = I, gamma prior mean p + 2 on nu."""
        return cls(
            alpha=np.full(K, 1.0 / K),
            nu0=float(p + 2),
            psi0=SpdMatrix(np.eye(p)),
            a_nu=2.0,
            b_nu=2.0 / (p + 2.0),
        )

    @property
    def psi0_inv(self):
        if self._psi0_inv is None:
            self._psi0_inv = SpdMatrix(self.psi0.inv())
        return self._psi0_inv

    @property
    def K(self):
        return self.alpha.size


def log_wishart_density(s, nu, sigma):
    """Log-density of one SPD observation under a Wishart(nu, sigma).

    (nu-p-1)/2 log|S| - tr(sigma^{-1} S)/2 - nu*p/2 log 2
    - nu/2 log|sigma| - log Gamma_p(nu/2).
    """
    p = s.dim
    if sigma.dim != p:
        raise DimensionMismatch("observation and scale dimensions differ")
    if not nu > p - 1:
        raise DomainError(f"Wishart density requires nu > p - 1 = {p - 1}")
    tr = float(np.sum(sigma.inv() * s.entries))
    return (
        0.5 * (nu - p - 1) * s.logdet
        - 0.5 * tr
        - 0.5 * nu * p * LOG_2
        - 0.5 * nu * sigma.logdet
        - log_multigamma(p, 0.5 * nu)
    )


def wishart_logdensity_matrix(data, nu, sigma):
    """n-by-K matrix of Wishart log-densities, one column per component.

    Uses the vec-stack trace identity so each column costs one (n, p^2)
    matrix-vector product; Cholesky factors come from the SpdMatrix caches.
    """
    nu = np.asarray(nu, dtype=float)
    K = nu.size
    p = data.p
    if np.any(nu <= p - 1):
        raise DomainError(f"every nu must exceed p - 1 = {p - 1}")
    out = np.empty((data.n, K))
    for k in range(K):
        sig = sigma[k]
        if sig.dim != p:
            raise DimensionMismatch("scale dimension differs from data dimension")
        inv_k = symmetrize(cho_solve((sig.chol, True), np.eye(p)))
        traces = trace_prod_batch(inv_k, data.vec_stack)
        const = (
            -0.5 * nu[k] * p * LOG_2
            - 0.5 * nu[k] * sig.logdet
            - log_multigamma(p, 0.5 * nu[k])
        )
        out[:, k] = 0.5 * (nu[k] - p - 1) * data.logdets - 0.5 * traces + const
    return out


def softmax_log_probs(logits):
    """Row-wise log-softmax; shifting a row by a constant leaves it unchanged."""
    logits = np.atleast_2d(np.asarray(logits, dtype=float))
    return logits - log_sum_exp_rows(logits)[:, None]


def gating_log_probs(x, beta):
    """n-by-K log gating probabilities with the implicit zero baseline class."""
    x = np.atleast_2d(np.asarray(x, dtype=float))
    beta = np.asarray(beta, dtype=float)
    if beta.ndim != 2 or x.shape[1] != beta.shape[0]:
        raise DimensionMismatch(
            f"covariates have q = {x.shape[1]} columns but beta is {beta.shape}"
        )
    logits = np.concatenate([x @ beta, np.zeros((x.shape[0], 1))], axis=1)
    return softmax_log_probs(logits)


def gating_probs(x_row, beta):
    """Gating probability vector for one covariate row (sums to 1)."""
    probs = np.exp(gating_log_probs(np.asarray(x_row)[None, :], beta)[0])
    return probs / probs.sum()


def log_component_weights(data, params):
    """Shared kernel: the n-by-K matrix of log mixing weight + log density.

    Row-wise log-sum-exp of this matrix is the observed-data log-likelihood
    contribution of each observation; row-wise softmax is the label posterior
    / EM responsibility.
    """
    if isinstance(params, MoeParams):
        if not data.has_covariates:
            raise MissingCovariates("mixture-of-experts params require covariates")
        log_mix = gating_log_probs(data.covariates, params.beta)
    else:
        with np.errstate(divide="ignore"):
            log_mix = np.log(params.pi)[None, :]
    return log_mix + wishart_logdensity_matrix(data, params.nu, params.sigma)


def loglik_mixture(data, params):
    """Observed-data log-likelihood of the plain mixture (labels summed out)."""
    return float(np.sum(log_sum_exp_rows(log_component_weights(data, params))))


def loglik_moe(data, params):
    """Observed-data log-likelihood of the mixture-of-experts model."""
    if not data.has_covariates:
        raise MissingCovariates("mixture-of-experts likelihood requires covariates")
    return float(np.sum(log_sum_exp_rows(log_component_weights(data, params))))


def model_dimension(K, p, q, family):
    """Count of free parameters.

    Each component contributes p(p+1)/2 + 1 (scale matrix plus degrees of
    freedom). Gating contributes (K-1)q under the zero-baseline constraint;
    plain mixture weights contribute K-1 (the probability-simplex dimension,
    the standard count for Dirichlet-weighted mixtures).
    """
    if K < 1:
        raise DomainError("K must be at least 1")
    per_component = p * (p + 1) // 2 + 1
    if family == "moe":
        return K * per_component + (K - 1) * q
    if family == "mixture":
        return K * per_component + (K - 1)
    raise DomainError(f"unknown family {family!r}")
