"""Dense symmetric linear algebra and Wishart-family special functions.

Everything here is pure and operates in log space; raw densities are never
materialized. Values are immutable after construction and safe to share.
"""

from __future__ import annotations

import numpy as np
from scipy.special import gammaln, polygamma
from scipy.special import psi as _digamma

from .errors import DimensionMismatch, DomainError, NotPositiveDefinite

#: Fixed diagonal jitter added (at most once) when a Cholesky factorization
#: of a nominally-SPD matrix fails.
JITTER = 1e-6

#: Relative tolerance for the symmetry check on construction.
SYM_RTOL = 1e-10

LOG_PI = float(np.log(np.pi))
LOG_2 = float(np.log(2.0))


def symmetrize(m):
    """Return the symmetric part (m + m.T)/2 of a square matrix."""
    return 0.5 * (m + m.T)


def cholesky_logdet(m, allow_jitter=True):
    """Lower Cholesky factor and log-determinant of a symmetric matrix.

    Factorization is attempted on ``m`` as given; if it fails and
    ``allow_jitter`` is set, a single retry on ``m + JITTER*I`` is made.
    The returned logdet refers to the (possibly jittered) matrix.

    Parameters
    ----------
    m : ndarray, shape (p, p)
        Symmetric matrix.
    allow_jitter : bool
        Permit the one-shot diagonal jitter retry.

    Returns
    -------
    (L, logdet, jittered) : (ndarray, float, bool)
        ``L @ L.T == m + delta*I`` with ``delta in {0, JITTER}``;
        ``logdet == 2*sum(log(diag(L)))``; ``jittered`` reports ``delta > 0``.

    Raises
    ------
    NotPositiveDefinite
        If factorization fails even after jitter (or jitter is disallowed).
    """
    m = np.asarray(m, dtype=float)
    if m.ndim != 2 or m.shape[0] != m.shape[1]:
        raise DimensionMismatch(f"expected a square matrix, got shape {m.shape}")
    try:
        chol = np.linalg.cholesky(m)
        jittered = False
    except np.linalg.LinAlgError:
        if not allow_jitter:
            raise NotPositiveDefinite(
                "matrix is not positive definite (jitter disallowed)"
            ) from None
        try:
            chol = np.linalg.cholesky(m + JITTER * np.eye(m.shape[0]))
            jittered = True
        except np.linalg.LinAlgError:
            raise NotPositiveDefinite(
                f"matrix is not positive definite even after {JITTER:g} jitter"
            ) from None
    logdet = 2.0 * float(np.sum(np.log(np.diag(chol))))
    return chol, logdet, jittered


class SpdMatrix:
    """A symmetric positive definite matrix with cached Cholesky/log-det.

    The entry array is symmetrized on construction (after a relative-tolerance
    symmetry check) and frozen. The Cholesky factor and log-determinant are
    computed lazily on first access; if the factorization needed the diagonal
    jitter, ``jittered`` records that on the value.
    """

    __slots__ = ("entries", "dim", "allow_jitter", "_chol", "_logdet", "_jittered")

    def __init__(self, entries, allow_jitter=True, _chol=None):
        m = np.asarray(entries, dtype=float)
        if m.ndim != 2 or m.shape[0] != m.shape[1]:
            raise DimensionMismatch(f"expected a square matrix, got shape {m.shape}")
        scale = float(np.max(np.abs(m))) if m.size else 0.0
        asym = float(np.max(np.abs(m - m.T))) if m.size else 0.0
        if asym > SYM_RTOL * max(scale, 1.0):
            raise DomainError(
                f"matrix is not symmetric: max |m - m.T| = {asym:g} "
                f"exceeds {SYM_RTOL:g} relative tolerance"
            )
        m = symmetrize(m)
        m.setflags(write=False)
        self.entries = m
        self.dim = m.shape[0]
        self.allow_jitter = allow_jitter
        self._chol = _chol
        self._logdet = None
        self._jittered = False if _chol is not None else None

    def _factorize(self):
        self._chol, self._logdet, self._jittered = cholesky_logdet(
            self.entries, allow_jitter=self.allow_jitter
        )

    @property
    def chol(self):
        """Lower Cholesky factor of ``entries`` (plus jitter if needed)."""
        if self._chol is None:
            self._factorize()
        return self._chol

    @property
    def logdet(self):
        if self._logdet is None:
            chol = self.chol
            self._logdet = 2.0 * float(np.sum(np.log(np.diag(chol))))
        return self._logdet

    @property
    def jittered(self):
        if self._jittered is None:
            self._factorize()
        return self._jittered

    def inv(self):
        """Dense inverse computed from the Cholesky factor (symmetrized)."""
        eye = np.eye(self.dim)
        linv = np.linalg.solve(self.chol, eye)
        return symmetrize(linv.T @ linv)

    def __repr__(self):
        return f"SpdMatrix(dim={self.dim})"


def trace_prod_batch(a_inv, s_stack):
    """Batched traces tr(a_inv @ S_i) via the vectorization identity.

    ``tr(A B) = vec(A).vec(B)`` for symmetric A, B, so a single matrix-vector
    product against the row-major vec-stack evaluates all n traces at once.

    Parameters
    ----------
    a_inv : ndarray, shape (p, p)
    s_stack : ndarray, shape (n, p*p)
        Rows are row-major ``vec(S_i)``.

    Returns
    -------
    ndarray, shape (n,)
    """
    a_inv = np.asarray(a_inv, dtype=float)
    s_stack = np.asarray(s_stack, dtype=float)
    if s_stack.ndim != 2 or s_stack.shape[1] != a_inv.size:
        raise DimensionMismatch(
            f"s_stack has {s_stack.shape[1] if s_stack.ndim == 2 else '?'} columns, "
            f"expected p^2 = {a_inv.size}"
        )
    return s_stack @ a_inv.ravel()


def _check_multigamma_domain(p, a):
    if p < 1 or int(p) != p:
        raise DomainError(f"p must be a positive integer, got {p}")
    if not a > (p - 1) / 2.0:
        raise DomainError(f"need a > (p-1)/2 = {(p - 1) / 2.0}, got a = {a}")


def log_multigamma(p, a):
    """log Gamma_p(a) = p(p-1)/4 * log(pi) + sum_j log Gamma(a + (1-j)/2)."""
    _check_multigamma_domain(p, a)
    j = np.arange(1, p + 1)
    return 0.25 * p * (p - 1) * LOG_PI + float(np.sum(gammaln(a + 0.5 * (1.0 - j))))


def multidigamma(p, a):
    """psi_p(a) = sum_{j=1..p} psi(a + (1-j)/2), the d/da of log Gamma_p."""
    _check_multigamma_domain(p, a)
    j = np.arange(1, p + 1)
    return float(np.sum(_digamma(a + 0.5 * (1.0 - j))))


def multitrigamma(p, a):
    """Second derivative of log Gamma_p: sum of scalar trigammas."""
    _check_multigamma_domain(p, a)
    j = np.arange(1, p + 1)
    return float(np.sum(polygamma(1, a + 0.5 * (1.0 - j))))


def log_sum_exp(v):
    """Stable log(sum(exp(v))) with max subtraction; -inf for all-(-inf)."""
    v = np.asarray(v, dtype=float)
    if v.size == 0:
        raise DomainError("log_sum_exp of an empty vector")
    m = float(np.max(v))
    if not np.isfinite(m):
        if m == -np.inf:
            return -np.inf
        raise DomainError("log_sum_exp received +inf or nan")
    return m + float(np.log(np.sum(np.exp(v - m))))


def log_sum_exp_rows(a):
    """Row-wise log-sum-exp of a 2-D array (stable; -inf rows allowed)."""
    a = np.asarray(a, dtype=float)
    m = np.max(a, axis=1)
    safe = np.where(np.isfinite(m), m, 0.0)
    out = safe + np.log(np.sum(np.exp(a - safe[:, None]), axis=1))
    return np.where(m == -np.inf, -np.inf, out)
