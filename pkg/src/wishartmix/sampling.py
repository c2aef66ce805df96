"""Seed-deterministic random generation for samplers and data generators.

All draws route through an :class:`RngState`, a thin wrapper over a
counter-based Philox generator keyed by ``(seed, stream)``. Identical seeds
reproduce identical draw sequences across runs and platforms; independent
streams for parallel chains/replicates are derived by key mixing, with no
coordination needed.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import solve_triangular

from .errors import AllMinusInfinity, DomainError
from .numcore import SpdMatrix

_MASK64 = (1 << 64) - 1


def _mix64(x):
    # splitmix64 finalizer; good avalanche for stream-key derivation
    x = (x + 0x9E3779B97F4A7C15) & _MASK64
    z = x
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK64
    return (z ^ (z >> 31)) & _MASK64


@dataclass
class RngState:
    """Deterministic random stream keyed by (seed, stream).

    ``derive(i)`` produces an independent substream; nesting derivations is
    fine (keys are mixed, not concatenated). Each RngState owns its generator
    and must not be shared across threads.
    """

    seed: int
    stream: int = 0
    _gen: np.random.Generator = field(default=None, repr=False, compare=False)

    def __post_init__(self):
        if not 0 <= int(self.seed) <= _MASK64:
            raise DomainError("seed must be a 64-bit unsigned integer")
        self.seed = int(self.seed)
        self.stream = int(self.stream) & _MASK64

    @property
    def generator(self):
        if self._gen is None:
            bitgen = np.random.Philox(key=np.array([self.seed, self.stream], dtype=np.uint64))
            self._gen = np.random.Generator(bitgen)
        return self._gen

    def derive(self, index):
        """Independent substream ``index`` of this state (fresh generator)."""
        return RngState(self.seed, _mix64(self.stream ^ _mix64(int(index))))


def draw_normal(rng, mean=0.0, sd=1.0):
    if sd <= 0:
        raise DomainError(f"normal sd must be > 0, got {sd}")
    return float(rng.generator.normal(mean, sd))


def draw_gamma(rng, shape, rate):
    """Gamma draw in shape/rate parametrization (mean shape/rate)."""
    if shape <= 0 or rate <= 0:
        raise DomainError(f"gamma shape/rate must be > 0, got ({shape}, {rate})")
    return float(rng.generator.gamma(shape, 1.0 / rate))


def draw_chi_square(rng, df):
    if df <= 0:
        raise DomainError(f"chi-square df must be > 0, got {df}")
    return float(rng.generator.chisquare(df))


def draw_dirichlet(rng, alpha):
    """Dirichlet draw; entries nonnegative and summing to 1 within 1e-12."""
    alpha = np.asarray(alpha, dtype=float)
    if alpha.ndim != 1 or alpha.size == 0 or np.any(alpha <= 0):
        raise DomainError("Dirichlet parameters must be a vector of positive reals")
    if alpha.size == 1:
        return np.array([1.0])
    draw = rng.generator.dirichlet(alpha)
    return draw / draw.sum()


def draw_categorical_from_logweights(rng, logw):
    """Index k with probability proportional to exp(logw_k).

    Normalization happens after max subtraction, so arbitrarily large
    log-weights are fine; -inf entries get probability zero.
    """
    logw = np.asarray(logw, dtype=float)
    m = np.max(logw)
    if m == -np.inf:
        raise AllMinusInfinity("all categorical log-weights are -inf")
    w = np.exp(logw - m)
    cdf = np.cumsum(w)
    u = rng.generator.uniform() * cdf[-1]
    return int(min(np.searchsorted(cdf, u, side="right"), logw.size - 1))


def _bartlett_factor(rng, nu, p):
    """Lower-triangular Bartlett factor: chi-square diagonal, normal below."""
    gen = rng.generator
    a = np.zeros((p, p))
    for j in range(p):
        a[j, j] = np.sqrt(gen.chisquare(nu - j))
    if p > 1:
        idx = np.tril_indices(p, k=-1)
        a[idx] = gen.standard_normal(idx[0].size)
    return a


def draw_wishart(rng, nu, scale):
    """Wishart draw with E[S] = nu * scale.

    Constructed as ``(L A)(L A)^T`` where ``L = chol(scale)`` and ``A`` is the
    Bartlett factor: ``A_jj^2 ~ chi2(nu - j + 1)`` (1-based j), standard
    normals below the diagonal.
    """
    p = scale.dim
    if not nu > p - 1:
        raise DomainError(f"Wishart requires nu > p - 1 = {p - 1}, got nu = {nu}")
    la = scale.chol @ _bartlett_factor(rng, nu, p)
    # product of lower-triangulars with positive diagonals -> valid chol factor
    return SpdMatrix(la @ la.T, _chol=la)


def draw_inverse_wishart(rng, df, scale):
    """Inverse-Wishart draw: inverse of W ~ Wishart(df, scale^{-1}).

    ``scale`` is the inverse-Wishart scale matrix, so E[draw] =
    scale / (df - p - 1) for df > p + 1. This is the parametrization under
    which a Wishart likelihood with an IW(nu0, Psi) prior has posterior
    IW(nu0 + n*nu, Psi + sum_i S_i).

    Computed without forming scale^{-1}: with L = chol(scale) and A the
    Bartlett factor of df, the draw is (L A^{-T})(L A^{-T})^T.
    """
    p = scale.dim
    if not df > p - 1:
        raise DomainError(f"inverse-Wishart requires df > p - 1 = {p - 1}, got {df}")
    a = _bartlett_factor(rng, df, p)
    b = solve_triangular(a, scale.chol.T, lower=True)  # A^{-1} L^T
    return SpdMatrix(b.T @ b)
