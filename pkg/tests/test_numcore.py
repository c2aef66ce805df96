import math

import mpmath
import numpy as np
import pytest
from scipy.special import multigammaln

from wishartmix.errors import DimensionMismatch, DomainError, NotPositiveDefinite
from wishartmix.numcore import (
    JITTER,
    SpdMatrix,
    cholesky_logdet,
    log_multigamma,
    log_sum_exp,
    multidigamma,
    multitrigamma,
    trace_prod_batch,
)


def random_spd(rng, p, cond=None):
    a = rng.standard_normal((p, p))
    m = a @ a.T + p * np.eye(p)
    if cond is not None:
        w, v = np.linalg.eigh(m)
        w = np.geomspace(1.0 / cond, 1.0, p)
        m = (v * w) @ v.T
    return 0.5 * (m + m.T)


class TestCholeskyLogdet:
    def test_identity(self):
        chol, logdet, jittered = cholesky_logdet(np.eye(2))
        assert np.allclose(chol, np.eye(2))
        assert logdet == 0.0
        assert not jittered

    def test_diagonal(self):
        chol, logdet, _ = cholesky_logdet(np.diag([4.0, 9.0]))
        assert np.allclose(chol, np.diag([2.0, 3.0]))
        assert math.isclose(logdet, math.log(36.0), rel_tol=1e-14)

    def test_two_by_two_hand_determinant(self):
        m = np.array([[2.0, 0.6], [0.6, 1.5]])
        _, logdet, _ = cholesky_logdet(m)
        assert math.isclose(logdet, math.log(2.0 * 1.5 - 0.36), rel_tol=1e-13)

    def test_jitter_reported_and_logdet_refers_to_jittered(self):
        chol, logdet, jittered = cholesky_logdet(np.zeros((3, 3)))
        assert jittered
        assert np.allclose(chol @ chol.T, JITTER * np.eye(3))
        assert math.isclose(logdet, 3 * math.log(JITTER), rel_tol=1e-12)

    def test_indefinite_fails_even_with_jitter(self):
        with pytest.raises(NotPositiveDefinite):
            cholesky_logdet(np.array([[1.0, 2.0], [2.0, 1.0]]))

    def test_jitter_disallowed(self):
        with pytest.raises(NotPositiveDefinite):
            cholesky_logdet(np.zeros((2, 2)), allow_jitter=False)

    def test_non_square_rejected(self):
        with pytest.raises(DimensionMismatch):
            cholesky_logdet(np.ones((2, 3)))


class TestSpdMatrix:
    def test_reconstruction_invariant(self):
        rng = np.random.default_rng(0)
        for p in (1, 2, 5, 8):
            for _ in range(20):
                m = random_spd(rng, p)
                s = SpdMatrix(m)
                delta = JITTER if s.jittered else 0.0
                recon = s.chol @ s.chol.T
                assert np.linalg.norm(recon - (s.entries + delta * np.eye(p))) < 1e-8

    def test_logdet_is_twice_log_diag_chol(self):
        rng = np.random.default_rng(1)
        s = SpdMatrix(random_spd(rng, 4))
        assert math.isclose(s.logdet, 2 * np.log(np.diag(s.chol)).sum(), rel_tol=1e-14)

    def test_symmetrized_on_construction(self):
        m = np.array([[2.0, 0.5 + 4e-11], [0.5, 1.0]])
        s = SpdMatrix(m)
        assert s.entries[0, 1] == s.entries[1, 0]

    def test_asymmetry_beyond_tolerance_rejected(self):
        with pytest.raises(DomainError):
            SpdMatrix(np.array([[2.0, 0.6], [0.1, 1.0]]))

    def test_entries_frozen(self):
        s = SpdMatrix(np.eye(2))
        with pytest.raises(ValueError):
            s.entries[0, 0] = 5.0

    def test_inv(self):
        rng = np.random.default_rng(2)
        m = random_spd(rng, 3)
        s = SpdMatrix(m)
        assert np.allclose(s.inv() @ m, np.eye(3), atol=1e-10)


class TestTraceProdBatch:
    def test_identity_weighting(self):
        s = np.diag([3.0, 5.0]).ravel()[None, :]
        assert trace_prod_batch(np.eye(2), s)[0] == 8.0

    def test_diagonal_weighting(self):
        a_inv = np.diag([2.0, 0.5])
        s = np.array([[1.0, 1.0], [1.0, 4.0]]).ravel()[None, :]
        assert trace_prod_batch(a_inv, s)[0] == 4.0

    def test_matches_double_loop_oracle(self):
        rng = np.random.default_rng(3)
        for p in (1, 2, 5, 8):
            for _ in range(25):
                a_inv = random_spd(rng, p)
                mats = [random_spd(rng, p) for _ in range(4)]
                stack = np.stack([m.ravel() for m in mats])
                got = trace_prod_batch(a_inv, stack)
                for i, m in enumerate(mats):
                    naive = sum(
                        a_inv[j, k] * m[k, j] for j in range(p) for k in range(p)
                    )
                    assert abs(got[i] - naive) <= 1e-10 * max(abs(naive), 1.0)

    def test_dimension_mismatch(self):
        with pytest.raises(DimensionMismatch):
            trace_prod_batch(np.eye(2), np.ones((3, 5)))


class TestLogMultigamma:
    def test_p1_equals_scalar_loggamma(self):
        rng = np.random.default_rng(4)
        for a in rng.uniform(0.05, 40.0, size=50):
            assert math.isclose(log_multigamma(1, a), math.lgamma(a), rel_tol=1e-13, abs_tol=1e-13)

    def test_p2_product_formula(self):
        # sqrt(pi) * Gamma(1.5) * Gamma(1.0) = pi/2
        assert math.isclose(log_multigamma(2, 1.5), math.log(math.pi / 2), rel_tol=1e-13)

    def test_p3_term_by_term(self):
        a = 4.0
        expected = (3 * 2 / 4) * math.log(math.pi) + sum(
            math.lgamma(a + (1 - j) / 2) for j in (1, 2, 3)
        )
        assert math.isclose(log_multigamma(3, a), expected, rel_tol=1e-14)

    def test_matches_scipy_multigammaln(self):
        rng = np.random.default_rng(5)
        for p in (1, 2, 4, 8):
            for a in rng.uniform((p - 1) / 2 + 0.1, 50.0, size=10):
                assert math.isclose(
                    log_multigamma(p, a), float(multigammaln(a, p)), rel_tol=1e-12
                )

    def test_domain(self):
        with pytest.raises(DomainError):
            log_multigamma(3, 1.0)
        with pytest.raises(DomainError):
            log_multigamma(0, 1.0)


class TestMultiDigamma:
    def test_p1_euler_gamma(self):
        assert math.isclose(multidigamma(1, 1.0), -0.5772156649015329, rel_tol=1e-12)

    def test_p2_sum_of_scalars(self):
        expected = float(mpmath.digamma(3.0) + mpmath.digamma(2.5))
        assert math.isclose(multidigamma(2, 3.0), expected, rel_tol=1e-12)

    def test_is_derivative_of_log_multigamma(self):
        h = 1e-5
        fd = (log_multigamma(3, 5.0 + h) - log_multigamma(3, 5.0 - h)) / (2 * h)
        assert abs(multidigamma(3, 5.0) - fd) < 1e-6

    def test_trigamma_is_derivative_of_digamma(self):
        h = 1e-5
        fd = (multidigamma(2, 4.0 + h) - multidigamma(2, 4.0 - h)) / (2 * h)
        assert abs(multitrigamma(2, 4.0) - fd) < 1e-6

    def test_domain(self):
        with pytest.raises(DomainError):
            multidigamma(2, 0.5)


class TestScalarSpecialAccuracy:
    """Pin the scalar special functions to 1e-12 relative accuracy against
    high-precision mpmath references on a > 0."""

    GRID = [1e-3, 0.1, 0.5, 1.0, 2.5, 7.0, 31.5, 120.0, 1234.5]

    def test_loggamma(self):
        for a in self.GRID:
            ref = float(mpmath.loggamma(a))
            assert math.isclose(log_multigamma(1, a), ref, rel_tol=1e-12, abs_tol=1e-12)

    def test_digamma(self):
        for a in self.GRID:
            ref = float(mpmath.digamma(a))
            assert math.isclose(multidigamma(1, a), ref, rel_tol=1e-12, abs_tol=1e-12)

    def test_trigamma(self):
        for a in self.GRID:
            ref = float(mpmath.polygamma(1, a))
            assert math.isclose(multitrigamma(1, a), ref, rel_tol=1e-12, abs_tol=1e-12)


class TestLogSumExp:
    def test_pair_of_zeros(self):
        assert math.isclose(log_sum_exp([0.0, 0.0]), math.log(2.0), rel_tol=1e-15)

    def test_no_overflow(self):
        assert math.isclose(log_sum_exp([1000.0, 1000.0]), 1000.0 + math.log(2.0))

    def test_small_magnitude_direct(self):
        v = [-1.0, -2.0, -3.0]
        reference = float(mpmath.log(sum(mpmath.exp(x) for x in v)))
        assert math.isclose(log_sum_exp(v), reference, rel_tol=1e-14)

    def test_all_minus_inf(self):
        assert log_sum_exp([-np.inf, -np.inf]) == -np.inf

    def test_empty_rejected(self):
        with pytest.raises(DomainError):
            log_sum_exp([])

    def test_shift_identity_random(self):
        rng = np.random.default_rng(6)
        for _ in range(20):
            v = rng.standard_normal(7)
            c = rng.uniform(-500, 500)
            assert math.isclose(log_sum_exp(v + c), log_sum_exp(v) + c, rel_tol=1e-12)
