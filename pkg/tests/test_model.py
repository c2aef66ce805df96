import math

import mpmath
import numpy as np
import pytest
from scipy.integrate import quad
from scipy.stats import gamma as gamma_dist

from wishartmix.errors import (
    DimensionMismatch,
    DomainError,
    MissingCovariates,
    RankDeficientDesign,
)
from wishartmix.model import (
    Dataset,
    Hyperparams,
    MixtureParams,
    MoeParams,
    gating_log_probs,
    gating_probs,
    log_component_weights,
    log_wishart_density,
    loglik_mixture,
    loglik_moe,
    model_dimension,
    softmax_log_probs,
    wishart_logdensity_matrix,
)
from wishartmix.numcore import SpdMatrix
from wishartmix.sampling import RngState, draw_wishart


def tiny_dataset(values, covariates=None):
    return Dataset([SpdMatrix([[v]]) for v in values], covariates=covariates)


def mp_log_wishart_1d(s, nu, s2):
    s, nu, s2 = map(mpmath.mpf, (s, nu, s2))
    return float(
        (nu - 2) / 2 * mpmath.log(s)
        - s / (2 * s2)
        - nu / 2 * mpmath.log(2)
        - nu / 2 * mpmath.log(s2)
        - mpmath.loggamma(nu / 2)
    )


class TestLogWishartDensity:
    def test_scalar_gamma_reduction(self):
        # W_1(nu, s2) is Gamma(shape nu/2, rate 1/(2 s2))
        got = log_wishart_density(SpdMatrix([[2.0]]), 4.0, SpdMatrix([[1.0]]))
        ref = gamma_dist.logpdf(2.0, a=2.0, scale=2.0)
        assert math.isclose(got, ref, rel_tol=1e-12)

    def test_quadrature_normalization(self):
        sig = SpdMatrix([[1.0]])

        def f(s):
            return math.exp(log_wishart_density(SpdMatrix([[s]]), 5.0, sig))

        integral, _ = quad(f, 1e-12, 200.0, limit=200)
        assert abs(integral - 1.0) < 1e-6

    def test_joint_scale_shift_identity(self):
        rng = np.random.default_rng(0)
        for p in (1, 2, 3):
            a = rng.standard_normal((p, p))
            s = SpdMatrix(a @ a.T + p * np.eye(p))
            b = rng.standard_normal((p, p))
            sig = SpdMatrix(b @ b.T + p * np.eye(p))
            nu = p + 3.5
            for c in (0.5, 2.0, 7.3):
                lhs = log_wishart_density(SpdMatrix(c * s.entries), nu, SpdMatrix(c * sig.entries))
                rhs = log_wishart_density(s, nu, sig) - p * (p + 1) / 2 * math.log(c)
                assert math.isclose(lhs, rhs, rel_tol=1e-10, abs_tol=1e-10)

    def test_domain(self):
        with pytest.raises(DomainError):
            log_wishart_density(SpdMatrix(np.eye(2)), 1.0, SpdMatrix(np.eye(2)))

    def test_matrix_form_matches_scalar_form(self):
        rng = np.random.default_rng(1)
        mats = []
        for _ in range(5):
            a = rng.standard_normal((3, 3))
            mats.append(SpdMatrix(a @ a.T + 3 * np.eye(3)))
        data = Dataset(mats)
        nu = np.array([4.0, 9.5])
        b = rng.standard_normal((3, 3))
        sigma = [SpdMatrix(b @ b.T + 3 * np.eye(3)), SpdMatrix(np.eye(3))]
        dens = wishart_logdensity_matrix(data, nu, sigma)
        for i in range(5):
            for k in range(2):
                assert math.isclose(
                    dens[i, k], log_wishart_density(mats[i], nu[k], sigma[k]),
                    rel_tol=1e-10, abs_tol=1e-10,
                )


class TestGating:
    def test_zero_coefficients_uniform(self):
        x = np.array([1.0, 0.3, -2.0])
        probs = gating_probs(x, np.zeros((3, 3)))
        assert np.allclose(probs, 0.25)

    def test_scalar_softmax_by_hand(self):
        probs = gating_probs(np.array([1.0]), np.array([[math.log(3.0)]]))
        assert np.allclose(probs, [0.75, 0.25])

    def test_shift_invariance(self):
        rng = np.random.default_rng(2)
        logits = rng.standard_normal((4, 3))
        shifted = softmax_log_probs(logits + 123.456)
        assert np.allclose(softmax_log_probs(logits), shifted, atol=1e-12)

    def test_rows_sum_to_one(self):
        rng = np.random.default_rng(3)
        x = np.column_stack([np.ones(6), rng.standard_normal((6, 2))])
        logp = gating_log_probs(x, rng.standard_normal((3, 4)))
        assert np.allclose(np.exp(logp).sum(axis=1), 1.0, atol=1e-12)

    def test_dimension_check(self):
        with pytest.raises(DimensionMismatch):
            gating_probs(np.ones(2), np.zeros((3, 1)))


class TestLoglik:
    def test_k1_degenerate(self):
        data = tiny_dataset([0.5, 2.0, 1.1])
        params = MixtureParams(K=1, pi=[1.0], nu=[4.0], sigma=[SpdMatrix([[0.8]])])
        direct = sum(
            log_wishart_density(s, 4.0, params.sigma[0]) for s in data.matrices
        )
        assert math.isclose(loglik_mixture(data, params), direct, rel_tol=1e-12)

    def test_identical_components_merge(self):
        data = tiny_dataset([0.5, 2.0, 1.1])
        sig = SpdMatrix([[0.8]])
        one = MixtureParams(K=1, pi=[1.0], nu=[4.0], sigma=[sig])
        two = MixtureParams(K=2, pi=[0.3, 0.7], nu=[4.0, 4.0], sigma=[sig, sig])
        assert math.isclose(
            loglik_mixture(data, two), loglik_mixture(data, one), rel_tol=1e-12
        )

    def test_brute_force_extended_precision(self):
        values = [0.7, 1.9, 3.2]
        data = tiny_dataset(values)
        pi = [0.4, 0.6]
        nu = [3.0, 8.0]
        s2 = [0.5, 1.4]
        params = MixtureParams(K=2, pi=pi, nu=nu,
                               sigma=[SpdMatrix([[v]]) for v in s2])
        expected = 0.0
        for v in values:
            total = mpmath.mpf(0)
            for k in range(2):
                total += pi[k] * mpmath.exp(mp_log_wishart_1d(v, nu[k], s2[k]))
            expected += float(mpmath.log(total))
        assert math.isclose(loglik_mixture(data, params), expected, rel_tol=1e-12)

    def test_moe_zero_beta_reduces_to_uniform_mixture(self):
        rng = np.random.default_rng(4)
        x = np.column_stack([np.ones(5), rng.standard_normal((5, 2))])
        data = tiny_dataset([0.4, 1.0, 2.2, 0.9, 1.7], covariates=x)
        sigma = [SpdMatrix([[0.5]]), SpdMatrix([[1.5]])]
        moe = MoeParams(K=2, beta=np.zeros((3, 1)), nu=[3.0, 6.0], sigma=sigma)
        mix = MixtureParams(K=2, pi=[0.5, 0.5], nu=[3.0, 6.0], sigma=sigma)
        assert math.isclose(
            loglik_moe(data, moe), loglik_mixture(data, mix), rel_tol=1e-12
        )

    def test_moe_brute_force(self):
        rng = np.random.default_rng(5)
        x = np.column_stack([np.ones(3), rng.standard_normal(3)])
        values = [0.8, 1.2, 2.5]
        data = tiny_dataset(values, covariates=x)
        beta = np.array([[0.4], [-0.9]])
        nu = [3.5, 7.0]
        s2 = [0.6, 1.1]
        params = MoeParams(K=2, beta=beta, nu=nu,
                           sigma=[SpdMatrix([[v]]) for v in s2])
        expected = 0.0
        for i, v in enumerate(values):
            logits = [float(x[i] @ beta[:, 0]), 0.0]
            denom = sum(mpmath.exp(l) for l in logits)
            total = mpmath.mpf(0)
            for k in range(2):
                w = mpmath.exp(logits[k]) / denom
                total += w * mpmath.exp(mp_log_wishart_1d(v, nu[k], s2[k]))
            expected += float(mpmath.log(total))
        assert math.isclose(loglik_moe(data, params), expected, rel_tol=1e-12)

    def test_moe_requires_covariates(self):
        data = tiny_dataset([1.0, 2.0])
        params = MoeParams(K=1, beta=np.zeros((1, 0)), nu=[3.0],
                           sigma=[SpdMatrix([[1.0]])])
        with pytest.raises(MissingCovariates):
            loglik_moe(data, params)

    def test_intercept_only_moe_equals_mixture_at_softmax_weights(self):
        data = tiny_dataset([0.4, 1.0, 2.2, 0.9], covariates=np.ones((4, 1)))
        pi = np.array([0.2, 0.5, 0.3])
        beta = np.log(pi[:2] / pi[2])[None, :]
        sigma = [SpdMatrix([[v]]) for v in (0.5, 1.0, 2.0)]
        nu = [3.0, 5.0, 8.0]
        moe = MoeParams(K=3, beta=beta, nu=nu, sigma=sigma)
        mix = MixtureParams(K=3, pi=pi, nu=nu, sigma=sigma)
        assert abs(loglik_moe(data, moe) - loglik_mixture(data, mix)) < 1e-10

    def test_label_permutation_invariance(self):
        rng = np.random.default_rng(6)
        data = tiny_dataset(rng.uniform(0.3, 4.0, size=6))
        pi = np.array([0.2, 0.5, 0.3])
        nu = np.array([3.0, 5.0, 9.0])
        sigma = [SpdMatrix([[v]]) for v in (0.5, 1.0, 2.0)]
        base = loglik_mixture(data, MixtureParams(K=3, pi=pi, nu=nu, sigma=sigma))
        for perm in ([1, 2, 0], [2, 0, 1], [2, 1, 0]):
            perm = np.array(perm)
            permuted = MixtureParams(
                K=3, pi=pi[perm], nu=nu[perm], sigma=[sigma[j] for j in perm]
            )
            assert abs(loglik_mixture(data, permuted) - base) < 1e-12 * abs(base)

    def test_finiteness_on_ill_conditioned_inputs(self):
        rng = np.random.default_rng(7)
        for p in (2, 4):
            for _ in range(20):
                q, _ = np.linalg.qr(rng.standard_normal((p, p)))
                eigs = np.geomspace(1e-8, 1.0, p) * rng.uniform(0.5, 2.0)
                s = SpdMatrix((q * eigs) @ q.T)
                eigs2 = np.geomspace(1e-8, 1.0, p)
                sig = SpdMatrix((q * eigs2) @ q.T)
                val = log_wishart_density(s, p - 1 + 1e-6 + rng.uniform(0, 5), sig)
                assert np.isfinite(val)


class TestModelDimension:
    def test_moe_paper_formula(self):
        assert model_dimension(3, 2, 3, "moe") == 18

    def test_moe_k1(self):
        assert model_dimension(1, 1, 5, "moe") == 2

    def test_mixture_simplex_count(self):
        assert model_dimension(3, 2, 0, "mixture") == 14

    def test_bad_family(self):
        with pytest.raises(DomainError):
            model_dimension(2, 2, 0, "other")


class TestDataset:
    def test_requires_intercept(self):
        with pytest.raises(MissingCovariates):
            tiny_dataset([1.0, 2.0], covariates=np.zeros((2, 1)))

    def test_rank_deficiency_rejected(self):
        x = np.ones((3, 2))
        with pytest.raises(RankDeficientDesign):
            tiny_dataset([1.0, 2.0, 3.0], covariates=x)

    def test_mixed_dimensions_rejected(self):
        with pytest.raises(DimensionMismatch):
            Dataset([SpdMatrix([[1.0]]), SpdMatrix(np.eye(2))])

    def test_caches_match_matrices(self):
        rng = np.random.default_rng(8)
        mats = []
        for _ in range(4):
            a = rng.standard_normal((2, 2))
            mats.append(SpdMatrix(a @ a.T + 2 * np.eye(2)))
        data = Dataset(mats)
        for i, m in enumerate(mats):
            assert data.logdets[i] == m.logdet
            assert np.array_equal(data.vec_stack[i], m.entries.ravel())

    def test_with_intercept_only(self):
        data = tiny_dataset([1.0, 2.0]).with_intercept_only()
        assert data.q == 1
        assert data.covariate_names == ["intercept"]


class TestHyperparams:
    def test_defaults_satisfy_prior_mean_constraint(self):
        for p in (1, 2, 8):
            h = Hyperparams.defaults(3, p)
            assert h.a_nu / h.b_nu > p - 1
            assert h.nu0 == p + 2
            assert np.allclose(h.alpha, 1.0 / 3.0)

    def test_invalid_prior_mean_rejected(self):
        with pytest.raises(DomainError):
            Hyperparams(alpha=np.ones(2), nu0=4.0, psi0=SpdMatrix(np.eye(3)),
                        a_nu=1.0, b_nu=1.0)

    def test_psi0_inv_cached(self):
        h = Hyperparams.defaults(2, 2)
        assert np.allclose(h.psi0_inv.entries, np.eye(2))


class TestSharedKernel:
    def test_rows_match_density_plus_log_weight(self):
        data = tiny_dataset([0.5, 1.5])
        params = MixtureParams(K=2, pi=[0.25, 0.75], nu=[3.0, 6.0],
                               sigma=[SpdMatrix([[0.4]]), SpdMatrix([[2.0]])])
        lw = log_component_weights(data, params)
        for i, s in enumerate(data.matrices):
            for k in range(2):
                expected = math.log(params.pi[k]) + log_wishart_density(
                    s, params.nu[k], params.sigma[k]
                )
                assert math.isclose(lw[i, k], expected, rel_tol=1e-12)
