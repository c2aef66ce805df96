import math

import numpy as np
import pytest
from scipy.integrate import quad

from wishartmix.errors import AllMinusInfinity, DomainError
from wishartmix.model import log_wishart_density
from wishartmix.numcore import SpdMatrix
from wishartmix.sampling import (
    RngState,
    draw_categorical_from_logweights,
    draw_chi_square,
    draw_dirichlet,
    draw_gamma,
    draw_inverse_wishart,
    draw_normal,
    draw_wishart,
)


class TestRngState:
    def test_same_seed_same_sequence(self):
        a = RngState(123).generator.standard_normal(50)
        b = RngState(123).generator.standard_normal(50)
        assert np.array_equal(a, b)

    def test_streams_differ(self):
        base = RngState(123)
        a = base.derive(0).generator.standard_normal(50)
        b = base.derive(1).generator.standard_normal(50)
        assert not np.array_equal(a, b)

    def test_nested_derivation_deterministic(self):
        a = RngState(5).derive(3).derive(7).generator.uniform(size=4)
        b = RngState(5).derive(3).derive(7).generator.uniform(size=4)
        assert np.array_equal(a, b)

    def test_seed_domain(self):
        with pytest.raises(DomainError):
            RngState(-1)


class TestDrawWishart:
    def test_scalar_moment(self):
        rng = RngState(11)
        scale = SpdMatrix([[1.0]])
        draws = np.array([draw_wishart(rng, 5.0, scale).entries[0, 0]
                          for _ in range(100_000)])
        se = draws.std(ddof=1) / math.sqrt(draws.size)
        assert abs(draws.mean() - 5.0) < 3 * se

    def test_identity_scale_moment(self):
        rng = RngState(12)
        scale = SpdMatrix(np.eye(2))
        total = np.zeros((2, 2))
        sq = np.zeros((2, 2))
        t = 20_000
        for _ in range(t):
            s = draw_wishart(rng, 8.0, scale).entries
            total += s
            sq += s * s
        mean = total / t
        se = np.sqrt((sq / t - mean**2) / t)
        assert np.all(np.abs(mean - 8.0 * np.eye(2)) < 4 * se + 1e-12)

    def test_boundary_rejected(self):
        with pytest.raises(DomainError):
            draw_wishart(RngState(0), 1.0, SpdMatrix(np.eye(2)))

    def test_draws_are_spd_with_valid_chol(self):
        rng = RngState(13)
        for _ in range(200):
            s = draw_wishart(rng, 4.5, SpdMatrix([[2.0, 0.3], [0.3, 1.0]]))
            assert np.all(np.diag(s.chol) > 0)
            assert np.linalg.norm(s.chol @ s.chol.T - s.entries) < 1e-10

    def test_mc_entropy_matches_quadrature(self):
        # E[log f] under W_1(5, 1) by MC vs numeric integration of f log f
        nu, s2 = 5.0, 1.0
        sig = SpdMatrix([[s2]])

        def integrand(s):
            logf = log_wishart_density(SpdMatrix([[s]]), nu, sig)
            return math.exp(logf) * logf

        expected, _ = quad(integrand, 1e-12, 200.0, limit=200)
        rng = RngState(14)
        vals = np.array([
            log_wishart_density(draw_wishart(rng, nu, sig), nu, sig)
            for _ in range(20_000)
        ])
        se = vals.std(ddof=1) / math.sqrt(vals.size)
        assert abs(vals.mean() - expected) < 3.5 * se


class TestDrawInverseWishart:
    def test_scalar_mean(self):
        rng = RngState(21)
        scale = SpdMatrix([[2.0]])
        draws = np.array([draw_inverse_wishart(rng, 6.0, scale).entries[0, 0]
                          for _ in range(100_000)])
        se = draws.std(ddof=1) / math.sqrt(draws.size)
        assert abs(draws.mean() - 0.5) < 3 * se

    def test_matrix_mean_formula(self):
        rng = RngState(22)
        scale = SpdMatrix(np.eye(2))
        t = 20_000
        total = np.zeros((2, 2))
        sq = np.zeros((2, 2))
        for _ in range(t):
            s = draw_inverse_wishart(rng, 10.0, scale).entries
            total += s
            sq += s * s
        mean = total / t
        se = np.sqrt((sq / t - mean**2) / t)
        assert np.all(np.abs(mean - np.eye(2) / 7.0) < 4 * se + 1e-12)

    def test_spd_for_random_parameterizations(self):
        rng = RngState(23)
        gen = rng.generator
        for _ in range(10_000):
            p = int(gen.integers(1, 4))
            a = gen.standard_normal((p, p))
            scale = SpdMatrix(a @ a.T + p * np.eye(p))
            df = p - 1 + float(gen.uniform(0.5, 10.0))
            s = draw_inverse_wishart(rng, df, scale)
            np.linalg.cholesky(s.entries)  # raises if not PD

    def test_inverse_composition_is_wishart(self):
        # Sigma ~ IW(df, Psi) => Sigma^{-1} ~ W(df, Psi^{-1}), mean df * Psi^{-1}
        rng = RngState(24)
        psi = SpdMatrix([[1.5, 0.4], [0.4, 0.8]])
        psi_inv = np.linalg.inv(psi.entries)
        t = 20_000
        total = np.zeros((2, 2))
        sq = np.zeros((2, 2))
        for _ in range(t):
            w = np.linalg.inv(draw_inverse_wishart(rng, 9.0, psi).entries)
            total += w
            sq += w * w
        mean = total / t
        se = np.sqrt((sq / t - mean**2) / t)
        assert np.all(np.abs(mean - 9.0 * psi_inv) < 4 * se)

    def test_domain(self):
        with pytest.raises(DomainError):
            draw_inverse_wishart(RngState(0), 0.5, SpdMatrix(np.eye(2)))


class TestDrawDirichlet:
    def test_concentration(self):
        rng = RngState(31)
        draws = np.array([draw_dirichlet(rng, [1e6, 1e6]) for _ in range(200)])
        assert np.all(np.abs(draws - 0.5) < 0.002)

    def test_moments(self):
        rng = RngState(32)
        draws = np.array([draw_dirichlet(rng, [2.0, 3.0, 5.0]) for _ in range(100_000)])
        se = draws.std(axis=0, ddof=1) / math.sqrt(draws.shape[0])
        assert np.all(np.abs(draws.mean(axis=0) - (0.2, 0.3, 0.5)) < 3 * se)

    def test_single_component_exact(self):
        assert np.array_equal(draw_dirichlet(RngState(33), [7.0]), [1.0])

    def test_simplex_within_tolerance(self):
        rng = RngState(34)
        for _ in range(500):
            d = draw_dirichlet(rng, rng.generator.uniform(0.2, 5.0, size=4))
            assert np.all(d >= 0)
            assert abs(d.sum() - 1.0) <= 1e-12

    def test_domain(self):
        with pytest.raises(DomainError):
            draw_dirichlet(RngState(0), [1.0, 0.0])


class TestDrawCategorical:
    def test_minus_inf_never_chosen(self):
        rng = RngState(41)
        for _ in range(200):
            assert draw_categorical_from_logweights(rng, [0.0, -np.inf]) == 0

    def test_frequency(self):
        rng = RngState(42)
        logw = np.log([1.0, 3.0])
        hits = sum(draw_categorical_from_logweights(rng, logw) == 1
                   for _ in range(100_000))
        freq = hits / 100_000
        se = math.sqrt(0.75 * 0.25 / 100_000)
        assert abs(freq - 0.75) < 3 * se

    def test_large_values_no_overflow(self):
        rng = RngState(43)
        hits = sum(draw_categorical_from_logweights(rng, [5000.0, 5000.0])
                   for _ in range(20_000))
        assert 0.46 < hits / 20_000 < 0.54

    def test_all_minus_inf(self):
        with pytest.raises(AllMinusInfinity):
            draw_categorical_from_logweights(RngState(0), [-np.inf, -np.inf])


class TestScalarDraws:
    def test_gamma_moment(self):
        rng = RngState(51)
        draws = np.array([draw_gamma(rng, 3.0, 2.0) for _ in range(100_000)])
        se = draws.std(ddof=1) / math.sqrt(draws.size)
        assert abs(draws.mean() - 1.5) < 3 * se

    def test_normal_variance(self):
        rng = RngState(52)
        draws = np.array([draw_normal(rng) for _ in range(100_000)])
        # SE of the sample variance of a normal: sigma^2 sqrt(2/(n-1))
        assert abs(draws.var(ddof=1) - 1.0) < 3 * math.sqrt(2 / (draws.size - 1))

    def test_chi_square_moment(self):
        rng = RngState(53)
        draws = np.array([draw_chi_square(rng, 4.0) for _ in range(100_000)])
        se = draws.std(ddof=1) / math.sqrt(draws.size)
        assert abs(draws.mean() - 4.0) < 3 * se

    def test_domains(self):
        rng = RngState(0)
        with pytest.raises(DomainError):
            draw_gamma(rng, -1.0, 1.0)
        with pytest.raises(DomainError):
            draw_chi_square(rng, 0.0)
        with pytest.raises(DomainError):
            draw_normal(rng, 0.0, 0.0)
