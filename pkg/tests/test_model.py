"""Core model: valuation evaluation, rescaling, maintained-condition checks."""

import numpy as np
import pytest

from auctionlab.combiners import (
    HardMaxCombiner,
    PolynomialCombiner,
    SmoothMaxCombiner,
    combiner_partial_fd,
)
from auctionlab.copulas import GaussianCopula, IndependenceCopula, ZLinkedGaussianCopula
from auctionlab.model import DomainError, MixedSignalModel, check_assumptions
from auctionlab.slopes import SlopeFunction


def additive_model(n=2, copula=None, weights=None):
    comb = PolynomialCombiner.additive(weights if weights is not None else np.ones(n))
    slopes = tuple(tuple(SlopeFunction.identity() for _ in range(n)) for _ in range(n))
    return MixedSignalModel((comb,) * n, slopes, copula or IndependenceCopula(n))


class TestValuation:
    def test_additive_linear_case(self):
        m = additive_model()
        z = np.ones((2, 1))
        assert m.valuation(0, np.array([0.5, 0.25]), z) == pytest.approx(0.75)

    def test_smooth_max_dominant_coordinate(self):
        comb = SmoothMaxCombiner(2, (1.0, 1.0), sharpness=40.0)
        slopes = ((SlopeFunction.identity(),) * 2,) * 2
        m = MixedSignalModel((comb, comb), slopes, IndependenceCopula(2))
        v = m.valuation(0, np.array([0.5, 0.25]), np.ones((2, 1)))
        assert v == pytest.approx(0.5, abs=2e-3)

    def test_initial_value_case(self):
        comb = PolynomialCombiner(2, (((1, 0), 1.0), ((0, 1), 1.0)))
        slopes = ((SlopeFunction.linear([0.0], [1.0]),) * 2,) * 2
        m = MixedSignalModel((comb, comb), slopes, IndependenceCopula(2))
        assert m.valuation(0, np.zeros(2), np.ones((2, 1))) == pytest.approx(0.0)

    def test_domain_violations_rejected(self):
        m = additive_model()
        with pytest.raises(DomainError, match="covariate"):
            m.valuation(0, np.array([0.5, 0.5]), np.array([[1.0], [-1.0]]))
        with pytest.raises(DomainError, match="signal"):
            m.valuation(0, np.array([1.5, 0.5]), np.ones((2, 1)))

    def test_monotone_in_each_signal(self):
        comb = PolynomialCombiner.bilinear_pair()
        slopes = ((SlopeFunction.linear([0.5], [0.5]), SlopeFunction.linear([0.4], [0.6])),) * 2
        m = MixedSignalModel((comb, comb), slopes, GaussianCopula(2, 0.4))
        a = np.linspace(0, 1, 101)
        z = np.array([[1.3], [0.7]])
        for j in range(2):
            A = np.full((101, 2), 0.5)
            A[:, j] = a
            v = m.valuation(0, A, z)
            assert np.all(np.diff(v) >= -1e-12)


class TestRescale:
    @pytest.mark.parametrize("lam", [0.1, 3.0, 10.0])
    def test_scale_invariance(self, lam):
        comb = PolynomialCombiner.bilinear_pair()
        slopes = ((SlopeFunction.linear([0.5], [0.5]), SlopeFunction.linear([0.4], [0.6])),) * 2
        m = MixedSignalModel((comb, comb), slopes, IndependenceCopula(2))
        m2 = m.rescale(lam)
        rng = np.random.default_rng(7)
        A = rng.random((40, 2))
        Z = rng.uniform(0.5, 2.0, (40, 2, 1))
        np.testing.assert_allclose(m2.valuation(0, A, Z), m.valuation(0, A, Z),
                                   rtol=0, atol=1e-12)

    def test_identity_and_roundtrip(self):
        m = additive_model()
        z = np.ones((2, 1))
        a = np.array([0.3, 0.8])
        assert m.rescale(1.0).valuation(0, a, z) == pytest.approx(m.valuation(0, a, z))
        rt = m.rescale(0.5).rescale(2.0)
        grid = np.linspace(0, 1, 11)
        A = np.stack([grid, grid[::-1]], axis=-1)
        np.testing.assert_allclose(rt.valuation(0, A, z), m.valuation(0, A, z), atol=1e-14)

    def test_nonpositive_scale_rejected(self):
        with pytest.raises(DomainError):
            additive_model().rescale(0.0)


class TestNormalization:
    def test_normalized_partials_at_origin(self):
        comb = PolynomialCombiner(2, (((1, 0), 2.0), ((0, 1), 3.0), ((1, 1), 0.5)))
        slopes = ((SlopeFunction.linear([0.5], [0.5]), SlopeFunction.linear([0.4], [0.6])),) * 2
        m = MixedSignalModel((comb, comb), slopes, IndependenceCopula(2))
        mn, scales = m.normalized(0)
        np.testing.assert_allclose(scales, [2.0, 3.0])
        kap = mn.combiners[0].normalization_constants()
        np.testing.assert_allclose(kap, [1.0, 1.0], atol=1e-12)
        rng = np.random.default_rng(3)
        A = rng.random((20, 2))
        Z = rng.uniform(0.5, 2.0, (20, 2, 1))
        np.testing.assert_allclose(mn.valuation(0, A, Z), m.valuation(0, A, Z), atol=1e-12)


class TestDerivativeConsistency:
    def test_combiner_partials_match_differences(self):
        rng = np.random.default_rng(11)
        x = rng.uniform(0.05, 2.0, (64, 2))
        for comb in [PolynomialCombiner.bilinear_pair(),
                     SmoothMaxCombiner(2, (1.0, 0.8), 8.0),
                     PolynomialCombiner.additive([1.0, 2.0])]:
            for j in range(2):
                fd = combiner_partial_fd(comb, j, x)
                an = comb.partial(j, x)
                tol = np.maximum(1e-6, 1e-4 * np.abs(an))
                assert np.all(np.abs(an - fd) <= tol)

    def test_slope_derivative_matches_differences(self):
        s = SlopeFunction(np.array([[0.2, 0.3, 0.4, 0.1]]), "bernstein")
        a = np.linspace(0.01, 0.99, 50)
        h = 1e-6
        fd = (s(a + h) - s(a - h)) / (2 * h)
        np.testing.assert_allclose(s.deriv(a), fd, atol=1e-6)


class TestAssumptionChecks:
    def test_additive_symmetric_all_pass(self):
        m = additive_model(copula=GaussianCopula(2, 0.4))
        rep = check_assumptions(m)
        assert rep.passed
        assert rep.bne_case in ("(ii)", "(i) and (ii)")

    def test_decreasing_slope_flagged(self):
        bad = SlopeFunction(np.array([[0.5, 1.0, -2.0]]), "poly")  # peaks inside
        comb = PolynomialCombiner.additive([1.0, 1.0])
        slopes = ((bad, SlopeFunction.identity()),) * 2
        m = MixedSignalModel((comb, comb), slopes, IndependenceCopula(2))
        rep = check_assumptions(m)
        e = rep.entry("slope-monotone")
        assert not e.passed
        assert e.first_violation is not None and 0.0 < e.first_violation <= 1.0

    def test_zero_partial_flagged(self):
        # declared-active coordinate with a vanishing partial on the grid
        comb = SmoothMaxCombiner(2, (1.0, 0.0), 8.0)
        object.__setattr__(comb, "weights", (1.0, 0.0))
        bad = PolynomialCombiner(2, (((1, 0), 1.0), ((0, 2), -0.1), ((0, 1), 0.1)))
        slopes = ((SlopeFunction.identity(),) * 2,) * 2
        m = MixedSignalModel((bad, bad), slopes, IndependenceCopula(2))
        rep = check_assumptions(m)
        assert not rep.entry("combiner-positive-increasing").passed

    def test_hard_max_for_simulation_only(self):
        hard = HardMaxCombiner(2, (1.0, 1.0))
        x = np.array([0.5, 0.25])
        assert hard.value(x) == pytest.approx(0.5)


class TestCopulas:
    @pytest.mark.parametrize("cop", [
        IndependenceCopula(2),
        GaussianCopula(2, 0.5),
        GaussianCopula(3, 0.3),
        ZLinkedGaussianCopula(2),
    ])
    def test_marginal_uniformity(self, cop):
        Z = np.full((cop.n, 1), 1.2)
        for j in range(cop.n):
            assert cop.marginal_uniformity_error(j, Z) < 1e-6

    def test_sampler_marginals_uniform(self):
        from scipy import stats
        cop = GaussianCopula(2, 0.5)
        rng = np.random.default_rng(5)
        u = cop.sample(4000, rng)
        for j in range(2):
            assert stats.kstest(u[:, j], "uniform").pvalue > 0.01

    def test_density_signal_derivative_fd(self):
        cop = GaussianCopula(2, 0.4)
        rng = np.random.default_rng(9)
        u = rng.uniform(0.1, 0.9, (30, 2))
        h = 1e-6
        for j in range(2):
            up, um = u.copy(), u.copy()
            up[:, j] += h
            um[:, j] -= h
            fd = (cop.density(up) - cop.density(um)) / (2 * h)
            np.testing.assert_allclose(cop.density_dsignal(u, j), fd, rtol=1e-4, atol=1e-6)

    def test_conditional_below_matches_montecarlo(self):
        cop = GaussianCopula(2, 0.5)
        rng = np.random.default_rng(13)
        # exact conditional draw of the opponent signal given own = 0.5
        from scipy.stats import norm
        x1 = norm.ppf(0.5)
        draws = norm.cdf(0.5 * x1 + np.sqrt(1 - 0.25) * rng.standard_normal(200_000))
        mc = np.mean(draws <= 0.6)
        se = np.std(draws <= 0.6) / np.sqrt(draws.size)
        exact = cop.cond_below(0, 0.5, np.array([np.nan, 0.6]))
        assert abs(exact - mc) < 3 * se

    def test_zlinked_density_zgrad_fd(self):
        cop = ZLinkedGaussianCopula(2, rho_max=0.5, gain=0.5)
        Z = np.array([[1.0], [1.5]])
        u = np.array([[0.3, 0.7], [0.6, 0.4]])
        h = 1e-5
        for k in range(2):
            Zp, Zm = Z.copy(), Z.copy()
            Zp[k, 0] *= 1 + h
            Zm[k, 0] *= 1 - h
            fd = (cop.density(u, Zp) - cop.density(u, Zm)) / (2 * h * Z[k, 0]) * Z[k, 0]
            np.testing.assert_allclose(cop.density_zgrad_contracted(u, k, Z), fd,
                                       rtol=1e-3, atol=1e-8)
