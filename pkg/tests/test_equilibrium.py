"""Winning probabilities, payoffs, the symmetric solver, and best responses."""

import numpy as np
import pytest

from auctionlab.combiners import PolynomialCombiner
from auctionlab.copulas import GaussianCopula, IndependenceCopula
from auctionlab.equilibrium import (
    SingularityError,
    conditional_diag_value,
    expected_payoff,
    omega_ratio,
    omega_slope,
    solve_symmetric_fpa,
    solve_symmetric_fpa_linear,
    verify_best_response,
    winning_probability,
)
from auctionlab.model import DomainError, MixedSignalModel
from auctionlab.slopes import SlopeFunction
from auctionlab.strategies import ScaledStrategy, StrategyProfile, closed_form_ipv_profile


def ipv_model(n=2, copula=None):
    combs = tuple(PolynomialCombiner.private_value(n, i) for i in range(n))
    slopes = tuple(tuple(SlopeFunction.identity() for _ in range(n)) for _ in range(n))
    return MixedSignalModel(combs, slopes, copula or IndependenceCopula(n))


def additive_common_model(n=2, copula=None, gammas=None):
    comb = PolynomialCombiner.additive(np.ones(n))
    if gammas is None:
        gammas = [SlopeFunction.linear([0.5], [0.5]), SlopeFunction.linear([0.4], [0.6])][:n]
    slopes = (tuple(gammas),) * n
    return MixedSignalModel((comb,) * n, slopes, copula or IndependenceCopula(n))


ZU = np.ones((2, 1))


class TestWinningProbability:
    def test_symmetric_independent_two_bidders(self):
        m = ipv_model(2)
        prof = closed_form_ipv_profile(2)
        for a in [0.2, 0.5, 0.9]:
            assert winning_probability(m, prof, 0, a, 0.37, ZU) == pytest.approx(a)

    @pytest.mark.parametrize("n", [3, 4])
    def test_symmetric_independent_n_bidders(self, n):
        m = ipv_model(n)
        prof = closed_form_ipv_profile(n)
        z = np.ones((n, 1))
        for a in [0.3, 0.7]:
            got = winning_probability(m, prof, 0, a, 0.5, z)
            assert got == pytest.approx(a ** (n - 1))

    def test_gaussian_copula_matches_montecarlo(self):
        from scipy.stats import norm
        m = ipv_model(2, GaussianCopula(2, 0.5))
        prof = closed_form_ipv_profile(2)
        got = winning_probability(m, prof, 0, 0.5, 0.5, ZU)
        rng = np.random.default_rng(21)
        x1 = norm.ppf(0.5)
        opp = norm.cdf(0.5 * x1 + np.sqrt(0.75) * rng.standard_normal(400_000))
        wins = opp <= 0.5
        assert abs(got - wins.mean()) < 3 * wins.std() / np.sqrt(wins.size)


class TestOmegaRatio:
    @pytest.mark.parametrize("n", [2, 3, 4])
    def test_independent_power_rule(self, n):
        m = ipv_model(n)
        prof = closed_form_ipv_profile(n)
        z = np.ones((n, 1))
        for alpha in [0.3, 0.8]:
            assert omega_ratio(m, prof, 0, alpha, z) == pytest.approx(alpha / (n - 1))

    def test_slope_matches_finite_differences(self):
        m = ipv_model(2, GaussianCopula(2, 0.4))
        prof = closed_form_ipv_profile(2)
        alpha = 0.5
        h = 1e-5
        fd = (winning_probability(m, prof, 0, alpha + h, alpha, ZU)
              - winning_probability(m, prof, 0, alpha - h, alpha, ZU)) / (2 * h)
        assert omega_slope(m, prof, 0, alpha, alpha, ZU) == pytest.approx(fd, abs=1e-4)

    def test_vanishing_slope_reported(self):
        m = ipv_model(3)
        prof = closed_form_ipv_profile(3)
        with pytest.raises(SingularityError):
            omega_ratio(m, prof, 0, 0.0, np.ones((3, 1)))


class TestExpectedPayoff:
    def test_uniform_ipv_equilibrium_payoff(self):
        m = ipv_model(2)
        prof = closed_form_ipv_profile(2)
        for alpha in [0.4, 0.8]:
            res = expected_payoff(m, prof, 0, b=alpha / 2, alpha=alpha, Z=ZU)
            assert not res.clamped
            assert res.payoff == pytest.approx(alpha ** 2 / 2, abs=1e-9)

    def test_losing_bid_pays_zero(self):
        m = additive_common_model()
        prof, _ = solve_symmetric_fpa(m, ZU, grid_points=201)
        res = expected_payoff(m, prof, 0, b=prof.value(0, 0.0, ZU) * 0.5, alpha=0.5, Z=ZU)
        assert res.clamped
        assert res.payoff == pytest.approx(0.0, abs=1e-12)

    def test_sure_win_pays_value_minus_bid(self):
        m = ipv_model(2)
        prof = closed_form_ipv_profile(2)
        alpha, b = 0.6, 0.7
        res = expected_payoff(m, prof, 0, b=b, alpha=alpha, Z=ZU)
        assert res.clamped
        assert res.payoff == pytest.approx(alpha - b, abs=1e-9)


class TestDiagonalValue:
    def test_two_bidder_pins_both_signals(self):
        m = additive_common_model()
        v = conditional_diag_value(m, 0, 0.5, ZU)
        assert v == pytest.approx(0.75 + 0.7 * 1.0)  # 0.5+0.5*0.5 + 0.4+0.6*0.5

    def test_three_bidder_independent_average(self):
        # additive with identity slopes: E[A_m | A_m <= alpha] = alpha/2
        comb = PolynomialCombiner.additive(np.ones(3))
        slopes = ((SlopeFunction.identity(),) * 3,) * 3
        m = MixedSignalModel((comb,) * 3, slopes, IndependenceCopula(3))
        z = np.ones((3, 1))
        v = conditional_diag_value(m, 0, 0.6, z)
        assert v == pytest.approx(0.6 + 0.6 + 0.3, abs=1e-10)


class TestSymmetricSolver:
    def test_uniform_ipv_two_bidders(self):
        m = ipv_model(2)
        prof, rep = solve_symmetric_fpa(m, ZU)
        grid = np.linspace(0, 1, 101)
        np.testing.assert_allclose(prof.value(0, grid, ZU), grid / 2, atol=1e-6)
        assert rep.max_foc_residual < 1e-7

    def test_uniform_ipv_three_bidders(self):
        m = ipv_model(3)
        z = np.ones((3, 1))
        prof, _ = solve_symmetric_fpa(m, z)
        grid = np.linspace(0, 1, 101)
        np.testing.assert_allclose(prof.value(0, grid, z), 2 * grid / 3, atol=1e-6)

    def test_additive_gaussian_best_response_gap(self):
        m = additive_common_model(copula=GaussianCopula(2, 0.4))
        z = np.array([[1.2], [0.8]])
        prof, rep = solve_symmetric_fpa(m, z)
        assert rep.best_response_gap <= 1e-4

    def test_asymmetric_input_rejected(self):
        m = ipv_model(2)
        z = np.array([[1.0], [2.0]])  # private values scale differently
        with pytest.raises(DomainError, match="symmetric"):
            solve_symmetric_fpa(m, z)

    def test_linear_superposition_matches_fixed_point_solve(self):
        m = additive_common_model(copula=GaussianCopula(2, 0.4))
        prof_lin = solve_symmetric_fpa_linear(m)
        for z in [np.array([[0.7], [1.5]]), np.array([[1.1], [1.1]])]:
            prof_z, _ = solve_symmetric_fpa(m, z, grid_points=1001)
            grid = np.linspace(0, 1, 41)
            np.testing.assert_allclose(prof_lin.value(0, grid, z),
                                       prof_z.value(0, grid, z), atol=2e-7)


class TestBestResponse:
    def test_closed_form_equilibrium_has_tiny_gaps(self):
        m = ipv_model(2)
        prof = closed_form_ipv_profile(2)
        rep = verify_best_response(m, prof, 0, np.linspace(0.1, 0.9, 5), ZU,
                                   tolerance=1e-6)
        assert rep.passed

    def test_perturbed_strategy_detected(self):
        m = ipv_model(2)
        base = closed_form_ipv_profile(2)
        bumped = StrategyProfile((ScaledStrategy(base.bids[0], 1.0, 0.05), base.bids[1]))
        rep = verify_best_response(m, bumped, 0, np.array([0.5]), ZU, tolerance=1e-6)
        assert not rep.passed
        assert rep.gaps[0] > 1e-3

    def test_only_focal_bidder_must_best_respond(self):
        # a fixture warped away from equilibrium for bidder 2 leaves bidder 1's
        # verification meaningful; bidder 2's gap is not required to vanish
        from auctionlab.strategies import LinearIndexBid, TanhDelta, make_synthetic_profile

        m = additive_common_model()
        base = LinearIndexBid(np.array([0.05, 0.05]), np.array([0.3, 0.3]))
        delta = TanhDelta(0.4, np.array([[-1.0], [1.0]]))
        prof = make_synthetic_profile(2, base, [None, delta], ZU)
        rep1 = verify_best_response(m, prof, 0, np.array([0.4]), ZU, tolerance=np.inf)
        rep2 = verify_best_response(m, prof, 1, np.array([0.4]), ZU, tolerance=np.inf)
        assert np.isfinite(rep1.gaps).all() and np.isfinite(rep2.gaps).all()
