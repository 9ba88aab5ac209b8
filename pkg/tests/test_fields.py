"""Field accessors: exact implementation, diagnostics, and the estimated field."""

import numpy as np
import pytest
from scipy import stats

from auctionlab.copulas import GaussianCopula
from auctionlab.fields import (
    EmpiricalField,
    OracleField,
    SmootherConfig,
    rank_condition_report,
    strategy_condition_tests,
)
from auctionlab.fields.diagnostics import rank_not_binding
from auctionlab.fixtures import (
    canonical_three_bidder,
    canonical_two_bidder,
    private_value_fixture,
    symmetric_additive_model,
    symmetric_two_bidder_fixture,
    uniform_ipv_model,
)
from auctionlab.model import DomainError
from auctionlab.simulate import FixedZ, UniformBoxZ, simulate_bids
from auctionlab.strategies import LinearIndexBid, ScaledStrategy, StrategyProfile, closed_form_ipv_profile

Z0 = np.array([[1.0], [1.3]])


class TestOracleWarps:
    def test_symmetric_profile_warp_is_identity(self):
        model, profile = symmetric_two_bidder_fixture()
        fld = OracleField(model, profile, 0)
        a = np.linspace(0, 1, 21)
        np.testing.assert_allclose(fld.warp(1, a, Z0), a, atol=1e-14)

    def test_canonical_fixture_scaled_gradient(self):
        model, profile = canonical_two_bidder()
        fld = OracleField(model, profile, 0)
        for a in [0.0, 0.3, 0.5, 1.0]:
            got = fld.warp_zgrad_scaled(1, 1, a, Z0)
            want = Z0[1, 0] * 0.5 / np.cosh(Z0[1, 0] - Z0[0, 0]) ** 2
            assert got == pytest.approx(want, rel=1e-12)

    def test_warp_gradient_matches_finite_differences(self):
        model, profile = canonical_two_bidder()
        fld = OracleField(model, profile, 0)
        h = 1e-6
        for a in [0.25, 0.7]:
            for k in range(2):
                Zp, Zm = Z0.copy(), Z0.copy()
                Zp[k, 0] += h
                Zm[k, 0] -= h
                fd = (fld.warp(1, a, Zp) - fld.warp(1, a, Zm)) / (2 * h)
                an = fld.warp_zgrad(1, k, a, Z0)[0]
                assert abs(an - fd) <= max(1e-5, 1e-3 * abs(an))

    def test_composed_warp_between_two_warped_bidders(self):
        model, profile = canonical_three_bidder()
        fld = OracleField(model, profile, 1)      # focal bidder is itself warped
        a = np.linspace(0.05, 0.95, 11)
        direct = fld.warp(2, a, np.ones((3, 1)))
        via_bids = np.array([
            profile.inverse(2, float(profile.value(1, x, np.ones((3, 1)))), np.ones((3, 1)))
            for x in a])
        np.testing.assert_allclose(direct, via_bids, atol=1e-12)


class TestOracleFrontierValue:
    def test_uniform_ipv_frontier_value_is_level(self):
        model = uniform_ipv_model(2)
        prof = closed_form_ipv_profile(2)
        fld = OracleField(model, prof, 0)
        a = np.linspace(0, 1, 21)
        np.testing.assert_allclose(fld.u_value(a, np.ones((2, 1))), a, atol=1e-12)

    def test_markup_identity_on_closed_form_equilibrium(self):
        model = uniform_ipv_model(2)
        prof = closed_form_ipv_profile(2)
        fld = OracleField(model, prof, 0)
        for a in np.linspace(0.05, 0.95, 19):
            lhs = fld.u_from_bid_side(a, np.ones((2, 1)))
            assert abs(lhs - fld.u_value(a, np.ones((2, 1)))) < 1e-10

    def test_u_derivatives_match_finite_differences(self):
        model, profile = canonical_two_bidder()
        fld = OracleField(model, profile, 0)
        h = 1e-6
        for a in [0.3, 0.8]:
            fd = (fld.u_value(a + h, Z0) - fld.u_value(a - h, Z0)) / (2 * h)
            assert fld.u_dalpha(a, Z0) == pytest.approx(fd, rel=1e-6)
            for k in range(2):
                Zp, Zm = Z0.copy(), Z0.copy()
                Zp[k, 0] += h
                Zm[k, 0] -= h
                fd = (fld.u_value(a, Zp) - fld.u_value(a, Zm)) / (2 * h)
                an = fld.u_zgrad(k, a, Z0)[0]
                assert abs(an - fd) <= max(1e-5, 1e-3 * abs(an))

    def test_three_bidder_value_ratio_consistency(self):
        # numerator over winning-slope quadratures against direct evaluation
        model, profile = canonical_three_bidder()
        z = np.ones((3, 1))
        fld = OracleField(model, profile, 0)
        for a in [0.2, 0.6, 0.9]:
            u = fld.u_value(a, z)
            w = fld.w_value(a, z)
            dome = fld.omega_slope_diag(a, z)
            assert u == pytest.approx(w / dome, rel=1e-12)

    def test_three_bidder_start_limit(self):
        model, profile = canonical_three_bidder()
        z = np.ones((3, 1))
        fld = OracleField(model, profile, 0)
        want = model.valuation(0, np.zeros(3), z)
        assert fld.u_value(0.0, z) == pytest.approx(want, abs=1e-12)
        got = fld.w_value(1e-5, z) / fld.omega_slope_diag(1e-5, z)
        assert got == pytest.approx(want, abs=1e-4)


class TestRankDiagnostics:
    def test_symmetric_fixture_fails(self):
        model, profile = symmetric_two_bidder_fixture()
        fld = OracleField(model, profile, 0)
        rep = rank_condition_report(fld, [1], np.linspace(0.1, 0.9, 5), Z0)
        assert rep.status == "FAIL"
        assert rep.min_singular_value < 1e-8

    def test_canonical_fixture_matches_analytic_value(self):
        model, profile = canonical_two_bidder()
        fld = OracleField(model, profile, 0)
        zs = np.stack([Z0, np.array([[1.4], [0.9]])])
        rep = rank_condition_report(fld, [1], np.linspace(0.0, 1.0, 7), zs)
        analytic = min(z[1, 0] * 0.5 / np.cosh(z[1, 0] - z[0, 0]) ** 2 for z in zs)
        assert rep.status == "PASS"
        assert rep.min_singular_value == pytest.approx(analytic, abs=1e-6)

    def test_private_value_not_binding(self):
        rep = rank_not_binding(0, {0})
        assert rep.status == "NOT BINDING"
        assert rep.passed

    def test_three_bidder_fixture_rank(self):
        model, profile = canonical_three_bidder()
        fld = OracleField(model, profile, 0)
        rep = rank_condition_report(fld, [1, 2], [0.3, 0.5], np.ones((3, 1)))
        assert rep.status == "PASS"


class TestStrategyConditions:
    def test_common_endpoints_pass(self):
        model, profile = canonical_two_bidder()
        fld = OracleField(model, profile, 0)
        rep = strategy_condition_tests(fld, Z0)
        assert rep.terminal_ok and rep.initial_ok

    def test_dominated_bidder_flagged(self):
        model, _ = canonical_two_bidder()
        base = LinearIndexBid(np.array([0.08, 0.08]), np.array([0.35, 0.35]))
        weak = ScaledStrategy(base, scale=0.9)
        fld = OracleField(model, StrategyProfile((base, weak)), 0)
        rep = strategy_condition_tests(fld, Z0, tolerance=1e-6)
        assert 1 in rep.dominated_bidders

    def test_late_starter_flagged_with_threshold(self):
        model, _ = canonical_two_bidder()
        base = LinearIndexBid(np.array([0.08, 0.08]), np.array([0.35, 0.35]))
        late = ScaledStrategy(base, scale=1.0, shift=0.05)
        fld = OracleField(model, StrategyProfile((base, late)), 0)
        rep = strategy_condition_tests(fld, Z0, tolerance=1e-6)
        assert 1 in rep.late_bidders
        thr = rep.dominated_thresholds[1]
        # rival bids below the late starter's opening bid are dominated
        want = (0.05) / (0.35 * Z0.sum())
        assert thr[0] == pytest.approx(want, abs=1e-9)


def _simulated_symmetric_dataset(n_auctions=50_000, seed=31):
    from auctionlab.equilibrium import solve_symmetric_fpa_linear

    model = symmetric_additive_model()
    profile = solve_symmetric_fpa_linear(model, grid_points=801)
    data = simulate_bids(model, profile, UniformBoxZ(2, 1, 0.6, 1.6), n_auctions, seed)
    return model, profile, data


class TestEmpiricalField:
    @pytest.fixture(scope="class")
    def sim(self):
        return _simulated_symmetric_dataset()

    def test_empty_dataset_rejected(self):
        import pandas as pd
        with pytest.raises(DomainError, match="empty"):
            from auctionlab.simulate import BidDataset
            BidDataset(pd.DataFrame(columns=["auction_id", "bidder_id", "bid", "z_1"]),
                       n=2, dimension=1)

    def test_bid_quantile_close_to_exact(self, sim):
        model, profile, data = sim
        fld = EmpiricalField(data, 0, SmootherConfig())
        zc = np.array([[1.1], [1.1]])
        a = np.linspace(0.05, 0.95, 19)
        got = fld.bid_quantile(a, zc)
        want = profile.value(0, a, zc)
        assert np.max(np.abs(got - want)) <= 0.05

    def test_warp_endpoints_near_symmetric_truth(self, sim):
        model, profile, data = sim
        fld = EmpiricalField(data, 0, SmootherConfig())
        zc = np.array([[1.1], [1.1]])
        assert abs(fld.warp(1, 0.0, zc)) <= 0.02
        assert abs(fld.warp(1, 1.0, zc) - 1.0) <= 0.02

    def test_imputed_signal_uniformity(self):
        model, profile, data = _simulated_symmetric_dataset(n_auctions=5000, seed=77)
        fld = EmpiricalField(data, 0, SmootherConfig())
        sig = fld.imputed_signals()
        for j in range(2):
            assert stats.kstest(sig[:, j], "uniform").pvalue > 0.01

    def test_errors_shrink_with_sample_size(self):
        model = symmetric_additive_model()
        from auctionlab.equilibrium import solve_symmetric_fpa_linear
        profile = solve_symmetric_fpa_linear(model, grid_points=801)
        zc = np.array([[1.1], [1.1]])
        a = np.linspace(0.1, 0.9, 17)
        errs = []
        for m, seed in [(2000, 5), (40_000, 6)]:
            data = simulate_bids(model, profile, UniformBoxZ(2, 1, 0.6, 1.6), m, seed)
            fld = EmpiricalField(data, 0, SmootherConfig())
            errs.append(float(np.max(np.abs(fld.bid_quantile(a, zc)
                                            - profile.value(0, a, zc)))))
        assert errs[1] < errs[0]

    def test_sparse_neighborhood_flagged(self, sim):
        model, profile, data = sim
        fld = EmpiricalField(data, 0, SmootherConfig(bandwidth_z=0.02))
        far = np.array([[8.0], [8.0]])
        vals = fld.bid_quantile(np.array([0.5]), far)
        assert np.isnan(vals).all()
        assert any("sparse" in f for f in fld.flags)

    def test_frontier_value_interior_accuracy(self, sim):
        model, profile, data = sim
        fld = EmpiricalField(data, 0, SmootherConfig())
        oracle = OracleField(model, profile, 0)
        zc = np.array([[1.1], [1.1]])
        a = np.linspace(0.1, 0.9, 9)
        got = fld.u_value(a, zc)
        want = np.array([oracle.u_value(float(x), zc) for x in a])
        assert np.max(np.abs(got - want)) <= 0.08


class TestGaussianCopulaField:
    def test_omega_ratio_matches_symmetric_formula(self):
        model = symmetric_additive_model(copula=GaussianCopula(2, 0.4))
        base = LinearIndexBid(np.array([0.08, 0.08]), np.array([0.35, 0.35]))
        prof = StrategyProfile((base, base))
        fld = OracleField(model, prof, 0)
        from scipy.stats import norm
        for a in [0.3, 0.6]:
            x = norm.ppf(a)
            num = norm.cdf(x * np.sqrt((1 - 0.4) / (1 + 0.4)))
            den = norm.pdf((x - 0.4 * x) / np.sqrt(1 - 0.16)) / (np.sqrt(1 - 0.16) * norm.pdf(x))
            assert fld.omega_ratio(a, Z0) == pytest.approx(num / den, rel=1e-9)
