"""Simulator determinism, sampling properties, and dataset round trips."""

import numpy as np
import pytest
from scipy import stats

from auctionlab.combiners import PolynomialCombiner
from auctionlab.copulas import GaussianCopula, IndependenceCopula
from auctionlab.model import DomainError, MixedSignalModel
from auctionlab.simulate import BidDataset, FixedZ, UniformBoxZ, impute_signals_exact, simulate_bids
from auctionlab.slopes import SlopeFunction
from auctionlab.strategies import (
    LinearIndexBid,
    TanhDelta,
    closed_form_ipv_profile,
    make_synthetic_profile,
)


def ipv_model(n=2):
    combs = tuple(PolynomialCombiner.private_value(n, i) for i in range(n))
    slopes = tuple(tuple(SlopeFunction.identity() for _ in range(n)) for _ in range(n))
    return MixedSignalModel(combs, slopes, IndependenceCopula(n))


class TestDeterminism:
    def test_same_seed_identical_datasets(self, tmp_path):
        m = ipv_model()
        prof = closed_form_ipv_profile(2)
        sampler = UniformBoxZ(2, 1)
        d1 = simulate_bids(m, prof, sampler, 50, seed=123)
        d2 = simulate_bids(m, prof, sampler, 50, seed=123)
        p1, p2 = tmp_path / "a.csv", tmp_path / "b.csv"
        d1.to_csv(p1)
        d2.to_csv(p2)
        assert p1.read_bytes() == p2.read_bytes()

    def test_different_seed_differs(self):
        m = ipv_model()
        prof = closed_form_ipv_profile(2)
        sampler = UniformBoxZ(2, 1)
        d1 = simulate_bids(m, prof, sampler, 50, seed=1)
        d2 = simulate_bids(m, prof, sampler, 50, seed=2)
        assert not np.allclose(d1.bids_matrix(), d2.bids_matrix())


class TestSamplingProperties:
    def test_mean_bid_uniform_ipv(self):
        m = ipv_model()
        prof = closed_form_ipv_profile(2)
        data = simulate_bids(m, prof, FixedZ(np.ones((2, 1))), 100_000, seed=7)
        bids = data.bids_matrix().ravel()
        se = bids.std() / np.sqrt(bids.size)
        assert abs(bids.mean() - 0.25) < 3 * se

    def test_recovered_signal_levels_uniform(self):
        m = ipv_model()
        base = LinearIndexBid(np.array([0.05, 0.05]), np.array([0.25, 0.25]))
        delta = TanhDelta(0.5, np.array([[-1.0], [1.0]]))
        prof = make_synthetic_profile(2, base, [None, delta], np.ones((2, 1)))
        data = simulate_bids(m, prof, UniformBoxZ(2, 1), 4000, seed=11)
        levels = impute_signals_exact(data, prof)
        for j in range(2):
            assert stats.kstest(levels[:, j], "uniform").pvalue > 0.01

    def test_signal_roundtrip_through_generating_cdfs(self):
        m = ipv_model()
        base = LinearIndexBid(np.array([0.05, 0.05]), np.array([0.25, 0.25]))
        delta = TanhDelta(0.5, np.array([[-1.0], [1.0]]))
        prof = make_synthetic_profile(2, base, [None, delta], np.ones((2, 1)))
        rng = np.random.default_rng(3)
        Z = rng.uniform(0.5, 2.0, (2000, 2, 1))
        A = rng.random((2000, 2))
        for j in range(2):
            b = prof.value(j, A[:, j], Z)
            back = prof.inverse(j, b, Z)
            assert np.max(np.abs(back - A[:, j])) < 1e-10

    def test_gaussian_copula_dependence_survives(self):
        comb = PolynomialCombiner.additive(np.ones(2))
        slopes = ((SlopeFunction.identity(),) * 2,) * 2
        m = MixedSignalModel((comb,) * 2, slopes, GaussianCopula(2, 0.6))
        prof = closed_form_ipv_profile(2)
        data = simulate_bids(m, prof, FixedZ(np.ones((2, 1))), 20_000, seed=5)
        levels = impute_signals_exact(data, prof)
        tau = stats.kendalltau(levels[:, 0], levels[:, 1]).statistic
        assert tau == pytest.approx(2 / np.pi * np.arcsin(0.6), abs=0.02)


class TestDataset:
    def test_missing_bidder_rejected(self):
        import pandas as pd
        df = pd.DataFrame({
            "auction_id": [0, 0, 1], "bidder_id": [1, 2, 1],
            "bid": [1.0, 2.0, 1.5], "z_1": [1.0, 1.0, 1.0],
        })
        with pytest.raises(DomainError, match="exactly n"):
            BidDataset(df, n=2, dimension=1)

    def test_nonpositive_bid_rejected(self):
        import pandas as pd
        df = pd.DataFrame({
            "auction_id": [0, 0], "bidder_id": [1, 2],
            "bid": [1.0, -2.0], "z_1": [1.0, 1.0],
        })
        with pytest.raises(DomainError, match="positive"):
            BidDataset(df, n=2, dimension=1)

    def test_csv_roundtrip(self, tmp_path):
        m = ipv_model()
        prof = closed_form_ipv_profile(2)
        data = simulate_bids(m, prof, UniformBoxZ(2, 1), 25, seed=9)
        p = tmp_path / "bids.csv"
        data.to_csv(p)
        back = BidDataset.from_csv(p)
        assert back.n == 2 and back.dimension == 1
        np.testing.assert_allclose(back.bids_matrix(), data.bids_matrix())

    def test_row_count(self):
        m = ipv_model()
        prof = closed_form_ipv_profile(2)
        data = simulate_bids(m, prof, UniformBoxZ(2, 1), 10, seed=1)
        assert len(data.frame) == 20
