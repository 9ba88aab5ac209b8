"""Bid dataset container and the auction simulator."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import pandas as pd

from .io_utils import read_table, write_table
from .model import DomainError, MixedSignalModel
from .strategies import StrategyProfile

BIDS_SCHEMA = "auctionlab.bids/1.0"


@dataclass(frozen=True)
class BidDataset:
    """Long-format bid records: one row per (auction, bidder).

    Columns: auction_id, bidder_id (1..n), bid, z_1..z_D (the bidder's own
    covariate vector).  Every auction must carry exactly n bidder rows.
    """

    frame: pd.DataFrame
    n: int
    dimension: int

    def __post_init__(self):
        df = self.frame
        zcols = [f"z_{d + 1}" for d in range(self.dimension)]
        required = ["auction_id", "bidder_id", "bid"] + zcols
        missing = [c for c in required if c not in df.columns]
        if missing:
            raise DomainError(f"dataset missing columns {missing}")
        if len(df) == 0:
            raise DomainError("dataset is empty")
        counts = df.groupby("auction_id")["bidder_id"].nunique()
        if (counts != self.n).any():
            bad = counts[counts != self.n].index[0]
            raise DomainError(f"auction {bad} does not have exactly n={self.n} bidders")
        if (df["bid"] <= 0).any():
            raise DomainError("bids must be positive")
        if (df[zcols].to_numpy() <= 0).any():
            raise DomainError("covariates must be strictly positive")

    @property
    def n_auctions(self) -> int:
        return self.frame["auction_id"].nunique()

    def _wide(self):
        df = self.frame.sort_values(["auction_id", "bidder_id"])
        m = self.n_auctions
        bids = df["bid"].to_numpy().reshape(m, self.n)
        zcols = [f"z_{d + 1}" for d in range(self.dimension)]
        Z = df[zcols].to_numpy().reshape(m, self.n, self.dimension)
        return bids, Z

    def bids_matrix(self) -> np.ndarray:
        return self._wide()[0]

    def covariates(self) -> np.ndarray:
        """Per-auction covariate array, shape (auctions, n, D)."""
        return self._wide()[1]

    def to_csv(self, path):
        write_table(path, self.frame, BIDS_SCHEMA)

    @staticmethod
    def from_csv(path, n: int | None = None) -> "BidDataset":
        df = read_table(path, BIDS_SCHEMA)
        if n is None:
            n = int(df.groupby("auction_id")["bidder_id"].nunique().iloc[0])
        dim = sum(1 for c in df.columns if c.startswith("z_"))
        return BidDataset(df, n=n, dimension=dim)

    @staticmethod
    def from_arrays(bids: np.ndarray, Z: np.ndarray) -> "BidDataset":
        m, n = bids.shape
        dim = Z.shape[2]
        rows = {
            "auction_id": np.repeat(np.arange(m), n),
            "bidder_id": np.tile(np.arange(1, n + 1), m),
            "bid": bids.ravel(),
        }
        for d in range(dim):
            rows[f"z_{d + 1}"] = Z[:, :, d].ravel()
        return BidDataset(pd.DataFrame(rows), n=n, dimension=dim)


class FixedZ:
    """Degenerate covariate sampler at one point."""

    def __init__(self, z_point):
        self.z_point = np.asarray(z_point, dtype=float)

    def __call__(self, rng, m: int) -> np.ndarray:
        return np.broadcast_to(self.z_point, (m,) + self.z_point.shape).copy()


class UniformBoxZ:
    """Covariates iid uniform over [lo, hi] per entry."""

    def __init__(self, n: int, dimension: int, lo: float = 0.5, hi: float = 2.0):
        if lo <= 0:
            raise DomainError("covariate box must be strictly positive")
        self.n, self.dimension, self.lo, self.hi = n, dimension, lo, hi

    def __call__(self, rng, m: int) -> np.ndarray:
        return rng.uniform(self.lo, self.hi, (m, self.n, self.dimension))


def simulate_bids(model: MixedSignalModel, profile: StrategyProfile, z_sampler,
                  n_auctions: int, seed: int) -> BidDataset:
    """Draw covariates and signals, emit equilibrium-or-fixture bids.

    Deterministic under a fixed seed: all randomness flows from one seeded
    generator in a fixed order.
    """
    if n_auctions < 1:
        raise DomainError("need at least one auction")
    rng = np.random.default_rng(seed)
    Z = np.maximum(z_sampler(rng, n_auctions), model.z_floor)
    A = model.copula.sample(n_auctions, rng, Z)
    bids = np.empty((n_auctions, model.n))
    for j in range(model.n):
        bids[:, j] = profile.value(j, A[:, j], Z)
    return BidDataset.from_arrays(bids, Z)


def impute_signals_exact(data: BidDataset, profile: StrategyProfile) -> np.ndarray:
    """Signals recovered through the generating profile's own bid CDFs."""
    bids, Z = data._wide()
    out = np.empty_like(bids)
    for j in range(data.n):
        out[:, j] = profile.inverse(j, bids[:, j], Z)
    return out
