"""Rank and bidding-condition diagnostics over a field or dataset."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import svdvals

from ..model import DomainError
from .base import AuctionField


@dataclass(frozen=True)
class RankReport:
    """Minimum singular value of the scaled covariate-gradient matrix.

    The matrix row (j) / column (k) entry is Z_k' grad_{Z_k} warp_j divided
    by alpha(1-alpha); identification of the slope curves requires it to be
    uniformly nonsingular.  NOT BINDING when the focal bidder's value loads
    on no rival signal.
    """

    status: str                 # "PASS" | "FAIL" | "NOT BINDING"
    min_singular_value: float
    threshold: float
    per_point: tuple = field(default_factory=tuple)   # (alpha, z_index, min sv)

    @property
    def passed(self) -> bool:
        return self.status != "FAIL"

    def lines(self):
        yield (f"{'PASS' if self.passed else 'FAIL'} rank-condition "
               f"min_sv={self.min_singular_value:.3e} threshold={self.threshold:.3e} "
               f"status={self.status}")


def rank_condition_report(fld: AuctionField, candidates, alpha_grid, z_points,
                          threshold: float = 1e-3, relative: bool = True) -> RankReport:
    """Assemble the scaled-gradient matrix over a grid and report its rank margin."""
    cand = sorted(set(candidates) - {fld.focal})
    if not candidates or (set(candidates) - {fld.focal} != set(candidates)):
        raise DomainError("candidate set must be nonempty and exclude the focal bidder")
    if not cand:
        raise DomainError("candidate set must be nonempty")
    z_points = np.asarray(z_points, dtype=float)
    if z_points.ndim == 2:
        z_points = z_points[None]
    per_point = []
    global_min = np.inf
    global_norm = 0.0
    for zi, Z in enumerate(z_points):
        for a in np.asarray(alpha_grid, dtype=float):
            M = np.empty((len(cand), len(cand)))
            for r, k in enumerate(cand):      # row: differentiating covariate
                for c, j in enumerate(cand):  # column: warp index
                    M[r, c] = fld.warp_zgrad_scaled(j, k, float(a), Z)
            sv = svdvals(M)
            per_point.append((float(a), zi, float(sv[-1])))
            global_min = min(global_min, float(sv[-1]))
            global_norm = max(global_norm, float(sv[0]))
    thr = threshold * max(global_norm, 1e-12) if relative else threshold
    status = "PASS" if global_min > thr else "FAIL"
    return RankReport(status=status, min_singular_value=global_min, threshold=thr,
                      per_point=tuple(per_point))


def rank_not_binding(focal: int, active) -> RankReport:
    """Private-value case: the condition constrains nothing."""
    return RankReport(status="NOT BINDING", min_singular_value=np.nan, threshold=np.nan)


@dataclass(frozen=True)
class StrategyConditionReport:
    """Common-endpoint diagnostics: a dominated bidder violates the shared
    terminal bid, a late entrant violates the shared starting bid."""

    upper_gaps: np.ndarray           # (z_points, n) upper endpoint per bidder
    lower_gaps: np.ndarray
    dominated_bidders: tuple         # bidder indices failing the terminal condition
    late_bidders: tuple              # bidder indices failing the initial condition
    dominated_thresholds: dict       # bidder -> per-z estimated signal threshold
    tolerance: float

    @property
    def terminal_ok(self) -> bool:
        return not self.dominated_bidders

    @property
    def initial_ok(self) -> bool:
        return not self.late_bidders

    def lines(self):
        yield f"{'PASS' if self.terminal_ok else 'FAIL'} common-terminal-bid"
        for b in self.dominated_bidders:
            yield f"  dominated bidder {b + 1}"
        yield f"{'PASS' if self.initial_ok else 'FAIL'} common-initial-bid"
        for b in self.late_bidders:
            thr = self.dominated_thresholds.get(b)
            extra = f" low-bid threshold {np.max(thr):.4f}" if thr is not None else ""
            yield f"  bidder {b + 1} starts above the common minimum{extra}"


def _endpoints_from_field(fld: AuctionField, Z):
    uppers = np.empty(fld.n)
    lowers = np.empty(fld.n)
    for j in range(fld.n):
        if hasattr(fld, "profile"):
            lowers[j] = float(fld.profile.value(j, 0.0, Z))
            uppers[j] = float(fld.profile.value(j, 1.0, Z))
        else:
            grid = np.linspace(0.0, 1.0, 21)
            fit = fld._fit(j, Z)
            vals = fit.quantile(grid)
            lowers[j] = float(vals[0])
            uppers[j] = float(vals[-1])
    return lowers, uppers


def strategy_condition_tests(fld: AuctionField, z_points, tolerance: float = 1e-6,
                             rel_tolerance: float = 0.0) -> StrategyConditionReport:
    """Estimate per-bidder bid-support endpoints at each covariate point and
    flag departures from the common initial/terminal conditions.

    For a flagged late starter, the threshold below which its rival bids are
    dominated is the rival's bid CDF at the flagged bidder's starting bid.
    """
    z_points = np.asarray(z_points, dtype=float)
    if z_points.ndim == 2:
        z_points = z_points[None]
    nz = z_points.shape[0]
    uppers = np.empty((nz, fld.n))
    lowers = np.empty((nz, fld.n))
    for s, Z in enumerate(z_points):
        lowers[s], uppers[s] = _endpoints_from_field(fld, Z)
    scale_u = np.maximum(np.abs(uppers).max(axis=1, keepdims=True), 1e-12)
    tol_u = tolerance + rel_tolerance * scale_u
    dominated = []
    late = []
    thresholds = {}
    for j in range(fld.n):
        if np.any(uppers[:, j] < uppers.max(axis=1) - tol_u[:, 0]):
            dominated.append(j)
        if np.any(lowers[:, j] > lowers.min(axis=1) + tol_u[:, 0]):
            late.append(j)
            # rivals' signal levels mapped to this bidder's starting bid
            thr = np.zeros(nz)
            for s, Z in enumerate(z_points):
                rival = int(np.argmin(lowers[s]))
                thr[s] = float(fld.bid_cdf(rival, lowers[s, j], Z))
            thresholds[j] = thr
    return StrategyConditionReport(upper_gaps=uppers, lower_gaps=lowers,
                                   dominated_bidders=tuple(dominated),
                                   late_bidders=tuple(late),
                                   dominated_thresholds=thresholds,
                                   tolerance=tolerance)
