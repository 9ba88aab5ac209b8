"""The mixed-signal valuation model and its maintained-condition checks.

Bidder i values the good at combiner_i applied to the n mixed signals
Z_j' slope_ij(A_j), where A_j is bidder j's uniform private signal and Z_j
is bidder j's observed covariate vector.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .combiners import CombinerBase, combiner_partial_fd
from .copulas import SignalCopula
from .slopes import SlopeFunction


class DomainError(ValueError):
    """Inputs outside the model's domain, with a coordinate report."""


@dataclass(frozen=True)
class MixedSignalModel:
    """Complete generating primitives for an n-bidder auction.

    slopes[i][j] is bidder i's slope curve attached to bidder j's signal;
    combiners[i] is bidder i's value combiner; the copula is the joint
    signal distribution given Z.  Covariates live in (0, inf)^{n x D}.
    """

    combiners: tuple
    slopes: tuple          # nested: slopes[i][j] -> SlopeFunction
    copula: SignalCopula
    z_floor: float = 1e-8

    def __post_init__(self):
        combs = tuple(self.combiners)
        slopes = tuple(tuple(row) for row in self.slopes)
        object.__setattr__(self, "combiners", combs)
        object.__setattr__(self, "slopes", slopes)
        n = len(combs)
        if self.copula.n != n or len(slopes) != n or any(len(r) != n for r in slopes):
            raise ValueError("combiners, slopes and copula disagree on n")
        dims = {s.dim for row in slopes for s in row}
        if len(dims) != 1:
            raise ValueError("all slope curves must share the covariate dimension")

    @property
    def n(self) -> int:
        return len(self.combiners)

    @property
    def dimension(self) -> int:
        return self.slopes[0][0].dim

    # Evaluation -----------------------------------------------------------

    def _validate_point(self, A, Z):
        A = np.asarray(A, dtype=float)
        Z = np.asarray(Z, dtype=float)
        bad_a = (A < -1e-12) | (A > 1 + 1e-12)
        if np.any(bad_a):
            idx = np.argwhere(bad_a)[0]
            raise DomainError(f"signal outside [0,1] at coordinate {tuple(idx)}")
        if np.any(Z <= 0):
            idx = np.argwhere(Z <= 0)[0]
            raise DomainError(f"covariate not strictly positive at coordinate {tuple(idx)}")
        return A, Z

    def mixed_signals(self, i: int, A, Z) -> np.ndarray:
        """x_j = Z_j' slope_ij(A_j) stacked on the last axis.

        A: (..., n); Z: (n, D) or (..., n, D).  Returns (..., n).
        """
        A = np.asarray(A, dtype=float)
        Z = np.asarray(Z, dtype=float)
        cols = []
        for j in range(self.n):
            g = self.slopes[i][j](A[..., j])          # (..., D)
            zj = Z[..., j, :]
            cols.append(np.sum(zj * g, axis=-1))
        return np.stack(cols, axis=-1)

    def valuation(self, i: int, A, Z) -> np.ndarray:
        """Bidder i's expected value at signals A and covariates Z."""
        A, Z = self._validate_point(A, Z)
        return self.combiners[i].value(self.mixed_signals(i, A, Z))

    # Transformations ------------------------------------------------------

    def rescale(self, lam: float) -> "MixedSignalModel":
        """Equivalent representation (combiner(./lam), lam*slopes)."""
        if lam <= 0:
            raise DomainError(f"scale must be positive, got {lam}")
        combs = tuple(c.rescale(lam) for c in self.combiners)
        slopes = tuple(tuple(s.scale(lam) for s in row) for row in self.slopes)
        return replace(self, combiners=combs, slopes=slopes)

    def normalized(self, i: int) -> tuple["MixedSignalModel", np.ndarray]:
        """Representation of bidder i's pair with unit partials at the origin.

        Returns the rescaled model and the per-coordinate constants applied
        to the slopes.
        """
        kappa = self.combiners[i].normalization_constants()
        scales = np.where(kappa > 0, kappa, 1.0)
        combs = list(self.combiners)
        combs[i] = combs[i].coordinate_rescaled(scales)
        slopes = [list(row) for row in self.slopes]
        slopes[i] = [s.scale_per_dim(np.full(s.dim, scales[j]))
                     for j, s in enumerate(slopes[i])]
        model = replace(self, combiners=tuple(combs),
                        slopes=tuple(tuple(r) for r in slopes))
        return model, scales

    def is_symmetric(self) -> bool:
        """Common combiner and common slope rows across bidders."""
        c0 = self.combiners[0]
        for c in self.combiners[1:]:
            if type(c) is not type(c0) or c != c0:
                return False
        row0 = self.slopes[0]
        for row in self.slopes[1:]:
            for s, s0 in zip(row, row0):
                if s.basis != s0.basis or s.coeffs.shape != s0.coeffs.shape \
                        or not np.allclose(s.coeffs, s0.coeffs):
                    return False
        return True


@dataclass(frozen=True)
class AssumptionEntry:
    name: str
    passed: bool
    detail: str = ""
    first_violation: float | None = None


@dataclass(frozen=True)
class AssumptionReport:
    entries: tuple
    bne_case: str = "none"

    @property
    def passed(self) -> bool:
        return all(e.passed for e in self.entries)

    def entry(self, name: str) -> AssumptionEntry:
        for e in self.entries:
            if e.name == name:
                return e
        raise KeyError(name)

    def lines(self):
        out = [f"{'PASS' if e.passed else 'FAIL'} {e.name}"
               + (f": {e.detail}" if e.detail else "") for e in self.entries]
        out.append(f"INFO common-initial-value case: {self.bne_case}")
        return out


def check_assumptions(model: MixedSignalModel, grid_points: int = 21,
                      z_probe: float = 1.0, skip_slope_checks: bool = False,
                      focal: int | None = None) -> AssumptionReport:
    """Grid checks of the maintained conditions on the generating primitives.

    Violations are report entries, not exceptions.  skip_slope_checks exempts
    models whose slope curves are known and unbounded at the endpoints (the
    noisy-common-value family), where only the combiner/copula checks apply.
    """
    entries = []
    n, D = model.n, model.dimension
    a_grid = np.linspace(0.0, 1.0, grid_points)
    bidders = range(n) if focal is None else [focal]

    # Slope curves: nonnegative, nondecreasing, one strictly increasing.
    if not skip_slope_checks:
        ok, detail, first = True, "", None
        for i in bidders:
            for j in range(n):
                chk = model.slopes[i][j].check(max(grid_points, 101))
                if not chk.passed:
                    ok, detail, first = False, f"slope[{i}][{j}]: {'; '.join(chk.problems)}", chk.first_violation
                    break
            if not ok:
                break
        entries.append(AssumptionEntry("slope-monotone", ok, detail, first))

        # Endpoint conditions: report which of the two non-vanishing cases holds.
        term, init = True, True
        for i in bidders:
            act = model.combiners[i].active
            for j in act:
                if np.any(model.slopes[i][j](1.0) <= 0):
                    term = False
                if np.any(model.slopes[i][j](0.0) <= 0):
                    init = False
        detail = f"terminal-nonzero={term} initial-nonzero={init}"
        entries.append(AssumptionEntry("slope-endpoints", term or init, detail))

    # Combiner: positive on positive grid, active partials strictly positive,
    # twice differentiable proxied by finite FD partials.
    x_grid = np.stack(np.meshgrid(*([np.linspace(0.05, 2.0, grid_points)] * n),
                                  indexing="ij"), axis=-1).reshape(-1, n)
    ok, detail, first = True, "", None
    for i in bidders:
        comb = model.combiners[i]
        vals = comb.value(x_grid)
        if np.any(vals <= 0) or not np.all(np.isfinite(vals)):
            bad = x_grid[np.argmax(~((vals > 0) & np.isfinite(vals)))]
            ok, detail = False, f"combiner[{i}] not strictly positive at x={bad}"
            first = float(bad[0])
            break
        for j in sorted(comb.active):
            pj = comb.partial(j, x_grid)
            if np.any(pj <= 0):
                bad = x_grid[np.argmax(pj <= 0)]
                ok, detail = False, f"combiner[{i}] partial {j} not positive at x={bad}"
                first = float(bad[0])
                break
            fd = combiner_partial_fd(comb, j, x_grid[:64])
            if not np.allclose(pj[:64], fd, rtol=1e-4, atol=1e-6):
                ok, detail = False, f"combiner[{i}] partial {j} inconsistent with differences"
                break
        if not ok:
            break
    entries.append(AssumptionEntry("combiner-positive-increasing", ok, detail, first))

    # Copula: strictly positive density and uniform marginals by quadrature.
    Zp = np.full((n, D), z_probe)
    probe = np.random.default_rng(0).random((256, n))
    dens = model.copula.density(probe, Zp)
    ok = bool(np.all(dens > 0) and np.all(np.isfinite(dens)))
    entries.append(AssumptionEntry("copula-positive", ok,
                                   "" if ok else "non-positive density on probe grid"))
    try:
        worst = max(model.copula.marginal_uniformity_error(j, Zp) for j in range(n))
        ok = worst < 1e-6
        entries.append(AssumptionEntry("copula-uniform-marginals", ok,
                                       f"max quadrature error {worst:.2e}"))
    except NotImplementedError:
        entries.append(AssumptionEntry("copula-uniform-marginals", True, "skipped (n > 3)"))

    # Valuation monotone in each signal (grid check; focal bidder or all).
    ok, detail = True, ""
    fine = np.linspace(0.0, 1.0, 101)
    for i in bidders:
        for j in range(model.n):
            A = np.full((101, n), 0.5)
            A[:, j] = fine
            v = model.valuation(i, A, Zp)
            if np.any(np.diff(v) < -1e-10):
                k = int(np.argmax(np.diff(v) < -1e-10))
                ok, detail = False, f"valuation[{i}] decreasing in signal {j} near a={fine[k]:.3f}"
                break
        if not ok:
            break
    entries.append(AssumptionEntry("valuation-monotone", ok, detail))

    # Which common-initial-value case supports a shared starting bid.
    zeros = np.zeros(n)
    v0 = [float(model.combiners[i].value(zeros)) for i in range(n)]
    g0_zero = all(np.allclose(model.slopes[i][j](0.0), 0.0)
                  for i in range(n) for j in range(n))
    case1 = g0_zero and np.allclose(v0, v0[0])
    common_phi = all(type(c) is type(model.combiners[0]) and c == model.combiners[0]
                     for c in model.combiners)
    g0_common = all(np.allclose(model.slopes[i][j](0.0), model.slopes[0][j](0.0))
                    for i in range(n) for j in range(n))
    case2 = common_phi and g0_common
    bne = "(i)" if case1 else "(ii)" if case2 else "none"
    if case1 and case2:
        bne = "(i) and (ii)"
    entries.append(AssumptionEntry("common-initial-value", case1 or case2,
                                   f"case {bne}"))
    return AssumptionReport(tuple(entries), bne_case=bne)
