"""Winning probabilities, payoffs, and the symmetric first-price equilibrium.

The focal bidder's first-order condition in quantile form is
s'(a) = (v(a, a; Z) - s(a)) / Omega(a | Z), where v(a, a; Z) is the expected
value given own signal a and highest rival signal a, and Omega is the
winning probability divided by its own-level slope.  The solver removes
the Omega -> 0 start singularity with a two-term series expansion.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.integrate import solve_ivp
from scipy.interpolate import CubicSpline, PchipInterpolator

from .model import DomainError, MixedSignalModel
from .strategies import (
    GridBid,
    StrategyProfile,
    SuperpositionBid,
)

_GL_NODES = 48


class SingularityError(RuntimeError):
    """Vanishing winning-probability slope at the reported point."""


def _gl(lo, hi, nodes=_GL_NODES):
    from .fields.base import bracket_quad

    if lo == 0.0:
        return bracket_quad(hi, nodes)
    x, w = np.polynomial.legendre.leggauss(nodes)
    x = 0.5 * (hi - lo) * (x + 1.0) + lo
    w = 0.5 * (hi - lo) * w
    return x, w


def _thresholds(profile: StrategyProfile, i: int, a, Z) -> np.ndarray:
    thr = np.empty(profile.n)
    for j in range(profile.n):
        thr[j] = 1.0 if j == i else float(np.clip(profile.quantile_warp(j, i, a, Z), 0.0, 1.0))
    return thr


def _warp_slope(profile: StrategyProfile, j: int, i: int, a: float, Z, h: float = 1e-6):
    w = profile.exact_warp(j, i)
    if w is not None:
        return float(w.deriv(a, Z))
    lo, hi = max(a - h, 0.0), min(a + h, 1.0)
    return float((profile.quantile_warp(j, i, hi, Z)
                  - profile.quantile_warp(j, i, lo, Z)) / (hi - lo))


def winning_probability(model: MixedSignalModel, profile: StrategyProfile,
                        i: int, a: float, alpha: float, Z) -> float:
    """P(bidder i's level-a bid beats every rival | own signal alpha, Z)."""
    thr = _thresholds(profile, i, a, Z)
    return float(model.copula.cond_below(i, alpha, thr, Z))


def omega_slope(model, profile, i: int, a: float, alpha: float, Z) -> float:
    """d/da of the winning probability at deviation level a."""
    thr = _thresholds(profile, i, a, Z)
    total = 0.0
    for j in range(model.n):
        if j == i:
            continue
        gj = _warp_slope(profile, j, i, a, Z)
        total += gj * model.copula.boundary_weight(i, j, alpha, thr, Z)
    return total


def omega_ratio(model, profile, i: int, alpha: float, Z) -> float:
    """Winning probability over its own-level slope at a = alpha."""
    den = omega_slope(model, profile, i, alpha, alpha, Z)
    if den <= 1e-300:
        raise SingularityError(f"vanishing winning-probability slope at alpha={alpha}, Z={Z}")
    return winning_probability(model, profile, i, alpha, alpha, Z) / den


def expected_win_value(model, profile, i: int, a: float, alpha: float, Z) -> float:
    """E[V_i 1{level-a bid wins} | A_i = alpha, Z] by quadrature."""
    thr = _thresholds(profile, i, a, Z)
    others = [j for j in range(model.n) if j != i]
    if model.n == 2:
        j = others[0]
        t, w = _gl(0.0, thr[j])
        A = np.empty((t.size, 2))
        A[:, i] = alpha
        A[:, j] = t
        vals = model.valuation(i, A, Z) * model.copula.density(A, Z)
        return float(w @ vals)
    if model.n == 3:
        j, k = others
        tj, wj = _gl(0.0, thr[j], 32)
        tk, wk = _gl(0.0, thr[k], 32)
        TJ, TK = np.meshgrid(tj, tk, indexing="ij")
        A = np.empty((TJ.size, 3))
        A[:, i] = alpha
        A[:, j] = TJ.ravel()
        A[:, k] = TK.ravel()
        vals = model.valuation(i, A, Z) * model.copula.density(A, Z)
        return float(np.outer(wj, wk).ravel() @ vals)
    raise NotImplementedError("win-value quadrature implemented for n <= 3")


@dataclass(frozen=True)
class PayoffResult:
    payoff: float
    level: float
    clamped: bool


def expected_payoff(model, profile, i: int, b: float, alpha: float, Z) -> PayoffResult:
    """Expected profit of bidding b given own signal alpha.

    Bids outside the bid support are clamped to the boundary level and
    flagged; below-support bids never win so the payoff is zero.
    """
    if b <= 0:
        raise DomainError(f"bid must be positive, got {b}")
    lo = float(profile.value(i, 0.0, Z))
    hi = float(profile.value(i, 1.0, Z))
    clamped = not (lo <= b <= hi)
    a = float(np.clip(profile.inverse(i, b, Z), 0.0, 1.0))
    vbar = expected_win_value(model, profile, i, a, alpha, Z)
    omega = winning_probability(model, profile, i, a, alpha, Z)
    return PayoffResult(payoff=vbar - b * omega, level=a, clamped=clamped)


def _payoff_at_level(model, profile, i, a, alpha, Z):
    vbar = expected_win_value(model, profile, i, a, alpha, Z)
    omega = winning_probability(model, profile, i, a, alpha, Z)
    return vbar - float(profile.value(i, a, Z)) * omega


def conditional_diag_value(model: MixedSignalModel, i: int, alpha: float, Z) -> float:
    """E[V_i | A_i = alpha, max rival signal = alpha] by conditional quadrature."""
    if model.n == 2:
        A = np.full(2, alpha)
        return float(model.valuation(i, A, Z))
    if alpha <= 0.0:
        return float(model.valuation(i, np.zeros(model.n), Z))
    if model.n == 3:
        others = [j for j in range(3) if j != i]
        num = den = 0.0
        for k in others:
            m = [j for j in others if j != k][0]
            t, w = _gl(0.0, alpha, 32)
            A = np.empty((t.size, 3))
            A[:, i] = alpha
            A[:, k] = alpha
            A[:, m] = t
            c = model.copula.density(A, Z)
            num += float(w @ (model.valuation(i, A, Z) * c))
            den += float(w @ c)
        return num / den
    raise NotImplementedError("diagonal conditional value implemented for n <= 3")


@dataclass(frozen=True)
class EquilibriumSolveReport:
    alpha_grid: np.ndarray
    values: np.ndarray
    max_foc_residual: float
    best_response_gap: float
    symmetric_probe_gap: float


@dataclass(frozen=True)
class BestResponseReport:
    levels: np.ndarray
    gaps: np.ndarray
    tolerance: float

    @property
    def passed(self) -> bool:
        return bool(np.all(self.gaps <= self.tolerance))


def _symmetry_probe(model: MixedSignalModel, Z) -> float:
    """Max disagreement across bidders of the solver's inputs at probe levels."""
    levels = [0.25, 0.6, 0.9]
    gap = 0.0
    vals0 = [conditional_diag_value(model, 0, a, Z) for a in levels]
    om0 = [model.copula.cond_below(0, a, np.full(model.n, a), Z) for a in levels]
    for i in range(1, model.n):
        vals = [conditional_diag_value(model, i, a, Z) for a in levels]
        gap = max(gap, float(np.max(np.abs(np.array(vals) - np.array(vals0)))))
        om = [model.copula.cond_below(i, a, np.full(model.n, a), Z) for a in levels]
        gap = max(gap, float(np.max(np.abs(np.array(om) - np.array(om0)))))
    v0 = [float(model.combiners[i].value(model.mixed_signals(i, np.zeros(model.n), Z)))
          for i in range(model.n)]
    gap = max(gap, float(np.ptp(v0)))
    return gap


def _symmetric_omega(model, alpha: float, Z) -> float:
    """Omega under the symmetric profile, where every warp is the identity."""
    thr = np.full(model.n, alpha)
    den = 0.0
    for j in range(model.n):
        if j == 0:
            continue
        den += model.copula.boundary_weight(0, j, alpha, thr, Z)
    if den <= 1e-300:
        raise SingularityError(f"vanishing slope at alpha={alpha}")
    return float(model.copula.cond_below(0, alpha, thr, Z)) / den


def _solve_scalar_foc(v_fn, omega_fn, b0: float, grid: np.ndarray, rtol: float = 1e-11):
    """March s' = (v - s)/Omega upward from the removable start singularity.

    Near zero, s = b0 + s1 a + s2 a^2 with s1 = v1/(1 + w1) and
    s2 = (v2 - s1 w2)/(1 + 2 w1), where v, Omega have local expansions
    v = b0 + v1 a + v2 a^2 and Omega = w1 a + w2 a^2.
    """
    h = 1e-3
    pts = np.array([h, 2 * h, 3 * h])
    vv = np.array([v_fn(a) for a in pts])
    ww = np.array([omega_fn(a) for a in pts])
    M = np.column_stack([pts, pts ** 2, pts ** 3])
    v1, v2, _ = np.linalg.solve(M, vv - b0)
    w1, w2, _ = np.linalg.solve(M, ww)
    s1 = v1 / (1.0 + w1)
    s2 = (v2 - s1 * w2) / (1.0 + 2.0 * w1)
    a0 = 1e-3
    s0 = b0 + s1 * a0 + s2 * a0 ** 2

    sol = solve_ivp(lambda a, s: (v_fn(a) - s[0]) / omega_fn(a), (a0, 1.0), [s0],
                    method="DOP853", rtol=rtol, atol=1e-13, dense_output=True)
    if not sol.success:
        raise RuntimeError(f"equilibrium march failed at alpha={sol.t[-1]:.6f}: {sol.message}")
    out = np.empty_like(grid)
    small = grid < a0
    out[small] = b0 + s1 * grid[small] + s2 * grid[small] ** 2
    out[~small] = sol.sol(grid[~small])[0]
    return out


def solve_symmetric_fpa(model: MixedSignalModel, Z, grid_points: int = 2001,
                        rtol: float = 1e-11, probe_tol: float = 1e-8,
                        br_levels: int = 11):
    """Solve the symmetric equilibrium at the given covariate point.

    Requires the solver inputs (diagonal value, winning probability, initial
    value) to agree across bidders at probe points; asymmetric instances are
    rejected.  Returns the profile and a solve report with the first-order
    condition residual and a best-response gap.
    """
    Z = np.asarray(Z, dtype=float)
    probe_gap = _symmetry_probe(model, Z)
    if probe_gap > probe_tol:
        raise DomainError(f"model is not symmetric at this Z (probe gap {probe_gap:.2e})")

    coarse = np.linspace(0.0, 1.0, 401)
    v_tab = np.array([conditional_diag_value(model, 0, a, Z) for a in coarse])
    om_tab = np.array([0.0] + [_symmetric_omega(model, a, Z) for a in coarse[1:]])
    v_fn = PchipInterpolator(coarse, v_tab)
    om_fn = PchipInterpolator(coarse, om_tab)
    b0 = float(model.valuation(0, np.zeros(model.n), Z))

    grid = np.linspace(0.0, 1.0, grid_points)
    vals = _solve_scalar_foc(lambda a: float(v_fn(a)), lambda a: float(om_fn(a)), b0,
                             grid, rtol=rtol)
    spline = CubicSpline(grid, vals)
    bid = GridBid(grid, vals, Z)
    profile = StrategyProfile((bid,) * model.n)

    chk = np.linspace(0.05, 0.95, 61)
    resid = np.abs(spline(chk, 1) * om_fn(chk) - (v_fn(chk) - spline(chk)))
    br = verify_best_response(model, profile, 0, np.linspace(0.1, 0.9, br_levels), Z)
    report = EquilibriumSolveReport(alpha_grid=grid, values=vals,
                                    max_foc_residual=float(np.max(resid)),
                                    best_response_gap=float(np.max(br.gaps)),
                                    symmetric_probe_gap=probe_gap)
    return profile, report


def solve_symmetric_fpa_linear(model: MixedSignalModel, grid_points: int = 2001,
                               rtol: float = 1e-11):
    """Covariate-parametric equilibrium for additive symmetric two-bidder models.

    With a common additive combiner and a covariate-free copula the
    equilibrium is linear in the covariates: one basis solve per slope
    component serves every Z.
    """
    from .combiners import PolynomialCombiner

    comb = model.combiners[0]
    if model.n != 2 or not model.is_symmetric():
        raise DomainError("linear-superposition solve needs a symmetric two-bidder model")
    if not isinstance(comb, PolynomialCombiner) or \
            any(sum(p) != 1 for p, c in comb.terms if c != 0.0):
        raise DomainError("linear-superposition solve needs an additive combiner")
    if model.copula.z_dependent:
        raise DomainError("linear-superposition solve needs a covariate-free copula")
    weights = np.zeros(2)
    for p, c in comb.terms:
        weights[int(np.argmax(p))] = c

    coarse = np.linspace(0.0, 1.0, 401)
    om_tab = np.array([0.0] + [_symmetric_omega(model, a, None) for a in coarse[1:]])
    om_fn = PchipInterpolator(coarse, om_tab)

    grid = np.linspace(0.0, 1.0, grid_points)
    basis = []
    for j in range(2):
        for d in range(model.dimension):
            gam = model.slopes[0][j]
            target = lambda a, jj=j, dd=d: weights[jj] * float(gam(a)[..., dd])
            b0 = target(0.0)
            vals = _solve_scalar_foc(target, lambda a: float(om_fn(a)), b0, grid, rtol=rtol)
            basis.append(CubicSpline(grid, vals))
    bid = SuperpositionBid(tuple(basis))
    return StrategyProfile((bid, bid))


def verify_best_response(model, profile, i: int, levels, Z,
                         deviation_points: int = 41, tolerance: float = 1e-4) -> BestResponseReport:
    """Max payoff improvement over a deviation grid, per test level.

    Only the focal bidder is required to best-respond; rival strategies are
    taken as given.
    """
    levels = np.asarray(levels, dtype=float)
    devs = np.linspace(0.0, 1.0, deviation_points)
    gaps = np.empty(levels.size)
    for s, alpha in enumerate(levels):
        pay = np.array([_payoff_at_level(model, profile, i, a, float(alpha), Z) for a in devs])
        own = _payoff_at_level(model, profile, i, float(alpha), float(alpha), Z)
        gaps[s] = float(np.max(pay) - own)
    return BestResponseReport(levels=levels, gaps=gaps, tolerance=tolerance)
