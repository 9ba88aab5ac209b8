"""The identified-quantity interface shared by the exact and estimated fields.

Everything downstream (rank diagnostics, the constructive recovery, the
two-stage estimator) consumes this interface only, so recovery logic can be
tested noise-free against the exact implementation and end-to-end against
the estimated one.

Notation used throughout: for focal bidder i, warp(j, alpha, Z) is the
quantile level of bidder j's bid matching bidder i's level-alpha bid (the
composition of j's bid CDF with i's bid quantile function).  Its scaled
covariate gradient Z_k' grad_{Z_k} warp / (alpha (1 - alpha)) has finite
one-sided limits at the endpoints; rank diagnostics and the recovery
systems use that regularized form.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


class AuctionField:
    """Accessor bundle around one focal bidder's identified quantities."""

    n: int
    dimension: int
    focal: int

    # --- bid side ---------------------------------------------------------

    def bid_quantile(self, alpha, Z):
        raise NotImplementedError

    def bid_quantile_deriv(self, alpha, Z):
        raise NotImplementedError

    def bid_cdf(self, j: int, b, Z):
        raise NotImplementedError

    # --- cross-bidder quantile warps ---------------------------------------

    def warp(self, j: int, alpha, Z):
        raise NotImplementedError

    def warp_slope(self, j: int, alpha, Z):
        raise NotImplementedError

    def warp_slope_dalpha(self, j: int, alpha, Z):
        raise NotImplementedError

    def warp_zgrad(self, j: int, k: int, alpha, Z) -> np.ndarray:
        """Gradient of warp(j) in Z_k, shape (D,)."""
        raise NotImplementedError

    def warp_zgrad_scaled(self, j: int, k: int, alpha, Z) -> float:
        """Z_k' grad_{Z_k} warp(j) / (alpha (1-alpha)), finite at endpoints."""
        raise NotImplementedError

    def warp_slope_zgrad_contracted(self, j: int, k: int, alpha, Z) -> float:
        raise NotImplementedError

    # --- winning side -------------------------------------------------------

    def omega(self, a, alpha, Z):
        raise NotImplementedError

    def omega_slope_diag(self, alpha, Z):
        """d omega / d a on the diagonal a = alpha."""
        raise NotImplementedError

    def omega_ratio(self, alpha, Z):
        raise NotImplementedError

    # --- identified value along the winning frontier ------------------------

    def u_value(self, alpha, Z):
        raise NotImplementedError

    def u_dalpha(self, alpha, Z):
        raise NotImplementedError

    def u_zgrad(self, k: int, alpha, Z) -> np.ndarray:
        """Gradient of the frontier value in Z_k, shape (D,)."""
        raise NotImplementedError

    def u_zgrad_contracted(self, k: int, alpha, Z) -> float:
        Z = np.asarray(Z, dtype=float)
        return float(Z[k] @ self.u_zgrad(k, alpha, Z))

    def u_from_bid_side(self, alpha, Z):
        """Markup form: bid quantile plus its derivative times the win ratio."""
        return (self.bid_quantile(alpha, Z)
                + self.bid_quantile_deriv(alpha, Z) * self.omega_ratio(alpha, Z))

    # --- numerator of the frontier value (needed for three or more bidders) --

    def w_value(self, alpha, Z):
        raise NotImplementedError

    def w_dalpha(self, alpha, Z):
        raise NotImplementedError

    def w_zgrad_contracted(self, k: int, alpha, Z):
        raise NotImplementedError

    # --- conditional signal densities at the frontier ------------------------

    def frontier_density(self, j: int, t, alpha, Z):
        """Joint signal density at (alpha @ focal, t @ j, warp_k(alpha) @ others)."""
        raise NotImplementedError

    def frontier_density_dalpha(self, j: int, t, alpha, Z):
        raise NotImplementedError

    def frontier_density_zgrad_contracted(self, j: int, k: int, t, alpha, Z):
        raise NotImplementedError

    def density_at_frontier(self, alpha, Z):
        """Joint signal density with every rival pinned at its warp level."""
        raise NotImplementedError

    # --- misc ----------------------------------------------------------------

    def rivals(self):
        return [j for j in range(self.n) if j != self.focal]


@dataclass(frozen=True)
class SmootherConfig:
    """Tuning for the estimated field.

    Bandwidths are absolute (covariate units).  None means the scaled
    default c * std * m^(-1/(4 + dims)) computed from the data.
    """

    bandwidth_z: float | None = None
    bandwidth_z_factor: float = 1.2
    bandwidth_alpha: float = 0.08
    poly_order: int = 2
    alpha_grid: np.ndarray = field(default_factory=lambda: np.linspace(0.01, 0.99, 50))
    level_clamp: float = 0.01
    imputation_nodes: int = 10
    omega_bandwidth: float = 0.05
    pool_covariates: bool = True
    min_effective_mass: float = 40.0
    fd_step: float = 0.05
    boundary_correction: bool = True

    def __post_init__(self):
        if self.bandwidth_z is not None and self.bandwidth_z <= 0:
            raise ValueError("bandwidth must be positive")
        if self.bandwidth_alpha <= 0 or self.omega_bandwidth <= 0:
            raise ValueError("bandwidth must be positive")
        if self.poly_order < 1:
            raise ValueError("polynomial order must cover the requested first derivative")


def finite_difference(fn, x: float, h: float, lo: float = -np.inf, hi: float = np.inf,
                      order: int = 4) -> float:
    """Central five-point first derivative, shifting the stencil inside [lo, hi]."""
    if order == 2:
        offsets = np.array([-1.0, 0.0, 1.0])
        weights = np.array([-0.5, 0.0, 0.5])
    else:
        offsets = np.array([-2.0, -1.0, 0.0, 1.0, 2.0])
        weights = np.array([1.0, -8.0, 0.0, 8.0, -1.0]) / 12.0
    shift = 0.0
    if x + offsets[0] * h < lo:
        shift = lo - (x + offsets[0] * h)
    elif x + offsets[-1] * h > hi:
        shift = hi - (x + offsets[-1] * h)
    pts = x + shift + offsets * h
    vals = np.array([fn(float(p)) for p in pts])
    if shift == 0.0:
        return float(weights @ vals) / h
    # non-centered: differentiate the local interpolating polynomial at x
    coef = np.polyfit(pts - x, vals, len(pts) - 1)
    return float(np.polyval(np.polyder(coef), 0.0))


def bracket_quad(q: float, nodes: int = 48):
    """Nodes/weights for integrals of signal functions over [0, q].

    Works in normal space (t = F(x)), where copula densities are smooth and
    their algebraic endpoint tails in signal space are absorbed by the
    weight.  Splits wide ranges into two panels around the mode.
    """
    from scipy.special import ndtr, ndtri

    q = float(q)
    if q <= 0.0:
        return np.zeros(0), np.zeros(0)
    x_hi = ndtri(min(q, 1.0 - 1e-14))
    x_lo = max(-8.5, x_hi - 17.0)
    gx, gw = np.polynomial.legendre.leggauss(max(8, nodes // 2))

    def panel(lo, hi):
        x = 0.5 * (hi - lo) * (gx + 1.0) + lo
        w = 0.5 * (hi - lo) * gw
        dens = np.exp(-0.5 * x * x) / np.sqrt(2.0 * np.pi)
        return ndtr(x), w * dens

    if x_hi - x_lo > 6.0:
        mid = min(max(0.5 * (x_lo + x_hi), x_lo + 3.0), x_hi - 3.0)
        t1, w1 = panel(x_lo, mid)
        t2, w2 = panel(mid, x_hi)
        return np.concatenate([t1, t2]), np.concatenate([w1, w2])
    return panel(x_lo, x_hi)


def directional_zderiv(fn, Z, k: int, h: float = 1e-5) -> float:
    """Z_k-contracted gradient via the dilation derivative d/de fn((1+e) Z_k)."""
    Z = np.asarray(Z, dtype=float)
    def at(eps):
        Zs = Z.copy()
        Zs[k] = (1.0 + eps) * Z[k]
        return fn(Zs)
    return (at(h) - at(-h)) / (2 * h)
