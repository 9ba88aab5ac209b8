"""Bid strategies: analytic fixtures, warped families, and solved profiles.

A profile holds one monotone bid function per bidder, all sharing common
initial and terminal values.  The synthetic fixture family pins the
cross-bidder quantile warp G_j B_i exactly (bidder j's quantile level at
bidder i's level-alpha bid), which is what the identification machinery
differentiates, so its covariate gradients are available in closed form.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.interpolate import CubicSpline, PchipInterpolator


def invert_monotone(fn, lo, hi, targets, iters: int = 90):
    """Vectorized bisection inverse of a scalar-monotone increasing map."""
    t = np.asarray(targets, dtype=float)
    lo = np.broadcast_to(np.asarray(lo, dtype=float), t.shape).copy()
    hi = np.broadcast_to(np.asarray(hi, dtype=float), t.shape).copy()
    for _ in range(iters):
        mid = 0.5 * (lo + hi)
        high = fn(mid) > t
        hi = np.where(high, mid, hi)
        lo = np.where(high, lo, mid)
    return 0.5 * (lo + hi)


def _zflat(Z):
    """Flatten covariates to (..., n*D)."""
    Z = np.asarray(Z, dtype=float)
    return Z.reshape(Z.shape[:-2] + (-1,))


class BidFunction:
    """Monotone bid map on [0, 1]; all evaluators broadcast over alpha and Z."""

    def value(self, alpha, Z):
        raise NotImplementedError

    def deriv(self, alpha, Z):
        raise NotImplementedError

    def inverse(self, b, Z):
        """Quantile level of bid b (the conditional bid CDF)."""
        b = np.asarray(b, dtype=float)
        return invert_monotone(lambda a: self.value(a, Z), np.zeros(b.shape),
                               np.ones(b.shape), b)


@dataclass(frozen=True)
class LinearIndexBid(BidFunction):
    """s(alpha; Z) = (w0 . vec Z) + (w1 . vec Z) * alpha.

    Both index weights must yield positive coefficients on the covariate
    domain, which keeps bids positive and strictly increasing.
    """

    w0: np.ndarray
    w1: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "w0", np.asarray(self.w0, dtype=float).ravel())
        object.__setattr__(self, "w1", np.asarray(self.w1, dtype=float).ravel())

    def _coefs(self, Z):
        zf = _zflat(Z)
        return zf @ self.w0, zf @ self.w1

    def value(self, alpha, Z):
        c0, c1 = self._coefs(Z)
        return c0 + c1 * np.asarray(alpha, dtype=float)

    def deriv(self, alpha, Z):
        _, c1 = self._coefs(Z)
        return np.broadcast_to(c1, np.broadcast_shapes(np.shape(alpha), np.shape(c1))).copy()

    def inverse(self, b, Z):
        c0, c1 = self._coefs(Z)
        return (np.asarray(b, dtype=float) - c0) / c1


@dataclass(frozen=True)
class ScaledStrategy(BidFunction):
    """s(alpha; Z) = scale * base(alpha; Z): a non-best-response perturbation."""

    base: BidFunction
    scale: float = 1.0
    shift: float = 0.0

    def value(self, alpha, Z):
        return self.scale * self.base.value(alpha, Z) + self.shift

    def deriv(self, alpha, Z):
        return self.scale * self.base.deriv(alpha, Z)

    def inverse(self, b, Z):
        return self.base.inverse((np.asarray(b, dtype=float) - self.shift) / self.scale, Z)


class DeltaFunction:
    """Covariate-driven warp amplitude with an exact gradient."""

    def value(self, Z) -> float:
        raise NotImplementedError

    def grad(self, Z) -> np.ndarray:
        """Shape (n, D)."""
        raise NotImplementedError


@dataclass(frozen=True)
class TanhDelta(DeltaFunction):
    """delta(Z) = weight * tanh(sum lin_coefs * Z + offset)."""

    weight: float
    lin_coefs: np.ndarray
    offset: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "lin_coefs", np.asarray(self.lin_coefs, dtype=float))

    def value(self, Z):
        Z = np.asarray(Z, dtype=float)
        s = np.sum(self.lin_coefs * Z, axis=(-2, -1)) + self.offset
        return self.weight * np.tanh(s)

    def grad(self, Z) -> np.ndarray:
        Z = np.asarray(Z, dtype=float)
        s = np.sum(self.lin_coefs * Z, axis=(-2, -1)) + self.offset
        scale = self.weight * (1.0 - np.tanh(s) ** 2)
        return np.asarray(scale)[..., None, None] * self.lin_coefs


@dataclass(frozen=True)
class ConstantDelta(DeltaFunction):
    amplitude: float = 0.0

    def value(self, Z):
        Z = np.asarray(Z, dtype=float)
        if Z.ndim <= 2:
            return self.amplitude
        return np.full(Z.shape[:-2], self.amplitude)

    def grad(self, Z) -> np.ndarray:
        Z = np.asarray(Z, dtype=float)
        return np.zeros(Z.shape[:-2] + Z.shape[-2:])


@dataclass(frozen=True)
class QuadraticWarp:
    """q(alpha; Z) = alpha + delta(Z) * alpha * (1 - alpha), |delta| < 1.

    Fixes endpoints 0 and 1, is strictly increasing, and has the covariate
    gradient alpha(1-alpha) * grad delta, so the endpoint-scaled gradient
    equals grad delta exactly at every level.
    """

    delta: DeltaFunction

    def value(self, alpha, Z):
        a = np.asarray(alpha, dtype=float)
        return a + self.delta.value(Z) * a * (1.0 - a)

    def deriv(self, alpha, Z):
        a = np.asarray(alpha, dtype=float)
        return 1.0 + self.delta.value(Z) * (1.0 - 2.0 * a)

    def deriv2(self, alpha, Z):
        a = np.asarray(alpha, dtype=float)
        return np.broadcast_to(-2.0 * np.asarray(self.delta.value(Z)),
                               np.broadcast_shapes(a.shape, np.shape(self.delta.value(Z)))).copy()

    def inverse(self, q, Z):
        d = np.asarray(self.delta.value(Z), dtype=float)
        q = np.asarray(q, dtype=float)
        safe = np.where(np.abs(d) < 1e-14, 1.0, d)
        disc = (1.0 + safe) ** 2 - 4.0 * safe * q
        root = (1.0 + safe - np.sqrt(np.maximum(disc, 0.0))) / (2.0 * safe)
        return np.where(np.abs(d) < 1e-14, q, root)

    def zgrad(self, alpha, Z) -> np.ndarray:
        """Gradient in all covariate entries, shape alpha.shape + (n, D)."""
        a = np.asarray(alpha, dtype=float)
        return a[..., None, None] * (1.0 - a)[..., None, None] * self.delta.grad(Z)

    def scaled_zgrad(self, alpha, Z) -> np.ndarray:
        """zgrad / (alpha (1 - alpha)); constant in alpha for this family."""
        g = self.delta.grad(Z)
        a = np.asarray(alpha, dtype=float)
        return np.broadcast_to(g, a.shape + g.shape).copy()


IDENTITY_WARP = QuadraticWarp(ConstantDelta(0.0))


@dataclass(frozen=True)
class ComposedWarp:
    """q_j composed with the inverse of q_i: the cross warp of two warped bids."""

    inner: QuadraticWarp      # q_i
    outer: QuadraticWarp      # q_j

    def value(self, alpha, Z):
        return self.outer.value(self.inner.inverse(np.asarray(alpha, dtype=float), Z), Z)

    def deriv(self, alpha, Z):
        beta = self.inner.inverse(np.asarray(alpha, dtype=float), Z)
        return self.outer.deriv(beta, Z) / self.inner.deriv(beta, Z)

    def deriv2(self, alpha, Z):
        beta = self.inner.inverse(np.asarray(alpha, dtype=float), Z)
        di = self.inner.deriv(beta, Z)
        return (self.outer.deriv2(beta, Z) * di
                - self.outer.deriv(beta, Z) * self.inner.deriv2(beta, Z)) / di ** 3

    def inverse(self, q, Z):
        return self.inner.value(self.outer.inverse(np.asarray(q, dtype=float), Z), Z)

    def zgrad(self, alpha, Z):
        beta = self.inner.inverse(np.asarray(alpha, dtype=float), Z)
        di = self.inner.deriv(beta, Z)
        chain = -self.inner.zgrad(beta, Z) / di[..., None, None]
        return self.outer.deriv(beta, Z)[..., None, None] * chain + self.outer.zgrad(beta, Z)

    def scaled_zgrad(self, alpha, Z):
        a = np.asarray(alpha, dtype=float)
        beta = self.inner.inverse(a, Z)
        di = self.inner.deriv(beta, Z)
        core = (self.outer.scaled_zgrad(beta, Z)
                - (self.outer.deriv(beta, Z) / di)[..., None, None]
                * self.inner.scaled_zgrad(beta, Z))
        # beta(1-beta) / (alpha(1-alpha)) with its one-sided endpoint limits
        with np.errstate(divide="ignore", invalid="ignore"):
            ratio = beta * (1.0 - beta) / (a * (1.0 - a))
        ratio = np.where(a * (1.0 - a) < 1e-12, 1.0 / di, ratio)
        return ratio[..., None, None] * core


@dataclass(frozen=True)
class WarpedBid(BidFunction):
    """s_j with a pinned quantile warp against a base strategy.

    s_j(beta; Z) = base(warp^{-1}(beta; Z); Z), so base^{-1}(s_j(...)) and
    the cross quantile map G_j B_base equal the warp exactly.
    """

    base: BidFunction
    warp: QuadraticWarp

    def value(self, alpha, Z):
        return self.base.value(self.warp.inverse(np.asarray(alpha, dtype=float), Z), Z)

    def deriv(self, alpha, Z):
        a0 = self.warp.inverse(np.asarray(alpha, dtype=float), Z)
        return self.base.deriv(a0, Z) / self.warp.deriv(a0, Z)

    def inverse(self, b, Z):
        return self.warp.value(self.base.inverse(b, Z), Z)


@dataclass(frozen=True)
class SuperpositionBid(BidFunction):
    """s(alpha; Z) = sum_k (vec Z)_k * H_k(alpha) for solved basis curves H_k.

    The equilibrium of an additive symmetric model with covariate-free
    signal dependence is linear in Z, so one basis solve serves every Z.
    """

    basis: tuple          # tuple of CubicSpline over flattened (bidder, dim)

    def _stack(self, alpha, deriv=False):
        a = np.asarray(alpha, dtype=float)
        cols = [h(a, 1) if deriv else h(a) for h in self.basis]
        return np.stack(cols, axis=-1)

    def value(self, alpha, Z):
        return np.sum(_zflat(Z) * self._stack(alpha), axis=-1)

    def deriv(self, alpha, Z):
        return np.sum(_zflat(Z) * self._stack(alpha, deriv=True), axis=-1)


@dataclass(frozen=True)
class GridBid(BidFunction):
    """Monotone interpolant of a solved strategy at one covariate point."""

    alpha_grid: np.ndarray
    values: np.ndarray
    z_point: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "_interp",
                           PchipInterpolator(self.alpha_grid, self.values))
        object.__setattr__(self, "_dinterp", self._interp.derivative())

    def _check_z(self, Z):
        if not np.allclose(np.asarray(Z, dtype=float), self.z_point, rtol=1e-9, atol=1e-12):
            raise ValueError("grid strategy was solved at a different covariate point")

    def value(self, alpha, Z):
        self._check_z(Z)
        return self._interp(np.asarray(alpha, dtype=float))

    def deriv(self, alpha, Z):
        self._check_z(Z)
        return self._dinterp(np.asarray(alpha, dtype=float))


@dataclass(frozen=True)
class StrategyProfile:
    """One bid function per bidder with common endpoints."""

    bids: tuple

    @property
    def n(self) -> int:
        return len(self.bids)

    def value(self, j: int, alpha, Z):
        return self.bids[j].value(alpha, Z)

    def deriv(self, j: int, alpha, Z):
        return self.bids[j].deriv(alpha, Z)

    def inverse(self, j: int, b, Z):
        return self.bids[j].inverse(b, Z)

    def quantile_warp(self, j: int, i: int, alpha, Z):
        """G_j B_i (alpha | Z): bidder j's level at bidder i's level-alpha bid."""
        if i == j:
            return np.asarray(alpha, dtype=float).copy()
        w = self.exact_warp(j, i)
        if w is not None:
            return w.value(np.asarray(alpha, dtype=float), Z)
        return self.bids[j].inverse(self.bids[i].value(alpha, Z), Z)

    def exact_warp(self, j: int, i: int):
        """The analytic warp q with G_j B_i = q, when the family pins it.

        Returns an object with value/deriv/deriv2/inverse/zgrad/scaled_zgrad,
        or None when only numeric inversion is available.
        """
        bi, bj = self.bids[i], self.bids[j]
        if bi is bj:
            return IDENTITY_WARP
        base_i = bi.base if isinstance(bi, WarpedBid) else bi
        base_j = bj.base if isinstance(bj, WarpedBid) else bj
        if base_i is not base_j:
            return None
        wi = bi.warp if isinstance(bi, WarpedBid) else IDENTITY_WARP
        wj = bj.warp if isinstance(bj, WarpedBid) else IDENTITY_WARP
        if isinstance(wi.delta, ConstantDelta) and wi.delta.amplitude == 0.0:
            return wj
        return ComposedWarp(wi, wj)

    def endpoint_gaps(self, Z):
        z0 = np.array([float(self.bids[j].value(0.0, Z)) for j in range(self.n)])
        z1 = np.array([float(self.bids[j].value(1.0, Z)) for j in range(self.n)])
        return float(np.ptp(z0)), float(np.ptp(z1))

    def validate(self, Z, grid_points: int = 101, tol: float = 1e-8):
        a = np.linspace(0.0, 1.0, grid_points)
        for j in range(self.n):
            d = self.bids[j].deriv(a, Z)
            if np.any(d <= 0):
                raise ValueError(f"bid function {j} not strictly increasing")
            if np.any(self.bids[j].value(a, Z) <= 0):
                raise ValueError(f"bid function {j} not positive")
        g0, g1 = self.endpoint_gaps(Z)
        if g0 > tol or g1 > tol:
            raise ValueError(f"endpoint gaps too large: {g0:.2e} at 0, {g1:.2e} at 1")


def make_synthetic_profile(n: int, base: BidFunction, deltas, probe_z) -> StrategyProfile:
    """Profile with pinned quantile warps against a common base strategy.

    deltas[j] is the warp amplitude function of bidder j (None for the
    base bidder or an exactly symmetric one).  Rejected when any |delta|
    reaches 1 on the probe covariates, where monotonicity would fail.
    """
    bids = []
    probe_z = np.asarray(probe_z, dtype=float)
    probes = probe_z if probe_z.ndim == 3 else probe_z[None]
    for j in range(n):
        d = deltas[j] if j < len(deltas) else None
        if d is None:
            bids.append(base)
            continue
        for Z in probes:
            if abs(d.value(Z)) >= 1.0:
                raise ValueError(f"|delta| >= 1 for bidder {j} at a probe covariate")
        bids.append(WarpedBid(base, QuadraticWarp(d)))
    return StrategyProfile(tuple(bids))


def closed_form_ipv_profile(n: int) -> StrategyProfile:
    """The independent-uniform private-value strategy (n-1) alpha / n."""
    factor = (n - 1) / n

    @dataclass(frozen=True)
    class _Ipv(BidFunction):
        def value(self, alpha, Z):
            return factor * np.asarray(alpha, dtype=float)

        def deriv(self, alpha, Z):
            return np.full(np.shape(alpha), factor)

        def inverse(self, b, Z):
            return np.asarray(b, dtype=float) / factor

    bid = _Ipv()
    return StrategyProfile((bid,) * n)


def grid_profile_from_solution(alpha_grid, values, Z, n: int) -> StrategyProfile:
    bid = GridBid(np.asarray(alpha_grid, dtype=float),
                  np.asarray(values, dtype=float), np.asarray(Z, dtype=float))
    return StrategyProfile((bid,) * n)
