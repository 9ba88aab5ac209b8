"""Estimated field built from a bid dataset.

Conditional bid quantile curves come from kernel-weighted quantile
regression with a local polynomial in the covariates (the local linear
coefficients double as covariate gradients), monotone-rearranged across
levels.  Signals are imputed by inverting weighted bid CDFs on a covariate
grid; the winning-probability pieces are smoothed-indicator regressions on
the imputed signals.  Sparse neighborhoods yield NaN plus a flag entry
rather than a failure.
"""

from __future__ import annotations

import itertools

import numpy as np
import statsmodels.api as sm
from scipy.interpolate import PchipInterpolator
from scipy.stats import norm

from ..model import DomainError
from ..simulate import BidDataset
from .base import AuctionField, SmootherConfig

_SQRT2PI = np.sqrt(2.0 * np.pi)


def _gauss_kernel(u):
    return np.exp(-0.5 * u * u) / _SQRT2PI


class _LocalQuantileFit:
    """Per-(bidder, covariate point) quantile curve with covariate slopes."""

    def __init__(self, levels, curve, zslopes, ess):
        order = np.argsort(curve, kind="stable")
        self.levels = levels
        self.curve = curve[order]            # monotone rearrangement
        self.zslopes = zslopes[order]
        self.ess = ess
        self._interp = PchipInterpolator(levels, np.maximum.accumulate(self.curve))

    def quantile(self, alpha):
        a = np.clip(np.asarray(alpha, dtype=float), self.levels[0], self.levels[-1])
        lo, hi = self.levels[0], self.levels[-1]
        out = self._interp(a)
        # linear extension beyond the fitted level range
        alpha = np.asarray(alpha, dtype=float)
        slope_lo = self._interp.derivative()(lo)
        slope_hi = self._interp.derivative()(hi)
        out = np.where(alpha < lo, self._interp(lo) + (alpha - lo) * slope_lo, out)
        out = np.where(alpha > hi, self._interp(hi) + (alpha - hi) * slope_hi, out)
        return out

    def quantile_deriv(self, alpha, window: float):
        """Local-quadratic slope of the rearranged curve in the level."""
        a = float(np.asarray(alpha))
        mask = np.abs(self.levels - a) <= window
        if mask.sum() < 4:
            idx = np.argsort(np.abs(self.levels - a))[:4]
            mask = np.zeros_like(mask)
            mask[idx] = True
        x = self.levels[mask] - a
        y = self.curve[mask]
        w = np.maximum(1.0 - np.abs(x) / max(window, np.max(np.abs(x)) + 1e-12), 0.05)
        X = np.column_stack([np.ones_like(x), x, x * x])
        beta = np.linalg.lstsq(X * w[:, None], y * w, rcond=None)[0]
        return float(beta[1])

    def cdf(self, b):
        return np.interp(np.asarray(b, dtype=float), self.curve, self.levels,
                         left=0.0, right=1.0)

    def zslope_at(self, alpha):
        a = np.clip(float(np.asarray(alpha)), self.levels[0], self.levels[-1])
        cols = [np.interp(a, self.levels, self.zslopes[:, d])
                for d in range(self.zslopes.shape[1])]
        return np.array(cols)


class EmpiricalField(AuctionField):
    """Field estimated from observed bids and covariates."""

    def __init__(self, data: BidDataset, i: int, config: SmootherConfig | None = None):
        if data.n_auctions == 0:
            raise DomainError("dataset is empty")
        self.data = data
        self.focal = i
        self.n = data.n
        self.dimension = data.dimension
        self.config = config or SmootherConfig()
        self.flags: list[str] = []

        self._bids, self._Z = data._wide()
        m = self._bids.shape[0]
        self._zflat = self._Z.reshape(m, -1)
        dims = self._zflat.shape[1]
        std = self._zflat.std(axis=0)
        std = np.where(std > 1e-12, std, 1.0)
        if self.config.bandwidth_z is not None:
            self._h = np.full(dims, self.config.bandwidth_z)
        else:
            self._h = self.config.bandwidth_z_factor * std * m ** (-1.0 / (4 + dims))
        self._fit_cache: dict = {}
        self._imputed = None
        self._ecdf_nodes = None

    # --- local quantile machinery -------------------------------------------

    def _weights(self, Z):
        z0 = np.asarray(Z, dtype=float).reshape(-1)
        u = (self._zflat - z0) / self._h
        return np.prod(_gauss_kernel(u), axis=1)

    def _design(self, Z):
        z0 = np.asarray(Z, dtype=float).reshape(-1)
        dz = self._zflat - z0
        cols = [np.ones(len(dz))] + [dz[:, d] for d in range(dz.shape[1])]
        if self.config.poly_order >= 2:
            for d in range(dz.shape[1]):
                for e in range(d, dz.shape[1]):
                    cols.append(dz[:, d] * dz[:, e])
        return np.column_stack(cols)

    def _fit(self, j: int, Z) -> _LocalQuantileFit:
        key = (j, tuple(np.round(np.asarray(Z, dtype=float).reshape(-1), 10)))
        hit = self._fit_cache.get(key)
        if hit is not None:
            return hit
        w = self._weights(Z)
        ess = float(w.sum() ** 2 / np.maximum((w ** 2).sum(), 1e-300))
        keep = w > 1e-8 * w.max()
        cfg = self.config
        lo, hi = cfg.level_clamp, 1.0 - cfg.level_clamp
        levels = np.clip(cfg.alpha_grid, lo, hi)
        levels = np.unique(levels)
        dims = self._zflat.shape[1]
        if ess < cfg.min_effective_mass:
            self.flags.append(f"sparse neighborhood for bidder {j + 1} near Z={np.ravel(Z)}")
            fit = _LocalQuantileFit(levels, np.full(levels.size, np.nan),
                                    np.full((levels.size, dims), np.nan), ess)
            self._fit_cache[key] = fit
            return fit
        ww = w[keep]
        X = self._design(Z)[keep]
        y = self._bids[keep, j]
        # absorb kernel weights into the check loss: rho_a(w u) = w rho_a(u)
        Xw = X * ww[:, None]
        yw = y * ww
        model = sm.QuantReg(yw, Xw)
        curve = np.empty(levels.size)
        zsl = np.empty((levels.size, dims))
        for s, lev in enumerate(levels):
            try:
                res = model.fit(q=float(lev), p_tol=1e-8, max_iter=2000)
                curve[s] = res.params[0]
                zsl[s] = res.params[1:1 + dims]
            except Exception:
                curve[s] = np.nan
                zsl[s] = np.nan
        if np.isnan(curve).any():
            good = ~np.isnan(curve)
            curve = np.interp(levels, levels[good], curve[good])
            for d in range(dims):
                zsl[:, d] = np.interp(levels, levels[good], zsl[good, d])
        fit = _LocalQuantileFit(levels, curve, zsl, ess)
        self._fit_cache[key] = fit
        return fit

    # --- bid side --------------------------------------------------------------

    def bid_quantile(self, alpha, Z):
        return self._fit(self.focal, Z).quantile(alpha)

    def bid_quantile_deriv(self, alpha, Z):
        fit = self._fit(self.focal, Z)
        a = np.asarray(alpha, dtype=float)
        if a.ndim == 0:
            return fit.quantile_deriv(float(a), self.config.bandwidth_alpha)
        return np.array([fit.quantile_deriv(float(x), self.config.bandwidth_alpha) for x in a])

    def bid_quantile_zgrad(self, alpha, Z) -> np.ndarray:
        """Covariate gradient of the focal bid quantile, shape (n*D,)."""
        return self._fit(self.focal, Z).zslope_at(alpha)

    def bid_cdf(self, j, b, Z):
        return self._fit(j, Z).cdf(b)

    # --- warps --------------------------------------------------------------------

    def warp(self, j, alpha, Z):
        if j == self.focal:
            return np.asarray(alpha, dtype=float).copy()
        b = self._fit(self.focal, Z).quantile(alpha)
        return self._fit(j, Z).cdf(b)

    def warp_slope(self, j, alpha, Z):
        fi = self._fit(self.focal, Z)
        fj = self._fit(j, Z)
        a = np.asarray(alpha, dtype=float)
        lev_j = fj.cdf(fi.quantile(a))
        di = fi.quantile_deriv(float(a), self.config.bandwidth_alpha) if a.ndim == 0 else \
            np.array([fi.quantile_deriv(float(x), self.config.bandwidth_alpha) for x in a])
        dj = fj.quantile_deriv(float(lev_j), self.config.bandwidth_alpha) if a.ndim == 0 else \
            np.array([fj.quantile_deriv(float(x), self.config.bandwidth_alpha) for x in lev_j])
        return di / dj

    def warp_slope_dalpha(self, j, alpha, Z):
        h = 0.02
        a = float(np.asarray(alpha))
        lo, hi = max(a - h, 0.0), min(a + h, 1.0)
        return (float(self.warp_slope(j, hi, Z)) - float(self.warp_slope(j, lo, Z))) / (hi - lo)

    def warp_zgrad(self, j, k, alpha, Z):
        """Chain rule through the two fitted quantile surfaces."""
        fi = self._fit(self.focal, Z)
        fj = self._fit(j, Z)
        a = float(np.asarray(alpha))
        b = float(fi.quantile(a))
        lev_j = float(fj.cdf(b))
        dj = fj.quantile_deriv(lev_j, self.config.bandwidth_alpha)
        gi = fi.zslope_at(a).reshape(self.n, self.dimension)
        gj = fj.zslope_at(lev_j).reshape(self.n, self.dimension)
        return (gi[k] - gj[k]) / dj

    def warp_zgrad_scaled(self, j, k, alpha, Z):
        a = float(np.asarray(alpha))
        a = min(max(a, 0.05), 0.95)
        Z = np.asarray(Z, dtype=float)
        return float(Z[k] @ self.warp_zgrad(j, k, a, Z)) / (a * (1.0 - a))

    def warp_slope_zgrad_contracted(self, j, k, alpha, Z):
        Z = np.asarray(Z, dtype=float)
        h = self.config.fd_step
        def at(eps):
            Zs = Z.copy()
            Zs[k] = (1.0 + eps) * Z[k]
            return float(self.warp_slope(j, alpha, Zs))
        return (at(h) - at(-h)) / (2 * h)

    # --- signal imputation -----------------------------------------------------

    def _node_axes(self):
        lo = self._zflat.min(axis=0) - 1e-9
        hi = self._zflat.max(axis=0) + 1e-9
        return [np.linspace(lo[d], hi[d], self.config.imputation_nodes)
                for d in range(self._zflat.shape[1])]

    def _build_imputation(self):
        axes = self._node_axes()
        dims = len(axes)
        if dims > 4:
            raise NotImplementedError("imputation grid supports up to 4 covariate dims")
        grids = {}
        for node in itertools.product(*(range(len(ax)) for ax in axes)):
            z0 = np.array([axes[d][node[d]] for d in range(dims)])
            w = np.prod(_gauss_kernel((self._zflat - z0) / self._h), axis=1)
            per_bidder = []
            for j in range(self.n):
                order = np.argsort(self._bids[:, j], kind="stable")
                bs = self._bids[order, j]
                ws = w[order]
                cum = np.cumsum(ws)
                mid = (cum - 0.5 * ws) / cum[-1]
                per_bidder.append((bs, mid))
            grids[node] = per_bidder
        self._ecdf_nodes = (axes, grids)

    def _node_cdf(self, node, j, b):
        bs, mid = self._ecdf_nodes[1][node][j]
        return np.interp(b, bs, mid, left=0.0, right=1.0)

    def imputed_signals(self) -> np.ndarray:
        """Signal levels recovered by inverting local bid CDFs at each
        auction's own covariates (multilinear interpolation across nodes)."""
        if self._imputed is not None:
            return self._imputed
        if self._ecdf_nodes is None:
            self._build_imputation()
        axes, _ = self._ecdf_nodes
        dims = len(axes)
        m = self._bids.shape[0]
        out = np.empty((m, self.n))
        # surrounding node indices and weights per dimension
        lo_idx, lam = [], []
        for d in range(dims):
            ax = axes[d]
            pos = np.clip(np.searchsorted(ax, self._zflat[:, d]) - 1, 0, len(ax) - 2)
            lo_idx.append(pos)
            lam.append(np.clip((self._zflat[:, d] - ax[pos]) / (ax[pos + 1] - ax[pos]), 0.0, 1.0))
        for j in range(self.n):
            acc = np.zeros(m)
            for corner in itertools.product((0, 1), repeat=dims):
                wt = np.ones(m)
                for d, c in enumerate(corner):
                    wt = wt * (lam[d] if c else 1.0 - lam[d])
                groups: dict = {}
                for t in range(m):
                    node = tuple(lo_idx[d][t] + corner[d] for d in range(dims))
                    groups.setdefault(node, []).append(t)
                for node, idx in groups.items():
                    idx = np.asarray(idx)
                    acc[idx] += wt[idx] * self._node_cdf(node, j, self._bids[idx, j])
            out[:, j] = acc
        self._imputed = np.clip(out, 1e-6, 1 - 1e-6)
        return self._imputed

    # --- winning side ------------------------------------------------------------

    def _omega_parts(self, a: float, alpha: float, Z, want_slope: bool):
        sig = self.imputed_signals()
        cfg = self.config
        own = sig[:, self.focal]
        kern = _gauss_kernel((own - alpha) / cfg.omega_bandwidth)
        if not cfg.pool_covariates:
            kern = kern * self._weights(Z)
        denom = kern.sum()
        if denom <= 0:
            return np.nan, np.nan
        probs = np.ones(len(sig))
        slope = np.zeros(len(sig))
        h = cfg.omega_bandwidth
        for j in self.rivals():
            q = float(np.clip(self.warp(j, a, Z), 0.0, 1.0))
            u = (q - sig[:, j]) / h
            cdf_j = norm.cdf(u)
            if want_slope:
                gj = float(self.warp_slope(j, a, Z))
                others = probs.copy()
                slope = slope * cdf_j + others * norm.pdf(u) / h * gj
            probs = probs * cdf_j
        omega = float((kern * probs).sum() / denom)
        dome = float((kern * slope).sum() / denom) if want_slope else np.nan
        return omega, dome

    def omega(self, a, alpha, Z):
        return self._omega_parts(float(a), float(alpha), Z, want_slope=False)[0]

    def omega_slope_diag(self, alpha, Z):
        return self._omega_parts(float(alpha), float(alpha), Z, want_slope=True)[1]

    def omega_ratio(self, alpha, Z):
        om, dome = self._omega_parts(float(alpha), float(alpha), Z, want_slope=True)
        if not np.isfinite(dome) or dome <= 1e-12:
            self.flags.append(f"vanishing winning-probability slope near alpha={alpha}")
            return np.nan
        return om / dome

    # --- frontier value ------------------------------------------------------------

    def u_value(self, alpha, Z):
        a = np.asarray(alpha, dtype=float)
        if a.ndim > 0:
            return np.array([self.u_value(float(x), Z) for x in a])
        return float(self.bid_quantile(a, Z)) \
            + float(self.bid_quantile_deriv(a, Z)) * float(self.omega_ratio(a, Z))

    def u_dalpha(self, alpha, Z):
        h = 0.02
        a = float(np.asarray(alpha))
        lo, hi = max(a - h, 0.01), min(a + h, 0.99)
        return (self.u_value(hi, Z) - self.u_value(lo, Z)) / (hi - lo)

    def u_zgrad(self, k, alpha, Z):
        Z = np.asarray(Z, dtype=float)
        out = np.empty(self.dimension)
        h = self.config.fd_step
        for d in range(self.dimension):
            Zp, Zm = Z.copy(), Z.copy()
            Zp[k, d] += h
            Zm[k, d] = max(Zm[k, d] - h, 1e-6)
            out[d] = (self.u_value(alpha, Zp) - self.u_value(alpha, Zm)) / (Zp[k, d] - Zm[k, d])
        return out

    def u_zgrad_contracted(self, k, alpha, Z):
        Z = np.asarray(Z, dtype=float)
        return float(Z[k] @ self.u_zgrad(k, alpha, Z))

    # --- numerator pieces and frontier densities (estimated) -------------------------

    def w_value(self, alpha, Z):
        return self.u_value(alpha, Z) * self.omega_slope_diag(alpha, Z)

    def w_dalpha(self, alpha, Z):
        h = 0.02
        a = float(np.asarray(alpha))
        lo, hi = max(a - h, 0.01), min(a + h, 0.99)
        return (self.w_value(hi, Z) - self.w_value(lo, Z)) / (hi - lo)

    def w_zgrad_contracted(self, k, alpha, Z):
        Z = np.asarray(Z, dtype=float)
        h = self.config.fd_step
        def at(eps):
            Zs = Z.copy()
            Zs[k] = (1.0 + eps) * Z[k]
            return float(self.w_value(alpha, Zs))
        return (at(h) - at(-h)) / (2 * h)

    def frontier_density(self, j, t, alpha, Z):
        """Kernel joint-density estimate at the frontier point."""
        sig = self.imputed_signals()
        h = self.config.omega_bandwidth
        point = np.empty(self.n)
        point[self.focal] = alpha
        point[j] = np.asarray(t, dtype=float)
        for k in self.rivals():
            if k != j:
                point[k] = float(np.clip(self.warp(k, alpha, Z), 0.0, 1.0))
        u = (sig - point) / h
        return float(np.prod(_gauss_kernel(u), axis=1).mean() / h ** self.n)

    def frontier_density_dalpha(self, j, t, alpha, Z):
        h = 0.02
        a = float(np.asarray(alpha))
        lo, hi = max(a - h, 0.01), min(a + h, 0.99)
        return (self.frontier_density(j, t, hi, Z)
                - self.frontier_density(j, t, lo, Z)) / (hi - lo)

    def frontier_density_zgrad_contracted(self, j, k, t, alpha, Z):
        Z = np.asarray(Z, dtype=float)
        h = self.config.fd_step
        def at(eps):
            Zs = Z.copy()
            Zs[k] = (1.0 + eps) * Z[k]
            return float(self.frontier_density(j, t, alpha, Zs))
        return (at(h) - at(-h)) / (2 * h)

    def density_at_frontier(self, alpha, Z):
        j = self.rivals()[0]
        return self.frontier_density(j, float(np.clip(self.warp(j, alpha, Z), 0.0, 1.0)),
                                     alpha, Z)
