"""Exact field built from generating primitives.

The frontier value is computed through its structural form (the valuation
evaluated along the winning frontier for two bidders; the boundary-integral
ratio for three), so it is available noise-free together with exact
derivatives wherever the fixture family supplies analytic warp gradients.
"""

from __future__ import annotations

import numpy as np

from ..equilibrium import winning_probability
from ..model import MixedSignalModel
from ..strategies import StrategyProfile
from .base import AuctionField, bracket_quad, directional_zderiv, finite_difference

_EPS_ENDPOINT = 1e-9


class _NumericWarp:
    """Finite-difference warp accessors for profiles without analytic warps."""

    def __init__(self, profile: StrategyProfile, j: int, i: int,
                 h_alpha: float = 2e-4, h_z: float = 1e-5):
        self.profile, self.j, self.i = profile, j, i
        self.h_alpha, self.h_z = h_alpha, h_z

    def value(self, alpha, Z):
        return self.profile.quantile_warp(self.j, self.i, alpha, Z)

    def deriv(self, alpha, Z):
        f = lambda a: float(self.profile.quantile_warp(self.j, self.i, a, Z))
        a = np.asarray(alpha, dtype=float)
        if a.ndim == 0:
            return finite_difference(f, float(a), self.h_alpha, 0.0, 1.0)
        return np.array([finite_difference(f, float(x), self.h_alpha, 0.0, 1.0) for x in a])

    def deriv2(self, alpha, Z):
        g = lambda a: float(self.deriv(a, Z))
        return finite_difference(g, float(alpha), 10 * self.h_alpha, 0.0, 1.0, order=2)

    def zgrad(self, alpha, Z):
        Z = np.asarray(Z, dtype=float)
        out = np.zeros(Z.shape)
        for k in range(Z.shape[0]):
            for d in range(Z.shape[1]):
                def f(v, k=k, d=d):
                    Zs = Z.copy()
                    Zs[k, d] = v
                    return float(self.profile.quantile_warp(self.j, self.i, alpha, Zs))
                out[k, d] = finite_difference(f, float(Z[k, d]), self.h_z * max(1.0, Z[k, d]),
                                              order=2)
        return out

    def scaled_zgrad(self, alpha, Z):
        a = float(np.asarray(alpha))
        a_eval = min(max(a, 1e-3), 1 - 1e-3)
        denom = a_eval * (1.0 - a_eval)
        return self.zgrad(a_eval, Z) / denom


class OracleField(AuctionField):
    """Field accessors computed exactly (or by quadrature) from model + profile."""

    def __init__(self, model: MixedSignalModel, profile: StrategyProfile, i: int,
                 gl_nodes: int = 48, fd_alpha: float = 2e-4):
        if profile.n != model.n:
            raise ValueError("profile and model disagree on bidder count")
        self.model = model
        self.profile = profile
        self.focal = i
        self.n = model.n
        self.dimension = model.dimension
        self.gl_nodes = gl_nodes
        self.fd_alpha = fd_alpha
        self._warps = {}
        for j in self.rivals():
            w = profile.exact_warp(j, i)
            self._warps[j] = w if w is not None else _NumericWarp(profile, j, i)

    # --- bid side ---------------------------------------------------------

    def bid_quantile(self, alpha, Z):
        return self.profile.value(self.focal, alpha, Z)

    def bid_quantile_deriv(self, alpha, Z):
        return self.profile.deriv(self.focal, alpha, Z)

    def bid_cdf(self, j, b, Z):
        return self.profile.inverse(j, b, Z)

    # --- warps --------------------------------------------------------------

    def warp(self, j, alpha, Z):
        return self._warps[j].value(np.asarray(alpha, dtype=float), Z)

    def warp_slope(self, j, alpha, Z):
        return self._warps[j].deriv(np.asarray(alpha, dtype=float), Z)

    def warp_slope_dalpha(self, j, alpha, Z):
        return self._warps[j].deriv2(np.asarray(alpha, dtype=float), Z)

    def warp_zgrad(self, j, k, alpha, Z):
        return np.asarray(self._warps[j].zgrad(np.asarray(alpha, dtype=float), Z))[..., k, :]

    def warp_zgrad_scaled(self, j, k, alpha, Z):
        Z = np.asarray(Z, dtype=float)
        g = np.asarray(self._warps[j].scaled_zgrad(np.asarray(alpha, dtype=float), Z))
        return float(Z[k] @ g[k])

    def warp_slope_zgrad_contracted(self, j, k, alpha, Z):
        fn = lambda Zs: float(self._warps[j].deriv(alpha, Zs))
        return directional_zderiv(fn, Z, k)

    # --- winning side ---------------------------------------------------------

    def omega(self, a, alpha, Z):
        return winning_probability(self.model, self.profile, self.focal,
                                   float(a), float(alpha), Z)

    def omega_ratio(self, alpha, Z):
        den = self.omega_slope_diag(alpha, Z)
        if den <= 1e-300:
            from ..equilibrium import SingularityError
            raise SingularityError(f"vanishing winning-probability slope at alpha={alpha}")
        return self.omega(alpha, alpha, Z) / den

    # --- structural frontier value --------------------------------------------

    def _args(self, alpha, Z):
        """Signal vector along the winning frontier; broadcasts over alpha or Z."""
        a = np.asarray(alpha, dtype=float)
        cols = []
        for j in range(self.n):
            cols.append(a if j == self.focal else np.clip(self.warp(j, a, Z), 0.0, 1.0))
        return np.stack(np.broadcast_arrays(*cols), axis=-1)

    def u_value(self, alpha, Z):
        """Frontier value: the valuation along the frontier for two bidders,
        the boundary-integral ratio for three (with its exact start limit)."""
        a = np.asarray(alpha, dtype=float)
        if self.n == 2:
            return self.model.valuation(self.focal, self._args(a, Z), Z)
        if a.ndim > 0:
            return np.array([self.u_value(float(x), Z) for x in a])
        af = float(a)
        if af < _EPS_ENDPOINT:
            return self.model.valuation(self.focal, np.zeros(self.n), Z)
        return self.w_value(af, Z) / self.omega_slope_diag(af, Z)

    def u_dalpha(self, alpha, Z):
        if self.n == 2:
            i, j = self.focal, self.rivals()[0]
            A = self._args(alpha, Z)
            x = self.model.mixed_signals(i, A, Z)
            comb = self.model.combiners[i]
            Zf = np.asarray(Z, dtype=float)
            di = np.sum(Zf[..., i, :] * self.model.slopes[i][i].deriv(A[..., i]), axis=-1)
            dj = np.sum(Zf[..., j, :] * self.model.slopes[i][j].deriv(A[..., j]), axis=-1) \
                * self.warp_slope(j, alpha, Z)
            out = comb.partial(i, x) * di + comb.partial(j, x) * dj
            return out if out.ndim else float(out)
        f = lambda a: float(self.u_value(a, Z))
        return finite_difference(f, float(alpha), self.fd_alpha, 0.0, 1.0)

    def u_zgrad(self, k, alpha, Z):
        """Gradient of the frontier value in Z_k, shape (..., D).

        Exact chain rule for two bidders at any level, and for any n at the
        zero level (where every warp has a vanishing covariate gradient);
        finite differences otherwise.
        """
        Z = np.asarray(Z, dtype=float)
        a = np.asarray(alpha, dtype=float)
        i = self.focal
        if self.n == 2 or float(np.max(a)) < _EPS_ENDPOINT:
            A = self._args(a, Z)
            x = self.model.mixed_signals(i, A, Z)
            comb = self.model.combiners[i]
            direct = comb.partial(k, x)[..., None] * self.model.slopes[i][k](A[..., k])
            chain = np.zeros(np.shape(direct))
            for j in self.rivals():
                # covariate movement through the rival warp level
                dgam = np.sum(Z[..., j, :] * self.model.slopes[i][j].deriv(A[..., j]), axis=-1)
                chain = chain + (comb.partial(j, x) * dgam)[..., None] \
                    * self.warp_zgrad(j, k, a, Z)
            return direct + chain
        af = float(a)
        out = np.empty(self.dimension)
        for d in range(self.dimension):
            def f(v, d=d):
                Zs = Z.copy()
                Zs[k, d] = v
                return float(self.u_value(af, Zs))
            out[d] = finite_difference(f, float(Z[k, d]), 1e-4 * max(1.0, Z[k, d]), order=2)
        return out

    def u_zgrad_contracted(self, k, alpha, Z):
        Z = np.asarray(Z, dtype=float)
        a = float(np.asarray(alpha))
        if self.n == 2 or a < _EPS_ENDPOINT:
            return float(Z[k] @ self.u_zgrad(k, a, Z))
        return directional_zderiv(lambda Zs: float(self.u_value(a, Zs)), Z, k)

    # --- numerator quadratures (three bidders) ---------------------------------

    def _boundary_term(self, j, alpha, Z, weight_only=False):
        """Coefficient of the j-th warp slope in the frontier derivatives.

        Pins coordinate j at its warp level and integrates V * c (or c alone)
        over the remaining rivals' brackets [0, warp_k(alpha)].  With a single
        rival the integral degenerates to the pinned-point value.
        """
        others = [k for k in self.rivals() if k != j]
        if not others:
            A = self._frontier_point(j, float(np.clip(self.warp(j, alpha, Z), 0.0, 1.0)),
                                     alpha, Z)
            c = float(self.model.copula.density(A, Z))
            if weight_only:
                return c
            return c * float(self.model.valuation(self.focal, A, Z))
        if len(others) > 1:
            raise NotImplementedError("boundary terms implemented for n <= 3")
        k = others[0]
        qk = float(np.clip(self.warp(k, alpha, Z), 0.0, 1.0))
        t, w = bracket_quad(qk, self.gl_nodes)
        A = np.empty((t.size, self.n))
        A[:, self.focal] = alpha
        A[:, j] = float(np.clip(self.warp(j, alpha, Z), 0.0, 1.0))
        A[:, k] = t
        c = self.model.copula.density(A, Z)
        if weight_only:
            return float(w @ c)
        return float(w @ (self.model.valuation(self.focal, A, Z) * c))

    def w_value(self, alpha, Z):
        a = float(np.asarray(alpha))
        total = 0.0
        for j in self.rivals():
            total += float(self.warp_slope(j, a, Z)) * self._boundary_term(j, a, Z)
        return total

    def omega_slope_diag(self, alpha, Z):
        a = float(np.asarray(alpha))
        total = 0.0
        for j in self.rivals():
            total += float(self.warp_slope(j, a, Z)) \
                * self._boundary_term(j, a, Z, weight_only=True)
        return total

    def w_dalpha(self, alpha, Z):
        return finite_difference(lambda a: float(self.w_value(a, Z)),
                                 float(alpha), self.fd_alpha, 0.0, 1.0)

    def w_zgrad_contracted(self, k, alpha, Z):
        return directional_zderiv(lambda Zs: float(self.w_value(alpha, Zs)),
                                  np.asarray(Z, dtype=float), k)

    def omega_slope_diag_dalpha(self, alpha, Z):
        return finite_difference(lambda a: float(self.omega_slope_diag(a, Z)),
                                 float(alpha), self.fd_alpha, 0.0, 1.0)

    def omega_slope_diag_zgrad_contracted(self, k, alpha, Z):
        return directional_zderiv(lambda Zs: float(self.omega_slope_diag(alpha, Zs)),
                                  np.asarray(Z, dtype=float), k)

    # --- frontier densities -------------------------------------------------

    def _frontier_point(self, j, t, alpha, Z):
        t = np.asarray(t, dtype=float)
        A = np.empty(t.shape + (self.n,))
        A[..., self.focal] = alpha
        A[..., j] = t
        for k in self.rivals():
            if k != j:
                A[..., k] = np.clip(self.warp(k, alpha, Z), 0.0, 1.0)
        return A

    def frontier_density(self, j, t, alpha, Z):
        return self.model.copula.density(self._frontier_point(j, t, alpha, Z), Z)

    def frontier_density_dalpha(self, j, t, alpha, Z):
        A = self._frontier_point(j, t, alpha, Z)
        cop = self.model.copula
        out = cop.density_dsignal(A, self.focal, Z)
        for k in self.rivals():
            if k != j:
                out = out + cop.density_dsignal(A, k, Z) * float(self.warp_slope(k, alpha, Z))
        return out

    def frontier_density_zgrad_contracted(self, j, k, t, alpha, Z):
        Z = np.asarray(Z, dtype=float)
        A = self._frontier_point(j, t, alpha, Z)
        cop = self.model.copula
        out = cop.density_zgrad_contracted(A, k, Z)
        for r in self.rivals():
            if r != j:
                dq = float(Z[k] @ self.warp_zgrad(r, k, alpha, Z))
                out = out + cop.density_dsignal(A, r, Z) * dq
        return out

    def density_at_frontier(self, alpha, Z):
        A = self._args(np.asarray(alpha, dtype=float), Z)
        return self.model.copula.density(A, Z)
