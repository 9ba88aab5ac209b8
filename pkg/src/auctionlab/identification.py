"""Constructive recovery of (active set, value combiner, slope curves).

Route "terminal" (two bidders): the frontier value at the top level depends
only on terminal slope values, which are read off covariate gradients as
Z -> 0 under the unit-partial normalization; the combiner is then traced out
by choosing covariates that hit each target argument; finally the slope
curves solve a 2x2 differential system marched down from the top level,
with the endpoint singularity handled in regularized form.

Route "initial" (three bidders): the same program anchored at the bottom
level, where the slope curves enter an integro-differential system whose
integrals run over the already-swept path, so the march carries its own
path memory.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.interpolate import PchipInterpolator
from scipy.optimize import brentq

from .fields.base import AuctionField
from .fields.diagnostics import RankReport, rank_condition_report, rank_not_binding
from .model import DomainError
from .wilson import neville_to_zero

class DegenerateVariationError(RuntimeError):
    """No covariate direction moves the frontier value: nothing to recover."""


class ExtrapolationError(RuntimeError):
    """The shrinking-covariate sequence of gradient estimates diverges."""


class RankRefusalError(RuntimeError):
    """The scaled-gradient matrix is singular; the slope march will not run."""


class PathMemoryError(RuntimeError):
    """A quadrature node fell beyond the swept frontier: non-monotone warp input."""


class MonotonicityError(RuntimeError):
    """A recovered slope curve decreases by more than the projection tolerance."""


def _gl(hi: float, nodes: int = 24):
    from .fields.base import bracket_quad

    return bracket_quad(hi, nodes)


@dataclass(frozen=True)
class IdentifyOptions:
    route: str = "auto"                  # "terminal" | "initial" | "auto"
    active_tol: float = 1e-5
    detect_z: tuple = ((1.0, 1.0), (1.6, 0.7), (0.8, 1.4))
    anchor_z: np.ndarray | None = None   # base point of the shrinking schedule
    shrink_start: float = 0.4
    shrink_factor: float = 0.5
    shrink_levels: int = 6
    alpha_grid: np.ndarray = field(default_factory=lambda: np.linspace(0.0, 1.0, 101))
    z_eval: np.ndarray | None = None     # covariate point(s) for the slope march
    z_eval_second: np.ndarray | None = None
    phi_axis: np.ndarray = field(default_factory=lambda: np.linspace(0.05, 2.0, 21))
    covariate_box: tuple = (1e-3, 50.0)
    eps_endpoint: float = 1e-4
    rtol: float = 1e-10
    march_steps: int = 1500
    quad_nodes: int = 24
    rank_threshold: float = 1e-3
    monotone_tol: float = 5e-3
    overid_tol_factor: float = 2.0
    solver_tol: float = 1e-3


@dataclass(frozen=True)
class SolverTrace:
    z_point: np.ndarray
    alpha_grid: np.ndarray
    states: np.ndarray
    cond_numbers: np.ndarray
    rhs_evaluations: int
    note: str = ""


@dataclass(frozen=True)
class ActiveSetReport:
    active: frozenset
    max_gradients: dict
    tolerance: float
    alpha_star: float


@dataclass(frozen=True)
class IdentifiedPrimitives:
    focal: int
    route: str
    active: frozenset
    endpoint_slopes: dict              # j -> (D,) recovered at the route's anchor level
    alpha_grid: np.ndarray
    gamma_tables: dict                 # j -> (grid, D)
    phi: "PhiEstimate"
    residual_sup: float
    overid_gap: float
    rank: RankReport
    traces: tuple
    notes: tuple = ()

    def gamma_frame(self):
        import pandas as pd
        cols = {"alpha": self.alpha_grid}
        for j in sorted(self.gamma_tables):
            tab = self.gamma_tables[j]
            for d in range(tab.shape[1]):
                cols[f"gamma_{j + 1}_{d + 1}"] = tab[:, d]
        return pd.DataFrame(cols)

    def phi_frame(self):
        return self.phi.table_frame()


class PhiEstimate:
    """Recovered value combiner: a functional wrapper over the field.

    Evaluation maps each active argument to a covariate hitting it at the
    anchor level (minimum-norm positive choice for vector covariates) and
    reads the frontier value there; partial derivatives come from the
    field's covariate gradients the same way.
    """

    def __init__(self, fld: AuctionField, active, endpoint_slopes, alpha_star: float,
                 covariate_box=(1e-3, 50.0), fill_z: float = 1.0):
        self.field = fld
        self.active = frozenset(active)
        self.alpha_star = float(alpha_star)
        self.anchors = {j: np.atleast_1d(np.asarray(endpoint_slopes[j], dtype=float))
                        for j in self.active}
        self.box = covariate_box
        self.fill_z = fill_z
        self.n = fld.n
        self.dimension = fld.dimension
        self._axes = None
        self._table = None
        self._extrapolated = None

    def map_covariates(self, x) -> np.ndarray:
        """Covariate point whose anchor-level arguments equal x (active coords).

        Arguments are floored at a tiny positive value so root-finding
        iterates that stray below zero stay evaluable.
        """
        x = np.asarray(x, dtype=float)
        Z = np.full(x.shape[:-1] + (self.n, self.dimension), self.fill_z)
        for j in range(self.n):
            if j in self.active:
                g = self.anchors[j]
                Z[..., j, :] = np.maximum(x[..., j, None], 1e-12) * g / float(g @ g)
        return Z

    def out_of_box(self, x) -> np.ndarray:
        Z = self.map_covariates(x)
        lo, hi = self.box
        active = sorted(self.active)
        zz = Z[..., active, :]
        return np.any((zz < lo) | (zz > hi), axis=(-2, -1))

    def value(self, x):
        x = np.asarray(x, dtype=float)
        Z = self.map_covariates(x)
        if x.ndim == 1:
            return float(self.field.u_value(self.alpha_star, Z))
        return np.asarray(self.field.u_value(self.alpha_star, Z))

    def partial(self, j: int, x):
        x = np.asarray(x, dtype=float)
        if j not in self.active:
            return np.zeros(x.shape[:-1]) if x.ndim > 1 else 0.0
        Z = self.map_covariates(x)
        g = self.anchors[j]
        grad = self.field.u_zgrad(j, self.alpha_star, Z)
        out = np.asarray(grad @ g) / float(g @ g)
        return float(out) if x.ndim == 1 else out

    def section_inverse(self, j: int, target: float, hi: float = 64.0) -> float:
        """x_j solving value(x with x_j) = target, other coordinates at zero."""
        def f(v):
            x = np.zeros(self.n)
            x[j] = v
            return self.value(x) - target
        lo = 1e-12
        while f(hi) < 0 and hi < 1e9:
            hi *= 2.0
        return float(brentq(f, lo, hi, xtol=1e-13, rtol=1e-13))

    def build_table(self, axis) -> None:
        axis = np.asarray(axis, dtype=float)
        active = sorted(self.active)
        grids = np.meshgrid(*([axis] * len(active)), indexing="ij")
        pts = np.zeros(grids[0].shape + (self.n,))
        for s, j in enumerate(active):
            pts[..., j] = grids[s]
        flat = pts.reshape(-1, self.n)
        vals = np.asarray(self.value(flat)).reshape(grids[0].shape)
        extra = self.out_of_box(flat).reshape(grids[0].shape)
        self._axes = axis
        self._table = vals
        self._extrapolated = extra

    def table_frame(self):
        import pandas as pd
        if self._table is None:
            raise RuntimeError("combiner table not built")
        active = sorted(self.active)
        grids = np.meshgrid(*([self._axes] * len(active)), indexing="ij")
        cols = {f"x_{j + 1}": g.ravel() for j, g in zip(active, grids)}
        cols["value"] = self._table.ravel()
        cols["extrapolated"] = self._extrapolated.ravel().astype(int)
        return pd.DataFrame(cols)


# ---------------------------------------------------------------------------
# Step 1: active signals and anchor-level slope values
# ---------------------------------------------------------------------------


def detect_active_set(fld: AuctionField, route: str, z_grid=None,
                      tol: float = 1e-5) -> ActiveSetReport:
    """A signal is active when some covariate direction moves the frontier
    value at the route's anchor level."""
    alpha_star = 1.0 if route == "terminal" else 0.0
    if z_grid is None:
        z_grid = [np.full((fld.n, fld.dimension), v) for v in (0.7, 1.0, 1.5)]
    max_grad = {j: 0.0 for j in range(fld.n)}
    for Z in z_grid:
        Z = np.asarray(Z, dtype=float).reshape(fld.n, fld.dimension)
        for j in range(fld.n):
            g = np.asarray(fld.u_zgrad(j, alpha_star, Z), dtype=float)
            max_grad[j] = max(max_grad[j], float(np.max(np.abs(g))))
    active = frozenset(j for j, g in max_grad.items() if g > tol)
    if not active:
        raise DegenerateVariationError(
            f"no covariate direction moves the frontier value at level {alpha_star}")
    return ActiveSetReport(active=active, max_gradients=max_grad, tolerance=tol,
                           alpha_star=alpha_star)


def recover_endpoint_slopes(fld: AuctionField, active, route: str,
                            anchor_z=None, shrink_start: float = 0.4,
                            shrink_factor: float = 0.5, levels: int = 6) -> dict:
    """Slope values at the anchor level from vanishing-covariate gradients.

    Under the unit-partial normalization, the covariate gradient of the
    frontier value converges to the slope value itself as the covariates
    shrink to zero; a polynomial extrapolation in the shrink factor removes
    the remaining smooth bias.
    """
    alpha_star = 1.0 if route == "terminal" else 0.0
    if anchor_z is None:
        anchor_z = np.ones((fld.n, fld.dimension))
    anchor_z = np.asarray(anchor_z, dtype=float)
    tpows = shrink_start * shrink_factor ** np.arange(levels)
    out = {}
    for j in sorted(active):
        seq = np.empty((levels, fld.dimension))
        for s, t in enumerate(tpows):
            seq[s] = np.asarray(fld.u_zgrad(j, alpha_star, t * anchor_z), dtype=float)
        vec = np.empty(fld.dimension)
        for d in range(fld.dimension):
            vals = seq[:, d]
            ext = [neville_to_zero(tpows[:m], vals[:m]) for m in range(2, levels + 1)]
            steps = np.abs(np.diff(ext))
            if len(steps) >= 2 and steps[-1] > 4.0 * steps[-2] + 1e-10:
                raise ExtrapolationError(
                    f"gradient extrapolation diverges for signal {j + 1}: {vals.tolist()}")
            vec[d] = ext[-1]
        if np.all(np.abs(vec) < 1e-12):
            raise ExtrapolationError(f"vanishing anchor slope recovered for signal {j + 1}")
        out[j] = vec
    return out


def recover_phi(fld: AuctionField, active, endpoint_slopes, route: str,
                axis=None, covariate_box=(1e-3, 50.0)) -> PhiEstimate:
    """Tabulate the combiner over a rectangular grid of the positive orthant."""
    alpha_star = 1.0 if route == "terminal" else 0.0
    phi = PhiEstimate(fld, active, endpoint_slopes, alpha_star, covariate_box)
    phi.build_table(np.linspace(0.05, 2.0, 21) if axis is None else axis)
    return phi


# ---------------------------------------------------------------------------
# Step 3, two bidders: the 2x2 differential system marched from the top
# ---------------------------------------------------------------------------


def _fd_derivative_matrix(grid: np.ndarray) -> np.ndarray:
    """Dense differentiation matrix (4th-order interior five-point stencils)."""
    m = grid.size
    D = np.zeros((m, m))
    for r in range(m):
        lo = min(max(r - 2, 0), m - 5)
        pts = grid[lo:lo + 5] - grid[r]
        V = np.vander(pts, 5, increasing=True).T      # moment conditions
        rhs = np.zeros(5)
        rhs[1] = 1.0
        D[r, lo:lo + 5] = np.linalg.solve(V, rhs)
    return D


def solve_slopes_n2(fld: AuctionField, phi: PhiEstimate, terminal_slopes: dict,
                    z_eval, alpha_grid, opts: IdentifyOptions):
    """Recover both slope curves from the two-signal differential system.

    The system is marched down from the top level as an initializer, then
    solved globally by collocation: the defining identity and the
    regularized covariate-gradient row must hold at every grid node, with
    the path derivative supplied by a differentiation matrix.  Pure
    backward shooting is ill-conditioned here (the terminal point attracts,
    so integrating away from it amplifies noise algebraically); the
    implicit collocation step removes that drift while solving the same
    equations.

    Returns (gamma_tables, traces, rank_report).  Refuses to run when the
    scaled-gradient rank margin is below threshold.
    """
    i = fld.focal
    j = [r for r in fld.rivals()][0]
    active = sorted(phi.active)
    if set(active) != {i, j}:
        raise DomainError("two-signal march expects both signals active")
    z_points = np.asarray(z_eval, dtype=float)
    if z_points.ndim == 2:
        z_points = z_points[None]

    rank = rank_condition_report(fld, [j], np.linspace(0.1, 0.9, 9), z_points,
                                 threshold=opts.rank_threshold)
    if not rank.passed:
        raise RankRefusalError(
            f"scaled-gradient rank margin {rank.min_singular_value:.3e} "
            f"below threshold {rank.threshold:.3e}")

    eps = opts.eps_endpoint
    traces = []
    focal_rows = []
    rival_curves = []
    agrid = np.asarray(alpha_grid, dtype=float)
    for Z in z_points:
        Zf = np.asarray(Z, dtype=float)
        anchor = np.array([float(Zf[i] @ terminal_slopes[i]),
                           float(Zf[j] @ terminal_slopes[j])])
        nfev = [0]

        # grid for the backward integration and collocation refinement
        cg = np.linspace(eps, 1.0, 161)
        Dmat = _fd_derivative_matrix(cg)
        uvals = np.array([float(fld.u_value(float(a), Zf)) for a in cg])
        zgvals = np.array([fld.u_zgrad_contracted(j, float(a), Zf) for a in cg])
        rvals = np.array([fld.warp_zgrad_scaled(j, j, float(a), Zf) for a in cg])
        gvals = np.array([float(fld.warp_slope(j, float(a), Zf)) for a in cg])
        coef = cg * (1.0 - cg) * rvals / gvals

        def _node_system(m, state, g2_down, h_down):
            """Identity and flow residuals at node m with an implicit
            downstream difference for the path derivative."""
            nfev[0] += 1
            x = np.zeros(fld.n)
            x[i], x[j] = state
            p_j = float(phi.partial(j, x))
            ident = float(phi.value(x)) - uvals[m]
            d2 = (g2_down - state[1]) / h_down
            flow = p_j * (state[1] + coef[m] * d2) - zgvals[m]
            return np.array([ident, flow])

        # implicit backward pass from the terminal anchor (explicit shooting
        # amplifies noise algebraically away from the attracting endpoint)
        init = np.empty((cg.size, 2))
        init[-1] = anchor
        for m in range(cg.size - 2, -1, -1):
            state = init[m + 1].copy()
            h_down = cg[m + 1] - cg[m]
            for _ in range(40):
                F = _node_system(m, state, init[m + 1, 1], h_down)
                J = np.empty((2, 2))
                hstep = 1e-7
                for c in range(2):
                    bumped = state.copy()
                    bumped[c] += hstep
                    J[:, c] = (_node_system(m, bumped, init[m + 1, 1], h_down) - F) / hstep
                try:
                    delta = np.linalg.solve(J, F)
                except np.linalg.LinAlgError:
                    break
                state = np.maximum(state - delta, 1e-9)
                if float(np.max(np.abs(delta))) < 1e-12:
                    break
            init[m] = state

        def residuals(vec):
            G1 = vec[:cg.size]
            G2 = vec[cg.size:]
            x = np.zeros((cg.size, fld.n))
            x[:, i], x[:, j] = G1, G2
            p_j = np.asarray(phi.partial(j, x))
            ident = np.asarray(phi.value(x)) - uvals
            flow = p_j * (G2 + coef * (Dmat @ G2)) - zgvals
            return np.concatenate([ident, flow])

        from scipy.optimize import least_squares
        from scipy.sparse import lil_matrix

        msize = cg.size
        sparsity = lil_matrix((2 * msize, 2 * msize), dtype=int)
        stencil = (np.abs(Dmat) > 0)
        for m in range(msize):
            sparsity[m, m] = 1                 # identity row: G1_m
            sparsity[m, msize + m] = 1         # identity row: G2_m
            sparsity[msize + m, m] = 1         # flow row: G1_m through the partial
            sparsity[msize + m, msize + m] = 1
            sparsity[msize + m, msize:][0, np.nonzero(stencil[m])[0]] = 1

        fit = least_squares(residuals, np.concatenate([init[:, 0], init[:, 1]]),
                            method="trf", bounds=(1e-9, np.inf),
                            jac_sparsity=sparsity.tocsr(),
                            xtol=1e-15, ftol=1e-15, gtol=1e-15)
        resid_norm = float(np.max(np.abs(fit.fun)))
        if resid_norm > 1e-6 * max(1.0, float(np.max(np.abs(uvals)))):
            raise RuntimeError(f"collocation residual {resid_norm:.2e} did not converge")
        G1c = fit.x[:cg.size]
        G2c = fit.x[cg.size:]

        inner = np.clip(agrid, eps, 1.0)
        sp1 = PchipInterpolator(cg, G1c, extrapolate=True)
        sp2 = PchipInterpolator(cg, G2c, extrapolate=True)
        states = np.column_stack([sp1(inner), sp2(inner)])
        low = agrid < eps
        if np.any(low):
            states[low, 0] = sp1(eps) + (agrid[low] - eps) * sp1(eps, 1)
            states[low, 1] = sp2(eps) + (agrid[low] - eps) * sp2(eps, 1)
        conds = []
        for a, st in zip(cg[::16], np.column_stack([G1c, G2c])[::16]):
            x = np.zeros(fld.n)
            x[i], x[j] = st
            p_i, p_j = float(phi.partial(i, x)), float(phi.partial(j, x))
            r = float(fld.warp_zgrad_scaled(j, j, float(a), Zf))
            g = float(fld.warp_slope(j, float(a), Zf))
            M = np.array([[p_i, p_j], [0.0, p_j * r / g]])
            sv = np.linalg.svd(M, compute_uv=False)
            conds.append(sv[0] / max(sv[-1], 1e-300))
        traces.append(SolverTrace(z_point=Zf, alpha_grid=agrid, states=states,
                                  cond_numbers=np.array(conds),
                                  rhs_evaluations=nfev[0] + fit.nfev))
        focal_rows.append(states[:, 0])
        # rival slope lives on its own warp levels
        levels = np.clip(np.asarray([fld.warp(j, float(a), Zf) for a in agrid]), 0.0, 1.0)
        rival_curves.append((levels, states[:, 1]))

    gamma = {}
    gamma[i] = _invert_contractions(np.stack(focal_rows), z_points[:, i, :], agrid)
    gamma[j] = _invert_warped_contractions(rival_curves, z_points[:, j, :], agrid,
                                           anchor=(1.0, terminal_slopes[j]))
    return gamma, traces, rank


def _invert_contractions(rows, z_dirs, agrid):
    """Recover a (grid, D) slope table from contracted values at D z points."""
    D = z_dirs.shape[1]
    if rows.shape[0] < D:
        raise DomainError(f"need at least D={D} covariate points to unwind the slopes")
    A = z_dirs[:D]
    sol = np.linalg.solve(A, rows[:D])
    return sol.T if D > 1 else rows[0][:, None] / z_dirs[0, 0]


def _invert_warped_contractions(curves, z_dirs, agrid, anchor=None):
    """Same, for the rival whose state lives on its own warp levels."""
    D = z_dirs.shape[1]
    per_point = []
    for (levels, vals) in curves[:max(D, 1)]:
        order = np.argsort(levels)
        lev, vv = levels[order], vals[order]
        lev, idx = np.unique(np.round(lev, 14), return_index=True)
        vv = vv[idx]
        interp = PchipInterpolator(lev, vv, extrapolate=True)
        per_point.append(interp(agrid))
    rows = np.stack(per_point)
    if D == 1:
        out = rows[0][:, None] / z_dirs[0, 0]
    else:
        out = np.linalg.solve(z_dirs[:D], rows[:D]).T
    if anchor is not None:
        a_star, vec = anchor
        k = int(np.argmin(np.abs(agrid - a_star)))
        if abs(agrid[k] - a_star) < 1e-12:
            out[k] = vec
    return out


# ---------------------------------------------------------------------------
# Step 3, three bidders: the integro-differential march from the bottom
# ---------------------------------------------------------------------------


class _PathMemory:
    """Swept values of one rival's contracted slope on its own warp levels."""

    def __init__(self, t0: float, p0: float):
        self.t = [t0]
        self.p = [p0]

    def append(self, t: float, p: float, step: float):
        if t < self.t[-1] - 1e-12:
            raise PathMemoryError(
                f"warp level moved backward ({t:.6f} after {self.t[-1]:.6f})")
        if t > self.t[-1] + 1e-12:
            self.t.append(t)
            self.p.append(p)

    def eval(self, t, frontier_tol: float):
        t = np.asarray(t, dtype=float)
        tt = np.asarray(self.t)
        pp = np.asarray(self.p)
        if float(np.max(t, initial=0.0)) > tt[-1] + frontier_tol:
            raise PathMemoryError(
                f"requested level {float(np.max(t)):.6f} beyond swept frontier {tt[-1]:.6f}")
        out = np.interp(t, tt, pp)
        beyond = t > tt[-1]
        if np.any(beyond) and len(tt) > 1:
            slope = (pp[-1] - pp[-2]) / max(tt[-1] - tt[-2], 1e-300)
            out = np.where(beyond, pp[-1] + (t - tt[-1]) * slope, out)
        return out

    def snapshot(self):
        return len(self.t)

    def rollback(self, mark):
        del self.t[mark:]
        del self.p[mark:]


def _march_coeffs(fld, phi, a, state, paths, Z, opts):
    """Assemble the regularized 3x3 system M Gamma' = rhs at one level."""
    i = fld.focal
    rivals = fld.rivals()
    j2, j3 = rivals
    idx = {i: 0, j2: 1, j3: 2}
    G = {i: state[0], j2: state[1], j3: state[2]}
    q = {r: float(np.clip(fld.warp(r, a, Z), 0.0, 1.0)) for r in rivals}
    g = {r: float(fld.warp_slope(r, a, Z)) for r in rivals}
    gdot = {r: float(fld.warp_slope_dalpha(r, a, Z)) for r in rivals}
    frontier_tol = 2.0 * (1.0 + max(abs(g[j2]), abs(g[j3]))) / opts.march_steps

    def args_at(r, t):
        """Combiner arguments with coordinate r swept at t, the other pinned."""
        t = np.asarray(t, dtype=float)
        x = np.zeros(t.shape + (fld.n,))
        x[..., i] = G[i]
        for s in rivals:
            if s == r:
                x[..., s] = paths[s].eval(t, frontier_tol)
            else:
                x[..., s] = G[s]
        return x

    # quadratures over the swept bracket of each rival (coordinate r runs,
    # the other rival sits pinned at its current warp level)
    quad = {}
    for r in rivals:
        t, w = _gl(q[r], opts.quad_nodes)
        x = args_at(r, t)
        dens = np.asarray(fld.frontier_density(r, t, a, Z), dtype=float)
        dens_da = np.asarray(fld.frontier_density_dalpha(r, t, a, Z), dtype=float)
        phi_vals = np.asarray(phi.value(x))
        quad[r] = {
            "t": t, "w": w, "x": x, "dens": dens, "dens_da": dens_da,
            "phi": phi_vals,
            "p_swept": paths[r].eval(t, frontier_tol),
        }

    def J(m, r):
        """integral over coordinate r of the m-th partial times the weight"""
        qr = quad[r]
        vals = np.asarray(phi.partial(m, qr["x"]))
        return float(qr["w"] @ (vals * qr["dens"]))

    def B(pin):
        """value-form boundary term: pin one rival, integrate the other"""
        other = j3 if pin == j2 else j2
        qr = quad[other]
        return float(qr["w"] @ (qr["phi"] * qr["dens"]))

    D1 = g[j3] * J(i, j2) + g[j2] * J(i, j3)
    D2 = J(j2, j3)
    D3 = J(j3, j2)

    x_now = np.zeros(fld.n)
    x_now[i], x_now[j2], x_now[j3] = G[i], G[j2], G[j3]
    phi_now = float(phi.value(x_now))
    c_full = float(fld.density_at_frontier(a, Z))

    psi1 = float(fld.w_dalpha(a, Z))
    psi1 -= gdot[j2] * B(j2) + gdot[j3] * B(j3)
    psi1 -= 2.0 * g[j2] * g[j3] * phi_now * c_full
    for pin in rivals:
        other = j3 if pin == j2 else j2
        qr = quad[other]
        psi1 -= g[pin] * float(qr["w"] @ (qr["phi"] * qr["dens_da"]))

    M = np.zeros((3, 3))
    M[0] = [D1, g[j2] * D2, g[j3] * D3]
    rhs = np.zeros(3)
    rhs[0] = psi1
    denom = a * (1.0 - a)

    for rowpos, k in enumerate(rivals, start=1):
        R2 = float(fld.warp_zgrad_scaled(j2, k, a, Z))
        R3 = float(fld.warp_zgrad_scaled(j3, k, a, Z))
        M[rowpos] = [0.0, R2 * D2, R3 * D3]
        zq = {r: float(np.asarray(Z[k], dtype=float)
                       @ np.asarray(fld.warp_zgrad(r, k, a, Z), dtype=float))
              for r in rivals}
        zg_warp_slope = {r: float(fld.warp_slope_zgrad_contracted(r, k, a, Z))
                         for r in rivals}
        psi = float(fld.w_zgrad_contracted(k, a, Z))
        psi -= zg_warp_slope[j2] * B(j2) + zg_warp_slope[j3] * B(j3)
        psi -= (g[j2] * zq[j3] + g[j3] * zq[j2]) * phi_now * c_full
        # direct covariate movement of the k-th slope: pinned occurrence ...
        psi -= g[k] * G[k] * (D2 if k == j2 else D3)
        # ... and the swept occurrence along the path
        other = j3 if k == j2 else j2
        qk = quad[k]
        vals = np.asarray(phi.partial(k, qk["x"]))
        psi -= g[other] * float(qk["w"] @ (vals * qk["p_swept"] * qk["dens"]))
        # covariate movement of the integrand weights
        for pin in rivals:
            oth = j3 if pin == j2 else j2
            qr = quad[oth]
            dzw = np.asarray(fld.frontier_density_zgrad_contracted(oth, k, qr["t"], a, Z),
                             dtype=float)
            psi -= g[pin] * float(qr["w"] @ (qr["phi"] * dzw))
        rhs[rowpos] = psi / denom

    return M, rhs, idx


def solve_slopes_n3(fld: AuctionField, phi: PhiEstimate, initial_slopes: dict,
                    z_eval, alpha_grid, opts: IdentifyOptions):
    """Heun march of the three-signal integro-differential system from the
    bottom level, carrying swept slope values for the path integrals."""
    i = fld.focal
    rivals = fld.rivals()
    if fld.n != 3:
        raise DomainError("the initial-route march is implemented for three bidders")
    if set(phi.active) != set(range(3)):
        raise DomainError("three-signal march expects all signals active")
    z_points = np.asarray(z_eval, dtype=float)
    if z_points.ndim == 2:
        z_points = z_points[None]

    rank = rank_condition_report(fld, rivals, np.linspace(0.1, 0.9, 7), z_points,
                                 threshold=opts.rank_threshold)
    if not rank.passed:
        raise RankRefusalError(
            f"scaled-gradient rank margin {rank.min_singular_value:.3e} "
            f"below threshold {rank.threshold:.3e}")

    eps = opts.eps_endpoint
    agrid = np.asarray(alpha_grid, dtype=float)
    traces = []
    focal_rows = []
    rival_curves = {r: [] for r in rivals}
    for Z in z_points:
        Zf = np.asarray(Z, dtype=float)
        state0 = np.array([float(Zf[i] @ initial_slopes[i]),
                           float(Zf[rivals[0]] @ initial_slopes[rivals[0]]),
                           float(Zf[rivals[1]] @ initial_slopes[rivals[1]])])
        paths = {r: _PathMemory(0.0, state0[s + 1]) for s, r in enumerate(rivals)}
        tgrid = np.linspace(eps, 1.0 - eps, opts.march_steps + 1)
        h = tgrid[1] - tgrid[0]
        states = np.empty((tgrid.size, 3))
        state = state0.copy()
        states[0] = state
        conds = []
        nfev = 0

        def derivative(a, st):
            M, rhs, _ = _march_coeffs(fld, phi, float(a), st, paths, Zf, opts)
            return np.linalg.solve(M, rhs), M

        for s in range(tgrid.size - 1):
            a0 = float(tgrid[s])
            k1, M1 = derivative(a0, state)
            nfev += 1
            if s % 50 == 0:
                sv = np.linalg.svd(M1, compute_uv=False)
                conds.append(sv[0] / max(sv[-1], 1e-300))
            pred = state + h * k1
            mark = {r: paths[r].snapshot() for r in rivals}
            for pos, r in enumerate(rivals, start=1):
                paths[r].append(float(np.clip(fld.warp(r, a0 + h, Zf), 0.0, 1.0)),
                                float(pred[pos]), h)
            k2, _ = derivative(a0 + h, pred)
            nfev += 1
            state = state + 0.5 * h * (k1 + k2)
            for r in rivals:
                paths[r].rollback(mark[r])
            for pos, r in enumerate(rivals, start=1):
                paths[r].append(float(np.clip(fld.warp(r, a0 + h, Zf), 0.0, 1.0)),
                                float(state[pos]), h)
            states[s + 1] = state

        traces.append(SolverTrace(z_point=Zf, alpha_grid=tgrid, states=states,
                                  cond_numbers=np.array(conds), rhs_evaluations=nfev))
        interp = [PchipInterpolator(tgrid, states[:, c], extrapolate=True)
                  for c in range(3)]
        focal_rows.append(interp[0](agrid))
        for pos, r in enumerate(rivals, start=1):
            levels = np.clip(np.asarray([float(fld.warp(r, float(a), Zf))
                                         for a in tgrid]), 0.0, 1.0)
            rival_curves[r].append((levels, states[:, pos]))

    gamma = {}
    gamma[i] = _invert_contractions(np.stack(focal_rows), z_points[:, i, :], agrid)
    for r in rivals:
        gamma[r] = _invert_warped_contractions(rival_curves[r], z_points[:, r, :], agrid,
                                               anchor=(0.0, initial_slopes[r]))
    return gamma, traces, rank


# ---------------------------------------------------------------------------
# Degenerate single-signal routes
# ---------------------------------------------------------------------------


def _solve_single_signal(fld, phi, active_j, z_eval, alpha_grid, route):
    """One active signal: invert the combiner section along the frontier."""
    agrid = np.asarray(alpha_grid, dtype=float)
    Z = np.asarray(z_eval, dtype=float)
    if Z.ndim == 3:
        Z = Z[0]
    vals_u = np.asarray([float(fld.u_value(float(a), Z)) for a in agrid])
    roots = np.array([phi.section_inverse(active_j, u) for u in vals_u])
    if active_j == fld.focal:
        D = fld.dimension
        if D != 1:
            raise DomainError("single-signal inversion implemented for scalar covariates")
        table = roots[:, None] / Z[active_j, 0]
        return {active_j: table}
    levels = np.clip(np.asarray([float(fld.warp(active_j, float(a), Z)) for a in agrid]),
                     0.0, 1.0)
    order = np.argsort(levels)
    lev, idx = np.unique(levels[order], return_index=True)
    vv = roots[order][idx]
    interp = PchipInterpolator(lev, vv, extrapolate=True)
    return {active_j: interp(agrid)[:, None] / Z[active_j, 0]}


# ---------------------------------------------------------------------------
# Orchestration
# ---------------------------------------------------------------------------


def identify(fld: AuctionField, options: IdentifyOptions | None = None) -> IdentifiedPrimitives:
    """Run the full constructive recovery and attach diagnostics.

    The slope tables are re-solved at a second covariate set; disagreement
    beyond the solver tolerance is recorded as a warning (the quantities are
    overdetermined, so the gap doubles as a specification diagnostic).
    """
    opts = options or IdentifyOptions()
    route = opts.route
    if route == "auto":
        route = "terminal" if fld.n == 2 else "initial"
    if route == "terminal" and fld.n != 2:
        raise DomainError("the terminal route is implemented for two bidders")
    if route == "initial" and fld.n != 3:
        raise DomainError("the initial route is implemented for three bidders")

    notes = []
    report = detect_active_set(fld, route, tol=opts.active_tol)
    active = report.active
    anchors = recover_endpoint_slopes(
        fld, active, route, anchor_z=opts.anchor_z,
        shrink_start=opts.shrink_start, shrink_factor=opts.shrink_factor,
        levels=opts.shrink_levels)
    phi = recover_phi(fld, active, anchors, route, axis=opts.phi_axis,
                      covariate_box=opts.covariate_box)

    agrid = np.asarray(opts.alpha_grid, dtype=float)
    z_eval = opts.z_eval
    if z_eval is None:
        z_eval = np.full((fld.n, fld.dimension), 1.0)
        z_eval = z_eval + 0.3 * np.arange(fld.n)[:, None]
    z_eval = np.asarray(z_eval, dtype=float)
    traces = ()

    if len(active) == 1:
        only = next(iter(active))
        gamma = _solve_single_signal(fld, phi, only, z_eval, agrid, route)
        rank = rank_not_binding(fld.focal, active)
        notes.append("single active signal: slope recovered by section inversion")
    else:
        if fld.n == 2:
            gamma, tr, rank = solve_slopes_n2(fld, phi, anchors, z_eval, agrid, opts)
        else:
            gamma, tr, rank = solve_slopes_n3(fld, phi, anchors, z_eval, agrid, opts)
        traces = tuple(tr)

    gamma = {j: np.asarray(t, dtype=float) for j, t in gamma.items()}
    _enforce_monotone(gamma, opts.monotone_tol)

    # defining-identity residual on the march covariate point
    Zr = z_eval if z_eval.ndim == 2 else z_eval[0]
    resid = _identity_residual(fld, phi, gamma, agrid, Zr)

    overid = np.nan
    if len(active) > 1:
        z2 = opts.z_eval_second
        if z2 is None:
            z2 = Zr * np.linspace(1.15, 0.85, fld.n)[:, None]
        if fld.n == 2:
            gamma2, _, _ = solve_slopes_n2(fld, phi, anchors, z2, agrid, opts)
        else:
            gamma2, _, _ = solve_slopes_n3(fld, phi, anchors, z2, agrid, opts)
        overid = max(float(np.max(np.abs(gamma[j] - gamma2[j]))) for j in gamma)
        if overid > opts.overid_tol_factor * opts.solver_tol:
            notes.append(f"overidentification gap {overid:.2e} exceeds "
                         f"{opts.overid_tol_factor:.0f}x solver tolerance")

    return IdentifiedPrimitives(
        focal=fld.focal, route=route, active=active, endpoint_slopes=anchors,
        alpha_grid=agrid, gamma_tables=gamma, phi=phi, residual_sup=resid,
        overid_gap=overid, rank=rank, traces=traces, notes=tuple(notes))


def _enforce_monotone(gamma: dict, tol: float):
    """Project small monotonicity violations; fail on large ones."""
    for j, tab in gamma.items():
        drops = np.maximum(0.0, -np.diff(tab, axis=0))
        worst = float(drops.max()) if drops.size else 0.0
        if worst > tol:
            raise MonotonicityError(
                f"recovered slope {j + 1} decreases by {worst:.2e} (tolerance {tol:.0e})")
        gamma[j] = np.maximum.accumulate(tab, axis=0)


def _identity_residual(fld, phi, gamma, agrid, Z) -> float:
    Z = np.asarray(Z, dtype=float)
    interp = {j: [PchipInterpolator(agrid, gamma[j][:, d]) for d in range(gamma[j].shape[1])]
              for j in gamma}
    worst = 0.0
    for a in np.linspace(0.05, 0.95, 19):
        x = np.zeros(fld.n)
        for j in gamma:
            lev = a if j == fld.focal else float(np.clip(fld.warp(j, a, Z), 0.0, 1.0))
            gv = np.array([f(lev) for f in interp[j]])
            x[j] = float(Z[j] @ gv)
        worst = max(worst, abs(float(phi.value(x)) - float(fld.u_value(a, Z))))
    return worst
