"""Two-stage estimator: tabulate the frontier value, then fit the combiner
and slope curves by alternating least squares over finite families.

Stage one reads the frontier value off a field (markup form on estimated
fields).  Stage two minimizes the squared gap between the tabulated values
and the parametric frontier value over a Bernstein family for the slopes
and a small family for the combiner, alternating a combiner step and a
slope step; each step accepts only improving iterates, so the objective
never increases.  A slope whose combiner loading dies is dropped from the
minimization rather than left to wander.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import least_squares, nnls

from .model import DomainError
from .slopes import bernstein_design

_SLACK = 1e-12


@dataclass(frozen=True)
class SieveSpec:
    slope_degree: int = 3
    phi_family: str = "additive"          # "additive" | "tensor" | "smoothmax"
    phi_degree: int = 2                   # per-coordinate degree of the tensor family
    normalize_phi: bool = False           # pin unit linear loadings on active coords
    alpha_grid: np.ndarray = field(default_factory=lambda: np.linspace(0.01, 0.99, 41))
    max_iterations: int = 500
    objective_rel_tol: float = 1e-8
    drop_dep_tol: float = 1e-3
    drop_osc_tol: float = 1e-6
    min_iterations_before_drop: int = 3

    def __post_init__(self):
        if self.slope_degree < 1 or self.phi_degree < 1:
            raise DomainError("family sizes must be at least 1")
        if self.phi_family not in ("additive", "tensor", "smoothmax"):
            raise DomainError(f"unknown combiner family {self.phi_family!r}")


@dataclass
class FitState:
    phi_coeffs: np.ndarray
    gammas: dict                           # j -> Bernstein coefficients (K+1,)
    active: set


@dataclass(frozen=True)
class FitResult:
    phi_family: str
    phi_coeffs: np.ndarray
    gammas: dict
    objective_path: tuple
    drop_events: tuple                     # (iteration, slope index, reason)
    converged: bool
    active: frozenset

    @property
    def objective(self) -> float:
        return self.objective_path[-1]

    def gamma_values(self, j: int, alpha):
        return bernstein_design(np.asarray(alpha, dtype=float),
                                len(self.gammas[j]) - 1) @ self.gammas[j]

    def iteration_frame(self):
        import pandas as pd
        drops = {it: f"drop slope {j + 1}: {why}" for it, j, why in self.drop_events}
        return pd.DataFrame({
            "iteration": np.arange(len(self.objective_path)),
            "objective": np.asarray(self.objective_path),
            "event": [drops.get(k, "") for k in range(len(self.objective_path))],
        })


@dataclass(frozen=True)
class UhatTable:
    """Stage-one output: frontier values and rival warp levels on a design grid."""

    z_points: np.ndarray                   # (nz, n, D)
    alpha_grid: np.ndarray                 # (na,)
    values: np.ndarray                     # (nz, na)
    warp_levels: np.ndarray                # (nz, na) rival level matching each own level

    def frame(self):
        import pandas as pd
        nz, na = self.values.shape
        rows = {
            "z_index": np.repeat(np.arange(nz), na),
            "alpha": np.tile(self.alpha_grid, nz),
            "u_hat": self.values.ravel(),
            "warp": self.warp_levels.ravel(),
        }
        for j in range(self.z_points.shape[1]):
            for d in range(self.z_points.shape[2]):
                rows[f"z_{j + 1}_{d + 1}"] = np.repeat(self.z_points[:, j, d], na)
        return pd.DataFrame(rows)


def estimate_U_hat(fld, z_points, alpha_grid=None) -> UhatTable:
    """Tabulate the frontier value over a covariate/level design.

    On an exact field this reproduces the structural value; on an estimated
    field it is the markup form bid + bid-slope * win-ratio.
    """
    alpha_grid = np.linspace(0.01, 0.99, 41) if alpha_grid is None else \
        np.asarray(alpha_grid, dtype=float)
    z_points = np.asarray(z_points, dtype=float)
    if z_points.ndim == 2:
        z_points = z_points[None]
    rival = fld.rivals()[0]
    vals = np.empty((z_points.shape[0], alpha_grid.size))
    warps = np.empty_like(vals)
    for s, Z in enumerate(z_points):
        for m, a in enumerate(alpha_grid):
            vals[s, m] = float(fld.u_value(float(a), Z))
            warps[s, m] = float(np.clip(fld.warp(rival, float(a), Z), 0.0, 1.0))
    return UhatTable(z_points=z_points, alpha_grid=alpha_grid, values=vals,
                     warp_levels=warps)


# ---------------------------------------------------------------------------
# Combiner families
# ---------------------------------------------------------------------------


def _tensor_terms(degree: int):
    return [(p, q) for p in range(degree + 1) for q in range(degree + 1)
            if (p, q) != (0, 0)]


class SievePhi:
    """Evaluator over the fitted combiner family (duck-typed like the
    recovered-combiner wrapper: value / partial / active)."""

    def __init__(self, family: str, coeffs, degree: int, active):
        self.family = family
        self.coeffs = np.asarray(coeffs, dtype=float)
        self.degree = degree
        self.active = frozenset(active)

    def value(self, x):
        x = np.asarray(x, dtype=float)
        x1, x2 = x[..., 0], x[..., 1]
        if self.family == "additive":
            return self.coeffs[0] * x1 + self.coeffs[1] * x2
        if self.family == "tensor":
            out = np.zeros(x1.shape)
            for c, (p, q) in zip(self.coeffs, _tensor_terms(self.degree)):
                out = out + c * x1 ** p * x2 ** q
            return out
        w1, w2, beta = self.coeffs
        m = np.maximum(w1 * x1, w2 * x2)
        return m + np.log(np.exp(beta * (w1 * x1 - m)) + np.exp(beta * (w2 * x2 - m))) / beta

    def partial(self, j: int, x):
        x = np.asarray(x, dtype=float)
        x1, x2 = x[..., 0], x[..., 1]
        if self.family == "additive":
            return np.full(x1.shape, self.coeffs[j])
        if self.family == "tensor":
            out = np.zeros(x1.shape)
            for c, (p, q) in zip(self.coeffs, _tensor_terms(self.degree)):
                e = (p, q)[j]
                if e == 0:
                    continue
                if j == 0:
                    out = out + c * e * x1 ** (e - 1) * x2 ** q
                else:
                    out = out + c * e * x1 ** p * x2 ** (e - 1)
            return out
        w1, w2, beta = self.coeffs
        e1 = np.exp(beta * w1 * x1)
        e2 = np.exp(beta * w2 * x2)
        share = (e1 if j == 0 else e2) / (e1 + e2)
        return share * (w1 if j == 0 else w2)

    def dependence(self, j: int) -> float:
        """Magnitude of the combiner's loading on coordinate j."""
        if self.family == "additive":
            return abs(float(self.coeffs[j]))
        if self.family == "tensor":
            return float(sum(abs(c) for c, pq in zip(self.coeffs, _tensor_terms(self.degree))
                             if pq[j] > 0))
        return abs(float(self.coeffs[j]))


# ---------------------------------------------------------------------------
# Objective pieces
# ---------------------------------------------------------------------------


class _FitData:
    """Design arrays shared by both half-steps (scalar covariates)."""

    def __init__(self, table: UhatTable, spec: SieveSpec):
        if table.z_points.shape[2] != 1 or table.z_points.shape[1] != 2:
            raise DomainError("the two-stage fit handles two bidders with scalar covariates")
        self.spec = spec
        self.u = table.values.ravel()
        nz, na = table.values.shape
        self.z1 = np.repeat(table.z_points[:, 0, 0], na)
        self.z2 = np.repeat(table.z_points[:, 1, 0], na)
        self.B1 = np.tile(bernstein_design(table.alpha_grid, spec.slope_degree), (nz, 1))
        self.B2 = bernstein_design(table.warp_levels.ravel(), spec.slope_degree)
        K = spec.slope_degree + 1
        self.L = np.tril(np.ones((K, K)))     # cumulative map: increments -> coefficients


def _signals(data: _FitData, gammas: dict):
    x1 = data.z1 * (data.B1 @ gammas[0])
    x2 = data.z2 * (data.B2 @ gammas[1])
    return np.stack([x1, x2], axis=-1)


def _objective(data: _FitData, phi: SievePhi, gammas: dict) -> float:
    resid = data.u - phi.value(_signals(data, gammas))
    return float(np.mean(resid ** 2))


# ---------------------------------------------------------------------------
# Half-steps
# ---------------------------------------------------------------------------


def _phi_step(data: _FitData, state: FitState, spec: SieveSpec) -> SievePhi:
    """Least squares over the combiner family given the slopes."""
    x = _signals(data, state.gammas)
    x1, x2 = x[..., 0], x[..., 1]
    if spec.phi_family == "additive":
        cols, free = [], []
        target = data.u.copy()
        coeffs = np.zeros(2)
        for j, xj in enumerate((x1, x2)):
            if j not in state.active:
                continue
            if spec.normalize_phi:
                coeffs[j] = 1.0
                target = target - xj
            else:
                cols.append(xj)
                free.append(j)
        if cols:
            beta = np.linalg.lstsq(np.column_stack(cols), target, rcond=None)[0]
            for j, b in zip(free, beta):
                coeffs[j] = b
        return SievePhi("additive", coeffs, 1, state.active)
    if spec.phi_family == "tensor":
        terms = _tensor_terms(spec.phi_degree)
        target = data.u.copy()
        pinned = {}
        if spec.normalize_phi:
            for j in state.active:
                t = (1, 0) if j == 0 else (0, 1)
                pinned[t] = 1.0
                target = target - (x1 if j == 0 else x2)
        cols, free = [], []
        for p, q in terms:
            if (p, q) in pinned:
                continue
            if (p > 0 and 0 not in state.active) or (q > 0 and 1 not in state.active):
                continue
            cols.append(x1 ** p * x2 ** q)
            free.append((p, q))
        coeffs = np.zeros(len(terms))
        if cols:
            beta = np.linalg.lstsq(np.column_stack(cols), target, rcond=None)[0]
            for t, b in zip(free, beta):
                coeffs[terms.index(t)] = b
        for t, v in pinned.items():
            coeffs[terms.index(t)] = v
        return SievePhi("tensor", coeffs, spec.phi_degree, state.active)
    # smooth-max: nonlinear in (w1, w2); sharpness kept fixed
    w0 = np.asarray(state.phi_coeffs, dtype=float)

    def resid(w):
        phi = SievePhi("smoothmax", [w[0], w[1], w0[2]], 1, state.active)
        return data.u - phi.value(x)

    sol = least_squares(resid, w0[:2], method="trf", bounds=(0.0, np.inf))
    return SievePhi("smoothmax", [sol.x[0], sol.x[1], w0[2]], 1, state.active)


def _slope_step_direct(data: _FitData, state: FitState, phi: SievePhi,
                       spec: SieveSpec) -> dict:
    """Slopes given the combiner.

    Linear combiners give a convex problem solved globally by nonnegative
    least squares on the increment parameterization; otherwise a bounded
    trust-region pass from the current iterate (kept only if it improves).
    """
    K = spec.slope_degree + 1
    active = sorted(state.active)
    if phi.family == "additive":
        cols = []
        for j in active:
            load = phi.coeffs[j]
            zj = data.z1 if j == 0 else data.z2
            Bj = data.B1 if j == 0 else data.B2
            cols.append(load * zj[:, None] * (Bj @ data.L))
        if not cols:
            return dict(state.gammas)
        X = np.hstack(cols)
        if np.linalg.norm(X) < 1e-12:
            return dict(state.gammas)
        beta = nnls(X, data.u)[0]
        out = dict(state.gammas)
        for s, j in enumerate(active):
            out[j] = data.L @ beta[s * K:(s + 1) * K]
        return out

    def unpack(eta):
        out = dict(state.gammas)
        for s, j in enumerate(active):
            out[j] = data.L @ (eta[s * K:(s + 1) * K] ** 2)
        return out

    eta0 = []
    for j in active:
        inc = np.diff(np.concatenate([[0.0], state.gammas[j]]))
        eta0.append(np.sqrt(np.maximum(inc, 1e-12)))
    eta0 = np.concatenate(eta0)

    def resid(eta):
        return data.u - phi.value(_signals(data, unpack(eta)))

    sol = least_squares(resid, eta0, method="trf", xtol=1e-14, ftol=1e-14, gtol=1e-14)
    return unpack(sol.x)


def alternate_minimize(data: _FitData, state: FitState, spec: SieveSpec) -> FitState:
    """One combiner step followed by one slope step, each kept only when it
    does not increase the objective."""
    current = _objective(data, SievePhi(spec.phi_family, state.phi_coeffs,
                                        spec.phi_degree, state.active), state.gammas)
    phi = _phi_step(data, state, spec)
    if _objective(data, phi, state.gammas) <= current + _SLACK:
        state = FitState(phi.coeffs, dict(state.gammas), set(state.active))
        current = _objective(data, phi, state.gammas)
    else:
        phi = SievePhi(spec.phi_family, state.phi_coeffs, spec.phi_degree, state.active)
    gammas = _slope_step_direct(data, state, phi, spec)
    if _objective(data, phi, gammas) <= current + _SLACK:
        state = FitState(state.phi_coeffs, gammas, set(state.active))
    return state


def dropout_monitor(history, phi: SievePhi, active, spec: SieveSpec, data: _FitData):
    """Flag a slope whose combiner loading has died while its iterates wander.

    history: list of gamma dicts, most recent last.  Returns (j, reason) or
    None.  A dead loading with a degenerate slope design also triggers (the
    iterates then sit at an arbitrary point rather than oscillate).
    """
    if len(history) < spec.min_iterations_before_drop:
        return None
    for j in sorted(active):
        dep = phi.dependence(j)
        if dep >= spec.drop_dep_tol:
            continue
        recent = [h[j] for h in history[-(spec.min_iterations_before_drop + 1):]]
        osc = max(float(np.max(np.abs(a - b)))
                  for a, b in zip(recent[1:], recent[:-1]))
        zj = data.z1 if j == 0 else data.z2
        degenerate = dep * float(np.max(np.abs(zj))) < 1e-12
        if osc > spec.drop_osc_tol or degenerate:
            why = "loading below threshold with oscillating iterates" \
                if osc > spec.drop_osc_tol else "loading and design degenerate"
            return j, why
    return None


def fit(table: UhatTable, spec: SieveSpec, init: FitState | None = None) -> FitResult:
    """Alternating minimization with the drop-out stopping rule."""
    data = _FitData(table, spec)
    K = spec.slope_degree + 1
    if init is None:
        ramp = np.linspace(0.3, 1.0, K)
        if spec.phi_family == "additive":
            p0 = np.ones(2)
        elif spec.phi_family == "tensor":
            terms = _tensor_terms(spec.phi_degree)
            p0 = np.zeros(len(terms))
            p0[terms.index((1, 0))] = 1.0
            p0[terms.index((0, 1))] = 1.0
        else:
            p0 = np.array([1.0, 1.0, 12.0])
        init = FitState(p0, {0: ramp.copy(), 1: ramp.copy()}, {0, 1})
    state = FitState(np.asarray(init.phi_coeffs, dtype=float),
                     {j: np.asarray(g, dtype=float) for j, g in init.gammas.items()},
                     set(init.active))

    path = [_objective(data, SievePhi(spec.phi_family, state.phi_coeffs,
                                      spec.phi_degree, state.active), state.gammas)]
    history = [dict(state.gammas)]
    drops = []
    converged = False
    for it in range(1, spec.max_iterations + 1):
        state = alternate_minimize(data, state, spec)
        obj = _objective(data, SievePhi(spec.phi_family, state.phi_coeffs,
                                        spec.phi_degree, state.active), state.gammas)
        if obj > path[-1] + _SLACK:
            raise RuntimeError(
                f"objective increased at iteration {it}: {path[-1]:.3e} -> {obj:.3e}")
        path.append(obj)
        history.append(dict(state.gammas))
        phi = SievePhi(spec.phi_family, state.phi_coeffs, spec.phi_degree, state.active)
        hit = dropout_monitor(history, phi, state.active, spec, data)
        if hit is not None:
            j, why = hit
            state.active.discard(j)
            drops.append((it, j, why))
        if len(path) >= 2 and abs(path[-2] - path[-1]) <= \
                spec.objective_rel_tol * max(path[-2], 1e-30):
            converged = True
            break
    return FitResult(phi_family=spec.phi_family, phi_coeffs=state.phi_coeffs,
                     gammas=state.gammas, objective_path=tuple(path),
                     drop_events=tuple(drops), converged=converged,
                     active=frozenset(state.active))


def fit_with_recovery_backend(table: UhatTable, fld, spec: SieveSpec,
                              state: FitState) -> dict:
    """Slope step via the constructive-recovery march with the current
    combiner iterate standing in for the truth (alternative to the direct
    least-squares step)."""
    from .identification import IdentifyOptions, solve_slopes_n2

    phi = SievePhi(spec.phi_family, state.phi_coeffs, spec.phi_degree, state.active)
    terminal = {j: np.atleast_1d(float(bernstein_design(1.0, spec.slope_degree)
                                       @ state.gammas[j])) for j in (0, 1)}
    opts = IdentifyOptions(alpha_grid=table.alpha_grid, z_eval=table.z_points[0])
    gamma, _, _ = solve_slopes_n2(fld, phi, terminal, table.z_points[0],
                                  table.alpha_grid, opts)
    # project onto the Bernstein family
    out = {}
    B = bernstein_design(table.alpha_grid, spec.slope_degree)
    for j in (0, 1):
        out[j] = np.linalg.lstsq(B, gamma[j][:, 0], rcond=None)[0]
    return out
