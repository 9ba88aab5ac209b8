"""Monotone slope curves on [0, 1].

A slope curve maps a private signal level in [0, 1] to a D-vector of
nonnegative, nondecreasing coefficients.  Curves are stored as polynomial
or Bernstein coefficient arrays so that derivatives are exact.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from numpy.polynomial import polynomial as npoly
from scipy.special import comb


def bernstein_design(a, degree: int) -> np.ndarray:
    """Design matrix of Bernstein basis polynomials b_{k,degree}(a).

    Returns shape a.shape + (degree+1,).
    """
    a = np.asarray(a, dtype=float)
    k = np.arange(degree + 1)
    out = comb(degree, k) * a[..., None] ** k * (1.0 - a[..., None]) ** (degree - k)
    return out


def bernstein_deriv_design(a, degree: int) -> np.ndarray:
    """Design matrix of d/da b_{k,degree}(a), shape a.shape + (degree+1,)."""
    a = np.asarray(a, dtype=float)
    lower = bernstein_design(a, degree - 1) if degree >= 1 else np.zeros(a.shape + (0,))
    out = np.zeros(a.shape + (degree + 1,))
    if degree >= 1:
        out[..., :-1] -= degree * lower
        out[..., 1:] += degree * lower
    return out


@dataclass(frozen=True)
class SlopeFunction:
    """Coefficient-backed slope curve with exact derivative.

    coeffs has shape (D, K): one coefficient row per output dimension.
    basis is "poly" (ascending powers) or "bernstein".
    """

    coeffs: np.ndarray
    basis: str = "poly"

    def __post_init__(self):
        c = np.atleast_2d(np.asarray(self.coeffs, dtype=float))
        object.__setattr__(self, "coeffs", c)
        if self.basis not in ("poly", "bernstein"):
            raise ValueError(f"unknown slope basis {self.basis!r}")

    @property
    def dim(self) -> int:
        return self.coeffs.shape[0]

    @property
    def degree(self) -> int:
        return self.coeffs.shape[1] - 1

    def __call__(self, a) -> np.ndarray:
        """Evaluate, returning shape a.shape + (D,)."""
        a = np.asarray(a, dtype=float)
        if self.basis == "poly":
            vals = np.moveaxis(npoly.polyval(a, self.coeffs.T), 0, -1)
        else:
            vals = bernstein_design(a, self.degree) @ self.coeffs.T
        return vals

    def deriv(self, a) -> np.ndarray:
        """First derivative, shape a.shape + (D,)."""
        a = np.asarray(a, dtype=float)
        if self.basis == "poly":
            dc = npoly.polyder(self.coeffs.T, axis=0)
            if dc.shape[0] == 0:
                return np.zeros(a.shape + (self.dim,))
            vals = np.moveaxis(npoly.polyval(a, dc), 0, -1)
        else:
            vals = bernstein_deriv_design(a, self.degree) @ self.coeffs.T
        return vals

    def scale(self, lam: float) -> "SlopeFunction":
        return SlopeFunction(lam * self.coeffs, self.basis)

    def scale_per_dim(self, factors) -> "SlopeFunction":
        factors = np.asarray(factors, dtype=float).reshape(-1, 1)
        return SlopeFunction(factors * self.coeffs, self.basis)

    # Convenience constructors -------------------------------------------

    @staticmethod
    def linear(intercepts, slopes) -> "SlopeFunction":
        """gamma_d(a) = intercepts[d] + slopes[d] * a."""
        b0 = np.atleast_1d(np.asarray(intercepts, dtype=float))
        b1 = np.atleast_1d(np.asarray(slopes, dtype=float))
        return SlopeFunction(np.column_stack([b0, b1]), "poly")

    @staticmethod
    def identity(dim: int = 1) -> "SlopeFunction":
        return SlopeFunction.linear(np.zeros(dim), np.ones(dim))

    @staticmethod
    def constant(values) -> "SlopeFunction":
        v = np.atleast_1d(np.asarray(values, dtype=float))
        return SlopeFunction(v.reshape(-1, 1), "poly")

    # Invariant checks ----------------------------------------------------

    def check(self, grid_points: int = 101, tol: float = 1e-10) -> "SlopeCheck":
        """Grid check: entries nonnegative, nondecreasing, one strictly increasing,
        derivative finite."""
        a = np.linspace(0.0, 1.0, grid_points)
        vals = self(a)          # (m, D)
        derivs = self.deriv(a)
        problems = []
        first_violation = None
        if np.any(vals < -tol):
            idx = np.argwhere(vals < -tol)[0]
            first_violation = float(a[idx[0]])
            problems.append(f"negative entry at a={a[idx[0]]:.4f}, dim {idx[1]}")
        diffs = np.diff(vals, axis=0)
        if np.any(diffs < -tol):
            idx = np.argwhere(diffs < -tol)[0]
            if first_violation is None:
                first_violation = float(a[idx[0] + 1])
            problems.append(f"decreasing entry at a={a[idx[0] + 1]:.4f}, dim {idx[1]}")
        ranges = vals[-1] - vals[0]
        if not np.any(ranges > tol):
            problems.append("no strictly increasing entry")
        if not np.all(np.isfinite(derivs)):
            problems.append("non-finite derivative")
        return SlopeCheck(passed=not problems, problems=tuple(problems),
                          first_violation=first_violation)


@dataclass(frozen=True)
class SlopeCheck:
    passed: bool
    problems: tuple = field(default_factory=tuple)
    first_violation: float | None = None
