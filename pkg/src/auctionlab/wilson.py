"""Noisy-common-value model: unknown common value observed through
bidder-specific Gaussian noise, with covariates encoding signal precision.

The common value is V = gamma0(F(nu)) for a standard normal nu, where
gamma0 is the value quantile function.  Bidder i observes nu_i = nu +
sigma_i * eps_i and the equivalent uniform signal A_i = F(nu_i / sqrt(1 +
sigma_i^2)).  The covariate is Z_i = sqrt(1 + sigma_i^2) / sigma_i^2, so a
larger Z_i means higher precision; the posterior of nu given (A, Z) is
normal with mean sum_i Z_i F^{-1}(A_i) / S2 and variance 1 / S2 where
S2 = 1 + sum_i 1/sigma_i^2.  As Z_i grows the posterior value converges to
gamma0(A_i), which is the basis of the recovery-by-extrapolation routine.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numpy.polynomial import hermite_e
from scipy import stats

_NORM = stats.norm()


class QuadratureError(RuntimeError):
    """Posterior quadrature failed to converge; carries the error estimate."""


def precision_from_covariate(z):
    """1/sigma^2 from Z = sqrt(1 + sigma^2)/sigma^2 (inverse of the link)."""
    z = np.asarray(z, dtype=float)
    return np.sqrt(z * z + 0.25) - 0.5


def covariate_from_sigma(sigma):
    sigma = np.asarray(sigma, dtype=float)
    return np.sqrt(1.0 + sigma * sigma) / (sigma * sigma)


def sigma_from_covariate(z):
    return 1.0 / np.sqrt(precision_from_covariate(z))


def lognormal_quantile(mu: float = 0.0, s: float = 0.5):
    """Quantile function of a lognormal value, usable as gamma0."""

    def q(u):
        return np.exp(mu + s * _NORM.ppf(np.clip(u, 1e-12, 1 - 1e-12)))

    return q


@dataclass(frozen=True)
class WilsonSpec:
    """Value quantile function plus per-bidder noise scales."""

    gamma0: object                 # callable u in (0,1) -> value
    sigmas: tuple
    quad_nodes: int = 64
    gamma0_is_normal_quantile: bool = False

    def __post_init__(self):
        object.__setattr__(self, "sigmas", tuple(float(s) for s in self.sigmas))
        if any(s <= 0 for s in self.sigmas):
            raise ValueError("noise scales must be positive")

    @property
    def n(self) -> int:
        return len(self.sigmas)

    @property
    def covariates(self) -> np.ndarray:
        return covariate_from_sigma(np.array(self.sigmas))

    def check_link_roundtrip(self, atol: float = 1e-10) -> bool:
        z = self.covariates
        return bool(np.allclose(sigma_from_covariate(z), self.sigmas, atol=atol))

    def posterior_value(self, A, Z=None) -> float:
        """E[value | A, Z] by Gauss-Hermite quadrature against the posterior.

        Z defaults to the covariates implied by the stored noise scales; an
        explicit Z overrides them (the precision link is inverted).
        """
        A = np.asarray(A, dtype=float)
        if np.any((A <= 0) | (A >= 1)):
            raise ValueError("signals must lie strictly inside (0, 1)")
        z = self.covariates if Z is None else np.asarray(Z, dtype=float)
        prec = precision_from_covariate(z)
        s2 = 1.0 + float(np.sum(prec))
        mean = float(np.sum(z * _NORM.ppf(A))) / s2
        sd = 1.0 / np.sqrt(s2)
        if self.gamma0_is_normal_quantile:
            # gamma0 = F^{-1} means the value is nu itself: posterior mean.
            return mean
        val, err = self._hermite(mean, sd, self.quad_nodes)
        if err > 1e-8 * max(1.0, abs(val)):
            raise QuadratureError(f"posterior quadrature error estimate {err:.3e}")
        return val

    def _hermite(self, mean: float, sd: float, nodes: int):
        x, w = hermite_e.hermegauss(nodes)
        vals = self.gamma0(_NORM.cdf(mean + sd * x))
        est = float(w @ vals) / np.sqrt(2 * np.pi)
        x2, w2 = hermite_e.hermegauss(max(8, nodes // 2))
        est2 = float(w2 @ self.gamma0(_NORM.cdf(mean + sd * x2))) / np.sqrt(2 * np.pi)
        return est, abs(est - est2)

    def limit_value_sequence(self, i: int, A, z_values) -> np.ndarray:
        """Posterior values along a diverging precision sequence for bidder i."""
        z_values = np.asarray(z_values, dtype=float)
        if np.any(np.diff(z_values) <= 0):
            raise ValueError("covariate sequence must increase")
        base = self.covariates.copy()
        out = []
        for zi in z_values:
            z = base.copy()
            z[i] = zi
            out.append(self.posterior_value(A, z))
        return np.array(out)

    def extrapolated_limit(self, i: int, A, z_values) -> float:
        """Richardson extrapolation of the posterior value to infinite precision.

        Works in h = 1/Z_i, where the posterior value is smooth with a finite
        limit gamma0(A_i) at h = 0.
        """
        vals = self.limit_value_sequence(i, A, z_values)
        h = 1.0 / np.asarray(z_values, dtype=float)
        return neville_to_zero(h, vals)


def neville_to_zero(h, vals) -> float:
    """Polynomial extrapolation of vals(h) to h = 0 (Neville tableau)."""
    h = np.asarray(h, dtype=float)
    t = np.array(vals, dtype=float)
    m = t.size
    for level in range(1, m):
        t = (h[level:] * t[:-1] - h[:m - level] * t[1:]) / (h[level:] - h[:m - level])
    return float(t[0])


def extrapolation_diverges(h, vals) -> bool:
    """Flag sequences whose successive extrapolants move apart."""
    diffs = []
    for k in range(2, len(vals) + 1):
        diffs.append(neville_to_zero(h[:k], vals[:k]))
    steps = np.abs(np.diff(diffs))
    return bool(len(steps) >= 2 and steps[-1] > 2.0 * steps[-2] + 1e-12)
