"""Joint distributions of the uniform private signals given covariates.

Three families: independence, Gaussian with fixed equicorrelation, and
Gaussian with equicorrelation driven smoothly by the covariates.  All
expose the pieces the winning-probability and identification machinery
needs: joint density (with signal and covariate derivatives), conditional
densities/CDFs given an arbitrary coordinate subset, and a seeded sampler.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import stats

_NORM = stats.norm()
_PPF_CLIP = 1e-12


def _ppf(u):
    return _NORM.ppf(np.clip(u, _PPF_CLIP, 1 - _PPF_CLIP))


def _equicorr(n: int, rho: float) -> np.ndarray:
    return np.full((n, n), rho) + (1 - rho) * np.eye(n)


def _gauss_cond(R: np.ndarray, given_idx, given_x):
    """Mean weights and covariance of the free coordinates given the rest.

    Returns (free_idx, mean, cov) for a zero-mean normal with correlation R.
    """
    n = R.shape[0]
    given_idx = list(given_idx)
    free_idx = [k for k in range(n) if k not in given_idx]
    if not given_idx:
        return free_idx, np.zeros(len(free_idx)), R[np.ix_(free_idx, free_idx)]
    R11 = R[np.ix_(free_idx, free_idx)]
    R12 = R[np.ix_(free_idx, given_idx)]
    R22 = R[np.ix_(given_idx, given_idx)]
    W = np.linalg.solve(R22, R12.T).T          # R12 R22^{-1}
    mean = W @ np.asarray(given_x, dtype=float)
    cov = R11 - W @ R12.T
    return free_idx, mean, cov


class SignalCopula:
    """Interface: all methods accept Z (shape (n, D)) for compatibility even
    when the family ignores it."""

    n: int
    z_dependent: bool = False

    def density(self, u, Z=None) -> np.ndarray:
        raise NotImplementedError

    def density_dsignal(self, u, j: int, Z=None) -> np.ndarray:
        """Partial derivative of the joint density in the j-th signal."""
        raise NotImplementedError

    def density_zgrad_contracted(self, u, k: int, Z=None) -> np.ndarray:
        """Z_k' (gradient of density in Z_k); zero unless covariate-linked."""
        return np.zeros(np.asarray(u).shape[:-1])

    def cond_density(self, j: int, t, given: dict, Z=None) -> np.ndarray:
        """Density of signal j at t given {index: value} for other signals."""
        raise NotImplementedError

    def cond_below(self, i: int, alpha, thresholds, Z=None) -> np.ndarray:
        """P(A_j <= thresholds[j] for all j != i | A_i = alpha)."""
        raise NotImplementedError

    def boundary_weight(self, i: int, j: int, alpha, thresholds, Z=None) -> np.ndarray:
        """d/dt_j of cond_below: density of A_j at its threshold times the
        probability the remaining signals sit below theirs."""
        raise NotImplementedError

    def sample(self, m: int, rng: np.random.Generator, Z=None) -> np.ndarray:
        raise NotImplementedError

    def marginal_uniformity_error(self, j: int, Z=None, nodes: int = 48) -> float:
        """Max quadrature error of the j-th marginal density against 1.

        Integrates over the other signals in normal space (t = F(x), so the
        copula endpoint behavior is absorbed by the weight) with
        Gauss-Hermite nodes; the marginal must equal 1 at every probe level.
        """
        from numpy.polynomial import hermite_e

        x, w = hermite_e.hermegauss(nodes)
        w = w / np.sqrt(2 * np.pi)
        t = _NORM.cdf(x)
        probe = np.linspace(0.02, 0.98, 25)
        worst = 0.0
        others = [k for k in range(self.n) if k != j]
        if len(others) == 1:
            for aj in probe:
                u = np.zeros((nodes, self.n))
                u[:, j] = aj
                u[:, others[0]] = t
                worst = max(worst, abs(float(w @ self.density(u, Z)) - 1.0))
        elif len(others) == 2:
            T2, T3 = np.meshgrid(t, t, indexing="ij")
            W2 = np.outer(w, w).ravel()
            for aj in probe:
                u = np.zeros((nodes * nodes, self.n))
                u[:, j] = aj
                u[:, others[0]] = T2.ravel()
                u[:, others[1]] = T3.ravel()
                worst = max(worst, abs(float(W2 @ self.density(u, Z)) - 1.0))
        else:
            raise NotImplementedError("marginal check implemented for n <= 3")
        return worst


@dataclass(frozen=True)
class IndependenceCopula(SignalCopula):
    n: int

    def density(self, u, Z=None):
        u = np.asarray(u, dtype=float)
        return np.ones(u.shape[:-1])

    def density_dsignal(self, u, j, Z=None):
        u = np.asarray(u, dtype=float)
        return np.zeros(u.shape[:-1])

    def cond_density(self, j, t, given, Z=None):
        return np.ones(np.shape(t))

    def cond_below(self, i, alpha, thresholds, Z=None):
        thresholds = np.asarray(thresholds, dtype=float)
        out = np.ones(np.shape(alpha))
        for j in range(self.n):
            if j != i:
                out = out * np.clip(thresholds[..., j], 0.0, 1.0)
        return out

    def boundary_weight(self, i, j, alpha, thresholds, Z=None):
        thresholds = np.asarray(thresholds, dtype=float)
        out = np.ones(np.shape(alpha))
        for k in range(self.n):
            if k != i and k != j:
                out = out * np.clip(thresholds[..., k], 0.0, 1.0)
        return out

    def sample(self, m, rng, Z=None):
        return rng.random((m, self.n))


class _GaussianCore(SignalCopula):
    """Shared Gaussian-copula evaluators parameterized by a correlation value."""

    def _rho(self, Z):
        raise NotImplementedError

    def _R(self, Z):
        return _equicorr(self.n, self._rho(Z))

    def density(self, u, Z=None):
        u = np.asarray(u, dtype=float)
        x = _ppf(u)
        R = self._R(Z)
        Rinv = np.linalg.inv(R)
        quad = np.einsum("...i,ij,...j->...", x, Rinv - np.eye(self.n), x)
        det = np.linalg.det(R)
        return np.exp(-0.5 * quad) / np.sqrt(det)

    def density_dsignal(self, u, j, Z=None):
        u = np.asarray(u, dtype=float)
        x = _ppf(u)
        R = self._R(Z)
        Rinv = np.linalg.inv(R)
        c = self.density(u, Z)
        dlog_dxj = -np.einsum("ij,...j->...i", Rinv - np.eye(self.n), x)[..., j]
        return c * dlog_dxj / _NORM.pdf(x[..., j])

    def _density_drho(self, u, Z=None, h: float = 1e-6):
        u = np.asarray(u, dtype=float)
        x = _ppf(u)
        rho = self._rho(Z)

        def dens_at(r):
            R = _equicorr(self.n, r)
            Rinv = np.linalg.inv(R)
            quad = np.einsum("...i,ij,...j->...", x, Rinv - np.eye(self.n), x)
            return np.exp(-0.5 * quad) / np.sqrt(np.linalg.det(R))

        return (dens_at(rho + h) - dens_at(rho - h)) / (2 * h)

    def cond_density(self, j, t, given, Z=None):
        R = self._R(Z)
        idx = sorted(given)
        xg = _ppf(np.array([given[k] for k in idx]))
        free, mean, cov = _gauss_cond(R, idx, xg)
        pos = free.index(j)
        if len(free) > 1:
            # marginalize the remaining free coordinates
            mean = mean[pos]
            var = cov[pos, pos]
        else:
            mean = mean[0]
            var = cov[0, 0]
        xt = _ppf(np.asarray(t, dtype=float))
        return _NORM.pdf((xt - mean) / np.sqrt(var)) / (np.sqrt(var) * _NORM.pdf(xt))

    def cond_below(self, i, alpha, thresholds, Z=None):
        R = self._R(Z)
        alpha = np.asarray(alpha, dtype=float)
        thresholds = np.asarray(thresholds, dtype=float)
        xg = _ppf(alpha)
        free, _, cov = _gauss_cond(R, [i], [0.0])
        W = R[np.ix_(free, [i])] / R[i, i]       # conditional mean weights
        scalar = alpha.ndim == 0
        xg_b = np.atleast_1d(xg)
        th_b = thresholds.reshape((-1, self.n)) if thresholds.ndim > 1 else \
            np.broadcast_to(thresholds, (xg_b.size, self.n))
        out = np.empty(xg_b.size)
        if len(free) == 1:
            lim = _ppf(np.clip(th_b[:, free[0]], 0.0, 1.0))
            out = _NORM.cdf((lim - W[0, 0] * xg_b) / np.sqrt(cov[0, 0]))
        else:
            mvn = stats.multivariate_normal(mean=np.zeros(len(free)), cov=cov,
                                            allow_singular=True)
            for s in range(xg_b.size):
                lim = _ppf(np.clip(th_b[s, free], 0.0, 1.0))
                out[s] = mvn.cdf(lim - (W[:, 0] * xg_b[s]))
        out = np.clip(out, 0.0, 1.0)
        return float(out[0]) if scalar else out.reshape(alpha.shape)

    def boundary_weight(self, i, j, alpha, thresholds, Z=None):
        thresholds = np.asarray(thresholds, dtype=float)
        alpha_f = float(np.asarray(alpha))
        tj = float(thresholds[j])
        dens = self.cond_density(j, tj, {i: alpha_f}, Z)
        rest = [k for k in range(self.n) if k not in (i, j)]
        if not rest:
            return float(dens)
        R = self._R(Z)
        xg = _ppf(np.array([alpha_f, tj]))
        free, mean, cov = _gauss_cond(R, [i, j], xg)
        lim = _ppf(np.clip(thresholds[rest], 0.0, 1.0))
        if len(free) == 1:
            tail = _NORM.cdf((lim[0] - mean[0]) / np.sqrt(cov[0, 0]))
        else:
            mvn = stats.multivariate_normal(mean=mean, cov=cov, allow_singular=True)
            tail = mvn.cdf(lim)
        return float(dens * tail)

    def sample(self, m, rng, Z=None):
        R = self._R(Z)
        L = np.linalg.cholesky(R)
        eps = rng.standard_normal((m, self.n))
        return _NORM.cdf(eps @ L.T)


@dataclass(frozen=True)
class GaussianCopula(_GaussianCore):
    """Equicorrelated Gaussian copula, correlation independent of Z."""

    n: int
    rho: float

    def __post_init__(self):
        lower = -1.0 / (self.n - 1)
        if not lower < self.rho < 1.0:
            raise ValueError(f"rho must lie in ({lower:.3f}, 1) for n={self.n}")

    def _rho(self, Z):
        return self.rho


@dataclass(frozen=True)
class ZLinkedGaussianCopula(_GaussianCore):
    """Gaussian copula whose equicorrelation moves smoothly with Z.

    rho(Z) = rho_max * tanh(gain * mean(Z)).  The covariate gradient of the
    density follows from the chain rule through rho.
    """

    n: int
    rho_max: float = 0.5
    gain: float = 0.5
    z_dependent: bool = True

    def _rho(self, Z):
        if Z is None:
            raise ValueError("covariate-linked copula requires Z")
        zbar = float(np.mean(np.asarray(Z, dtype=float)))
        return self.rho_max * np.tanh(self.gain * zbar)

    def rho_zgrad(self, Z) -> np.ndarray:
        """Gradient of rho in the flattened Z entries, shape (n, D)."""
        Z = np.asarray(Z, dtype=float)
        zbar = float(np.mean(Z))
        d = self.rho_max * self.gain * (1.0 - np.tanh(self.gain * zbar) ** 2)
        return np.full(Z.shape, d / Z.size)

    def density_zgrad_contracted(self, u, k, Z=None):
        Z = np.asarray(Z, dtype=float)
        drho = self._density_drho(u, Z)
        g = self.rho_zgrad(Z)
        return drho * float(Z[k] @ g[k])

    def sample(self, m, rng, Z=None):
        """Z may be a single (n, D) point or a batch (m, n, D)."""
        Z = np.asarray(Z, dtype=float)
        if Z.ndim == 2:
            return super().sample(m, rng, Z)
        rho = self.rho_max * np.tanh(self.gain * Z.reshape(m, -1).mean(axis=1))
        R = (np.eye(self.n)[None] * (1.0 - rho[:, None, None])
             + rho[:, None, None] * np.ones((self.n, self.n))[None])
        L = np.linalg.cholesky(R)
        eps = rng.standard_normal((m, self.n))
        return _NORM.cdf(np.einsum("mij,mj->mi", L, eps))
