"""Value combiners: maps from the n mixed signals to a bidder's expected value.

All combiners expose value/partial evaluators, a declared active coordinate
set, and the two rescalings that leave the induced valuation unchanged
(global scale and per-coordinate scale, the latter used for normalization).
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass

import numpy as np
from scipy.special import logsumexp, softmax


class CombinerBase:
    """Shared helpers; subclasses implement value/partial analytically."""

    n: int

    def value(self, x) -> np.ndarray:
        raise NotImplementedError

    def partial(self, j: int, x) -> np.ndarray:
        raise NotImplementedError

    def rescale(self, lam: float) -> "CombinerBase":
        """Combiner x -> value(x / lam)."""
        return self.coordinate_rescaled(np.full(self.n, lam))

    def coordinate_rescaled(self, scales) -> "CombinerBase":
        raise NotImplementedError

    @property
    def active(self) -> frozenset:
        raise NotImplementedError

    def normalization_constants(self) -> np.ndarray:
        """Partial derivatives at the origin (used to normalize active slopes)."""
        x0 = np.zeros(self.n)
        return np.array([self.partial(j, x0) for j in range(self.n)], dtype=float)

    def partial_grid(self, x) -> np.ndarray:
        """All partials stacked on the last axis, shape x.shape."""
        x = np.asarray(x, dtype=float)
        return np.stack([self.partial(j, x) for j in range(self.n)], axis=-1)


@dataclass(frozen=True)
class PolynomialCombiner(CombinerBase):
    """Multivariate polynomial combiner sum_t c_t * prod_j x_j^{p_tj}.

    terms maps exponent tuples (len n) to coefficients.  Covers the additive
    family (single-power terms) and low-order interaction families.
    """

    n: int
    terms: tuple  # tuple of (exponents tuple, coefficient)

    def __post_init__(self):
        terms = tuple(sorted((tuple(int(e) for e in p), float(c))
                             for p, c in dict(self.terms).items()))
        object.__setattr__(self, "terms", terms)
        for p, _ in terms:
            if len(p) != self.n:
                raise ValueError("exponent tuple length must equal n")

    @staticmethod
    def additive(weights) -> "PolynomialCombiner":
        w = np.asarray(weights, dtype=float)
        n = w.size
        terms = {}
        for j in range(n):
            if w[j] != 0.0:
                p = tuple(1 if k == j else 0 for k in range(n))
                terms[p] = w[j]
        return PolynomialCombiner(n, tuple(terms.items()))

    @staticmethod
    def private_value(n: int, i: int) -> "PolynomialCombiner":
        """Value equal to the i-th mixed signal only."""
        w = np.zeros(n)
        w[i] = 1.0
        return PolynomialCombiner.additive(w)

    @staticmethod
    def bilinear_pair(w1: float = 1.0, w2: float = 1.0, w12: float = 1.0) -> "PolynomialCombiner":
        """Two-signal combiner w1*x1 + w2*x2 + w12*x1*x2."""
        return PolynomialCombiner(2, (((1, 0), w1), ((0, 1), w2), ((1, 1), w12)))

    def value(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        out = np.zeros(x.shape[:-1])
        for p, c in self.terms:
            term = np.full(x.shape[:-1], c)
            for j, e in enumerate(p):
                if e:
                    term = term * x[..., j] ** e
            out = out + term
        return out

    def partial(self, j: int, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        out = np.zeros(x.shape[:-1])
        for p, c in self.terms:
            if p[j] == 0:
                continue
            term = np.full(x.shape[:-1], c * p[j])
            for k, e in enumerate(p):
                ek = e - 1 if k == j else e
                if ek:
                    term = term * x[..., k] ** ek
            out = out + term
        return out

    def coordinate_rescaled(self, scales) -> "PolynomialCombiner":
        s = np.asarray(scales, dtype=float)
        if np.any(s <= 0):
            raise ValueError("scales must be strictly positive")
        terms = tuple((p, c / np.prod(s ** np.array(p))) for p, c in self.terms)
        return PolynomialCombiner(self.n, terms)

    @property
    def active(self) -> frozenset:
        return frozenset(j for j in range(self.n)
                         if any(p[j] > 0 and c != 0.0 for p, c in self.terms))


@dataclass(frozen=True)
class SmoothMaxCombiner(CombinerBase):
    """Log-sum-exp surrogate for the maximum of weighted signals.

    value(x) = (1/sharpness) * log sum_j exp(sharpness * w_j * x_j).
    Differentiable everywhere, so usable by the identification machinery;
    approaches max_j w_j x_j as sharpness grows.
    """

    n: int
    weights: tuple
    sharpness: float = 12.0

    def __post_init__(self):
        w = tuple(float(v) for v in np.atleast_1d(self.weights))
        object.__setattr__(self, "weights", w)
        if len(w) != self.n:
            raise ValueError("weights length must equal n")
        if self.sharpness <= 0:
            raise ValueError("sharpness must be positive")

    def _scaled(self, x):
        x = np.asarray(x, dtype=float)
        return self.sharpness * np.asarray(self.weights) * x

    def value(self, x) -> np.ndarray:
        return logsumexp(self._scaled(x), axis=-1) / self.sharpness

    def partial(self, j: int, x) -> np.ndarray:
        sm = softmax(self._scaled(x), axis=-1)
        return sm[..., j] * self.weights[j]

    def coordinate_rescaled(self, scales) -> "SmoothMaxCombiner":
        s = np.asarray(scales, dtype=float)
        if np.any(s <= 0):
            raise ValueError("scales must be strictly positive")
        w = tuple(wj / sj for wj, sj in zip(self.weights, s))
        return SmoothMaxCombiner(self.n, w, self.sharpness)

    @property
    def active(self) -> frozenset:
        return frozenset(j for j in range(self.n) if self.weights[j] != 0.0)


@dataclass(frozen=True)
class HardMaxCombiner(CombinerBase):
    """Exact maximum of weighted signals.

    Not differentiable on ties; intended for simulation only.  The smooth
    surrogate above is the version the identification machinery consumes.
    """

    n: int
    weights: tuple

    def __post_init__(self):
        w = tuple(float(v) for v in np.atleast_1d(self.weights))
        object.__setattr__(self, "weights", w)

    def value(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        return np.max(np.asarray(self.weights) * x, axis=-1)

    def partial(self, j: int, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        wx = np.asarray(self.weights) * x
        hit = np.argmax(wx, axis=-1) == j
        return np.where(hit, self.weights[j], 0.0)

    def coordinate_rescaled(self, scales) -> "HardMaxCombiner":
        s = np.asarray(scales, dtype=float)
        return HardMaxCombiner(self.n, tuple(w / sj for w, sj in zip(self.weights, s)))

    @property
    def active(self) -> frozenset:
        return frozenset(j for j in range(self.n) if self.weights[j] != 0.0)


def combiner_partial_fd(combiner: CombinerBase, j: int, x, h: float = 1e-6) -> np.ndarray:
    """Central-difference partial, used to cross-check analytic evaluators."""
    x = np.asarray(x, dtype=float)
    xp = x.copy()
    xm = x.copy()
    xp[..., j] += h
    xm[..., j] -= h
    return (combiner.value(xp) - combiner.value(xm)) / (2 * h)


def tensor_exponents(n: int, max_degree: int):
    """All exponent tuples with per-coordinate degree <= max_degree, minus the constant."""
    out = [p for p in itertools.product(range(max_degree + 1), repeat=n) if any(p)]
    return sorted(out)
