"""Ready-made model + profile configurations used by tests and the CLI.

The "canonical" fixtures pair linear slope curves with quantile warps of the
form alpha + delta(Z) alpha (1 - alpha), whose covariate gradients are
available in closed form, so every recovery step can be checked against
exact values.
"""

from __future__ import annotations

import numpy as np

from .combiners import PolynomialCombiner, SmoothMaxCombiner
from .copulas import GaussianCopula, IndependenceCopula, SignalCopula
from .model import MixedSignalModel
from .slopes import SlopeFunction
from .strategies import (
    LinearIndexBid,
    StrategyProfile,
    TanhDelta,
    make_synthetic_profile,
)


def uniform_ipv_model(n: int = 2) -> MixedSignalModel:
    """Private values uniform on [0, 1]: value = own signal."""
    combs = tuple(PolynomialCombiner.private_value(n, i) for i in range(n))
    slopes = tuple(tuple(SlopeFunction.identity() for _ in range(n)) for _ in range(n))
    return MixedSignalModel(combs, slopes, IndependenceCopula(n))


def symmetric_additive_model(copula: SignalCopula | None = None,
                             gamma1=(0.5, 0.5), gamma2=(0.4, 0.6)) -> MixedSignalModel:
    """Two bidders, common additive combiner, distinct linear slope curves."""
    comb = PolynomialCombiner.additive(np.ones(2))
    slopes = ((SlopeFunction.linear([gamma1[0]], [gamma1[1]]),
               SlopeFunction.linear([gamma2[0]], [gamma2[1]])),) * 2
    return MixedSignalModel((comb,) * 2, slopes, copula or IndependenceCopula(2))


def canonical_two_bidder(copula: SignalCopula | None = None,
                         combiner: PolynomialCombiner | None = None,
                         delta_weight: float = 0.5):
    """The standard two-bidder recovery fixture.

    Slopes 0.5 + 0.5 a and 0.4 + 0.6 a, combiner x1 + x2 + x1 x2, and the
    rival warp amplitude delta(Z) = w * tanh(Z_2 - Z_1), so the scaled warp
    gradient in Z_2 is exactly w * Z_2 * sech^2(Z_2 - Z_1).
    """
    comb = combiner or PolynomialCombiner.bilinear_pair()
    slopes = ((SlopeFunction.linear([0.5], [0.5]),
               SlopeFunction.linear([0.4], [0.6])),) * 2
    model = MixedSignalModel((comb,) * 2, slopes, copula or IndependenceCopula(2))
    base = LinearIndexBid(np.array([0.08, 0.08]), np.array([0.35, 0.35]))
    delta = TanhDelta(delta_weight, np.array([[-1.0], [1.0]]))
    profile = make_synthetic_profile(2, base, [None, delta], np.ones((2, 1)))
    return model, profile


def symmetric_two_bidder_fixture(copula: SignalCopula | None = None):
    """Same model as the canonical fixture but with exactly symmetric bids,
    so every covariate gradient of the warp vanishes identically."""
    model, _ = canonical_two_bidder(copula=copula)
    base = LinearIndexBid(np.array([0.08, 0.08]), np.array([0.35, 0.35]))
    profile = StrategyProfile((base, base))
    return model, profile


def canonical_three_bidder(copula: SignalCopula | None = None,
                           intercepts=(0.2, 0.3, 0.4), slopes_=(0.8, 0.6, 0.5)):
    """Three-bidder recovery fixture with strictly positive starting slopes.

    Additive combiner, independent signals by default, and per-rival warp
    amplitudes driven by different covariates so the scaled-gradient matrix
    is diagonal-dominant and nonsingular.
    """
    comb = PolynomialCombiner.additive(np.ones(3))
    gam = tuple(SlopeFunction.linear([b0], [b1]) for b0, b1 in zip(intercepts, slopes_))
    model = MixedSignalModel((comb,) * 3, (gam,) * 3, copula or IndependenceCopula(3))
    base = LinearIndexBid(np.full(3, 0.05), np.full(3, 0.25))
    delta2 = TanhDelta(0.3, np.array([[-1.0], [1.0], [0.0]]))
    delta3 = TanhDelta(0.25, np.array([[-0.8], [0.0], [1.0]]))
    profile = make_synthetic_profile(3, base, [None, delta2, delta3], np.ones((3, 1)))
    return model, profile


def private_value_fixture():
    """Focal bidder's value loads on its own signal only."""
    comb = PolynomialCombiner.private_value(2, 0)
    slopes = ((SlopeFunction.linear([0.5], [0.5]),
               SlopeFunction.linear([0.4], [0.6])),) * 2
    model = MixedSignalModel((comb,) * 2, slopes, IndependenceCopula(2))
    base = LinearIndexBid(np.array([0.08, 0.08]), np.array([0.35, 0.35]))
    delta = TanhDelta(0.5, np.array([[-1.0], [1.0]]))
    profile = make_synthetic_profile(2, base, [None, delta], np.ones((2, 1)))
    return model, profile


def uninformed_bidder_fixture():
    """Focal bidder's value loads on the rival signal only."""
    comb = PolynomialCombiner.additive([0.0, 1.0])
    slopes = ((SlopeFunction.linear([0.5], [0.5]),
               SlopeFunction.linear([0.4], [0.6])),) * 2
    model = MixedSignalModel((comb,) * 2, slopes, IndependenceCopula(2))
    base = LinearIndexBid(np.array([0.08, 0.08]), np.array([0.35, 0.35]))
    delta = TanhDelta(0.5, np.array([[-1.0], [1.0]]))
    profile = make_synthetic_profile(2, base, [None, delta], np.ones((2, 1)))
    return model, profile


def smoothmax_two_bidder(sharpness: float = 12.0):
    comb = SmoothMaxCombiner(2, (1.0, 1.0), sharpness)
    slopes = ((SlopeFunction.linear([0.5], [0.5]),
               SlopeFunction.linear([0.4], [0.6])),) * 2
    model = MixedSignalModel((comb,) * 2, slopes, IndependenceCopula(2))
    base = LinearIndexBid(np.array([0.08, 0.08]), np.array([0.35, 0.35]))
    delta = TanhDelta(0.5, np.array([[-1.0], [1.0]]))
    profile = make_synthetic_profile(2, base, [None, delta], np.ones((2, 1)))
    return model, profile


def affiliated_additive_model(rho: float = 0.5) -> MixedSignalModel:
    return symmetric_additive_model(copula=GaussianCopula(2, rho),
                                    gamma1=(0.0, 1.0), gamma2=(0.0, 1.0))
