"""auctionlab: first-price auctions with covariate-shifted interdependent values.

A laboratory for generating first-price-auction bids from a mixed-signal
valuation model, recovering the model primitives (value combiner, slope
curves, joint signal distribution) from bids, and computing counterfactual
seller revenue under alternative auction formats.
"""

__version__ = "0.1.0"

from .slopes import SlopeFunction
from .combiners import (
    HardMaxCombiner,
    PolynomialCombiner,
    SmoothMaxCombiner,
)
from .copulas import GaussianCopula, IndependenceCopula, ZLinkedGaussianCopula
from .model import AssumptionReport, MixedSignalModel
from .wilson import WilsonSpec

__all__ = [
    "SlopeFunction",
    "PolynomialCombiner",
    "SmoothMaxCombiner",
    "HardMaxCombiner",
    "IndependenceCopula",
    "GaussianCopula",
    "ZLinkedGaussianCopula",
    "MixedSignalModel",
    "AssumptionReport",
    "WilsonSpec",
    "__version__",
]
