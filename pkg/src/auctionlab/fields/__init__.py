from .base import AuctionField, SmootherConfig
from .diagnostics import (
    RankReport,
    StrategyConditionReport,
    rank_condition_report,
    strategy_condition_tests,
)
from .empirical import EmpiricalField
from .oracle import OracleField

__all__ = [
    "AuctionField",
    "SmootherConfig",
    "OracleField",
    "EmpiricalField",
    "RankReport",
    "rank_condition_report",
    "StrategyConditionReport",
    "strategy_condition_tests",
]
