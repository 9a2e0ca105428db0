"""Benchmark decision problems: generation, exact solvers, regret, worst cases."""

from .base import DecisionProblem, Split, SplitDataset, normalized_regret
from .budget import BudgetConfig, BudgetProblem
from .inventory import InventoryConfig, InventoryProblem
from .portfolio import PortfolioConfig, PortfolioProblem, covariance_estimate, load_returns_csv

PROBLEMS = {
    "inventory": InventoryProblem,
    "budget": BudgetProblem,
    "portfolio": PortfolioProblem,
}


def make_problem(name, config=None) -> DecisionProblem:
    try:
        cls = PROBLEMS[name]
    except KeyError:
        raise ValueError(f"unknown problem {name!r}; choose from {sorted(PROBLEMS)}") from None
    return cls(config)


__all__ = [
    "DecisionProblem", "Split", "SplitDataset", "normalized_regret",
    "InventoryConfig", "InventoryProblem",
    "BudgetConfig", "BudgetProblem",
    "PortfolioConfig", "PortfolioProblem",
    "covariance_estimate", "load_returns_csv",
    "PROBLEMS", "make_problem",
]
