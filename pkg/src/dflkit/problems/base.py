"""Shared contract for benchmark decision problems.

A problem bundles instance generation, an exact solver, the task objective,
regret, and the worst-case loss used to normalize regret. Solvers are pure
functions of their inputs; datasets are immutable after generation.
"""

from dataclasses import dataclass, field

import numpy as np


@dataclass
class Split:
    """One dataset split: features x (n, feature_dim) and targets y (n, target_dim)."""

    x: np.ndarray
    y: np.ndarray

    def __len__(self):
        return self.x.shape[0]


@dataclass
class SplitDataset:
    """Train/validation/test splits plus problem-specific extras (hidden truths etc.)."""

    train: Split
    val: Split
    test: Split
    extras: dict = field(default_factory=dict)


class DecisionProblem:
    """Contract for a decision problem.

    Subclasses set `sense` ("min" or "max"), `target_dim`, `feature_dim`,
    `prediction_loss_tag` ("mse" or "nll"), `output_activation` for the
    predictive model, and implement generate/solve/task_loss/
    worst_case_loss/worst_decision.
    """

    name = "abstract"
    sense = "min"
    prediction_loss_tag = "mse"
    output_activation = "linear"
    target_is_simplex = False

    target_dim: int
    feature_dim: int

    def generate(self, seed) -> SplitDataset:
        raise NotImplementedError

    def solve(self, y_hat) -> np.ndarray:
        raise NotImplementedError

    def task_loss(self, decision, y) -> float:
        """Objective value of `decision` under true targets y, in the problem's natural sense."""
        raise NotImplementedError

    def worst_case_loss(self, y) -> float:
        return self.task_loss(self.worst_decision(y), y)

    def worst_decision(self, y) -> np.ndarray:
        raise NotImplementedError

    def optimal_loss(self, y) -> float:
        return self.task_loss(self.solve(y), y)

    def regret(self, y_hat, y) -> float:
        """Nonnegative decision regret of predicting y_hat when the truth is y.

        Max-sense objectives are negated, so regret is always
        loss-at-predicted-decision minus loss-at-optimal-decision.
        """
        y_hat = np.asarray(y_hat, dtype=float)
        y = np.asarray(y, dtype=float)
        if y_hat.shape != y.shape:
            raise ValueError(f"prediction shape {y_hat.shape} != target shape {y.shape}")
        loss_pred = self.task_loss(self.solve(y_hat), y)
        loss_opt = self.optimal_loss(y)
        raw = loss_pred - loss_opt if self.sense == "min" else loss_opt - loss_pred
        return max(raw, 0.0)

    def worst_regret(self, y) -> float:
        """Regret of the worst feasible decision; the per-instance normalizer."""
        worst = self.worst_case_loss(y)
        opt = self.optimal_loss(y)
        return worst - opt if self.sense == "min" else opt - worst


def normalized_regret(problem: DecisionProblem, predictions, targets) -> float:
    """Ratio-of-sums normalization: sum regret_i / sum worst_regret_i.

    0 when every decision is optimal, 1 when every decision is worst;
    robust when individual worst regrets are near zero.
    """
    predictions = np.asarray(predictions, dtype=float)
    targets = np.asarray(targets, dtype=float)
    total = 0.0
    total_worst = 0.0
    for y_hat, y in zip(predictions, targets):
        total += problem.regret(y_hat, y)
        total_worst += problem.worst_regret(y)
    if total_worst <= 0:
        raise ValueError("degenerate normalizer: total worst-case regret is zero")
    return total / total_worst
