"""Advertising-site selection under per-user click-through rates.

Choose exactly B of W sites to maximize the expected number of users who
click at least once:

    max_a sum_u ( 1 - prod_w (1 - a_w y_wu) ),   a binary, sum a = B

Targets are the full CTR matrix flattened row-major. Difficulty is tuned by
appending extra "fake" uninformative CTR rows (extra candidate sites whose
rates carry no feature signal); the optimization runs over the extended site
set. The solver enumerates all C(W, B) subsets exactly.
"""

import math
from dataclasses import dataclass
from itertools import combinations

import numpy as np

from .base import DecisionProblem, Split, SplitDataset


@dataclass
class BudgetConfig:
    users: int = 10
    websites: int = 5
    budget: int = 2
    fakes: int = 0
    n_train: int = 80
    n_val: int = 20
    n_test: int = 100
    mixing: np.ndarray | None = None  # feature map applied to each real site's CTR row

    def __post_init__(self):
        if not (1 <= self.budget <= self.websites):
            raise ValueError(f"budget must satisfy 1 <= B <= W, got B={self.budget}, W={self.websites}")
        if self.fakes < 0:
            raise ValueError("fakes must be >= 0")


class BudgetProblem(DecisionProblem):
    name = "budget"
    sense = "max"
    prediction_loss_tag = "mse"
    output_activation = "linear"

    def __init__(self, config: BudgetConfig | None = None):
        self.config = config or BudgetConfig()
        cfg = self.config
        self.users = cfg.users
        self.sites = cfg.websites + cfg.fakes
        self.budget = cfg.budget
        self.target_dim = self.sites * cfg.users
        self.feature_dim = cfg.websites * cfg.users
        self._subsets = np.array(list(combinations(range(self.sites), self.budget)))

    def generate(self, seed) -> SplitDataset:
        """Real-site CTRs are uniform[0,1]; features mix them linearly; fakes carry no signal."""
        rng = np.random.default_rng(seed)
        cfg = self.config
        u, w = cfg.users, cfg.websites
        mixing = cfg.mixing if cfg.mixing is not None else rng.normal(size=(u, u)) / np.sqrt(u)
        splits = []
        for n in (cfg.n_train, cfg.n_val, cfg.n_test):
            real = rng.uniform(0.0, 1.0, size=(n, w, u))
            x = (real @ mixing.T).reshape(n, w * u)
            if cfg.fakes:
                fake = rng.uniform(0.0, 1.0, size=(n, cfg.fakes, u))
                y = np.concatenate([real, fake], axis=1).reshape(n, self.target_dim)
            else:
                y = real.reshape(n, self.target_dim)
            splits.append(Split(x=x, y=y))
        return SplitDataset(train=splits[0], val=splits[1], test=splits[2],
                            extras={"mixing": mixing})

    def _ctr_matrix(self, y):
        y = np.asarray(y, dtype=float)
        if y.size != self.target_dim:
            raise ValueError(f"target has {y.size} entries, expected {self.target_dim}")
        return y.reshape(self.sites, self.users)

    def objective(self, a, y) -> float:
        """Expected number of users clicking at least once on the selected sites."""
        a = np.asarray(a, dtype=float).reshape(-1)
        ctr = self._ctr_matrix(y)
        if a.shape[0] != self.sites:
            raise ValueError(f"decision has {a.shape[0]} entries, expected {self.sites}")
        miss = np.prod(1.0 - a[:, None] * ctr, axis=0)
        return float((1.0 - miss).sum())

    def _subset_objectives(self, ctr):
        chosen = ctr[self._subsets]  # (n_subsets, B, U)
        miss = np.prod(1.0 - chosen, axis=1)
        return (1.0 - miss).sum(axis=1)

    def solve(self, y_hat) -> np.ndarray:
        """Exact maximizer over all C(W, B) subsets; ties go to the lexicographically smallest."""
        ctr = np.clip(self._ctr_matrix(y_hat), 0.0, 1.0)
        values = self._subset_objectives(ctr)
        best = self._subsets[int(np.argmax(values))]  # argmax takes the first, i.e. lex-smallest
        a = np.zeros(self.sites)
        a[best] = 1.0
        return a

    def task_loss(self, decision, y) -> float:
        return self.objective(decision, np.clip(self._ctr_matrix(y), 0.0, 1.0))

    def worst_decision(self, y) -> np.ndarray:
        """Feasible subset with the minimal true objective, by exhaustive enumeration."""
        ctr = np.clip(self._ctr_matrix(y), 0.0, 1.0)
        values = self._subset_objectives(ctr)
        worst = self._subsets[int(np.argmin(values))]
        a = np.zeros(self.sites)
        a[worst] = 1.0
        return a
