"""Stock-ordering problem with discrete stochastic demand.

The order quantity a >= 0 is chosen before demand realizes. Costs combine a
linear+quadratic ordering charge with linear+quadratic penalties on the
unmet (backorder) and excess (holding) quantities:

    f(y, a) = c0 a + q0/2 a^2
            + cb [y-a]_+ + qb/2 [y-a]_+^2
            + ch [a-y]_+ + qh/2 [a-y]_+^2

The target is a probability vector over the discrete demand levels; the task
loss is the expected cost under it. The expected cost is piecewise quadratic
and strictly convex in a, so the solver enumerates the quadratic segments
between demand levels and takes the best clipped vertex.
"""

from dataclasses import dataclass, field

import numpy as np

from .base import DecisionProblem, Split, SplitDataset

DEFAULT_DEMANDS = (1.0, 2.0, 5.0, 10.0, 20.0)
DEFAULT_COSTS = (10.0, 2.0, 30.0, 14.0, 10.0, 2.0)  # c0, q0, cb, qb, ch, qh


@dataclass
class InventoryConfig:
    feature_dim: int = 20
    demands: tuple = DEFAULT_DEMANDS
    costs: tuple = DEFAULT_COSTS
    n_train: int = 400
    n_val: int = 100
    n_test: int = 400
    theta: np.ndarray | None = None  # true feature->logit map; drawn at generation if None
    signal_scale: float = 2.0  # logit std of the drawn map; controls demand predictability

    def __post_init__(self):
        d = np.asarray(self.demands, dtype=float)
        if np.any(d <= 0) or np.any(np.diff(d) <= 0):
            raise ValueError("demands must be strictly increasing and positive")
        if len(self.costs) != 6 or any(c <= 0 for c in self.costs):
            raise ValueError("need six positive cost coefficients (c0, q0, cb, qb, ch, qh)")


class InventoryProblem(DecisionProblem):
    name = "inventory"
    sense = "min"
    prediction_loss_tag = "nll"
    output_activation = "softmax"
    target_is_simplex = True

    def __init__(self, config: InventoryConfig | None = None):
        self.config = config or InventoryConfig()
        self.demands = np.asarray(self.config.demands, dtype=float)
        self.costs = tuple(float(c) for c in self.config.costs)
        self.target_dim = len(self.demands)
        self.feature_dim = self.config.feature_dim

    def generate(self, seed) -> SplitDataset:
        """Features are standard normal; demand indices are drawn from softmax(theta^T x).

        Stored targets are one-hot vectors of the realized demand. The hidden
        per-instance probability vectors are kept in extras["true_p"] for
        oracle tests only.
        """
        rng = np.random.default_rng(seed)
        cfg = self.config
        d, k = cfg.feature_dim, self.target_dim
        if cfg.theta is not None:
            theta = cfg.theta
        else:
            theta = rng.normal(size=(d, k)) * (cfg.signal_scale / np.sqrt(d))
        sizes = (cfg.n_train, cfg.n_val, cfg.n_test)
        splits, probs = [], []
        for n in sizes:
            x = rng.normal(size=(n, d))
            logits = x @ theta
            logits -= logits.max(axis=1, keepdims=True)
            p = np.exp(logits)
            p /= p.sum(axis=1, keepdims=True)
            idx = np.array([rng.choice(k, p=row) for row in p])
            y = np.zeros((n, k))
            y[np.arange(n), idx] = 1.0
            splits.append(Split(x=x, y=y))
            probs.append(p)
        return SplitDataset(
            train=splits[0], val=splits[1], test=splits[2],
            extras={"theta": theta, "true_p": {"train": probs[0], "val": probs[1], "test": probs[2]}},
        )

    def _check_simplex(self, p):
        p = np.asarray(p, dtype=float)
        if p.shape != (self.target_dim,):
            raise ValueError(f"probability vector has shape {p.shape}, expected ({self.target_dim},)")
        if np.any(p < -1e-9) or abs(p.sum() - 1.0) > 1e-6:
            raise ValueError("probability vector must lie on the simplex")
        return p

    def expected_cost(self, p, a) -> float:
        """Expected cost sum_i p_i f(d_i, a) for order quantity a >= 0."""
        p = self._check_simplex(p)
        a = float(a)
        if a < 0:
            raise ValueError(f"order quantity must be >= 0, got {a}")
        c0, q0, cb, qb, ch, qh = self.costs
        short = np.maximum(self.demands - a, 0.0)
        over = np.maximum(a - self.demands, 0.0)
        per_demand = cb * short + 0.5 * qb * short**2 + ch * over + 0.5 * qh * over**2
        return c0 * a + 0.5 * q0 * a**2 + float(p @ per_demand)

    def solve(self, y_hat) -> np.ndarray:
        """Exact minimizer of the expected cost over a >= 0.

        The objective is strictly convex piecewise quadratic with breakpoints
        at the demand levels: each segment's unconstrained vertex is clipped
        into the segment and compared together with the breakpoints and 0.
        """
        p = self._check_simplex(y_hat)
        c0, q0, cb, qb, ch, qh = self.costs
        d = self.demands
        edges = np.concatenate(([0.0], d))
        candidates = [0.0] + list(d)
        for j in range(len(edges)):
            lo = edges[j]
            hi = edges[j + 1] if j + 1 < len(edges) else np.inf
            above = d >= hi if np.isfinite(hi) else np.zeros_like(d, dtype=bool)
            below = d <= lo
            # derivative: (q0 + qb P_a + qh P_b) a + (c0 - cb P_a - qb S_a + ch P_b - qh S_b)
            pa, sa = p[above].sum(), (p[above] * d[above]).sum()
            pb, sb = p[below].sum(), (p[below] * d[below]).sum()
            slope = q0 + qb * pa + qh * pb
            intercept = c0 - cb * pa - qb * sa + ch * pb - qh * sb
            vertex = -intercept / slope
            candidates.append(float(np.clip(vertex, lo, hi)))
        candidates = sorted(set(max(c, 0.0) for c in candidates))
        costs = [self.expected_cost(p, a) for a in candidates]
        return np.array([candidates[int(np.argmin(costs))]])

    def task_loss(self, decision, y) -> float:
        a = float(np.asarray(decision).reshape(-1)[0])
        return self.expected_cost(y, a)

    def worst_decision(self, y) -> np.ndarray:
        return np.array([0.0])  # ordering nothing maximizes the shortfall penalty
