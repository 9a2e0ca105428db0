"""Mean-variance asset allocation with an equality budget constraint.

    max_a  y^T a - gamma a^T Sigma a   s.t.  sum_i a_i = 1

With Sigma positive definite the KKT system has a closed-form solution via a
single symmetric solve, and the solution map is affine in the predicted
returns, which is what makes the exact-differentiation baseline possible.

Returns come from a synthetic low-rank factor model or from a CSV file whose
first row holds asset identifiers and subsequent rows per-period returns.
Features are a trailing window of returns; the covariance is estimated on
the training split.
"""

from dataclasses import dataclass

import numpy as np

from .base import DecisionProblem, Split, SplitDataset


@dataclass
class PortfolioConfig:
    assets: int = 50
    gamma: float = 0.1
    periods: int = 300
    factors: int = 3
    factor_vol: float = 0.01
    noise_vol: float = 0.002
    lookback: int = 5
    split: tuple = (0.7, 0.15, 0.15)
    returns_file: str | None = None
    ridge_scale: float = 1e-4  # ridge = ridge_scale * trace(sample cov) / n_assets

    def __post_init__(self):
        if self.gamma <= 0:
            raise ValueError("gamma must be > 0")
        if abs(sum(self.split) - 1.0) > 1e-9 or any(s <= 0 for s in self.split):
            raise ValueError("split fractions must be positive and sum to 1")
        if self.lookback < 1:
            raise ValueError("lookback must be >= 1")


def covariance_estimate(returns, ridge) -> np.ndarray:
    """Unbiased sample covariance plus ridge * I; symmetric by construction."""
    returns = np.asarray(returns, dtype=float)
    t, n = returns.shape
    if t < 2:
        raise ValueError(f"need at least 2 periods to estimate covariance, got {t}")
    centered = returns - returns.mean(axis=0)
    cov = centered.T @ centered / (t - 1)
    cov = 0.5 * (cov + cov.T)
    return cov + ridge * np.eye(n)


def load_returns_csv(path):
    """Parse a returns matrix: header row of asset names, then per-period rows.

    Raises ValueError naming the offending row/column on ragged or
    non-numeric input.
    """
    with open(path) as fh:
        lines = [ln.strip() for ln in fh if ln.strip()]
    if len(lines) < 2:
        raise ValueError(f"{path}: need a header row and at least one data row")
    names = [c.strip() for c in lines[0].split(",")]
    n = len(names)
    rows = []
    for r, ln in enumerate(lines[1:], start=2):
        cells = [c.strip() for c in ln.split(",")]
        if len(cells) != n:
            raise ValueError(f"{path}: row {r} has {len(cells)} columns, expected {n}")
        row = []
        for c, cell in enumerate(cells, start=1):
            try:
                row.append(float(cell))
            except ValueError:
                raise ValueError(f"{path}: row {r}, column {c}: not a number: {cell!r}") from None
        rows.append(row)
    return names, np.array(rows)


class PortfolioProblem(DecisionProblem):
    name = "portfolio"
    sense = "max"
    prediction_loss_tag = "mse"
    output_activation = "linear"

    def __init__(self, config: PortfolioConfig | None = None):
        self.config = config or PortfolioConfig()
        self.gamma = self.config.gamma
        self.target_dim = self.config.assets
        self.feature_dim = self.config.assets * self.config.lookback
        self.sigma = None
        self._sigma_inv = None

    def set_sigma(self, sigma):
        sigma = np.asarray(sigma, dtype=float)
        if np.abs(sigma - sigma.T).max() > 1e-9:
            raise ValueError("covariance must be symmetric")
        try:
            inv = np.linalg.inv(sigma)
        except np.linalg.LinAlgError as exc:
            raise np.linalg.LinAlgError(f"covariance is singular; add a ridge: {exc}") from exc
        self._sigma_inv = 0.5 * (inv + inv.T)
        self.sigma = sigma
        inv_one = self._sigma_inv @ np.ones(sigma.shape[0])
        self._inv_one = inv_one
        self._one_inv_one = float(inv_one.sum())

    def generate(self, seed) -> SplitDataset:
        """Build per-period instances from synthetic factor returns or a CSV file.

        Feature t is the flattened trailing `lookback` window; target t is the
        period-t return vector. Splits are chronological; the covariance is
        estimated on the training targets.
        """
        cfg = self.config
        rng = np.random.default_rng(seed)
        if cfg.returns_file is not None:
            _, returns = load_returns_csv(cfg.returns_file)
            if returns.shape[1] != cfg.assets:
                raise ValueError(
                    f"{cfg.returns_file}: file has {returns.shape[1]} assets, config says {cfg.assets}"
                )
        else:
            loadings = rng.normal(size=(cfg.assets, cfg.factors))
            factors = rng.normal(size=(cfg.periods, cfg.factors)) * cfg.factor_vol
            noise = rng.normal(size=(cfg.periods, cfg.assets)) * cfg.noise_vol
            returns = factors @ loadings.T + noise
        lb = cfg.lookback
        n_inst = returns.shape[0] - lb
        if n_inst < 10:
            raise ValueError("too few periods for the requested lookback")
        x = np.stack([returns[t : t + lb].ravel() for t in range(n_inst)])
        y = returns[lb:]
        n_train = int(round(cfg.split[0] * n_inst))
        n_val = int(round(cfg.split[1] * n_inst))
        train = Split(x=x[:n_train], y=y[:n_train])
        val = Split(x=x[n_train : n_train + n_val], y=y[n_train : n_train + n_val])
        test = Split(x=x[n_train + n_val :], y=y[n_train + n_val :])
        sample_cov = covariance_estimate(train.y, 0.0)
        ridge = cfg.ridge_scale * np.trace(sample_cov) / cfg.assets
        self.set_sigma(sample_cov + ridge * np.eye(cfg.assets))
        return SplitDataset(train=train, val=val, test=test, extras={"sigma": self.sigma})

    def _require_sigma(self):
        if self.sigma is None:
            raise ValueError("covariance not set; call generate() or set_sigma() first")

    def solve(self, y_hat) -> np.ndarray:
        """Closed-form KKT solution of the equality-constrained quadratic program."""
        self._require_sigma()
        y_hat = np.asarray(y_hat, dtype=float).reshape(-1)
        if y_hat.shape[0] != self.target_dim:
            raise ValueError(f"prediction has {y_hat.shape[0]} entries, expected {self.target_dim}")
        p_vec = self._sigma_inv @ y_hat
        # lam built from the same solve so that sum(a) = 1 cancels exactly
        lam = (float(p_vec.sum()) - 2.0 * self.gamma) / self._one_inv_one
        return (p_vec - lam * self._inv_one) / (2.0 * self.gamma)

    def task_loss(self, decision, y) -> float:
        self._require_sigma()
        a = np.asarray(decision, dtype=float).reshape(-1)
        y = np.asarray(y, dtype=float).reshape(-1)
        return float(y @ a - self.gamma * a @ self.sigma @ a)

    def worst_decision(self, y) -> np.ndarray:
        """Everything on the asset with the smallest true return."""
        y = np.asarray(y, dtype=float).reshape(-1)
        a = np.zeros(self.target_dim)
        a[int(np.argmin(y))] = 1.0
        return a

    def solution_map(self):
        """The affine map y_hat -> a*(y_hat) = M y_hat + m0 implied by the KKT system."""
        self._require_sigma()
        outer = np.outer(self._inv_one, self._inv_one) / self._one_inv_one
        m_mat = (self._sigma_inv - outer) / (2.0 * self.gamma)
        m0 = self._inv_one / self._one_inv_one
        return m_mat, m0

    def regret_grad(self, y_hat, y) -> np.ndarray:
        """Exact d(regret)/d(prediction) through the affine solution map."""
        self._require_sigma()
        m_mat, _ = self.solution_map()
        a = self.solve(y_hat)
        y = np.asarray(y, dtype=float).reshape(-1)
        # regret = f(a*(y); y) - f(a*(y_hat); y); df/da = y - 2 gamma Sigma a; M symmetric
        return -m_mat @ (y - 2.0 * self.gamma * self.sigma @ a)
