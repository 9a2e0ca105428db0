"""Training paradigms: surrogate fitting, two-stage baseline, exact-gradient
baseline for the portfolio problem, and end-to-end training through a fitted
convex surrogate.

All loops are full-batch, deterministic given (rng, config), and select the
returned parameters by validation score: prediction loss for the two-stage
baseline, true decision regret for everything decision-focused.
"""

import logging
from dataclasses import dataclass, field

import numpy as np

from .nets import DenseNet, Optimizer, TrainConfig, prediction_loss
from .picnn import Picnn
from .problems.base import DecisionProblem, Split, SplitDataset
from .sampling import gaussian_generate, mbs_generate, triple_arrays

log = logging.getLogger(__name__)

METHODS = ("pfl", "dfl", "surrogate", "surrogate_gaussian")


@dataclass
class FitReport:
    """Outcome of a surrogate fit: final error, per-epoch loss trace, anchor residual."""

    final_loss: float
    trace: list
    anchor_residual: float


@dataclass
class EvalResult:
    normalized_regret: float
    raw_regret: float
    prediction_loss: float


def fit_surrogate(model: Picnn, triples, config: TrainConfig) -> FitReport:
    """Fit the surrogate to regret values by full-batch mean squared error.

    The nonnegativity projection runs after every optimizer step. On the
    first call (output_scale still 1) the scale is set to the regret spread
    so one learning rate works across problems. A non-finite loss aborts
    with the last finite parameters restored.
    """
    if not triples:
        raise ValueError("cannot fit surrogate on an empty triple set")
    preds, targets, regrets = triple_arrays(triples)
    if model.output_scale == 1.0:
        spread = float(regrets.std())
        model.output_scale = spread if spread > 1e-12 else 1.0
    opt = Optimizer(config)
    trace = []
    backup = model.copy()
    for _ in range(config.epochs):
        try:
            loss, _, grads = model.mse_and_grads(preds, targets, regrets)
            if not np.isfinite(loss):
                raise FloatingPointError(f"non-finite fitting loss {loss}")
            opt.step(model.params, grads)
            model.project_nonnegative()
        except FloatingPointError as exc:
            log.warning("surrogate fit aborted at epoch %d: %s", len(trace), exc)
            model.set_params_from(backup)
            break
        trace.append(loss)
        backup = model.copy()
    out = model.forward(preds, targets)
    final_loss = float(((out - regrets) ** 2).mean())
    anchor_mask = np.array([np.array_equal(t.prediction, t.target) for t in triples])
    if anchor_mask.any():
        anchor_residual = float(np.abs(out[anchor_mask]).mean())
    else:
        anchor_residual = float("nan")
    return FitReport(final_loss=final_loss, trace=trace, anchor_residual=anchor_residual)


def fit_surrogate_staged(model: Picnn, triples, config: TrainConfig) -> FitReport:
    """Fit with a stepped learning-rate decay: lr, lr/3, lr/10 over the epoch budget.

    Plain fixed-rate fitting plateaus well above the anchor values; the final
    low-rate stages tighten the zero-regret basin around the targets. Traces
    are concatenated; the report reflects the final state.
    """
    stages = [(config.learning_rate, int(config.epochs * 0.5)),
              (config.learning_rate / 3.0, int(config.epochs * 0.3))]
    stages.append((config.learning_rate / 10.0, config.epochs - sum(e for _, e in stages)))
    trace = []
    report = None
    for lr, epochs in stages:
        if epochs < 1:
            continue
        stage_cfg = TrainConfig(learning_rate=lr, epochs=epochs, optimizer=config.optimizer,
                                beta1=config.beta1, beta2=config.beta2, eps=config.eps,
                                seed=config.seed, batch_mode=config.batch_mode)
        report = fit_surrogate(model, triples, stage_cfg)
        trace.extend(report.trace)
    report.trace = trace
    return report


def make_predictive_net(problem: DecisionProblem, hidden_width=None, rng=None) -> DenseNet:
    """One-hidden-layer model mapping features to targets; width defaults per problem."""
    width = hidden_width or default_hidden_width(problem)
    return DenseNet.create(
        [problem.feature_dim, width, problem.target_dim],
        hidden_activation="relu", output_activation=problem.output_activation, rng=rng,
    )


def default_hidden_width(problem: DecisionProblem) -> int:
    return 500 if problem.name == "portfolio" else 10


class RegretScorer:
    """Normalized regret over a split, with per-instance constants precomputed.

    Optimal losses and worst-case regrets depend only on the targets, so a
    scorer built once per split makes per-epoch validation cheap.
    """

    def __init__(self, problem: DecisionProblem, split: Split):
        self.problem = problem
        self.split = split
        self.opt_losses = np.array([problem.optimal_loss(y) for y in split.y])
        self.worst_regrets = np.array([problem.worst_regret(y) for y in split.y])
        if self.worst_regrets.sum() <= 0:
            raise ValueError("degenerate split: total worst-case regret is zero")

    def regrets(self, predictions) -> np.ndarray:
        problem = self.problem
        sign = 1.0 if problem.sense == "min" else -1.0
        vals = []
        for y_hat, y, opt in zip(predictions, self.split.y, self.opt_losses):
            loss = problem.task_loss(problem.solve(y_hat), y)
            vals.append(max(sign * (loss - opt), 0.0))
        return np.array(vals)

    def normalized(self, predictions) -> float:
        return float(self.regrets(predictions).sum() / self.worst_regrets.sum())


def evaluate(net: DenseNet, problem: DecisionProblem, split: Split) -> EvalResult:
    """Normalized regret, mean raw regret, and prediction loss of a model on a split."""
    preds = net.forward(split.x)
    scorer = RegretScorer(problem, split)
    regrets = scorer.regrets(preds)
    return EvalResult(
        normalized_regret=float(regrets.sum() / scorer.worst_regrets.sum()),
        raw_regret=float(regrets.mean()),
        prediction_loss=prediction_loss(preds, split.y, problem.prediction_loss_tag),
    )


@dataclass
class TrainHistory:
    train_trace: list = field(default_factory=list)
    val_trace: list = field(default_factory=list)      # (epoch, score) pairs
    best_epoch: int = -1
    best_score: float = float("inf")
    checkpoints: list = field(default_factory=list)    # (epoch, DenseNet) if kept


def _select_and_track(net, history, epoch, score, keep_checkpoints):
    history.val_trace.append((epoch, score))
    if keep_checkpoints:
        history.checkpoints.append((epoch, net.copy()))
    if score < history.best_score:
        history.best_score = score
        history.best_epoch = epoch
        return net.copy()
    return None


def train_pfl(problem: DecisionProblem, dataset: SplitDataset, config: TrainConfig,
              *, hidden_width=None, patience=30, rng=None, keep_checkpoints=False):
    """Two-stage baseline: minimize the prediction loss, select on validation loss."""
    net = make_predictive_net(problem, hidden_width, rng)
    opt = Optimizer(config)
    tag = problem.prediction_loss_tag
    history = TrainHistory()
    best = net.copy()
    stale = 0
    for epoch in range(config.epochs):
        loss, grads, _ = net.loss_and_grad(dataset.train.x, target=dataset.train.y, loss=tag)
        opt.step(net.params, grads)
        history.train_trace.append(loss)
        val = prediction_loss(net.forward(dataset.val.x), dataset.val.y, tag)
        chosen = _select_and_track(net, history, epoch, val, keep_checkpoints)
        if chosen is not None:
            best = chosen
            stale = 0
        else:
            stale += 1
            if stale >= patience:
                break
    return best, history


def _train_decision_focused(problem, dataset, config, upstream_fn, *, hidden_width=None,
                            patience=30, eval_every=1, rng=None, keep_checkpoints=False,
                            net=None):
    """Shared loop: full-batch updates from upstream d(loss)/d(prediction) signals,
    model selection on true validation regret."""
    net = net or make_predictive_net(problem, hidden_width, rng)
    opt = Optimizer(config)
    scorer = RegretScorer(problem, dataset.val)
    history = TrainHistory()
    best = net.copy()
    stale = 0
    patience_checks = max(1, patience // eval_every)
    for epoch in range(config.epochs):
        preds = net.forward(dataset.train.x)
        upstream = upstream_fn(preds, dataset.train.y) / preds.shape[0]
        _, grads, _ = net.loss_and_grad(dataset.train.x, loss="upstream", upstream=upstream)
        opt.step(net.params, grads)
        if epoch % eval_every == 0 or epoch == config.epochs - 1:
            val = scorer.normalized(net.forward(dataset.val.x))
            chosen = _select_and_track(net, history, epoch, val, keep_checkpoints)
            if chosen is not None:
                best = chosen
                stale = 0
            else:
                stale += 1
                if stale >= patience_checks:
                    break
    return best, history


def train_dfl_portfolio(problem, dataset: SplitDataset, config: TrainConfig, **kwargs):
    """Exact-differentiation baseline through the affine solution map.

    Only valid for problems exposing an analytic regret gradient (the
    equality-constrained quadratic program does).
    """
    if not hasattr(problem, "regret_grad"):
        raise ValueError(f"problem {problem.name!r} has no analytic solution map; "
                         "exact differentiation applies to the portfolio problem only")

    def upstream(preds, targets):
        return np.stack([problem.regret_grad(p, y) for p, y in zip(preds, targets)])

    return _train_decision_focused(problem, dataset, config, upstream, **kwargs)


def train_with_surrogate(problem, dataset: SplitDataset, k, *, sampler="mbs",
                         sampler_lr=0.1, sampler_optimizer="sgd", sampler_width=None,
                         gaussian_sigma=0.1, surrogate_widths=(2,), surrogate_context=None,
                         fit_config: TrainConfig | None = None,
                         config: TrainConfig | None = None,
                         triples=None, hidden_width=None, patience=30, eval_every=1,
                         rng=None, keep_checkpoints=False):
    """End-to-end pipeline: generate samples, fit the surrogate, train through it.

    Returns (net, artifacts) where artifacts carry the triples, the fitted
    surrogate, its fit report, and the training history; the returned net is
    the checkpoint with the best true validation regret.
    """
    if rng is None:
        rng = np.random.default_rng(0)
    if triples is None:
        if sampler == "mbs":
            triples = mbs_generate(problem, dataset.train, k,
                                   hidden_width=sampler_width or default_hidden_width(problem),
                                   learning_rate=sampler_lr, optimizer=sampler_optimizer, rng=rng)
        elif sampler == "gaussian":
            triples = gaussian_generate(problem, dataset.train, k, sigma=gaussian_sigma, rng=rng)
        else:
            raise ValueError(f"unknown sampler {sampler!r}")
    surrogate = Picnn(problem.target_dim, hidden_widths=surrogate_widths,
                      context_width=surrogate_context, rng=rng)
    fit_report = fit_surrogate_staged(
        surrogate, triples, fit_config or TrainConfig(learning_rate=3e-2, epochs=2000))
    if not np.isfinite(fit_report.final_loss):
        raise FloatingPointError(f"surrogate fit diverged: final loss {fit_report.final_loss}")

    def upstream(preds, targets):
        return surrogate.grad_prediction(preds, targets)

    net, history = _train_decision_focused(
        problem, dataset, config or TrainConfig(), upstream,
        hidden_width=hidden_width, patience=patience, eval_every=eval_every,
        rng=rng, keep_checkpoints=keep_checkpoints,
    )
    artifacts = {"triples": triples, "surrogate": surrogate,
                 "fit_report": fit_report, "history": history}
    return net, artifacts
