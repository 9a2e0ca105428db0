"""Surrogate training sets: (prediction, target, regret) triples.

Two generators are provided. Model-based sampling trains a mirror of the
predictive model with per-instance squared-error updates and records its
predictions along the way, so the triples trace the path a real model takes
toward the targets. Gaussian sampling simply perturbs the targets. Both
prepend one zero-regret anchor (y, y, 0) per training instance so the fitted
surrogate has a minimum pinned at the truth.
"""

import hashlib
import logging
from dataclasses import dataclass

import numpy as np

from .nets import DenseNet, Optimizer, TrainConfig
from .problems.base import DecisionProblem, Split

log = logging.getLogger(__name__)


@dataclass
class SampleTriple:
    """One surrogate training unit: prediction, its target, and the exact regret."""

    prediction: np.ndarray
    target: np.ndarray
    regret: float


def anchor_triples(split: Split):
    """One (y, y, 0) triple per instance; these pin zero-regret minima at the truths."""
    return [SampleTriple(prediction=y.copy(), target=y.copy(), regret=0.0) for y in split.y]


def mbs_generate(problem: DecisionProblem, split: Split, k, *, hidden_width=10,
                 learning_rate=0.1, optimizer="sgd", rng=None):
    """Model-based sampling: anchors plus k-1 epochs of mirror-model predictions.

    Per instance and epoch, the current mirror output is recorded before the
    squared-error update for that instance, its regret is solved exactly, and
    the triple is appended. Total count is n_instances * k.
    """
    if k < 1:
        raise ValueError(f"sample count k must be >= 1, got {k}")
    if rng is None:
        rng = np.random.default_rng(0)
    triples = anchor_triples(split)
    sampler = DenseNet.create(
        [problem.feature_dim, hidden_width, problem.target_dim],
        hidden_activation="relu", output_activation=problem.output_activation, rng=rng,
    )
    opt = Optimizer(TrainConfig(learning_rate=learning_rate, epochs=max(k - 1, 1),
                                optimizer=optimizer, batch_mode="per-instance"))
    for _ in range(k - 1):
        for x, y in zip(split.x, split.y):
            pred = sampler.forward(x)
            _, grads, _ = sampler.loss_and_grad(x, target=y, loss="mse")
            opt.step(sampler.params, grads)
            try:
                r = problem.regret(pred, y)
            except Exception as exc:  # solver failure: skip, never silently
                log.warning("skipping sample: regret solve failed: %s", exc)
                continue
            triples.append(SampleTriple(prediction=pred, target=y.copy(), regret=r))
    return triples


def gaussian_generate(problem: DecisionProblem, split: Split, k, *, sigma=0.1, rng=None):
    """Anchors plus k-1 rounds of target perturbations y + sigma * eta.

    Simplex-valued targets are clamped at zero and renormalized so the
    perturbed predictions stay feasible inputs for the solver.
    """
    if k < 1:
        raise ValueError(f"sample count k must be >= 1, got {k}")
    if sigma < 0:
        raise ValueError(f"sigma must be >= 0, got {sigma}")
    if rng is None:
        rng = np.random.default_rng(0)
    triples = anchor_triples(split)
    for _ in range(k - 1):
        for y in split.y:
            pred = y + sigma * rng.standard_normal(y.shape)
            if problem.target_is_simplex:
                pred = project_simplex(pred)
            triples.append(SampleTriple(prediction=pred, target=y.copy(),
                                        regret=problem.regret(pred, y)))
    return triples


def project_simplex(v):
    """Clamp at zero and renormalize; uniform fallback if everything clamps away."""
    v = np.maximum(np.asarray(v, dtype=float), 0.0)
    s = v.sum()
    if s <= 0:
        return np.full(v.shape, 1.0 / v.size)
    return v / s


def triple_arrays(triples):
    """Stack a triple list into (predictions, targets, regrets) arrays."""
    preds = np.stack([t.prediction for t in triples])
    targets = np.stack([t.target for t in triples])
    regrets = np.array([t.regret for t in triples])
    return preds, targets, regrets


def save_triples(path, triples):
    """Plain comma-separated dump: prediction components, target components, regret."""
    preds, targets, regrets = triple_arrays(triples)
    m = preds.shape[1]
    header = (
        [f"pred_{i}" for i in range(m)] + [f"target_{i}" for i in range(m)] + ["regret"]
    )
    with open(path, "w") as fh:
        fh.write(",".join(header) + "\n")
        for p, t, r in zip(preds, targets, regrets):
            cells = [repr(v) for v in p] + [repr(v) for v in t] + [repr(r)]
            fh.write(",".join(cells) + "\n")


def load_triples(path):
    with open(path) as fh:
        lines = fh.read().splitlines()
    header = lines[0].split(",")
    m = sum(1 for h in header if h.startswith("pred_"))
    triples = []
    for ln in lines[1:]:
        vals = np.array([float(v) for v in ln.split(",")])
        triples.append(SampleTriple(prediction=vals[:m], target=vals[m : 2 * m],
                                    regret=float(vals[-1])))
    return triples


def cache_key(*parts):
    """Stable hash over the pieces of config that determine a triple set."""
    blob = "|".join(str(p) for p in parts)
    return hashlib.sha256(blob.encode()).hexdigest()[:16]
