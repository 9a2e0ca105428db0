"""Minimal dense feedforward networks with hand-written reverse-mode gradients.

Everything here is deliberately small: plain numpy arrays, explicit
forward/backward passes, and an optimizer that updates parameter lists in
place. Networks are lists of (weight, bias, activation) layers; the same
machinery serves both the predictive model and the sampling model.
"""

import copy
from dataclasses import dataclass, field

import numpy as np

ACTIVATIONS = ("linear", "relu", "softplus", "softmax")


def softplus(z):
    """Overflow-safe softplus: max(z, 0) + log1p(exp(-|z|))."""
    z = np.asarray(z, dtype=float)
    return np.maximum(z, 0.0) + np.log1p(np.exp(-np.abs(z)))


def sigmoid(z):
    """Overflow-safe logistic function (the derivative of softplus)."""
    z = np.asarray(z, dtype=float)
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def softmax(z, axis=-1):
    """Shift-stabilized softmax along `axis`."""
    z = np.asarray(z, dtype=float)
    shifted = z - z.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=axis, keepdims=True)


def apply_activation(z, tag):
    if tag == "linear":
        return z
    if tag == "relu":
        return np.maximum(z, 0.0)
    if tag == "softplus":
        return softplus(z)
    if tag == "softmax":
        return softmax(z)
    raise ValueError(f"unknown activation {tag!r}")


def activation_backward(tag, z, out, grad_out):
    """Map dL/d(activation output) to dL/d(pre-activation z)."""
    if tag == "linear":
        return grad_out
    if tag == "relu":
        return grad_out * (z > 0)
    if tag == "softplus":
        return grad_out * sigmoid(z)
    if tag == "softmax":
        # J^T g with J_ij = p_i (delta_ij - p_j)
        inner = (grad_out * out).sum(axis=-1, keepdims=True)
        return out * (grad_out - inner)
    raise ValueError(f"unknown activation {tag!r}")


@dataclass
class TrainConfig:
    """Optimizer and schedule settings shared across training loops."""

    learning_rate: float = 1e-3
    epochs: int = 300
    optimizer: str = "adam"  # "adam" or "sgd"
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    seed: int = 0
    batch_mode: str = "full"  # "full" or "per-instance"

    def __post_init__(self):
        if self.learning_rate <= 0:
            raise ValueError(f"learning_rate must be > 0, got {self.learning_rate}")
        if self.epochs < 1:
            raise ValueError(f"epochs must be >= 1, got {self.epochs}")
        if self.optimizer not in ("adam", "sgd"):
            raise ValueError(f"optimizer must be 'adam' or 'sgd', got {self.optimizer!r}")
        if self.batch_mode not in ("full", "per-instance"):
            raise ValueError(f"batch_mode must be 'full' or 'per-instance', got {self.batch_mode!r}")


class DenseNet:
    """Feedforward stack of dense layers.

    Parameters are exposed as a flat list (weight, bias, weight, bias, ...)
    so the optimizer can treat every model uniformly. A softmax activation is
    only legal on the final layer and guarantees simplex outputs.
    """

    def __init__(self, weights, biases, activations):
        if not (len(weights) == len(biases) == len(activations)):
            raise ValueError("weights, biases and activations must have equal length")
        for i, (w, b, act) in enumerate(zip(weights, biases, activations)):
            if act not in ACTIVATIONS:
                raise ValueError(f"layer {i}: unknown activation {act!r}")
            if act == "softmax" and i != len(weights) - 1:
                raise ValueError("softmax is only supported on the final layer")
            if w.ndim != 2 or b.ndim != 1 or w.shape[0] != b.shape[0]:
                raise ValueError(f"layer {i}: weight {w.shape} and bias {b.shape} mismatch")
            if i > 0 and w.shape[1] != weights[i - 1].shape[0]:
                raise ValueError(
                    f"layer {i}: input dim {w.shape[1]} != previous output {weights[i - 1].shape[0]}"
                )
        self.weights = [np.asarray(w, dtype=float) for w in weights]
        self.biases = [np.asarray(b, dtype=float) for b in biases]
        self.activations = list(activations)

    @classmethod
    def create(cls, dims, hidden_activation="relu", output_activation="linear", rng=None):
        """Initialize a net with uniform(-1/sqrt(fan_in), +1/sqrt(fan_in)) weights, zero biases."""
        if rng is None:
            rng = np.random.default_rng(0)
        if len(dims) < 2:
            raise ValueError("dims must list at least input and output size")
        weights, biases, acts = [], [], []
        for i in range(len(dims) - 1):
            fan_in = dims[i]
            bound = 1.0 / np.sqrt(fan_in)
            weights.append(rng.uniform(-bound, bound, size=(dims[i + 1], dims[i])))
            biases.append(np.zeros(dims[i + 1]))
            acts.append(output_activation if i == len(dims) - 2 else hidden_activation)
        return cls(weights, biases, acts)

    @property
    def input_dim(self):
        return self.weights[0].shape[1]

    @property
    def output_dim(self):
        return self.weights[-1].shape[0]

    @property
    def params(self):
        """Flat parameter list; the arrays are the live ones (mutated by the optimizer)."""
        out = []
        for w, b in zip(self.weights, self.biases):
            out.extend((w, b))
        return out

    def copy(self):
        return DenseNet(
            [w.copy() for w in self.weights],
            [b.copy() for b in self.biases],
            list(self.activations),
        )

    def _check_input(self, x):
        x = np.asarray(x, dtype=float)
        if x.shape[-1] != self.input_dim:
            raise ValueError(f"input dim {x.shape[-1]} != expected {self.input_dim}")
        return x

    def forward(self, x):
        """Evaluate the net on a single vector (d,) or a batch (n, d)."""
        x = self._check_input(x)
        single = x.ndim == 1
        h = x.reshape(1, -1) if single else x
        for w, b, act in zip(self.weights, self.biases, self.activations):
            h = apply_activation(h @ w.T + b, act)
        return h[0] if single else h

    def _forward_trace(self, x):
        """Forward pass on a 2-D batch, keeping intermediates for backprop."""
        inputs, preacts, outputs = [], [], []
        h = x
        for w, b, act in zip(self.weights, self.biases, self.activations):
            inputs.append(h)
            z = h @ w.T + b
            preacts.append(z)
            h = apply_activation(z, act)
            outputs.append(h)
        return h, (inputs, preacts, outputs)

    def _backward(self, trace, grad_out):
        """Backprop dL/d(output) to parameter and input gradients."""
        inputs, preacts, outputs = trace
        grads = []
        g = grad_out
        for i in reversed(range(len(self.weights))):
            dz = activation_backward(self.activations[i], preacts[i], outputs[i], g)
            dw = dz.T @ inputs[i]
            db = dz.sum(axis=0)
            grads.append(db)
            grads.append(dw)
            g = dz @ self.weights[i]
        grads.reverse()
        return grads, g

    def loss_and_grad(self, x, target=None, loss="mse", upstream=None):
        """Loss and gradients for a single input or a batch.

        loss: "mse", "nll" (categorical, requires softmax output), or
        "upstream" where dL/d(output) is supplied directly and the returned
        loss is None. Gradients are of the mean loss over the batch.
        Returns (loss, parameter gradients, input gradient).
        """
        x = self._check_input(x)
        single = x.ndim == 1
        xb = x.reshape(1, -1) if single else x
        out, trace = self._forward_trace(xb)
        n = xb.shape[0]

        if loss == "upstream":
            if upstream is None:
                raise ValueError("upstream gradient required for loss='upstream'")
            g = np.asarray(upstream, dtype=float)
            g = g.reshape(1, -1) if single else g
            if g.shape != out.shape:
                raise ValueError(f"upstream shape {g.shape} != output shape {out.shape}")
            value = None
        elif loss == "mse":
            t = np.asarray(target, dtype=float)
            t = t.reshape(1, -1) if single else t
            if t.shape != out.shape:
                raise ValueError(f"target shape {t.shape} != output shape {out.shape}")
            diff = out - t
            value = float((diff**2).mean())
            g = 2.0 * diff / diff.size
        elif loss == "nll":
            value, g = _nll_value_and_grad(out, target, single)
        else:
            raise ValueError(f"unknown loss {loss!r}")

        grads, dx = self._backward(trace, g)
        return value, grads, (dx[0] if single else dx)


NLL_PROB_FLOOR = 1e-12


def _class_indices(target, n, k):
    t = np.asarray(target)
    if t.ndim == 0:
        idx = np.full(n, int(t))
    elif t.ndim == 1 and t.shape[0] == n and np.issubdtype(t.dtype, np.integer):
        idx = t.astype(int)
    elif t.ndim == 1 and n == 1 and t.shape[0] == k:
        idx = np.array([int(np.argmax(t))])
        _check_one_hot(t)
    elif t.ndim == 2 and t.shape == (n, k):
        for row in t:
            _check_one_hot(row)
        idx = t.argmax(axis=1)
    else:
        raise ValueError(f"cannot interpret nll target with shape {t.shape}")
    if np.any(idx < 0) or np.any(idx >= k):
        raise ValueError(f"class index out of range [0, {k})")
    return idx


def _check_one_hot(row):
    if not (np.isclose(row.sum(), 1.0, atol=1e-6) and np.all(row >= -1e-12)):
        raise ValueError("nll one-hot target must lie on the simplex")


def _nll_value_and_grad(out, target, single):
    n, k = out.shape
    if np.any(out < -1e-9) or not np.allclose(out.sum(axis=1), 1.0, atol=1e-6):
        raise ValueError("nll requires simplex (softmax) outputs")
    idx = _class_indices(target, n, k)
    probs = np.maximum(out[np.arange(n), idx], NLL_PROB_FLOOR)
    value = float(-np.log(probs).mean())
    g = np.zeros_like(out)
    g[np.arange(n), idx] = -1.0 / (probs * n)
    return value, g


def prediction_loss(y_hat, y, tag):
    """Scalar prediction loss: mean squared error or categorical NLL."""
    y_hat = np.asarray(y_hat, dtype=float)
    if tag == "mse":
        t = np.asarray(y, dtype=float)
        if y_hat.shape != t.shape:
            raise ValueError(f"mse shapes differ: {y_hat.shape} vs {t.shape}")
        return float(((y_hat - t) ** 2).mean())
    if tag == "nll":
        out = y_hat.reshape(1, -1) if y_hat.ndim == 1 else y_hat
        value, _ = _nll_value_and_grad(out, y, y_hat.ndim == 1)
        return value
    raise ValueError(f"unknown loss tag {tag!r}")


class Optimizer:
    """SGD or bias-corrected Adam over a flat list of parameter arrays.

    step() mutates the arrays in place so that the owning model sees the
    update; state advances deterministically. Non-finite gradients abort
    immediately rather than poisoning the parameters.
    """

    def __init__(self, config: TrainConfig):
        self.config = config
        self.step_count = 0
        self._m = None
        self._v = None

    def step(self, params, grads):
        if len(params) != len(grads):
            raise ValueError("params and grads length mismatch")
        for i, g in enumerate(grads):
            if not np.all(np.isfinite(g)):
                raise FloatingPointError(
                    f"non-finite gradient in parameter {i} at step {self.step_count + 1}"
                )
        cfg = self.config
        self.step_count += 1
        if cfg.optimizer == "sgd":
            for p, g in zip(params, grads):
                p -= cfg.learning_rate * g
            return params
        if self._m is None:
            self._m = [np.zeros_like(p) for p in params]
            self._v = [np.zeros_like(p) for p in params]
        t = self.step_count
        b1, b2 = cfg.beta1, cfg.beta2
        for p, g, m, v in zip(params, grads, self._m, self._v):
            m *= b1
            m += (1 - b1) * g
            v *= b2
            v += (1 - b2) * g * g
            m_hat = m / (1 - b1**t)
            v_hat = v / (1 - b2**t)
            p -= cfg.learning_rate * m_hat / (np.sqrt(v_hat) + cfg.eps)
        return params


NET_FORMAT_VERSION = 1


def save_dense(net: DenseNet, path):
    """Write a versioned text dump: header with dims/activations, then row-major blocks."""
    dims = [net.input_dim] + [w.shape[0] for w in net.weights]
    with open(path, "w") as fh:
        fh.write(f"densenet-v{NET_FORMAT_VERSION}\n")
        fh.write(" ".join(str(d) for d in dims) + "\n")
        fh.write(" ".join(net.activations) + "\n")
        for w, b in zip(net.weights, net.biases):
            fh.write(" ".join(repr(v) for v in w.ravel()) + "\n")
            fh.write(" ".join(repr(v) for v in b.ravel()) + "\n")


def load_dense(path) -> DenseNet:
    with open(path) as fh:
        lines = fh.read().splitlines()
    if not lines or lines[0] != f"densenet-v{NET_FORMAT_VERSION}":
        raise ValueError(f"unrecognized network file header in {path}")
    dims = [int(v) for v in lines[1].split()]
    acts = lines[2].split()
    weights, biases = [], []
    row = 3
    for i in range(len(dims) - 1):
        out_d, in_d = dims[i + 1], dims[i]
        weights.append(np.array([float(v) for v in lines[row].split()]).reshape(out_d, in_d))
        biases.append(np.array([float(v) for v in lines[row + 1].split()]))
        row += 2
    return DenseNet(weights, biases, acts)
