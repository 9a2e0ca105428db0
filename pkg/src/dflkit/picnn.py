"""Partially input-convex network: scalar loss surface convex in the prediction.

The model maps a (prediction, target) pair to a scalar and is convex in the
prediction for any fixed target, while the target enters through an
unconstrained context path. Convexity comes from three structural rules:
nonnegative z-to-z weights, convex nondecreasing activations on the z path,
and clamping the gates that multiply z activations at zero before use.

The exact recurrence, the convexity argument, and the initialization scheme
are documented in docs/convex_surrogate.md. Gradients for the prediction, the
context, and every parameter are computed by hand-written backprop.
"""

import numpy as np

from .nets import apply_activation, sigmoid

SURROGATE_FORMAT_VERSION = 1


def _uniform(rng, shape, fan_in):
    bound = 1.0 / np.sqrt(fan_in)
    return rng.uniform(-bound, bound, size=shape)


class Picnn:
    """Scalar-output surrogate, convex in the prediction input.

    target_dim:     dimension of both inputs (prediction and target).
    hidden_widths:  widths of the convex-path hidden layers (k = len()).
    context_width:  width of the context path (defaults to the first hidden width).
    activation:     convex nondecreasing activation on both paths.
    output_scale:   positive factor applied to the final linear stage; set by
                    fitting code to match the regret scale without touching
                    the learning rate.
    """

    def __init__(self, target_dim, hidden_widths=(2,), context_width=None,
                 activation="softplus", rng=None):
        if rng is None:
            rng = np.random.default_rng(0)
        if activation not in ("softplus", "relu"):
            raise ValueError(f"activation must be convex nondecreasing, got {activation!r}")
        if len(hidden_widths) < 1:
            raise ValueError("need at least one hidden layer")
        self.target_dim = int(target_dim)
        self.hidden_widths = tuple(int(h) for h in hidden_widths)
        self.context_width = int(context_width or self.hidden_widths[0])
        self.activation = activation
        self.output_scale = 1.0

        m, hu, k = self.target_dim, self.context_width, len(self.hidden_widths)
        # Context path: u_1 = a(V_0 y + d_0), u_{i+1} = a(V_i u_i + d_i).
        self.V = [_uniform(rng, (hu, m if i == 0 else hu), m if i == 0 else hu)
                  for i in range(k)]
        self.d = [np.zeros(hu) for _ in range(k)]
        # Convex path stage widths: inputs h_i, outputs o_i; stage k is the scalar output.
        widths = list(self.hidden_widths) + [1]
        self.Wz = [None]  # no z input at stage 0
        self.Wzu, self.bzu = [None], [None]
        self.Wy = [_uniform(rng, (widths[0], m), m)]
        self.Wyu = [_uniform(rng, (m, hu), hu)]
        self.byu = [np.ones(m)]
        self.Wu = [_uniform(rng, (widths[0], hu), hu)]
        self.b = [np.zeros(widths[0])]
        for i in range(1, k + 1):
            h_in, h_out = widths[i - 1], widths[i]
            self.Wz.append(rng.uniform(0.0, 1.0 / np.sqrt(h_in), size=(h_out, h_in)))
            self.Wzu.append(_uniform(rng, (h_in, hu), hu))
            self.bzu.append(np.ones(h_in))
            self.Wy.append(_uniform(rng, (h_out, m), m))
            self.Wyu.append(_uniform(rng, (m, hu), hu))
            self.byu.append(np.ones(m))
            self.Wu.append(_uniform(rng, (h_out, hu), hu))
            self.b.append(np.zeros(h_out))

    # -- parameter plumbing ----------------------------------------------

    @property
    def params(self):
        """Flat list of live parameter arrays in a fixed documented order."""
        out = []
        for v, d in zip(self.V, self.d):
            out.extend((v, d))
        k = len(self.hidden_widths)
        for i in range(k + 1):
            if i > 0:
                out.extend((self.Wz[i], self.Wzu[i], self.bzu[i]))
            out.extend((self.Wy[i], self.Wyu[i], self.byu[i], self.Wu[i], self.b[i]))
        return out

    def copy(self):
        import copy as _copy

        dup = Picnn.__new__(Picnn)
        dup.target_dim = self.target_dim
        dup.hidden_widths = self.hidden_widths
        dup.context_width = self.context_width
        dup.activation = self.activation
        dup.output_scale = self.output_scale
        for name in ("V", "d", "Wz", "Wzu", "bzu", "Wy", "Wyu", "byu", "Wu", "b"):
            src = getattr(self, name)
            setattr(dup, name, [None if a is None else a.copy() for a in src])
        return dup

    def set_params_from(self, other):
        for mine, theirs in zip(self.params, other.params):
            mine[...] = theirs
        self.output_scale = other.output_scale

    def project_nonnegative(self):
        """Clamp the constrained z-to-z weights at zero. Idempotent."""
        for i in range(1, len(self.Wz)):
            np.maximum(self.Wz[i], 0.0, out=self.Wz[i])
        return self

    # -- forward / backward ----------------------------------------------

    def _check_pair(self, prediction, target):
        p = np.asarray(prediction, dtype=float)
        c = np.asarray(target, dtype=float)
        if p.shape != c.shape:
            raise ValueError(f"prediction shape {p.shape} != target shape {c.shape}")
        if p.shape[-1] != self.target_dim:
            raise ValueError(f"input dim {p.shape[-1]} != expected {self.target_dim}")
        single = p.ndim == 1
        if single:
            p, c = p.reshape(1, -1), c.reshape(1, -1)
        return p, c, single

    def _forward_trace(self, p, c):
        act = self.activation
        k = len(self.hidden_widths)
        # context path
        u_pre, u = [], []
        h = c
        for i in range(k):
            z = h @ self.V[i].T + self.d[i]
            u_pre.append(z)
            h = apply_activation(z, act)
            u.append(h)
        # convex path
        gy_list, gz_pre_list, gz_list, z_list, s_list = [], [], [], [], []
        gy = u[0] @ self.Wyu[0].T + self.byu[0]
        gy_list.append(gy)
        s = (p * gy) @ self.Wy[0].T + u[0] @ self.Wu[0].T + self.b[0]
        s_list.append(s)
        z = apply_activation(s, act)
        z_list.append(z)
        for i in range(1, k + 1):
            ui = u[i - 1]
            gz_pre = ui @ self.Wzu[i].T + self.bzu[i]
            gz = np.maximum(gz_pre, 0.0)
            gy = ui @ self.Wyu[i].T + self.byu[i]
            s = (z * gz) @ self.Wz[i].T + (p * gy) @ self.Wy[i].T + ui @ self.Wu[i].T + self.b[i]
            gz_pre_list.append(gz_pre)
            gz_list.append(gz)
            gy_list.append(gy)
            s_list.append(s)
            z = apply_activation(s, act) if i < k else s
            z_list.append(z)
        out = self.output_scale * z[:, 0]
        return out, (u_pre, u, gy_list, gz_pre_list, gz_list, z_list, s_list, p, c)

    def forward(self, prediction, target):
        """Surrogate value for one pair (m,) or a batch (n, m); finite scalar(s)."""
        p, c, single = self._check_pair(prediction, target)
        out, _ = self._forward_trace(p, c)
        if not np.all(np.isfinite(out)):
            raise FloatingPointError("non-finite surrogate output")
        return float(out[0]) if single else out

    def value_and_grads(self, prediction, target, upstream=None):
        """Values plus gradients w.r.t. prediction, target, and parameters.

        upstream is dL/d(output) per sample, default all-ones. Parameter
        gradients are summed over the batch, matching self.params order.
        Returns (values, d_prediction, d_target, param_grads).
        """
        p, c, single = self._check_pair(prediction, target)
        out, trace = self._forward_trace(p, c)
        dp, dc, param_grads = self._grads_from_trace(trace, upstream)
        if single:
            return float(out[0]), dp[0], dc[0], param_grads
        return out, dp, dc, param_grads

    def mse_and_grads(self, prediction, target, values):
        """Mean squared error against `values` plus its parameter gradients.

        One fused forward/backward pass; used by the fitting loop.
        Returns (loss, outputs, param_grads).
        """
        p, c, _ = self._check_pair(prediction, target)
        out, trace = self._forward_trace(p, c)
        resid = out - np.asarray(values, dtype=float)
        loss = float((resid**2).mean())
        _, _, param_grads = self._grads_from_trace(trace, 2.0 * resid / resid.size)
        return loss, out, param_grads

    def _grads_from_trace(self, trace, upstream):
        u_pre, u, gy_list, gz_pre_list, gz_list, z_list, s_list, p, c = trace
        n = p.shape[0]
        if upstream is None:
            up = np.ones(n)
        else:
            up = np.asarray(upstream, dtype=float).reshape(n)
        act = self.activation
        k = len(self.hidden_widths)

        gV = [np.zeros_like(v) for v in self.V]
        gd = [np.zeros_like(v) for v in self.d]
        gWz = [None] + [np.zeros_like(self.Wz[i]) for i in range(1, k + 1)]
        gWzu = [None] + [np.zeros_like(self.Wzu[i]) for i in range(1, k + 1)]
        gbzu = [None] + [np.zeros_like(self.bzu[i]) for i in range(1, k + 1)]
        gWy = [np.zeros_like(w) for w in self.Wy]
        gWyu = [np.zeros_like(w) for w in self.Wyu]
        gbyu = [np.zeros_like(w) for w in self.byu]
        gWu = [np.zeros_like(w) for w in self.Wu]
        gb = [np.zeros_like(w) for w in self.b]
        du = [np.zeros_like(ui) for ui in u]
        dp = np.zeros_like(p)

        dz = (self.output_scale * up)[:, None]  # grad w.r.t. z_{k+1}
        for i in range(k, 0, -1):
            s = s_list[i]
            ds = dz if i == k else dz * _act_grad(act, s)
            z_in = z_list[i - 1]
            ui = u[i - 1]
            gz, gz_pre, gy = gz_list[i - 1], gz_pre_list[i - 1], gy_list[i]
            gWz[i] += ds.T @ (z_in * gz)
            gWy[i] += ds.T @ (p * gy)
            gWu[i] += ds.T @ ui
            gb[i] += ds.sum(axis=0)
            dprod_z = ds @ self.Wz[i]
            dprod_y = ds @ self.Wy[i]
            du[i - 1] += ds @ self.Wu[i]
            dz = dprod_z * gz
            dgz_pre = dprod_z * z_in * (gz_pre > 0)
            gWzu[i] += dgz_pre.T @ ui
            gbzu[i] += dgz_pre.sum(axis=0)
            du[i - 1] += dgz_pre @ self.Wzu[i]
            dp += dprod_y * gy
            dgy = dprod_y * p
            gWyu[i] += dgy.T @ ui
            gbyu[i] += dgy.sum(axis=0)
            du[i - 1] += dgy @ self.Wyu[i]
        # stage 0
        ds = dz * _act_grad(act, s_list[0])
        gy = gy_list[0]
        gWy[0] += ds.T @ (p * gy)
        gWu[0] += ds.T @ u[0]
        gb[0] += ds.sum(axis=0)
        dprod_y = ds @ self.Wy[0]
        du[0] += ds @ self.Wu[0]
        dp += dprod_y * gy
        dgy = dprod_y * p
        gWyu[0] += dgy.T @ u[0]
        gbyu[0] += dgy.sum(axis=0)
        du[0] += dgy @ self.Wyu[0]
        # context path
        dc = np.zeros_like(c)
        for i in range(k - 1, -1, -1):
            dpre = du[i] * _act_grad(act, u_pre[i])
            below = c if i == 0 else u[i - 1]
            gV[i] += dpre.T @ below
            gd[i] += dpre.sum(axis=0)
            if i == 0:
                dc += dpre @ self.V[0]
            else:
                du[i - 1] += dpre @ self.V[i]

        param_grads = []
        for i in range(k):
            param_grads.extend((gV[i], gd[i]))
        for i in range(k + 1):
            if i > 0:
                param_grads.extend((gWz[i], gWzu[i], gbzu[i]))
            param_grads.extend((gWy[i], gWyu[i], gbyu[i], gWu[i], gb[i]))

        for g in param_grads + [dp, dc]:
            if not np.all(np.isfinite(g)):
                raise FloatingPointError("non-finite intermediate in surrogate backprop")

        return dp, dc, param_grads

    def grad_prediction(self, prediction, target):
        """d(output)/d(prediction) per sample; the upstream signal for predictive training."""
        _, dp, _, _ = self.value_and_grads(prediction, target)
        return dp

    # -- serialization ------------------------------------------------------

    def save(self, path):
        """Versioned text dump: header (dims, widths, activation, scale) + row-major blocks."""
        with open(path, "w") as fh:
            fh.write(f"picnn-v{SURROGATE_FORMAT_VERSION}\n")
            fh.write(f"{self.target_dim} {self.context_width} {self.activation} "
                     f"{self.output_scale!r}\n")
            fh.write(" ".join(str(h) for h in self.hidden_widths) + "\n")
            for block in self.params:
                fh.write(" ".join(repr(v) for v in block.ravel()) + "\n")

    @classmethod
    def load(cls, path):
        with open(path) as fh:
            lines = fh.read().splitlines()
        if not lines or lines[0] != f"picnn-v{SURROGATE_FORMAT_VERSION}":
            raise ValueError(f"unrecognized surrogate file header in {path}")
        m_s, hu_s, act, scale_s = lines[1].split()
        widths = tuple(int(v) for v in lines[2].split())
        model = cls(int(m_s), hidden_widths=widths, context_width=int(hu_s), activation=act)
        model.output_scale = float(scale_s)
        for block, line in zip(model.params, lines[3:]):
            vals = np.array([float(v) for v in line.split()])
            block[...] = vals.reshape(block.shape)
        return model


def _act_grad(tag, z):
    if tag == "softplus":
        return sigmoid(z)
    if tag == "relu":
        return (z > 0).astype(float)
    raise ValueError(f"unknown activation {tag!r}")


def midpoint_gap(model: Picnn, pred_a, pred_b, lam, target):
    """Convexity gap L(mix) - lam L(a) - (1-lam) L(b); <= 0 for convex models.

    Vectorized over rows of the inputs; lam is a scalar or per-row array.
    """
    pred_a = np.atleast_2d(np.asarray(pred_a, dtype=float))
    pred_b = np.atleast_2d(np.asarray(pred_b, dtype=float))
    target = np.atleast_2d(np.asarray(target, dtype=float))
    lam = np.asarray(lam, dtype=float).reshape(-1)
    mix = lam[:, None] * pred_a + (1 - lam[:, None]) * pred_b
    val_mix = model.forward(mix, target)
    val_a = model.forward(pred_a, target)
    val_b = model.forward(pred_b, target)
    return val_mix - lam * val_a - (1 - lam) * val_b
