"""Layer primitives: dense, LSTM, batch norm, dropout.

Every layer exposes an explicit forward that returns a cache and a backward
that consumes it. No autodiff; the fixed architectures in ``models`` chain
these by hand.
"""

import numpy as np

from .errors import ShapeError, ConfigError

ACTIVATIONS = ("relu", "softmax", "identity")


def xavier_uniform(rng, fan_in, fan_out, shape, dtype=np.float64):
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=shape).astype(dtype)


def relu(x):
    return np.maximum(x, 0.0)


def softmax(logits):
    """Row-wise softmax, shifted for stability. Rows sum to 1."""
    z = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


class DenseLayer:
    """Fully connected layer: y = activation(x @ W + b)."""

    def __init__(self, weights, bias, activation="relu"):
        weights = np.asarray(weights)
        bias = np.asarray(bias)
        if activation not in ACTIVATIONS:
            raise ConfigError(f"unknown activation {activation!r}")
        if weights.ndim != 2 or bias.shape != (weights.shape[1],):
            raise ShapeError(
                f"dense layer weights {weights.shape} and bias {bias.shape} disagree"
            )
        self.weights = weights
        self.bias = bias
        self.activation = activation

    @classmethod
    def init(cls, rng, n_in, n_out, activation="relu", dtype=np.float64):
        w = xavier_uniform(rng, n_in, n_out, (n_in, n_out), dtype)
        b = np.zeros(n_out, dtype=dtype)
        return cls(w, b, activation)

    @property
    def n_in(self):
        return self.weights.shape[0]

    @property
    def n_out(self):
        return self.weights.shape[1]

    def forward(self, x):
        """Returns (output, cache) for a (batch, n_in) input."""
        x = np.asarray(x)
        if x.ndim != 2 or x.shape[1] != self.n_in:
            raise ShapeError(
                f"dense forward: input shape {x.shape} incompatible with "
                f"weights {self.weights.shape}"
            )
        pre = x @ self.weights + self.bias
        if self.activation == "relu":
            out = relu(pre)
        elif self.activation == "softmax":
            out = softmax(pre)
        else:
            out = pre
        return out, (x, pre)

    def backward(self, cache, upstream):
        """Gradients of the forward map.

        For the softmax activation the upstream gradient must already be
        taken w.r.t. the pre-softmax logits (fused softmax+CE path); the
        layer then behaves as identity here.
        """
        x, pre = cache
        upstream = np.asarray(upstream)
        if upstream.shape != pre.shape:
            raise ShapeError(
                f"dense backward: upstream {upstream.shape} vs output {pre.shape}"
            )
        if self.activation == "relu":
            d_pre = upstream * (pre > 0)
        else:
            d_pre = upstream
        grad_w = x.T @ d_pre
        grad_b = d_pre.sum(axis=0)
        grad_x = d_pre @ self.weights.T
        return grad_x, grad_w, grad_b


def sigmoid(x):
    return 0.5 * (np.tanh(0.5 * x) + 1.0)


class LstmLayer:
    """Standard LSTM with gate stacking order [input, forget, candidate, output].

    Weight shapes: w_x (n_in, 4*units), w_h (units, 4*units), bias (4*units).
    Initial hidden and cell states are zero.
    """

    def __init__(self, w_x, w_h, bias):
        w_x, w_h, bias = (np.asarray(a) for a in (w_x, w_h, bias))
        units = w_h.shape[0]
        if w_x.shape[1] != 4 * units or w_h.shape != (units, 4 * units) or bias.shape != (4 * units,):
            raise ShapeError(
                f"inconsistent LSTM parameter shapes: w_x {w_x.shape}, "
                f"w_h {w_h.shape}, bias {bias.shape}"
            )
        self.w_x = w_x
        self.w_h = w_h
        self.bias = bias

    @classmethod
    def init(cls, rng, n_in, units, dtype=np.float64):
        w_x = xavier_uniform(rng, n_in, units, (n_in, 4 * units), dtype)
        w_h = xavier_uniform(rng, units, units, (units, 4 * units), dtype)
        b = np.zeros(4 * units, dtype=dtype)
        b[units:2 * units] = 1.0  # forget gate opens by default
        return cls(w_x, w_h, b)

    @property
    def units(self):
        return self.w_h.shape[0]

    @property
    def n_in(self):
        return self.w_x.shape[0]

    def forward(self, x):
        """Run the recurrence over a (batch, time, n_in) input.

        Returns (outputs, (h_T, c_T), cache) with outputs (batch, time, units).
        """
        x = np.asarray(x)
        if x.ndim != 3 or x.shape[2] != self.n_in:
            raise ShapeError(
                f"lstm forward: input shape {x.shape} incompatible with w_x {self.w_x.shape}"
            )
        batch, time, _ = x.shape
        if time < 1:
            raise ShapeError("lstm forward: empty time axis")
        u = self.units
        h = np.zeros((batch, u), dtype=x.dtype)
        c = np.zeros((batch, u), dtype=x.dtype)
        outputs = np.empty((batch, time, u), dtype=x.dtype)
        steps = []
        for t in range(time):
            z = x[:, t, :] @ self.w_x + h @ self.w_h + self.bias
            i = sigmoid(z[:, :u])
            f = sigmoid(z[:, u:2 * u])
            g = np.tanh(z[:, 2 * u:3 * u])
            o = sigmoid(z[:, 3 * u:])
            c_prev = c
            c = f * c_prev + i * g
            tc = np.tanh(c)
            h_prev = h
            h = o * tc
            outputs[:, t, :] = h
            steps.append((i, f, g, o, c_prev, c, tc, h_prev))
        cache = (x, steps)
        return outputs, (h, c), cache

    def backward(self, cache, upstream):
        """Backprop through time.

        ``upstream`` is the gradient w.r.t. the full output sequence
        (batch, time, units); callers that only use the final hidden state
        pass zeros elsewhere. Returns (grad_x, grads) with grads keyed
        w_x/w_h/bias.
        """
        x, steps = cache
        upstream = np.asarray(upstream)
        batch, time, _ = x.shape
        u = self.units
        if upstream.shape != (batch, time, u):
            raise ShapeError(
                f"lstm backward: upstream {upstream.shape} vs outputs {(batch, time, u)}"
            )
        grad_x = np.zeros_like(x)
        g_wx = np.zeros_like(self.w_x)
        g_wh = np.zeros_like(self.w_h)
        g_b = np.zeros_like(self.bias)
        dh_next = np.zeros((batch, u), dtype=x.dtype)
        dc_next = np.zeros((batch, u), dtype=x.dtype)
        for t in range(time - 1, -1, -1):
            i, f, g, o, c_prev, c, tc, h_prev = steps[t]
            dh = upstream[:, t, :] + dh_next
            do = dh * tc
            dc = dh * o * (1.0 - tc * tc) + dc_next
            di = dc * g
            df = dc * c_prev
            dg = dc * i
            dc_next = dc * f
            dz = np.concatenate(
                [
                    di * i * (1.0 - i),
                    df * f * (1.0 - f),
                    dg * (1.0 - g * g),
                    do * o * (1.0 - o),
                ],
                axis=1,
            )
            g_wx += x[:, t, :].T @ dz
            g_wh += h_prev.T @ dz
            g_b += dz.sum(axis=0)
            grad_x[:, t, :] = dz @ self.w_x.T
            dh_next = dz @ self.w_h.T
        return grad_x, {"w_x": g_wx, "w_h": g_wh, "bias": g_b}


class BatchNormLayer:
    """Batch normalization over all non-feature axes (feature axis last)."""

    def __init__(self, num_features, momentum=0.9, epsilon=1e-5, dtype=np.float64):
        if not 0.0 < momentum < 1.0:
            raise ConfigError(f"batch norm momentum {momentum} outside (0,1)")
        self.gamma = np.ones(num_features, dtype=dtype)
        self.beta = np.zeros(num_features, dtype=dtype)
        self.running_mean = np.zeros(num_features, dtype=dtype)
        self.running_var = np.ones(num_features, dtype=dtype)
        self.momentum = momentum
        self.epsilon = epsilon

    @property
    def num_features(self):
        return self.gamma.shape[0]

    def forward(self, x, mode):
        """Normalize ``x`` (..., num_features). Train mode uses batch
        statistics and updates running stats; infer mode uses running stats.
        """
        x = np.asarray(x)
        if x.shape[-1] != self.num_features:
            raise ShapeError(
                f"batch norm: feature axis {x.shape[-1]} != {self.num_features}"
            )
        flat = x.reshape(-1, self.num_features)
        if mode == "train":
            if flat.shape[0] < 2:
                raise ShapeError(
                    "batch norm train mode needs more than one sample per statistic"
                )
            mean = flat.mean(axis=0)
            var = flat.var(axis=0)
            self.running_mean = self.momentum * self.running_mean + (1 - self.momentum) * mean
            self.running_var = self.momentum * self.running_var + (1 - self.momentum) * var
        elif mode == "infer":
            mean = self.running_mean
            var = self.running_var
        else:
            raise ConfigError(f"unknown batch norm mode {mode!r}")
        inv_std = 1.0 / np.sqrt(var + self.epsilon)
        x_hat = (flat - mean) * inv_std
        out = (self.gamma * x_hat + self.beta).reshape(x.shape)
        cache = (x.shape, x_hat, inv_std)
        return out, cache

    def backward(self, cache, upstream):
        """Gradient of the train-mode forward (batch statistics path)."""
        shape, x_hat, inv_std = cache
        upstream = np.asarray(upstream)
        if upstream.shape != shape:
            raise ShapeError(f"batch norm backward: upstream {upstream.shape} vs {shape}")
        d_out = upstream.reshape(-1, self.num_features)
        n = d_out.shape[0]
        grad_gamma = (d_out * x_hat).sum(axis=0)
        grad_beta = d_out.sum(axis=0)
        d_xhat = d_out * self.gamma
        grad_x = inv_std / n * (
            n * d_xhat - d_xhat.sum(axis=0) - x_hat * (d_xhat * x_hat).sum(axis=0)
        )
        return grad_x.reshape(shape), grad_gamma, grad_beta


class DropoutLayer:
    """Inverted dropout: inference is the identity, training rescales survivors."""

    def __init__(self, rate):
        if not 0.0 <= rate < 1.0:
            raise ConfigError(f"dropout rate {rate} outside [0,1)")
        self.rate = rate

    def forward(self, x, mode, rng=None):
        """Returns (output, mask); mask is None on the identity paths."""
        x = np.asarray(x)
        if mode == "infer" or self.rate == 0.0:
            return x, None
        if mode != "train":
            raise ConfigError(f"unknown dropout mode {mode!r}")
        if rng is None:
            raise ConfigError("dropout train mode requires an rng")
        keep = 1.0 - self.rate
        mask = (rng.random(x.shape) < keep) / keep
        return x * mask, mask

    def backward(self, mask, upstream):
        if mask is None:
            return np.asarray(upstream)
        return upstream * mask
