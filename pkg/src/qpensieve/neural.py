"""Small numpy feedforward networks with hand-written reverse mode, Adam, and a squashed Gaussian actor.

Parameters are plain float64 arrays; forward passes that need a backward
pass return an explicit cache, so networks carry no hidden state.
"""

import json
import math
import struct
from pathlib import Path

import numpy as np

from .exceptions import InvalidArgumentError, NumericalError

LOG_STD_MIN = -20.0
LOG_STD_MAX = 2.0
_HALF_LOG_2PI = 0.5 * math.log(2.0 * math.pi)
_LOG2 = math.log(2.0)


class MLP:
    """Fully connected network, ReLU on hidden layers and identity on the output.

    Parameters
    ----------
    sizes : sequence of int
        ``(input, hidden..., output)``.
    rng : numpy.random.Generator, optional
        Used for the uniform ``±1/sqrt(fan_in)`` initialisation.  Without it
        every parameter starts at zero.
    """

    def __init__(self, sizes, rng=None):
        self.sizes = tuple(int(s) for s in sizes)
        if len(self.sizes) < 2 or min(self.sizes) < 1:
            raise InvalidArgumentError(f"invalid layer sizes {sizes!r}")
        self.weights, self.biases = [], []
        for fan_in, fan_out in zip(self.sizes[:-1], self.sizes[1:]):
            if rng is None:
                self.weights.append(np.zeros((fan_in, fan_out)))
                self.biases.append(np.zeros(fan_out))
            else:
                bound = 1.0 / math.sqrt(fan_in)
                self.weights.append(rng.uniform(-bound, bound, size=(fan_in, fan_out)))
                self.biases.append(rng.uniform(-bound, bound, size=fan_out))

    @property
    def n_layers(self):
        return len(self.weights)

    def parameters(self):
        """Parameter arrays in the order ``W0, b0, W1, b1, ...`` (live references)."""
        out = []
        for W, b in zip(self.weights, self.biases):
            out += [W, b]
        return out

    def parameter_names(self):
        names = []
        for i in range(self.n_layers):
            names += [f"W{i}", f"b{i}"]
        return names

    @property
    def n_params(self):
        return sum(p.size for p in self.parameters())

    def _check_input(self, x):
        x = np.asarray(x, dtype=float)
        if x.shape[-1] != self.sizes[0]:
            raise InvalidArgumentError(f"expected input width {self.sizes[0]}, got {x.shape[-1]}")
        return x

    def forward(self, x):
        h = self._check_input(x)
        last = self.n_layers - 1
        for i, (W, b) in enumerate(zip(self.weights, self.biases)):
            h = h @ W + b
            if i < last:
                h = np.maximum(h, 0.0)
        return h

    __call__ = forward

    def forward_cached(self, x):
        """Forward pass that also returns the per-layer inputs needed by :meth:`backward`."""
        h = self._check_input(x)
        inputs = []
        last = self.n_layers - 1
        for i, (W, b) in enumerate(zip(self.weights, self.biases)):
            inputs.append(h)
            h = h @ W + b
            if i < last:
                h = np.maximum(h, 0.0)
        return h, inputs

    def backward(self, cache, grad_out, param_grads=True):
        """Reverse-mode pass.

        Returns ``(grads, grad_input)`` where ``grads`` follows the order of
        :meth:`parameters` (``None`` if ``param_grads`` is false).
        """
        g = np.asarray(grad_out, dtype=float)
        if g.shape[-1] != self.sizes[-1]:
            raise InvalidArgumentError(f"expected upstream width {self.sizes[-1]}, got {g.shape[-1]}")
        grads = [None] * (2 * self.n_layers) if param_grads else None
        for i in range(self.n_layers - 1, -1, -1):
            x = cache[i]
            if param_grads:
                grads[2 * i] = x.T @ g
                grads[2 * i + 1] = g.sum(axis=0)
            g = g @ self.weights[i].T
            if i > 0:
                # inputs of layer i are relu outputs of layer i-1
                g = g * (x > 0.0)
        return grads, g

    def copy(self):
        other = MLP.__new__(MLP)
        other.sizes = self.sizes
        other.weights = [W.copy() for W in self.weights]
        other.biases = [b.copy() for b in self.biases]
        return other

    def frozen_copy(self):
        other = self.copy()
        for p in other.parameters():
            p.setflags(write=False)
        return other

    def set_parameters(self, params):
        params = list(params)
        if len(params) != 2 * self.n_layers:
            raise InvalidArgumentError("parameter count mismatch")
        for dst, src in zip(self.parameters(), params):
            if dst.shape != np.shape(src):
                raise InvalidArgumentError(f"shape mismatch {dst.shape} vs {np.shape(src)}")
            dst[...] = src

    def to_arrays(self, prefix):
        return {f"{prefix}.{n}": p for n, p in zip(self.parameter_names(), self.parameters())}

    @classmethod
    def from_arrays(cls, sizes, arrays, prefix):
        net = cls(sizes)
        net.set_parameters([arrays[f"{prefix}.{n}"] for n in net.parameter_names()])
        return net


class Adam:
    """Bias-corrected Adam over a fixed list of parameter arrays (updated in place)."""

    def __init__(self, lr=3e-4, beta1=0.9, beta2=0.999, eps=1e-8):
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self.m = None
        self.v = None

    def step(self, params, grads, names=None):
        if len(params) != len(grads):
            raise InvalidArgumentError("params and grads differ in length")
        for i, (p, g) in enumerate(zip(params, grads)):
            if p.shape != g.shape:
                raise InvalidArgumentError(f"gradient shape {g.shape} does not match parameter {p.shape}")
            if not np.all(np.isfinite(g)):
                label = names[i] if names else f"block {i}"
                raise NumericalError(f"non-finite gradient in parameter {label}")
        if self.m is None:
            self.m = [np.zeros_like(p) for p in params]
            self.v = [np.zeros_like(p) for p in params]
        self.t += 1
        bc1 = 1.0 - self.beta1**self.t
        bc2 = 1.0 - self.beta2**self.t
        for p, g, m, v in zip(params, grads, self.m, self.v):
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * (g * g)
            p -= self.lr * (m / bc1) / (np.sqrt(v / bc2) + self.eps)
        return params

    def state_arrays(self, prefix):
        if self.m is None:
            return {}
        out = {}
        for i, (m, v) in enumerate(zip(self.m, self.v)):
            out[f"{prefix}.m{i}"] = m
            out[f"{prefix}.v{i}"] = v
        return out

    def load_state_arrays(self, arrays, prefix, n_params, t):
        self.t = int(t)
        if f"{prefix}.m0" not in arrays:
            self.m = self.v = None
            return
        self.m = [arrays[f"{prefix}.m{i}"].copy() for i in range(n_params)]
        self.v = [arrays[f"{prefix}.v{i}"].copy() for i in range(n_params)]


def log1m_tanh_sq(u):
    """``log(1 - tanh(u)^2)`` without cancellation for large ``|u|``."""
    return 2.0 * (_LOG2 - u - np.logaddexp(0.0, -2.0 * u))


class GaussianTanhActor:
    """Diagonal Gaussian on a pre-squash variable followed by ``tanh``.

    The trunk maps the observation to ``2 * act_dim`` numbers: the mean and
    the raw log-std, which is clamped to ``[LOG_STD_MIN, LOG_STD_MAX]``.
    Samples are reparameterised as ``a = tanh(mean + std * noise)``.
    """

    def __init__(self, obs_dim, act_dim, hidden=(256, 256), rng=None):
        self.obs_dim = int(obs_dim)
        self.act_dim = int(act_dim)
        self.trunk = MLP((self.obs_dim, *hidden, 2 * self.act_dim), rng=rng)

    def parameters(self):
        return self.trunk.parameters()

    def distribution(self, obs):
        raw, trunk_cache = self.trunk.forward_cached(obs)
        k = self.act_dim
        mean, raw_log_std = raw[..., :k], raw[..., k:]
        log_std = np.clip(raw_log_std, LOG_STD_MIN, LOG_STD_MAX)
        return mean, log_std, (trunk_cache, raw_log_std)

    def deterministic(self, obs):
        raw = self.trunk.forward(obs)
        return np.tanh(raw[..., : self.act_dim])

    def sample(self, obs, rng=None, noise=None):
        """Reparameterised sample.

        Returns ``(action, log_prob, cache)``; ``log_prob`` includes the tanh
        change of variables summed over action dimensions.
        """
        mean, log_std, dist_cache = self.distribution(obs)
        if noise is None:
            noise = rng.standard_normal(mean.shape)
        noise = np.asarray(noise, dtype=float)
        std = np.exp(log_std)
        u = mean + std * noise
        action = np.tanh(u)
        log_prob = np.sum(-0.5 * noise**2 - log_std - _HALF_LOG_2PI - log1m_tanh_sq(u), axis=-1)
        cache = (dist_cache, noise, std, u, action)
        return action, log_prob, cache

    def backward(self, cache, grad_action, grad_log_prob):
        """Parameter gradients given upstream ``dL/da`` (B, act_dim) and ``dL/dlog_prob`` (B,)."""
        (trunk_cache, raw_log_std), noise, std, u, action = cache
        g_lp = np.asarray(grad_log_prob, dtype=float)[..., None]
        # d/du of -log(1 - tanh^2 u) is 2 tanh u
        g_u = np.asarray(grad_action, dtype=float) * (1.0 - action**2) + g_lp * 2.0 * action
        g_mean = g_u
        g_log_std = g_u * std * noise - g_lp
        g_log_std = g_log_std * ((raw_log_std > LOG_STD_MIN) & (raw_log_std < LOG_STD_MAX))
        grads, _ = self.trunk.backward(trunk_cache, np.concatenate([g_mean, g_log_std], axis=-1))
        return grads

    def copy(self):
        other = GaussianTanhActor.__new__(GaussianTanhActor)
        other.obs_dim, other.act_dim = self.obs_dim, self.act_dim
        other.trunk = self.trunk.copy()
        return other


# Flat binary checkpoints: magic, little-endian uint32 header length, JSON header, raw little-endian arrays.
_MAGIC = b"QPNN\x01"


def save_arrays(path, arrays, meta=None):
    """Write named float64 arrays plus a JSON metadata header; round-trips bit-exactly."""
    entries, blobs = [], []
    for name in sorted(arrays):
        a = np.array(arrays[name], dtype="<f8", order="C")  # keeps 0-d shapes
        entries.append({"name": name, "shape": list(a.shape), "count": int(a.size)})
        blobs.append(a.tobytes())
    header = json.dumps({"format": 1, "dtype": "<f8", "arrays": entries, "meta": meta or {}}, sort_keys=True).encode()
    with open(path, "wb") as fh:
        fh.write(_MAGIC)
        fh.write(struct.pack("<I", len(header)))
        fh.write(header)
        for blob in blobs:
            fh.write(blob)


def load_arrays(path):
    """Inverse of :func:`save_arrays`; returns ``(arrays, meta)``."""
    data = Path(path).read_bytes()
    if not data.startswith(_MAGIC):
        raise InvalidArgumentError(f"{path} is not a parameter checkpoint")
    offset = len(_MAGIC)
    (n,) = struct.unpack_from("<I", data, offset)
    offset += 4
    header = json.loads(data[offset : offset + n])
    offset += n
    arrays = {}
    for entry in header["arrays"]:
        nbytes = 8 * entry["count"]
        arrays[entry["name"]] = np.frombuffer(data, dtype="<f8", count=entry["count"], offset=offset).reshape(
            entry["shape"]
        ).copy()
        offset += nbytes
    if offset != len(data):
        raise InvalidArgumentError(f"{path} has {len(data) - offset} trailing bytes")
    return arrays, header["meta"]
