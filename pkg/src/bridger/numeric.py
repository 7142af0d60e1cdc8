"""Dense MLPs with hand-written backprop, Adam, time features and checkpoints.

Everything is batch-first numpy: an MLP maps ``(n, in)`` to ``(n, out)``.
Parameters are kept as a flat list ``[W0, b0, W1, b1, ...]`` with
``W_l`` of shape ``(in_l, out_l)`` so that optimizers can treat them uniformly.

Random streams come from numpy's PCG64 seeded through ``SeedSequence``;
independent sub-streams are obtained with distinct ``spawn_key`` tuples.
"""

import hashlib
import json
import math
import zlib
from dataclasses import dataclass, field

import numpy as np
from scipy.special import erf

from .exceptions import ShapeError

CHECKPOINT_FORMAT_VERSION = 1
RNG_ALGORITHM = "numpy-PCG64/SeedSequence"

# U(-k, k) with k = INIT_SCALE / sqrt(fan_in)
INIT_SCALE = 1.0

_SQRT2 = math.sqrt(2.0)
_INV_SQRT_2PI = 1.0 / math.sqrt(2.0 * math.pi)


def _seed_sequence(seed, stream):
    key = tuple(s if isinstance(s, int) else zlib.crc32(str(s).encode()) for s in stream)
    return np.random.SeedSequence(int(seed), spawn_key=key)


def make_rng(seed, *stream):
    """Generator for ``seed`` on the sub-stream identified by ``stream``.

    ``stream`` entries may be ints or strings; strings are reduced with
    CRC32 so that stream ids stay stable across interpreter runs.
    """
    return np.random.Generator(np.random.PCG64(_seed_sequence(seed, stream)))


def derive_seed(seed, *stream):
    """Integer seed for the sub-stream ``stream`` (for estimators that take ``random_state``)."""
    return int(_seed_sequence(seed, stream).generate_state(1, dtype=np.uint32)[0])


# Each activation returns (value, aux); the gradient reuses aux from the forward pass.


def _gelu(x):
    cdf = 0.5 * (1.0 + erf(x / _SQRT2))
    return x * cdf, cdf


def _gelu_grad(x, cdf):
    return cdf + x * _INV_SQRT_2PI * np.exp(-0.5 * x * x)


def _tanh(x):
    y = np.tanh(x)
    return y, y


def _tanh_grad(x, y):
    return 1.0 - y * y


def _relu(x):
    return np.maximum(x, 0.0), None


def _relu_grad(x, _):
    return (x > 0).astype(x.dtype)


ACTIVATIONS = {
    "tanh": (_tanh, _tanh_grad),
    "relu": (_relu, _relu_grad),
    "gelu": (_gelu, _gelu_grad),
}

# sup_x |f'(x)|, used for Lipschitz upper bounds
ACTIVATION_LIPSCHITZ = {"tanh": 1.0, "relu": 1.0, "gelu": 1.1289}


@dataclass
class Mlp:
    """Fully connected network; hidden layers use ``activation``, output is linear.

    Attributes:
        widths: Layer widths including input and output, e.g. ``[10, 64, 64, 2]``.
        activation: One of ``"tanh"``, ``"relu"``, ``"gelu"``.
        params: ``[W0, b0, W1, b1, ...]``.
    """

    widths: list
    activation: str = "gelu"
    params: list = field(default_factory=list)

    def __post_init__(self):
        self.widths = [int(w) for w in self.widths]
        if len(self.widths) < 2 or min(self.widths) < 1:
            raise ShapeError(f"invalid layer widths {self.widths}")
        if self.activation not in ACTIVATIONS:
            raise ValueError(f"unknown activation {self.activation!r}")
        expected = self.param_shapes()
        if len(self.params) != len(expected):
            raise ShapeError(f"expected {len(expected)} parameter arrays, got {len(self.params)}")
        self.params = [np.asarray(p, dtype=float).reshape(s) for p, s in zip(self.params, expected)]

    @classmethod
    def init(cls, widths, activation="gelu", rng=None):
        """Fan-in uniform initialization: ``U(-1/sqrt(fan_in), 1/sqrt(fan_in))``."""
        rng = np.random.default_rng(rng) if not isinstance(rng, np.random.Generator) else rng
        params = []
        for fan_in, fan_out in zip(widths[:-1], widths[1:]):
            k = INIT_SCALE / math.sqrt(fan_in)
            params.append(rng.uniform(-k, k, size=(fan_in, fan_out)))
            params.append(rng.uniform(-k, k, size=(fan_out,)))
        return cls(list(widths), activation, params)

    @classmethod
    def zeros(cls, widths, activation="gelu"):
        net = cls.init(widths, activation, np.random.default_rng(0))
        net.params = [np.zeros_like(p) for p in net.params]
        return net

    def param_shapes(self):
        shapes = []
        for fan_in, fan_out in zip(self.widths[:-1], self.widths[1:]):
            shapes += [(fan_in, fan_out), (fan_out,)]
        return shapes

    @property
    def n_in(self):
        return self.widths[0]

    @property
    def n_out(self):
        return self.widths[-1]

    @property
    def n_params(self):
        return int(sum(p.size for p in self.params))

    def copy(self):
        return Mlp(list(self.widths), self.activation, [p.copy() for p in self.params])

    def forward(self, X, return_cache=False):
        """Evaluate the network on a batch ``X`` of shape ``(n, n_in)``."""
        X = np.asarray(X, dtype=float)
        squeeze = X.ndim == 1
        if squeeze:
            X = X[None, :]
        if X.shape[1] != self.n_in:
            raise ShapeError(f"MLP input: expected {self.n_in} features, got {X.shape[1]}")
        act, _ = ACTIVATIONS[self.activation]
        h = X
        pre = []
        n_layers = len(self.widths) - 1
        for i in range(n_layers):
            W, b = self.params[2 * i], self.params[2 * i + 1]
            u = h @ W + b
            if i < n_layers - 1:
                h_next, aux = act(u)
            else:
                h_next, aux = u, None
            pre.append((h, u, aux))
            h = h_next
        out = h[0] if squeeze else h
        if return_cache:
            return out, pre
        return out

    __call__ = forward

    def backward(self, cache, upstream):
        """Backpropagate ``upstream = dL/d(output)`` through a cached forward pass.

        Returns:
            (grads, dX) where ``grads`` matches ``params`` and ``dX`` is the
            gradient with respect to the network input.
        """
        upstream = np.asarray(upstream, dtype=float)
        if upstream.ndim == 1:
            upstream = upstream[None, :]
        if upstream.shape[1] != self.n_out or upstream.shape[0] != cache[0][0].shape[0]:
            raise ShapeError(
                f"upstream gradient: expected shape {(cache[0][0].shape[0], self.n_out)}, "
                f"got {upstream.shape}"
            )
        _, act_grad = ACTIVATIONS[self.activation]
        grads = [None] * len(self.params)
        g = upstream
        n_layers = len(self.widths) - 1
        for i in reversed(range(n_layers)):
            h_in, u, aux = cache[i]
            if i < n_layers - 1:
                g = g * act_grad(u, aux)
            grads[2 * i] = h_in.T @ g
            grads[2 * i + 1] = g.sum(axis=0)
            g = g @ self.params[2 * i].T
        return grads, g

    def to_dict(self):
        return {
            "widths": list(self.widths),
            "activation": self.activation,
            "params": [p.tolist() for p in self.params],
        }

    @classmethod
    def from_dict(cls, d):
        return cls(d["widths"], d["activation"], [np.asarray(p, dtype=float) for p in d["params"]])


def mlp_param_count(widths):
    return int(sum(a * b + b for a, b in zip(widths[:-1], widths[1:])))


def matched_hidden(n_params, n_in, n_out, depth=2):
    """Equal hidden widths for a ``depth``-layer MLP whose size is closest to ``n_params``."""
    best = None
    for w in range(1, 4097):
        gap = abs(mlp_param_count([n_in, *([w] * depth), n_out]) - n_params)
        if best is None or gap < best[0]:
            best = (gap, w)
    return (best[1],) * depth


def mlp_forward(net, x):
    return net.forward(x)


def mlp_grad(net, x, upstream):
    """Parameter and input gradients of ``upstream . net(x)``."""
    _, cache = net.forward(np.atleast_2d(x), return_cache=True)
    grads, dx = net.backward(cache, np.atleast_2d(upstream))
    if np.ndim(x) == 1:
        dx = dx[0]
    return grads, dx


class Adam:
    """Adam with bias correction over a list of parameter arrays (updated in place).

    Weight decay is not supported: with decay 0 AdamW and Adam coincide.
    """

    def __init__(self, params, lr=1e-3, beta1=0.9, beta2=0.999, eps=1e-8, names=None):
        self.params = params
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.names = names or [f"param[{i}]" for i in range(len(params))]
        self.m = [np.zeros_like(p) for p in params]
        self.v = [np.zeros_like(p) for p in params]
        self.step_count = 0

    def step(self, grads, lr=None):
        if len(grads) != len(self.params):
            raise ShapeError(f"expected {len(self.params)} gradient arrays, got {len(grads)}")
        for name, p, g in zip(self.names, self.params, grads):
            if g.shape != p.shape:
                raise ShapeError(f"{name}: gradient shape {g.shape} != parameter shape {p.shape}")
            if not np.all(np.isfinite(g)):
                raise FloatingPointError(f"non-finite gradient in parameter block {name}")
        lr = self.lr if lr is None else lr
        self.step_count += 1
        c1 = 1.0 - self.beta1**self.step_count
        c2 = 1.0 - self.beta2**self.step_count
        for p, g, m, v in zip(self.params, grads, self.m, self.v):
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            p -= lr * (m / c1) / (np.sqrt(v / c2) + self.eps)


def adam_step(state, params, grads, lr=None):
    """Functional alias: apply one Adam update held in ``state`` to ``params``."""
    if state.params is not params:
        state.params = params
    state.step(grads, lr)
    return params, state


def time_embed(t, width):
    """Sinusoidal features of ``t`` in [0, 1].

    Column ``k`` uses frequency ``pi * 2**(k // 2)``; even columns hold the
    sine, odd columns the cosine. ``t`` may be a scalar or a 1D array.
    """
    t = np.asarray(t, dtype=float)
    if np.any(t < 0.0) or np.any(t > 1.0) or not np.all(np.isfinite(t)):
        raise ValueError(f"time must lie in [0, 1], got {t.min() if t.size else t}..{t.max() if t.size else t}")
    k = np.arange(width)
    freq = np.pi * 2.0 ** (k // 2)
    phase = t[..., None] * freq
    return np.where(k % 2 == 0, np.sin(phase), np.cos(phase))


def config_hash(config):
    """SHA-256 of the canonical JSON form of a config mapping."""
    blob = json.dumps(config, sort_keys=True, separators=(",", ":"), default=str)
    return hashlib.sha256(blob.encode()).hexdigest()


def save_checkpoint(path, sections, *, method, rng_seed, config=None):
    """Write a JSON checkpoint.

    ``sections`` maps section names to JSON-able payloads; an ``Mlp`` value is
    serialized via ``Mlp.to_dict``. Floats are written with Python's
    shortest round-trip repr, so loading is value-exact.
    """
    payload = {
        "format_version": CHECKPOINT_FORMAT_VERSION,
        "method": method,
        "rng": RNG_ALGORITHM,
        "rng_seed": int(rng_seed) if rng_seed is not None else None,
        "config_hash": config_hash(config) if config is not None else None,
        "sections": {k: (v.to_dict() if isinstance(v, Mlp) else v) for k, v in sections.items()},
    }
    with open(path, "w") as fh:
        json.dump(payload, fh, sort_keys=True)
        fh.write("\n")
    return payload


def load_checkpoint(path):
    with open(path) as fh:
        payload = json.load(fh)
    if payload.get("format_version") != CHECKPOINT_FORMAT_VERSION:
        raise ValueError(f"unsupported checkpoint format {payload.get('format_version')!r}")
    return payload
