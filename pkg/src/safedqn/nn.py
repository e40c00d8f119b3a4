"""Dense feedforward networks in plain numpy.

Forward evaluation, analytic backpropagation to parameters and inputs,
SGD / Adam updates, polyak blending and a binary checkpoint format.
Everything runs in float64.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field

import numpy as np

RELU = "relu"
IDENTITY = "identity"
TANH = "tanh"  # smooth alternative for hidden layers, used by attribution checks
_ACTIVATIONS = (RELU, IDENTITY, TANH)

CHECKPOINT_MAGIC = b"SDQNNET\x00"
CHECKPOINT_VERSION = 1


class ShapeError(ValueError):
    """Input, gradient or architecture shapes do not chain."""


class CheckpointError(ValueError):
    """A serialized network could not be decoded."""


@dataclass
class Layer:
    weight: np.ndarray  # (out, in)
    bias: np.ndarray  # (out,)
    activation: str = RELU

    @property
    def in_dim(self) -> int:
        return self.weight.shape[1]

    @property
    def out_dim(self) -> int:
        return self.weight.shape[0]


class Network:
    """A stack of dense layers; rectifier (by default) on hidden layers, identity output."""

    def __init__(self, layers: list[Layer]):
        if not layers:
            raise ShapeError("a network needs at least one layer")
        for layer in layers:
            if layer.activation not in _ACTIVATIONS:
                raise ValueError(f"unknown activation {layer.activation!r}")
            if layer.weight.ndim != 2 or layer.bias.shape != (layer.out_dim,):
                raise ShapeError("layer weight must be (out, in) and bias (out,)")
        for a, b in zip(layers[:-1], layers[1:]):
            if a.out_dim != b.in_dim:
                raise ShapeError(f"layer dims do not chain: {a.out_dim} -> {b.in_dim}")
        self.layers = layers

    @classmethod
    def create(cls, sizes, seed=0, rng: np.random.Generator | None = None, zero=False, hidden_activation=RELU):
        """Build a network with layer widths ``sizes = [in, h1, ..., out]``.

        Weights are drawn from U(-1/sqrt(fan_in), 1/sqrt(fan_in)), biases are zero.
        ``zero=True`` gives an all-zero network.
        """
        if len(sizes) < 2:
            raise ShapeError("sizes must list at least input and output width")
        rng = rng if rng is not None else np.random.default_rng(seed)
        layers = []
        for k, (n_in, n_out) in enumerate(zip(sizes[:-1], sizes[1:])):
            act = IDENTITY if k == len(sizes) - 2 else hidden_activation
            if zero:
                w = np.zeros((n_out, n_in))
            else:
                bound = 1.0 / np.sqrt(n_in)
                w = rng.uniform(-bound, bound, size=(n_out, n_in))
            layers.append(Layer(w, np.zeros(n_out), act))
        return cls(layers)

    @property
    def input_dim(self) -> int:
        return self.layers[0].in_dim

    @property
    def output_dim(self) -> int:
        return self.layers[-1].out_dim

    @property
    def sizes(self) -> list[int]:
        return [self.input_dim] + [layer.out_dim for layer in self.layers]

    def params(self) -> list[np.ndarray]:
        """Parameter arrays in layer order, weight before bias."""
        out = []
        for layer in self.layers:
            out.append(layer.weight)
            out.append(layer.bias)
        return out

    def copy(self) -> "Network":
        return Network([Layer(l.weight.copy(), l.bias.copy(), l.activation) for l in self.layers])

    def same_architecture(self, other: "Network") -> bool:
        return self.sizes == other.sizes and [l.activation for l in self.layers] == [
            l.activation for l in other.layers
        ]

    def __call__(self, x):
        return forward(self, x)


@dataclass
class GradientBundle:
    params: list[np.ndarray]
    input_grad: np.ndarray | None = None


@dataclass
class OptimizerState:
    rule: str = "adam"
    learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: list[np.ndarray] = field(default_factory=list)
    v: list[np.ndarray] = field(default_factory=list)

    def __post_init__(self):
        if self.rule not in ("sgd", "adam"):
            raise ValueError(f"unknown optimizer rule {self.rule!r}")
        if not self.learning_rate > 0:
            raise ValueError("learning_rate must be positive")

    @classmethod
    def for_network(cls, net: Network, rule="adam", learning_rate=1e-3, **kw):
        opt = cls(rule=rule, learning_rate=learning_rate, **kw)
        if rule == "adam":
            opt.m = [np.zeros_like(p) for p in net.params()]
            opt.v = [np.zeros_like(p) for p in net.params()]
        return opt


def _as_batch(net: Network, x) -> tuple[np.ndarray, bool]:
    x = np.asarray(x, dtype=np.float64)
    single = x.ndim == 1
    if single:
        x = x[None, :]
    if x.ndim != 2 or x.shape[1] != net.input_dim:
        raise ShapeError(f"expected input of length {net.input_dim}, got shape {np.shape(x)}")
    return x, single


def _activate(z: np.ndarray, activation: str) -> np.ndarray:
    if activation == RELU:
        return np.maximum(z, 0.0)
    if activation == TANH:
        return np.tanh(z)
    return z


def _forward_trace(net: Network, x: np.ndarray):
    """Forward pass that keeps each layer's input and pre-activation."""
    inputs, pre = [], []
    h = x
    for layer in net.layers:
        inputs.append(h)
        z = h @ layer.weight.T + layer.bias
        pre.append(z)
        h = _activate(z, layer.activation)
    return h, inputs, pre


def forward(net: Network, x) -> np.ndarray:
    """Evaluate the network on one input vector or a batch of rows."""
    xb, single = _as_batch(net, x)
    if not np.all(np.isfinite(xb)):
        raise ValueError("input contains non-finite entries")
    h = xb
    for layer in net.layers:
        h = _activate(h @ layer.weight.T + layer.bias, layer.activation)
    return h[0] if single else h


def backward(net: Network, x, output_grad, want_input_grad=False) -> GradientBundle:
    """Gradients of ``sum(output * output_grad)`` w.r.t. parameters (and input).

    For a batch, parameter gradients are summed over rows and the input
    gradient keeps one row per sample.
    """
    xb, single = _as_batch(net, x)
    g = np.asarray(output_grad, dtype=np.float64)
    if single:
        g = g[None, :] if g.ndim == 1 else g
    if g.shape != (xb.shape[0], net.output_dim):
        raise ShapeError(f"output_grad shape {g.shape} does not match ({xb.shape[0]}, {net.output_dim})")

    _, inputs, pre = _forward_trace(net, xb)
    grads: list[np.ndarray] = [None] * (2 * len(net.layers))  # type: ignore[list-item]
    for k in range(len(net.layers) - 1, -1, -1):
        layer = net.layers[k]
        if layer.activation == RELU:
            g = g * (pre[k] > 0.0)
        elif layer.activation == TANH:
            g = g * (1.0 - np.tanh(pre[k]) ** 2)
        grads[2 * k] = g.T @ inputs[k]
        grads[2 * k + 1] = g.sum(axis=0)
        if k > 0 or want_input_grad:
            g = g @ layer.weight
    input_grad = None
    if want_input_grad:
        input_grad = g[0] if single else g
    return GradientBundle(grads, input_grad)


def apply_gradients(net: Network, grads: GradientBundle, opt: OptimizerState) -> None:
    """Move ``net`` parameters one optimizer step along ``-grads`` in place."""
    params = net.params()
    if len(grads.params) != len(params) or any(
        g.shape != p.shape for g, p in zip(grads.params, params)
    ):
        raise ShapeError("gradient bundle is not congruent with the network")
    for i, g in enumerate(grads.params):
        if not np.all(np.isfinite(g)):
            raise FloatingPointError(f"non-finite gradient in parameter array {i}; update rejected")

    opt.step += 1
    if opt.rule == "sgd":
        for p, g in zip(params, grads.params):
            p -= opt.learning_rate * g
        return

    if len(opt.m) != len(params) or any(m.shape != p.shape for m, p in zip(opt.m, params)):
        raise ShapeError("optimizer moments are not congruent with the network")
    b1, b2 = opt.beta1, opt.beta2
    c1 = 1.0 - b1**opt.step
    c2 = 1.0 - b2**opt.step
    for p, g, m, v in zip(params, grads.params, opt.m, opt.v):
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * g * g
        p -= opt.learning_rate * (m / c1) / (np.sqrt(v / c2) + opt.eps)


def polyak_blend(target: Network, online: Network, tau: float) -> None:
    """target <- tau * online + (1 - tau) * target, in place."""
    if not 0.0 <= tau <= 1.0:
        raise ValueError("tau must lie in [0, 1]")
    if not target.same_architecture(online):
        raise ShapeError("target and online networks differ in architecture")
    for pt, po in zip(target.params(), online.params()):
        if tau == 1.0:
            pt[...] = po
        elif tau != 0.0:
            pt *= 1.0 - tau
            pt += tau * po


def serialize(net: Network) -> bytes:
    header = json.dumps(
        {
            "sizes": net.sizes,
            "activations": [l.activation for l in net.layers],
        },
        sort_keys=True,
    ).encode()
    chunks = [CHECKPOINT_MAGIC, struct.pack("<II", CHECKPOINT_VERSION, len(header)), header]
    for p in net.params():
        chunks.append(np.ascontiguousarray(p, dtype="<f8").tobytes())
    return b"".join(chunks)


def deserialize(data: bytes, expect_sizes=None) -> Network:
    """Inverse of :func:`serialize`; raises :class:`CheckpointError` on bad payloads."""
    data = bytes(data)
    n_magic = len(CHECKPOINT_MAGIC)
    if len(data) < n_magic + 8 or data[:n_magic] != CHECKPOINT_MAGIC:
        raise CheckpointError("not a network checkpoint (bad magic or truncated header)")
    version, hlen = struct.unpack_from("<II", data, n_magic)
    if version != CHECKPOINT_VERSION:
        raise CheckpointError(
            f"incompatible checkpoint format version {version} (supported: {CHECKPOINT_VERSION})"
        )
    start = n_magic + 8
    if len(data) < start + hlen:
        raise CheckpointError("truncated checkpoint header")
    try:
        header = json.loads(data[start : start + hlen].decode())
        sizes = [int(s) for s in header["sizes"]]
        acts = list(header["activations"])
    except (ValueError, KeyError, TypeError) as exc:
        raise CheckpointError(f"malformed checkpoint header: {exc}") from exc
    if len(acts) != len(sizes) - 1:
        raise CheckpointError("activation count does not match layer count")
    if expect_sizes is not None and list(expect_sizes) != sizes:
        raise CheckpointError(f"architecture mismatch: checkpoint {sizes}, expected {list(expect_sizes)}")

    offset = start + hlen
    need = sum(o * i + o for i, o in zip(sizes[:-1], sizes[1:])) * 8
    if len(data) - offset != need:
        raise CheckpointError(f"checkpoint payload has {len(data) - offset} bytes, expected {need}")
    layers = []
    for (n_in, n_out), act in zip(zip(sizes[:-1], sizes[1:]), acts):
        w = np.frombuffer(data, dtype="<f8", count=n_in * n_out, offset=offset).reshape(n_out, n_in)
        offset += w.nbytes
        b = np.frombuffer(data, dtype="<f8", count=n_out, offset=offset)
        offset += b.nbytes
        layers.append(Layer(w.astype(np.float64), b.astype(np.float64), act))
    try:
        return Network(layers)
    except ValueError as exc:
        raise CheckpointError(str(exc)) from exc
