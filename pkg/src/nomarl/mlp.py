"""Dense multilayer perceptron with analytic backprop and a decaying-beta1 Adam."""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Literal

import numpy as np

Activation = Literal["relu", "sigmoid", "tanh"]
ACTIVATIONS: tuple[str, ...] = ("relu", "sigmoid", "tanh")


def _act(name: str, z: np.ndarray) -> np.ndarray:
    if name == "relu":
        return np.maximum(z, 0.0)
    if name == "sigmoid":
        return 0.5 * (1.0 + np.tanh(0.5 * z))  # overflow-free logistic
    return np.tanh(z)


def _act_grad(name: str, z: np.ndarray, a: np.ndarray) -> np.ndarray:
    if name == "relu":
        return (z > 0).astype(z.dtype)  # subgradient 0 at 0
    if name == "sigmoid":
        return a * (1.0 - a)
    return 1.0 - a * a


class Mlp:
    """Affine layers with a hidden activation and a linear output layer.

    ``weights[l]`` has shape ``(widths[l+1], widths[l])``. Initialisation is
    Glorot-uniform with zero biases, drawn from ``rng``.
    """

    def __init__(self, layer_widths, activation: Activation = "relu", rng: np.random.Generator | None = None):
        widths = [int(w) for w in layer_widths]
        if len(widths) < 2 or min(widths) < 1:
            raise ValueError(f"bad layer widths {layer_widths}")
        if activation not in ACTIVATIONS:
            raise ValueError(f"unknown activation {activation!r}; choose from {ACTIVATIONS}")
        self.layer_widths = widths
        self.activation = activation
        rng = rng if rng is not None else np.random.default_rng(0)
        self.weights: list[np.ndarray] = []
        self.biases: list[np.ndarray] = []
        for fan_in, fan_out in zip(widths[:-1], widths[1:]):
            limit = np.sqrt(6.0 / (fan_in + fan_out))
            self.weights.append(rng.uniform(-limit, limit, size=(fan_out, fan_in)))
            self.biases.append(np.zeros(fan_out))

    @property
    def n_layers(self) -> int:
        return len(self.weights)

    def params(self) -> list[np.ndarray]:
        """Parameters in layer order: W1, b1, W2, b2, ..."""
        out = []
        for w, b in zip(self.weights, self.biases):
            out += [w, b]
        return out

    def n_params(self) -> int:
        return sum(p.size for p in self.params())

    def copy(self) -> Mlp:
        twin = Mlp.__new__(Mlp)
        twin.layer_widths = list(self.layer_widths)
        twin.activation = self.activation
        twin.weights = [w.copy() for w in self.weights]
        twin.biases = [b.copy() for b in self.biases]
        return twin

    def load_from(self, other: Mlp) -> None:
        """Overwrite parameters in place with a bit-exact copy of ``other``'s."""
        if other.layer_widths != self.layer_widths:
            raise ValueError("architectures differ")
        for dst, src in zip(self.params(), other.params()):
            dst[...] = src

    def __call__(self, x) -> np.ndarray:
        return forward(self, x)


def _as_batch(net: Mlp, x) -> tuple[np.ndarray, bool]:
    x = np.asarray(x, dtype=np.float64)
    single = x.ndim == 1
    xb = x[None, :] if single else x
    if xb.ndim != 2 or xb.shape[1] != net.layer_widths[0]:
        raise ValueError(f"input shape {x.shape} does not match input width {net.layer_widths[0]}")
    return xb, single


def _forward_cache(net: Mlp, xb: np.ndarray):
    zs, acts = [], [xb]
    a = xb
    last = net.n_layers - 1
    for l, (w, b) in enumerate(zip(net.weights, net.biases)):
        z = a @ w.T + b
        zs.append(z)
        a = z if l == last else _act(net.activation, z)
        acts.append(a)
    return zs, acts


def forward(net: Mlp, x) -> np.ndarray:
    """Output for one input vector or a batch of row vectors."""
    xb, single = _as_batch(net, x)
    out = _forward_cache(net, xb)[1][-1]
    return out[0] if single else out


def hidden_activations(net: Mlp, x) -> list[np.ndarray]:
    xb, _ = _as_batch(net, x)
    return _forward_cache(net, xb)[1][1:-1]


def mse_loss(pred, target, mask=None) -> float:
    """Squared error summed over (masked) components, averaged over batch rows.

    With one taken-action component per row this is the mean squared TD error.
    """
    pred = np.atleast_1d(np.asarray(pred, dtype=np.float64))
    target = np.atleast_1d(np.asarray(target, dtype=np.float64))
    if pred.shape != target.shape:
        raise ValueError(f"shape mismatch {pred.shape} vs {target.shape}")
    diff = pred - target
    if mask is not None:
        diff = diff * mask
    if diff.ndim == 1:
        return float(np.mean(diff**2))
    return float(np.sum(diff**2) / diff.shape[0])


def backward(net: Mlp, x, target, mask=None) -> tuple[float, list[np.ndarray]]:
    """Loss and its gradients, in :meth:`Mlp.params` order."""
    xb, _ = _as_batch(net, x)
    target = np.asarray(target, dtype=np.float64).reshape(xb.shape[0], -1)
    zs, acts = _forward_cache(net, xb)
    diff = acts[-1] - target
    if mask is not None:
        diff = diff * np.asarray(mask, dtype=np.float64).reshape(diff.shape)
    n = xb.shape[0]
    loss = float(np.sum(diff**2) / n)
    delta = 2.0 * diff / n
    grads: list[np.ndarray] = [None] * (2 * net.n_layers)  # type: ignore[list-item]
    for l in range(net.n_layers - 1, -1, -1):
        grads[2 * l] = delta.T @ acts[l]
        grads[2 * l + 1] = delta.sum(axis=0)
        if l > 0:
            delta = (delta @ net.weights[l]) * _act_grad(net.activation, zs[l - 1], acts[l])
    return loss, grads


@dataclass
class AdamState:
    """Adam with step size ``lr / sqrt(t)`` and first-moment decay ``beta1 * lam**(t-1)``."""

    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    lambda_decay: float = 0.5
    eps: float = 1e-8
    t: int = 0
    m: list[np.ndarray] = field(default_factory=list)
    v: list[np.ndarray] = field(default_factory=list)

    def __post_init__(self):
        if not (0.0 <= self.beta1 < 1.0 and 0.0 <= self.beta2 < 1.0):
            raise ValueError("beta1 and beta2 must lie in [0, 1)")
        if self.beta2 > 0 and self.beta1**2 / np.sqrt(self.beta2) >= 1.0:
            raise ValueError("need beta1^2 / sqrt(beta2) < 1")
        if not 0.0 <= self.lambda_decay <= 1.0:
            raise ValueError("lambda_decay must lie in [0, 1]")


def adam_step(params: list[np.ndarray], grads: list[np.ndarray], state: AdamState) -> list[np.ndarray]:
    """Update ``params`` in place and return them."""
    if len(params) != len(grads):
        raise ValueError("params and grads differ in length")
    if not state.m:
        state.m = [np.zeros_like(p) for p in params]
        state.v = [np.zeros_like(p) for p in params]
    state.t += 1
    t = state.t
    b1t = state.beta1 * state.lambda_decay ** (t - 1)
    lr_t = state.lr / np.sqrt(t)
    c1 = 1.0 - state.beta1**t
    c2 = 1.0 - state.beta2**t
    for p, g, m, v in zip(params, grads, state.m, state.v):
        if p.shape != g.shape:
            raise ValueError(f"gradient shape {g.shape} != parameter shape {p.shape}")
        m *= b1t
        m += (1.0 - b1t) * g
        v *= state.beta2
        v += (1.0 - state.beta2) * g * g
        p -= lr_t * (m / c1) / (np.sqrt(v / c2) + state.eps)
    return params


@dataclass
class SparsityReport:
    nonzero_count: int
    max_weight_norm: float
    output_bound: float
    total_params: int
    zero_activation_fraction: float


def sparsity_report(net: Mlp, probes, tol: float = 1e-12) -> SparsityReport:
    """Parameter and activation sparsity on ``probes``; diagnostic only."""
    params = net.params()
    kappa = int(sum(np.count_nonzero(np.abs(p) > tol) for p in params))
    max_w = float(max(np.abs(p).max() for p in params))
    xb, _ = _as_batch(net, probes)
    _, acts = _forward_cache(net, xb)
    hidden = acts[1:-1]
    n_act = sum(h.size for h in hidden)
    zeros = sum(int(np.count_nonzero(np.abs(h) <= tol)) for h in hidden)
    return SparsityReport(
        nonzero_count=kappa,
        max_weight_norm=max_w,
        output_bound=float(np.abs(acts[-1]).max()) if acts[-1].size else 0.0,
        total_params=net.n_params(),
        zero_activation_fraction=zeros / n_act if n_act else 0.0,
    )


# Checkpoint layout, little-endian:
#   8s  magic b"NOMAMLP\x01" (last byte = format version)
#   I   activation code (index into ACTIVATIONS), I  number of widths L
#   L x I  layer widths
#   then every parameter as f8, layer order W1, b1, W2, b2, ..., row-major
MLP_MAGIC = b"NOMAMLP\x01"
_MLP_HEAD = struct.Struct("<8s2I")


def mlp_to_bytes(net: Mlp) -> bytes:
    head = _MLP_HEAD.pack(MLP_MAGIC, ACTIVATIONS.index(net.activation), len(net.layer_widths))
    widths = struct.pack(f"<{len(net.layer_widths)}I", *net.layer_widths)
    body = b"".join(p.astype("<f8").tobytes(order="C") for p in net.params())
    return head + widths + body


def mlp_from_bytes(raw: bytes, offset: int = 0) -> tuple[Mlp, int]:
    """Decode a network starting at ``offset``; returns it and the end offset."""
    magic, act, n_w = _MLP_HEAD.unpack_from(raw, offset)
    if magic != MLP_MAGIC:
        raise ValueError("not an MLP checkpoint")
    offset += _MLP_HEAD.size
    widths = list(struct.unpack_from(f"<{n_w}I", raw, offset))
    offset += 4 * n_w
    net = Mlp(widths, ACTIVATIONS[act], np.random.default_rng(0))
    for p in net.params():
        nbytes = 8 * p.size
        if offset + nbytes > len(raw):
            raise ValueError("truncated MLP checkpoint")
        p[...] = np.frombuffer(raw, dtype="<f8", count=p.size, offset=offset).reshape(p.shape)
        offset += nbytes
    return net, offset


def save_mlp(path: str | Path, net: Mlp) -> None:
    Path(path).write_bytes(mlp_to_bytes(net))


def load_mlp(path: str | Path) -> Mlp:
    raw = Path(path).read_bytes()
    net, end = mlp_from_bytes(raw)
    if end != len(raw):
        raise ValueError(f"{path}: trailing bytes after parameters")
    return net
