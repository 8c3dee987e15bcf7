"""Sparse MLP with per-neuron SReLU activations.

Weights are stored one value per edge, aligned with the layer's edge list,
so a layer's weight matrix is the CSC matrix ``(in_width x out_width)``
built from ``(weights, sources, indptr)`` without any reordering.
"""

from __future__ import annotations

import io
from dataclasses import dataclass, replace

import numpy as np
import scipy.sparse as sp

from .topology import LayerTopology, NetworkTopology, atomic_write, make_rng

# rows of a layer's SReLU parameter array
T_LEFT, A_LEFT, T_RIGHT, A_RIGHT = range(4)
SRELU_INIT = (0.0, 0.0, 1.0, 1.0)

# above this fraction of filled positions the weight gradient is taken from a dense product
_DENSE_GRAD_THRESHOLD = 0.125


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 0.01
    momentum: float = 0.9
    weight_decay: float = 1e-6
    batch_size: int = 128
    epochs: int = 200
    seed: int = 0
    nesterov: bool = True
    init_scheme: str = "sparse"

    def __post_init__(self):
        if not self.learning_rate > 0:
            raise ValueError(f"learning_rate must be positive, got {self.learning_rate}")
        if not 0 <= self.momentum < 1:
            raise ValueError(f"momentum must lie in [0, 1), got {self.momentum}")
        if self.weight_decay < 0:
            raise ValueError("weight_decay must be non-negative")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.epochs < 0:
            raise ValueError("epochs must be >= 0")
        if self.init_scheme not in INIT_SCHEMES:
            raise ValueError(f"unknown init scheme {self.init_scheme!r}")


@dataclass
class SparseNet:
    """Topology plus parameters.

    ``weights[k]`` has one entry per edge of layer ``k``; ``biases[k]`` one
    per neuron of layer ``k+1``; ``srelu[k]`` is a ``(4, n_{k+1})`` array of
    ``(t_left, a_left, t_right, a_right)`` for hidden layer ``k+1``.
    """

    topology: NetworkTopology
    weights: list[np.ndarray]
    biases: list[np.ndarray]
    srelu: list[np.ndarray]

    def __post_init__(self):
        t = self.topology
        if len(self.weights) != t.num_layers or len(self.biases) != t.num_layers:
            raise ValueError("need one weight and bias array per layer")
        if len(self.srelu) != t.num_layers - 1:
            raise ValueError("need one SReLU parameter array per hidden layer")
        for k, layer in enumerate(t.layers):
            if self.weights[k].shape != (layer.num_edges,):
                raise ValueError(f"layer {k}: {self.weights[k].shape[0]} weights for {layer.num_edges} edges")
            if self.biases[k].shape != (layer.out_width,):
                raise ValueError(f"layer {k}: bias shape {self.biases[k].shape}")
        for k, params in enumerate(self.srelu):
            if params.shape != (4, t.layer_widths[k + 1]):
                raise ValueError(f"hidden layer {k + 1}: SReLU shape {params.shape}")

    def copy(self) -> SparseNet:
        return SparseNet(
            self.topology,
            [w.copy() for w in self.weights],
            [b.copy() for b in self.biases],
            [s.copy() for s in self.srelu],
        )

    def weight_matrix(self, k: int) -> sp.csc_matrix:
        layer = self.topology.layers[k]
        return sp.csc_matrix((self.weights[k], layer.sources, layer.indptr), shape=(layer.in_width, layer.out_width))

    def dense_weights(self, k: int) -> np.ndarray:
        layer = self.topology.layers[k]
        w = np.zeros((layer.in_width, layer.out_width))
        w[layer.sources, layer.targets] = self.weights[k]
        return w

    def num_parameters(self) -> int:
        return sum(w.size for w in self.weights) + sum(b.size for b in self.biases) + sum(s.size for s in self.srelu)


INIT_SCHEMES = ("sparse", "dense")


def init_bound(layer: LayerTopology, scheme: str = "sparse") -> float:
    """Glorot-uniform bound ``sqrt(6 / (fan_in + fan_out))``.

    ``dense`` uses the layer widths as fans; ``sparse`` uses the mean in- and
    out-degree of the existing edges, which equals ``dense`` for a full layer.
    """
    if scheme == "dense":
        fan_in, fan_out = layer.in_width, layer.out_width
    elif scheme == "sparse":
        e = max(layer.num_edges, 1)
        fan_in, fan_out = e / layer.out_width, e / layer.in_width
    else:
        raise ValueError(f"unknown init scheme {scheme!r}")
    return float(np.sqrt(6.0 / (fan_in + fan_out)))


def init_layer_weights(layer: LayerTopology, n: int, rng: np.random.Generator, scheme: str = "sparse") -> np.ndarray:
    bound = init_bound(layer, scheme)
    return rng.uniform(-bound, bound, size=n)


def init_weights(t: NetworkTopology, seed: int, scheme: str = "sparse") -> SparseNet:
    """Uniform Glorot weights on the support, zero biases, SReLU at (0, 0, 1, 1)."""
    weights = [
        init_layer_weights(layer, layer.num_edges, make_rng(seed, 2, k), scheme) for k, layer in enumerate(t.layers)
    ]
    biases = [np.zeros(layer.out_width) for layer in t.layers]
    srelu = [np.tile(np.array(SRELU_INIT)[:, None], (1, w)) for w in t.layer_widths[1:-1]]
    return SparseNet(t, weights, biases, srelu)


def _regions(x: np.ndarray, params: np.ndarray):
    t_l, t_r = params[T_LEFT], params[T_RIGHT]
    left = x < t_l
    right = (x > t_r) & ~left
    return left, right


def srelu(x, params) -> np.ndarray:
    """S-shaped ReLU: slope ``a_l`` below knot ``t_l``, identity between the
    knots, slope ``a_r`` above ``t_r``.

    ``params`` is ``(t_l, a_l, t_r, a_r)``, either scalars or per-neuron rows
    broadcasting against the last axis of ``x``.  If the knots cross, the
    left branch takes precedence.
    """
    x = np.asarray(x, dtype=np.float64)
    params = np.asarray(params, dtype=np.float64)
    t_l, a_l, t_r, a_r = params
    left, right = _regions(x, params)
    out = np.where(left, t_l + a_l * (x - t_l), x)
    return np.where(right, t_r + a_r * (x - t_r), out)


def srelu_backward(x: np.ndarray, params: np.ndarray, grad_out: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Gradients w.r.t. input and per-neuron parameters (summed over the batch).

    Exactly at a knot the identity branch applies, so parameter subgradients there are 0.
    """
    t_l, a_l, t_r, a_r = params
    left, right = _regions(x, params)
    slope = np.where(left, a_l, np.where(right, a_r, 1.0))
    g_left = np.where(left, grad_out, 0.0)
    g_right = np.where(right, grad_out, 0.0)
    dparams = np.stack(
        [
            (g_left * (1.0 - a_l)).sum(axis=0),
            (g_left * (x - t_l)).sum(axis=0),
            (g_right * (1.0 - a_r)).sum(axis=0),
            (g_right * (x - t_r)).sum(axis=0),
        ]
    )
    return grad_out * slope, dparams


@dataclass
class ForwardCache:
    inputs: list[np.ndarray]  # input to each layer (a^0 .. a^{L-1})
    preacts: list[np.ndarray]  # z^1 .. z^L
    logits: np.ndarray


def forward(net: SparseNet, batch: np.ndarray) -> ForwardCache:
    x = np.asarray(batch, dtype=np.float64)
    if x.ndim != 2 or x.shape[1] != net.topology.layer_widths[0]:
        raise ValueError(f"input of shape {x.shape} does not match input width {net.topology.layer_widths[0]}")
    inputs, preacts = [], []
    a = x
    last = net.topology.num_layers - 1
    for k in range(net.topology.num_layers):
        inputs.append(a)
        z = np.asarray(net.weight_matrix(k).T.dot(a.T).T) + net.biases[k]
        preacts.append(z)
        a = z if k == last else srelu(z, net.srelu[k])
    return ForwardCache(inputs, preacts, a)


def log_softmax(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max(axis=1, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))


def cross_entropy(logits: np.ndarray, labels: np.ndarray) -> float:
    labels = _check_labels(labels, logits.shape[1])
    return float(-log_softmax(logits)[np.arange(labels.size), labels].mean())


def predict(net: SparseNet, x: np.ndarray, batch_size: int = 2048) -> np.ndarray:
    return np.concatenate([forward(net, x[i : i + batch_size]).logits.argmax(axis=1) for i in range(0, len(x), batch_size)])


def evaluate(net: SparseNet, x: np.ndarray, y: np.ndarray, batch_size: int = 2048) -> tuple[float, float]:
    """Mean cross-entropy and accuracy over a dataset."""
    total_loss, correct = 0.0, 0
    for i in range(0, len(x), batch_size):
        logits = forward(net, x[i : i + batch_size]).logits
        yb = y[i : i + batch_size]
        total_loss += -log_softmax(logits)[np.arange(yb.size), yb].sum()
        correct += int((logits.argmax(axis=1) == yb).sum())
    return total_loss / len(x), correct / len(x)


def _check_labels(labels, num_classes: int) -> np.ndarray:
    labels = np.asarray(labels, dtype=np.int64)
    if labels.size and (labels.min() < 0 or labels.max() >= num_classes):
        raise ValueError(f"labels must lie in [0, {num_classes})")
    return labels


@dataclass
class Gradients:
    weights: list[np.ndarray]
    biases: list[np.ndarray]
    srelu: list[np.ndarray]


def _edge_grad(layer: LayerTopology, a: np.ndarray, dz: np.ndarray) -> np.ndarray:
    """sum_b a[b, src] * dz[b, tgt] for every edge."""
    if layer.num_edges > _DENSE_GRAD_THRESHOLD * layer.capacity:
        return (a.T @ dz)[layer.sources, layer.targets]
    return np.einsum("be,be->e", a[:, layer.sources], dz[:, layer.targets])


def backward(net: SparseNet, cache: ForwardCache, labels) -> tuple[float, Gradients]:
    """Mean cross-entropy of the batch and its exact gradients on the sparse support."""
    logits = cache.logits
    n = logits.shape[0]
    labels = _check_labels(labels, logits.shape[1])
    if labels.shape != (n,):
        raise ValueError("need one label per batch row")
    logp = log_softmax(logits)
    loss = float(-logp[np.arange(n), labels].mean())
    dz = np.exp(logp)
    dz[np.arange(n), labels] -= 1.0
    dz /= n

    L = net.topology.num_layers
    gw: list[np.ndarray] = [None] * L
    gb: list[np.ndarray] = [None] * L
    gs: list[np.ndarray] = [None] * (L - 1)
    for k in range(L - 1, -1, -1):
        layer = net.topology.layers[k]
        gw[k] = _edge_grad(layer, cache.inputs[k], dz)
        gb[k] = dz.sum(axis=0)
        if k == 0:
            break
        da = np.asarray(net.weight_matrix(k).dot(dz.T).T)
        dz, gs[k - 1] = srelu_backward(cache.preacts[k - 1], net.srelu[k - 1], da)
    return loss, Gradients(gw, gb, gs)


def loss_and_grad(net: SparseNet, x: np.ndarray, y) -> tuple[float, Gradients]:
    return backward(net, forward(net, x), y)


@dataclass
class Velocity:
    weights: list[np.ndarray]
    biases: list[np.ndarray]
    srelu: list[np.ndarray]

    @classmethod
    def zeros_like(cls, net: SparseNet) -> Velocity:
        return cls(
            [np.zeros_like(w) for w in net.weights],
            [np.zeros_like(b) for b in net.biases],
            [np.zeros_like(s) for s in net.srelu],
        )


def _nesterov(param, grad, vel, lr, mu, nesterov):
    vel = mu * vel + grad
    step = grad + mu * vel if nesterov else vel
    return param - lr * step, vel


def sgd_step(net: SparseNet, grads: Gradients, cfg: TrainConfig, velocity: Velocity | None = None) -> tuple[SparseNet, Velocity]:
    """One SGD step with (Nesterov) momentum; L2 decay on connection weights only.

    Per parameter: ``v <- mu*v + g``, ``p <- p - lr*(g + mu*v)``, where
    ``g`` includes ``weight_decay * w`` for weights.
    """
    if velocity is None:
        velocity = Velocity.zeros_like(net)
    groups = ("weights", "biases", "srelu")
    new_params, new_vel = {}, {}
    for name in groups:
        params, gs, vs = getattr(net, name), getattr(grads, name), getattr(velocity, name)
        if len(params) != len(gs) or len(params) != len(vs):
            raise ValueError(f"{name}: expected {len(params)} gradient arrays")
        outs_p, outs_v = [], []
        for p, g, v in zip(params, gs, vs):
            if p.shape != g.shape or p.shape != v.shape:
                raise ValueError(f"{name}: shape mismatch {p.shape} vs {g.shape}/{v.shape}")
            if name == "weights" and cfg.weight_decay:
                g = g + cfg.weight_decay * p
            p2, v2 = _nesterov(p, g, v, cfg.learning_rate, cfg.momentum, cfg.nesterov)
            outs_p.append(p2)
            outs_v.append(v2)
        new_params[name], new_vel[name] = outs_p, outs_v
    return replace(net, **new_params), Velocity(**new_vel)


def save_checkpoint(net: SparseNet, path) -> None:
    """Parameters as a versioned ``.npz``; the topology lives in a separate ``.topo`` file."""
    arrays = {"format_version": np.array(1), "edge_counts": np.array(net.topology.edge_counts())}
    for k in range(net.topology.num_layers):
        arrays[f"w{k}"] = net.weights[k]
        arrays[f"b{k}"] = net.biases[k]
    for k, s in enumerate(net.srelu):
        arrays[f"s{k}"] = s
    buf = io.BytesIO()
    np.savez(buf, **arrays)
    atomic_write(path, buf.getvalue())


def load_checkpoint(topology: NetworkTopology, path) -> SparseNet:
    with np.load(path) as data:
        if int(data["format_version"]) != 1:
            raise ValueError(f"unsupported checkpoint version {int(data['format_version'])}")
        if tuple(data["edge_counts"].tolist()) != topology.edge_counts():
            raise ValueError("checkpoint does not match topology edge counts")
        L = topology.num_layers
        return SparseNet(
            topology,
            [data[f"w{k}"] for k in range(L)],
            [data[f"b{k}"] for k in range(L)],
            [data[f"s{k}"] for k in range(L - 1)],
        )
