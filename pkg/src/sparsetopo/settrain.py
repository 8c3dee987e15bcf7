"""Sparse Evolutionary Training: per-epoch prune-and-regrow at constant density.

Also hosts the fixed-topology baseline (``Mode.FIXED``), topology snapshots
and the retrain protocol on saved snapshots.
"""

from __future__ import annotations

import csv
import io
import json
import logging
import math
from dataclasses import asdict, dataclass, field
from enum import Enum
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from . import topology as topo
from .network import (
    SparseNet,
    TrainConfig,
    Velocity,
    evaluate,
    init_layer_weights,
    init_weights,
    load_checkpoint,
    loss_and_grad,
    save_checkpoint,
    sgd_step,
)
from .topology import LayerTopology, NetworkTopology, make_rng, sample_empty_positions

log = logging.getLogger(__name__)


class _CaseInsensitive(str, Enum):
    @classmethod
    def _missing_(cls, value):
        if isinstance(value, str):
            for member in cls:
                if member.value == value.upper().replace("-", "_"):
                    return member
        return None


class Mode(_CaseInsensitive):
    SET = "SET"
    FIXED = "FIXED"


class RetrainMode(_CaseInsensitive):
    RANDOM_REINIT = "RANDOM_REINIT"
    CONTINUE = "CONTINUE"


class TrainingError(RuntimeError):
    pass


REGROW_INITS = ("uniform", "dense", "zero")


@dataclass(frozen=True)
class SetConfig:
    prune_rate: float = 0.2
    snapshot_every: int = 10
    mode: Mode = Mode.SET
    # "magnitude": smallest |w|; "signed": smallest positive and largest negative separately
    prune_criterion: str = "magnitude"
    # "uniform": same distribution as init_weights; "dense": Glorot bound from the
    # layer widths, i.e. small weights; "zero": regrown edges start at 0
    regrow_init: str = "dense"

    def __post_init__(self):
        object.__setattr__(self, "mode", Mode(self.mode))
        if not 0 <= self.prune_rate < 1:
            raise ValueError(f"prune_rate must lie in [0, 1), got {self.prune_rate}")
        if self.snapshot_every < 1:
            raise ValueError("snapshot_every must be >= 1")
        if self.prune_criterion not in ("magnitude", "signed"):
            raise ValueError(f"unknown prune criterion {self.prune_criterion!r}")
        if self.regrow_init not in REGROW_INITS:
            raise ValueError(f"unknown regrow init {self.regrow_init!r}")


def _prune_indices(w: np.ndarray, zeta: float, criterion: str) -> np.ndarray:
    if criterion == "magnitude":
        k = math.floor(zeta * w.size)
        return np.argsort(np.abs(w), kind="stable")[:k]
    pos = np.flatnonzero(w > 0)
    neg = np.flatnonzero(w < 0)
    k_pos = math.floor(zeta * pos.size)
    k_neg = math.floor(zeta * neg.size)
    drop_pos = pos[np.argsort(w[pos], kind="stable")[:k_pos]]
    drop_neg = neg[np.argsort(-w[neg], kind="stable")[:k_neg]]
    return np.concatenate([drop_pos, drop_neg])


def prune_and_regrow(
    net: SparseNet,
    zeta: float,
    seed: int,
    velocity: Velocity | None = None,
    *,
    criterion: str = "magnitude",
    regrow_init: str = "dense",
    init_scheme: str = "sparse",
) -> tuple[SparseNet, Velocity | None]:
    """Per layer, drop the ``floor(zeta * edges)`` smallest-magnitude edges and
    add as many new edges at uniformly random positions that were empty.

    Regrown weights are drawn per ``regrow_init`` (see ``SetConfig``); their momentum
    starts at zero and pruned momentum is discarded.  Biases and SReLU
    parameters are untouched.
    """
    if not 0 <= zeta < 1:
        raise ValueError(f"zeta must lie in [0, 1), got {zeta}")
    layers, weights = [], []
    vel_w = None if velocity is None else []
    for k, layer in enumerate(net.topology.layers):
        w = net.weights[k]
        if layer.num_edges == 0:
            raise topo.TopologyError(f"layer {k} has no edges")
        drop = _prune_indices(w, zeta, criterion)
        n = drop.size
        if n == 0:
            layers.append(layer)
            weights.append(w)
            if vel_w is not None:
                vel_w.append(velocity.weights[k])
            continue
        rng = make_rng(seed, 3, k)
        try:
            added = sample_empty_positions(layer.capacity, layer.linear, n, rng)
        except topo.RegrowthError as exc:
            raise topo.RegrowthError(f"layer {k}: {exc}") from exc
        keep = np.ones(layer.num_edges, dtype=bool)
        keep[drop] = False
        if regrow_init == "zero":
            new_w = np.zeros(n)
        else:
            new_w = init_layer_weights(layer, n, rng, "dense" if regrow_init == "dense" else init_scheme)
        lin = np.concatenate([layer.linear[keep], added])
        order = np.argsort(lin, kind="stable")
        layers.append(LayerTopology.from_linear(layer.in_width, layer.out_width, lin))
        weights.append(np.concatenate([w[keep], new_w])[order])
        if vel_w is not None:
            vel_w.append(np.concatenate([velocity.weights[k][keep], np.zeros(n)])[order])
    new_net = SparseNet(net.topology.with_layers(layers), weights, net.biases, net.srelu)
    new_vel = None if velocity is None else Velocity(vel_w, velocity.biases, velocity.srelu)
    return new_net, new_vel


@dataclass
class Snapshot:
    epoch: int
    topology: NetworkTopology
    net: SparseNet | None = None
    checkpoint: str | None = None


@dataclass
class EpochMetrics:
    epoch: int
    train_loss: float
    val_loss: float
    val_acc: float


@dataclass
class EvolutionTrace:
    snapshots: list[Snapshot] = field(default_factory=list)
    metrics: list[EpochMetrics] = field(default_factory=list)
    best_epoch: int = 0
    best_val_acc: float = float("nan")
    test_acc: float = float("nan")

    def topologies(self) -> dict[int, NetworkTopology]:
        return {s.epoch: s.topology for s in self.snapshots}

    def metrics_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(["epoch", "train_loss", "val_loss", "val_acc"])
        for m in self.metrics:
            writer.writerow([m.epoch, f"{m.train_loss:.6f}", f"{m.val_loss:.6f}", f"{m.val_acc:.6f}"])
        return buf.getvalue()


def snapshot_epochs(epochs: int, every: int, extra: Sequence[int] = ()) -> list[int]:
    marks = set(range(0, epochs + 1, every)) | {0, epochs} | {e for e in extra if 0 <= e <= epochs}
    return sorted(marks)


def iterate_minibatches(n: int, batch_size: int, rng: np.random.Generator):
    order = rng.permutation(n)
    for i in range(0, n, batch_size):
        yield order[i : i + batch_size]


def train(
    net: SparseNet,
    data,
    cfg: TrainConfig,
    set_cfg: SetConfig,
    *,
    trace_dir: str | Path | None = None,
    keep_snapshot_nets: bool = True,
    extra_snapshots: Sequence[int] = (),
    augment: Callable | None = None,
    on_epoch: Callable[[int, SparseNet], None] | None = None,
) -> tuple[SparseNet, EvolutionTrace]:
    """Mini-batch SGD for ``cfg.epochs`` epochs, rewiring after each epoch in SET mode.

    ``data`` is a :class:`sparsetopo.data.Dataset`-like object.  Returns the
    net with the best validation accuracy (epoch 0 included) and the trace;
    ``trace.test_acc`` is measured on that net.
    """
    if len(data.x_train) == 0 or len(data.x_val) == 0:
        raise TrainingError("training and validation partitions must be non-empty")
    if data.x_train.shape[1] != net.topology.layer_widths[0]:
        raise TrainingError(
            f"data has {data.x_train.shape[1]} features, network expects {net.topology.layer_widths[0]}"
        )
    epochs = cfg.epochs
    marks = set(snapshot_epochs(epochs, set_cfg.snapshot_every, extra_snapshots))
    trace = EvolutionTrace()
    trace_dir = None if trace_dir is None else Path(trace_dir)
    shuffle_rng = make_rng(cfg.seed, 4)
    aug_seed = make_rng(cfg.seed, 5)
    counts = net.topology.edge_counts()

    def record(epoch: int, current: SparseNet):
        ref = None
        if trace_dir is not None:
            snap_dir = trace_dir / "snapshots"
            topo.save(current.topology, snap_dir / f"epoch_{epoch}.topo")
            ref = str(Path("snapshots") / f"epoch_{epoch}.ckpt")
            save_checkpoint(current, trace_dir / ref)
        trace.snapshots.append(Snapshot(epoch, current.topology, current.copy() if keep_snapshot_nets else None, ref))

    val_loss, val_acc = evaluate(net, data.x_val, data.y_val)
    trace.metrics.append(EpochMetrics(0, float("nan"), val_loss, val_acc))
    best, trace.best_epoch, trace.best_val_acc = net.copy(), 0, val_acc
    record(0, net)

    velocity = Velocity.zeros_like(net)
    for epoch in range(1, epochs + 1):
        losses = []
        for idx in iterate_minibatches(len(data.x_train), cfg.batch_size, shuffle_rng):
            xb = data.x_train[idx]
            if augment is not None:
                xb = augment(xb, int(aug_seed.integers(2**63)))
            loss, grads = loss_and_grad(net, xb, data.y_train[idx])
            if not math.isfinite(loss):
                raise TrainingError(f"non-finite loss at epoch {epoch}")
            losses.append(loss * len(idx))
            net, velocity = sgd_step(net, grads, cfg, velocity)
        if set_cfg.mode is Mode.SET:
            net, velocity = prune_and_regrow(
                net,
                set_cfg.prune_rate,
                seed=int(make_rng(cfg.seed, 6, epoch).integers(2**63)),
                velocity=velocity,
                criterion=set_cfg.prune_criterion,
                regrow_init=set_cfg.regrow_init,
                init_scheme=cfg.init_scheme,
            )
            if net.topology.edge_counts() != counts:
                raise TrainingError("edge counts drifted during rewiring")
        val_loss, val_acc = evaluate(net, data.x_val, data.y_val)
        train_loss = float(np.sum(losses) / len(data.x_train))
        trace.metrics.append(EpochMetrics(epoch, train_loss, val_loss, val_acc))
        log.info("epoch %d train_loss %.4f val_loss %.4f val_acc %.4f", epoch, train_loss, val_loss, val_acc)
        if val_acc > trace.best_val_acc:
            best, trace.best_epoch, trace.best_val_acc = net.copy(), epoch, val_acc
        if epoch in marks:
            record(epoch, net)
        if on_epoch is not None:
            on_epoch(epoch, net)

    trace.test_acc = evaluate(best, data.x_test, data.y_test)[1]
    if trace_dir is not None:
        topo.atomic_write(trace_dir / "metrics.csv", trace.metrics_csv())
    return best, trace


def write_run_json(trace_dir: str | Path, payload: dict) -> None:
    topo.atomic_write(Path(trace_dir) / "run.json", json.dumps(payload, indent=2, sort_keys=True, default=_jsonable) + "\n")


def _jsonable(obj):
    if isinstance(obj, Enum):
        return obj.value
    if isinstance(obj, (np.integer, np.floating)):
        return obj.item()
    raise TypeError(f"not JSON serializable: {type(obj)}")


def config_dict(cfg: TrainConfig, set_cfg: SetConfig) -> dict:
    d = {"train": asdict(cfg), "set": asdict(set_cfg)}
    d["set"]["mode"] = set_cfg.mode.value
    return d


def load_snapshot(trace_dir: str | Path, epoch: int) -> Snapshot:
    trace_dir = Path(trace_dir)
    topo_path = trace_dir / "snapshots" / f"epoch_{epoch}.topo"
    ckpt_path = trace_dir / "snapshots" / f"epoch_{epoch}.ckpt"
    if not topo_path.exists():
        raise FileNotFoundError(f"no snapshot for epoch {epoch} in {trace_dir}")
    t = topo.load(topo_path)
    net = load_checkpoint(t, ckpt_path) if ckpt_path.exists() else None
    return Snapshot(epoch, t, net, str(ckpt_path) if net is not None else None)


def retrain(
    snapshot: Snapshot | SparseNet | NetworkTopology,
    mode: RetrainMode,
    data,
    cfg: TrainConfig,
    **train_kwargs,
) -> float:
    """Train a saved topology further with rewiring off; return best-validation test accuracy.

    ``RANDOM_REINIT`` starts from fresh weights drawn with ``cfg.seed``;
    ``CONTINUE`` starts from the stored weights.
    """
    mode = RetrainMode(mode)
    if isinstance(snapshot, Snapshot):
        t, stored = snapshot.topology, snapshot.net
    elif isinstance(snapshot, SparseNet):
        t, stored = snapshot.topology, snapshot
    else:
        t, stored = snapshot, None
    if data.x_train.shape[1] != t.layer_widths[0]:
        raise TrainingError(f"snapshot input width {t.layer_widths[0]} does not match data")
    if mode is RetrainMode.CONTINUE:
        if stored is None:
            raise TrainingError("CONTINUE needs stored weights")
        start = stored.copy()
    else:
        start = init_weights(t, cfg.seed, cfg.init_scheme)
    set_cfg = SetConfig(mode=Mode.FIXED, snapshot_every=max(cfg.epochs, 1))
    _, trace = train(start, data, cfg, set_cfg, keep_snapshot_nets=False, **train_kwargs)
    return trace.test_acc
