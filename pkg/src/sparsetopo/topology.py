"""Sparse connectivity of layered networks.

A layer is stored as an edge list sorted by ``(target, source)``; the linear
position of an edge is ``target * in_width + source``.  Every stochastic
operation takes an explicit seed and uses numpy's PCG64 generator.
"""

from __future__ import annotations

import math
import os
import tempfile
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path
from typing import Sequence

import numpy as np

FORMAT_VERSION = 1
FORMAT_MAGIC = "sparsetopo-topology"


class TopologyError(ValueError):
    """Invalid topology construction or operation arguments."""


class RegrowthError(TopologyError):
    """Not enough empty positions left in a layer to place new edges."""


class TopologyParseError(ValueError):
    """Base class for topology file errors."""


class MalformedTopologyError(TopologyParseError):
    pass


class WidthMismatchError(TopologyParseError):
    pass


class DuplicateEdgeError(TopologyParseError):
    pass


def make_rng(seed: int, *stream: int) -> np.random.Generator:
    """Independent generator for ``(seed, *stream)``; streams never overlap."""
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence([int(seed), *map(int, stream)])))


@dataclass(frozen=True, eq=False)
class NeuronId:
    layer_index: int
    position: int

    def __post_init__(self):
        if self.layer_index < 0 or self.position < 0:
            raise TopologyError("neuron indices must be non-negative")

    def __eq__(self, other):
        return isinstance(other, NeuronId) and (self.layer_index, self.position) == (
            other.layer_index,
            other.position,
        )

    def __hash__(self):
        return hash((self.layer_index, self.position))


@dataclass(frozen=True, eq=False)
class LayerTopology:
    """Bipartite connectivity between a layer of ``in_width`` and one of ``out_width`` neurons.

    ``sources`` and ``targets`` are read-only int64 arrays of equal length,
    sorted by ``(target, source)`` with no duplicates.
    """

    in_width: int
    out_width: int
    sources: np.ndarray
    targets: np.ndarray

    def __post_init__(self):
        if self.in_width <= 0 or self.out_width <= 0:
            raise TopologyError(f"layer widths must be positive, got {self.in_width}x{self.out_width}")
        src = np.asarray(self.sources, dtype=np.int64).reshape(-1)
        tgt = np.asarray(self.targets, dtype=np.int64).reshape(-1)
        if src.shape != tgt.shape:
            raise TopologyError("sources and targets differ in length")
        if src.size:
            if src.min() < 0 or src.max() >= self.in_width:
                raise TopologyError(f"edge source outside [0, {self.in_width})")
            if tgt.min() < 0 or tgt.max() >= self.out_width:
                raise TopologyError(f"edge target outside [0, {self.out_width})")
            lin = tgt * self.in_width + src
            if np.any(np.diff(lin) <= 0):
                raise TopologyError("edges must be sorted by (target, source) without duplicates")
        src.flags.writeable = False
        tgt.flags.writeable = False
        object.__setattr__(self, "sources", src)
        object.__setattr__(self, "targets", tgt)

    @classmethod
    def from_edges(cls, in_width: int, out_width: int, edges) -> LayerTopology:
        """Build from any iterable of ``(source, target)`` pairs; duplicates are rejected."""
        arr = np.asarray(list(edges) if not isinstance(edges, np.ndarray) else edges, dtype=np.int64)
        arr = arr.reshape(-1, 2)
        if arr.size and (arr.min() < 0 or arr[:, 0].max() >= in_width or arr[:, 1].max() >= out_width):
            raise TopologyError("edge endpoint out of range")
        lin = arr[:, 1] * in_width + arr[:, 0]
        if np.unique(lin).size != lin.size:
            raise TopologyError("duplicate edges")
        return cls.from_linear(in_width, out_width, lin)

    @classmethod
    def from_linear(cls, in_width: int, out_width: int, linear: np.ndarray) -> LayerTopology:
        lin = np.sort(np.asarray(linear, dtype=np.int64))
        return cls(in_width, out_width, lin % in_width, lin // in_width)

    @classmethod
    def dense(cls, in_width: int, out_width: int) -> LayerTopology:
        return cls.from_linear(in_width, out_width, np.arange(in_width * out_width))

    @property
    def num_edges(self) -> int:
        return int(self.sources.size)

    @property
    def capacity(self) -> int:
        return self.in_width * self.out_width

    @cached_property
    def linear(self) -> np.ndarray:
        lin = self.targets * self.in_width + self.sources
        lin.flags.writeable = False
        return lin

    @cached_property
    def indptr(self) -> np.ndarray:
        """Offsets of each target's run in the edge list (CSC pointer of the in x out matrix)."""
        counts = np.bincount(self.targets, minlength=self.out_width)
        ptr = np.zeros(self.out_width + 1, dtype=np.int64)
        np.cumsum(counts, out=ptr[1:])
        return ptr

    def edges(self) -> np.ndarray:
        return np.stack([self.sources, self.targets], axis=1)

    def edge_set(self) -> set[tuple[int, int]]:
        return set(zip(self.sources.tolist(), self.targets.tolist()))

    def input_set(self, target: int) -> np.ndarray:
        """Sorted sources feeding ``target``."""
        return self.sources[self.indptr[target] : self.indptr[target + 1]]

    def in_degree(self) -> np.ndarray:
        return np.diff(self.indptr)

    def density(self) -> float:
        return self.num_edges / self.capacity

    def relabel_sources(self, mapping: np.ndarray) -> LayerTopology:
        """Rename source ``s`` to ``mapping[s]``; ``mapping`` must be a permutation."""
        mapping = np.asarray(mapping, dtype=np.int64)
        return LayerTopology.from_linear(self.in_width, self.out_width, self.targets * self.in_width + mapping[self.sources])

    def relabel_targets(self, mapping: np.ndarray) -> LayerTopology:
        mapping = np.asarray(mapping, dtype=np.int64)
        return LayerTopology.from_linear(self.in_width, self.out_width, mapping[self.targets] * self.in_width + self.sources)

    def to_dense(self) -> np.ndarray:
        """Boolean ``in_width x out_width`` mask."""
        mask = np.zeros((self.in_width, self.out_width), dtype=bool)
        mask[self.sources, self.targets] = True
        return mask

    def __eq__(self, other):
        if not isinstance(other, LayerTopology):
            return NotImplemented
        return (
            self.in_width == other.in_width
            and self.out_width == other.out_width
            and np.array_equal(self.linear, other.linear)
        )

    def __hash__(self):
        return hash((self.in_width, self.out_width, self.linear.tobytes()))

    def __repr__(self):
        return f"LayerTopology({self.in_width}->{self.out_width}, edges={self.num_edges})"


@dataclass(frozen=True)
class NetworkTopology:
    """Layer widths ``[n0, ..., nL]`` and the ``L`` layers connecting them.

    ``epsilon`` and ``seed`` record provenance only and do not take part in equality.
    """

    layer_widths: tuple[int, ...]
    layers: tuple[LayerTopology, ...]
    epsilon: float | None = field(default=None, compare=False)
    seed: int | None = field(default=None, compare=False)

    def __post_init__(self):
        widths = tuple(int(w) for w in self.layer_widths)
        layers = tuple(self.layers)
        object.__setattr__(self, "layer_widths", widths)
        object.__setattr__(self, "layers", layers)
        if len(widths) < 2 or any(w <= 0 for w in widths):
            raise TopologyError(f"need at least two positive layer widths, got {widths}")
        if len(layers) != len(widths) - 1:
            raise TopologyError(f"{len(widths)} widths need {len(widths) - 1} layers, got {len(layers)}")
        for k, layer in enumerate(layers):
            if (layer.in_width, layer.out_width) != (widths[k], widths[k + 1]):
                raise TopologyError(
                    f"layer {k} is {layer.in_width}x{layer.out_width}, widths say {widths[k]}x{widths[k + 1]}"
                )

    @property
    def num_layers(self) -> int:
        return len(self.layers)

    def edge_counts(self) -> tuple[int, ...]:
        return tuple(layer.num_edges for layer in self.layers)

    def with_layers(self, layers: Sequence[LayerTopology]) -> NetworkTopology:
        return NetworkTopology(self.layer_widths, tuple(layers), self.epsilon, self.seed)

    def permute_hidden(self, perms: Sequence[np.ndarray]) -> NetworkTopology:
        """Relabel hidden layer ``h`` (1-based) neuron ``i`` as ``perms[h-1][i]``.

        The permuted network computes the same function family; only hidden
        neuron labels change.
        """
        if len(perms) != len(self.layer_widths) - 2:
            raise TopologyError("need one permutation per hidden layer")
        layers = list(self.layers)
        for h, perm in enumerate(perms, start=1):
            perm = np.asarray(perm, dtype=np.int64)
            if sorted(perm.tolist()) != list(range(self.layer_widths[h])):
                raise TopologyError(f"hidden layer {h} permutation is not a bijection")
            layers[h - 1] = layers[h - 1].relabel_targets(perm)
            layers[h] = layers[h].relabel_sources(perm)
        return self.with_layers(layers)


@dataclass(frozen=True)
class ErConfig:
    epsilon: float
    seed: int = 0

    def __post_init__(self):
        if not (self.epsilon > 0) or not math.isfinite(self.epsilon):
            raise TopologyError(f"epsilon must be positive, got {self.epsilon}")


def er_probability(epsilon: float, n_in: int, n_out: int) -> float:
    return min(epsilon * (n_out + n_in) / (n_out * n_in), 1.0)


def epsilon_for_density(density: float, n_in: int, n_out: int) -> float:
    """Epsilon giving connection probability ``density`` on an ``n_in x n_out`` layer."""
    if not 0 < density <= 1:
        raise TopologyError(f"density must lie in (0, 1], got {density}")
    return density * n_in * n_out / (n_in + n_out)


def er_init(widths: Sequence[int], cfg: ErConfig) -> NetworkTopology:
    """Erdos-Renyi sparse topology: every potential edge of layer ``k`` exists
    independently with probability ``min(eps * (n_k + n_{k-1}) / (n_k * n_{k-1}), 1)``."""
    widths = tuple(int(w) for w in widths)
    if len(widths) < 2 or any(w <= 0 for w in widths):
        raise TopologyError(f"need at least two positive widths, got {widths}")
    layers = []
    for k in range(len(widths) - 1):
        n_in, n_out = widths[k], widths[k + 1]
        p = er_probability(cfg.epsilon, n_in, n_out)
        rng = make_rng(cfg.seed, 0, k)
        if p >= 1.0:
            lin = np.arange(n_in * n_out, dtype=np.int64)
        else:
            lin = np.flatnonzero(rng.random(n_in * n_out) < p)
        layers.append(LayerTopology.from_linear(n_in, n_out, lin))
    return NetworkTopology(widths, tuple(layers), epsilon=cfg.epsilon, seed=cfg.seed)


def sample_empty_positions(
    capacity: int, occupied: np.ndarray, k: int, rng: np.random.Generator
) -> np.ndarray:
    """Draw ``k`` distinct linear positions uniformly from ``[0, capacity)`` minus ``occupied``."""
    occupied = np.unique(np.asarray(occupied, dtype=np.int64))
    free = capacity - occupied.size
    if k > free:
        raise RegrowthError(f"need {k} empty positions, only {free} available")
    if k == 0:
        return np.empty(0, dtype=np.int64)
    if free <= 4 * k or occupied.size > capacity // 2:
        complement = np.setdiff1d(np.arange(capacity, dtype=np.int64), occupied, assume_unique=True)
        return rng.choice(complement, size=k, replace=False)
    picked: list[np.ndarray] = []
    taken = occupied
    need = k
    while need:
        cand = rng.integers(0, capacity, size=2 * need + 16)
        # keep first occurrence only, in draw order
        _, first = np.unique(cand, return_index=True)
        cand = cand[np.sort(first)]
        cand = cand[~np.isin(cand, taken)][:need]
        picked.append(cand)
        taken = np.union1d(taken, cand)
        need -= cand.size
    return np.concatenate(picked)


def perturb(t: NetworkTopology, fraction: float, seed: int) -> NetworkTopology:
    """Per layer, move ``ceil(fraction * edges)`` uniformly chosen edges to
    uniformly chosen positions that were empty; edge counts are preserved."""
    if not 0 < fraction <= 1:
        raise TopologyError(f"fraction must lie in (0, 1], got {fraction}")
    layers = []
    for k, layer in enumerate(t.layers):
        if layer.num_edges == 0:
            raise TopologyError(f"layer {k} has no edges to perturb")
        n = math.ceil(fraction * layer.num_edges)
        rng = make_rng(seed, 1, k)
        removed = rng.choice(layer.num_edges, size=n, replace=False)
        added = sample_empty_positions(layer.capacity, layer.linear, n, rng)
        kept = np.delete(layer.linear, removed)
        layers.append(LayerTopology.from_linear(layer.in_width, layer.out_width, np.concatenate([kept, added])))
    return t.with_layers(layers)


def perturbation_chain(root: NetworkTopology, generations: int, fraction: float, seed: int) -> list[NetworkTopology]:
    """``[root, g1, ..., g_generations]``, each generation perturbed from the previous one."""
    chain = [root]
    for g in range(1, generations + 1):
        chain.append(perturb(chain[-1], fraction, seed=int(np.random.SeedSequence([seed, g]).generate_state(1)[0])))
    return chain


def density(t: NetworkTopology) -> float:
    total = sum(layer.capacity for layer in t.layers)
    return sum(layer.num_edges for layer in t.layers) / total


def _fmt_float(x: float | None) -> str:
    return "none" if x is None else repr(float(x))


def dumps(t: NetworkTopology) -> str:
    lines = [
        f"{FORMAT_MAGIC} {FORMAT_VERSION}",
        "widths " + " ".join(map(str, t.layer_widths)),
        "edges " + " ".join(map(str, t.edge_counts())),
        f"epsilon {_fmt_float(t.epsilon)}",
        f"seed {'none' if t.seed is None else int(t.seed)}",
    ]
    for k, layer in enumerate(t.layers):
        lines.append(f"layer {k}")
        if layer.num_edges:
            block = np.stack([layer.sources, layer.targets], axis=1)
            lines.extend(f"{s} {d}" for s, d in block.tolist())
    return "\n".join(lines) + "\n"


def _header(lines: list[str], idx: int, key: str) -> list[str]:
    if idx >= len(lines):
        raise MalformedTopologyError(f"missing '{key}' header line")
    parts = lines[idx].split()
    if not parts or parts[0] != key:
        raise MalformedTopologyError(f"line {idx + 1}: expected '{key}', got {lines[idx]!r}")
    return parts[1:]


def _ints(values: list[str], what: str) -> list[int]:
    try:
        return [int(v) for v in values]
    except ValueError as exc:
        raise MalformedTopologyError(f"non-integer {what}: {values}") from exc


def loads(text: str) -> NetworkTopology:
    lines = text.splitlines()
    magic = _header(lines, 0, FORMAT_MAGIC)
    if magic != [str(FORMAT_VERSION)]:
        raise MalformedTopologyError(f"unsupported format version {magic}")
    widths = _ints(_header(lines, 1, "widths"), "widths")
    if len(widths) < 2 or any(w <= 0 for w in widths):
        raise MalformedTopologyError(f"need at least two positive widths, got {widths}")
    counts = _ints(_header(lines, 2, "edges"), "edge counts")
    if len(counts) != len(widths) - 1:
        raise MalformedTopologyError(f"{len(widths)} widths but {len(counts)} edge counts")
    eps_raw = _header(lines, 3, "epsilon")
    seed_raw = _header(lines, 4, "seed")
    try:
        epsilon = None if eps_raw == ["none"] else float(eps_raw[0])
        seed = None if seed_raw == ["none"] else int(seed_raw[0])
    except (ValueError, IndexError) as exc:
        raise MalformedTopologyError("bad epsilon/seed header") from exc

    pos = 5
    layers = []
    for k, count in enumerate(counts):
        if _ints(_header(lines, pos, "layer"), "layer index") != [k]:
            raise MalformedTopologyError(f"line {pos + 1}: expected 'layer {k}'")
        block = lines[pos + 1 : pos + 1 + count]
        if len(block) != count or any(line.startswith("layer") for line in block):
            raise MalformedTopologyError(f"layer {k}: expected {count} edges")
        try:
            arr = np.array(" ".join(block).split(), dtype=np.int64).reshape(-1, 2)
        except ValueError as exc:
            raise MalformedTopologyError(f"layer {k}: edge lines must be 'source target' integer pairs") from exc
        if arr.shape[0] != count:
            raise MalformedTopologyError(f"layer {k}: expected {count} edges")
        n_in, n_out = widths[k], widths[k + 1]
        if arr.size and (arr.min() < 0 or arr[:, 0].max() >= n_in or arr[:, 1].max() >= n_out):
            raise WidthMismatchError(f"layer {k}: edge endpoint outside {n_in}x{n_out}")
        lin = arr[:, 1] * n_in + arr[:, 0]
        if np.unique(lin).size != lin.size:
            raise DuplicateEdgeError(f"layer {k}: duplicate edges")
        layers.append(LayerTopology.from_linear(n_in, n_out, lin))
        pos += 1 + count
    if any(line.strip() for line in lines[pos:]):
        raise MalformedTopologyError(f"trailing content after layer {len(counts) - 1}")
    return NetworkTopology(tuple(widths), tuple(layers), epsilon=epsilon, seed=seed)


def atomic_write(path: str | os.PathLike, data: str | bytes) -> None:
    """Write to a sibling temp file and rename over ``path``."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    mode = "wb" if isinstance(data, bytes) else "w"
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.")
    try:
        with os.fdopen(fd, mode) as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        Path(tmp).unlink(missing_ok=True)
        raise


def save(t: NetworkTopology, path: str | os.PathLike) -> None:
    atomic_write(path, dumps(t))


def load(path: str | os.PathLike) -> NetworkTopology:
    return loads(Path(path).read_text())
