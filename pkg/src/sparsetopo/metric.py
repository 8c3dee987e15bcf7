"""Neural Network Sparse Topology Distance (NNSTD).

Hidden neurons are interchangeable, so two networks are compared layer by
layer: every neuron of network 1 is matched to a neuron of network 2 by a
minimum-cost assignment over the Jaccard distances of their input sets, and
network 2's layer is relabeled by that matching before the next layer is
scored.  Input and output neurons are labeled and never reassigned.
"""

from __future__ import annotations

import csv
import io
import json
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from typing import Iterable, Sequence

import numba
import numpy as np
import scipy.sparse as sp

from .topology import LayerTopology, NetworkTopology


class DimensionError(ValueError):
    """Compared objects do not share an architecture."""


def ned(g1: Iterable, g2: Iterable) -> float:
    """Normalized edit distance between two input sets: |sym. diff| / |union|.

    Two empty sets are at distance 0.
    """
    g1, g2 = set(g1), set(g2)
    union = len(g1 | g2)
    if union == 0:
        return 0.0
    return len(g1 ^ g2) / union


@dataclass(frozen=True, eq=False)
class Assignment:
    """``mapping[j]`` is the network-1 neuron matched to network-2 neuron ``j``."""

    mapping: np.ndarray
    total_cost: float

    def __post_init__(self):
        m = np.asarray(self.mapping, dtype=np.int64)
        m.flags.writeable = False
        object.__setattr__(self, "mapping", m)

    @classmethod
    def identity(cls, n: int) -> Assignment:
        return cls(np.arange(n), 0.0)

    @property
    def size(self) -> int:
        return int(self.mapping.size)

    def __eq__(self, other):
        return (
            isinstance(other, Assignment)
            and np.array_equal(self.mapping, other.mapping)
            and self.total_cost == other.total_cost
        )

    def __repr__(self):
        return f"Assignment(mapping={self.mapping.tolist()}, total_cost={self.total_cost!r})"


@numba.njit(cache=True)
def _hungarian(c: np.ndarray) -> np.ndarray:
    n = c.shape[0]
    # column 0 is virtual; p[j] is the 1-based row owning column j
    u = np.zeros(n + 1)
    v = np.zeros(n + 1)
    p = np.zeros(n + 1, dtype=np.int64)
    way = np.zeros(n + 1, dtype=np.int64)
    for i in range(1, n + 1):
        p[0] = i
        j0 = 0
        minv = np.full(n + 1, np.inf)
        used = np.zeros(n + 1, dtype=np.bool_)
        while True:
            used[j0] = True
            i0 = p[j0]
            delta = np.inf
            j1 = 0
            for j in range(1, n + 1):
                if not used[j]:
                    cur = c[i0 - 1, j - 1] - u[i0] - v[j]
                    if cur < minv[j]:
                        minv[j] = cur
                        way[j] = j0
                    if minv[j] < delta:
                        delta = minv[j]
                        j1 = j
            for j in range(n + 1):
                if used[j]:
                    u[p[j]] += delta
                    v[j] -= delta
                else:
                    minv[j] -= delta
            j0 = j1
            if p[j0] == 0:
                break
        while j0:
            j1 = way[j0]
            p[j0] = p[j1]
            j0 = j1
    return p[1:] - 1


def solve_assignment(cost) -> Assignment:
    """Minimum-cost perfect matching of a square cost matrix (rows: network 1,
    columns: network 2).

    Hungarian method with row/column potentials: rows are inserted one at a
    time and routed along a shortest augmenting path, O(n^3) overall.  Among
    equal reduced costs the lowest column index wins, so results are
    deterministic.
    """
    c = np.ascontiguousarray(cost, dtype=np.float64)
    if c.ndim != 2 or c.shape[0] != c.shape[1]:
        raise DimensionError(f"cost matrix must be square, got shape {c.shape}")
    if not np.all(np.isfinite(c)):
        raise ValueError("cost matrix entries must be finite")
    n = c.shape[0]
    if n == 0:
        return Assignment(np.empty(0, dtype=np.int64), 0.0)
    mapping = _hungarian(c)
    total = float(np.sum(c[mapping, np.arange(n)]))
    return Assignment(mapping, total)


def _incidence(layer: LayerTopology, source_labels: np.ndarray | None = None) -> sp.csr_matrix:
    src = layer.sources if source_labels is None else np.asarray(source_labels)[layer.sources]
    data = np.ones(layer.num_edges, dtype=np.float64)
    return sp.csr_matrix((data, (layer.targets, src)), shape=(layer.out_width, layer.in_width))


def cost_matrix(l1: LayerTopology, l2: LayerTopology, prev: Assignment | None = None) -> np.ndarray:
    """Pairwise NED between input sets of ``l1``'s and ``l2``'s neurons.

    ``l2``'s sources are first renamed through ``prev`` (the matching of the
    layer below), so both input sets are expressed in network-1 labels.
    """
    _check_layers(l1, l2, prev)
    b1 = _incidence(l1)
    b2 = _incidence(l2, None if prev is None else prev.mapping)
    inter = (b1 @ b2.T).toarray()
    union = l1.in_degree()[:, None] + l2.in_degree()[None, :] - inter
    out = np.zeros_like(inter)
    np.divide(union - inter, union, out=out, where=union > 0)
    return out


def _check_layers(l1: LayerTopology, l2: LayerTopology, prev: Assignment | None) -> None:
    if (l1.in_width, l1.out_width) != (l2.in_width, l2.out_width):
        raise DimensionError(
            f"layer shapes differ: {l1.in_width}x{l1.out_width} vs {l2.in_width}x{l2.out_width}"
        )
    if prev is not None and prev.size != l1.in_width:
        raise DimensionError(f"previous assignment covers {prev.size} neurons, layer input has {l1.in_width}")


def compare_layers(
    l1: LayerTopology,
    l2: LayerTopology,
    prev_assignment: Assignment | None = None,
    *,
    labeled_outputs: bool = False,
) -> tuple[Assignment, float]:
    """Match ``l2``'s neurons to ``l1``'s; return the matching and mean matched NED.

    With ``labeled_outputs`` the matching is fixed to the identity (output
    neurons are classes) and only the input-set distances are averaged.
    """
    c = cost_matrix(l1, l2, prev_assignment)
    n = l1.out_width
    if labeled_outputs:
        diag = np.diagonal(c)
        assignment = Assignment(np.arange(n), float(np.sum(diag)))
    else:
        assignment = solve_assignment(c)
    return assignment, assignment.total_cost / n


@dataclass(frozen=True)
class DistanceReport:
    per_layer: tuple[float, ...]
    assignments: tuple[Assignment, ...]

    @property
    def nnstd(self) -> float:
        return float(np.mean(self.per_layer))

    def to_dict(self) -> dict:
        return {
            "nnstd": self.nnstd,
            "per_layer": list(self.per_layer),
            "assignments": [
                {"mapping": a.mapping.tolist(), "total_cost": a.total_cost} for a in self.assignments
            ],
        }

    def to_json(self, **kwargs) -> str:
        return json.dumps(self.to_dict(), **kwargs)

    @classmethod
    def from_dict(cls, d: dict) -> DistanceReport:
        return cls(
            tuple(float(x) for x in d["per_layer"]),
            tuple(Assignment(np.array(a["mapping"]), float(a["total_cost"])) for a in d["assignments"]),
        )


def _check_networks(n1: NetworkTopology, n2: NetworkTopology) -> None:
    if n1.layer_widths != n2.layer_widths:
        raise DimensionError(f"architectures differ: {n1.layer_widths} vs {n2.layer_widths}")


def _mix(x: np.ndarray) -> np.ndarray:
    """splitmix64 finalizer, elementwise on uint64 (wrapping arithmetic)."""
    x = x + np.uint64(0x9E3779B97F4A7C15)
    x = (x ^ (x >> np.uint64(30))) * np.uint64(0xBF58476D1CE4E5B9)
    x = (x ^ (x >> np.uint64(27))) * np.uint64(0x94D049BB133111EB)
    return x ^ (x >> np.uint64(31))


def structural_colors(t: NetworkTopology, rounds: int | None = None) -> list[np.ndarray]:
    """Colour refinement of neuron roles, one uint64 array per layer of neurons.

    Input and output neurons are coloured by their labels.  Each round
    recolours every hidden neuron from its own colour and the multisets of
    its in- and out-neighbour colours, so a hidden permutation maps each
    neuron to one of equal colour.  Colours are comparable across networks.
    """
    widths = t.layer_widths
    last = len(widths) - 1
    colors = [np.full(w, k, dtype=np.uint64) for k, w in enumerate(widths)]
    colors[0] = _mix(np.arange(widths[0], dtype=np.uint64) + np.uint64(1 << 40))
    colors[last] = _mix(np.arange(widths[last], dtype=np.uint64) + np.uint64(2 << 40))
    for _ in range(2 * t.num_layers if rounds is None else rounds):
        new = list(colors)
        for h in range(1, last):
            below, above = t.layers[h - 1], t.layers[h]
            ins = np.zeros(widths[h], dtype=np.uint64)
            outs = np.zeros(widths[h], dtype=np.uint64)
            np.add.at(ins, below.targets, _mix(colors[h - 1][below.sources]))
            np.add.at(outs, above.sources, _mix(colors[h + 1][above.targets] ^ np.uint64(0xA5A5)))
            new[h] = _mix(colors[h] ^ _mix(ins) ^ _mix(_mix(outs)))
        colors = new
    return colors


def _break_ties(layer: LayerTopology, mapping: np.ndarray, c1: np.ndarray, c2: np.ndarray) -> np.ndarray:
    """Re-pair neurons whose ``layer`` input sets are identical by structural colour.

    Every net-1 neuron in such a group has the same cost against any net-2
    neuron, so any re-pairing inside a group keeps the layer cost; pairing
    equal colours keeps the next layers consistent.
    """
    groups: dict[bytes, list[int]] = {}
    for i in range(layer.out_width):
        groups.setdefault(layer.input_set(i).tobytes(), []).append(i)
    inverse = np.empty_like(mapping)
    inverse[mapping] = np.arange(mapping.size)
    out = mapping.copy()
    for members in groups.values():
        if len(members) < 2:
            continue
        ones = np.array(members)
        twos = inverse[ones]
        out[twos[np.lexsort((twos, c2[twos]))]] = ones[np.lexsort((ones, c1[ones]))]
    return out


def _has_duplicate_input_sets(layer: LayerTopology) -> bool:
    return len({layer.input_set(i).tobytes() for i in range(layer.out_width)}) < layer.out_width


def compare_networks(n1: NetworkTopology, n2: NetworkTopology, *, label_output: bool = True) -> DistanceReport:
    """NNSTD between two same-architecture topologies.

    Layers are scored in order; each hidden layer's matching relabels the
    sources of the next layer of ``n2``.  The last layer keeps the identity
    matching when ``label_output`` is set.  Within a group of ``n1`` neurons
    sharing one input set the matching is cost-neutral; such ties are broken
    by ``structural_colors`` and then by index.
    """
    _check_networks(n1, n2)
    prev = Assignment.identity(n1.layer_widths[0])
    per_layer: list[float] = []
    assignments: list[Assignment] = []
    last = n1.num_layers - 1
    colors = None
    for k, (l1, l2) in enumerate(zip(n1.layers, n2.layers)):
        labeled = label_output and k == last
        prev, cost = compare_layers(l1, l2, prev, labeled_outputs=labeled)
        if not labeled and _has_duplicate_input_sets(l1):
            if colors is None:
                colors = structural_colors(n1), structural_colors(n2)
            prev = Assignment(_break_ties(l1, prev.mapping, colors[0][k + 1], colors[1][k + 1]), prev.total_cost)
        per_layer.append(cost)
        assignments.append(prev)
    return DistanceReport(tuple(per_layer), tuple(assignments))


def nnstd(n1: NetworkTopology, n2: NetworkTopology) -> float:
    return compare_networks(n1, n2).nnstd


def _pair_value(args) -> float:
    a, b, layer = args
    report = compare_networks(a, b)
    return report.nnstd if layer is None else report.per_layer[layer]


def pairwise_matrix(
    ts: Sequence[NetworkTopology], *, layer: int | None = None, workers: int = 1
) -> np.ndarray:
    """Matrix of ``compare_networks(ts[i], ts[j])`` with a zero diagonal.

    Both orderings are computed, so the result is only symmetric up to
    assignment ties.  ``layer`` selects one per-layer value instead of the
    mean.
    """
    ts = list(ts)
    for t in ts[1:]:
        _check_networks(ts[0], t)
    n = len(ts)
    cells = [(i, j) for i in range(n) for j in range(n) if i != j]
    jobs = [(ts[i], ts[j], layer) for i, j in cells]
    if workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            values = list(pool.map(_pair_value, jobs))
    else:
        values = [_pair_value(job) for job in jobs]
    out = np.zeros((n, n))
    for (i, j), value in zip(cells, values):
        out[i, j] = value
    return out


def matrix_to_csv(matrix: np.ndarray, labels: Sequence[str]) -> str:
    """Square matrix as CSV with row and column headers, 6 decimals."""
    matrix = np.asarray(matrix)
    if matrix.ndim != 2 or matrix.shape[0] != matrix.shape[1] or matrix.shape[0] != len(labels):
        raise DimensionError("matrix must be square with one label per row")
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["", *labels])
    for label, row in zip(labels, matrix):
        writer.writerow([label, *(f"{x:.6f}" for x in row)])
    return buf.getvalue()


def matrix_from_csv(text: str) -> tuple[np.ndarray, list[str]]:
    rows = list(csv.reader(io.StringIO(text)))
    if not rows or len(rows[0]) < 2:
        raise ValueError("empty matrix CSV")
    labels = rows[0][1:]
    body = rows[1:]
    if len(body) != len(labels) or any(len(r) != len(labels) + 1 for r in body):
        raise ValueError(f"matrix CSV is not square: {len(body)} rows, {len(labels)} columns")
    try:
        values = np.array([[float(x) for x in r[1:]] for r in body])
    except ValueError as exc:
        raise ValueError("non-numeric entry in matrix CSV") from exc
    return values, labels
