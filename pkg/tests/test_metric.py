import json
from itertools import permutations

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from oracles import (
    brute_force_min,
    exact_assignment_cost,
    exact_cost_matrix,
    ged_hidden_permutation,
    scipy_layer_min,
)

from sparsetopo import metric
from sparsetopo.metric import (
    Assignment,
    DimensionError,
    DistanceReport,
    compare_layers,
    compare_networks,
    ned,
    pairwise_matrix,
    solve_assignment,
    structural_colors,
)
from sparsetopo.topology import ErConfig, LayerTopology, NetworkTopology, epsilon_for_density, er_init, perturbation_chain

FMNIST_WIDTHS = [784, 784, 784, 784, 10]
EPS_06 = epsilon_for_density(0.006, 784, 784)


def small_net(rng, widths, density):
    layers = []
    for a, b in zip(widths[:-1], widths[1:]):
        mask = rng.random(a * b) < density
        layers.append(LayerTopology.from_linear(a, b, np.flatnonzero(mask)))
    return NetworkTopology(tuple(widths), tuple(layers))


# --- ned ---------------------------------------------------------------------


def test_ned_examples():
    # one shared input out of two considered
    assert ned({"A", "B"}, {"A"}) == 0.5
    # two differing inputs out of three in the union
    assert ned({"A", "B"}, {"A", "C"}) == pytest.approx(2 / 3, abs=1e-15)
    assert ned({1, 2, 3}, {1, 2, 3}) == 0.0
    assert ned({"A"}, {"B", "C"}) == 1.0
    assert ned(set(), set()) == 0.0
    assert ned(set(), {1}) == 1.0


sets = st.frozensets(st.integers(0, 15), max_size=10)


@given(sets, sets, sets)
def test_ned_is_a_metric(a, b, c):
    assert 0.0 <= ned(a, b) <= 1.0
    assert (ned(a, b) == 0.0) == (a == b)
    assert ned(a, b) == ned(b, a)
    assert ned(a, c) <= ned(a, b) + ned(b, c) + 1e-12


# --- solve_assignment ---------------------------------------------------------


def test_solve_assignment_examples():
    a = solve_assignment([[0, 1], [1, 0]])
    assert a.mapping.tolist() == [0, 1] and a.total_cost == 0
    b = solve_assignment([[0.5, 0.2], [0.3, 0.9]])
    # enumeration: identity costs 0.5 + 0.9 = 1.4, swap costs 0.2 + 0.3 = 0.5
    assert b.mapping.tolist() == [1, 0]
    assert b.total_cost == pytest.approx(0.5, abs=1e-15)


def test_solve_assignment_rejects_non_square():
    with pytest.raises(DimensionError):
        solve_assignment(np.zeros((2, 3)))
    with pytest.raises(ValueError):
        solve_assignment([[np.inf]])


def test_solve_assignment_empty_and_single():
    assert solve_assignment(np.zeros((0, 0))).size == 0
    assert solve_assignment([[0.25]]).total_cost == 0.25


@given(st.integers(1, 6), st.integers(0, 2**32 - 1), st.sampled_from(["uniform", "ties"]))
def test_solve_assignment_matches_factorial_brute_force(n, seed, kind):
    rng = np.random.default_rng(seed)
    c = rng.random((n, n)) if kind == "uniform" else rng.integers(0, 3, (n, n)) / 2
    a = solve_assignment(c)
    assert sorted(a.mapping.tolist()) == list(range(n))
    brute = min(sum(c[p[j], j] for j in range(n)) for p in permutations(range(n)))
    assert a.total_cost == pytest.approx(brute, abs=1e-12)
    assert a.total_cost == pytest.approx(float(np.sum(c[a.mapping, np.arange(n)])), abs=0)


def test_solve_assignment_agrees_with_scipy_on_large_matrix():
    from scipy.optimize import linear_sum_assignment

    rng = np.random.default_rng(1)
    c = rng.random((200, 200))
    r, col = linear_sum_assignment(c)
    assert solve_assignment(c).total_cost == pytest.approx(c[r, col].sum(), rel=1e-12)


def test_solve_assignment_is_deterministic_under_ties():
    c = np.ones((5, 5))
    first = solve_assignment(c)
    assert all(np.array_equal(first.mapping, solve_assignment(c).mapping) for _ in range(3))


# --- compare_layers -----------------------------------------------------------


def test_compare_layers_identical_is_zero_identity():
    layer = er_init([20, 15], ErConfig(3.0, 0)).layers[0]
    a, cost = compare_layers(layer, layer, Assignment.identity(20))
    assert cost == 0.0
    assert a.mapping.tolist() == list(range(15)) or all(
        np.array_equal(layer.input_set(j), layer.input_set(int(a.mapping[j]))) for j in range(15)
    )


def test_compare_layers_two_neuron_example():
    # normalized cost is the optimal total divided by the layer width
    c = np.array([[0.5, 0.2], [0.3, 0.9]])
    a = solve_assignment(c)
    assert a.mapping.tolist() == [1, 0]
    assert a.total_cost / 2 == pytest.approx(0.25)


def test_compare_layers_two_neuron_layers_from_sets():
    # net 1: n0 <- {0,1}, n1 <- {2}; net 2: m0 <- {2,3}, m1 <- {0,1,4}
    l1 = LayerTopology.from_edges(5, 2, [(0, 0), (1, 0), (2, 1)])
    l2 = LayerTopology.from_edges(5, 2, [(2, 0), (3, 0), (0, 1), (1, 1), (4, 1)])
    c = metric.cost_matrix(l1, l2)
    assert c.tolist() == [[1.0, 1 / 3], [0.5, 1.0]]
    a, cost = compare_layers(l1, l2)
    assert a.mapping.tolist() == [1, 0]
    assert cost == pytest.approx((1 / 3 + 0.5) / 2)


def test_compare_layers_absorbs_permuted_outputs():
    layer = er_init([30, 12], ErConfig(4.0, 2)).layers[0]
    perm = np.random.default_rng(0).permutation(12)
    permuted = layer.relabel_targets(perm)
    a, cost = compare_layers(layer, permuted)
    assert cost == 0.0
    # each neuron j of the permuted layer maps back to an original neuron with the same input set
    for j in range(12):
        assert np.array_equal(permuted.input_set(j), layer.input_set(int(a.mapping[j])))


def test_compare_layers_dimension_errors():
    with pytest.raises(DimensionError):
        compare_layers(LayerTopology.dense(3, 4), LayerTopology.dense(3, 5))
    with pytest.raises(DimensionError):
        compare_layers(LayerTopology.dense(3, 4), LayerTopology.dense(3, 4), Assignment.identity(2))


@given(st.integers(0, 2**32 - 1))
def test_compare_layers_matches_brute_force_exactly(seed):
    rng = np.random.default_rng(seed)
    n_in, n_out = int(rng.integers(1, 8)), int(rng.integers(1, 7))
    d = rng.uniform(0.1, 0.9)
    l1, l2 = (small_net(rng, [n_in, n_out], d).layers[0] for _ in range(2))
    prev = Assignment(rng.permutation(n_in), 0.0)
    a, cost = compare_layers(l1, l2, prev)
    exact = exact_cost_matrix(l1, l2, prev.mapping)
    best, _ = brute_force_min(exact)
    assert exact_assignment_cost(exact, a.mapping) == best
    assert cost == pytest.approx(float(best / n_out), abs=1e-12)


@given(st.integers(0, 2**32 - 1))
def test_compare_layers_invariant_under_common_input_relabeling(seed):
    rng = np.random.default_rng(seed)
    l1, l2 = (small_net(rng, [9, 6], 0.4).layers[0] for _ in range(2))
    sigma = rng.permutation(9)
    _, base = compare_layers(l1, l2)
    _, moved = compare_layers(l1.relabel_sources(sigma), l2.relabel_sources(sigma))
    assert moved == pytest.approx(base, abs=1e-12)


# --- compare_networks ---------------------------------------------------------


def test_compare_networks_self_distance_is_zero():
    t = er_init([50, 40, 30, 10], ErConfig(3.0, 0))
    r = compare_networks(t, t)
    assert r.nnstd == 0.0
    assert all(v == 0.0 for v in r.per_layer)


@given(st.integers(0, 2**32 - 1))
def test_hidden_permutation_gives_zero(seed):
    rng = np.random.default_rng(seed)
    widths = [int(rng.integers(4, 20)), int(rng.integers(2, 9)), int(rng.integers(2, 9)), 3]
    t = small_net(rng, widths, rng.uniform(0.1, 0.7))
    u = t.permute_hidden([rng.permutation(w) for w in widths[1:-1]])
    assert compare_networks(t, u).nnstd == 0.0


def test_identical_input_sets_are_paired_by_downstream_role():
    # hidden neurons 0 and 1 share their input set but feed different outputs;
    # the first layer alone cannot tell them apart
    l1 = LayerTopology.from_edges(2, 2, [(0, 0), (0, 1)])
    l2 = LayerTopology.from_edges(2, 2, [(0, 0), (1, 1)])
    t = NetworkTopology((2, 2, 2), (l1, l2))
    u = t.permute_hidden([np.array([1, 0])])
    assert ged_hidden_permutation(t, u) == 0
    r = compare_networks(t, u)
    assert r.per_layer == (0.0, 0.0)
    assert r.assignments[0].mapping.tolist() == [1, 0]


def test_structural_colors_follow_hidden_permutations():
    rng = np.random.default_rng(3)
    t = small_net(rng, [10, 8, 6, 3], 0.3)
    perms = [rng.permutation(8), rng.permutation(6)]
    u = t.permute_hidden(perms)
    ct, cu = structural_colors(t), structural_colors(u)
    assert np.array_equal(ct[0], cu[0]) and np.array_equal(ct[3], cu[3])
    for h, perm in enumerate(perms, start=1):
        assert np.array_equal(cu[h][perm], ct[h])


def test_compare_networks_architecture_mismatch():
    with pytest.raises(DimensionError):
        compare_networks(er_init([5, 4, 3], ErConfig(1.0)), er_init([5, 3, 3], ErConfig(1.0)))


@given(st.integers(0, 2**32 - 1))
def test_each_layer_assignment_is_minimal_given_previous(seed):
    rng = np.random.default_rng(seed)
    widths = [int(rng.integers(2, 7)), int(rng.integers(1, 6)), int(rng.integers(1, 6)), 3]
    a, b = small_net(rng, widths, 0.5), small_net(rng, widths, 0.5)
    for x, y in ((a, b), (b, a)):
        r = compare_networks(x, y)
        prev = np.arange(widths[0])
        for k, (l1, l2) in enumerate(zip(x.layers, y.layers)):
            exact = exact_cost_matrix(l1, l2, prev)
            got = exact_assignment_cost(exact, r.assignments[k].mapping)
            if k == len(widths) - 2:
                assert r.assignments[k].mapping.tolist() == list(range(widths[-1]))
            else:
                assert got == brute_force_min(exact)[0]
            assert r.per_layer[k] == pytest.approx(float(got / l1.out_width), abs=1e-12)
            prev = r.assignments[k].mapping
        assert 0.0 <= r.nnstd <= 1.0


@given(st.integers(0, 2**32 - 1))
def test_symmetry_when_assignments_are_unique(seed):
    rng = np.random.default_rng(seed)
    widths = [8, 5, 4, 2]
    a, b = small_net(rng, widths, 0.5), small_net(rng, widths, 0.5)
    fwd = compare_networks(a, b)
    prev, unique = np.arange(8), True
    for k in range(2):
        exact = exact_cost_matrix(a.layers[k], b.layers[k], prev)
        unique &= len(brute_force_min(exact)[1]) == 1
        prev = fwd.assignments[k].mapping
    if unique:
        assert abs(fwd.nnstd - compare_networks(b, a).nnstd) <= 1e-9


@given(st.integers(0, 2**32 - 1))
def test_zero_distance_implies_zero_graph_edit_distance(seed):
    rng = np.random.default_rng(seed)
    widths = [4, 3, 3, 2]
    t = small_net(rng, widths, 0.5)
    u = t.permute_hidden([rng.permutation(3), rng.permutation(3)]) if rng.random() < 0.5 else small_net(rng, widths, 0.5)
    ged = ged_hidden_permutation(t, u)
    d = compare_networks(t, u).nnstd
    if d == 0.0:
        assert ged == 0
    if ged > 0:
        assert d > 0.0


def test_report_json_round_trip():
    t = er_init([12, 8, 4], ErConfig(2.0, 0))
    u = er_init([12, 8, 4], ErConfig(2.0, 1))
    r = compare_networks(t, u)
    d = json.loads(r.to_json())
    assert d["nnstd"] == r.nnstd and d["per_layer"] == list(r.per_layer)
    back = DistanceReport.from_dict(d)
    assert back.per_layer == r.per_layer
    assert all(x == y for x, y in zip(back.assignments, r.assignments))


# --- 784-wide fixed-seed values -------------------------------------------------


@pytest.fixture(scope="module")
def fmnist_pair():
    return er_init(FMNIST_WIDTHS, ErConfig(EPS_06, 1)), er_init(FMNIST_WIDTHS, ErConfig(EPS_06, 2))


def test_different_seeds_first_layer_distance_is_large(fmnist_pair):
    a, b = fmnist_pair
    r = compare_networks(a, b)
    oracle = scipy_layer_min(a.layers[0], b.layers[0])
    assert r.per_layer[0] == pytest.approx(oracle, abs=1e-12)
    assert r.per_layer[0] == pytest.approx(0.8268701105402727, abs=1e-12)
    assert r.per_layer[0] > 0.8


def test_ninth_generation_distance_is_small(fmnist_pair):
    root = fmnist_pair[0]
    chain = perturbation_chain(root, 9, 0.01, seed=5)
    r = compare_networks(root, chain[9])
    prev = None
    for k in range(3):
        oracle = scipy_layer_min(root.layers[k], chain[9].layers[k], prev)
        assert r.per_layer[k] == pytest.approx(oracle, abs=1e-12)
        prev = r.assignments[k].mapping
    assert 0.1 < r.nnstd < 0.3


# --- pairwise_matrix ----------------------------------------------------------


def test_pairwise_of_repeated_topology_is_zero():
    t = er_init([20, 10, 5], ErConfig(2.0, 0))
    assert np.array_equal(pairwise_matrix([t] * 4), np.zeros((4, 4)))


def test_pairwise_chain_trend_and_independent_seeds():
    widths = [200, 200, 200, 10]
    eps = epsilon_for_density(0.03, 200, 200)
    chain = perturbation_chain(er_init(widths, ErConfig(eps, 0)), 5, 0.01, seed=1)
    m = pairwise_matrix(chain)
    assert np.all(np.diag(m) == 0)
    for i in range(len(chain)):
        row = m[i, i:]
        assert np.all(np.diff(row) >= -0.01)
    indep = [er_init(widths, ErConfig(eps, s)) for s in (10, 11, 12)]
    mi = pairwise_matrix(indep)
    off = mi[~np.eye(3, dtype=bool)]
    assert off.min() > m.max()


def test_pairwise_layer_selection_and_workers_agree():
    ts = [er_init([30, 20, 10, 4], ErConfig(2.0, s)) for s in range(3)]
    serial = pairwise_matrix(ts, layer=0)
    parallel = pairwise_matrix(ts, layer=0, workers=2)
    assert np.array_equal(serial, parallel)
    assert serial[0, 1] == compare_networks(ts[0], ts[1]).per_layer[0]


def test_matrix_csv_round_trip_and_format():
    m = np.array([[0.0, 0.1234567], [0.2, 0.0]])
    text = metric.matrix_to_csv(m, ["w0", "w1"])
    assert text.splitlines() == [",w0,w1", "w0,0.000000,0.123457", "w1,0.200000,0.000000"]
    back, labels = metric.matrix_from_csv(text)
    assert labels == ["w0", "w1"]
    assert np.allclose(back, m, atol=5e-7)
    with pytest.raises(ValueError):
        metric.matrix_from_csv(",a,b\na,0,1\n")
    with pytest.raises(ValueError):
        metric.matrix_from_csv(",a\na,x\n")
