"""Acceptance suite: one test per criterion, numbered 1 to 10.

Criteria 6 to 9 train full-width Fashion-MNIST networks (about 90 minutes on
one CPU core in total).  Their CLI runs are cached under
``$SPARSETOPO_ACCEPTANCE_DIR`` (default: ``<cache root>/acceptance``), keyed by
the command line and a hash of the package sources, so a re-run with
unchanged code only re-checks the results.  The 200-epoch part of
criterion 6 runs only with ``SPARSETOPO_FULL_SCHEDULE=1``.
"""

import csv
import hashlib
import json
import os
import random
import time
from pathlib import Path

import numpy as np
import pytest
from oracles import brute_force_min, dense_loss, exact_assignment_cost, exact_cost_matrix, jaccard_distance
from scipy.stats import kendalltau

import sparsetopo
from sparsetopo import cli
from sparsetopo.data import cache_root
from sparsetopo.metric import compare_layers, ned, nnstd, pairwise_matrix
from sparsetopo.network import forward, init_weights, loss_and_grad
from sparsetopo.topology import ErConfig, LayerTopology, NetworkTopology, epsilon_for_density, er_init, perturbation_chain

WIDTHS = [784, 784, 784, 784, 10]
EPS_06 = epsilon_for_density(0.006, 784, 784)


def report(number, ok, detail):
    print(f"criterion {number}: {'PASS' if ok else 'FAIL'} ({detail})")
    assert ok, detail


def random_small_net(rng, widths, density):
    layers = []
    for a, b in zip(widths[:-1], widths[1:]):
        layers.append(LayerTopology.from_linear(a, b, np.flatnonzero(rng.random(a * b) < density)))
    return NetworkTopology(tuple(widths), tuple(layers))


# --- 1. metric oracle equivalence ------------------------------------------------


def test_criterion_01_metric_matches_brute_force_and_ned_is_a_metric():
    start = time.perf_counter()
    rng = np.random.default_rng(101)
    mismatches = 0
    for _ in range(1000):
        widths = [int(rng.integers(1, 8))] + [int(w) for w in rng.integers(1, 7, int(rng.integers(1, 4)))] + [3]
        t1, t2 = (random_small_net(rng, widths, rng.uniform(0.1, 0.9)) for _ in range(2))
        prev = None
        for k in range(len(widths) - 2):
            a, _ = compare_layers(t1.layers[k], t2.layers[k], prev)
            exact = exact_cost_matrix(t1.layers[k], t2.layers[k], None if prev is None else prev.mapping)
            mismatches += exact_assignment_cost(exact, a.mapping) != brute_force_min(exact)[0]
            prev = a

    pyrng = random.Random(102)
    universe = range(12)
    violations = 0
    for _ in range(10_000):
        a, b, c = ({x for x in universe if pyrng.random() < pyrng.random()} for _ in range(3))
        dab, dba, dac, dbc = ned(a, b), ned(b, a), ned(a, c), ned(b, c)
        violations += dab != float(jaccard_distance(a, b)) or dab != dba
        violations += ned(a, a) != 0 or (dab == 0) != (a == b) or not 0 <= dab <= 1
        violations += dac > dab + dbc + 1e-12
    elapsed = time.perf_counter() - start
    report(1, mismatches == 0 and violations == 0 and elapsed < 60,
           f"{mismatches} assignment mismatches, {violations} axiom violations, {elapsed:.1f}s")


# --- 2. permutation invariance ---------------------------------------------------


def test_criterion_02_hidden_permutation_has_zero_distance():
    start = time.perf_counter()
    rng = np.random.default_rng(202)
    nonzero = []
    for i in range(100):
        widths = [int(rng.integers(10, 40)), *(int(w) for w in rng.integers(5, 30, int(rng.integers(1, 4)))), 5]
        t = random_small_net(rng, widths, rng.uniform(0.2, 0.6))
        u = t.permute_hidden([rng.permutation(w) for w in widths[1:-1]])
        d = nnstd(t, u)
        if d != 0.0:
            nonzero.append((i, d))
    elapsed = time.perf_counter() - start
    report(2, not nonzero and elapsed < 30, f"{len(nonzero)} of 100 nonzero {nonzero[:3]}, {elapsed:.1f}s")


# --- 3. perturbation family distances -------------------------------------------------


def test_criterion_03_perturbation_chain_stays_close():
    start = time.perf_counter()
    root = er_init(WIDTHS, ErConfig(EPS_06, 0))
    chain = perturbation_chain(root, 9, 0.01, seed=0)
    m = pairwise_matrix(chain)
    tau = kendalltau(np.arange(10), m[0]).statistic
    elapsed = time.perf_counter() - start
    ok = m.max() <= 0.3 and 0.1 <= m[0, 9] <= 0.3 and tau > 0.8 and elapsed < 300
    report(3, ok, f"max {m.max():.3f}, d(w0,w9) {m[0, 9]:.3f}, tau {tau:.3f}, {elapsed:.0f}s")


# --- 4. distances across seeds and densities ---------------------------------------


def test_criterion_04_first_layer_distance_across_seeds_and_densities():
    start = time.perf_counter()
    same = {}
    for density in (0.006, 0.01):
        eps = epsilon_for_density(density, 784, 784)
        a, b = (er_init(WIDTHS, ErConfig(eps, s)) for s in (1, 2))
        same[density] = compare_layers(a.layers[0], b.layers[0])[1]

    grid = [0.006, 0.05, 0.2, 0.5]
    first = [er_init(WIDTHS, ErConfig(epsilon_for_density(d, 784, 784), 10)).layers[0] for d in grid]
    second = [er_init(WIDTHS, ErConfig(epsilon_for_density(d, 784, 784), 20)).layers[0] for d in grid]
    dist = np.array([[compare_layers(x, y)[1] for y in second] for x in first])
    gap = np.abs(np.subtract.outer(grid, grid))
    taus = [kendalltau(gap[i], dist[i]).statistic for i in range(len(grid))]
    elapsed = time.perf_counter() - start
    ok = all(v > 0.9 for v in same.values()) and float(np.mean(taus)) > 0.5 and elapsed < 600
    report(4, ok, f"same-density {same}, per-row tau vs gap {np.round(taus, 2).tolist()}, "
                  f"matrix {np.round(dist, 3).tolist()}, {elapsed:.0f}s")


# --- 5. gradient check ------------------------------------------------------------------


def _tiny_net(seed):
    rng = np.random.default_rng(seed)
    widths = (6, 5, 4, 3)
    net = init_weights(random_small_net(rng, widths, 0.5), seed)
    net.biases = [rng.normal(0, 0.3, b.shape) for b in net.biases]
    net.srelu = [
        np.stack([rng.uniform(-1, -0.1, w), rng.uniform(0, 0.5, w), rng.uniform(0.1, 1, w), rng.uniform(0.5, 1.5, w)])
        for w in widths[1:-1]
    ]
    return net, rng


def test_criterion_05_gradients_match_finite_differences():
    start = time.perf_counter()
    worst, checked = 0.0, 0
    for seed in range(50):
        net, rng = _tiny_net(seed)
        while True:
            x = rng.normal(size=(5, 6))
            cache = forward(net, x)
            margin = min(np.minimum(np.abs(z - p[0]), np.abs(z - p[2])).min() for z, p in zip(cache.preacts, net.srelu))
            if margin > 1e-3:
                break
        y = rng.integers(0, 3, 5)
        _, grads = loss_and_grad(net, x, y)
        h = 1e-5
        for group, ggroup in zip([net.weights, net.biases, net.srelu], [grads.weights, grads.biases, grads.srelu]):
            for arr, garr in zip(group, ggroup):
                flat, gflat = arr.reshape(-1), garr.reshape(-1)
                for i in range(flat.size):
                    orig = flat[i]
                    flat[i] = orig + h
                    up = dense_loss(net, x, y)
                    flat[i] = orig - h
                    down = dense_loss(net, x, y)
                    flat[i] = orig
                    fd = (up - down) / (2 * h)
                    err = abs(fd - gflat[i]) / max(abs(fd), abs(gflat[i]), 1e-4)
                    worst = max(worst, err)
                    checked += 1
    elapsed = time.perf_counter() - start
    report(5, worst <= 1e-4 and elapsed < 60, f"{checked} partials over 50 nets, worst rel err {worst:.2e}, {elapsed:.1f}s")


# --- cached CLI runs for criteria 6 to 9 -------------------------------------------------


def _source_hash() -> str:
    h = hashlib.sha256()
    for path in sorted(Path(sparsetopo.__file__).parent.glob("*.py")):
        h.update(path.name.encode() + path.read_bytes())
    return h.hexdigest()[:16]


def cached_run(argv: list[str]) -> tuple[Path, dict, float]:
    """Run ``sparsetopo <argv> --out <dir>`` unless an identical run is cached."""
    root = Path(os.environ.get("SPARSETOPO_ACCEPTANCE_DIR", cache_root() / "acceptance"))
    key = hashlib.sha256(json.dumps([argv, _source_hash()]).encode()).hexdigest()[:16]
    out = root / f"{argv[0]}-{key}"
    done = out / "elapsed.txt"
    if not done.exists():
        start = time.perf_counter()
        code = cli.main([*argv, "--out", str(out)])
        assert code == 0, f"sparsetopo {' '.join(argv)} exited with {code}"
        done.write_text(f"{time.perf_counter() - start:.1f}\n")
    return out, json.loads((out / "run.json").read_text()), float(done.read_text())


def _rows(path: Path) -> list[dict]:
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


@pytest.fixture(scope="module")
def fashion(fashion_available):
    return ["--dataset", "fashion_mnist", "--offline"]


# --- 6. Fashion-MNIST accuracy -----------------------------------------------------------


@pytest.mark.slow
def test_criterion_06_set_accuracy_at_desk_scale(fashion):
    _, set_run, t_set = cached_run(["train", *fashion, "--mode", "SET"])
    _, fixed_run, t_fixed = cached_run(["train", *fashion, "--mode", "FIXED"])
    set_acc, fixed_acc = set_run["results"]["test_acc"], fixed_run["results"]["test_acc"]
    ok = set_acc >= 0.84 and set_acc >= fixed_acc - 0.003 and t_set < 1800
    report(6, ok, f"30 epochs: SET {set_acc:.4f}, FIXED {fixed_acc:.4f}, SET run {t_set:.0f}s")


@pytest.mark.slow
@pytest.mark.skipif(os.environ.get("SPARSETOPO_FULL_SCHEDULE") != "1", reason="set SPARSETOPO_FULL_SCHEDULE=1")
def test_criterion_06_set_accuracy_at_full_schedule(fashion):
    _, run, _ = cached_run(["train", *fashion, "--mode", "SET", "--scale", "paper"])
    acc = run["results"]["test_acc"]
    report(6, 0.865 <= acc <= 0.89, f"200 epochs: SET {acc:.4f}")


# --- 7 and 8. family divergence and within-run drift ----------------------------------------


@pytest.fixture(scope="module")
def family_run(fashion):
    return cached_run(["evolve", *fashion, "--family-size", "4"])


@pytest.mark.slow
def test_criterion_07_family_diverges_with_similar_accuracy(family_run):
    out, run, elapsed = family_run
    summary = _rows(out / "pairwise_summary.csv")
    first, last = float(summary[0]["mean_nnstd"]), float(summary[-1]["mean_nnstd"])
    spread = run["results"]["test_acc_spread"]
    accs = [float(r["test_acc"]) for r in _rows(out / "accuracy.csv")]
    ok = last >= 3 * first and spread <= 0.015 and elapsed < 7200
    report(7, ok, f"mean pairwise {first:.3f} -> {last:.3f} at epoch {summary[-1]['epoch']}, "
                  f"accuracies {accs}, spread {spread:.4f}, {elapsed:.0f}s")


@pytest.mark.slow
def test_criterion_08_topology_drifts_away_from_its_start(family_run):
    out, _, _ = family_run
    series = {}
    for row in _rows(out / "trajectory.csv"):
        series.setdefault(row["run"], []).append((int(row["epoch"]), float(row["nnstd_to_epoch0"])))
    details, ok = [], True
    for label, points in series.items():
        epochs, values = zip(*sorted(points))
        tau = kendalltau(epochs, values).statistic
        ok &= len(points) >= 5 and tau > 0.9 and values[-1] > 0.4
        details.append(f"{label}: tau {tau:.3f}, final {values[-1]:.3f}")
    report(8, ok, "; ".join(details))


# --- 9. retraining snapshots ------------------------------------------------------------------


@pytest.mark.slow
def test_criterion_09_retrained_snapshots(fashion):
    train_dir, _, t_train = cached_run(["evolve", *fashion, "--seeds", "0", "1", "2"])
    traces = [str(p) for p in sorted((train_dir / "runs").iterdir())]
    out, _, t_retrain = cached_run(["retrain", *fashion, "--traces", *traces, "--snapshot-epochs", "0", "10", "20", "30"])
    means = {(int(r["snapshot_epoch"]), r["mode"]): float(r["mean_test_acc"]) for r in _rows(out / "summary.csv")}
    epochs = sorted({e for e, _ in means})
    reinit = [means[e, "RANDOM_REINIT"] for e in epochs]
    final_gap = means[epochs[-1], "CONTINUE"] - means[epochs[-1], "RANDOM_REINIT"]
    ok = len(epochs) >= 3 and all(np.diff(reinit) >= 0) and final_gap >= 0.005 and t_train + t_retrain < 3 * 3600
    report(9, ok, f"RANDOM_REINIT by snapshot {dict(zip(epochs, (round(v, 4) for v in reinit)))}, "
                  f"CONTINUE - RANDOM_REINIT at epoch {epochs[-1]}: {final_gap:+.4f}, {t_train + t_retrain:.0f}s")


# --- 10. determinism ---------------------------------------------------------------------------


def _csv_bytes(directory: Path) -> dict:
    return {str(p.relative_to(directory)): p.read_bytes() for p in sorted(directory.rglob("*.csv"))}


def test_criterion_10_rerun_from_run_json_is_byte_identical(tmp_path, fashion_available):
    small = ["--widths", "784", "64", "64", "10", "--density", "0.05"]
    train = [*small, "--offline", "--train-subset", "1000", "--epochs", "2", "--snapshot-every", "1"]
    first = tmp_path / "first"
    commands = {
        "init": ["init", *small],
        "family": ["family", *small, "--generations", "3"],
        "train": ["train", *train, "--seed", "3"],
        "evolve": ["evolve", *train, "--family-size", "2"],
        "density-sweep": ["density-sweep", "--widths", "784", "32", "10", "--densities", "0.05", "0.2",
                          "--seeds", "0", "--epochs", "1", "--offline", "--train-subset", "1000"],
    }
    for name, argv in commands.items():
        assert cli.main([*argv, "--out", str(first / name)]) == 0
    evolve_runs = first / "evolve" / "runs"
    extra = {
        "distance": ["distance", str(first / "family" / "w0.topo"), str(first / "family" / "w3.topo")],
        "pairwise": ["pairwise", *(str(first / "family" / f"w{g}.topo") for g in range(4))],
        "perturb": ["perturb", "--topology", str(first / "init" / "topology.topo"), "--generations", "2"],
        "retrain": ["retrain", "--traces", str(evolve_runs / "w0"), "--epochs", "1", "--offline",
                    "--train-subset", "1000"],
        "heatmap": ["heatmap", "--matrix", str(first / "family" / "pairwise.csv")],
    }
    for name, argv in extra.items():
        assert cli.main([*argv, "--out", str(first / name)]) == 0

    differing, compared = [], 0
    for name in [*commands, *extra]:
        again = tmp_path / "again" / name
        assert cli.main([name, "--config", str(first / name / "run.json"), "--out", str(again)]) == 0
        a, b = _csv_bytes(first / name), _csv_bytes(again)
        compared += len(a)
        if a != b:
            differing.append(name)
        if name == "heatmap":
            differing += [] if (first / name / "heatmap.png").read_bytes() == (again / "heatmap.png").read_bytes() else ["png"]
    report(10, not differing and compared > 0, f"{compared} CSV files over {len(commands) + len(extra)} commands, "
                                               f"differing: {differing or 'none'}")
