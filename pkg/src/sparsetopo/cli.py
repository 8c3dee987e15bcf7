"""Command-line driver for the topology-distance and training experiments.

Every verb writes its outputs plus a ``run.json`` into ``--out``.  The
``args`` block of a ``run.json`` is a complete, resolved configuration, so
``sparsetopo <verb> --config old/run.json --out new`` reproduces a run.
"""

from __future__ import annotations

import argparse
import csv
import functools
import io
import json
import logging
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from . import __version__
from . import data as datamod
from . import topology as topo
from .metric import compare_networks, matrix_from_csv, matrix_to_csv, pairwise_matrix
from .network import INIT_SCHEMES, TrainConfig, init_weights
from .settrain import REGROW_INITS, Mode, RetrainMode, SetConfig, TrainingError, load_snapshot, retrain, train
from .topology import ErConfig, atomic_write, epsilon_for_density, er_init, make_rng, perturbation_chain

log = logging.getLogger("sparsetopo")

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_PARSE = 3
EXIT_IO = 4
EXIT_TRAINING = 5


class ConfigError(ValueError):
    pass


PRESETS = {
    ("fashion_mnist", "desk"): {
        "widths": [784, 784, 784, 784, 10],
        "density": 0.006,
        "epochs": 30,
        "snapshot_every": 5,
        "retrain_epochs": 10,
    },
    ("fashion_mnist", "paper"): {
        "widths": [784, 784, 784, 784, 10],
        "density": 0.006,
        "epochs": 200,
        "snapshot_every": 10,
        "retrain_epochs": 200,
    },
    ("cifar10", "desk"): {
        "widths": [3072, 1000, 1000, 10],
        "density": 0.007,
        "epochs": 30,
        "snapshot_every": 5,
        "retrain_epochs": 10,
    },
    ("cifar10", "paper"): {
        "widths": [3072, 1000, 1000, 10],
        "density": 0.007,
        "epochs": 900,
        "snapshot_every": 100,
        "retrain_epochs": 1000,
    },
}

FASHION_DENSITIES = [0.001, 0.006, 0.01, 0.02, 0.03, 0.05, 0.06, 0.1, 0.2, 0.3, 0.4, 0.5]
CIFAR_DENSITIES = [0.001, 0.007, 0.05, 0.08, 0.1, 0.2, 0.3, 0.4, 0.5]


# --- argument parsing -----------------------------------------------------------


def _dataset_name(name: str) -> str:
    key = name.lower().replace("-", "_")
    if key not in ("fashion_mnist", "cifar10"):
        raise argparse.ArgumentTypeError(f"unknown dataset {name!r}")
    return key


def _fraction(text: str) -> float:
    value = float(text)
    if not 0 < value <= 1:
        raise argparse.ArgumentTypeError(f"{text} is not in (0, 1]")
    return value


def _common(p: argparse.ArgumentParser, *, topology_flags=True, dataset=False, training=False) -> None:
    p.add_argument("--config", help="JSON file of option values; explicit flags override it")
    p.add_argument("--out", required=False, help="output directory")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--scale", choices=["desk", "paper"], default="desk")
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("--dataset", type=_dataset_name, default="fashion_mnist")
    if topology_flags:
        p.add_argument("--widths", type=int, nargs="+", help="layer widths including input and output")
        g = p.add_mutually_exclusive_group()
        g.add_argument("--density", type=_fraction, help="target density of the first hidden layer")
        g.add_argument("--epsilon", type=float, help="ER sparsity parameter")
    if dataset:
        p.add_argument("--offline", action="store_true", help="never download datasets")
        p.add_argument("--cache-dir", help="dataset cache root (default $SPARSETOPO_CACHE)")
        p.add_argument("--data-seed", type=int, default=0, help="seed of the train/validation split")
        p.add_argument("--train-subset", type=int, help="use only the first N training examples")
    if training:
        p.add_argument("--epochs", type=int)
        p.add_argument("--batch-size", type=int, default=128)
        p.add_argument("--learning-rate", type=float, default=0.01)
        p.add_argument("--momentum", type=float, default=0.9)
        p.add_argument("--weight-decay", type=float, default=1e-6)
        p.add_argument("--prune-rate", type=float, default=0.2)
        p.add_argument("--snapshot-every", type=int)
        p.add_argument("--prune-criterion", choices=["magnitude", "signed"], default="magnitude")
        p.add_argument("--regrow-init", choices=list(REGROW_INITS), default="dense")
        p.add_argument("--init-scheme", choices=list(INIT_SCHEMES), default="sparse")
        p.add_argument("--augment", choices=["auto", "on", "off"], default="auto")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="sparsetopo", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("-v", "--verbose", action="count", default=0)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("init", help="sample an Erdos-Renyi sparse topology")
    _common(p)

    p = sub.add_parser("perturb", help="move a fraction of edges to empty positions")
    _common(p, topology_flags=False)
    p.add_argument("--topology", required=True)
    p.add_argument("--fraction", type=_fraction, default=0.01)
    p.add_argument("--generations", type=int, default=1)

    p = sub.add_parser("distance", help="NNSTD between two topology files")
    _common(p, topology_flags=False)
    p.add_argument("topologies", nargs="*", help="exactly two topology files")
    p.add_argument("--assignments", action="store_true", help="also write the neuron assignments")

    p = sub.add_parser("family", help="perturbation chain and its pairwise distance matrix")
    _common(p)
    p.add_argument("--generations", type=int, default=9)
    p.add_argument("--fraction", type=_fraction, default=0.01)
    p.add_argument("--perturb-seed", type=int, help="seed of the chain (default: --seed)")

    p = sub.add_parser("pairwise", help="pairwise NNSTD matrix of topology files")
    _common(p, topology_flags=False)
    p.add_argument("topologies", nargs="*", help="two or more topology files")
    p.add_argument("--layer", type=int, help="report one layer instead of the mean")
    p.add_argument("--labels", nargs="+")

    p = sub.add_parser("train", help="train one sparse MLP with SET or a fixed topology")
    _common(p, dataset=True, training=True)
    p.add_argument("--mode", type=str.upper, choices=["SET", "FIXED"], default="SET")
    p.add_argument("--topology", help="start from this topology instead of sampling one")

    p = sub.add_parser("density-sweep", help="test accuracy across densities, seeds and modes")
    _common(p, topology_flags=False, dataset=True, training=True)
    p.add_argument("--widths", type=int, nargs="+")
    p.add_argument("--densities", type=_fraction, nargs="+")
    p.add_argument("--seeds", type=int, nargs="+", default=[0, 1, 2])
    p.add_argument("--modes", type=str.upper, nargs="+", choices=["SET", "FIXED"], default=["FIXED", "SET"])
    p.add_argument("--family-size", type=int, default=1, help="1%%-perturbation members per root seed")
    p.add_argument("--no-dense", action="store_true", help="skip the dense baseline")

    p = sub.add_parser("evolve", help="train a family with SET and track topological distances")
    _common(p, dataset=True, training=True)
    p.add_argument("--mode", type=str.upper, choices=["SET", "FIXED"], default="SET")
    p.add_argument("--seeds", type=int, nargs="+", help="independent roots (default: a perturbation family)")
    p.add_argument("--family-size", type=int, default=4)
    p.add_argument("--fraction", type=_fraction, default=0.01)
    p.add_argument("--snapshot-epochs", type=int, nargs="+", default=[])

    p = sub.add_parser("retrain", help="retrain saved snapshots with fresh or stored weights")
    _common(p, topology_flags=False, dataset=True, training=True)
    p.add_argument("--traces", nargs="+", required=True, help="output directories of `train` runs")
    p.add_argument("--snapshot-epochs", type=int, nargs="+")
    p.add_argument("--modes", type=str.upper, nargs="+", choices=["RANDOM_REINIT", "CONTINUE"], default=["RANDOM_REINIT", "CONTINUE"])

    p = sub.add_parser("heatmap", help="render a matrix CSV with a fixed [0, 1] color range")
    _common(p, topology_flags=False)
    p.add_argument("--matrix", required=True)
    p.add_argument("--cmap", default="viridis")
    p.add_argument("--cell", type=int, default=24, help="pixels per matrix cell")
    return parser


# options that only steer where results go; everything else is recorded
_UNRECORDED = {"config", "out", "verbose", "command", "workers"}


def _read_config(path: str) -> dict:
    try:
        raw = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON ({exc})") from exc
    if not isinstance(raw, dict):
        raise ConfigError(f"{path}: expected a JSON object")
    return raw.get("args", raw)


def _scan(argv) -> tuple[str | None, str | None]:
    """The verb and the ``--config`` path, found without a full parse."""
    command = config = None
    for i, tok in enumerate(argv):
        if tok == "--config" and i + 1 < len(argv):
            config = argv[i + 1]
        elif tok.startswith("--config="):
            config = tok.split("=", 1)[1]
        elif command is None and not tok.startswith("-"):
            command = tok
    return command, config


def parse_args(argv) -> argparse.Namespace:
    parser = build_parser()
    command, config_path = _scan(argv)
    subparsers = parser._subparsers._group_actions[0].choices
    if config_path is None or command not in subparsers:
        return parser.parse_args(argv)
    config = _read_config(config_path)
    sub = subparsers[command]
    known = {a.dest for a in sub._actions}
    unknown = sorted(set(config) - known - {"command"})
    if unknown:
        raise ConfigError(f"unknown config keys for {command}: {', '.join(unknown)}")
    # config values become defaults, so explicit flags parsed afterwards win
    sub.set_defaults(**{k: v for k, v in config.items() if k in known and k not in _UNRECORDED})
    for action in sub._actions:
        if action.dest in config:
            action.required = False
    return parser.parse_args(argv)


def _resolve(args: argparse.Namespace) -> argparse.Namespace:
    preset = PRESETS[(args.dataset, args.scale)]
    if args.command == "retrain" and args.epochs is None:
        args.epochs = preset["retrain_epochs"]
    for key in ("widths", "epochs", "snapshot_every"):
        if hasattr(args, key) and getattr(args, key) is None:
            setattr(args, key, preset[key])
    if getattr(args, "widths", None) is not None:
        if len(args.widths) < 2 or min(args.widths) < 1:
            raise ConfigError(f"invalid widths {args.widths}")
    if hasattr(args, "epsilon") and hasattr(args, "density"):
        if args.epsilon is None and args.density is None:
            args.density = preset["density"]
        if args.epsilon is None:
            args.epsilon = epsilon_for_density(args.density, args.widths[0], args.widths[1])
        elif args.epsilon <= 0:
            raise ConfigError("epsilon must be positive")
    if getattr(args, "densities", "absent") is None:
        args.densities = FASHION_DENSITIES if args.dataset == "fashion_mnist" else CIFAR_DENSITIES
    if args.workers < 1:
        raise ConfigError("--workers must be >= 1")
    return args


def _recorded(args: argparse.Namespace) -> dict:
    return {k: v for k, v in sorted(vars(args).items()) if k not in _UNRECORDED}


# --- output helpers -------------------------------------------------------------


def _out_dir(args) -> Path:
    if not args.out:
        raise ConfigError("--out is required")
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _write_run_json(out: Path, args, outputs: list[str], results: dict | None = None) -> None:
    payload = {
        "command": args.command,
        "version": __version__,
        "args": _recorded(args),
        "outputs": sorted(outputs),
        "results": results or {},
    }
    atomic_write(out / "run.json", json.dumps(payload, indent=2, sort_keys=True) + "\n")


def _rows_to_csv(header: list[str], rows) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(header)
    for row in rows:
        writer.writerow([f"{x:.6f}" if isinstance(x, float) else x for x in row])
    return buf.getvalue()


def _load_topology(path: str) -> topo.NetworkTopology:
    return topo.load(path)


# --- topology verbs -------------------------------------------------------------


def cmd_init(args) -> dict:
    out = _out_dir(args)
    t = er_init(args.widths, ErConfig(args.epsilon, args.seed))
    topo.save(t, out / "topology.topo")
    results = {"edge_counts": list(t.edge_counts()), "density": topo.density(t)}
    _write_run_json(out, args, ["topology.topo"], results)
    print(f"edges per layer {list(t.edge_counts())}, density {topo.density(t):.6f}")
    return results


def cmd_perturb(args) -> dict:
    out = _out_dir(args)
    root = _load_topology(args.topology)
    chain = perturbation_chain(root, args.generations, args.fraction, args.seed)
    names = []
    for g, t in enumerate(chain[1:], start=1):
        names.append(f"gen_{g}.topo")
        topo.save(t, out / names[-1])
    _write_run_json(out, args, names, {"generations": args.generations})
    return {"files": names}


def cmd_distance(args) -> dict:
    if len(args.topologies) != 2:
        raise ConfigError("distance needs exactly two topology files")
    out = _out_dir(args)
    a, b = (_load_topology(p) for p in args.topologies)
    report = compare_networks(a, b)
    rows = [[f"layer_{k}", v] for k, v in enumerate(report.per_layer)] + [["nnstd", report.nnstd]]
    atomic_write(out / "distance.csv", _rows_to_csv(["layer", "distance"], rows))
    outputs = ["distance.csv"]
    if args.assignments:
        atomic_write(out / "assignments.json", report.to_json() + "\n")
        outputs.append("assignments.json")
    results = {"nnstd": report.nnstd, "per_layer": list(report.per_layer)}
    _write_run_json(out, args, outputs, results)
    print(f"nnstd {report.nnstd:.6f}  per layer {' '.join(f'{v:.6f}' for v in report.per_layer)}")
    return results


def _emit_matrices(out: Path, ts, labels, workers: int, prefix: str = "pairwise") -> tuple[np.ndarray, np.ndarray]:
    mean = pairwise_matrix(ts, workers=workers)
    first = pairwise_matrix(ts, layer=0, workers=workers)
    atomic_write(out / f"{prefix}.csv", matrix_to_csv(mean, labels))
    atomic_write(out / f"{prefix}_layer0.csv", matrix_to_csv(first, labels))
    return mean, first


def cmd_family(args) -> dict:
    out = _out_dir(args)
    root = er_init(args.widths, ErConfig(args.epsilon, args.seed))
    chain_seed = args.seed if args.perturb_seed is None else args.perturb_seed
    chain = perturbation_chain(root, args.generations, args.fraction, chain_seed)
    labels = [f"w{g}" for g in range(len(chain))]
    for label, t in zip(labels, chain):
        topo.save(t, out / f"{label}.topo")
    mean, _ = _emit_matrices(out, chain, labels, args.workers)
    outputs = [f"{label}.topo" for label in labels] + ["pairwise.csv", "pairwise_layer0.csv"]
    results = {"max": float(mean.max()), "d_first_last": float(mean[0, -1])}
    _write_run_json(out, args, outputs, results)
    print(matrix_to_csv(mean, labels), end="")
    return results


def cmd_pairwise(args) -> dict:
    if len(args.topologies) < 2:
        raise ConfigError("pairwise needs at least two topology files")
    out = _out_dir(args)
    ts = [_load_topology(p) for p in args.topologies]
    labels = args.labels or [Path(p).stem for p in args.topologies]
    if len(labels) != len(ts):
        raise ConfigError("need one label per topology")
    m = pairwise_matrix(ts, layer=args.layer, workers=args.workers)
    atomic_write(out / "pairwise.csv", matrix_to_csv(m, labels))
    _write_run_json(out, args, ["pairwise.csv"], {"max": float(m.max())})
    print(matrix_to_csv(m, labels), end="")
    return {"matrix": m.tolist()}


def cmd_heatmap(args) -> dict:
    out = _out_dir(args)
    try:
        text = Path(args.matrix).read_text()
    except UnicodeDecodeError as exc:
        raise datamod.ParseError(f"{args.matrix}: not a text file") from exc
    try:
        m, labels = matrix_from_csv(text)
    except ValueError as exc:
        raise datamod.ParseError(f"{args.matrix}: {exc}") from exc
    atomic_write(out / "heatmap.png", render_heatmap(m, args.cmap, args.cell))
    _write_run_json(out, args, ["heatmap.png"], {"shape": list(m.shape)})
    return {"shape": m.shape}


def render_heatmap(matrix: np.ndarray, cmap: str = "viridis", cell: int = 24) -> bytes:
    """PNG bytes of ``matrix`` with colors pinned to the value range [0, 1]."""
    from matplotlib import colormaps
    from PIL import Image

    if cell < 1:
        raise ConfigError("--cell must be >= 1")
    try:
        colormap = colormaps[cmap]
    except KeyError:
        raise ConfigError(f"unknown colormap {cmap!r}") from None
    values = np.clip(np.asarray(matrix, dtype=np.float64), 0.0, 1.0)
    rgb = (colormap(values)[..., :3] * 255).round().astype(np.uint8)
    rgb = np.repeat(np.repeat(rgb, cell, axis=0), cell, axis=1)
    buf = io.BytesIO()
    Image.fromarray(rgb, mode="RGB").save(buf, format="PNG")
    return buf.getvalue()


# --- training verbs -------------------------------------------------------------


@functools.lru_cache(maxsize=2)
def _dataset(name: str, cache_dir, data_seed: int, offline: bool, train_subset):
    ds = datamod.load_dataset(name, cache_dir, seed=data_seed, offline=offline)
    if train_subset is not None:
        ds = ds.subset(n_train=train_subset)
    return ds


def _data_for(args):
    return _dataset(args.dataset, args.cache_dir, args.data_seed, args.offline, args.train_subset)


def _configs(args, mode: str, seed: int) -> tuple[TrainConfig, SetConfig]:
    try:
        cfg = TrainConfig(
            learning_rate=args.learning_rate,
            momentum=args.momentum,
            weight_decay=args.weight_decay,
            batch_size=args.batch_size,
            epochs=args.epochs,
            seed=seed,
            init_scheme=args.init_scheme,
        )
        set_cfg = SetConfig(
            prune_rate=args.prune_rate,
            snapshot_every=args.snapshot_every,
            mode=Mode(mode),
            prune_criterion=args.prune_criterion,
            regrow_init=args.regrow_init,
        )
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    return cfg, set_cfg


def _augmenter(args, image_shape):
    use = args.augment == "on" or (args.augment == "auto" and args.dataset == "cifar10")
    if not use:
        return None
    if image_shape != (3, 32, 32):
        raise ConfigError("augmentation needs 3x32x32 images")
    return datamod.augment


def _train_one(job: dict) -> dict:
    """Train one network into ``job['dir']``; picklable for worker processes."""
    args = argparse.Namespace(**job["args"])
    data = _data_for(args)
    if data.feature_dim != job["topology"].layer_widths[0]:
        raise ConfigError(f"widths start at {job['topology'].layer_widths[0]}, data has {data.feature_dim} features")
    mode = job["mode"]
    if topo.density(job["topology"]) == 1.0:
        mode = "FIXED"  # a full network has no empty positions to regrow into
    cfg, set_cfg = _configs(args, mode, job["seed"])
    net = init_weights(job["topology"], job["seed"], cfg.init_scheme)
    out = Path(job["dir"])
    _, trace = train(
        net,
        data,
        cfg,
        set_cfg,
        trace_dir=out,
        keep_snapshot_nets=False,
        extra_snapshots=job.get("extra_snapshots", ()),
        augment=_augmenter(args, data.image_shape),
    )
    tops = trace.topologies()
    drift_rows = []
    for epoch in sorted(tops):
        report = compare_networks(tops[0], tops[epoch])
        drift_rows.append([epoch, report.nnstd, *report.per_layer])
    header = ["epoch", "nnstd"] + [f"layer_{k}" for k in range(tops[0].num_layers)]
    atomic_write(out / "drift.csv", _rows_to_csv(header, drift_rows))
    return {
        "test_acc": trace.test_acc,
        "best_val_acc": trace.best_val_acc,
        "best_epoch": trace.best_epoch,
        "snapshot_epochs": sorted(tops),
        "final_drift": drift_rows[-1][1],
    }


def _run_jobs(fn, jobs: list, workers: int) -> list:
    if workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            return list(pool.map(fn, jobs))
    return [fn(job) for job in jobs]


def _job_args(args) -> dict:
    return {k: v for k, v in vars(args).items() if k not in ("config",)}


def cmd_train(args) -> dict:
    out = _out_dir(args)
    if args.topology:
        t = _load_topology(args.topology)
        if args.widths and list(t.layer_widths) != list(args.widths):
            log.info("using widths %s from %s", list(t.layer_widths), args.topology)
        args.widths = list(t.layer_widths)
    else:
        t = er_init(args.widths, ErConfig(args.epsilon, args.seed))
    job = {"args": _job_args(args), "topology": t, "mode": args.mode, "seed": args.seed, "dir": str(out)}
    res = _train_one(job)
    row = [args.seed, args.mode, topo.density(t), res["best_epoch"], res["best_val_acc"], res["test_acc"]]
    atomic_write(out / "result.csv", _rows_to_csv(["seed", "mode", "density", "best_epoch", "best_val_acc", "test_acc"], [row]))
    outputs = ["metrics.csv", "drift.csv", "result.csv"] + [
        f"snapshots/epoch_{e}.{ext}" for e in res["snapshot_epochs"] for ext in ("topo", "ckpt")
    ]
    _write_run_json(out, args, outputs, res)
    print(f"test accuracy {res['test_acc']:.4f} (best validation epoch {res['best_epoch']})")
    return res


def _family(args, seed: int, size: int, fraction: float = 0.01) -> list[topo.NetworkTopology]:
    root = er_init(args.widths, ErConfig(args.epsilon, seed))
    return perturbation_chain(root, size - 1, fraction, seed) if size > 1 else [root]


def _summary(rows, keys: tuple[int, ...], value: int) -> list[list]:
    groups: dict[tuple, list[float]] = {}
    for row in rows:
        groups.setdefault(tuple(row[k] for k in keys), []).append(row[value])
    out = []
    for key in sorted(groups):
        v = np.array(groups[key])
        out.append([*key, float(v.mean()), float(v.std(ddof=1)) if v.size > 1 else 0.0, int(v.size)])
    return out


def cmd_density_sweep(args) -> dict:
    out = _out_dir(args)
    jobs, meta = [], []
    base = _job_args(args)
    densities = list(args.densities) + ([] if args.no_dense else [1.0])
    for density in densities:
        eps = epsilon_for_density(density, args.widths[0], args.widths[1])
        sub = argparse.Namespace(**dict(base, epsilon=eps))
        modes = ["DENSE"] if density == 1.0 else args.modes
        for seed in args.seeds:
            size = 1 if density == 1.0 else args.family_size
            for member, t in enumerate(_family(sub, seed, size)):
                for mode in modes:
                    tag = f"d{density:g}_s{seed}_m{member}_{mode.lower()}"
                    jobs.append({"args": base, "topology": t, "mode": "FIXED" if mode == "DENSE" else mode,
                                 "seed": seed * 1000 + member, "dir": str(out / "runs" / tag)})
                    meta.append([density, seed, member, mode])
    results = _run_jobs(_train_one, jobs, args.workers)
    rows = [[*m, r["best_val_acc"], r["test_acc"]] for m, r in zip(meta, results)]
    atomic_write(out / "accuracy.csv", _rows_to_csv(["density", "seed", "member", "mode", "best_val_acc", "test_acc"], rows))
    summary = _summary(rows, (0, 3), 5)
    atomic_write(out / "summary.csv", _rows_to_csv(["density", "mode", "mean_test_acc", "std_test_acc", "n"], summary))
    _write_run_json(out, args, ["accuracy.csv", "summary.csv"], {"summary": summary})
    print(_rows_to_csv(["density", "mode", "mean_test_acc", "std_test_acc", "n"], summary), end="")
    return {"rows": rows, "summary": summary}


def cmd_evolve(args) -> dict:
    out = _out_dir(args)
    if args.seeds:
        members = [(f"s{s}", s, er_init(args.widths, ErConfig(args.epsilon, s))) for s in args.seeds]
    else:
        chain = _family(args, args.seed, args.family_size, args.fraction)
        members = [(f"w{g}", args.seed * 1000 + g, t) for g, t in enumerate(chain)]
    base = _job_args(args)
    jobs = [
        {"args": base, "topology": t, "mode": args.mode, "seed": seed, "dir": str(out / "runs" / label),
         "extra_snapshots": tuple(args.snapshot_epochs)}
        for label, seed, t in members
    ]
    results = _run_jobs(_train_one, jobs, args.workers)
    labels = [m[0] for m in members]
    epochs = sorted(set.intersection(*(set(r["snapshot_epochs"]) for r in results)))
    outputs, pair_rows, traj_rows = [], [], []
    for e in epochs:
        ts = [topo.load(out / "runs" / label / "snapshots" / f"epoch_{e}.topo") for label in labels]
        mean, first = _emit_matrices(out, ts, labels, args.workers, prefix=f"pairwise_epoch_{e}")
        outputs += [f"pairwise_epoch_{e}.csv", f"pairwise_epoch_{e}_layer0.csv"]
        off = ~np.eye(len(ts), dtype=bool)
        if len(ts) > 1:
            pair_rows.append([e, float(mean[off].mean()), float(mean[off].max()), float(first[off].mean())])
    for label in labels:
        with open(out / "runs" / label / "drift.csv") as fh:
            for row in list(csv.reader(fh))[1:]:
                traj_rows.append([label, int(row[0]), float(row[1])])
    atomic_write(out / "pairwise_summary.csv", _rows_to_csv(["epoch", "mean_nnstd", "max_nnstd", "mean_layer0"], pair_rows))
    atomic_write(out / "trajectory.csv", _rows_to_csv(["run", "epoch", "nnstd_to_epoch0"], traj_rows))
    acc_rows = [[label, r["best_epoch"], r["best_val_acc"], r["test_acc"]] for label, r in zip(labels, results)]
    atomic_write(out / "accuracy.csv", _rows_to_csv(["run", "best_epoch", "best_val_acc", "test_acc"], acc_rows))
    outputs += ["pairwise_summary.csv", "trajectory.csv", "accuracy.csv"]
    accs = [r["test_acc"] for r in results]
    summary = {
        "epochs": epochs,
        "mean_pairwise": {str(r[0]): r[1] for r in pair_rows},
        "test_acc_spread": float(max(accs) - min(accs)),
    }
    _write_run_json(out, args, outputs, summary)
    print(_rows_to_csv(["epoch", "mean_nnstd", "max_nnstd", "mean_layer0"], pair_rows), end="")
    return summary


def _retrain_one(job: dict) -> float:
    args = argparse.Namespace(**job["args"])
    data = _data_for(args)
    snap = load_snapshot(job["trace"], job["epoch"])
    cfg, _ = _configs(args, "FIXED", job["seed"])
    return retrain(snap, RetrainMode(job["mode"]), data, cfg, augment=_augmenter(args, data.image_shape))


def cmd_retrain(args) -> dict:
    out = _out_dir(args)
    base = _job_args(args)
    jobs, meta = [], []
    for k, trace in enumerate(args.traces):
        trace = Path(trace)
        # a stream of its own, so RANDOM_REINIT never redraws the trace's initial weights
        seed = int(make_rng(args.seed, 10, k).integers(2**31))
        available = sorted(int(p.stem.split("_")[1]) for p in (trace / "snapshots").glob("epoch_*.topo"))
        if not available:
            raise FileNotFoundError(f"no snapshots under {trace}")
        epochs = args.snapshot_epochs or available
        missing = sorted(set(epochs) - set(available))
        if missing:
            raise FileNotFoundError(f"{trace}: no snapshot for epochs {missing}")
        for e in epochs:
            for mode in args.modes:
                jobs.append({"args": base, "trace": str(trace), "epoch": e, "mode": mode, "seed": seed})
                meta.append([trace.name, e, mode])
    accs = _run_jobs(_retrain_one, jobs, args.workers)
    rows = [[*m, a] for m, a in zip(meta, accs)]
    atomic_write(out / "retrain.csv", _rows_to_csv(["trace", "snapshot_epoch", "mode", "test_acc"], rows))
    summary = _summary(rows, (1, 2), 3)
    atomic_write(out / "summary.csv", _rows_to_csv(["snapshot_epoch", "mode", "mean_test_acc", "std_test_acc", "n"], summary))
    _write_run_json(out, args, ["retrain.csv", "summary.csv"], {"summary": summary})
    print(_rows_to_csv(["snapshot_epoch", "mode", "mean_test_acc", "std_test_acc", "n"], summary), end="")
    return {"rows": rows, "summary": summary}


TRAINING_COMMANDS = {"train", "density-sweep", "evolve", "retrain"}

COMMANDS = {
    "init": cmd_init,
    "perturb": cmd_perturb,
    "distance": cmd_distance,
    "family": cmd_family,
    "pairwise": cmd_pairwise,
    "train": cmd_train,
    "density-sweep": cmd_density_sweep,
    "evolve": cmd_evolve,
    "retrain": cmd_retrain,
    "heatmap": cmd_heatmap,
}


def main(argv=None) -> int:
    argv = sys.argv[1:] if argv is None else list(argv)
    try:
        args = parse_args(argv)
    except SystemExit as exc:  # argparse usage errors and --help/--version
        return EXIT_OK if exc.code in (0, None) else EXIT_CONFIG
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except OSError as exc:
        print(f"io error: {exc}", file=sys.stderr)
        return EXIT_IO
    level = logging.WARNING - 10 * min(args.verbose, 2)
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s")
    try:
        _resolve(args)
        COMMANDS[args.command](args)
    except topo.RegrowthError as exc:
        code = EXIT_TRAINING if args.command in TRAINING_COMMANDS else EXIT_CONFIG
        print(f"rewiring error: {exc}", file=sys.stderr)
        return code
    except (ConfigError, topo.TopologyError, argparse.ArgumentTypeError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (topo.TopologyParseError, datamod.ParseError) as exc:
        print(f"parse error: {exc}", file=sys.stderr)
        return EXIT_PARSE
    except (OSError, datamod.DataError) as exc:
        print(f"io error: {exc}", file=sys.stderr)
        return EXIT_IO
    except TrainingError as exc:
        print(f"training error: {exc}", file=sys.stderr)
        return EXIT_TRAINING
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
