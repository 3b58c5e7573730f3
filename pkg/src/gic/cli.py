"""Command-line surface: train, eval, encode, coarsen, cut-check.

Exit codes: 0 success, 1 runtime failure, 2 usage or input error. Primary
output files are byte-identical across reruns with equal inputs and seed;
the metrics stream is a log (it carries wall-clock durations) and is not.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import math
import sys
from pathlib import Path

import numpy as np

from .checkpoint import load_network, save_network
from .coarsen import build_kernel, coarsen, em_cluster, vertex_weights
from .cuts import (MAX_ENUM_VERTICES, brute_force_min_cut, cut_objective,
                   partition_from_assignments)
from .datasets import (apply_features, load_tu_dataset, save_graphs_jsonl,
                       load_graphs_jsonl)
from .errors import CheckpointError, ConfigError, DataFormatError
from .graphs import AttributeGraph, GraphError, laplacian
from .network import GicNetwork
from .synthetic import random_connected_adjacency
from .train import (MetricsWriter, NetworkConfig, SgdState, build_network,
                    cross_validate, evaluate, train_epoch)

USAGE_ERROR = 2
RUNTIME_ERROR = 1


def _load_config(args) -> NetworkConfig:
    values: dict = {}
    if args.config:
        path = Path(args.config)
        if not path.exists():
            raise ConfigError(f"config file not found: {path}")
        values = json.loads(path.read_text())
        unknown = set(values) - {f.name for f in dataclasses.fields(NetworkConfig)}
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
    for item in args.set or []:
        if "=" not in item:
            raise ConfigError(f"--set expects key=value, got {item!r}")
        key, _, raw = item.partition("=")
        values[key] = raw
    if getattr(args, "seed", None) is not None:
        values["master_seed"] = args.seed

    fields = {f.name: f.type for f in dataclasses.fields(NetworkConfig)}
    coerced = {}
    for key, raw in values.items():
        if key not in fields:
            raise ConfigError(f"unknown config key {key!r}")
        if isinstance(raw, str) and fields[key] != "str":
            kind = fields[key]
            try:
                raw = float(raw) if kind == "float" else int(raw)
            except ValueError:
                raise ConfigError(f"config key {key!r}: bad value {raw!r}") from None
        coerced[key] = raw
    return NetworkConfig(**coerced)


def _load_collection(args):
    directory = Path(args.dataset)
    if not directory.is_dir():
        raise ConfigError(f"dataset directory not found: {directory}")
    collection = load_tu_dataset(directory, args.name)
    has_labels = all(g.node_labels is not None for g in collection.graphs)
    return apply_features(collection, use_labels=has_labels, use_degree=True)


def cmd_train(args) -> int:
    cfg = _load_config(args)
    collection = _load_collection(args)
    prefix = Path(args.output)

    prefix.parent.mkdir(parents=True, exist_ok=True)
    with open(f"{prefix}.metrics.jsonl", "w") as stream:
        report = cross_validate(collection, cfg, MetricsWriter(stream))
    Path(f"{prefix}.report.json").write_text(report.canonical_json() + "\n")

    # final model on the full dataset, for eval/encode reuse
    network = build_network(cfg, collection.feature_dim, collection.num_classes)
    state = SgdState.for_params(network.parameters(), cfg.learning_rate,
                                cfg.momentum)
    root = np.random.SeedSequence(cfg.master_seed, spawn_key=(2**32 - 1,))
    for epoch_seed in root.spawn(cfg.epochs):
        train_epoch(network, collection.graphs, state,
                    np.random.default_rng(epoch_seed), batch_size=cfg.batch_size)
    save_network(f"{prefix}.ckpt", network)

    print(report.canonical_json())
    return 0


def cmd_eval(args) -> int:
    network = load_network(args.checkpoint)
    collection = _load_collection(args)
    loss, accuracy = evaluate(network, collection.graphs)
    print(json.dumps({"accuracy": accuracy, "loss": loss}, sort_keys=True))
    return 0


def cmd_encode(args) -> int:
    network = load_network(args.checkpoint)
    collection = _load_collection(args)
    with open(args.output, "w") as fh:
        for i, g in enumerate(collection.graphs):
            vec = network.encode(g)
            fh.write(json.dumps({"index": i, "feature": vec.tolist()}) + "\n")
    print(f"wrote {len(collection.graphs)} encodings to {args.output}")
    return 0


def cmd_coarsen(args) -> int:
    collection = _load_collection(args)
    coarse = []
    for idx, g in enumerate(collection.graphs):
        C2 = min(max(1, math.ceil(args.rho * g.m)), g.m)
        w = vertex_weights(g.attributes, args.weight_mode)
        K = build_kernel(laplacian(g, "combinatorial"), w)
        state = em_cluster(K, w, C2, seed=args.seed or 0,
                           tiebreak=g.attributes)
        coarse.append(coarsen(g, state))
    save_graphs_jsonl(coarse, args.output)
    print(f"wrote {len(coarse)} coarsened graphs to {args.output}")
    return 0


def _cut_check_graphs(args):
    if args.dataset:
        collection = _load_collection(args)
        for g in collection.graphs:
            yield g.adjacency, np.ones(g.m)
        return
    rng = np.random.default_rng(args.seed or 0)
    for trial in range(args.count):
        m = int(rng.integers(4, 9))
        A = random_connected_adjacency(m, 0.35, rng, weighted=bool(trial % 2))
        w = np.ones(m) if trial % 4 < 2 else rng.uniform(0.5, 2.0, size=m)
        yield A, w


def cmd_cut_check(args) -> int:
    out = open(args.output, "w") if args.output else sys.stdout
    try:
        within, total = 0, 0
        for A, w in _cut_check_graphs(args):
            m = A.shape[0]
            if m > MAX_ENUM_VERTICES:
                out.write(json.dumps({"m": m, "skipped":
                                      f"enumeration bound is {MAX_ENUM_VERTICES}"})
                          + "\n")
                continue
            g = AttributeGraph(A, np.zeros((m, 1)))
            K = build_kernel(laplacian(g, "combinatorial"), w)
            state = em_cluster(K, w, args.clusters, seed=args.seed or 0,
                               restarts=args.restarts)
            em_obj = cut_objective(
                partition_from_assignments(state.assignments), A, w)
            _, opt = brute_force_min_cut(A, w, args.clusters)
            if opt > 0:
                ratio = em_obj / opt
            else:
                ratio = 1.0 if em_obj == 0 else None
            ok = ratio is not None and ratio <= 1.10
            within += ok
            total += 1
            out.write(json.dumps({
                "m": m, "C2": args.clusters, "em_objective": em_obj,
                "optimal_objective": opt, "ratio": ratio,
            }, sort_keys=True) + "\n")
        summary = {"instances": total, "within_10pct": within,
                   "fraction": within / total if total else None}
        out.write(json.dumps(summary, sort_keys=True) + "\n")
    finally:
        if out is not sys.stdout:
            out.close()
    return 0


def _parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="gic", description="Graph classification with mixture-gradient "
        "convolution and kernel-EM coarsening")
    sub = parser.add_subparsers(dest="command", required=True)

    def add_dataset_flags(p, required=True):
        p.add_argument("--dataset", required=required,
                       help="directory with TU-format files")
        p.add_argument("--name", required=required, help="dataset name prefix")

    p = sub.add_parser("train", help="cross-validate and fit a final model")
    add_dataset_flags(p)
    p.add_argument("--config", help="JSON file with config fields")
    p.add_argument("--set", action="append", metavar="KEY=VALUE",
                   help="override one config field")
    p.add_argument("--seed", type=int, help="master seed override")
    p.add_argument("--output", default="gic_run",
                   help="prefix for report/metrics/checkpoint files")
    p.set_defaults(fn=cmd_train)

    p = sub.add_parser("eval", help="accuracy of a checkpoint on a dataset")
    add_dataset_flags(p)
    p.add_argument("--checkpoint", required=True)
    p.set_defaults(fn=cmd_eval)

    p = sub.add_parser("encode", help="write per-graph feature vectors")
    add_dataset_flags(p)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--output", required=True)
    p.set_defaults(fn=cmd_encode)

    p = sub.add_parser("coarsen", help="write EM-coarsened graphs as JSONL")
    add_dataset_flags(p)
    p.add_argument("--rho", type=float, default=0.25)
    p.add_argument("--weight-mode", default="uniform",
                   choices=["uniform", "attribute-norm"])
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--output", required=True)
    p.set_defaults(fn=cmd_coarsen)

    p = sub.add_parser("cut-check",
                       help="compare em_cluster cuts against brute force")
    add_dataset_flags(p, required=False)
    p.add_argument("--count", type=int, default=100,
                   help="number of generated graphs when no dataset is given")
    p.add_argument("--clusters", type=int, default=2)
    p.add_argument("--restarts", type=int, default=5)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--output", help="default: stdout")
    p.set_defaults(fn=cmd_cut_check)
    return parser


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    try:
        return args.fn(args)
    except (ConfigError, DataFormatError, CheckpointError, GraphError,
            FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return USAGE_ERROR
    except Exception as exc:  # noqa: BLE001 — boundary: report, don't crash
        print(f"runtime failure: {exc}", file=sys.stderr)
        return RUNTIME_ERROR


if __name__ == "__main__":
    sys.exit(main())
