"""SGD-with-momentum training and the stratified cross-validation protocol."""

from __future__ import annotations

import json
import os
import time
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, asdict

import numpy as np

from . import autodiff as ad
from .datasets import GraphCollection
from .errors import ConfigError
from .network import GicNetwork


@dataclass
class NetworkConfig:
    architecture: str = "C(16)-P(0.25)-C(32)-P-FC(32)"
    num_scales: int = 3
    num_components: int = 3
    learning_rate: float = 0.1
    momentum: float = 0.95
    batch_size: int = 100
    epochs: int = 100
    folds: int = 10
    repeats: int = 1
    master_seed: int = 0
    c_final: int = 1
    weight_mode: str = "uniform"
    khop_variant: str = "walk"
    em_restarts: int = 3

    def __post_init__(self):
        if self.num_scales < 1 or self.num_components < 1:
            raise ConfigError("num_scales and num_components must be >= 1")
        if min(self.batch_size, self.epochs, self.folds, self.repeats) < 1:
            raise ConfigError("batch_size, epochs, folds, repeats must be >= 1")


def build_network(cfg: NetworkConfig, feature_dim: int, num_classes: int,
                  seed: int | None = None) -> GicNetwork:
    return GicNetwork(
        cfg.architecture, feature_dim, num_classes,
        num_scales=cfg.num_scales, num_components=cfg.num_components,
        c_final=cfg.c_final, weight_mode=cfg.weight_mode,
        khop_variant=cfg.khop_variant, em_restarts=cfg.em_restarts,
        seed=cfg.master_seed if seed is None else seed,
    )


@dataclass
class SgdState:
    learning_rate: float
    momentum: float
    velocities: dict = field(default_factory=dict)

    @classmethod
    def for_params(cls, params: dict, learning_rate: float, momentum: float):
        vel = {name: np.zeros_like(p.data) for name, p in params.items()}
        return cls(learning_rate, momentum, vel)


def sgd_step(params: dict, grads: dict, state: SgdState) -> dict:
    """v <- momentum*v - lr*grad; p <- p + v (in place)."""
    for name, p in params.items():
        v = state.velocities[name]
        v *= state.momentum
        v -= state.learning_rate * grads[name]
        p.data += v
    return params


def train_epoch(network: GicNetwork, graphs, state: SgdState, rng,
                batch_size: int | None = None) -> float:
    """One pass: seeded shuffle, per-batch gradient averaging, one step each."""
    if not graphs:
        raise ConfigError("training set is empty")
    params = network.parameters()
    order = rng.permutation(len(graphs))
    total = 0.0
    batch = len(order) if batch_size is None else min(batch_size, len(order))
    for start in range(0, len(order), batch):
        idx = order[start:start + batch]
        for p in params.values():
            p.zero_grad()
        for i in idx:
            with ad.Tape():
                loss = network.loss(graphs[i])
                ad.backward(loss)
            total += float(loss.data)
        grads = {name: p.grad / len(idx) for name, p in params.items()}
        sgd_step(params, grads, state)
    return total / len(graphs)


def evaluate(network: GicNetwork, graphs) -> tuple[float, float]:
    """(mean loss, accuracy) without touching parameters."""
    losses, correct = [], 0
    for g in graphs:
        logits = network.forward(g).data
        shift = logits.max()
        losses.append(float(np.log(np.exp(logits - shift).sum()) + shift
                            - logits[g.label]))
        correct += int(np.argmax(logits) == g.label)
    return float(np.mean(losses)), correct / len(graphs)


def stratified_folds(labels, folds: int, rng) -> list[np.ndarray]:
    """Seeded stratified split: per-class shuffle, round-robin deal."""
    labels = np.asarray(labels)
    if folds > len(labels):
        raise ConfigError(f"{folds} folds for {len(labels)} graphs")
    buckets: list[list[int]] = [[] for _ in range(folds)]
    cursor = 0
    for cls in np.unique(labels):
        members = np.flatnonzero(labels == cls)
        for i in rng.permutation(members):
            buckets[cursor % folds].append(int(i))
            cursor += 1
    return [np.sort(np.asarray(b, dtype=np.intp)) for b in buckets]


@dataclass
class FoldReport:
    per_fold: list          # accuracy per (repeat, fold), repeat-major
    mean: float
    std: float
    folds: int
    repeats: int
    seed: int
    wall_clock: float       # excluded from canonical form (not reproducible)

    @classmethod
    def from_accuracies(cls, acc, folds, repeats, seed, wall_clock):
        acc = [float(a) for a in acc]
        return cls(acc, float(np.mean(acc)), float(np.std(acc)),
                   folds, repeats, seed, wall_clock)

    def canonical_json(self) -> str:
        payload = {k: v for k, v in asdict(self).items() if k != "wall_clock"}
        return json.dumps(payload, sort_keys=True, separators=(",", ":"))


class MetricsWriter:
    """Line-oriented JSON metrics: {phase, epoch, fold, repeat, loss, accuracy, seconds}."""

    def __init__(self, stream):
        self.stream = stream

    def emit(self, records):
        for rec in records:
            self.stream.write(json.dumps(rec, sort_keys=True) + "\n")
        self.stream.flush()


def _thread_budget(n_jobs: int) -> int:
    cap = os.environ.get("GIC_THREADS")
    limit = int(cap) if cap else (os.cpu_count() or 1)
    return max(1, min(n_jobs, limit))


def _run_fold(collection, cfg, fold_sets, repeat, fold):
    t0 = time.perf_counter()
    test_idx = set(map(int, fold_sets[fold]))
    train_graphs = [g for i, g in enumerate(collection.graphs) if i not in test_idx]
    test_graphs = [collection.graphs[i] for i in sorted(test_idx)]

    present = {g.label for g in train_graphs}
    if len(present) < collection.num_classes:
        warnings.warn(f"repeat {repeat} fold {fold}: training split is missing "
                      f"{collection.num_classes - len(present)} class(es)")

    run_seed = int(np.random.SeedSequence(
        cfg.master_seed, spawn_key=(repeat, fold)).generate_state(1)[0])
    network = build_network(cfg, collection.feature_dim,
                            collection.num_classes, seed=run_seed)
    params = network.parameters()
    state = SgdState.for_params(params, cfg.learning_rate, cfg.momentum)

    records = []
    epoch_root = np.random.SeedSequence(cfg.master_seed,
                                        spawn_key=(repeat, fold, 1))
    for epoch, epoch_seed in enumerate(epoch_root.spawn(cfg.epochs)):
        te = time.perf_counter()
        loss = train_epoch(network, train_graphs, state,
                           np.random.default_rng(epoch_seed),
                           batch_size=cfg.batch_size)
        records.append({"phase": "train", "epoch": epoch, "fold": fold,
                        "repeat": repeat, "loss": loss, "accuracy": None,
                        "seconds": round(time.perf_counter() - te, 6)})
    test_loss, accuracy = evaluate(network, test_graphs)
    records.append({"phase": "eval", "epoch": cfg.epochs, "fold": fold,
                    "repeat": repeat, "loss": test_loss, "accuracy": accuracy,
                    "seconds": round(time.perf_counter() - t0, 6)})
    return accuracy, records, network


def cross_validate(collection: GraphCollection, cfg: NetworkConfig,
                   metrics: MetricsWriter | None = None) -> FoldReport:
    """Stratified k-fold, repeated; a fresh seeded network per run."""
    if len(collection.graphs) < cfg.folds:
        raise ConfigError(f"{cfg.folds} folds need at least {cfg.folds} graphs")
    t0 = time.perf_counter()
    labels = [g.label for g in collection.graphs]

    jobs = []
    for repeat in range(cfg.repeats):
        split_rng = np.random.default_rng(
            np.random.SeedSequence(cfg.master_seed, spawn_key=(repeat,)))
        fold_sets = stratified_folds(labels, cfg.folds, split_rng)
        for fold in range(cfg.folds):
            jobs.append((fold_sets, repeat, fold))

    workers = _thread_budget(len(jobs))
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(
                lambda j: _run_fold(collection, cfg, *j), jobs))
    else:
        results = [_run_fold(collection, cfg, *j) for j in jobs]

    if metrics is not None:
        for _, records, _ in results:
            metrics.emit(records)
    accuracies = [acc for acc, _, _ in results]
    return FoldReport.from_accuracies(
        accuracies, cfg.folds, cfg.repeats, cfg.master_seed,
        wall_clock=time.perf_counter() - t0)
