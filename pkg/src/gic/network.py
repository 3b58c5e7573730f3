"""Architecture strings and the stacked convolution/coarsening network.

A network is described by a dash-separated stage string such as
``"C(16)-P(0.25)-C(32)-P-FC(32)"``: convolution stages ``C(width)``,
coarsening stages ``P(rho)`` (cluster count ``max(1, ceil(rho*m))``), one
bare ``P`` that pools to a fixed ``c_final`` vertex count, and a final
``FC(width)`` head. The bare pooling stage must directly precede the head:
it is what gives the flattened head input a graph-independent size.
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .coarsen import (build_kernel, coarsen_adjacency, em_cluster,
                      pool_attributes, vertex_weights)
from .conv import EiGmmConvLayer, conv_apply
from .errors import ConfigError
from .graphs import AttributeGraph, field_matrix, laplacian


@dataclass(frozen=True)
class ConvStage:
    width: int


@dataclass(frozen=True)
class PoolStage:
    rho: float | None  # None: pool to the fixed final vertex count


@dataclass(frozen=True)
class FcStage:
    width: int


_TOKENS = {
    "C": re.compile(r"C\((\d+)\)\Z"),
    "P": re.compile(r"P(?:\(([0-9.eE+-]+)\))?\Z"),
    "FC": re.compile(r"FC\((\d+)\)\Z"),
}


def parse_architecture(text: str):
    """Parse a stage string; malformed tokens raise with their position."""
    stages = []
    pos = 0
    for token in text.split("-"):
        if m := _TOKENS["FC"].match(token):
            stages.append(FcStage(int(m.group(1))))
        elif m := _TOKENS["C"].match(token):
            stages.append(ConvStage(int(m.group(1))))
        elif m := _TOKENS["P"].match(token):
            if m.group(1) is None:
                stages.append(PoolStage(None))
            else:
                try:
                    rho = float(m.group(1))
                except ValueError:
                    raise ConfigError(
                        f"bad coarsening factor in {token!r} at position {pos}"
                    ) from None
                if not 0.0 < rho <= 1.0:
                    raise ConfigError(
                        f"coarsening factor {rho} at position {pos} outside (0, 1]"
                    )
                stages.append(PoolStage(rho))
        else:
            raise ConfigError(f"bad architecture token {token!r} at position {pos}")
        pos += len(token) + 1

    if sum(isinstance(s, FcStage) for s in stages) != 1 \
            or not isinstance(stages[-1], FcStage):
        raise ConfigError("architecture needs exactly one FC stage, at the end")
    if not any(isinstance(s, ConvStage) for s in stages):
        raise ConfigError("architecture needs at least one C stage")
    if not (isinstance(stages[-2], PoolStage) and stages[-2].rho is None):
        raise ConfigError(
            "the FC head must be preceded by a bare P stage "
            "(fixed-size final pooling)"
        )
    for s in stages[:-2]:
        if isinstance(s, PoolStage) and s.rho is None:
            raise ConfigError("only the pooling stage before FC may be bare")
    if any(s.width < 1 for s in stages if isinstance(s, (ConvStage, FcStage))):
        raise ConfigError("stage widths must be positive")
    return stages


def _seed_int(master: int, key: int) -> int:
    return int(np.random.SeedSequence(master, spawn_key=(key,)).generate_state(1)[0])


class GicNetwork:
    """Alternating convolution/coarsening stages with an FC softmax head."""

    def __init__(self, architecture: str, in_dim: int, num_classes: int,
                 num_scales: int = 3, num_components: int = 3,
                 c_final: int = 1, weight_mode: str = "uniform",
                 khop_variant: str = "walk", em_restarts: int = 3,
                 seed: int = 0):
        if num_classes < 2:
            raise ConfigError("need at least two classes")
        if c_final < 1:
            raise ConfigError("c_final must be positive")
        self.stages = parse_architecture(architecture)
        self.architecture = architecture
        self.in_dim = in_dim
        self.num_classes = num_classes
        self.num_scales = num_scales
        self.num_components = num_components
        self.c_final = c_final
        self.weight_mode = weight_mode
        self.khop_variant = khop_variant
        self.em_restarts = em_restarts
        self.seed = seed

        self.conv_layers: list[EiGmmConvLayer] = []
        width = in_dim
        for idx, stage in enumerate(self.stages):
            if isinstance(stage, ConvStage):
                self.conv_layers.append(EiGmmConvLayer(
                    width, stage.width, num_scales, num_components,
                    seed=_seed_int(seed, idx),
                ))
                width = stage.width
        self.last_width = width

        fc = self.stages[-1]
        self.fc_in = c_final * width
        rng = np.random.default_rng(_seed_int(seed, len(self.stages)))
        self.fc_hidden_w = ad.Value(
            rng.normal(scale=1.0 / np.sqrt(self.fc_in), size=(self.fc_in, fc.width)),
            requires_grad=True)
        self.fc_hidden_b = ad.Value(np.zeros(fc.width), requires_grad=True)
        self.fc_out_w = ad.Value(
            rng.normal(scale=1.0 / np.sqrt(fc.width), size=(fc.width, num_classes)),
            requires_grad=True)
        self.fc_out_b = ad.Value(np.zeros(num_classes), requires_grad=True)

        # structural cascade per graph; only valid while weights ignore
        # attribute values (key holds the graph to keep ids unique)
        self._structure_cache: dict[int, tuple] = {}

    @property
    def depth(self) -> int:
        """Stacked stage count, the classifier output included."""
        return len(self.stages) + 1

    def parameters(self) -> dict[str, ad.Value]:
        params: dict[str, ad.Value] = {}
        for i, layer in enumerate(self.conv_layers):
            for name, p in layer.parameters().items():
                params[f"conv{i}.{name}"] = p
        params["fc.hidden.weight"] = self.fc_hidden_w
        params["fc.hidden.bias"] = self.fc_hidden_b
        params["fc.out.weight"] = self.fc_out_w
        params["fc.out.bias"] = self.fc_out_b
        return params

    def _pool(self, A: np.ndarray, X_data: np.ndarray, stage_idx: int,
              rho: float | None, tiebreak=None):
        m = A.shape[0]
        C2 = self.c_final if rho is None else max(1, math.ceil(rho * m))
        C2 = min(C2, m)
        w = vertex_weights(X_data, self.weight_mode)
        K = build_kernel(laplacian(AttributeGraph(A, X_data), "combinatorial"), w)
        state = em_cluster(K, w, C2, seed=_seed_int(self.seed, 4096 + stage_idx),
                           restarts=self.em_restarts, tiebreak=tiebreak)
        return state, coarsen_adjacency(A, state.pooling)

    def _uniform_structure(self, g: AttributeGraph):
        """Per-stage field matrices and coarsening for one graph.

        With uniform vertex weights the cascade depends only on the
        adjacency (never on parameter-dependent attribute values), so it is
        computed once per graph and reused across forwards and epochs.
        """
        if id(g) in self._structure_cache:
            return self._structure_cache[id(g)][1]
        A = g.adjacency
        # attribute rows disambiguate automorphic vertices at the first
        # coarsening; later stages already sit in canonical cluster order
        tiebreak = g.attributes
        structure = []
        for idx, stage in enumerate(self.stages):
            if isinstance(stage, ConvStage):
                mats = [field_matrix(A, k, self.khop_variant)
                        for k in range(1, self.num_scales + 1)]
                structure.append(("conv", mats))
            elif isinstance(stage, PoolStage):
                state, A = self._pool(A, np.zeros((A.shape[0], 1)), idx,
                                      stage.rho, tiebreak=tiebreak)
                structure.append(("pool", state))
                tiebreak = None
            else:
                structure.append(("fc", None))
        self._structure_cache[id(g)] = (g, structure)
        return structure

    def _run(self, g: AttributeGraph):
        if g.d != self.in_dim:
            raise ad.ShapeError(f"network expects {self.in_dim}-dim attributes, "
                                f"got {g.d}")
        X = ad.Value(np.asarray(g.attributes, dtype=np.float64))
        conv_idx = 0
        if self.weight_mode == "uniform":
            for kind, info in self._uniform_structure(g):
                if kind == "conv":
                    X = conv_apply(info, X, self.conv_layers[conv_idx])
                    conv_idx += 1
                elif kind == "pool":
                    X = pool_attributes(X, info.assignments, info.num_clusters)
        else:
            A = g.adjacency
            tiebreak = g.attributes
            for idx, stage in enumerate(self.stages):
                if isinstance(stage, ConvStage):
                    mats = [field_matrix(A, k, self.khop_variant)
                            for k in range(1, self.num_scales + 1)]
                    X = conv_apply(mats, X, self.conv_layers[conv_idx])
                    conv_idx += 1
                elif isinstance(stage, PoolStage):
                    state, A = self._pool(A, X.data, idx, stage.rho,
                                          tiebreak=tiebreak)
                    X = pool_attributes(X, state.assignments, state.num_clusters)
                    tiebreak = None

        flat = ad.reshape(X, (1, self.fc_in))
        hidden = ad.relu(ad.add(ad.matmul(flat, self.fc_hidden_w),
                                self.fc_hidden_b))
        logits = ad.add(ad.matmul(hidden, self.fc_out_w), self.fc_out_b)
        return ad.reshape(logits, (self.num_classes,)), hidden

    def forward(self, g: AttributeGraph) -> ad.Value:
        """Class logits for one graph."""
        return self._run(g)[0]

    def encode(self, g: AttributeGraph) -> np.ndarray:
        """Hidden FC activation: the graph's final feature vector."""
        return self._run(g)[1].data.reshape(-1)

    def loss(self, g: AttributeGraph) -> ad.Value:
        if g.label is None:
            raise ConfigError("graph has no label")
        return ad.softmax_cross_entropy(self.forward(g), g.label)

    def predict(self, g: AttributeGraph) -> int:
        return int(np.argmax(self.forward(g).data))
