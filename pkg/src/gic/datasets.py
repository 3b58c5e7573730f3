"""Dataset ingestion: TU text format, canonical JSONL serialization, features.

The TU layout is a directory of plain-text files sharing a name prefix:
``{name}_A.txt`` (1-indexed edge pairs), ``{name}_graph_indicator.txt``
(graph id per vertex), ``{name}_graph_labels.txt`` (label per graph) and
optionally ``{name}_node_labels.txt``.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import ConfigError, DataFormatError
from .graphs import AttributeGraph


@dataclass
class GraphCollection:
    graphs: list[AttributeGraph]
    num_classes: int

    @property
    def feature_dim(self) -> int:
        return self.graphs[0].d if self.graphs else 0

    def __post_init__(self):
        dims = {g.d for g in self.graphs}
        if len(dims) > 1:
            raise DataFormatError(f"graphs disagree on feature dim: {sorted(dims)}")
        for g in self.graphs:
            if g.label is not None and not 0 <= g.label < self.num_classes:
                raise DataFormatError(
                    f"label {g.label} outside [0, {self.num_classes})"
                )


def _read_lines(path: Path) -> list[str]:
    if not path.is_file():
        raise FileNotFoundError(f"required dataset file missing: {path}")
    return path.read_text().splitlines()


def _parse_int(token: str, path: Path, lineno: int) -> int:
    try:
        return int(token.strip())
    except ValueError:
        raise DataFormatError(f"{path}:{lineno}: expected integer, got {token!r}") from None


def load_tu_dataset(directory, name: str) -> GraphCollection:
    """Load a TU-format dataset into one AttributeGraph per graph id.

    Edges get weight 1 and are symmetrized; graph labels are remapped to
    contiguous 0-based class indices (sorted by original value). Attributes
    start empty (use apply_features / build_features to populate them).
    """
    directory = Path(directory)
    ind_path = directory / f"{name}_graph_indicator.txt"
    lab_path = directory / f"{name}_graph_labels.txt"
    edge_path = directory / f"{name}_A.txt"

    raw_labels = [
        _parse_int(line, lab_path, i + 1)
        for i, line in enumerate(_read_lines(lab_path))
        if line.strip()
    ]
    num_graphs = len(raw_labels)
    classes = sorted(set(raw_labels))
    label_of = {v: i for i, v in enumerate(classes)}

    indicator = []
    for i, line in enumerate(_read_lines(ind_path)):
        if not line.strip():
            continue
        gid = _parse_int(line, ind_path, i + 1)
        if not 1 <= gid <= num_graphs:
            raise DataFormatError(
                f"{ind_path}:{i + 1}: graph id {gid} but only {num_graphs} labels"
            )
        indicator.append(gid - 1)
    indicator = np.asarray(indicator, dtype=np.intp)
    num_vertices = len(indicator)

    # global vertex id (1-based) -> (graph, local index); locals follow
    # ascending global order within each graph
    local_index = np.zeros(num_vertices, dtype=np.intp)
    counts = np.zeros(num_graphs, dtype=np.intp)
    for v in range(num_vertices):
        local_index[v] = counts[indicator[v]]
        counts[indicator[v]] += 1

    adjacency = [np.zeros((c, c)) for c in counts]
    for i, line in enumerate(_read_lines(edge_path)):
        if not line.strip():
            continue
        parts = line.replace(",", " ").split()
        if len(parts) != 2:
            raise DataFormatError(f"{edge_path}:{i + 1}: expected two ids, got {line!r}")
        u = _parse_int(parts[0], edge_path, i + 1)
        v = _parse_int(parts[1], edge_path, i + 1)
        if not (1 <= u <= num_vertices and 1 <= v <= num_vertices):
            raise DataFormatError(f"{edge_path}:{i + 1}: vertex id outside 1..{num_vertices}")
        gu, gv = indicator[u - 1], indicator[v - 1]
        if gu != gv:
            raise DataFormatError(
                f"{edge_path}:{i + 1}: edge joins different graphs {gu + 1} and {gv + 1}"
            )
        a, b = local_index[u - 1], local_index[v - 1]
        adjacency[gu][a, b] = adjacency[gu][b, a] = 1.0

    node_label_path = directory / f"{name}_node_labels.txt"
    node_labels = None
    if node_label_path.is_file():
        values = [
            _parse_int(line, node_label_path, i + 1)
            for i, line in enumerate(_read_lines(node_label_path))
            if line.strip()
        ]
        if len(values) != num_vertices:
            raise DataFormatError(
                f"{node_label_path}: {len(values)} node labels for {num_vertices} vertices"
            )
        node_labels = np.asarray(values, dtype=np.int64)

    graphs = []
    for gidx in range(num_graphs):
        mask = indicator == gidx
        nl = node_labels[mask] if node_labels is not None else None
        graphs.append(
            AttributeGraph(
                adjacency[gidx],
                np.zeros((counts[gidx], 0)),
                label=label_of[raw_labels[gidx]],
                node_labels=nl,
            )
        )
    return GraphCollection(graphs, num_classes=len(classes))


def build_features(
    g: AttributeGraph,
    use_labels: bool = True,
    use_degree: bool = True,
    label_values: list[int] | None = None,
) -> AttributeGraph:
    """Attribute matrix from one-hot node labels and/or the degree scalar.

    ``label_values`` fixes the one-hot category order (needed for a shared
    encoding across a collection); defaults to the labels seen in ``g``.
    """
    if not use_labels and not use_degree:
        raise ConfigError("at least one of use_labels/use_degree must be enabled")
    blocks = []
    if use_labels:
        if g.node_labels is None:
            raise ConfigError("use_labels requires node labels")
        if label_values is None:
            label_values = sorted(set(g.node_labels.tolist()))
        index = {v: i for i, v in enumerate(label_values)}
        onehot = np.zeros((g.m, len(label_values)))
        for row, val in enumerate(g.node_labels.tolist()):
            if val not in index:
                raise ConfigError(f"node label {val} not in category list")
            onehot[row, index[val]] = 1.0
        blocks.append(onehot)
    if use_degree:
        blocks.append(g.degrees[:, None])
    return g.with_attributes(np.hstack(blocks))


def apply_features(
    collection: GraphCollection, use_labels: bool = True, use_degree: bool = True
) -> GraphCollection:
    """build_features across a collection with one shared label vocabulary."""
    label_values = None
    if use_labels:
        seen = set()
        for g in collection.graphs:
            if g.node_labels is None:
                raise ConfigError("use_labels requires node labels on every graph")
            seen.update(g.node_labels.tolist())
        label_values = sorted(seen)
    graphs = [
        build_features(g, use_labels, use_degree, label_values)
        for g in collection.graphs
    ]
    return GraphCollection(graphs, collection.num_classes)


# ---------------------------------------------------------------------------
# canonical serialization: one JSON object per line per graph


def graph_to_record(g: AttributeGraph) -> dict:
    iu, ju = np.nonzero(np.triu(g.adjacency))
    edges = [[int(i), int(j), float(g.adjacency[i, j])] for i, j in zip(iu, ju)]
    record = {
        "m": g.m,
        "edges": edges,
        "attributes": [[float(x) for x in row] for row in g.attributes],
        "label": None if g.label is None else int(g.label),
    }
    if g.node_labels is not None:
        record["node_labels"] = [int(v) for v in g.node_labels]
    return record


def graph_from_record(record: dict) -> AttributeGraph:
    m = int(record["m"])
    A = np.zeros((m, m))
    for entry in record["edges"]:
        i, j, w = int(entry[0]), int(entry[1]), float(entry[2])
        if not (0 <= i < m and 0 <= j < m):
            raise DataFormatError(f"edge ({i},{j}) outside 0..{m - 1}")
        A[i, j] = A[j, i] = w
    X = np.asarray(record["attributes"], dtype=np.float64)
    if X.size == 0:
        X = np.zeros((m, 0))
    label = record.get("label")
    nl = record.get("node_labels")
    return AttributeGraph(
        A, X, label=None if label is None else int(label),
        node_labels=None if nl is None else np.asarray(nl, dtype=np.int64),
    )


def save_graphs_jsonl(graphs, path) -> None:
    with open(path, "w") as fh:
        for g in graphs:
            fh.write(json.dumps(graph_to_record(g)) + "\n")


def load_graphs_jsonl(path) -> list[AttributeGraph]:
    graphs = []
    with open(path) as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                record = json.loads(line)
            except json.JSONDecodeError as e:
                raise DataFormatError(f"{path}:{lineno}: {e}") from None
            graphs.append(graph_from_record(record))
    return graphs
