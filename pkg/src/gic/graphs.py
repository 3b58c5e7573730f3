"""Attribute graphs, Laplacians, k-hop reachability operators, receptive fields."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


class GraphError(ValueError):
    """Structurally invalid graph or graph operation."""


@dataclass
class AttributeGraph:
    """Undirected graph: symmetric non-negative adjacency + per-vertex attributes.

    ``adjacency`` is dense float64 (m, m); ``attributes`` is (m, d). Instances
    are treated as immutable after construction.
    """

    adjacency: np.ndarray
    attributes: np.ndarray
    label: int | None = None
    node_labels: np.ndarray | None = None

    def __post_init__(self):
        A = np.asarray(self.adjacency, dtype=np.float64)
        if A.ndim != 2 or A.shape[0] != A.shape[1]:
            raise GraphError(f"adjacency must be square, got shape {A.shape}")
        if not np.array_equal(A, A.T):
            raise GraphError("adjacency must be symmetric")
        if A.size and A.min() < 0:
            raise GraphError("adjacency entries must be non-negative")
        X = np.asarray(self.attributes, dtype=np.float64)
        if X.ndim != 2 or X.shape[0] != A.shape[0]:
            raise GraphError(
                f"attributes must have {A.shape[0]} rows, got shape {X.shape}"
            )
        self.adjacency = A
        self.attributes = X
        if self.node_labels is not None:
            nl = np.asarray(self.node_labels, dtype=np.int64)
            if nl.shape != (A.shape[0],):
                raise GraphError("node_labels must be one integer per vertex")
            self.node_labels = nl

    @property
    def m(self) -> int:
        return self.adjacency.shape[0]

    @property
    def d(self) -> int:
        return self.attributes.shape[1]

    @property
    def degrees(self) -> np.ndarray:
        return self.adjacency.sum(axis=1)

    def with_attributes(self, X) -> "AttributeGraph":
        """Same structure, new attribute matrix."""
        return AttributeGraph(self.adjacency, X, self.label, self.node_labels)

    def permuted(self, perm) -> "AttributeGraph":
        """Relabeled copy; ``perm[new_index] = old_index``."""
        perm = np.asarray(perm, dtype=np.intp)
        if sorted(perm.tolist()) != list(range(self.m)):
            raise GraphError("perm must be a permutation of vertex indices")
        A = self.adjacency[np.ix_(perm, perm)]
        X = self.attributes[perm]
        nl = None if self.node_labels is None else self.node_labels[perm]
        return AttributeGraph(A, X, self.label, nl)


@dataclass
class ReceptiveField:
    """One vertex's k-hop neighborhood: member indices, weights, attributes."""

    reference: int
    members: np.ndarray          # ascending vertex indices, reference included
    weights: np.ndarray          # strictly positive, sums to 1
    member_attributes: np.ndarray

    def __post_init__(self):
        self.members = np.asarray(self.members, dtype=np.intp)
        self.weights = np.asarray(self.weights, dtype=np.float64)
        self.member_attributes = np.asarray(self.member_attributes, dtype=np.float64)
        if self.reference not in self.members:
            raise GraphError("reference vertex must be one of the members")
        if len(np.unique(self.members)) != len(self.members):
            raise GraphError("duplicate members in receptive field")
        if self.weights.min() <= 0:
            raise GraphError("receptive-field weights must be strictly positive")


def laplacian(g: AttributeGraph, kind: str = "combinatorial") -> np.ndarray:
    """Graph Laplacian: ``D - A`` or ``I - D^{-1/2} A D^{-1/2}``.

    Isolated vertices use a zero D^{-1/2} entry in the normalized variant.
    """
    A = g.adjacency
    deg = A.sum(axis=1)
    if kind == "combinatorial":
        return np.diag(deg) - A
    if kind == "normalized":
        with np.errstate(divide="ignore"):
            inv_sqrt = np.where(deg > 0, 1.0 / np.sqrt(deg), 0.0)
        return np.eye(g.m) - inv_sqrt[:, None] * A * inv_sqrt[None, :]
    raise GraphError(f"unknown laplacian kind: {kind!r}")


def khop_matrix(A: np.ndarray, k: int, variant: str = "walk") -> np.ndarray:
    """k-step reachability operator on a raw adjacency matrix.

    ``walk`` is A^k (length-k walk counts, parity included); ``lazy`` is
    (A+I)^k, whose support is the full <=k-hop ball.
    """
    if k < 1:
        raise GraphError(f"hop count must be >= 1, got {k}")
    A = np.asarray(A, dtype=np.float64)
    if variant == "walk":
        base = A
    elif variant == "lazy":
        base = A + np.eye(A.shape[0])
    else:
        raise GraphError(f"unknown k-hop variant: {variant!r}")
    return np.linalg.matrix_power(base, k)


def khop_operator(g: AttributeGraph, k: int, variant: str = "walk") -> np.ndarray:
    return khop_matrix(g.adjacency, k, variant)


def normalize_khop(psi: np.ndarray) -> np.ndarray:
    """Rescale each row to sum to 1 over its nonzero support; zero rows stay zero."""
    psi = np.asarray(psi, dtype=np.float64)
    if psi.size and psi.min() < 0:
        raise GraphError("k-hop operator entries must be non-negative")
    sums = psi.sum(axis=1, keepdims=True)
    with np.errstate(invalid="ignore", divide="ignore"):
        out = np.where(sums > 0, psi / sums, 0.0)
    return out


def field_matrix(A: np.ndarray, k: int, variant: str = "walk") -> np.ndarray:
    """Row-normalized k-hop weights with the reference vertex always included.

    Row i holds the weights of vertex i's receptive field. Where the raw
    operator gives the vertex itself weight 0 (parity, or an isolated vertex),
    it is included at the mean member weight — 1/|members| after the first
    normalization — and the row is renormalized.
    """
    W = normalize_khop(khop_matrix(A, k, variant))
    m = W.shape[0]
    diag = np.arange(m)
    self_missing = W[diag, diag] == 0.0
    if np.any(self_missing):
        counts = (W > 0).sum(axis=1)
        # isolated vertex: sole member, weight 1
        fill = np.where(counts > 0, 1.0 / np.maximum(counts, 1), 1.0)
        W[diag[self_missing], diag[self_missing]] = fill[self_missing]
        W /= W.sum(axis=1, keepdims=True)
    return W


def receptive_field(
    g: AttributeGraph, v: int, k: int, psi_norm: np.ndarray | None = None,
    variant: str = "walk",
) -> ReceptiveField:
    """Extract vertex ``v``'s k-hop field (members, weights, attributes)."""
    if not 0 <= v < g.m:
        raise IndexError(f"vertex {v} out of range for graph with {g.m} vertices")
    if psi_norm is None:
        psi_norm = normalize_khop(khop_operator(g, k, variant))
    row = np.asarray(psi_norm[v], dtype=np.float64).copy()
    if row[v] == 0.0:
        count = int((row > 0).sum())
        row[v] = 1.0 / count if count else 1.0
        row /= row.sum()
    members = np.flatnonzero(row > 0)
    return ReceptiveField(
        reference=v,
        members=members,
        weights=row[members],
        member_attributes=g.attributes[members],
    )
