"""Vertex clustering in kernel space as graph coarsening.

Vertices are soft-clustered by EM on a Gaussian mixture whose per-vertex
covariance is identity scaled by 1/w_i, with means maintained implicitly in
kernel space (doubly weighted membership coefficients). Hard argmax
assignments then build a binary pooling matrix P; the coarse graph has
adjacency P^T A P and max-pooled attributes.

Clustering geometry: the weight-regularized Laplacian kernel K = WLW is the
interface contract, but running weighted kernel k-means directly on it would
*maximize* the weighted cut objective sum_c links(V_c, rest)/w(V_c). EM
therefore runs on the complementary PSD kernel

    G = sigma * W^-1 - W^-1 L W^-1      (L = W^-1 K W^-1)

for which the k-means objective equals a constant plus the weighted cut, so
minimizing one minimizes the other. sigma is a Gershgorin bound on
lambda_max(W^-1/2 L W^-1/2), which keeps G positive semidefinite.

Before EM the kernel is rescaled so the weighted point spread per unit weight
equals the vertex count. The scale is a pure temperature: it changes neither
the hard minimizers nor EM monotonicity, but keeps the E-step decisively
peaked regardless of graph size or edge-weight magnitude.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.linalg

from . import autodiff as ad
from .errors import ConfigError
from .graphs import AttributeGraph


@dataclass
class VertexWeights:
    mode: str
    values: np.ndarray

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.values.size and self.values.min() <= 0:
            raise ConfigError("vertex weights must be strictly positive")


WEIGHT_EPS = 1e-3


def vertex_weights(X: np.ndarray, mode: str = "uniform") -> VertexWeights:
    """Per-vertex observation weights: all-ones or attribute norms."""
    X = np.asarray(X, dtype=np.float64)
    if mode == "uniform":
        return VertexWeights(mode, np.ones(X.shape[0]))
    if mode == "attribute-norm":
        return VertexWeights(mode, WEIGHT_EPS + np.linalg.norm(X, axis=1))
    raise ConfigError(f"unknown vertex-weight mode: {mode!r}")


def build_kernel(L: np.ndarray, w) -> np.ndarray:
    """Weight-regularized Laplacian kernel K_ij = w_i L_ij w_j."""
    w = _weight_values(w)
    return w[:, None] * np.asarray(L, dtype=np.float64) * w[None, :]


def _weight_values(w) -> np.ndarray:
    if isinstance(w, VertexWeights):
        return w.values
    return np.asarray(w, dtype=np.float64)


def clustering_kernel(K: np.ndarray, w) -> np.ndarray:
    """Complementary kernel whose k-means objective tracks the weighted cut."""
    w = _weight_values(w)
    L = K / (w[:, None] * w[None, :])
    scaled = L / np.sqrt(w[:, None] * w[None, :])
    sigma = float(np.abs(scaled).sum(axis=1).max())  # Gershgorin row bound
    G = -L / (w[:, None] * w[None, :])
    G[np.diag_indices_from(G)] += sigma / w
    return G


def kernel_distance(i: int, cluster, K: np.ndarray, w) -> float:
    """Squared kernel-space distance from vertex i to a cluster's weighted mean."""
    members = np.asarray(list(cluster), dtype=np.intp)
    if members.size == 0:
        raise ValueError("cluster must be nonempty")
    w = _weight_values(w)
    wc = w[members]
    s = wc.sum()
    cross = (wc * K[i, members]).sum() / s
    pair = (wc[:, None] * wc[None, :] * K[np.ix_(members, members)]).sum() / (s * s)
    return max(K[i, i] - 2.0 * cross + pair, 0.0)


@dataclass
class CoarsenState:
    kernel: np.ndarray
    num_clusters: int
    posteriors: np.ndarray       # (m, C2), rows sum to 1
    mixture: np.ndarray          # (C2,)
    assignments: np.ndarray      # (m,) hard labels
    pooling: np.ndarray          # (m, C2) one-hot rows
    history: list = field(default_factory=list)  # surrogate log-likelihood per iter

    def __post_init__(self):
        rows = self.pooling.sum(axis=1)
        if not np.array_equal(rows, np.ones_like(rows)):
            raise ConfigError("pooling rows must be one-hot")


def _dense_ranks(keys: list) -> np.ndarray:
    order = sorted(range(len(keys)), key=keys.__getitem__)
    ranks = np.empty(len(keys), dtype=np.intp)
    rank, prev = 0, None
    for pos, i in enumerate(order):
        if pos and keys[i] != prev:
            rank += 1
        ranks[i] = rank
        prev = keys[i]
    return ranks


def canonical_vertex_order(K: np.ndarray, w, tiebreak=None) -> np.ndarray:
    """Permutation-invariant vertex ordering (canonical form of (K, w)).

    Individualization-refinement: vertex keys start from multiset
    statistics (weight, diagonal, per-vertex ``tiebreak`` row, sorted
    kernel row) and are refined with the sorted multiset of (kernel entry,
    neighbor rank) pairs until the rank classes stop splitting; if classes
    of tied vertices remain, the search branches on each member of the
    first class and keeps the branch whose ordered matrix compares
    smallest. All comparisons are exact, so relabeled copies of the same
    graph order into bit-identical matrices. ``tiebreak`` anchors
    structurally interchangeable vertices to outside identity (attribute
    rows, say); without it an automorphic pair may land in either slot.
    A node budget caps the branching on highly symmetric inputs; past it
    the first fully explored branch wins (best effort, still deterministic
    for a fixed input labeling).
    """
    w = _weight_values(w)
    m = K.shape[0]
    tb = (np.zeros((m, 0)) if tiebreak is None
          else np.asarray(tiebreak, dtype=np.float64).reshape(m, -1))
    base = [(w[i], K[i, i], tuple(tb[i]), tuple(np.sort(K[i])))
            for i in range(m)]

    def refine(ranks: np.ndarray) -> np.ndarray:
        while True:
            keys = [
                (int(ranks[i]), tuple(sorted(zip(K[i], ranks.tolist()))))
                for i in range(m)
            ]
            new = _dense_ranks(keys)
            if new.max() == ranks.max():
                return new
            ranks = new

    # node cap also bounds recursion depth (one level per individualization)
    budget = [min(64 * max(m, 1), 512)]

    def search(ranks: np.ndarray) -> np.ndarray | None:
        if budget[0] <= 0:
            return None
        budget[0] -= 1
        ranks = refine(ranks)
        counts = np.bincount(ranks)
        tied = np.flatnonzero(counts > 1)
        if tied.size == 0:
            return np.argsort(ranks, kind="stable")
        members = np.flatnonzero(ranks == tied[0])
        best_order, best_key = None, None
        for v in members:
            child = search(_dense_ranks(
                [(r, 0 if i == v else 1) for i, r in enumerate(ranks)]))
            if child is None:
                break
            key = (K[np.ix_(child, child)].tobytes(), w[child].tobytes(),
                   tb[child].tobytes())
            if best_key is None or key < best_key:
                best_order, best_key = child, key
        return best_order

    order = search(_dense_ranks(base))
    if order is None:  # budget exhausted with nothing fully explored
        order = np.argsort(refine(_dense_ranks(base)), kind="stable")
    return order


def _surrogate(logp_unnorm: np.ndarray) -> float:
    shift = logp_unnorm.max(axis=1, keepdims=True)
    return float((np.log(np.exp(logp_unnorm - shift).sum(axis=1)) + shift[:, 0]).sum())


def _distances(G: np.ndarray, Gamma: np.ndarray) -> np.ndarray:
    """dist^2(i, c) = G_ii - 2 (G Gamma)_ic + (Gamma^T G Gamma)_cc."""
    cross = G @ Gamma
    quad = np.einsum("jc,jk,kc->c", Gamma, G, Gamma)
    return np.maximum(G.diagonal()[:, None] - 2.0 * cross + quad[None, :], 0.0)


def _init_centers(G: np.ndarray, C2: int, rng) -> np.ndarray:
    """Greedy spread seeding: first center random, rest by distance sampling."""
    m = G.shape[0]
    diag = G.diagonal()
    centers = [int(rng.integers(m))]
    for _ in range(C2 - 1):
        d = np.full(m, np.inf)
        for c in centers:
            dc = diag - 2.0 * G[:, c] + G[c, c]
            d = np.minimum(d, np.maximum(dc, 0.0))
        d[centers] = 0.0
        total = d.sum()
        if total <= 0:
            remaining = [i for i in range(m) if i not in centers]
            centers.append(int(remaining[rng.integers(len(remaining))]))
        else:
            centers.append(int(rng.choice(m, p=d / total)))
    Gamma = np.zeros((m, C2))
    Gamma[centers, np.arange(C2)] = 1.0
    return Gamma


def _spectral_partition(K: np.ndarray, w: np.ndarray, C2: int) -> np.ndarray:
    """Deterministic init from the eigenvector relaxation of the cut objective.

    Solves L x = lambda W x (L recovered from the weight-regularized kernel),
    embeds vertices with the C2-1 eigenvectors above the trivial one, picks
    farthest-first anchors, and returns the doubly weighted membership matrix
    of the nearest-anchor partition.
    """
    m = len(w)
    L = K / (w[:, None] * w[None, :])
    _, vecs = scipy.linalg.eigh(L, b=np.diag(w))
    Y = vecs[:, 1:C2]
    anchors = [int(np.argmax((Y ** 2).sum(axis=1)))]
    while len(anchors) < C2:
        d = np.full(m, np.inf)
        for a in anchors:
            d = np.minimum(d, ((Y - Y[a]) ** 2).sum(axis=1))
        anchors.append(int(np.argmax(d)))
    dists = np.stack([((Y - Y[a]) ** 2).sum(axis=1) for a in anchors], axis=1)
    labels = np.argmin(dists, axis=1)
    Gamma = np.zeros((m, C2))
    for c in range(C2):
        members = labels == c
        if not members.any():  # duplicate anchors on symmetric embeddings
            members = np.zeros(m, dtype=bool)
            members[anchors[c]] = True
        Gamma[members, c] = w[members] / w[members].sum()
    return Gamma


def _em_once(G: np.ndarray, w: np.ndarray, C2: int, max_iters: int,
             tol: float, rng, Gamma0: np.ndarray | None = None):
    m = G.shape[0]
    Gamma = _init_centers(G, C2, rng) if Gamma0 is None else Gamma0.copy()
    pi = np.full(C2, 1.0 / C2)
    posteriors = np.full((m, C2), 1.0 / C2)
    history: list[float] = []
    with np.errstate(divide="ignore"):
        for _ in range(max_iters):
            d2 = _distances(G, Gamma)
            logits = np.log(pi)[None, :] - 0.5 * w[:, None] * d2
            history.append(_surrogate(logits))
            shift = logits.max(axis=1, keepdims=True)
            e = np.exp(logits - shift)
            posteriors = e / e.sum(axis=1, keepdims=True)
            pi = posteriors.mean(axis=0)
            mass = (posteriors * w[:, None]).sum(axis=0)
            # a component with no responsibility mass keeps its old mean: any
            # mean maximizes for it, so this remains an exact M-step (and the
            # likelihood stays monotone)
            alive = mass > 1e-300
            Gamma = Gamma.copy()
            Gamma[:, alive] = (posteriors[:, alive] * w[:, None]) / mass[alive]
            if len(history) >= 2 and history[-1] - history[-2] < tol:
                break
    return posteriors, pi, Gamma, history


def _repair_empty(assignments: np.ndarray, G: np.ndarray, w: np.ndarray,
                  C2: int) -> np.ndarray:
    """Fill empty clusters by moving the vertex farthest from its own mean."""
    assignments = assignments.copy()
    for c in range(C2):
        if np.any(assignments == c):
            continue
        best, best_d = -1, -1.0
        for i in range(len(assignments)):
            own = np.flatnonzero(assignments == assignments[i])
            if len(own) < 2:  # do not empty another cluster
                continue
            d = kernel_distance(i, own, G, w)
            if d > best_d:
                best, best_d = i, d
        if best < 0:  # nothing movable (m == number of nonempty clusters)
            continue
        assignments[best] = c
    return assignments


def em_cluster(K: np.ndarray, w, C2: int, max_iters: int = 10,
               tol: float = 1e-6, seed: int = 0, restarts: int = 3,
               canonical: bool = True, tiebreak=None) -> CoarsenState:
    """Weighted kernel-space EM clustering with hard quantification.

    Runs in a canonical vertex order (seeded independently of the input
    labeling) so that relabeled copies of the same graph produce the same
    clusters; ``tiebreak`` rows feed the ordering so that structurally
    interchangeable vertices resolve by outside identity. The first
    restart starts from a deterministic spectral partition, the rest from
    seeded greedy-spread centers; the run whose repaired hard assignment
    has the smallest weighted within-cluster kernel distance wins (the
    quantity the assignment is consumed as, unlike the soft surrogate,
    which can prefer blurrier posteriors).
    """
    K = np.asarray(K, dtype=np.float64)
    w = _weight_values(w)
    m = K.shape[0]
    if not 1 <= C2 <= m:
        raise ConfigError(f"cluster count {C2} outside 1..{m}")

    order = canonical_vertex_order(K, w, tiebreak) if canonical else np.arange(m)
    Kc = K[np.ix_(order, order)]
    wc = w[order]
    G = clustering_kernel(Kc, wc)

    # temperature normalization: weighted spread about the global mean,
    # per unit weight, becomes m
    mean = (wc / wc.sum())[:, None]
    spread = float((wc * _distances(G, mean)[:, 0]).sum() / wc.sum())
    G = G * (m / max(spread, 1e-12))

    best = None
    for r in range(restarts):
        rng = np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(r,)))
        Gamma0 = _spectral_partition(Kc, wc, C2) if r == 0 and C2 > 1 else None
        posteriors, pi, _, history = _em_once(G, wc, C2, max_iters, tol, rng,
                                              Gamma0)
        labels = _repair_empty(np.argmax(posteriors, axis=1), G, wc, C2)
        hard = np.zeros((m, C2))
        for c in range(C2):
            members = labels == c
            hard[members, c] = wc[members] / wc[members].sum()
        objective = float(
            (wc * _distances(G, hard)[np.arange(m), labels]).sum()
        )
        if best is None or objective < best[0]:
            best = (objective, posteriors, pi, labels, history)
    _, posteriors, pi, labels, history = best

    # map back to the caller's vertex order
    assignments = np.empty(m, dtype=np.intp)
    assignments[order] = labels
    post = np.empty_like(posteriors)
    post[order] = posteriors

    P = np.zeros((m, C2))
    P[np.arange(m), assignments] = 1.0
    return CoarsenState(
        kernel=K, num_clusters=C2, posteriors=post, mixture=pi,
        assignments=assignments, pooling=P, history=history,
    )


def coarsen_adjacency(A: np.ndarray, P: np.ndarray) -> np.ndarray:
    """P^T A P, each entry summed in sorted order.

    Sorting the addends makes every coarse entry a function of the edge
    multiset alone, so relabeling the fine vertices reproduces the coarse
    matrix bit for bit (plain matrix products only match to rounding).
    """
    C2 = P.shape[1]
    members = [np.flatnonzero(P[:, c]) for c in range(C2)]
    out = np.zeros((C2, C2))
    for a in range(C2):
        for b in range(a, C2):
            block = A[np.ix_(members[a], members[b])].ravel().copy()
            block.sort()
            out[a, b] = out[b, a] = float(block.sum())
    return out


def coarsen(g: AttributeGraph, state: CoarsenState) -> AttributeGraph:
    """Coarse graph: P^T A P adjacency, per-cluster elementwise-max attributes."""
    if state.pooling.shape[0] != g.m:
        raise ConfigError(
            f"pooling has {state.pooling.shape[0]} rows for a {g.m}-vertex graph"
        )
    A_new = coarsen_adjacency(g.adjacency, state.pooling)
    X_new = np.empty((state.num_clusters, g.d))
    for c in range(state.num_clusters):
        members = np.flatnonzero(state.assignments == c)
        X_new[c] = g.attributes[members].max(axis=0)
    return AttributeGraph(A_new, X_new, label=g.label)


def pool_attributes(X: ad.Value, assignments: np.ndarray, C2: int) -> ad.Value:
    """Differentiable per-cluster elementwise max over member rows."""
    rows = []
    for c in range(C2):
        members = np.flatnonzero(assignments == c)
        sub = ad.take(X, members, axis=0)
        pooled, _ = ad.max_reduce_with_index(sub, axis=0)
        rows.append(ad.reshape(pooled, (1, X.data.shape[1])))
    return ad.concat(rows, axis=0) if len(rows) > 1 else rows[0]
