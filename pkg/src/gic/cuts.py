"""Weighted graph-cut objective and a brute-force enumeration oracle."""

from __future__ import annotations

from itertools import product

import numpy as np

MAX_ENUM_VERTICES = 12


def cut_objective(partition, A: np.ndarray, w) -> float:
    """sum_c links(V_c, V \\ V_c) / w(V_c) for a disjoint cover of the vertices."""
    A = np.asarray(A, dtype=np.float64)
    w = np.asarray(w, dtype=np.float64)
    m = A.shape[0]
    parts = [np.asarray(sorted(p), dtype=np.intp) for p in partition]
    if any(len(p) == 0 for p in parts):
        raise ValueError("partition parts must be nonempty")
    seen = np.concatenate(parts) if parts else np.array([], dtype=np.intp)
    if len(seen) != m or len(np.unique(seen)) != m:
        raise ValueError("partition must cover every vertex exactly once")
    total = 0.0
    for p in parts:
        rest = np.setdiff1d(np.arange(m), p, assume_unique=False)
        links = A[np.ix_(p, rest)].sum()
        total += links / w[p].sum()
    return float(total)


def partition_from_assignments(assignments) -> list[list[int]]:
    assignments = np.asarray(assignments)
    return [
        np.flatnonzero(assignments == c).tolist()
        for c in range(assignments.max() + 1)
        if np.any(assignments == c)
    ]


def brute_force_min_cut(A: np.ndarray, w, C: int):
    """Exact minimizer over all surjective C-colorings; m <= 12 only.

    Returns (assignment array, objective). Ties break toward the
    lexicographically first assignment (enumeration order).
    """
    A = np.asarray(A, dtype=np.float64)
    m = A.shape[0]
    if m > MAX_ENUM_VERTICES:
        raise ValueError(
            f"refusing to enumerate {C}^{m} assignments; limit is m <= {MAX_ENUM_VERTICES}"
        )
    if not 1 <= C <= m:
        raise ValueError(f"part count {C} outside 1..{m}")
    w = np.asarray(w, dtype=np.float64)
    best_assign, best_obj = None, np.inf
    for labels in product(range(C), repeat=m):
        if len(set(labels)) != C:
            continue
        parts = [[i for i in range(m) if labels[i] == c] for c in range(C)]
        obj = cut_objective(parts, A, w)
        if obj < best_obj:
            best_assign, best_obj = np.asarray(labels, dtype=np.intp), obj
    return best_assign, float(best_obj)
