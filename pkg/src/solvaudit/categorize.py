"""Hierarchical agglomerative clustering of service-offering features.

Ward linkage on squared Euclidean distances, updated step by step with the
Lance-Williams recurrence:

    d(k, i+j) = a_i*d(k,i) + a_j*d(k,j) + b*d(i,j)
    a_i = (n_i+n_k)/(n_i+n_j+n_k)
    a_j = (n_j+n_k)/(n_i+n_j+n_k)
    b   = -n_k/(n_i+n_j+n_k)

Distances are kept as exact rationals so tie-breaking is deterministic:
among minimum-distance pairs the lexicographically smallest (i, j) node
index pair merges first. Node ids follow the usual convention of leaves
0..n-1 and merged nodes n, n+1, ...

Heights stay on the squared-Euclidean scale (no square root).
"""

import json
from dataclasses import dataclass
from fractions import Fraction

from .errors import BadK, NonBinaryFeature, TooFewRows
from .ingest import FeatureMatrix


@dataclass(frozen=True)
class Merge:
    left: int
    right: int
    height: Fraction
    size: int


@dataclass
class Dendrogram:
    """n-1 merges over leaves labeled by vasp_id."""

    labels: list[str]
    merges: list[Merge]

    @property
    def n_leaves(self) -> int:
        return len(self.labels)


def hac(features: FeatureMatrix) -> Dendrogram:
    """Cluster the feature rows bottom-up; merge heights are non-decreasing."""
    n = len(features)
    if n < 2:
        raise TooFewRows(f"need at least 2 rows, got {n}")
    vectors = features.vectors()
    for vasp_id, vec in features.rows:
        if any(x not in (0, 1) for x in vec):
            raise NonBinaryFeature(f"{vasp_id}: {vec}")

    # Active node id -> cluster size; distances keyed by (i, j) with i < j.
    size = {i: 1 for i in range(n)}
    dist: dict[tuple[int, int], Fraction] = {}
    for i in range(n):
        for j in range(i + 1, n):
            d = sum((a - b) * (a - b) for a, b in zip(vectors[i], vectors[j]))
            dist[(i, j)] = Fraction(d)

    merges: list[Merge] = []
    next_id = n
    for _ in range(n - 1):
        (i, j) = min(dist, key=lambda pair: (dist[pair], pair))
        height = dist[(i, j)]
        n_i, n_j = size[i], size[j]
        new_size = n_i + n_j
        merges.append(Merge(i, j, height, new_size))

        del dist[(i, j)]
        others = [k for k in size if k not in (i, j)]
        for k in others:
            d_ki = dist.pop(_key(k, i))
            d_kj = dist.pop(_key(k, j))
            n_k = size[k]
            denom = n_i + n_j + n_k
            updated = (
                Fraction(n_i + n_k, denom) * d_ki
                + Fraction(n_j + n_k, denom) * d_kj
                - Fraction(n_k, denom) * height
            )
            dist[_key(k, next_id)] = updated
        del size[i], size[j]
        size[next_id] = new_size
        next_id += 1

    return Dendrogram(labels=list(features.ids()), merges=merges)


def _key(a: int, b: int) -> tuple[int, int]:
    return (a, b) if a < b else (b, a)


def cut(dendrogram: Dendrogram, k: int) -> dict[str, int]:
    """Cluster labels after undoing the last k-1 merges.

    Labels are small integers assigned in order of each cluster's smallest
    leaf index, so identical inputs always yield identical labelings.
    """
    n = dendrogram.n_leaves
    if not 1 <= k <= n:
        raise BadK(f"k must be in [1, {n}], got {k}")
    members: dict[int, list[int]] = {i: [i] for i in range(n)}
    next_id = n
    for merge in dendrogram.merges[: n - k]:
        members[next_id] = members.pop(merge.left) + members.pop(merge.right)
        next_id += 1
    clusters = sorted(members.values(), key=min)
    labels: dict[str, int] = {}
    for label, leaf_ids in enumerate(clusters):
        for leaf in leaf_ids:
            labels[dendrogram.labels[leaf]] = label
    return labels


def cophenetic_heights(dendrogram: Dendrogram) -> list[list[Fraction]]:
    """n x n matrix of the merge height joining each pair of leaves."""
    n = dendrogram.n_leaves
    matrix = [[Fraction(0)] * n for _ in range(n)]
    members: dict[int, list[int]] = {i: [i] for i in range(n)}
    next_id = n
    for merge in dendrogram.merges:
        left = members.pop(merge.left)
        right = members.pop(merge.right)
        for a in left:
            for b in right:
                matrix[a][b] = merge.height
                matrix[b][a] = merge.height
        members[next_id] = left + right
        next_id += 1
    return matrix


# ---------------------------------------------------------------------------
# Exports
# ---------------------------------------------------------------------------

def dendrogram_to_json(dendrogram: Dendrogram) -> str:
    doc = {
        "labels": dendrogram.labels,
        "merges": [
            {
                "left": m.left,
                "right": m.right,
                "height": repr(float(m.height)),
                "size": m.size,
            }
            for m in dendrogram.merges
        ],
    }
    return json.dumps(doc, indent=2) + "\n"


def cut_to_csv(labels: dict[str, int]) -> str:
    lines = ["vasp_id,cluster"]
    for vasp_id in sorted(labels, key=lambda v: (labels[v], v)):
        lines.append(f"{vasp_id},{labels[vasp_id]}")
    return "\n".join(lines) + "\n"
