"""Zero-dimensional Vietoris-Rips persistence of point clouds.

In dimension 0 every point is born at scale 0 and a component dies when the
growing Rips complex first joins it to another one.  The joining edges are
exactly the edges of a minimum spanning tree, so the pairing is computed with
Kruskal's algorithm over a union-find forest.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .autodiff import squared_distances

__all__ = [
    "DistanceMatrix",
    "PersistencePairing",
    "PersistenceDiagram0D",
    "UnionFind",
    "euclidean_distance_matrix",
    "vr_persistence_0d",
    "diagram_from_pairing",
    "diagram_to_csv",
]


@dataclass(frozen=True)
class DistanceMatrix:
    entries: np.ndarray

    def __post_init__(self):
        a = np.asarray(self.entries, dtype=np.float64)
        if a.ndim != 2 or a.shape[0] != a.shape[1] or a.shape[0] < 1:
            raise ValueError(f"distance matrix must be square and non-empty, got shape {a.shape}")
        if not np.all(np.isfinite(a)) or np.any(a < 0):
            raise ValueError("distance matrix entries must be finite and nonnegative")
        if np.any(np.diag(a) != 0) or not np.array_equal(a, a.T):
            raise ValueError("distance matrix must be symmetric with a zero diagonal")
        object.__setattr__(self, "entries", a)

    @property
    def n(self) -> int:
        return self.entries.shape[0]


@dataclass(frozen=True)
class PersistencePairing:
    """Merge edges ``(i, j)``, ``i < j``, and the scale at which each merge happens."""

    edges: np.ndarray = field(default_factory=lambda: np.zeros((0, 2), dtype=np.int64))
    deaths: np.ndarray = field(default_factory=lambda: np.zeros(0))

    def __len__(self) -> int:
        return len(self.edges)


@dataclass(frozen=True)
class PersistenceDiagram0D:
    points: np.ndarray  # (k, 2) rows of (birth, death)

    def __len__(self) -> int:
        return len(self.points)


class UnionFind:
    """Disjoint sets over ``0..n-1`` with path compression and union by rank."""

    def __init__(self, n: int):
        self.parent = list(range(n))
        self.rank = [0] * n

    def find(self, k: int) -> int:
        parent = self.parent
        root = k
        while parent[root] != root:
            root = parent[root]
        while parent[k] != root:
            parent[k], k = root, parent[k]
        return root

    def union(self, a: int, b: int) -> bool:
        """Merge the sets of ``a`` and ``b``; False if already joined."""
        ra, rb = self.find(a), self.find(b)
        if ra == rb:
            return False
        if self.rank[ra] < self.rank[rb]:
            ra, rb = rb, ra
        self.parent[rb] = ra
        if self.rank[ra] == self.rank[rb]:
            self.rank[ra] += 1
        return True


def euclidean_distance_matrix(instances) -> DistanceMatrix:
    x = np.asarray(instances, dtype=np.float64)
    if x.ndim != 2 or x.shape[0] < 1 or x.shape[1] < 1:
        raise ValueError(f"expected an (n, d) array with n, d >= 1, got shape {x.shape}")
    if not np.all(np.isfinite(x)):
        raise ValueError("instances contain non-finite values")
    return DistanceMatrix(np.sqrt(squared_distances(x)))


def vr_persistence_0d(dist: DistanceMatrix | np.ndarray) -> PersistencePairing:
    """Persistence pairing of connected components in the Rips filtration.

    Edges are visited by increasing length; equal lengths are ordered
    lexicographically by ``(i, j)`` so the result is deterministic.
    """
    d = dist.entries if isinstance(dist, DistanceMatrix) else np.asarray(dist, dtype=np.float64)
    n = d.shape[0]
    if n < 2:
        return PersistencePairing()
    iu, ju = np.triu_indices(n, k=1)
    # triu_indices is already in (i, j) order, so a stable sort breaks ties lexicographically
    order = np.argsort(d[iu, ju], kind="stable")

    uf = UnionFind(n)
    edges: list[tuple[int, int]] = []
    # Sorted edges are consumed in growing chunks.  Edges already inside one
    # component at the start of a chunk are dropped in bulk; the rest go
    # through the union-find in order, so the result is plain Kruskal.
    labels = np.arange(n)
    start, chunk = 0, n
    while len(edges) < n - 1:
        block = order[start : start + chunk]
        start += chunk
        chunk *= 2
        ci, cj = iu[block], ju[block]
        live = labels[ci] != labels[cj]
        for i, j in zip(ci[live].tolist(), cj[live].tolist()):
            if uf.union(i, j):
                edges.append((i, j))
                if len(edges) == n - 1:
                    break
        labels = np.fromiter((uf.find(k) for k in range(n)), dtype=np.int64, count=n)
    arr = np.asarray(edges, dtype=np.int64)
    return PersistencePairing(arr, d[arr[:, 0], arr[:, 1]].copy())


def diagram_from_pairing(dist: DistanceMatrix | np.ndarray, pairing: PersistencePairing) -> PersistenceDiagram0D:
    d = dist.entries if isinstance(dist, DistanceMatrix) else np.asarray(dist, dtype=np.float64)
    if len(pairing) and pairing.edges.max() >= d.shape[0]:
        raise ValueError("pairing refers to points outside the distance matrix")
    deaths = d[pairing.edges[:, 0], pairing.edges[:, 1]] if len(pairing) else np.zeros(0)
    return PersistenceDiagram0D(np.column_stack([np.zeros(len(deaths)), deaths]))


def diagram_to_csv(pairing: PersistencePairing, diagram: PersistenceDiagram0D) -> str:
    lines = ["edge_i,edge_j,birth,death"]
    for (i, j), (birth, death) in zip(pairing.edges, diagram.points):
        lines.append(f"{int(i)},{int(j)},{float(birth)!r},{float(death)!r}")
    return "\n".join(lines) + "\n"
