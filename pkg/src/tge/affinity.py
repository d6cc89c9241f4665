"""Background token pruning: local-affinity clustering of grid tokens."""

from __future__ import annotations

from dataclasses import dataclass
from fractions import Fraction

import numpy as np

from .errors import BoundsError, InputError
from .token_model import CompressionReport, TokenGrid

_OFFSETS = {
    4: ((-1, 0), (0, -1), (0, 1), (1, 0)),
    8: ((-1, -1), (-1, 0), (-1, 1), (0, -1), (0, 1), (1, -1), (1, 0), (1, 1)),
}


@dataclass(frozen=True)
class AffinityConfig:
    neighborhood: int = 8
    steps_n: int = 3
    join_threshold: float = 0.85
    temperature: float = 0.1

    def __post_init__(self):
        if self.neighborhood not in _OFFSETS:
            raise InputError(f"neighborhood must be 4 or 8, got {self.neighborhood}")
        if self.steps_n < 1:
            raise InputError("steps_n must be positive")
        if not 0.0 <= self.join_threshold <= 1.0:
            raise InputError("join_threshold must lie in [0, 1]")
        if not self.temperature > 0:
            raise InputError("temperature must be positive")

    def to_dict(self) -> dict:
        return {"neighborhood": self.neighborhood, "steps_n": self.steps_n,
                "join_threshold": self.join_threshold, "temperature": self.temperature}


@dataclass(frozen=True)
class ClusterAssignment:
    cluster_of: np.ndarray
    cluster_count: int

    def __post_init__(self):
        c = np.asarray(self.cluster_of, dtype=np.int64)
        c.flags.writeable = False
        object.__setattr__(self, "cluster_of", c)
        if len(c) and (c.min() != 0 or c.max() != self.cluster_count - 1
                       or len(np.unique(c)) != self.cluster_count):
            raise InputError("cluster ids must be contiguous 0..cluster_count-1")

    def members(self) -> list[np.ndarray]:
        order = np.argsort(self.cluster_of, kind="stable")
        bounds = np.cumsum(np.bincount(self.cluster_of, minlength=self.cluster_count))[:-1]
        return np.split(order, bounds)

    def to_json(self) -> dict:
        return {"cluster_of": [int(c) for c in self.cluster_of]}


class UnionFind:
    """Disjoint sets over 0..size-1 with path halving and union by size."""

    def __init__(self, size):
        self.parent = list(range(size))
        self.size = [1] * size

    def find(self, a):
        parent = self.parent
        while parent[a] != a:
            parent[a] = parent[parent[a]]
            a = parent[a]
        return a

    def union(self, a, b):
        ra, rb = self.find(a), self.find(b)
        if ra == rb:
            return
        if self.size[ra] < self.size[rb]:
            ra, rb = rb, ra
        self.parent[rb] = ra
        self.size[ra] += self.size[rb]

    def labels(self) -> np.ndarray:
        """Contiguous labels numbered by each set's smallest member."""
        out = np.empty(len(self.parent), dtype=np.int64)
        seen = {}
        for i in range(len(self.parent)):
            out[i] = seen.setdefault(self.find(i), len(seen))
        return out


def _neighbors(rows, cols, r, c, neighborhood):
    for dr, dc in _OFFSETS[neighborhood]:
        rr, cc = r + dr, c + dc
        if 0 <= rr < rows and 0 <= cc < cols:
            yield rr, cc


def _cosine(u, v) -> float:
    nu, nv = np.linalg.norm(u), np.linalg.norm(v)
    if nu == 0.0 or nv == 0.0:
        return 0.0
    return float(np.clip(u @ v / (nu * nv), -1.0, 1.0))


def neighbor_affinity(grid: TokenGrid, p, config: AffinityConfig):
    """Softmax over ``p``'s in-grid neighbours of cosine similarity / temperature.

    Returns ``[((row, col), q), ...]`` in neighbourhood scan order.
    """
    r, c = p
    if not (0 <= r < grid.rows and 0 <= c < grid.cols):
        raise BoundsError(f"token {p} outside {grid.rows}x{grid.cols} grid")
    if grid.n_tokens < 2:
        raise InputError("affinity needs at least 2 tokens")
    data = grid.data.astype(np.float64)
    nbrs = list(_neighbors(grid.rows, grid.cols, r, c, config.neighborhood))
    logits = np.array([_cosine(data[r, c], data[s]) for s in nbrs]) / config.temperature
    e = np.exp(logits - logits.max())
    q = e / e.sum()
    return list(zip(nbrs, q.tolist()))


def _edge_mask(grid: TokenGrid, config: AffinityConfig):
    """For each neighbour offset, a (rows, cols) mask: True where p and p+offset
    are both in-grid and their cosine reaches the join threshold."""
    x = grid.data.astype(np.float64)
    norms = np.linalg.norm(x, axis=2)
    safe = np.where(norms > 0, norms, 1.0)
    unit = x / safe[..., None]
    rows, cols = grid.rows, grid.cols
    masks = {}
    for dr, dc in _OFFSETS[config.neighborhood]:
        m = np.zeros((rows, cols), dtype=bool)
        r0, r1 = max(0, -dr), min(rows, rows - dr)
        c0, c1 = max(0, -dc), min(cols, cols - dc)
        if r0 < r1 and c0 < c1:
            a = unit[r0:r1, c0:c1]
            b = unit[r0 + dr:r1 + dr, c0 + dc:c1 + dc]
            cos = np.clip((a * b).sum(axis=2), -1.0, 1.0)
            ok = (norms[r0:r1, c0:c1] > 0) & (norms[r0 + dr:r1 + dr, c0 + dc:c1 + dc] > 0)
            m[r0:r1, c0:c1] = ok & (cos >= config.join_threshold)
        masks[(dr, dc)] = m
    return masks


def _admissions(grid, config):
    """Adjacency list: token index -> neighbour indices it admits."""
    cols = grid.cols
    adj = [[] for _ in range(grid.n_tokens)]
    for (dr, dc), m in _edge_mask(grid, config).items():
        for r, c in zip(*np.nonzero(m)):
            adj[r * cols + c].append((r + dr) * cols + c + dc)
    return adj


def _grow(adj, seed, steps):
    members = {seed}
    frontier = [seed]
    for _ in range(steps):
        nxt = []
        for p in frontier:
            for s in adj[p]:
                if s not in members:
                    members.add(s)
                    nxt.append(s)
        if not nxt:
            break
        frontier = nxt
    return members


def grow_cluster(grid: TokenGrid, seed_token: int, config: AffinityConfig) -> set[int]:
    """Tokens reached from ``seed_token`` in ``steps_n`` rounds of admitting
    neighbours whose cosine similarity to the admitting token passes the threshold."""
    if not 0 <= seed_token < grid.n_tokens:
        raise BoundsError(f"seed {seed_token} outside grid of {grid.n_tokens} tokens")
    return _grow(_admissions(grid, config), seed_token, config.steps_n)


def cluster_grid(grid: TokenGrid, config: AffinityConfig, seed_order=None,
                 exhaustive: bool = False) -> ClusterAssignment:
    """Grow a cluster from every token and merge clusters that share a member.

    Every grown set is connected through admission edges and contains its seed's
    direct admissions, so the merged result is the same as uniting each token with
    the neighbours it admits. That edge form is the default; ``exhaustive=True``
    runs the full ``steps_n``-round growth from every seed instead.

    ``seed_order`` only changes the order seeds are processed in; the partition
    does not depend on it. Cluster ids are numbered by smallest member index.
    """
    n = grid.n_tokens
    adj = _admissions(grid, config)
    order = range(n) if seed_order is None else seed_order
    uf = UnionFind(n)
    for seed in order:
        reached = _grow(adj, seed, config.steps_n) if exhaustive else adj[seed]
        for s in reached:
            uf.union(seed, s)
    labels = uf.labels()
    return ClusterAssignment(labels, int(labels.max()) + 1 if n else 0)


def pool_clusters(grid: TokenGrid, assignment: ClusterAssignment):
    """One mean vector per cluster, ordered by smallest member index.

    Returns ``(tokens, report)`` where ``tokens`` is (clusters, dim) and the report
    fragment carries the cluster sizes and each cluster's smallest member index.
    """
    if len(assignment.cluster_of) != grid.n_tokens:
        raise InputError("assignment does not cover the grid")
    x = grid.tokens.astype(np.float64)
    k = assignment.cluster_count
    sums = np.zeros((k, grid.dim))
    np.add.at(sums, assignment.cluster_of, x)
    sizes = np.bincount(assignment.cluster_of, minlength=k)
    first = np.full(k, grid.n_tokens, dtype=np.int64)
    np.minimum.at(first, assignment.cluster_of, np.arange(grid.n_tokens))
    # labels from cluster_grid are already in first-member order; sort anyway for
    # assignments built elsewhere
    order = np.argsort(first, kind="stable")
    tokens = (sums / sizes[:, None])[order].astype(np.float32)
    report = CompressionReport(
        original_token_count=grid.n_tokens,
        retained_token_count=k,
        tokens_per_grid=k,
        compression_ratio=Fraction(grid.n_tokens, k),
        estimated_tflops=0.0,
        retained_indices=first[order].tolist(),
        cluster_sizes=sizes[order].tolist(),
        pooled_token_count=k,
    )
    return tokens, report
