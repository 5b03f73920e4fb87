"""Isolation forest built from scratch.

Trees are stored as flat node arrays (an arena): ``feature[i] == -1`` marks a
leaf.  Scoring walks all points through a tree at once with numpy fancy
indexing, so a forest of 100 depth-10 trees scores thousands of rows quickly.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

# Harmonic-number approximation H(i) ~ ln(i) + 0.5772, used everywhere for consistency.
EULER_APPROX = 0.5772


def c_factor(n: int) -> float:
    """Average path length of an unsuccessful BST search over ``n`` points."""
    if n <= 1:
        return 0.0
    return 2.0 * (math.log(n - 1) + EULER_APPROX) - 2.0 * (n - 1) / n


def score_from_path(mean_path: float | np.ndarray, c_norm: float) -> float | np.ndarray:
    """2 ** (-E[h] / c).  A zero normalizer (subsample of one point) scores 1."""
    if isinstance(mean_path, np.ndarray):
        if c_norm <= 0.0:
            return np.ones_like(mean_path, dtype=np.float64)
        return np.power(2.0, -mean_path / c_norm)
    if c_norm <= 0.0:
        return 1.0
    return 2.0 ** (-mean_path / c_norm)


@dataclass
class IsoTree:
    feature: np.ndarray  # int64, -1 for leaves
    threshold: np.ndarray
    left: np.ndarray
    right: np.ndarray
    size: np.ndarray  # points that reached the node at build time
    depth: np.ndarray

    @property
    def n_nodes(self) -> int:
        return int(self.feature.size)

    @property
    def height(self) -> int:
        return int(self.depth.max()) if self.depth.size else 0

    def leaf_adjustment(self) -> np.ndarray:
        adj = np.zeros(self.n_nodes)
        leaves = self.feature < 0
        adj[leaves] = [c_factor(int(s)) for s in self.size[leaves]]
        return adj

    def to_dict(self) -> dict:
        return {
            "feature": self.feature.tolist(),
            "threshold": self.threshold.tolist(),
            "left": self.left.tolist(),
            "right": self.right.tolist(),
            "size": self.size.tolist(),
            "depth": self.depth.tolist(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "IsoTree":
        return cls(
            feature=np.asarray(d["feature"], dtype=np.int64),
            threshold=np.asarray(d["threshold"], dtype=np.float64),
            left=np.asarray(d["left"], dtype=np.int64),
            right=np.asarray(d["right"], dtype=np.int64),
            size=np.asarray(d["size"], dtype=np.int64),
            depth=np.asarray(d["depth"], dtype=np.int64),
        )


@dataclass
class IsoForest:
    trees: list[IsoTree]
    subsample_size: int
    max_depth: int
    master_seed: int
    n_features: int
    c_norm: float = field(init=False)

    def __post_init__(self):
        self.c_norm = c_factor(self.subsample_size)

    @property
    def num_trees(self) -> int:
        return len(self.trees)

    @property
    def node_count(self) -> int:
        return sum(t.n_nodes for t in self.trees)

    def to_dict(self) -> dict:
        return {
            "subsample_size": self.subsample_size,
            "max_depth": self.max_depth,
            "master_seed": self.master_seed,
            "n_features": self.n_features,
            "c_norm": self.c_norm,
            "trees": [t.to_dict() for t in self.trees],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "IsoForest":
        return cls(
            trees=[IsoTree.from_dict(t) for t in d["trees"]],
            subsample_size=int(d["subsample_size"]),
            max_depth=int(d["max_depth"]),
            master_seed=int(d["master_seed"]),
            n_features=int(d["n_features"]),
        )


def tree_rng(master_seed: int, tree_index: int) -> np.random.Generator:
    """Per-tree generator; depends only on (master_seed, tree_index)."""
    return np.random.default_rng(np.random.SeedSequence(master_seed, spawn_key=(tree_index,)))


def build_tree(points: np.ndarray, max_depth: int, rng: np.random.Generator) -> IsoTree:
    feature, threshold, left, right, size, depth = [], [], [], [], [], []

    def new_node(n: int, d: int) -> int:
        feature.append(-1)
        threshold.append(0.0)
        left.append(-1)
        right.append(-1)
        size.append(n)
        depth.append(d)
        return len(feature) - 1

    root = new_node(len(points), 0)
    stack = [(root, np.arange(len(points)), 0)]
    while stack:
        node, idx, d = stack.pop()
        if idx.size <= 1 or d >= max_depth:
            continue
        sub = points[idx]
        lo = sub.min(axis=0)
        hi = sub.max(axis=0)
        candidates = np.flatnonzero(hi > lo)
        if candidates.size == 0:
            continue
        q = int(candidates[rng.integers(candidates.size)])
        a, b = lo[q], hi[q]
        p = rng.uniform(a, b)
        while not a < p < b:
            p = rng.uniform(a, b)
        goes_left = sub[:, q] < p
        li = idx[goes_left]
        ri = idx[~goes_left]
        feature[node] = q
        threshold[node] = float(p)
        left[node] = new_node(li.size, d + 1)
        right[node] = new_node(ri.size, d + 1)
        # Right pushed first so the left subtree is numbered first.
        stack.append((right[node], ri, d + 1))
        stack.append((left[node], li, d + 1))

    return IsoTree(
        feature=np.asarray(feature, dtype=np.int64),
        threshold=np.asarray(threshold, dtype=np.float64),
        left=np.asarray(left, dtype=np.int64),
        right=np.asarray(right, dtype=np.int64),
        size=np.asarray(size, dtype=np.int64),
        depth=np.asarray(depth, dtype=np.int64),
    )


def build_forest(
    data: np.ndarray,
    num_trees: int = 100,
    subsample_size: int = 256,
    max_depth: int = 10,
    master_seed: int = 0,
) -> IsoForest:
    data = np.asarray(data, dtype=np.float64)
    if data.ndim != 2 or data.shape[0] == 0 or data.shape[1] == 0:
        raise ValueError("isolation forest needs a nonempty 2-D feature matrix")
    if not np.all(np.isfinite(data)):
        raise ValueError("isolation forest input must be finite")
    if subsample_size < 1 or subsample_size > data.shape[0]:
        raise ValueError(f"subsample_size {subsample_size} outside [1, {data.shape[0]}]")
    trees = []
    for i in range(num_trees):
        rng = tree_rng(master_seed, i)
        rows = rng.choice(data.shape[0], size=subsample_size, replace=False)
        trees.append(build_tree(data[rows], max_depth, rng))
    return IsoForest(
        trees=trees,
        subsample_size=subsample_size,
        max_depth=max_depth,
        master_seed=master_seed,
        n_features=data.shape[1],
    )


def _check_dim(points: np.ndarray, n_features: int) -> np.ndarray:
    points = np.asarray(points, dtype=np.float64)
    if points.ndim == 1:
        points = points.reshape(1, -1)
    if points.shape[1] != n_features:
        raise ValueError(f"point has {points.shape[1]} features, forest expects {n_features}")
    return points


def tree_path_lengths(tree: IsoTree, points: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Edges traversed and adjusted path length for every row of ``points``."""
    node = np.zeros(points.shape[0], dtype=np.int64)
    rows = np.arange(points.shape[0])
    active = tree.feature[node] >= 0
    while active.any():
        n = node[active]
        go_left = points[rows[active], tree.feature[n]] < tree.threshold[n]
        node[active] = np.where(go_left, tree.left[n], tree.right[n])
        active = tree.feature[node] >= 0
    edges = tree.depth[node].astype(np.float64)
    return edges, edges + tree.leaf_adjustment()[node]


def path_length(tree: IsoTree, point, n_features: int | None = None) -> float:
    """Edges from the root to the reached leaf plus c(leaf size)."""
    point = np.asarray(point, dtype=np.float64).reshape(1, -1)
    if n_features is not None:
        point = _check_dim(point, n_features)
    used = tree.feature[tree.feature >= 0]
    if used.size and point.shape[1] <= used.max():
        raise ValueError("point dimensionality does not match the tree")
    return float(tree_path_lengths(tree, point)[1][0])


def mean_path_lengths(forest: IsoForest, points) -> np.ndarray:
    points = _check_dim(points, forest.n_features)
    total = np.zeros(points.shape[0])
    for tree in forest.trees:
        total += tree_path_lengths(tree, points)[1]
    return total / forest.num_trees


def score_samples(forest: IsoForest, points) -> np.ndarray:
    """Anomaly score in (0, 1] for every row; higher means more anomalous."""
    if forest.num_trees == 0:
        raise ValueError("forest has no trees")
    return score_from_path(mean_path_lengths(forest, points), forest.c_norm)


def anomaly_score(forest: IsoForest, point) -> float:
    return float(score_samples(forest, np.asarray(point, dtype=np.float64).reshape(1, -1))[0])


def mean_comparisons(forest: IsoForest, points) -> float:
    """Average split comparisons per scored point across the whole forest."""
    points = _check_dim(points, forest.n_features)
    if points.shape[0] == 0:
        return 0.0
    total = 0.0
    for tree in forest.trees:
        total += tree_path_lengths(tree, points)[0].mean()
    return float(total)
