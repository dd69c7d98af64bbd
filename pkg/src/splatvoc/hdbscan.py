"""In-house HDBSCAN: mutual reachability, MST, condensed tree, EOM selection.

Hierarchical density clustering over small point sets (mask prototypes at
desk scale), matching the standard reference algorithm: core distances from
the min_samples-th nearest neighbor (self included), mutual-reachability
minimum spanning tree, condensed cluster tree at min_cluster_size,
excess-of-mass selection, optional epsilon merging, and noise labeling.
Deterministic for a fixed input order; distance ties resolve by index.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

NOISE = -1


@dataclass
class HdbscanConfig:
    min_cluster_size: int = 5
    cluster_selection_epsilon: float = 0.0
    metric: str = "euclidean"          # "euclidean" or "cosine"
    min_samples: int | None = None     # defaults to min_cluster_size
    allow_single_cluster: bool = False

    def validate(self) -> None:
        if self.min_cluster_size < 2:
            raise ValueError("min_cluster_size must be at least 2")
        if self.cluster_selection_epsilon < 0:
            raise ValueError("cluster selection epsilon must be non-negative")
        if self.metric not in ("euclidean", "cosine"):
            raise ValueError(f"unsupported metric: {self.metric}")
        if self.min_samples is not None and self.min_samples < 1:
            raise ValueError("min_samples must be positive")


def pairwise_distances(points: np.ndarray, metric: str) -> np.ndarray:
    points = np.asarray(points, dtype=np.float64)
    if metric == "euclidean":
        diff = points[:, None, :] - points[None, :, :]
        d = np.sqrt((diff ** 2).sum(axis=2))
    else:  # cosine distance 1 - cos
        norms = np.linalg.norm(points, axis=1)
        denom = np.outer(norms, norms)
        with np.errstate(invalid="ignore", divide="ignore"):
            cos = np.where(denom > 0, points @ points.T / denom, 0.0)
        d = 1.0 - np.clip(cos, -1.0, 1.0)
    np.fill_diagonal(d, 0.0)
    return d


def mutual_reachability(dist: np.ndarray, min_samples: int) -> np.ndarray:
    """max(core_i, core_j, d_ij) with core = distance to the min_samples-th
    neighbor, the point itself counting as its own nearest neighbor."""
    k = min(min_samples, dist.shape[0])
    core = np.sort(dist, axis=1)[:, k - 1]
    mr = np.maximum(dist, np.maximum(core[:, None], core[None, :]))
    np.fill_diagonal(mr, 0.0)
    return mr


def prim_mst(weights: np.ndarray) -> np.ndarray:
    """Dense Prim's MST; returns (n-1, 3) rows [u, v, weight]."""
    n = weights.shape[0]
    in_tree = np.zeros(n, bool)
    best = np.full(n, np.inf)
    source = np.zeros(n, dtype=np.int64)
    in_tree[0] = True
    best[0] = 0.0
    current = 0
    edges = np.zeros((n - 1, 3))
    for i in range(n - 1):
        improve = weights[current] < best
        improve &= ~in_tree
        best[improve] = weights[current][improve]
        source[improve] = current
        candidate = np.where(in_tree, np.inf, best)
        nxt = int(np.argmin(candidate))
        edges[i] = (source[nxt], nxt, best[nxt])
        in_tree[nxt] = True
        current = nxt
    return edges


def single_linkage(mst_edges: np.ndarray, n: int) -> np.ndarray:
    """Merge tree from MST edges sorted by weight: rows [left, right, dist, size].

    Row i merges the clusters containing its endpoints into cluster id n + i.
    """
    order = np.argsort(mst_edges[:, 2], kind="stable")
    parent = np.arange(2 * n - 1, dtype=np.int64)
    size = np.concatenate([np.ones(n, dtype=np.int64), np.zeros(n - 1, dtype=np.int64)])

    def find(x: int) -> int:
        root = x
        while parent[root] != root:
            root = parent[root]
        while parent[x] != root:
            parent[x], x = root, parent[x]
        return root

    rows = np.zeros((n - 1, 4))
    for i, e in enumerate(order):
        u, v, d = mst_edges[e]
        ru, rv = find(int(u)), find(int(v))
        new = n + i
        rows[i] = (ru, rv, d, size[ru] + size[rv])
        parent[ru] = parent[rv] = new
        size[new] = size[ru] + size[rv]
    return rows


def _sl_children(sl_tree: np.ndarray, n: int, node: int) -> tuple[int, int, float]:
    row = sl_tree[node - n]
    return int(row[0]), int(row[1]), float(row[2])


def _sl_size(sl_tree: np.ndarray, n: int, node: int) -> int:
    return 1 if node < n else int(sl_tree[node - n, 3])


def _sl_leaves(sl_tree: np.ndarray, n: int, node: int) -> list[int]:
    out, stack = [], [node]
    while stack:
        x = stack.pop()
        if x < n:
            out.append(x)
        else:
            l, r, _ = _sl_children(sl_tree, n, x)
            stack.extend((r, l))
    return out


def condense_tree(sl_tree: np.ndarray, n: int, min_cluster_size: int) -> np.ndarray:
    """Condensed cluster tree rows [parent, child, lambda, child_size].

    Children smaller than min_cluster_size fall out of their parent as
    points; a split into two big children creates two new clusters. Cluster
    ids start at n (the root); lambda = 1 / merge distance.
    """
    root = 2 * n - 2
    rows: list[tuple[int, int, float, int]] = []
    next_label = n + 1
    stack = [(root, n)]  # (single-linkage node, condensed cluster id)
    while stack:
        node, cond = stack.pop()
        left, right, d = _sl_children(sl_tree, n, node)
        lam = 1.0 / d if d > 0 else np.inf
        ls, rs = _sl_size(sl_tree, n, left), _sl_size(sl_tree, n, right)
        big_l, big_r = ls >= min_cluster_size, rs >= min_cluster_size
        if big_l and big_r:
            for child, csize in ((left, ls), (right, rs)):
                rows.append((cond, next_label, lam, csize))
                stack.append((child, next_label))
                next_label += 1
        elif big_l or big_r:
            big, small = (left, right) if big_l else (right, left)
            for leaf in _sl_leaves(sl_tree, n, small):
                rows.append((cond, leaf, lam, 1))
            stack.append((big, cond))
        else:
            for leaf in _sl_leaves(sl_tree, n, left) + _sl_leaves(sl_tree, n, right):
                rows.append((cond, leaf, lam, 1))
    # drop stack frames that point at leaves (a "big" child is never a leaf
    # since min_cluster_size >= 2, so this cannot happen; guard regardless)
    return np.array(rows, dtype=np.float64).reshape(-1, 4)


def compute_stability(condensed: np.ndarray, n: int) -> dict[int, float]:
    """stability(c) = sum over rows with parent c of (lambda - birth(c)) * size."""
    births: dict[int, float] = {n: 0.0}
    for parent, child, lam, _ in condensed:
        if child >= n:
            births[int(child)] = lam
    stability: dict[int, float] = {c: 0.0 for c in births}
    for parent, child, lam, size in condensed:
        p = int(parent)
        stability[p] += (lam - births[p]) * size
    return stability


def _cluster_children(condensed: np.ndarray, n: int) -> dict[int, list[int]]:
    out: dict[int, list[int]] = {}
    for parent, child, _, _ in condensed:
        if child >= n:
            out.setdefault(int(parent), []).append(int(child))
    return out


def _bfs_clusters(children: dict[int, list[int]], start: int) -> list[int]:
    out, queue = [], [start]
    while queue:
        x = queue.pop(0)
        out.append(x)
        queue.extend(children.get(x, []))
    return out


def _birth_lambda(condensed: np.ndarray, cluster: int) -> float:
    rows = condensed[condensed[:, 1] == cluster]
    return float(rows[0, 2]) if len(rows) else 0.0


def _traverse_upwards(condensed: np.ndarray, n: int, eps: float, leaf: int,
                      allow_single_cluster: bool, parents: dict[int, int]) -> int:
    root = n
    node = leaf
    while True:
        parent = parents.get(node)
        if parent is None or parent == root:
            return root if allow_single_cluster else node
        parent_eps = 1.0 / _birth_lambda(condensed, parent)
        if parent_eps > eps:
            return parent
        node = parent


def _epsilon_search(selected: list[int], condensed: np.ndarray, n: int, eps: float,
                    allow_single_cluster: bool,
                    children: dict[int, list[int]]) -> list[int]:
    parents = {c: p for p, cs in children.items() for c in cs}
    chosen: list[int] = []
    processed: set[int] = set()
    for leaf in selected:
        birth = _birth_lambda(condensed, leaf)
        leaf_eps = 1.0 / birth if birth > 0 else np.inf
        if leaf_eps < eps:
            if leaf not in processed:
                ancestor = _traverse_upwards(condensed, n, eps, leaf,
                                             allow_single_cluster, parents)
                chosen.append(ancestor)
                processed.update(x for x in _bfs_clusters(children, ancestor)
                                 if x != ancestor)
        else:
            chosen.append(leaf)
    return sorted(set(chosen))


def select_clusters_eom(condensed: np.ndarray, n: int,
                        cluster_selection_epsilon: float = 0.0,
                        allow_single_cluster: bool = False) -> list[int]:
    """Excess-of-mass selection over the condensed tree, bottom-up."""
    stability = compute_stability(condensed, n)
    children = _cluster_children(condensed, n)
    node_list = sorted(stability, reverse=True)
    if not allow_single_cluster:
        node_list = node_list[:-1]  # root not selectable
    if not node_list:
        return []
    is_cluster = {c: True for c in node_list}
    for node in node_list:
        subtree = sum(stability[c] for c in children.get(node, []))
        if subtree > stability[node]:
            is_cluster[node] = False
            stability[node] = subtree
        else:
            for sub in _bfs_clusters(children, node):
                if sub != node and sub in is_cluster:
                    is_cluster[sub] = False
    selected = [c for c in node_list if is_cluster[c]]
    if selected == [n]:
        return selected if allow_single_cluster else []
    if cluster_selection_epsilon != 0.0 and len(selected) > 1:
        selected = _epsilon_search(selected, condensed, n, cluster_selection_epsilon,
                                   allow_single_cluster, children)
    return sorted(selected)


def label_points(condensed: np.ndarray, n: int, selected: list[int],
                 allow_single_cluster: bool = False,
                 cluster_selection_epsilon: float = 0.0) -> np.ndarray:
    """Noise/cluster labels: each point joins the selected cluster whose
    condensed subtree it fell out of; consecutive ids follow tree order."""
    labels = np.full(n, NOISE, dtype=np.int64)
    if not selected:
        return labels
    selected_set = set(selected)
    label_map = {c: i for i, c in enumerate(sorted(selected))}

    # union-find over condensed nodes, never crossing into a selected child
    ids = np.arange(2 * n + len(condensed) + 2, dtype=np.int64)

    def find(x: int) -> int:
        root = x
        while ids[root] != root:
            root = ids[root]
        while ids[x] != root:
            ids[x], x = root, ids[x]
        return root

    for parent, child, _, _ in condensed:
        if int(child) not in selected_set:
            ids[find(int(child))] = find(int(parent))

    if selected == [n]:
        # single selected root: only points at least as dense as the root's
        # last split survive as members
        point_rows = condensed[condensed[:, 1] < n]
        lam = {int(c): l for _, c, l, _ in point_rows}
        root_rows = condensed[condensed[:, 0] == n]
        if cluster_selection_epsilon != 0.0:
            threshold = 1.0 / cluster_selection_epsilon
        else:
            threshold = root_rows[:, 2].max() if len(root_rows) else np.inf
        for p in range(n):
            if find(p) == n and lam.get(p, 0.0) >= threshold:
                labels[p] = label_map[n]
        return labels

    for p in range(n):
        c = find(p)
        if c in selected_set:
            labels[p] = label_map[c]
    return labels


def hdbscan(points: np.ndarray, cfg: HdbscanConfig) -> np.ndarray:
    """Cluster labels for each point; -1 marks noise. All-noise is valid."""
    cfg.validate()
    points = np.asarray(points, dtype=np.float64)
    if points.ndim != 2 or points.shape[0] < 1:
        raise ValueError("need a non-empty (n, d) point array")
    n = points.shape[0]
    if n < cfg.min_cluster_size:
        return np.full(n, NOISE, dtype=np.int64)
    dist = pairwise_distances(points, cfg.metric)
    mr = mutual_reachability(dist, cfg.min_samples or cfg.min_cluster_size)
    mst = prim_mst(mr)
    sl = single_linkage(mst, n)
    condensed = condense_tree(sl, n, cfg.min_cluster_size)
    selected = select_clusters_eom(condensed, n, cfg.cluster_selection_epsilon,
                                   cfg.allow_single_cluster)
    return label_points(condensed, n, selected, cfg.allow_single_cluster,
                        cfg.cluster_selection_epsilon)
