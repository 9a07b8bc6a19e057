"""HDBSCAN with a cluster-selection distance threshold, in (x, y, z, Doppler) space.

The pipeline is the usual one: core distances, mutual reachability, minimum
spanning tree, single-linkage hierarchy, condensed tree, excess-of-mass
selection. Selected clusters born below ``cluster_selection_epsilon`` are then
replaced by their lowest ancestor born at or above it.

Ties are broken deterministically: edges are ordered by ``(weight, lower
endpoint index, higher endpoint index)``. Under this strict total order the
minimum spanning tree is unique, so any correct MST routine yields the same
hierarchy.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.spatial.distance import cdist

from .core import ClusterLabels, RadarScan


@dataclass
class ClusterParams:
    min_cluster_size: int = 2
    cluster_selection_epsilon: float = 0.1
    min_samples: int | None = None
    feature_weights: tuple = (1.0, 1.0, 1.0, 1.0)
    allow_single_cluster: bool = False
    use_compensated: bool = True

    def __post_init__(self):
        if self.min_cluster_size < 2:
            raise ValueError("min_cluster_size must be >= 2")
        if self.cluster_selection_epsilon < 0:
            raise ValueError("cluster_selection_epsilon must be >= 0")
        if len(self.feature_weights) != 4 or any(w <= 0 for w in self.feature_weights):
            raise ValueError("feature_weights must be four positive numbers")
        self.feature_weights = tuple(float(w) for w in self.feature_weights)

    @property
    def samples(self) -> int:
        return self.min_cluster_size if self.min_samples is None else self.min_samples


def cluster_features(scan: RadarScan, params: ClusterParams = ClusterParams(),
                     weights=None) -> np.ndarray:
    """Weighted (x, y, z, v) rows; RCS is deliberately left out.

    ``weights`` overrides ``params.feature_weights`` and may contain zeros.
    """
    w = np.asarray(params.feature_weights if weights is None else weights, dtype=np.float64)
    v = scan.v_comp if params.use_compensated else scan.v_raw
    return np.column_stack([scan.xyz, v]).reshape(-1, 4) * w


def core_distances(dist: np.ndarray, min_samples: int) -> np.ndarray:
    """Distance to the ``min_samples``-th nearest neighbour, counting the point itself."""
    k = min(min_samples, len(dist)) - 1
    return np.partition(dist, k, axis=1)[:, k]


def mutual_reachability(features: np.ndarray, min_samples: int) -> np.ndarray:
    dist = cdist(features, features)
    core = core_distances(dist, min_samples)
    return np.maximum(dist, np.maximum(core[:, None], core[None, :]))


def minimum_spanning_tree(weights: np.ndarray) -> np.ndarray:
    """Prim's algorithm on a dense symmetric matrix.

    Returns an (N-1) x 3 array of ``(low, high, weight)`` rows.
    """
    n = len(weights)
    if n < 2:
        return np.zeros((0, 3))
    idx = np.arange(n)
    in_tree = np.zeros(n, dtype=bool)
    best_w = np.full(n, np.inf)
    best_lo = np.full(n, n, dtype=np.int64)
    best_hi = np.full(n, n, dtype=np.int64)
    edges = np.zeros((n - 1, 3))
    u = 0
    for step in range(n - 1):
        in_tree[u] = True
        w = weights[u]
        lo = np.minimum(idx, u)
        hi = np.maximum(idx, u)
        better = (w < best_w) | ((w == best_w) & ((lo < best_lo) | ((lo == best_lo) & (hi < best_hi))))
        better &= ~in_tree
        best_w[better] = w[better]
        best_lo[better] = lo[better]
        best_hi[better] = hi[better]

        cand_w = np.where(in_tree, np.inf, best_w)
        m = cand_w.min()
        cand = np.flatnonzero((cand_w == m) & ~in_tree)
        if len(cand) > 1:
            order = np.lexsort((best_hi[cand], best_lo[cand]))
            cand = cand[order]
        v = int(cand[0])
        edges[step] = (best_lo[v], best_hi[v], best_w[v])
        u = v
    return edges


def single_linkage(mst: np.ndarray, n: int) -> np.ndarray:
    """Scipy-style linkage rows ``(left, right, distance, size)`` from MST edges."""
    order = np.lexsort((mst[:, 1], mst[:, 0], mst[:, 2]))
    parent = np.arange(2 * n - 1)
    size = np.ones(2 * n - 1, dtype=np.int64)

    def find(x):
        root = x
        while parent[root] != root:
            root = parent[root]
        while parent[x] != root:
            parent[x], x = root, parent[x]
        return root

    out = np.zeros((max(n - 1, 0), 4))
    for k, e in enumerate(order):
        a, b, w = int(mst[e, 0]), int(mst[e, 1]), mst[e, 2]
        ra, rb = find(a), find(b)
        new = n + k
        out[k] = (ra, rb, w, size[ra] + size[rb])
        parent[ra] = parent[rb] = new
        size[new] = size[ra] + size[rb]
    return out


def _leaves(linkage: np.ndarray, node: int, n: int) -> list:
    out, stack = [], [node]
    while stack:
        x = stack.pop()
        if x < n:
            out.append(x)
        else:
            row = linkage[x - n]
            stack.append(int(row[1]))
            stack.append(int(row[0]))
    return out


def _lam(dist: float) -> float:
    return 1.0 / dist if dist > 0 else np.inf


def condense_tree(linkage: np.ndarray, n: int, min_cluster_size: int) -> np.ndarray:
    """Condensed tree rows ``(parent, child, lambda, child_size)``; root id is ``n``."""
    rows = []
    if n < 2:
        return np.zeros((0, 4))
    root = 2 * n - 2
    relabel = {root: n}
    next_label = n + 1
    queue = [root]
    head = 0
    while head < len(queue):
        node = queue[head]
        head += 1
        left, right, dist, _ = linkage[node - n]
        left, right = int(left), int(right)
        lam = _lam(dist)
        n_left = 1 if left < n else int(linkage[left - n, 3])
        n_right = 1 if right < n else int(linkage[right - n, 3])
        parent = relabel[node]
        if n_left >= min_cluster_size and n_right >= min_cluster_size:
            for child, size in ((left, n_left), (right, n_right)):
                relabel[child] = next_label
                rows.append((parent, next_label, lam, size))
                next_label += 1
                queue.append(child)
        elif n_left < min_cluster_size and n_right < min_cluster_size:
            for child in (left, right):
                for p in _leaves(linkage, child, n):
                    rows.append((parent, p, lam, 1))
        else:
            small, big = (left, right) if n_left < min_cluster_size else (right, left)
            for p in _leaves(linkage, small, n):
                rows.append((parent, p, lam, 1))
            if big >= n:
                relabel[big] = parent
                queue.append(big)
            else:  # pragma: no cover - big side has >= min_cluster_size >= 2 points
                rows.append((parent, big, lam, 1))
    return np.array(rows, dtype=np.float64).reshape(-1, 4)


def _stability(tree: np.ndarray, root: int) -> dict:
    parents = tree[:, 0].astype(np.int64)
    children = tree[:, 1].astype(np.int64)
    birth = {root: 0.0}
    for c, lam, size in zip(children, tree[:, 2], tree[:, 3]):
        if size > 1:
            birth[int(c)] = lam
    stab = {c: 0.0 for c in birth}
    with np.errstate(invalid="ignore"):
        for p, lam, size in zip(parents, tree[:, 2], tree[:, 3]):
            stab[int(p)] += (lam - birth[int(p)]) * size
    return stab, birth


def select_clusters(tree: np.ndarray, n: int, epsilon: float,
                    allow_single_cluster: bool = False) -> tuple:
    """Excess-of-mass selection followed by the epsilon merge.

    Returns ``(selected cluster ids, birth lambdas, cluster-parent map)``.
    """
    root = n
    stab, birth = _stability(tree, root)
    cl = tree[tree[:, 3] > 1]
    parent_of = {int(c): int(p) for p, c in zip(cl[:, 0], cl[:, 1])}
    children_of: dict = {}
    for c, p in parent_of.items():
        children_of.setdefault(p, []).append(c)

    def descendants(node):
        out, stack = [], list(children_of.get(node, []))
        while stack:
            x = stack.pop()
            out.append(x)
            stack.extend(children_of.get(x, []))
        return out

    nodes = sorted(stab, reverse=True)
    if not allow_single_cluster:
        nodes = [c for c in nodes if c != root]
    is_cluster = {c: True for c in nodes}
    for node in nodes:
        sub = float(np.sum([stab[c] for c in children_of.get(node, [])]))
        if sub > stab[node]:
            is_cluster[node] = False
            stab[node] = sub
        else:
            for d in descendants(node):
                is_cluster[d] = False
    selected = {c for c, keep in is_cluster.items() if keep}

    if epsilon != 0.0 and len(cl) > 0:
        if selected == {root}:
            if not allow_single_cluster:
                selected = set()
        else:
            selected = _epsilon_search(selected, parent_of, birth, descendants, root,
                                       epsilon, allow_single_cluster)
    return selected, birth, parent_of


def _birth_eps(birth: dict, c: int) -> float:
    lam = birth[c]
    return 1.0 / lam if lam > 0 else np.inf


def _epsilon_search(leaves, parent_of, birth, descendants, root, epsilon, allow_single):
    selected, processed = set(), set()
    for leaf in sorted(leaves):
        if _birth_eps(birth, leaf) < epsilon:
            if leaf in processed:
                continue
            node = leaf
            while True:
                parent = parent_of[node]
                if parent == root:
                    node = parent if allow_single else node
                    break
                if _birth_eps(birth, parent) >= epsilon:
                    node = parent
                    break
                node = parent
            selected.add(node)
            processed.update(d for d in descendants(node) if d != node)
        else:
            selected.add(leaf)
    return selected


def label_points(tree: np.ndarray, n: int, selected: set, parent_of: dict,
                 epsilon: float, allow_single_cluster: bool = False) -> np.ndarray:
    root = n
    label_map = {c: i for i, c in enumerate(sorted(selected))}
    owner = {}

    def resolve(c):
        chain = []
        while c not in owner:
            if c in label_map:
                owner[c] = c
                break
            if c == root:
                owner[c] = root
                break
            chain.append(c)
            c = parent_of[c]
        for x in chain:
            owner[x] = owner[c]
        return owner[c]

    labels = np.full(n, -1, dtype=np.int64)
    if not label_map:
        return labels
    point_rows = tree[tree[:, 3] == 1]
    root_max_lam = tree[tree[:, 0] == root, 2].max() if len(tree) else 0.0
    for p, c, lam, _ in point_rows:
        top = resolve(int(p))
        if top == root:
            if root in label_map and len(label_map) == 1 and allow_single_cluster:
                keep = lam >= 1.0 / epsilon if epsilon != 0.0 else lam >= root_max_lam
                if keep:
                    labels[int(c)] = label_map[root]
            continue
        labels[int(c)] = label_map[top]
    return labels


def hdbscan_eps(features: np.ndarray, params: ClusterParams = ClusterParams()) -> ClusterLabels:
    features = np.asarray(features, dtype=np.float64).reshape(-1, 4) \
        if np.size(features) else np.zeros((0, 4))
    n = len(features)
    if n < params.min_cluster_size or n < 2:
        return ClusterLabels(np.full(n, -1), refined=False)
    mr = mutual_reachability(features, params.samples)
    mst = minimum_spanning_tree(mr)
    linkage = single_linkage(mst, n)
    tree = condense_tree(linkage, n, params.min_cluster_size)
    selected, _, parent_of = select_clusters(tree, n, params.cluster_selection_epsilon,
                                             params.allow_single_cluster)
    labels = label_points(tree, n, selected, parent_of, params.cluster_selection_epsilon,
                          params.allow_single_cluster)
    return ClusterLabels(labels, refined=False)


def cluster_scan(scan: RadarScan, params: ClusterParams = ClusterParams()) -> ClusterLabels:
    return hdbscan_eps(cluster_features(scan, params), params)
