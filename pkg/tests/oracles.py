"""Independent reference implementations used as test oracles.

Everything here favours obviousness over speed: explicit loops, Kruskal
instead of Prim, top-down hierarchy construction instead of union-find, and
recursive cluster selection.
"""

from __future__ import annotations

import itertools
import math

import numpy as np


# ---------------------------------------------------------------- finite differences


def central_diff(f, x: np.ndarray, h: float = 1e-6, idx=None) -> np.ndarray:
    """Central-difference gradient of scalar ``f`` at ``x`` (optionally on a subset of entries)."""
    x = np.array(x, dtype=np.float64)
    g = np.zeros_like(x)
    flat, gflat = x.reshape(-1), g.reshape(-1)
    for i in (range(flat.size) if idx is None else idx):
        old = flat[i]
        flat[i] = old + h
        fp = f(x)
        flat[i] = old - h
        fm = f(x)
        flat[i] = old
        gflat[i] = (fp - fm) / (2 * h)
    return g


def rel_error(a, b, floor: float = 1e-8) -> float:
    a, b = np.ravel(a), np.ravel(b)
    return float(np.max(np.abs(a - b)) / max(np.max(np.abs(a)), np.max(np.abs(b)), floor))


# ---------------------------------------------------------------- metrics


def pooled_iou(preds, gts) -> tuple:
    """IoU from counts summed over every point of every scan."""
    tp = fp = fn = tn = 0
    for pred, gt in zip(preds, gts):
        for p, g in zip(pred, gt):
            p, g = bool(p), bool(g)
            tp += p and g
            fp += p and not g
            fn += (not p) and g
            tn += (not p) and (not g)
    moving = 1.0 if tp + fp + fn == 0 else tp / (tp + fp + fn)
    static = 1.0 if tn + fn + fp == 0 else tn / (tn + fn + fp)
    return moving, static, (moving + static) / 2


# ---------------------------------------------------------------- contrastive loss


def brute_macl(reps_s, reps_t, labels_s, labels_t, matches, eps=1e-6) -> float:
    """Centroids by explicit summation, then the positive/negative case split."""
    total = 0.0
    for label, positive in matches:
        rows_s = [r for r, l in zip(reps_s, labels_s) if l == label]
        rows_t = [r for r, l in zip(reps_t, labels_t) if l == label]
        dim = len(reps_s[0])
        c_s = [sum(r[k] for r in rows_s) / len(rows_s) for k in range(dim)]
        c_t = [sum(r[k] for r in rows_t) / len(rows_t) for k in range(dim)]
        d = max(math.sqrt(sum((a - b) ** 2 for a, b in zip(c_s, c_t))), eps)
        total += d if positive else 1.0 / d
    return total / len(matches)


# ---------------------------------------------------------------- minimum spanning trees


def prufer_trees(n: int):
    """All labelled spanning trees of K_n as edge lists (Cayley: n^(n-2) of them)."""
    if n == 1:
        yield []
        return
    if n == 2:
        yield [(0, 1)]
        return
    for seq in itertools.product(range(n), repeat=n - 2):
        degree = [1] * n
        for x in seq:
            degree[x] += 1
        edges = []
        for x in seq:
            leaf = min(i for i in range(n) if degree[i] == 1)
            edges.append((leaf, x))
            degree[leaf] -= 1
            degree[x] -= 1
        u, v = [i for i in range(n) if degree[i] == 1]
        edges.append((u, v))
        yield edges


def brute_mst_weight(w: np.ndarray) -> float:
    return min(sum(w[a, b] for a, b in t) for t in prufer_trees(len(w)))


# ---------------------------------------------------------------- HDBSCAN(eps)


def _dist(a, b) -> float:
    return math.sqrt(sum((x - y) ** 2 for x, y in zip(a, b)))


def _kruskal(n, weight):
    """MST under the strict order (w, low index, high index)."""
    edges = sorted((weight[i][j], i, j) for i in range(n) for j in range(i + 1, n))
    comp = list(range(n))
    tree = []
    for w, i, j in edges:
        ci, cj = comp[i], comp[j]
        if ci != cj:
            comp = [ci if c == cj else c for c in comp]
            tree.append((w, i, j))
    return tree


def _components(points, edges):
    adj = {p: [] for p in points}
    for _, i, j in edges:
        adj[i].append(j)
        adj[j].append(i)
    seen, comps = set(), []
    for p in sorted(points):
        if p in seen:
            continue
        stack, comp = [p], set()
        while stack:
            x = stack.pop()
            if x in comp:
                continue
            comp.add(x)
            stack.extend(adj[x])
        seen |= comp
        comps.append(comp)
    return comps


class _Node:
    def __init__(self, parent, birth, size):
        self.parent = parent
        self.birth = birth
        self.size = size
        self.children = []
        self.fallen = []  # (point, lambda)


def naive_hdbscan(x, min_cluster_size=2, min_samples=None, epsilon=0.0, allow_single=False):
    """Reference HDBSCAN with an epsilon merge; returns an integer label per point (-1 = noise)."""
    x = [list(map(float, row)) for row in x]
    n = len(x)
    if n < 2 or n < min_cluster_size:
        return [-1] * n
    ms = min_cluster_size if min_samples is None else min_samples
    dist = [[_dist(x[i], x[j]) for j in range(n)] for i in range(n)]
    core = [sorted(dist[i])[min(ms, n) - 1] for i in range(n)]
    mr = [[max(dist[i][j], core[i], core[j]) for j in range(n)] for i in range(n)]
    mst = _kruskal(n, mr)

    nodes = [_Node(None, 0.0, n)]

    def lam(w):
        return math.inf if w == 0 else 1.0 / w

    # top-down: repeatedly cut the largest remaining edge of the component
    def grow(cid, points, edges):
        while True:
            edges = sorted(edges)
            w, i, j = edges[-1]
            rest = edges[:-1]
            a, b = _components(points, rest)
            lv = lam(w)
            big_a, big_b = len(a) >= min_cluster_size, len(b) >= min_cluster_size
            if big_a and big_b:
                for part in (a, b):
                    nodes.append(_Node(cid, lv, len(part)))
                    child = len(nodes) - 1
                    nodes[cid].children.append(child)
                    grow(child, part, [e for e in rest if e[1] in part])
                return
            if not big_a and not big_b:
                nodes[cid].fallen += [(p, lv) for p in a | b]
                return
            small, big = (a, b) if big_b else (b, a)
            nodes[cid].fallen += [(p, lv) for p in small]
            points, edges = big, [e for e in rest if e[1] in big]

    grow(0, set(range(n)), mst)

    def stability(c):
        node = nodes[c]
        s = sum(l - node.birth for _, l in node.fallen)
        s += sum((nodes[k].birth - node.birth) * nodes[k].size for k in node.children)
        return s

    def eom(c):
        node = nodes[c]
        if not node.children:
            return {c}, stability(c)
        chosen, total = set(), 0.0
        for k in node.children:
            sel, st = eom(k)
            chosen |= sel
            total += st
        if total > stability(c):
            return chosen, total
        return {c}, stability(c)

    if allow_single:
        selected, _ = eom(0)
    else:
        selected = set()
        for k in nodes[0].children:
            selected |= eom(k)[0]

    def birth_eps(c):
        return math.inf if nodes[c].birth == 0 else 1.0 / nodes[c].birth

    if epsilon != 0.0 and len(nodes) > 1 and selected != {0}:
        merged = set()
        for c in selected:
            node = c
            if birth_eps(node) < epsilon:
                while True:
                    parent = nodes[node].parent
                    if parent == 0:
                        node = 0 if allow_single else node
                        break
                    node = parent
                    if birth_eps(node) >= epsilon:
                        break
            merged.add(node)
        # drop anything nested inside another selected cluster
        selected = {c for c in merged if not any(_is_ancestor(nodes, a, c) for a in merged if a != c)}

    labels = [-1] * n
    ids = {c: k for k, c in enumerate(sorted(selected))}
    for c, node in enumerate(nodes):
        for p, l in node.fallen:
            top = c
            while top is not None and top not in ids:
                top = nodes[top].parent
            if top is None:
                continue
            if top == 0:
                if len(ids) == 1 and allow_single:
                    root_max = max([lv for _, lv in nodes[0].fallen] + [nodes[k].birth for k in nodes[0].children])
                    threshold = 1.0 / epsilon if epsilon != 0.0 else root_max
                    if l >= threshold:
                        labels[p] = ids[0]
                continue
            labels[p] = ids[top]
    return labels


def _is_ancestor(nodes, a, c) -> bool:
    p = nodes[c].parent
    while p is not None:
        if p == a:
            return True
        p = nodes[p].parent
    return False


def same_partition(a, b) -> bool:
    """Equal up to relabelling of non-negative labels; noise must match exactly."""
    a, b = list(map(int, a)), list(map(int, b))
    if len(a) != len(b):
        return False
    fwd, bwd = {}, {}
    for x, y in zip(a, b):
        if (x < 0) != (y < 0):
            return False
        if x < 0:
            continue
        if fwd.setdefault(x, y) != y or bwd.setdefault(y, x) != x:
            return False
    return True
