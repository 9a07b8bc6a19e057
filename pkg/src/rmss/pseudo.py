"""Pseudo-label machinery for the motion-aware contrastive loss.

Student clusters come from :mod:`rmss.cluster`; the teacher inherits them by
nearest spatial centroid. Both sides are then split with the DPR motion mask so
every cluster is motion-pure, matched by label, and contrasted through their
representation-space centroids.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import sparse

from .core import ClusterLabels, RadarScan

EPS_DISTANCE = 1e-6


class PseudoLabelError(ValueError):
    """A pair cannot produce a loss (no clusters, impure refinement, no matches)."""


class NoClustersError(PseudoLabelError):
    pass


class RefinementError(PseudoLabelError):
    pass


class NoMatchesError(PseudoLabelError):
    pass


@dataclass
class ClusterClassMap:
    """label -> (is_moving, member_count) for refined clusters."""

    entries: dict

    def __contains__(self, label) -> bool:
        return label in self.entries

    def labels(self) -> list:
        return sorted(self.entries)

    def is_moving(self, label) -> bool:
        return self.entries[label][0]


@dataclass
class CentroidSet:
    labels: np.ndarray
    vectors: np.ndarray
    spatial: np.ndarray | None = None

    def as_dict(self) -> dict:
        return {int(l): v for l, v in zip(self.labels, self.vectors)}


def _segment_means(values: np.ndarray, labels: np.ndarray) -> tuple:
    keep = labels >= 0
    uniq, inv = np.unique(labels[keep], return_inverse=True)
    sums = np.zeros((len(uniq), values.shape[1]))
    np.add.at(sums, inv, values[keep])
    counts = np.bincount(inv, minlength=len(uniq))
    return uniq, sums / counts[:, None]


def spatial_centroids(scan: RadarScan, labels: ClusterLabels) -> CentroidSet:
    uniq, means = _segment_means(scan.xyz, labels.labels)
    return CentroidSet(uniq, np.zeros((len(uniq), 0)), means)


def derive_teacher_labels(student_scan: RadarScan, student_labels: ClusterLabels,
                          teacher_scan: RadarScan) -> ClusterLabels:
    """Give every teacher point the label of the nearest student cluster centroid."""
    if student_labels.refined:
        raise ValueError("student labels must be unrefined")
    uniq, cents = _segment_means(student_scan.xyz, student_labels.labels)
    if len(uniq) == 0:
        raise NoClustersError("no clusters to transfer")
    d2 = ((teacher_scan.xyz[:, None, :] - cents[None, :, :]) ** 2).sum(axis=2)
    return ClusterLabels(uniq[np.argmin(d2, axis=1)] if len(teacher_scan.xyz) else
                         np.zeros(0, dtype=np.int64), refined=False)


def refine_clusters(labels_s: ClusterLabels, mask_s, labels_t: ClusterLabels, mask_t) -> tuple:
    """Split motion-mixed clusters; static parts of cluster ``i`` move to ``i + C``.

    ``C`` is one past the largest label on either side, so the static halves of
    a cluster split on both sides share the same new label.
    """
    ls, lt = labels_s.labels, labels_t.labels
    mask_s, mask_t = np.asarray(mask_s, bool), np.asarray(mask_t, bool)
    if len(ls) != len(mask_s) or len(lt) != len(mask_t):
        raise ValueError("labels and mask lengths differ")
    top = max(ls.max(initial=-1), lt.max(initial=-1))
    offset = top + 1

    def split(labels, mask):
        out = labels.copy()
        for i in np.unique(labels[labels >= 0]):
            members = labels == i
            moving = mask[members]
            if moving.any() and not moving.all():
                out[members & ~mask] = i + offset
        return ClusterLabels(out, refined=True)

    return split(ls, mask_s), split(lt, mask_t)


def classify_clusters(labels: ClusterLabels, mask) -> ClusterClassMap:
    if not labels.refined:
        raise ValueError("classify_clusters expects refined labels")
    mask = np.asarray(mask, bool)
    entries = {}
    for i in np.unique(labels.labels[labels.labels >= 0]):
        members = mask[labels.labels == i]
        if members.any() and not members.all():
            raise RefinementError("refinement violated")
        entries[int(i)] = (bool(members[0]), int(members.size))
    return ClusterClassMap(entries)


def representation_centroids(reps: np.ndarray, labels: ClusterLabels) -> CentroidSet:
    reps = np.asarray(reps, dtype=np.float64)
    if len(reps) != len(labels):
        raise ValueError("representation rows and labels differ in length")
    uniq, means = _segment_means(reps, labels.labels)
    return CentroidSet(uniq, means)


def match_clusters(map_s: ClusterClassMap, map_t: ClusterClassMap) -> list:
    common = sorted(set(map_s.entries) & set(map_t.entries))
    if not common:
        raise NoMatchesError("no matched clusters")
    return [(i, map_s.is_moving(i) == map_t.is_moving(i)) for i in common]


def macl_loss(reps_s, reps_t, labels_s: ClusterLabels, labels_t: ClusterLabels, matches,
              eps: float = EPS_DISTANCE) -> tuple:
    """Mean per-match centroid loss and its gradient with respect to ``reps_s``.

    Positive matches contribute the centroid distance, negative ones its inverse.
    The teacher side is a constant.
    """
    reps_s = np.asarray(reps_s, dtype=np.float64)
    reps_t = np.asarray(reps_t, dtype=np.float64)
    if not (np.all(np.isfinite(reps_s)) and np.all(np.isfinite(reps_t))):
        raise ValueError("non-finite representation input")
    if not matches:
        raise NoMatchesError("no matched clusters")
    grad = np.zeros_like(reps_s)
    total = 0.0
    for label, positive in matches:
        members = labels_s.labels == label
        c_s = reps_s[members].mean(axis=0)
        c_t = reps_t[labels_t.labels == label].mean(axis=0)
        diff = c_s - c_t
        raw = float(np.linalg.norm(diff))
        d = max(raw, eps)
        total += d if positive else 1.0 / d
        if raw > eps:
            g_c = diff / d if positive else -diff / d ** 3
            grad[members] += g_c / members.sum() / len(matches)
    return total / len(matches), grad


@dataclass
class PairTargets:
    """Cluster memberships and matches for one student/teacher pair.

    ``seg_s[i]`` / ``seg_t[i]`` index the side's cluster list (-1 = unused);
    each match row is ``(student cluster, teacher cluster, positive)``.
    """

    seg_s: np.ndarray
    seg_t: np.ndarray
    match_s: np.ndarray
    match_t: np.ndarray
    positive: np.ndarray

    @property
    def n_matches(self) -> int:
        return len(self.positive)


def _segments(labels: np.ndarray, keep_labels) -> tuple:
    keep_labels = list(keep_labels)
    lookup = {l: k for k, l in enumerate(keep_labels)}
    seg = np.array([lookup.get(int(l), -1) for l in labels], dtype=np.int64)
    return seg, lookup


def targets_from_matches(labels_s: ClusterLabels, labels_t: ClusterLabels, matches) -> PairTargets:
    """Same-label matches (the regular and no-DPR cases)."""
    used = [m[0] for m in matches]
    seg_s, _ = _segments(labels_s.labels, used)
    seg_t, _ = _segments(labels_t.labels, used)
    k = np.arange(len(used))
    return PairTargets(seg_s, seg_t, k, k.copy(), np.array([m[1] for m in matches], bool))


def targets_from_masks(mask_s, mask_t) -> PairTargets:
    """Two motion groups per side, cross-matched (the no-clustering ablation)."""
    mask_s, mask_t = np.asarray(mask_s, bool), np.asarray(mask_t, bool)
    groups_s = [g for g in (True, False) if np.any(mask_s == g)]
    groups_t = [g for g in (True, False) if np.any(mask_t == g)]
    seg_s = np.array([groups_s.index(m) for m in mask_s], dtype=np.int64)
    seg_t = np.array([groups_t.index(m) for m in mask_t], dtype=np.int64)
    ms, mt, pos = [], [], []
    for a, ga in enumerate(groups_s):
        for b, gb in enumerate(groups_t):
            ms.append(a)
            mt.append(b)
            pos.append(ga == gb)
    if not ms:
        raise NoMatchesError("no matched clusters")
    return PairTargets(seg_s, seg_t, np.array(ms), np.array(mt), np.array(pos, bool))


def _membership(seg: np.ndarray, offset_rows: int, offset_seg: int):
    rows = np.flatnonzero(seg >= 0)
    cols = seg[rows] + offset_seg
    return rows + offset_rows, cols


def centroid_operator(segs: list, n_rows: list) -> sparse.csr_matrix:
    """Sparse (clusters x rows) averaging matrix for a batch of segmentations."""
    r_idx, c_idx, row_off, seg_off = [], [], 0, 0
    for seg, n in zip(segs, n_rows):
        rows, cols = _membership(seg, row_off, seg_off)
        r_idx.append(rows)
        c_idx.append(cols)
        row_off += n
        seg_off += int(seg.max(initial=-1)) + 1
    rows = np.concatenate(r_idx) if r_idx else np.zeros(0, np.int64)
    cols = np.concatenate(c_idx) if c_idx else np.zeros(0, np.int64)
    counts = np.bincount(cols, minlength=seg_off).astype(np.float64)
    vals = 1.0 / counts[cols]
    return sparse.csr_matrix((vals, (cols, rows)), shape=(seg_off, row_off))


def macl_loss_batch(reps_s: np.ndarray, reps_t: np.ndarray, targets: list, rows_s: list,
                    rows_t: list, eps: float = EPS_DISTANCE) -> tuple:
    """Batch mean of per-pair MACL values, gradient w.r.t. the stacked student rows.

    Returns ``(batch loss, per-pair losses, gradient)``.
    """
    if not (np.all(np.isfinite(reps_s)) and np.all(np.isfinite(reps_t))):
        raise ValueError("non-finite representation input")
    op_s = centroid_operator([t.seg_s for t in targets], rows_s)
    op_t = centroid_operator([t.seg_t for t in targets], rows_t)
    c_s = op_s @ reps_s
    c_t = op_t @ reps_t

    ms, mt, pos, pair_of, weight = [], [], [], [], []
    off_s = off_t = 0
    for p, t in enumerate(targets):
        ms.append(t.match_s + off_s)
        mt.append(t.match_t + off_t)
        pos.append(t.positive)
        pair_of.append(np.full(t.n_matches, p))
        weight.append(np.full(t.n_matches, 1.0 / t.n_matches))
        off_s += int(t.seg_s.max(initial=-1)) + 1
        off_t += int(t.seg_t.max(initial=-1)) + 1
    ms, mt = np.concatenate(ms), np.concatenate(mt)
    pos, pair_of, weight = np.concatenate(pos), np.concatenate(pair_of), np.concatenate(weight)

    diff = c_s[ms] - c_t[mt]
    raw = np.linalg.norm(diff, axis=1)
    d = np.maximum(raw, eps)
    per_match = np.where(pos, d, 1.0 / d)
    pair_loss = np.bincount(pair_of, weights=per_match * weight, minlength=len(targets))
    n_pairs = len(targets)
    coef = np.where(pos, 1.0 / d, -1.0 / d ** 3) * (raw > eps) * weight / n_pairs
    g_match = diff * coef[:, None]
    g_c = np.zeros_like(c_s)
    np.add.at(g_c, ms, g_match)
    grad = op_s.T @ g_c
    return float(pair_loss.mean()), pair_loss, np.asarray(grad)
