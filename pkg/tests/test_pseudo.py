import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import make_scan
from oracles import brute_macl, central_diff, rel_error
from rmss import pseudo
from rmss.core import ClusterLabels
from rmss.pseudo import (NoClustersError, NoMatchesError, RefinementError, classify_clusters,
                         derive_teacher_labels, macl_loss, macl_loss_batch, match_clusters,
                         refine_clusters, targets_from_masks, targets_from_matches)


def random_fixture(rng, n_s=None, n_t=None, n_clusters=None):
    n_s = n_s or int(rng.integers(3, 30))
    n_t = n_t or int(rng.integers(3, 30))
    k = n_clusters or int(rng.integers(1, 5))
    labels_s = ClusterLabels(rng.integers(-1, k, n_s))
    labels_t = ClusterLabels(rng.integers(-1, k, n_t))
    return labels_s, rng.random(n_s) < 0.3, labels_t, rng.random(n_t) < 0.3


def test_teacher_labels_follow_nearest_centroid():
    s = make_scan([[10, 0, 0], [10, 1, 0], [30, 0, 0], [30, 1, 0], [50, 5, 0]])
    t = make_scan([[11, 0, 0], [29, 0, 0], [45, 3, 0]])
    labels = derive_teacher_labels(s, ClusterLabels([4, 4, 7, 7, -1]), t)
    assert labels.labels.tolist() == [4, 7, 7]
    with pytest.raises(NoClustersError):
        derive_teacher_labels(s, ClusterLabels([-1] * 5), t)
    with pytest.raises(ValueError):
        derive_teacher_labels(s, ClusterLabels([0] * 5, refined=True), t)


def test_refinement_splits_mixed_clusters_with_shared_offset():
    ls, lt = ClusterLabels([0, 0, 1, 1, -1]), ClusterLabels([0, 0, 1, 2])
    ms = [True, False, False, False, True]
    mt = [True, False, True, True]
    rs, rt = refine_clusters(ls, ms, lt, mt)
    # C = 3: static half of cluster 0 becomes 3 on both sides
    assert rs.labels.tolist() == [0, 3, 1, 1, -1]
    assert rt.labels.tolist() == [0, 3, 1, 2]
    assert rs.refined and rt.refined
    matches = match_clusters(classify_clusters(rs, ms), classify_clusters(rt, mt))
    assert matches == [(0, True), (1, False), (3, True)]


@settings(max_examples=200, deadline=None)
@given(st.integers(0, 2 ** 31))
def test_refined_clusters_are_pure(seed):
    ls, ms, lt, mt = random_fixture(np.random.default_rng(seed))
    rs, rt = refine_clusters(ls, ms, lt, mt)
    for labels, mask in ((rs, ms), (rt, mt)):
        cmap = classify_clusters(labels, mask)
        for lab in cmap.labels():
            assert len(set(mask[labels.labels == lab])) == 1
        # noise stays noise, cluster count never drops
        assert np.array_equal(labels.labels < 0, (ls if labels is rs else lt).labels < 0)


def test_impure_input_is_detected():
    with pytest.raises(RefinementError):
        classify_clusters(ClusterLabels([0, 0], refined=True), [True, False])
    with pytest.raises(ValueError):
        classify_clusters(ClusterLabels([0, 0]), [True, True])
    with pytest.raises(NoMatchesError):
        match_clusters(pseudo.ClusterClassMap({0: (True, 1)}), pseudo.ClusterClassMap({1: (True, 1)}))


@settings(max_examples=100, deadline=None)
@given(st.integers(0, 2 ** 31))
def test_macl_matches_brute_force(seed):
    rng = np.random.default_rng(seed)
    n_s, n_t, d = 12, 10, 6
    ls = ClusterLabels(np.r_[[0, 1, 2], rng.integers(-1, 3, n_s - 3)])
    lt = ClusterLabels(np.r_[[0, 1, 2], rng.integers(-1, 3, n_t - 3)])
    matches = [(0, True), (1, bool(rng.integers(0, 2))), (2, False)]
    rs, rt = rng.normal(0, 1, (n_s, d)), rng.normal(0, 1, (n_t, d))
    got, _ = macl_loss(rs, rt, ls, lt, matches)
    want = brute_macl(rs.tolist(), rt.tolist(), ls.labels.tolist(), lt.labels.tolist(), matches)
    assert abs(got - want) <= 1e-9 * max(1.0, abs(want))


def test_macl_gradient_and_distance_floor():
    rng = np.random.default_rng(3)
    ls, lt = ClusterLabels([0, 0, 1, 1, -1]), ClusterLabels([0, 1, 1])
    rs, rt = rng.normal(0, 1, (5, 4)), rng.normal(0, 1, (3, 4))
    matches = [(0, True), (1, False)]
    _, grad = macl_loss(rs, rt, ls, lt, matches)
    fd = central_diff(lambda r: macl_loss(r, rt, ls, lt, matches)[0], rs)
    assert rel_error(grad, fd) < 1e-6
    assert np.all(grad[4] == 0)
    # coincident centroids: distance clamps to 1e-6 and the gradient vanishes
    same = np.ones((2, 3))
    loss, g = macl_loss(same, same, ClusterLabels([0, 0]), ClusterLabels([0, 0]), [(0, False)])
    assert loss == pytest.approx(1e6) and not g.any()
    with pytest.raises(ValueError):
        macl_loss(np.full((2, 3), np.nan), same, ClusterLabels([0, 0]), ClusterLabels([0, 0]),
                  [(0, True)])


def test_batch_loss_equals_per_pair_losses():
    rng = np.random.default_rng(5)
    targets, rows_s, rows_t, reps_s, reps_t, singles = [], [], [], [], [], []
    for _ in range(4):
        ls, lt = ClusterLabels(rng.integers(0, 3, 9)), ClusterLabels(rng.integers(0, 3, 7))
        common = sorted(set(ls.labels) & set(lt.labels))
        matches = [(int(c), bool(rng.integers(0, 2))) for c in common]
        a, b = rng.normal(0, 1, (9, 5)), rng.normal(0, 1, (7, 5))
        singles.append(macl_loss(a, b, ls, lt, matches))
        targets.append(targets_from_matches(ls, lt, matches))
        rows_s.append(9)
        rows_t.append(7)
        reps_s.append(a)
        reps_t.append(b)
    loss, per_pair, grad = macl_loss_batch(np.vstack(reps_s), np.vstack(reps_t), targets, rows_s, rows_t)
    np.testing.assert_allclose(per_pair, [s[0] for s in singles], rtol=1e-12)
    assert loss == pytest.approx(np.mean(per_pair), rel=1e-12)
    np.testing.assert_allclose(grad, np.vstack([s[1] for s in singles]) / 4, rtol=1e-10, atol=1e-14)


def test_mask_targets_cross_match_motion_groups():
    t = targets_from_masks([True, False, False], [False, False])
    assert t.seg_s.tolist() == [0, 1, 1] and t.seg_t.tolist() == [0, 0]
    assert t.positive.tolist() == [False, True]
