import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import make_scan
from rmss.core import (ClusterLabels, InvalidScanError, RadarPoint, RadarScan, as_mask, azimuth,
                       compensate_doppler, line_of_sight)

finite = st.floats(-50, 50, allow_nan=False)


def test_azimuth_quadrants():
    assert azimuth((1.0, 0.0, 0.0)) == 0.0
    assert azimuth((0.0, 2.0, 0.0)) == pytest.approx(np.pi / 2)
    assert azimuth(RadarPoint(-1.0, 0.0, 0.0, 0, 0, 0)) == pytest.approx(np.pi)
    with pytest.raises(InvalidScanError):
        azimuth((0.0, 0.0, 0.0))


def test_receding_target_reads_positive_doppler():
    # ego stands still, target 10 m ahead moves away at 3 m/s
    scan = make_scan([[10.0, 0.0, 0.0]], v_comp=[3.0])
    assert scan.v_raw[0] == pytest.approx(3.0)


def test_static_world_compensates_to_zero():
    xyz = np.array([[10.0, 5.0, 0.2], [20.0, -3.0, 0.0], [7.0, 0.1, 1.0]])
    u = line_of_sight(xyz)
    ego = (4.0, -1.0)
    v_raw = -(ego[0] * u[:, 0] + ego[1] * u[:, 1])
    scan = compensate_doppler(RadarScan(xyz, v_raw, np.zeros(3), np.zeros(3), np.zeros(3), ego))
    np.testing.assert_allclose(scan.v_comp, 0.0, atol=1e-12)


@settings(max_examples=50, deadline=None)
@given(st.lists(st.tuples(finite, finite, finite, finite), min_size=1, max_size=20),
       finite, finite)
def test_compensation_is_linear_in_ego_velocity(rows, vx, vy):
    arr = np.array(rows)
    xyz = arr[:, :3]
    xyz[:, 0] = np.abs(xyz[:, 0]) + 1.0
    base = RadarScan(xyz, arr[:, 3], np.zeros(len(arr)), np.zeros(len(arr)), np.zeros(len(arr)))
    moved = compensate_doppler(RadarScan(xyz, arr[:, 3], np.zeros(len(arr)), np.zeros(len(arr)),
                                         np.zeros(len(arr)), (vx, vy)))
    u = line_of_sight(xyz)
    np.testing.assert_allclose(moved.v_comp - compensate_doppler(base).v_comp,
                               vx * u[:, 0] + vy * u[:, 1], atol=1e-9)
    np.testing.assert_array_equal(moved.v_raw, arr[:, 3])


def test_compensate_rejects_bad_input():
    scan = make_scan([[1.0, 0.0, 0.0]])
    bad = RadarScan(scan.xyz, scan.v_raw, scan.v_comp, scan.rcs, scan.gt_label, (np.nan, 0.0))
    with pytest.raises(InvalidScanError):
        compensate_doppler(bad)
    origin = RadarScan([[0.0, 0.0, 0.0]], [0.0], [0.0], [0.0], [0], (1.0, 0.0))
    with pytest.raises(InvalidScanError):
        compensate_doppler(origin)
    assert compensate_doppler(RadarScan.empty((1.0, 2.0))).n_points == 0


def test_points_round_trip_and_unlabeled():
    pts = [RadarPoint(1.0, 2.0, 0.0, 0.5, 0.1, 3.0, 1), RadarPoint(5.0, 0.0, 0.1, -1.0, 0.0, 0.0)]
    scan = RadarScan.from_points(pts, ego_velocity=(1.0, 0.0))
    assert scan.points == pts
    assert not scan.has_labels
    assert scan.gt_label.tolist() == [1, -1]


def test_validate_catches_each_invariant():
    good = make_scan([[5.0, 1.0, 0.0], [8.0, -2.0, 0.5]])
    good.validate(fov_azimuth=np.pi)
    with pytest.raises(InvalidScanError):
        good.validate(fov_azimuth=0.1)
    with pytest.raises(InvalidScanError):
        RadarScan(good.xyz, [np.inf, 0.0], good.v_comp, good.rcs, good.gt_label).validate()
    with pytest.raises(InvalidScanError):
        RadarScan(good.xyz, good.v_raw, good.v_comp, good.rcs, [0, 2]).validate()
    with pytest.raises(InvalidScanError):
        RadarScan(good.xyz, good.v_raw, good.v_comp, good.rcs, good.gt_label, frame_idx=-1).validate()


def test_subset_features_and_helpers():
    scan = make_scan([[5.0, 1.0, 0.0], [8.0, -2.0, 0.5], [9.0, 0.0, 0.0]], v_comp=[0.0, 2.0, -1.0],
                     rcs=[1.0, 2.0, 3.0])
    sub = scan.subset([2, 0])
    assert sub.n_points == 2 and sub.rcs.tolist() == [3.0, 1.0]
    assert scan.features().shape == (3, 5)
    np.testing.assert_allclose(scan.features()[:, 3], [0.0, 2.0, -1.0], atol=1e-12)
    assert as_mask([0, 1, 1]).tolist() == [False, True, True]
    assert ClusterLabels([2, -1, 0, 2]).label_set().tolist() == [0, 2]
