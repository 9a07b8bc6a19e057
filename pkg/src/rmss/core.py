"""Domain types shared across the package and ego-motion Doppler compensation.

Sign convention: positive Doppler means the target recedes from the sensor.
A stationary world point observed from a platform moving with planar
velocity ``(vx, vy)`` therefore reads ``v_raw = -(vx * ux + vy * uy)`` where
``u`` is the unit line-of-sight vector.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import NamedTuple, Optional, Sequence

import numpy as np

STATIC = 0
MOVING = 1
UNLABELED = -1

N_INPUT_CHANNELS = 5
N_OUT = 48


class InvalidScanError(ValueError):
    """A scan violates one of the point or scan invariants."""


class RadarPoint(NamedTuple):
    x: float
    y: float
    z: float
    v_raw: float
    v_comp: float
    rcs: float
    gt_label: Optional[int] = None


@dataclass
class RadarScan:
    """One radar frame stored column-wise.

    ``gt_label`` holds 0 (static), 1 (moving) or -1 where no annotation exists.
    """

    xyz: np.ndarray
    v_raw: np.ndarray
    v_comp: np.ndarray
    rcs: np.ndarray
    gt_label: np.ndarray
    ego_velocity: tuple = (0.0, 0.0)
    seq_id: str = "seq"
    frame_idx: int = 0

    def __post_init__(self):
        self.xyz = np.asarray(self.xyz, dtype=np.float64).reshape(-1, 3)
        n = len(self.xyz)
        self.v_raw = np.asarray(self.v_raw, dtype=np.float64).reshape(n)
        self.v_comp = np.asarray(self.v_comp, dtype=np.float64).reshape(n)
        self.rcs = np.asarray(self.rcs, dtype=np.float64).reshape(n)
        self.gt_label = np.asarray(self.gt_label, dtype=np.int8).reshape(n)
        self.ego_velocity = (float(self.ego_velocity[0]), float(self.ego_velocity[1]))

    def __len__(self) -> int:
        return len(self.xyz)

    @property
    def n_points(self) -> int:
        return len(self.xyz)

    @property
    def has_labels(self) -> bool:
        return self.n_points > 0 and bool(np.all(self.gt_label >= 0))

    @property
    def points(self) -> list[RadarPoint]:
        out = []
        for i in range(self.n_points):
            gt = int(self.gt_label[i])
            out.append(RadarPoint(*map(float, self.xyz[i]), float(self.v_raw[i]),
                                  float(self.v_comp[i]), float(self.rcs[i]),
                                  None if gt < 0 else gt))
        return out

    @classmethod
    def from_points(cls, points: Sequence[RadarPoint], ego_velocity=(0.0, 0.0),
                    seq_id: str = "seq", frame_idx: int = 0) -> "RadarScan":
        arr = np.array([[p.x, p.y, p.z, p.v_raw, p.v_comp, p.rcs] for p in points],
                       dtype=np.float64).reshape(-1, 6)
        gt = [UNLABELED if p.gt_label is None else int(p.gt_label) for p in points]
        return cls(arr[:, :3], arr[:, 3], arr[:, 4], arr[:, 5], gt,
                   ego_velocity, seq_id, frame_idx)

    @classmethod
    def empty(cls, ego_velocity=(0.0, 0.0), seq_id="seq", frame_idx=0) -> "RadarScan":
        z = np.zeros(0)
        return cls(np.zeros((0, 3)), z, z, z, z, ego_velocity, seq_id, frame_idx)

    def ranges(self) -> np.ndarray:
        return np.linalg.norm(self.xyz, axis=1)

    def azimuths(self) -> np.ndarray:
        return np.arctan2(self.xyz[:, 1], self.xyz[:, 0])

    def features(self) -> np.ndarray:
        """Network input channels (x, y, z, v_comp, rcs) as an N x 5 array."""
        return np.column_stack([self.xyz, self.v_comp, self.rcs])

    def subset(self, idx) -> "RadarScan":
        return replace(self, xyz=self.xyz[idx], v_raw=self.v_raw[idx],
                       v_comp=self.v_comp[idx], rcs=self.rcs[idx],
                       gt_label=self.gt_label[idx])

    def validate(self, fov_azimuth: Optional[float] = None) -> None:
        cols = (self.xyz, self.v_raw, self.v_comp, self.rcs)
        if not all(np.all(np.isfinite(c)) for c in cols):
            raise InvalidScanError("non-finite point field")
        if not np.all(np.isfinite(self.ego_velocity)):
            raise InvalidScanError("non-finite ego velocity")
        if np.any(self.ranges() <= 0.0):
            raise InvalidScanError("point at sensor origin")
        if not np.all(np.isin(self.gt_label, (UNLABELED, STATIC, MOVING))):
            raise InvalidScanError("gt_label outside {0, 1, null}")
        if fov_azimuth is not None and self.n_points:
            if np.any(np.abs(self.azimuths()) > fov_azimuth / 2 + 1e-12):
                raise InvalidScanError("point outside field of view")
        if self.frame_idx < 0:
            raise InvalidScanError("negative frame index")


@dataclass
class ClusterLabels:
    """Per-point cluster ids; -1 marks noise."""

    labels: np.ndarray
    refined: bool = False

    def __post_init__(self):
        self.labels = np.asarray(self.labels, dtype=np.int64)

    def __len__(self) -> int:
        return len(self.labels)

    def label_set(self) -> np.ndarray:
        return np.unique(self.labels[self.labels >= 0])


def azimuth(point) -> float:
    """Azimuth ``atan2(y, x)`` of a point; accepts a RadarPoint or (x, y, z)."""
    x, y, z = point[0], point[1], point[2]
    if x == 0 and y == 0 and z == 0:
        raise InvalidScanError("point at sensor origin")
    return float(np.arctan2(y, x))


def line_of_sight(xyz: np.ndarray) -> np.ndarray:
    r = np.linalg.norm(xyz, axis=1)
    if np.any(r <= 0.0):
        raise InvalidScanError("point at sensor origin")
    return xyz / r[:, None]


def compensate_doppler(scan: RadarScan) -> RadarScan:
    """Return a copy of ``scan`` whose ``v_comp`` has the ego contribution removed."""
    vx, vy = scan.ego_velocity
    if not (np.isfinite(vx) and np.isfinite(vy)):
        raise InvalidScanError("non-finite ego velocity")
    if scan.n_points == 0:
        return replace(scan, v_comp=np.zeros(0))
    u = line_of_sight(scan.xyz)
    v_comp = scan.v_raw + (vx * u[:, 0] + vy * u[:, 1])
    return replace(scan, v_comp=v_comp, v_raw=scan.v_raw.copy())


def as_mask(flags) -> np.ndarray:
    """Coerce a per-point moving/static container to a boolean array (True = moving)."""
    return np.asarray(flags, dtype=bool)
