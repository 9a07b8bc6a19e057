"""Dynamic points removal: RANSAC fit of the azimuth-Doppler velocity profile.

Stationary points under planar ego motion satisfy ``v(theta) = a cos(theta) + b sin(theta)``
with ``(a, b) = -(vx, vy)``; points that deviate by more than the threshold are
pseudo-labeled moving.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import RadarScan


class DprError(ValueError):
    pass


class InsufficientPointsError(DprError):
    pass


class DegenerateGeometryError(DprError):
    pass


@dataclass
class RansacParams:
    threshold: float = 0.5
    max_iterations: int = 200
    min_azimuth_separation: float = 1e-3
    seed: int = 0
    use_compensated: bool = False

    def __post_init__(self):
        if self.threshold <= 0:
            raise ValueError("threshold must be positive")
        if self.max_iterations < 1:
            raise ValueError("max_iterations must be >= 1")


@dataclass
class VelocityProfile:
    a: float
    b: float
    inlier_count: int
    n_iterations_used: int

    def predict(self, theta: np.ndarray) -> np.ndarray:
        return self.a * np.cos(theta) + self.b * np.sin(theta)


def _line_separation(d_theta: np.ndarray) -> np.ndarray:
    """Angle between the lines through two azimuths, in [0, pi/2]."""
    d = np.mod(np.abs(d_theta), np.pi)
    return np.minimum(d, np.pi - d)


def _doppler(scan: RadarScan, params: RansacParams) -> np.ndarray:
    return scan.v_comp if params.use_compensated else scan.v_raw


def fit_velocity_profile(scan: RadarScan, params: RansacParams = RansacParams()) -> VelocityProfile:
    n = scan.n_points
    if n < 2:
        raise InsufficientPointsError("insufficient points")
    theta = scan.azimuths()
    v = _doppler(scan, params)
    sep = _line_separation(theta[:, None] - theta[None, :])
    if not np.any(sep >= params.min_azimuth_separation):
        raise DegenerateGeometryError("degenerate geometry")

    rng = np.random.default_rng(params.seed)
    k = params.max_iterations
    first, second = [], []
    have = 0
    # degenerate draws are discarded without consuming an iteration
    while have < k:
        i = rng.integers(0, n, 2 * k)
        j = rng.integers(0, n - 1, 2 * k)
        j = j + (j >= i)
        ok = sep[i, j] >= params.min_azimuth_separation
        first.append(i[ok])
        second.append(j[ok])
        have += int(ok.sum())
    i = np.concatenate(first)[:k]
    j = np.concatenate(second)[:k]

    c, s = np.cos(theta), np.sin(theta)
    det = c[i] * s[j] - s[i] * c[j]
    a = (v[i] * s[j] - s[i] * v[j]) / det
    b = (c[i] * v[j] - v[i] * c[j]) / det
    resid = np.abs(v[None, :] - (a[:, None] * c[None, :] + b[:, None] * s[None, :]))
    counts = np.count_nonzero(resid <= params.threshold, axis=1)
    best = int(np.argmax(counts))
    inliers = resid[best] <= params.threshold

    design = np.column_stack([c[inliers], s[inliers]])
    if np.linalg.matrix_rank(design) == 2:
        (a_fit, b_fit), *_ = np.linalg.lstsq(design, v[inliers], rcond=None)
    else:
        a_fit, b_fit = a[best], b[best]
    final = np.abs(v - (a_fit * c + b_fit * s)) <= params.threshold
    return VelocityProfile(float(a_fit), float(b_fit), int(final.sum()), k)


def segment_dpr(scan: RadarScan, params: RansacParams = RansacParams()) -> np.ndarray:
    """Boolean motion mask (True = moving) from the fitted velocity profile."""
    return segment_with_profile(scan, params)[0]


def segment_with_profile(scan: RadarScan, params: RansacParams = RansacParams()):
    """Like :func:`segment_dpr` but also returns the profile (None for N < 2)."""
    if scan.n_points < 2:
        return np.zeros(scan.n_points, dtype=bool), None
    profile = fit_velocity_profile(scan, params)
    resid = np.abs(_doppler(scan, params) - profile.predict(scan.azimuths()))
    return resid > params.threshold, profile
