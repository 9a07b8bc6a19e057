"""Coordinate augmentations for fine-tuning.

Only (x, y, z) change; Doppler, RCS and labels are left alone. All four
transforms are similarities, so k-NN neighbourhoods are preserved.
"""

from __future__ import annotations

from dataclasses import replace

import numpy as np

from ..core import RadarScan

ALL_OPS = ("rotate_z", "shift", "scale", "flip_y")
SHIFT_BOUNDS = np.array([1.0, 1.0, 0.1])
SCALE_RANGE = (0.95, 1.05)


def draw_transform(rng: np.random.Generator, ops=ALL_OPS) -> dict:
    ops = set(ops)
    unknown = ops - set(ALL_OPS)
    if unknown:
        raise ValueError(f"unknown augmentation(s): {sorted(unknown)}")
    return {
        "angle": rng.uniform(-np.pi, np.pi) if "rotate_z" in ops else 0.0,
        "flip": bool(rng.random() < 0.5) if "flip_y" in ops else False,
        "shift": rng.uniform(-SHIFT_BOUNDS, SHIFT_BOUNDS) if "shift" in ops else np.zeros(3),
        "scale": rng.uniform(*SCALE_RANGE) if "scale" in ops else 1.0,
    }


def apply_transform(xyz: np.ndarray, angle=0.0, flip=False, shift=(0.0, 0.0, 0.0), scale=1.0) -> np.ndarray:
    out = np.array(xyz, dtype=np.float64, copy=True)
    if angle:
        c, s = np.cos(angle), np.sin(angle)
        x, y = out[:, 0].copy(), out[:, 1].copy()
        out[:, 0] = c * x - s * y
        out[:, 1] = s * x + c * y
    if flip:
        out[:, 1] = -out[:, 1]
    out = out * scale + np.asarray(shift)
    return out


def augment(scan: RadarScan, seed, ops=ALL_OPS) -> RadarScan:
    if not ops:
        return replace(scan, xyz=scan.xyz.copy())
    rng = np.random.default_rng(seed)
    return replace(scan, xyz=apply_transform(scan.xyz, **draw_transform(rng, ops)))
