"""Synthetic radar sequences with ground-truth motion labels.

Each sequence is generated from its own ``SeedSequence`` child so sequences are
independent and reproducible in isolation.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field
from typing import Iterator

import numpy as np

from .core import MOVING, STATIC, RadarScan, compensate_doppler


@dataclass
class SceneConfig:
    n_sequences: int = 10
    frames_per_sequence: int = 50
    points_static_range: tuple = (100, 200)
    n_moving_objects_range: tuple = (1, 4)
    points_per_object_range: tuple = (3, 10)
    object_speed_range: tuple = (1.0, 8.0)
    ego_speed_range: tuple = (0.0, 10.0)
    doppler_noise_sigma: float = 0.05
    position_noise_sigma: float = 0.05
    ghost_point_rate: float = 0.005
    fov_azimuth: float = float(np.deg2rad(120.0))
    range_limits: tuple = (6.0, 60.0)
    rcs_range: tuple = (-10.0, 20.0)
    moving_threshold: float = 0.5
    # every observed object point keeps at least this radial speed (2x DPR threshold)
    min_radial_speed: float = 1.0
    frame_dt: float = 0.1
    val_sequences: int = 0
    test_sequences: int = 0
    seed: int = 0

    def __post_init__(self):
        for name in ("points_static_range", "n_moving_objects_range", "points_per_object_range",
                     "object_speed_range", "ego_speed_range", "range_limits", "rcs_range"):
            lo, hi = getattr(self, name)
            if hi < lo:
                raise ValueError(f"{name}: max < min")
            setattr(self, name, (type(lo)(lo), type(hi)(hi)) if isinstance(lo, int) else (float(lo), float(hi)))
        if not 0.0 <= self.ghost_point_rate < 1.0:
            raise ValueError("ghost_point_rate must lie in [0, 1)")
        if self.moving_threshold <= 0:
            raise ValueError("moving_threshold must be positive")
        if self.range_limits[0] <= 0:
            raise ValueError("minimum range must be positive")
        if self.n_sequences < 1 or self.frames_per_sequence < 1:
            raise ValueError("need at least one sequence and one frame")
        if self.val_sequences + self.test_sequences > self.n_sequences:
            raise ValueError("more held-out sequences than sequences")

    def to_dict(self) -> dict:
        return {k: list(v) if isinstance(v, tuple) else v for k, v in asdict(self).items()}


@dataclass
class SequenceDataset:
    sequences: list  # [(seq_id, [RadarScan, ...]), ...]
    manifest: dict = field(default_factory=dict)
    splits: dict = field(default_factory=dict)  # seq_id -> "train" | "val" | "test"

    def __len__(self) -> int:
        return len(self.sequences)

    @property
    def n_scans(self) -> int:
        return sum(len(scans) for _, scans in self.sequences)

    def scans(self) -> list:
        return [s for _, scans in self.sequences for s in scans]

    def split(self, name: str) -> "SequenceDataset":
        seqs = [(sid, scans) for sid, scans in self.sequences
                if self.splits.get(sid, "train") == name]
        return SequenceDataset(seqs, self.manifest, {sid: name for sid, _ in seqs})


def _seq_rng(seed: int, index: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([seed, index]))


def _uniform_int(rng, lo_hi) -> int:
    return int(rng.integers(lo_hi[0], lo_hi[1] + 1))


def _static_world(cfg: SceneConfig, rng, travel: float) -> np.ndarray:
    r_min, r_max = cfg.range_limits
    half = cfg.fov_azimuth / 2
    visible_area = half * (r_max ** 2 - r_min ** 2)
    density = 1.5 * max(cfg.points_static_range[1], 1) / visible_area
    width = r_max * min(1.0, np.sin(min(half, np.pi / 2)) + 0.05)
    x_lo, x_hi = -r_max, travel + r_max
    n_world = int(np.ceil(density * (x_hi - x_lo) * 2 * width))
    # 60% of background returns come from compact structures
    n_clumped = int(0.6 * n_world)
    sizes = []
    while sum(sizes) < n_clumped:
        sizes.append(int(rng.integers(2, 9)))
    centers = np.column_stack([rng.uniform(x_lo, x_hi, len(sizes)),
                               rng.uniform(-width, width, len(sizes))])
    clumped = np.repeat(centers, sizes, axis=0) + rng.normal(0.0, 0.5, (sum(sizes), 2))
    scattered = np.column_stack([rng.uniform(x_lo, x_hi, n_world - n_clumped),
                                 rng.uniform(-width, width, n_world - n_clumped)])
    xy = np.vstack([clumped, scattered])
    z = rng.uniform(-0.5, 1.0, len(xy))
    rcs = rng.uniform(*cfg.rcs_range, len(xy))
    return np.column_stack([xy, z, rcs])


def _visible(xyz: np.ndarray, cfg: SceneConfig) -> np.ndarray:
    r = np.linalg.norm(xyz, axis=1)
    az = np.arctan2(xyz[:, 1], xyz[:, 0])
    return (r >= cfg.range_limits[0]) & (r <= cfg.range_limits[1]) & (np.abs(az) <= cfg.fov_azimuth / 2)


class _MovingObject:
    def __init__(self, cfg: SceneConfig, rng, ego_pos: np.ndarray):
        self.cfg = cfg
        r_min, r_max = cfg.range_limits
        r = rng.uniform(r_min + 0.1 * (r_max - r_min), r_min + 0.6 * (r_max - r_min))
        az = rng.uniform(-0.8, 0.8) * cfg.fov_azimuth / 2
        self.center = ego_pos[:2] + r * np.array([np.cos(az), np.sin(az)])
        half_len = rng.uniform(0.3, 2.2)
        n_tmpl = max(cfg.points_per_object_range[1], 1)
        self.offsets = np.column_stack([rng.uniform(-half_len, half_len, n_tmpl),
                                        rng.uniform(-0.4 * half_len, 0.4 * half_len, n_tmpl),
                                        rng.uniform(0.0, 1.0, n_tmpl)])
        self.rcs = rng.uniform(*cfg.rcs_range, n_tmpl)
        self.velocity = self._draw_velocity(rng)

    def _draw_velocity(self, rng) -> np.ndarray:
        speed = rng.uniform(*self.cfg.object_speed_range)
        heading = rng.uniform(-np.pi, np.pi)
        return speed * np.array([np.cos(heading), np.sin(heading)])

    def observe(self, rng, ego_pos: np.ndarray):
        n = min(_uniform_int(rng, self.cfg.points_per_object_range), len(self.offsets))
        pick = np.sort(rng.choice(len(self.offsets), n, replace=False))
        xyz = self.offsets[pick].copy()
        xyz[:, :2] += self.center - ego_pos[:2]
        return xyz, self.rcs[pick]

    def ensure_radial_signature(self, rng, xyz: np.ndarray) -> None:
        """Resample the velocity until every point shows the minimum radial speed."""
        if len(xyz) == 0 or np.linalg.norm(self.velocity) <= self.cfg.moving_threshold:
            return
        u = xyz / np.linalg.norm(xyz, axis=1)[:, None]
        need = self.cfg.min_radial_speed

        def ok(v):
            return np.min(np.abs(u[:, :2] @ v)) > need

        if ok(self.velocity):
            return
        speed = np.linalg.norm(self.velocity)
        for _ in range(50):
            heading = rng.uniform(-np.pi, np.pi)
            v = speed * np.array([np.cos(heading), np.sin(heading)])
            if ok(v):
                self.velocity = v
                return
        for _ in range(200):
            v = self._draw_velocity(rng)
            if ok(v):
                self.velocity = v
                return
        # purely radial motion along the mean line of sight
        mean_u = u[:, :2].mean(axis=0)
        mean_u /= np.linalg.norm(mean_u)
        self.velocity = max(speed, 2.0 * need) * mean_u * (1 if rng.random() < 0.5 else -1)


def generate_sequence(cfg: SceneConfig, index: int) -> tuple:
    rng = _seq_rng(cfg.seed, index)
    seq_id = f"seq_{index:04d}"
    n_frames = cfg.frames_per_sequence
    dt = cfg.frame_dt

    # piecewise-constant ego speed with small per-frame jitter, no yaw
    ego_v = np.zeros((n_frames, 2))
    t = 0
    while t < n_frames:
        seg = int(rng.integers(10, 26))
        base = rng.uniform(*cfg.ego_speed_range)
        ego_v[t:t + seg, 0] = base
        t += seg
    jitter = 0.02 * ego_v[:, 0:1] * rng.normal(0.0, 1.0, (n_frames, 2))
    ego_v += jitter
    ego_pos = np.zeros((n_frames, 2))
    ego_pos[1:] = np.cumsum(ego_v[:-1] * dt, axis=0)
    travel = float(np.max(np.abs(ego_pos[:, 0]))) if n_frames else 0.0

    world = _static_world(cfg, rng, travel)
    objects = [_MovingObject(cfg, rng, np.r_[ego_pos[0], 0.0])
               for _ in range(_uniform_int(rng, cfg.n_moving_objects_range))]
    ghost_vmax = cfg.ego_speed_range[1] + cfg.object_speed_range[1]

    scans = []
    counts = []
    for f in range(n_frames):
        pos = np.r_[ego_pos[f], 0.0]
        v_ego = np.r_[ego_v[f], 0.0]

        rel = world[:, :3] - pos
        vis = np.flatnonzero(_visible(rel, cfg))
        n_target = _uniform_int(rng, cfg.points_static_range)
        if len(vis) > n_target:
            vis = np.sort(rng.choice(vis, n_target, replace=False))
        s_xyz, s_rcs = rel[vis], world[vis, 3]
        s_vel = np.zeros((len(vis), 3))

        o_xyz, o_rcs, o_vel = [], [], []
        for k, obj in enumerate(objects):
            xyz, rcs = obj.observe(rng, pos)
            keep = _visible(xyz, cfg)
            if not keep.any():
                objects[k] = obj = _MovingObject(cfg, rng, pos)
                xyz, rcs = obj.observe(rng, pos)
                keep = _visible(xyz, cfg)
            xyz, rcs = xyz[keep], rcs[keep]
            obj.ensure_radial_signature(rng, xyz)
            o_xyz.append(xyz)
            o_rcs.append(rcs)
            o_vel.append(np.tile(np.r_[obj.velocity, 0.0], (len(xyz), 1)))
        o_xyz = np.vstack(o_xyz) if o_xyz else np.zeros((0, 3))
        o_rcs = np.concatenate(o_rcs) if o_rcs else np.zeros(0)
        o_vel = np.vstack(o_vel) if o_vel else np.zeros((0, 3))

        xyz = np.vstack([s_xyz, o_xyz])
        rcs = np.concatenate([s_rcs, o_rcs])
        vel = np.vstack([s_vel, o_vel])
        xyz = xyz + rng.normal(0.0, cfg.position_noise_sigma, xyz.shape) if cfg.position_noise_sigma > 0 else xyz
        u = xyz / np.linalg.norm(xyz, axis=1)[:, None]
        v_raw = np.einsum("ij,ij->i", vel - v_ego, u)
        if cfg.doppler_noise_sigma > 0:
            v_raw = v_raw + rng.normal(0.0, cfg.doppler_noise_sigma, len(v_raw))
        gt = np.where(np.linalg.norm(vel, axis=1) > cfg.moving_threshold, MOVING, STATIC)

        n_ghost = int(rng.binomial(len(xyz), cfg.ghost_point_rate)) if len(xyz) else 0
        if n_ghost:
            r = np.sqrt(rng.uniform(cfg.range_limits[0] ** 2, cfg.range_limits[1] ** 2, n_ghost))
            az = rng.uniform(-cfg.fov_azimuth / 2, cfg.fov_azimuth / 2, n_ghost)
            g_xyz = np.column_stack([r * np.cos(az), r * np.sin(az), rng.uniform(-0.5, 1.0, n_ghost)])
            xyz = np.vstack([xyz, g_xyz])
            v_raw = np.concatenate([v_raw, rng.uniform(-ghost_vmax, ghost_vmax, n_ghost)])
            rcs = np.concatenate([rcs, rng.uniform(*cfg.rcs_range, n_ghost)])
            gt = np.concatenate([gt, np.full(n_ghost, STATIC)])

        keep = _visible(xyz, cfg)
        order = rng.permutation(np.flatnonzero(keep))
        scan = RadarScan(xyz[order], v_raw[order], np.zeros(len(order)), rcs[order], gt[order],
                         tuple(ego_v[f]), seq_id, f)
        scan = compensate_doppler(scan)
        scans.append(scan)
        counts.append({"frame_idx": f, "n_points": scan.n_points,
                       "n_moving": int(np.sum(scan.gt_label == MOVING)), "n_ghost": n_ghost})
        for obj in objects:
            obj.center = obj.center + obj.velocity * dt
    return seq_id, scans, counts


def generate(config: SceneConfig) -> SequenceDataset:
    sequences, per_seq = [], []
    for i in range(config.n_sequences):
        seq_id, scans, counts = generate_sequence(config, i)
        sequences.append((seq_id, scans))
        per_seq.append({"seq_id": seq_id, "seed": [config.seed, i], "scans": counts})
    splits = {}
    n_val, n_test = config.val_sequences, config.test_sequences
    for i, (sid, _) in enumerate(sequences):
        if i >= config.n_sequences - n_test:
            splits[sid] = "test"
        elif i >= config.n_sequences - n_test - n_val:
            splits[sid] = "val"
        else:
            splits[sid] = "train"
    manifest = {"config": config.to_dict(), "sequences": per_seq}
    return SequenceDataset(sequences, manifest, splits)


def pair_indices(dataset: SequenceDataset, mode: str = "consecutive", seed: int = 0,
                 epoch: int = 0) -> list:
    """Return ``((seq, frame), (seq, frame))`` index pairs in a seeded order."""
    rng = np.random.default_rng(np.random.SeedSequence([seed, epoch]))
    pairs = []
    if mode == "consecutive":
        for s, (_, scans) in enumerate(dataset.sequences):
            pairs.extend(((s, f), (s, f + 1)) for f in range(len(scans) - 1))
        if not pairs:
            raise ValueError("no valid pairs")
    elif mode == "cross_sequence":
        if len(dataset.sequences) < 2:
            raise ValueError("cross_sequence pairing needs at least two sequences")
        # partner choice depends only on the seed, the permutation on (seed, epoch)
        prng = np.random.default_rng(np.random.SeedSequence([seed]))
        n_seq = len(dataset.sequences)
        for s, (_, scans) in enumerate(dataset.sequences):
            for f in range(len(scans)):
                other = int(prng.integers(n_seq - 1))
                other += other >= s
                g = int(prng.integers(len(dataset.sequences[other][1])))
                pairs.append(((s, f), (other, g)))
    else:
        raise ValueError(f"unknown pairing mode {mode!r}")
    order = rng.permutation(len(pairs))
    return [pairs[i] for i in order]


def pair_sampler(dataset: SequenceDataset, mode: str = "consecutive", seed: int = 0,
                 epoch: int = 0) -> Iterator[tuple]:
    for (s, f), (t, g) in pair_indices(dataset, mode, seed, epoch):
        yield dataset.sequences[s][1][f], dataset.sequences[t][1][g]


def moving_fraction(dataset: SequenceDataset) -> float:
    n = sum(s.n_points for s in dataset.scans())
    m = sum(int(np.sum(s.gt_label == MOVING)) for s in dataset.scans())
    return m / n if n else 0.0
