"""File formats: NDJSON scan sequences, key = value configs, binary checkpoints.

All writers go through :func:`atomic_write` (temp file in the target
directory, then rename).
"""

from __future__ import annotations

import ast
import hashlib
import json
import os
import struct
import tempfile
from dataclasses import dataclass, fields, replace
from pathlib import Path

import numpy as np

from .core import InvalidScanError, RadarScan
from .synth import SequenceDataset

FORMAT_VERSION = 1
EGO_FRAME_CONVENTION = "x_forward_y_left_z_up;doppler_positive_receding"
CHECKPOINT_MAGIC = b"RMSS"
CHECKPOINT_VERSION = 1


class DataError(ValueError):
    """Input data is malformed or violates an invariant."""


class ConfigError(ValueError):
    pass


def atomic_write(path, data) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    mode = "wb" if isinstance(data, (bytes, bytearray)) else "w"
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, mode, **({} if mode == "wb" else {"encoding": "utf-8", "newline": "\n"})) as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


# ---------------------------------------------------------------- NDJSON scans


def _dumps(obj) -> str:
    return json.dumps(obj, separators=(",", ":"), allow_nan=False)


def scan_to_record(scan: RadarScan) -> dict:
    gt = [None if g < 0 else int(g) for g in scan.gt_label]
    cols = np.column_stack([scan.xyz, scan.v_raw, scan.v_comp, scan.rcs]).tolist()
    return {"frame_idx": int(scan.frame_idx), "ego_velocity": list(scan.ego_velocity),
            "points": [row + [g] for row, g in zip(cols, gt)]}


def sequence_to_ndjson(seq_id: str, scans) -> str:
    header = {"format_version": FORMAT_VERSION, "seq_id": seq_id,
              "ego_frame_convention": EGO_FRAME_CONVENTION}
    lines = [_dumps(header)] + [_dumps(scan_to_record(s)) for s in scans]
    return "\n".join(lines) + "\n"


def record_to_scan(rec: dict, seq_id: str) -> RadarScan:
    try:
        pts = rec["points"]
        frame_idx = rec["frame_idx"]
        ego = rec["ego_velocity"]
    except (KeyError, TypeError) as exc:
        raise DataError(f"scan record missing field: {exc}") from None
    if not isinstance(frame_idx, int) or frame_idx < 0:
        raise DataError("frame_idx must be a non-negative integer")
    if not (isinstance(ego, list) and len(ego) == 2):
        raise DataError("ego_velocity must be [vx, vy]")
    if any(not isinstance(p, list) or len(p) != 7 for p in pts):
        raise DataError("each point must be [x, y, z, v_raw, v_comp, rcs, gt_label]")
    if any(p[6] not in (0, 1, None) or isinstance(p[6], bool) for p in pts):
        raise DataError("gt_label must be 0, 1 or null")
    try:
        arr = np.array([p[:6] for p in pts], dtype=np.float64).reshape(-1, 6)
    except (TypeError, ValueError):
        raise DataError("non-numeric point field") from None
    gt = [-1 if p[6] is None else p[6] for p in pts]
    scan = RadarScan(arr[:, :3], arr[:, 3], arr[:, 4], arr[:, 5], gt, tuple(ego), seq_id, frame_idx)
    try:
        scan.validate()
    except InvalidScanError as exc:
        raise DataError(f"{seq_id} frame {frame_idx}: {exc}") from None
    return scan


def parse_sequence(text: str, source: str = "<string>") -> tuple:
    lines = [ln for ln in text.split("\n") if ln.strip()]
    if not lines:
        raise DataError(f"{source}: empty file")
    try:
        header = json.loads(lines[0])
        records = [json.loads(ln) for ln in lines[1:]]
    except json.JSONDecodeError as exc:
        raise DataError(f"{source}: invalid JSON ({exc})") from None
    if not isinstance(header, dict) or header.get("format_version") != FORMAT_VERSION:
        raise DataError(f"{source}: unsupported or missing format_version")
    seq_id = header.get("seq_id")
    if not isinstance(seq_id, str):
        raise DataError(f"{source}: header lacks seq_id")
    scans = [record_to_scan(r, seq_id) for r in records]
    idx = [s.frame_idx for s in scans]
    if any(b <= a for a, b in zip(idx, idx[1:])):
        raise DataError(f"{source}: frame_idx not strictly increasing")
    return seq_id, scans


def read_sequence(path) -> tuple:
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise DataError(f"cannot read {path}: {exc}") from None
    return parse_sequence(text, str(path))


def write_sequence(path, seq_id: str, scans) -> None:
    atomic_write(path, sequence_to_ndjson(seq_id, scans))


def write_dataset(dataset: SequenceDataset, out_dir) -> None:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    files = []
    for seq_id, scans in dataset.sequences:
        name = f"{seq_id}.ndjson"
        write_sequence(out_dir / name, seq_id, scans)
        files.append({"seq_id": seq_id, "file": name, "split": dataset.splits.get(seq_id, "train"),
                      "n_scans": len(scans)})
    manifest = dict(dataset.manifest)
    manifest["format_version"] = FORMAT_VERSION
    manifest["files"] = files
    atomic_write(out_dir / "manifest.json", json.dumps(manifest, indent=1, sort_keys=True) + "\n")


def read_dataset(path) -> SequenceDataset:
    """Load a dataset directory (with manifest) or a single sequence file."""
    path = Path(path)
    if path.is_file():
        seq_id, scans = read_sequence(path)
        return SequenceDataset([(seq_id, scans)], {}, {seq_id: "train"})
    mf = path / "manifest.json"
    if not mf.exists():
        raise DataError(f"{path}: no manifest.json")
    try:
        manifest = json.loads(mf.read_text(encoding="utf-8"))
        entries = manifest["files"]
    except (json.JSONDecodeError, KeyError) as exc:
        raise DataError(f"{mf}: invalid manifest ({exc})") from None
    sequences, splits = [], {}
    for entry in entries:
        seq_id, scans = read_sequence(path / entry["file"])
        sequences.append((seq_id, scans))
        splits[seq_id] = entry.get("split", "train")
    manifest.pop("files", None)
    return SequenceDataset(sequences, manifest, splits)


# ---------------------------------------------------------------- configuration


def _parse_value(raw: str):
    raw = raw.strip()
    for parse in (json.loads, ast.literal_eval):
        try:
            return parse(raw)
        except (ValueError, SyntaxError):
            continue
    lowered = raw.lower()
    if lowered in ("true", "false"):
        return lowered == "true"
    return raw


def parse_config_text(text: str) -> dict:
    """``section.key = value`` lines to a flat dict; ``#`` starts a comment."""
    out = {}
    for n, line in enumerate(text.splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {n}: expected 'key = value'")
        key, value = (s.strip() for s in line.split("=", 1))
        if not key or key in out:
            raise ConfigError(f"line {n}: empty or duplicate key {key!r}")
        out[key] = _parse_value(value)
    return out


# dataclass-valued fields configured through their own sections
_NESTED = {"scene", "pretrain", "finetune", "encoder", "cluster", "ransac"}


def build_sections(flat: dict, schema: dict, defaults: dict | None = None) -> dict:
    """Instantiate one dataclass per section; unknown keys raise ConfigError.

    ``defaults`` optionally maps section names to base instances that the
    parsed keys override.
    """
    defaults = defaults or {}
    grouped = {name: {} for name in schema}
    for key, value in flat.items():
        section, _, field = key.partition(".")
        if section not in schema or not field:
            raise ConfigError(f"unknown config key {key!r}")
        names = {f.name for f in fields(schema[section])
                 if f.name not in _NESTED}
        if field not in names:
            raise ConfigError(f"unknown config key {key!r}")
        grouped[section][field] = tuple(value) if isinstance(value, list) else value
    try:
        return {name: replace(defaults[name], **grouped[name]) if name in defaults else cls(**grouped[name])
                for name, cls in schema.items()}
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from None


def read_config_file(path, schema: dict, defaults: dict | None = None) -> dict:
    if path is None:
        return build_sections({}, schema, defaults)
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    return build_sections(parse_config_text(text), schema, defaults)


def config_to_text(sections: dict) -> str:
    lines = []
    for name, obj in sections.items():
        for f in fields(obj):
            value = getattr(obj, f.name)
            if hasattr(value, "__dataclass_fields__"):
                continue
            if isinstance(value, tuple):
                value = list(value)
            lines.append(f"{name}.{f.name} = {json.dumps(value)}")
    return "\n".join(lines) + "\n"


# ---------------------------------------------------------------- checkpoints


@dataclass
class Checkpoint:
    layers: dict
    config: dict


def checkpoint_bytes(ckpt: Checkpoint) -> bytes:
    cfg = json.dumps(ckpt.config, sort_keys=True).encode("utf-8")
    parts = [CHECKPOINT_MAGIC, struct.pack("<HI", CHECKPOINT_VERSION, len(cfg)), cfg,
             struct.pack("<I", len(ckpt.layers))]
    digest = hashlib.sha256()
    for name, arr in ckpt.layers.items():
        arr = np.ascontiguousarray(arr, dtype="<f8")
        raw_name = name.encode("utf-8")
        payload = arr.tobytes()
        digest.update(payload)
        parts += [struct.pack("<H", len(raw_name)), raw_name, struct.pack("<B", arr.ndim),
                  struct.pack(f"<{arr.ndim}I", *arr.shape), payload]
    parts.append(digest.digest())
    return b"".join(parts)


def checkpoint_from_bytes(data: bytes) -> Checkpoint:
    def take(n):
        nonlocal pos
        if pos + n > len(data):
            raise DataError("truncated checkpoint")
        chunk = data[pos:pos + n]
        pos += n
        return chunk

    pos = 0
    if take(4) != CHECKPOINT_MAGIC:
        raise DataError("not a checkpoint (bad magic)")
    version, cfg_len = struct.unpack("<HI", take(6))
    if version != CHECKPOINT_VERSION:
        raise DataError(f"unsupported checkpoint version {version}")
    try:
        config = json.loads(take(cfg_len).decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError):
        raise DataError("corrupt checkpoint config") from None
    (n_layers,) = struct.unpack("<I", take(4))
    layers, digest = {}, hashlib.sha256()
    for _ in range(n_layers):
        (name_len,) = struct.unpack("<H", take(2))
        name = take(name_len).decode("utf-8")
        (rank,) = struct.unpack("<B", take(1))
        shape = struct.unpack(f"<{rank}I", take(4 * rank))
        payload = take(8 * int(np.prod(shape, dtype=np.int64)))
        digest.update(payload)
        layers[name] = np.frombuffer(payload, dtype="<f8").reshape(shape).astype(np.float64)
    if take(32) != digest.digest():
        raise DataError("checkpoint checksum mismatch")
    if pos != len(data):
        raise DataError("trailing bytes after checkpoint")
    return Checkpoint(layers, config)


def save_checkpoint(path, ckpt: Checkpoint) -> None:
    atomic_write(path, checkpoint_bytes(ckpt))


def load_checkpoint(path) -> Checkpoint:
    try:
        data = Path(path).read_bytes()
    except OSError as exc:
        raise DataError(f"cannot read checkpoint {path}: {exc}") from None
    return checkpoint_from_bytes(data)
