"""Clip files.

CSV layout::

    # fps=20.0
    Hips_x,Hips_y,...,RightToeBase_z,forward,lateral,yaw[,mask]
    <66 or 67 values per row>

Floats are written with ``repr`` so a load returns the saved bits. The
optional mask column packs the 63 observation flags of a row into 16 hex
digits, bit ``j`` set when motion column ``j`` is observed.

The binary variant (``.bin``) stores the same [T, 66] table as
little-endian float64, followed by the packed mask bits when present, and
writes a ``.json`` sidecar describing it.
"""
from __future__ import annotations

import json
import math
from pathlib import Path

import numpy as np

from .clip import Clip, N_CONTROL
from .skeleton import DEFAULT_SKELETON, SkeletonSpec

CONTROL_NAMES = ("forward", "lateral", "yaw")
FORMAT_VERSION = 1


class ClipFormatError(ValueError):
    pass


def column_names(skeleton: SkeletonSpec = DEFAULT_SKELETON, with_mask: bool = False) -> list[str]:
    cols = [f"{j}_{a}" for j in skeleton.joint_names for a in "xyz"] + list(CONTROL_NAMES)
    return cols + ["mask"] if with_mask else cols


def pack_mask_row(row: np.ndarray) -> str:
    bits = 0
    for j in np.flatnonzero(row):
        bits |= 1 << int(j)
    return f"{bits:0{math.ceil(len(row) / 4)}x}"


def unpack_mask_row(text: str, n: int) -> np.ndarray:
    bits = int(text, 16)
    if bits >> n:
        raise ValueError(f"mask {text!r} sets bits beyond column {n - 1}")
    return np.array([(bits >> j) & 1 for j in range(n)], dtype=bool)


def save_clip(clip: Clip, path, skeleton: SkeletonSpec = DEFAULT_SKELETON, normalization: dict | None = None) -> None:
    path = Path(path)
    if clip.motion.shape[1] != skeleton.dim:
        raise ValueError(f"clip has {clip.motion.shape[1]} motion columns, skeleton expects {skeleton.dim}")
    if path.suffix == ".bin":
        _save_binary(clip, path, skeleton, normalization)
    else:
        _save_csv(clip, path, skeleton)


def load_clip(path, skeleton: SkeletonSpec = DEFAULT_SKELETON) -> Clip:
    path = Path(path)
    if path.suffix == ".bin":
        return _load_binary(path, skeleton)
    return _load_csv(path, skeleton)


def _save_csv(clip: Clip, path: Path, skeleton: SkeletonSpec) -> None:
    has_mask = clip.mask is not None
    lines = [f"# fps={clip.fps!r}", ",".join(column_names(skeleton, has_mask))]
    table = np.concatenate([clip.motion, clip.control], axis=1)
    for t in range(clip.T):
        vals = [repr(float(v)) for v in table[t]]
        if has_mask:
            vals.append(pack_mask_row(clip.mask[t]))
        lines.append(",".join(vals))
    path.write_text("\n".join(lines) + "\n")


def _load_csv(path: Path, skeleton: SkeletonSpec) -> Clip:
    lines = path.read_text().splitlines()
    if len(lines) < 2:
        raise ClipFormatError(f"{path}: expected an fps comment line and a column header")
    head = lines[0].strip()
    if not head.startswith("#") or not head.lstrip("# ").startswith("fps="):
        raise ClipFormatError(f"{path}: line 1 must read '# fps=<f>', got {head!r}")
    try:
        fps = float(head.lstrip("# ")[4:])
    except ValueError:
        raise ClipFormatError(f"{path}: unreadable fps in {head!r}") from None
    n_val = skeleton.dim + N_CONTROL
    header = lines[1].split(",")
    if len(header) not in (n_val, n_val + 1):
        raise ClipFormatError(f"{path}: header has {len(header)} columns, expected {n_val} or {n_val + 1}")
    has_mask = len(header) == n_val + 1
    rows, masks = [], []
    for i, line in enumerate(lines[2:], start=3):
        if not line.strip():
            continue
        fields = line.split(",")
        if len(fields) != len(header):
            raise ClipFormatError(f"{path}: row {i} has {len(fields)} columns, expected {len(header)} "
                                  f"({n_val} values{' + mask' if has_mask else ''})")
        vals = []
        for j, f in enumerate(fields[:n_val]):
            try:
                v = float(f)
            except ValueError:
                raise ClipFormatError(f"{path}: row {i}, column {j + 1} ({header[j]}): not a number: {f!r}") from None
            if not math.isfinite(v):
                raise ClipFormatError(f"{path}: row {i}, column {j + 1} ({header[j]}): non-finite value {f!r}")
            vals.append(v)
        rows.append(vals)
        if has_mask:
            try:
                masks.append(unpack_mask_row(fields[-1].strip(), skeleton.dim))
            except ValueError as e:
                raise ClipFormatError(f"{path}: row {i}, mask column: {e}") from None
    if not rows:
        raise ClipFormatError(f"{path}: no data rows")
    table = np.array(rows, dtype=np.float64)
    mask = np.array(masks) if has_mask else None
    try:
        return Clip(fps, table[:, :skeleton.dim], table[:, skeleton.dim:], mask)
    except ValueError as e:
        raise ClipFormatError(f"{path}: {e}") from None


def sidecar_path(path: Path) -> Path:
    return path.with_suffix(".json")


def _save_binary(clip: Clip, path: Path, skeleton: SkeletonSpec, normalization: dict | None) -> None:
    table = np.ascontiguousarray(np.concatenate([clip.motion, clip.control], axis=1), dtype="<f8")
    blob = table.tobytes()
    if clip.mask is not None:
        blob += np.packbits(clip.mask, axis=1, bitorder="little").tobytes()
    path.write_bytes(blob)
    meta = {
        "format_version": FORMAT_VERSION,
        "fps": clip.fps,
        "n_frames": clip.T,
        "columns": column_names(skeleton),
        "joint_names": list(skeleton.joint_names),
        "units": {"motion": "m", "forward": "m/s", "lateral": "m/s", "yaw": "rad/s"},
        "dtype": "<f8",
        "has_mask": clip.mask is not None,
        "normalization": normalization,
    }
    sidecar_path(path).write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n")


def _load_binary(path: Path, skeleton: SkeletonSpec) -> Clip:
    side = sidecar_path(path)
    if not side.exists():
        raise ClipFormatError(f"{path}: missing sidecar {side.name}")
    meta = json.loads(side.read_text())
    if meta.get("format_version") != FORMAT_VERSION:
        raise ClipFormatError(f"{side}: unsupported format_version {meta.get('format_version')!r}")
    if list(meta["joint_names"]) != list(skeleton.joint_names):
        raise ClipFormatError(f"{side}: joint names do not match the skeleton")
    T, n_val = int(meta["n_frames"]), skeleton.dim + N_CONTROL
    raw = path.read_bytes()
    n_tab = T * n_val * 8
    mask_bytes = T * math.ceil(skeleton.dim / 8) if meta["has_mask"] else 0
    if len(raw) != n_tab + mask_bytes:
        raise ClipFormatError(f"{path}: {len(raw)} bytes, expected {n_tab + mask_bytes} for {T} frames")
    table = np.frombuffer(raw[:n_tab], dtype="<f8").reshape(T, n_val).astype(np.float64)
    bad = np.argwhere(~np.isfinite(table))
    if len(bad):
        r, c = bad[0]
        raise ClipFormatError(f"{path}: frame {r}, column {c}: non-finite value")
    mask = None
    if meta["has_mask"]:
        packed = np.frombuffer(raw[n_tab:], dtype=np.uint8).reshape(T, -1)
        mask = np.unpackbits(packed, axis=1, count=skeleton.dim, bitorder="little").astype(bool)
    return Clip(float(meta["fps"]), table[:, :skeleton.dim], table[:, skeleton.dim:], mask)


def load_sidecar(path) -> dict:
    return json.loads(sidecar_path(Path(path)).read_text())
