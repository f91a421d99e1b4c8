"""Footstep analysis and bone-length error.

Heel speeds are planar (ground-plane) speeds in cm/s from forward frame
differences. A footstep is a maximal run of at least ``min_frames``
consecutive speeds below the tolerance, pooled over both heels.
"""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field

import numpy as np

from .motion.clip import Clip
from .motion.skeleton import DEFAULT_SKELETON, SkeletonSpec

DEFAULT_V_GRID = tuple(float(v) for v in range(1, 21))
DEFAULT_MIN_FRAMES = 3
LENGTH_RESOLUTION_CM = 1e-9  # lengths are compared at this resolution


@dataclass
class FootstepReport:
    curve: list[tuple[float, int]]
    v95: float
    f_est_at_v95: int
    durations: list[float]
    mu: float
    sigma: float
    min_frames: int = DEFAULT_MIN_FRAMES

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class BoneLengthReport:
    per_bone: list[float]
    aggregate: float
    per_frame_max: list[float]
    degenerate: list[int] = field(default_factory=list)

    def to_dict(self) -> dict:
        return asdict(self)


def heel_speed(clip: Clip, skeleton: SkeletonSpec = DEFAULT_SKELETON) -> np.ndarray:
    if clip.T < 2:
        raise ValueError("heel speed needs at least 2 frames")
    ground = [a for a in range(3) if a != skeleton.up_axis]
    heels = clip.joints()[:, list(skeleton.heel_indices)][..., ground]
    return np.linalg.norm(np.diff(heels, axis=0), axis=-1) * clip.fps * 100.0


def _runs_below(speed: np.ndarray, v_tol: float) -> list[tuple[int, int]]:
    """(start, length) of maximal runs with speed < v_tol."""
    below = np.concatenate([[False], speed < v_tol, [False]])
    edges = np.flatnonzero(np.diff(below.astype(np.int8)))
    starts, ends = edges[0::2], edges[1::2]
    return list(zip(starts.tolist(), (ends - starts).tolist()))


def count_footsteps(speeds: np.ndarray, v_tol: float, min_frames: int = DEFAULT_MIN_FRAMES):
    """Returns (count, intervals) with intervals as (heel, start, n_frames)."""
    speeds = np.asarray(speeds, dtype=np.float64)
    if speeds.size == 0:
        raise ValueError("empty speed array")
    if not v_tol > 0:
        raise ValueError("v_tol must be positive")
    if min_frames < 1:
        raise ValueError("min_frames must be >= 1")
    if speeds.ndim == 1:
        speeds = speeds[:, None]
    intervals = []
    for h in range(speeds.shape[1]):
        intervals += [(h, s, n) for s, n in _runs_below(speeds[:, h], v_tol) if n >= min_frames]
    return len(intervals), intervals


def footstep_curve(clip: Clip, skeleton: SkeletonSpec = DEFAULT_SKELETON, v_grid=DEFAULT_V_GRID,
                   min_frames: int = DEFAULT_MIN_FRAMES) -> FootstepReport:
    grid = [float(v) for v in v_grid]
    if not grid:
        raise ValueError("empty v_tol grid")
    if any(b <= a for a, b in zip(grid, grid[1:])):
        raise ValueError("v_tol grid must be strictly ascending")
    speeds = heel_speed(clip, skeleton)
    counts = [count_footsteps(speeds, v, min_frames)[0] for v in grid]
    target = 0.95 * counts[-1]
    i95 = next(i for i, c in enumerate(counts) if c >= target)
    v95 = grid[i95]
    _, intervals = count_footsteps(speeds, v95, min_frames)
    durations = [n / clip.fps for _, _, n in intervals]
    mu = float(np.mean(durations)) if durations else 0.0
    sigma = float(np.std(durations)) if durations else 0.0
    return FootstepReport(list(zip(grid, counts)), v95, counts[i95], durations, mu, sigma, min_frames)


def bone_lengths_cm(clip: Clip, skeleton: SkeletonSpec = DEFAULT_SKELETON) -> np.ndarray:
    j = clip.joints()
    p = np.array([b[0] for b in skeleton.bones])
    c = np.array([b[1] for b in skeleton.bones])
    return np.linalg.norm(j[:, c] - j[:, p], axis=-1) * 100.0


def _quantize(a: np.ndarray) -> np.ndarray:
    return np.round(np.asarray(a, dtype=np.float64) / LENGTH_RESOLUTION_CM) * LENGTH_RESOLUTION_CM


def bone_length_rmse(clip: Clip, skeleton: SkeletonSpec = DEFAULT_SKELETON, ref_lengths=None) -> BoneLengthReport:
    """RMSE (cm) of per-frame bone lengths against reference lengths.

    Bones touching an unobserved joint are skipped in masked frames.
    Reference bones of zero length, and bones whose joints coincide in some
    frame, are reported as degenerate.
    """
    ref = np.asarray(skeleton.ref_bone_lengths if ref_lengths is None else ref_lengths, dtype=np.float64)
    if ref.shape != (len(skeleton.bones),):
        raise ValueError(f"need {len(skeleton.bones)} reference lengths, got {ref.shape}")
    lengths = bone_lengths_cm(clip, skeleton)
    err = _quantize(lengths) - _quantize(ref)
    valid = np.ones_like(err, dtype=bool)
    if clip.mask is not None:
        jm = clip.mask.reshape(clip.T, skeleton.n_joints, 3).all(axis=2)
        valid = np.stack([jm[:, p] & jm[:, c] for p, c in skeleton.bones], axis=1)
    degenerate = sorted(set(np.flatnonzero(ref <= 0).tolist())
                        | set(np.flatnonzero(((lengths == 0) & valid).any(axis=0)).tolist()))
    sq = np.where(valid, err * err, 0.0)
    n_bone = valid.sum(axis=0)
    per_bone = np.sqrt(np.divide(sq.sum(axis=0), n_bone, out=np.zeros(len(ref)), where=n_bone > 0))
    aggregate = float(np.sqrt(sq.sum() / valid.sum())) if valid.any() else 0.0
    per_frame_max = np.where(valid, np.abs(err), 0.0).max(axis=1)
    return BoneLengthReport(per_bone.tolist(), aggregate, per_frame_max.tolist(), degenerate)


def report_row(footsteps: FootstepReport, bones: BoneLengthReport) -> dict:
    return {"f_est": footsteps.f_est_at_v95, "v95": footsteps.v95, "mu": footsteps.mu,
            "sigma": footsteps.sigma, "rmse": bones.aggregate}


ROW_FIELDS = ("f_est", "v95", "mu", "sigma", "rmse")


def format_row(row: dict, name: str = "") -> str:
    cells = [str(row["f_est"]), f"{row['v95']:g}", f"{row['mu']:.3f}", f"{row['sigma']:.3f}", f"{row['rmse']:.3f}"]
    return "\t".join(([name] if name else []) + cells)


def evaluate_clip(clip: Clip, skeleton: SkeletonSpec = DEFAULT_SKELETON, v_grid=DEFAULT_V_GRID,
                  min_frames: int = DEFAULT_MIN_FRAMES, ref_lengths=None) -> dict:
    fs = footstep_curve(clip, skeleton, v_grid, min_frames)
    bl = bone_length_rmse(clip, skeleton, ref_lengths)
    return {"row": report_row(fs, bl), "footsteps": fs.to_dict(), "bones": bl.to_dict()}


def write_report(report: dict, json_path, csv_path=None) -> None:
    from pathlib import Path
    Path(json_path).write_text(json.dumps(report, indent=2, sort_keys=True) + "\n")
    if csv_path is not None:
        lines = ["v_tol,f_est"] + [f"{v!r},{c}" for v, c in report["footsteps"]["curve"]]
        Path(csv_path).write_text("\n".join(lines) + "\n")
