"""Motion clips, training windows, and the two augmentations (mirror, time reversal)."""
from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from .skeleton import SkeletonSpec

N_CONTROL = 3  # forward velocity (m/s), lateral velocity (m/s), yaw rate (rad/s)


@dataclass(frozen=True)
class Clip:
    fps: float
    motion: np.ndarray            # [T, 3J] metres, joint-major xyz
    control: np.ndarray           # [T, 3]
    mask: np.ndarray | None = None  # [T, 3J] bool, True = observed

    def __post_init__(self):
        motion = np.asarray(self.motion, dtype=np.float64)
        control = np.asarray(self.control, dtype=np.float64)
        if not self.fps > 0:
            raise ValueError(f"fps must be positive, got {self.fps}")
        if motion.ndim != 2 or motion.shape[1] % 3:
            raise ValueError(f"motion must be [T, 3J], got {motion.shape}")
        if control.shape != (motion.shape[0], N_CONTROL):
            raise ValueError(f"control must be [T, {N_CONTROL}] matching motion, got {control.shape}")
        object.__setattr__(self, "motion", motion)
        object.__setattr__(self, "control", control)
        if self.mask is not None:
            mask = np.asarray(self.mask, dtype=bool)
            if mask.shape != motion.shape:
                raise ValueError(f"mask shape {mask.shape} != motion shape {motion.shape}")
            if np.any(motion[~mask] != 0):
                raise ValueError("masked-out motion entries must hold 0")
            object.__setattr__(self, "mask", mask)

    @property
    def T(self) -> int:
        return self.motion.shape[0]

    @property
    def duration(self) -> float:
        return self.T / self.fps

    def with_mask(self, mask: np.ndarray | None) -> "Clip":
        """Apply a mask, zeroing unobserved entries."""
        if mask is None:
            return Clip(self.fps, self.motion, self.control, None)
        mask = np.asarray(mask, dtype=bool)
        return Clip(self.fps, np.where(mask, self.motion, 0.0), self.control, mask)

    def joints(self) -> np.ndarray:
        return self.motion.reshape(self.T, -1, 3)

    def equals(self, other: "Clip") -> bool:
        """Bit-exact comparison of every field."""
        if self.fps != other.fps or (self.mask is None) != (other.mask is None):
            return False
        same = np.array_equal(self.motion, other.motion) and np.array_equal(self.control, other.control)
        return same and (self.mask is None or np.array_equal(self.mask, other.mask))


@dataclass(frozen=True)
class Window:
    x: np.ndarray               # [T_h, D] past motion
    c: np.ndarray               # [T_h + T_p, C] controls spanning past and future
    y: np.ndarray               # [T_p, D] target motion
    x_mask: np.ndarray | None = None
    start: int = 0


def slice_windows(clip: Clip, T_h: int = 10, T_p: int = 10, stride: int = 1) -> list[Window]:
    if T_h < 1 or T_p < 1 or stride < 1:
        raise ValueError("T_h, T_p and stride must be positive")
    L = T_h + T_p
    if clip.T < L:
        warnings.warn(f"clip of {clip.T} frames is shorter than a {L}-frame window", stacklevel=2)
        return []
    out = []
    for i in range(0, clip.T - L + 1, stride):
        x_mask = None if clip.mask is None else clip.mask[i:i + T_h]
        out.append(Window(clip.motion[i:i + T_h], clip.control[i:i + L], clip.motion[i + T_h:i + L], x_mask, i))
    return out


def mirror_motion(motion: np.ndarray, skeleton: SkeletonSpec) -> np.ndarray:
    T = motion.shape[0]
    joints = motion.reshape(T, skeleton.n_joints, 3)[:, skeleton.joint_permutation()].copy()
    joints[..., skeleton.lateral_axis] *= -1.0
    return joints.reshape(T, -1)


def mirror(clip: Clip, skeleton: SkeletonSpec) -> Clip:
    """Reflect across the sagittal plane: negate lateral coords, swap left/right."""
    if clip.motion.shape[1] != skeleton.dim:
        raise ValueError(f"clip has {clip.motion.shape[1]} motion columns, skeleton expects {skeleton.dim}")
    motion = mirror_motion(clip.motion, skeleton)
    control = clip.control * np.array([1.0, -1.0, -1.0])
    mask = None
    if clip.mask is not None:
        T = clip.T
        mask = clip.mask.reshape(T, skeleton.n_joints, 3)[:, skeleton.joint_permutation()].reshape(T, -1)
    return Clip(clip.fps, motion, control, mask)


def time_reverse(clip: Clip, negate_velocities: bool = True) -> Clip:
    """Play the clip backwards; velocities flip sign by default."""
    control = clip.control[::-1].copy()
    if negate_velocities:
        control = -control
    mask = None if clip.mask is None else clip.mask[::-1].copy()
    return Clip(clip.fps, clip.motion[::-1].copy(), control, mask)


def augment(clips: list[Clip], skeleton: SkeletonSpec, mirror_clips: bool = True,
            reverse_clips: bool = True) -> list[Clip]:
    """Originals plus mirrored, reversed and mirrored-reversed copies."""
    out = list(clips)
    if mirror_clips:
        out += [mirror(c, skeleton) for c in clips]
    if reverse_clips:
        out += [time_reverse(c) for c in out]
    return out
