"""Root-relative pose features and z-score normalisation.

A frame's root is the pelvis ground projection plus a yaw heading read off
the hip axis. Features express every joint in that frame, so they are
unchanged by global translation and yaw; the world trajectory is recovered
by integrating the control velocities from a known root.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .clip import Clip
from .skeleton import SkeletonSpec


@dataclass(frozen=True)
class RootTrack:
    pos: np.ndarray      # [T, 2] ground-plane (lateral, forward) position
    heading: np.ndarray  # [T] yaw, radians


def _axes(skeleton: SkeletonSpec) -> tuple[int, int, int]:
    lat, up = skeleton.lateral_axis, skeleton.up_axis
    return lat, up, 3 - lat - up


def rotate(vec: np.ndarray, heading) -> np.ndarray:
    """Body-frame (lateral, forward) -> world ground plane for the given yaw."""
    c, s = np.cos(heading), np.sin(heading)
    lx, lz = vec[..., 0], vec[..., 1]
    return np.stack([lx * c + lz * s, -lx * s + lz * c], axis=-1)


def unrotate(vec: np.ndarray, heading) -> np.ndarray:
    c, s = np.cos(heading), np.sin(heading)
    wx, wz = vec[..., 0], vec[..., 1]
    return np.stack([wx * c - wz * s, wx * s + wz * c], axis=-1)


def integrate_root(pos0, heading0: float, control: np.ndarray, fps: float) -> RootTrack:
    """Roll the root forward: state k+1 = state k advanced by ``control[k]``.

    Returns ``len(control) + 1`` states, the first being the given start.
    """
    n = len(control)
    pos = np.empty((n + 1, 2))
    heading = np.empty(n + 1)
    pos[0] = pos0
    heading[0] = heading0
    dt = 1.0 / fps
    for k in range(n):
        v = np.array([control[k, 1], control[k, 0]])  # (lateral, forward)
        pos[k + 1] = pos[k] + rotate(v, heading[k]) * dt
        heading[k + 1] = heading[k] + control[k, 2] * dt
    return RootTrack(pos, heading)


def integrate_root_backward(pos_end, heading_end: float, control: np.ndarray, fps: float) -> RootTrack:
    """Inverse of :func:`integrate_root`: given the final state, recover the earlier ones."""
    n = len(control)
    pos = np.empty((n + 1, 2))
    heading = np.empty(n + 1)
    pos[n] = pos_end
    heading[n] = heading_end
    dt = 1.0 / fps
    for k in range(n - 1, -1, -1):
        heading[k] = heading[k + 1] - control[k, 2] * dt
        v = np.array([control[k, 1], control[k, 0]])
        pos[k] = pos[k + 1] - rotate(v, heading[k]) * dt
    return RootTrack(pos, heading)


def _frame_roots(joints: np.ndarray, skeleton: SkeletonSpec) -> RootTrack:
    lat, _, fwd = _axes(skeleton)
    root = joints[:, skeleton.root]
    lh, rh = skeleton.hip_indices
    h = joints[:, lh] - joints[:, rh]
    return RootTrack(np.stack([root[:, lat], root[:, fwd]], axis=1), np.arctan2(-h[:, fwd], h[:, lat]))


def root_track(motion: np.ndarray, skeleton: SkeletonSpec, mask: np.ndarray | None = None,
               control: np.ndarray | None = None, fps: float | None = None) -> RootTrack:
    """Per-frame roots; frames whose pelvis or hips are unobserved are dead-reckoned."""
    T = motion.shape[0]
    joints = motion.reshape(T, skeleton.n_joints, 3)
    track = _frame_roots(joints, skeleton)
    if mask is None:
        return track
    jm = np.asarray(mask).reshape(T, skeleton.n_joints, 3).all(axis=2)
    ok = jm[:, skeleton.root] & jm[:, skeleton.hip_indices[0]] & jm[:, skeleton.hip_indices[1]]
    if ok.all():
        return track
    if not ok.any():
        raise ValueError("no frame observes the pelvis and both hips; root track is undefined")
    if control is None or fps is None:
        raise ValueError("control and fps are needed to dead-reckon unobserved roots")
    pos, heading = track.pos.copy(), track.heading.copy()
    first = int(np.argmax(ok))
    if first > 0:
        back = integrate_root_backward(pos[first], heading[first], control[:first], fps)
        pos[:first], heading[:first] = back.pos[:-1], back.heading[:-1]
    for t in range(first + 1, T):
        if not ok[t]:
            step = integrate_root(pos[t - 1], heading[t - 1], control[t - 1:t], fps)
            pos[t], heading[t] = step.pos[1], step.heading[1]
    return RootTrack(pos, heading)


def to_local(motion: np.ndarray, track: RootTrack, skeleton: SkeletonSpec) -> np.ndarray:
    lat, _, fwd = _axes(skeleton)
    T = motion.shape[0]
    j = motion.reshape(T, skeleton.n_joints, 3).copy()
    rel = np.stack([j[..., lat], j[..., fwd]], axis=-1) - track.pos[:, None, :]
    loc = unrotate(rel, track.heading[:, None])
    j[..., lat], j[..., fwd] = loc[..., 0], loc[..., 1]
    return j.reshape(T, -1)


def to_world(local: np.ndarray, track: RootTrack, skeleton: SkeletonSpec) -> np.ndarray:
    lat, _, fwd = _axes(skeleton)
    T = local.shape[0]
    j = local.reshape(T, skeleton.n_joints, 3).copy()
    w = rotate(np.stack([j[..., lat], j[..., fwd]], axis=-1), track.heading[:, None]) + track.pos[:, None, :]
    j[..., lat], j[..., fwd] = w[..., 0], w[..., 1]
    return j.reshape(T, -1)


def joint_mask(mask: np.ndarray, n_joints: int) -> np.ndarray:
    """Entry mask -> entry mask where a joint counts as observed only if all 3 coords are."""
    T = mask.shape[0]
    jm = mask.reshape(T, n_joints, 3).all(axis=2)
    return np.repeat(jm, 3, axis=1)


def local_clip(clip: Clip, skeleton: SkeletonSpec) -> tuple[Clip, RootTrack]:
    """Root-relative copy of ``clip``; unobserved joints are zeroed and masked."""
    track = root_track(clip.motion, skeleton, clip.mask, clip.control, clip.fps)
    local = to_local(clip.motion, track, skeleton)
    mask = None
    if clip.mask is not None:
        mask = joint_mask(clip.mask, skeleton.n_joints)
        local = np.where(mask, local, 0.0)
    return Clip(clip.fps, local, clip.control, mask), track


@dataclass(frozen=True)
class Normalizer:
    motion_mean: np.ndarray
    motion_std: np.ndarray
    control_mean: np.ndarray
    control_std: np.ndarray

    MIN_STD = 1e-6

    @classmethod
    def identity(cls, D: int = 63, C: int = 3) -> "Normalizer":
        return cls(np.zeros(D), np.ones(D), np.zeros(C), np.ones(C))

    @classmethod
    def fit(cls, motion_frames: np.ndarray, control_frames: np.ndarray) -> "Normalizer":
        def stats(a):
            mu = a.mean(axis=0)
            sd = a.std(axis=0)
            return mu, np.where(sd < cls.MIN_STD, 1.0, sd)

        mm, ms = stats(np.asarray(motion_frames, dtype=np.float64))
        cm, cs = stats(np.asarray(control_frames, dtype=np.float64))
        return cls(mm, ms, cm, cs)

    @classmethod
    def fit_clips(cls, clips: list[Clip]) -> "Normalizer":
        return cls.fit(np.concatenate([c.motion for c in clips]), np.concatenate([c.control for c in clips]))

    def motion(self, a):
        return (np.asarray(a) - self.motion_mean) / self.motion_std

    def motion_inv(self, a):
        return np.asarray(a) * self.motion_std + self.motion_mean

    def control(self, a):
        return (np.asarray(a) - self.control_mean) / self.control_std

    def to_dict(self) -> dict:
        return {k: getattr(self, k).tolist() for k in ("motion_mean", "motion_std", "control_mean", "control_std")}

    @classmethod
    def from_dict(cls, d: dict) -> "Normalizer":
        return cls(*(np.asarray(d[k], dtype=np.float64)
                     for k in ("motion_mean", "motion_std", "control_mean", "control_std")))
