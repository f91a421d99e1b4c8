"""Kinematic walker used as a stand-in for recorded locomotion.

The pelvis follows the integrated control trajectory. Each foot alternates
between a stance phase, where the heel is planted (optionally creeping at
``stance_slip``), and a swing phase that eases it to the next plant. Knees
come from exact two-bone IK and everything else from forward kinematics,
so every bone keeps its prescribed length in every frame.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .clip import Clip
from .features import integrate_root, integrate_root_backward, rotate
from .skeleton import DEFAULT_SKELETON, SkeletonSpec

SIDES = (1.0, -1.0)  # left foot sits on +lateral


@dataclass(frozen=True)
class GaitParams:
    step_freq: float = 1.0          # gait cycles per second; each heel plants once per cycle
    stance_frac: float = 0.6
    duration: float = 4.0           # seconds
    fps: float = 20.0
    bone_lengths: tuple[float, ...] | None = None  # cm, skeleton bone order; None -> skeleton refs
    profile: str = "random"         # "random" or "constant"
    forward_speed: float = 1.0      # m/s (constant profile, or random-profile mean)
    lateral_speed: float = 0.0
    turn_rate: float = 0.0          # rad/s
    speed_range: tuple[float, float] = (0.7, 1.1)
    turn_amp: float = 0.5
    lateral_amp: float = 0.05
    stance_slip: float = 0.0        # m/s heel creep during stance
    step_height: float = 0.08
    arm_swing: float = 0.35         # rad
    ankle_height: float = 0.08
    leg_extension: float = 0.88     # hip-to-ankle height as a fraction of full leg length
    phase: float = 0.0
    heading0: float = 0.0

    def validate(self) -> None:
        if not self.step_freq > 0:
            raise ValueError("step_freq must be positive")
        if not self.duration > 0:
            raise ValueError("duration must be positive")
        if not self.fps > 0:
            raise ValueError("fps must be positive")
        if not 0.0 < self.stance_frac < 1.0:
            raise ValueError("stance_frac must lie in (0, 1)")
        if self.profile not in ("random", "constant"):
            raise ValueError(f"unknown control profile {self.profile!r}")
        if not 0.0 < self.leg_extension < 1.0:
            raise ValueError("leg_extension must lie in (0, 1)")

    @property
    def n_frames(self) -> int:
        return int(round(self.duration * self.fps))


def foot_phase_offset(side: int) -> float:
    return 0.0 if side == 0 else 0.5


def control_profile(params: GaitParams, rng: np.random.Generator, n: int) -> np.ndarray:
    """Per-frame (forward, lateral, yaw-rate) controls."""
    t = np.arange(n) / params.fps
    if params.profile == "constant":
        return np.tile([params.forward_speed, params.lateral_speed, params.turn_rate], (n, 1)).astype(np.float64)
    lo, hi = params.speed_range
    base = rng.uniform(lo, hi)
    amp = 0.5 * (hi - lo) * rng.uniform(0.0, 0.6)
    periods = rng.uniform(2.0, 6.0, size=3)
    phases = rng.uniform(0.0, 2 * np.pi, size=3)
    turn = rng.uniform(-params.turn_amp, params.turn_amp)
    fwd = base + amp * np.sin(2 * np.pi * t / periods[0] + phases[0])
    lat = params.lateral_amp * np.sin(2 * np.pi * t / periods[1] + phases[1])
    yaw = turn * np.sin(2 * np.pi * t / periods[2] + phases[2])
    return np.stack([fwd, lat, yaw], axis=1)


def _unit(v: np.ndarray) -> np.ndarray:
    return v / np.linalg.norm(v, axis=-1, keepdims=True)


def _two_bone_ik(hip: np.ndarray, ankle: np.ndarray, l1: float, l2: float, bend: np.ndarray) -> np.ndarray:
    d_vec = ankle - hip
    d = np.linalg.norm(d_vec, axis=-1, keepdims=True)
    if np.any(d >= 0.999 * (l1 + l2)) or np.any(d <= abs(l1 - l2) + 1e-9):
        raise ValueError("gait parameters demand an unreachable foot placement; reduce speed or raise step_freq")
    u = d_vec / d
    n = bend - np.sum(bend * u, axis=-1, keepdims=True) * u
    n = _unit(n)
    cos_a = (l1 * l1 + d * d - l2 * l2) / (2 * l1 * d)
    sin_a = np.sqrt(1.0 - cos_a * cos_a)
    return hip + l1 * (cos_a * u + sin_a * n)


def gen_synthetic_gait(params: GaitParams = GaitParams(), seed: int = 0,
                       skeleton: SkeletonSpec = DEFAULT_SKELETON, control: np.ndarray | None = None) -> Clip:
    params.validate()
    rng = np.random.default_rng(seed)
    T = params.n_frames
    if T < 1:
        raise ValueError("duration * fps must give at least one frame")
    fps, f, sf = params.fps, params.step_freq, params.stance_frac
    if control is None:
        control = control_profile(params, rng, T)
    control = np.asarray(control, dtype=np.float64)
    if control.shape != (T, 3):
        raise ValueError(f"control must be [{T}, 3], got {control.shape}")
    lengths = np.asarray(params.bone_lengths if params.bone_lengths is not None
                         else skeleton.ref_bone_lengths, dtype=np.float64) / 100.0
    L = {c: lengths[i] for i, (_, c) in enumerate(skeleton.bones)}
    J = skeleton.joint

    # root states on an extended frame grid so plants before/after the clip exist
    pad = int(math.ceil(fps / f)) + 2
    ctrl_ext = np.concatenate([np.repeat(control[:1], pad, 0), control, np.repeat(control[-1:], pad, 0)])
    fwd_track = integrate_root(np.zeros(2), params.heading0, ctrl_ext[pad:], fps)
    back_track = integrate_root_backward(np.zeros(2), params.heading0, ctrl_ext[:pad], fps)
    pos_ext = np.concatenate([back_track.pos[:-1], fwd_track.pos[:T + pad]])
    head_ext = np.concatenate([back_track.heading[:-1], fwd_track.heading[:T + pad]])
    grid = np.arange(-pad, T + pad) / fps

    def root_at(t):
        px = np.interp(t, grid, pos_ext[:, 0])
        pz = np.interp(t, grid, pos_ext[:, 1])
        return np.stack([px, pz], axis=-1), np.interp(t, grid, head_ext)

    t = np.arange(T) / fps
    pos, heading = pos_ext[pad:pad + T], head_ext[pad:pad + T]

    leg = L[J("LeftLeg")] + L[J("LeftFoot")]
    hip_dir = _unit(np.array([1.0, -0.4, 0.0]))
    hip_drop = -L[J("LeftUpLeg")] * hip_dir[1]
    pelvis_h = params.ankle_height + params.leg_extension * leg + hip_drop

    # (lateral, up, forward) coordinates throughout, permuted to skeleton axes at the end
    P = np.zeros((T, skeleton.n_joints, 3))
    pelvis = np.stack([pos[:, 0], np.full(T, pelvis_h), pos[:, 1]], axis=1)
    P[:, J("Hips")] = pelvis

    def place(local_dir: np.ndarray, parent: np.ndarray, length: float) -> np.ndarray:
        """parent + length * (local direction rotated by the frame heading)."""
        d = np.broadcast_to(local_dir, (T, 3))
        g = rotate(np.stack([d[:, 0], d[:, 2]], axis=1), heading)
        w = np.stack([g[:, 0], d[:, 1], g[:, 1]], axis=1)
        return parent + length * w

    up = np.array([0.0, 1.0, 0.0])
    for name, parent in (("Spine", "Hips"), ("Spine1", "Spine"), ("Neck", "Spine1"), ("Head", "Neck")):
        P[:, J(name)] = place(up, P[:, J(parent)], L[J(name)])

    for side, prefix in zip(SIDES, ("Left", "Right")):
        k = 0 if side > 0 else 1
        clav = _unit(np.array([side, 0.35, 0.0]))
        sh = P[:, J(f"{prefix}Shoulder")] = place(clav, P[:, J("Spine1")], L[J(f"{prefix}Shoulder")])
        arm = P[:, J(f"{prefix}Arm")] = place(np.array([side, 0.0, 0.0]), sh, L[J(f"{prefix}Arm")])
        # arm swings against the same-side leg
        a = params.arm_swing * np.sin(2 * np.pi * (f * t + foot_phase_offset(1 - k) + params.phase) + np.pi / 2)
        ua = np.stack([np.zeros(T), -np.cos(a), np.sin(a)], axis=1)
        elbow = P[:, J(f"{prefix}ForeArm")] = place(ua, arm, L[J(f"{prefix}ForeArm")])
        b = a + 0.25
        fa = np.stack([np.zeros(T), -np.cos(b), np.sin(b)], axis=1)
        P[:, J(f"{prefix}Hand")] = place(fa, elbow, L[J(f"{prefix}Hand")])

        hip = P[:, J(f"{prefix}UpLeg")] = place(hip_dir * np.array([side, 1.0, 1.0]), pelvis, L[J(f"{prefix}UpLeg")])
        ankle, foot_heading = _foot_track(params, k, t, root_at, side * L[J(f"{prefix}UpLeg")] * hip_dir[0])
        fwd_dir = rotate(np.stack([np.zeros(T), np.ones(T)], axis=1), heading)
        bend = np.stack([fwd_dir[:, 0], np.zeros(T), fwd_dir[:, 1]], axis=1)
        P[:, J(f"{prefix}Leg")] = _two_bone_ik(hip, ankle, L[J(f"{prefix}Leg")], L[J(f"{prefix}Foot")], bend)
        P[:, J(f"{prefix}Foot")] = ankle
        toe_pitch = 0.2
        fh = rotate(np.stack([np.zeros(T), np.ones(T)], axis=1), foot_heading)
        toe_dir = np.stack([fh[:, 0] * math.cos(toe_pitch), np.full(T, -math.sin(toe_pitch)),
                            fh[:, 1] * math.cos(toe_pitch)], axis=1)
        P[:, J(f"{prefix}ToeBase")] = ankle + L[J(f"{prefix}ToeBase")] * toe_dir

    lat, upa = skeleton.lateral_axis, skeleton.up_axis
    out = np.empty_like(P)
    out[..., lat], out[..., upa], out[..., 3 - lat - upa] = P[..., 0], P[..., 1], P[..., 2]
    return Clip(fps, out.reshape(T, -1), control)


def _foot_track(params: GaitParams, k: int, t: np.ndarray, root_at, lateral_offset: float):
    """Ankle positions and foot yaw for one foot over frame times ``t``."""
    f, sf = params.step_freq, params.stance_frac
    off = foot_phase_offset(k) + params.phase
    cyc = np.floor(f * t + off)
    u_cycle = f * t + off - cyc                   # phase within cycle in [0, 1)
    in_stance = u_cycle < sf

    def plant(kk):
        tm = (kk - off + sf / 2) / f
        rp, rh = root_at(tm)
        p = rp + rotate(np.stack([np.full_like(tm, lateral_offset), np.zeros_like(tm)], axis=-1), rh)
        return p, rh, tm

    def slid(kk, tt):
        p, h, tm = plant(kk)
        fwd = rotate(np.stack([np.zeros_like(tm), np.ones_like(tm)], axis=-1), h)
        return p + params.stance_slip * (tt - tm)[..., None] * fwd, h

    st_pos, st_head = slid(cyc, t)
    te = (cyc - off + sf) / f
    ts = (cyc + 1 - off) / f
    a_pos, a_head = slid(cyc, te)
    b_pos, b_head = slid(cyc + 1, ts)
    u = np.clip((t - te) / (ts - te), 0.0, 1.0)
    ease = (1.0 - np.cos(np.pi * u)) / 2
    sw_pos = a_pos + (b_pos - a_pos) * ease[:, None]
    sw_head = a_head + (b_head - a_head) * ease
    lift = params.step_height * np.sin(np.pi * u)

    xz = np.where(in_stance[:, None], st_pos, sw_pos)
    y = params.ankle_height + np.where(in_stance, 0.0, lift)
    heading = np.where(in_stance, st_head, sw_head)
    return np.stack([xz[:, 0], y, xz[:, 1]], axis=1), heading
