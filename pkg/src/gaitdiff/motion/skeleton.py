"""Skeleton topology and reference dimensions."""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

JOINT_NAMES = (
    "Hips", "Spine", "Spine1", "Neck", "Head",
    "LeftShoulder", "LeftArm", "LeftForeArm", "LeftHand",
    "RightShoulder", "RightArm", "RightForeArm", "RightHand",
    "LeftUpLeg", "LeftLeg", "LeftFoot", "LeftToeBase",
    "RightUpLeg", "RightLeg", "RightFoot", "RightToeBase",
)

_PARENTS = (-1, 0, 1, 2, 3, 2, 5, 6, 7, 2, 9, 10, 11, 0, 13, 14, 15, 0, 17, 18, 19)

# cm, indexed like the bone list (one bone per non-root joint, child order)
_REF_LENGTHS = (
    10.0, 15.0, 20.0, 12.0,      # spine chain up to head
    17.0, 12.0, 28.0, 25.0,      # left clavicle, shoulder offset, upper arm, forearm
    17.0, 12.0, 28.0, 25.0,      # right
    10.0, 46.0, 45.0, 15.0,      # left hip offset, thigh, shin, foot
    10.0, 46.0, 45.0, 15.0,      # right
)


@dataclass(frozen=True)
class SkeletonSpec:
    joint_names: tuple[str, ...] = JOINT_NAMES
    bones: tuple[tuple[int, int], ...] = tuple((p, c) for c, p in enumerate(_PARENTS) if p >= 0)
    mirror_pairs: tuple[tuple[int, int], ...] = ((5, 9), (6, 10), (7, 11), (8, 12),
                                                 (13, 17), (14, 18), (15, 19), (16, 20))
    lateral_axis: int = 0
    up_axis: int = 1
    heel_indices: tuple[int, int] = (15, 19)
    ref_bone_lengths: tuple[float, ...] = _REF_LENGTHS
    root: int = 0
    hip_indices: tuple[int, int] = (13, 17)
    metadata: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        object.__setattr__(self, "joint_names", tuple(self.joint_names))
        object.__setattr__(self, "bones", tuple(tuple(int(i) for i in b) for b in self.bones))
        object.__setattr__(self, "mirror_pairs", tuple(tuple(int(i) for i in b) for b in self.mirror_pairs))
        object.__setattr__(self, "heel_indices", tuple(int(i) for i in self.heel_indices))
        object.__setattr__(self, "hip_indices", tuple(int(i) for i in self.hip_indices))
        object.__setattr__(self, "ref_bone_lengths", tuple(float(v) for v in self.ref_bone_lengths))
        self.validate()

    @property
    def n_joints(self) -> int:
        return len(self.joint_names)

    @property
    def dim(self) -> int:
        return 3 * self.n_joints

    def validate(self) -> None:
        J = self.n_joints
        if len(self.bones) != J - 1:
            raise ValueError(f"a tree over {J} joints needs {J - 1} bones, got {len(self.bones)}")
        adj = {j: [] for j in range(J)}
        for p, c in self.bones:
            if not (0 <= p < J and 0 <= c < J):
                raise ValueError(f"bone ({p}, {c}) out of range")
            adj[p].append(c)
            adj[c].append(p)
        seen, stack = {self.root}, [self.root]
        while stack:
            for n in adj[stack.pop()]:
                if n not in seen:
                    seen.add(n)
                    stack.append(n)
        if len(seen) != J:
            raise ValueError("bones do not connect every joint")
        flat = [j for pair in self.mirror_pairs for j in pair]
        if len(flat) != len(set(flat)) or any(not 0 <= j < J for j in flat):
            raise ValueError("mirror_pairs must be disjoint joint pairs")
        if any(not 0 <= h < J for h in self.heel_indices) or len(self.heel_indices) != 2:
            raise ValueError("heel_indices must name two joints")
        if len(self.ref_bone_lengths) != len(self.bones):
            raise ValueError("one reference length per bone required")
        if {self.lateral_axis, self.up_axis} - {0, 1, 2} or self.lateral_axis == self.up_axis:
            raise ValueError("lateral_axis and up_axis must be distinct axes in 0..2")

    def joint_permutation(self) -> np.ndarray:
        """Joint index map that swaps every left/right pair."""
        perm = np.arange(self.n_joints)
        for a, b in self.mirror_pairs:
            perm[a], perm[b] = b, a
        return perm

    def joint(self, name: str) -> int:
        return self.joint_names.index(name)

    def joints_matching(self, prefix: str) -> list[int]:
        return [i for i, n in enumerate(self.joint_names) if n.startswith(prefix)]

    def ref_lengths_m(self) -> np.ndarray:
        return np.asarray(self.ref_bone_lengths) / 100.0

    def to_dict(self) -> dict:
        d = asdict(self)
        d.pop("metadata")
        return d

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2) + "\n")

    @classmethod
    def from_dict(cls, d: dict) -> "SkeletonSpec":
        known = {"joint_names", "bones", "mirror_pairs", "lateral_axis", "up_axis", "heel_indices",
                 "ref_bone_lengths", "root", "hip_indices"}
        extra = set(d) - known
        if extra:
            raise ValueError(f"unknown skeleton fields: {sorted(extra)}")
        return cls(**d)

    @classmethod
    def load(cls, path) -> "SkeletonSpec":
        return cls.from_dict(json.loads(Path(path).read_text()))


DEFAULT_SKELETON = SkeletonSpec()
