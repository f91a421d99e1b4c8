from .clip import N_CONTROL, Clip, Window, augment, mirror, mirror_motion, slice_windows, time_reverse
from .dropout import DropoutScheduler, diffusion_dropout, dropout_rate_at
from .features import (Normalizer, RootTrack, integrate_root, integrate_root_backward, local_clip, root_track,
                       to_local, to_world)
from .gait import GaitParams, gen_synthetic_gait
from .io import ClipFormatError, load_clip, save_clip
from .skeleton import DEFAULT_SKELETON, JOINT_NAMES, SkeletonSpec

__all__ = [
    "N_CONTROL", "Clip", "Window", "augment", "mirror", "mirror_motion", "slice_windows", "time_reverse",
    "DropoutScheduler", "diffusion_dropout", "dropout_rate_at",
    "Normalizer", "RootTrack", "integrate_root", "integrate_root_backward", "local_clip", "root_track",
    "to_local", "to_world", "GaitParams", "gen_synthetic_gait", "ClipFormatError", "load_clip", "save_clip",
    "DEFAULT_SKELETON", "JOINT_NAMES", "SkeletonSpec",
]
