"""Training, window sampling, autoregressive rollout and masked reconstruction.

Models see z-scored features. Everything here accepts and returns raw
(root-relative) features and converts through a :class:`Normalizer`;
unobserved context entries become 0 in normalised space, i.e. the
training mean.
"""
from __future__ import annotations

import hashlib
import json
import math
import os
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import autodiff as ad
from .ddpm import DiffusionConfig, NoiseSchedule, forward_sample, reverse_step, schedule_hash, simple_loss
from .denoiser import Denoiser
from .motion.clip import Clip, Window, augment, slice_windows
from .motion.dropout import DropoutScheduler, diffusion_dropout
from .motion.features import Normalizer, integrate_root, local_clip, to_world
from .motion.skeleton import DEFAULT_SKELETON, SkeletonSpec
from .optim import AdamState, adam_step


class TrainingError(RuntimeError):
    pass


class SamplingError(RuntimeError):
    pass


@dataclass
class TrainConfig:
    epochs: int = 1000
    batch_size: int = 64
    lr: float = 1e-3
    T_h: int = 10
    T_p: int = 10
    dropout: DropoutScheduler = field(default_factory=DropoutScheduler)
    seed: int = 0
    diffusion: DiffusionConfig = field(default_factory=DiffusionConfig)
    normalize: bool = True

    def validate(self) -> None:
        if self.epochs < 0:
            raise ValueError("epochs must be >= 0")
        if self.batch_size < 1 or self.T_h < 1 or self.T_p < 1:
            raise ValueError("batch_size, T_h and T_p must be positive")
        if not self.lr > 0:
            raise ValueError("lr must be positive")

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class TrainResult:
    denoiser: Denoiser
    normalizer: Normalizer
    epoch_loss: list[float]
    step_loss: list[float]
    optimizer: AdamState | None
    steps: int


@dataclass
class WindowBatch:
    """Stacked windows in raw units; ``x_mask`` is all-true when none was given."""
    x: np.ndarray
    c: np.ndarray
    y: np.ndarray
    x_mask: np.ndarray

    @classmethod
    def stack(cls, windows: list[Window]) -> "WindowBatch":
        if not windows:
            raise ValueError("dataset is empty")
        x = np.stack([w.x for w in windows])
        masks = np.stack([np.ones(w.x.shape, bool) if w.x_mask is None else w.x_mask for w in windows])
        return cls(x, np.stack([w.c for w in windows]), np.stack([w.y for w in windows]), masks)

    def __len__(self):
        return self.x.shape[0]


def prepare_windows(clips: list[Clip], skeleton: SkeletonSpec = DEFAULT_SKELETON, T_h: int = 10, T_p: int = 10,
                    stride: int = 1, augment_clips: bool = True) -> list[Window]:
    """World clips -> (optionally augmented) root-relative training windows."""
    if augment_clips:
        clips = augment(clips, skeleton)
    out = []
    for clip in clips:
        local, _ = local_clip(clip, skeleton)
        out += slice_windows(local, T_h, T_p, stride)
    return out


def _normalized(batch: WindowBatch, norm: Normalizer):
    x = np.where(batch.x_mask, norm.motion(batch.x), 0.0)
    return x, norm.control(batch.c), norm.motion(batch.y)


def _param_norms(denoiser: Denoiser) -> str:
    return ", ".join(f"{k}={np.linalg.norm(p.data):.3g}" for k, p in denoiser.params.items())


def train(dataset: list[Window], denoiser: Denoiser, config: TrainConfig, sched: NoiseSchedule | None = None,
          normalizer: Normalizer | None = None, rng: np.random.Generator | None = None,
          optimizer: AdamState | None = None, start_epoch: int = 0, log=None) -> TrainResult:
    """Minimise the simplified noise-prediction loss with Adam.

    Each epoch shuffles the windows; every batch element draws its own step
    ``s``, target noise, context noise and dropout coin. Denoisers without
    trainable parameters are evaluated on the same stream but never updated.
    """
    config.validate()
    batch = WindowBatch.stack(dataset)
    if sched is None:
        sched = config.diffusion.build()
    if normalizer is None:
        normalizer = (Normalizer.fit(batch.y.reshape(-1, batch.y.shape[-1]), batch.c.reshape(-1, batch.c.shape[-1]))
                      if config.normalize else Normalizer.identity(batch.x.shape[-1], batch.c.shape[-1]))
    if batch.x.shape[1] != config.T_h or batch.y.shape[1] != config.T_p:
        raise ValueError(f"windows are T_h={batch.x.shape[1]}, T_p={batch.y.shape[1]}; "
                         f"config says T_h={config.T_h}, T_p={config.T_p}")
    rng = rng if rng is not None else np.random.default_rng(config.seed)
    X, C, Y = _normalized(batch, normalizer)
    params = {k: p.data for k, p in denoiser.params.items()} if denoiser.trainable else {}
    if denoiser.trainable and optimizer is None:
        optimizer = AdamState.for_params(params, lr=config.lr)
    epoch_loss, step_loss = [], []
    n = len(batch)
    for e in range(start_epoch, start_epoch + config.epochs):
        p_d = config.dropout.rate_at(e)
        order = rng.permutation(n)
        total = 0.0
        for b, lo in enumerate(range(0, n, config.batch_size)):
            idx = order[lo:lo + config.batch_size]
            B = len(idx)
            s = rng.integers(1, sched.S + 1, size=B)
            eps = rng.standard_normal((B,) + Y.shape[1:])
            eps_x = rng.standard_normal((B,) + X.shape[1:])
            coin = rng.random(B)
            x_d = diffusion_dropout(X[idx], s, eps_x, sched, coin, p_d)
            y_s = forward_sample(Y[idx], s, eps, sched)
            if denoiser.trainable:
                loss_t = denoiser.loss(y_s, s, x_d, C[idx], eps)
                loss = float(loss_t.data)
                if not math.isfinite(loss):
                    raise TrainingError(f"non-finite loss at epoch {e}, batch {b}; parameter norms: "
                                        f"{_param_norms(denoiser)}")
                try:
                    grads = ad.gradients(loss_t, denoiser.params)
                except ad.BackwardError as err:
                    raise TrainingError(f"epoch {e}, batch {b}: {err}; parameter norms: "
                                        f"{_param_norms(denoiser)}") from None
                adam_step(params, grads, optimizer)
            else:
                loss = simple_loss(eps, denoiser.predict_conditioned(y_s, s, denoiser.condition(x_d, C[idx])))
            step_loss.append(loss)
            total += loss * B
        epoch_loss.append(total / n)
        if log is not None:
            log(e, epoch_loss[-1])
    steps = optimizer.step if optimizer is not None else 0
    return TrainResult(denoiser, normalizer, epoch_loss, step_loss, optimizer, steps)


def _horizon(denoiser: Denoiser, T_p: int | None) -> int:
    T_p = T_p if T_p is not None else getattr(denoiser, "T_p", None)
    if T_p is None:
        raise ValueError("T_p is required for a denoiser that does not declare its horizon")
    return int(T_p)


def sample_window(x, c, denoiser: Denoiser, sched: NoiseSchedule, rng: np.random.Generator,
                  normalizer: Normalizer | None = None, x_mask=None, T_p: int | None = None,
                  posterior_variance: bool = False) -> np.ndarray:
    """Run the reverse chain from pure noise; returns raw-unit y0 of shape [T_p, D].

    A leading batch axis on ``x`` and ``c`` is carried through.
    """
    x = np.asarray(x, dtype=np.float64)
    c = np.asarray(c, dtype=np.float64)
    single = x.ndim == 2
    if single:
        x, c = x[None], c[None]
        x_mask = None if x_mask is None else np.asarray(x_mask)[None]
    T_p = _horizon(denoiser, T_p)
    T_h, D = x.shape[1:]
    if c.shape[1] != T_h + T_p:
        raise ValueError(f"control context has {c.shape[1]} frames, expected T_h + T_p = {T_h + T_p}")
    norm = normalizer or Normalizer.identity(D, c.shape[-1])
    xn = norm.motion(x)
    if x_mask is not None:
        xn = np.where(x_mask, xn, 0.0)
    ctx = denoiser.condition(xn, norm.control(c))
    B = x.shape[0]
    y = rng.standard_normal((B, T_p, D))
    for s in range(sched.S, 0, -1):
        s_vec = np.full(B, s)
        eps_hat = denoiser.predict_conditioned(y, s_vec, ctx)
        z = rng.standard_normal(y.shape) if s > 1 else np.zeros_like(y)
        y = reverse_step(y, s_vec, eps_hat, z, sched, posterior_variance)
        if not np.all(np.isfinite(y)):
            raise SamplingError(f"non-finite sample at diffusion step {s}")
    out = norm.motion_inv(y)
    return out[0] if single else out


def pad_controls(control: np.ndarray, needed: int, pad: bool = True) -> np.ndarray:
    control = np.asarray(control, dtype=np.float64)
    if len(control) >= needed:
        return control
    if not pad or len(control) == 0:
        raise ValueError(f"control stream has {len(control)} frames, rollout needs {needed}")
    return np.concatenate([control, np.repeat(control[-1:], needed - len(control), axis=0)])


def rollout(seed_motion, control_stream, N: int, denoiser: Denoiser, sched: NoiseSchedule,
            rng: np.random.Generator, normalizer: Normalizer | None = None, T_p: int | None = None,
            pad: bool = True, seed_mask=None, anchor=None, anchor_mask=None) -> np.ndarray:
    """Generate ``N`` frames one at a time, committing only the first predicted frame.

    ``control_stream[k]`` is the control of frame ``k`` counted from the
    first seed frame. Where ``anchor_mask[k]`` is true the committed frame
    takes ``anchor[k]`` instead of the model's value.
    """
    if N < 1:
        raise ValueError("N must be >= 1")
    T_p = _horizon(denoiser, T_p)
    window = np.array(seed_motion, dtype=np.float64)
    T_h, D = window.shape
    ctrl = pad_controls(control_stream, T_h + N + T_p - 1, pad)
    wmask = np.ones((T_h, D), bool) if seed_mask is None else np.array(seed_mask, dtype=bool)
    out = np.empty((N, D))
    for k in range(N):
        y = sample_window(window, ctrl[k:k + T_h + T_p], denoiser, sched, rng, normalizer, wmask, T_p)
        frame = y[0]
        if anchor_mask is not None:
            frame = np.where(anchor_mask[k], anchor[k], frame)
        out[k] = frame
        window = np.concatenate([window[1:], frame[None]])
        wmask = np.concatenate([wmask[1:], np.ones((1, D), bool)])
    return out


def rollout_world(seed_clip: Clip, N: int, control_stream, denoiser: Denoiser, sched: NoiseSchedule,
                  rng: np.random.Generator, normalizer: Normalizer | None = None,
                  skeleton: SkeletonSpec = DEFAULT_SKELETON, T_p: int | None = None) -> Clip:
    """Roll out from a world-space seed clip and place the result on the integrated root path."""
    local, track = local_clip(seed_clip, skeleton)
    T_h = local.T
    ctrl = np.asarray(control_stream, dtype=np.float64)
    frames = rollout(local.motion, ctrl, N, denoiser, sched, rng, normalizer, T_p, seed_mask=local.mask)
    full_ctrl = pad_controls(ctrl, T_h + N)[:T_h + N]
    path = integrate_root(track.pos[-1], track.heading[-1], full_ctrl[T_h - 1:T_h + N - 1], seed_clip.fps)
    gen_track = type(track)(path.pos[1:], path.heading[1:])
    world = to_world(frames, gen_track, skeleton)
    return Clip(seed_clip.fps, world, full_ctrl[T_h:T_h + N])


@dataclass
class Reconstruction:
    clip: Clip
    iterations: int
    unfilled: np.ndarray     # [T, D] True where still missing

    @property
    def complete(self) -> bool:
        return not self.unfilled.any()


def reconstruct(clip: Clip, denoiser: Denoiser, sched: NoiseSchedule, rng: np.random.Generator,
                normalizer: Normalizer | None = None, T_h: int | None = None, T_p: int | None = None,
                horizon: int | None = None, average: bool = False, max_iterations: int | None = None,
                pad: bool = True) -> Reconstruction:
    """Fill the masked entries of a root-relative clip by forward then time-reversed generation.

    Holes are visited left to right. For the leftmost hole starting at
    ``h0`` a forward rollout from the ``T_h`` frames ending at
    ``max(h0, T_h)`` generates ``horizon`` frames (observed entries pinned).
    The last ``T_h`` of those, reversed with negated reversed controls,
    condition a backward rollout down to ``h0``. Backward values replace the
    masked entries they cover (or are averaged with the forward values when
    ``average`` is set); the remaining forward values fill the rest of the
    span. Observed entries are never written.
    """
    T_h = T_h if T_h is not None else getattr(denoiser, "T_h", None)
    if T_h is None:
        raise ValueError("T_h is required for a denoiser that does not declare it")
    T_p = _horizon(denoiser, T_p)
    H = T_h if horizon is None else int(horizon)
    if H < T_h:
        raise ValueError(f"reconstruction horizon {H} must be >= T_h = {T_h}")
    T, D = clip.motion.shape
    observed = np.ones((T, D), bool) if clip.mask is None else clip.mask.copy()
    if observed.all():
        return Reconstruction(clip, 0, np.zeros((T, D), bool))
    if T < T_h:
        raise ValueError(f"clip of {T} frames is shorter than the {T_h}-frame context")
    if max_iterations is None:
        max_iterations = math.ceil(T / H) + 1
    values = np.where(observed, clip.motion, 0.0)
    known = observed.copy()
    it = 0
    while not known.all() and it < max_iterations:
        it += 1
        h0 = int(np.flatnonzero(~known.all(axis=1))[0])
        start = max(h0, T_h)
        e = start + H
        ctrl = pad_controls(clip.control, e + T_p, pad)
        # forward pass over [start, e)
        anc = np.zeros((H, D))
        anc_m = np.zeros((H, D), bool)
        inside = min(e, T) - start
        if inside > 0:
            anc[:inside] = values[start:start + inside]
            anc_m[:inside] = known[start:start + inside]
        fwd = rollout(values[start - T_h:start], ctrl[start - T_h:], H, denoiser, sched, rng, normalizer, T_p,
                      pad, known[start - T_h:start], anc, anc_m)
        seq = np.concatenate([values[:start], fwd])          # [e, D]
        # backward pass over [h0, e - T_h); only originally known entries are pinned
        n_back = e - T_h - h0
        back = None
        if n_back > 0:
            pinned = np.zeros((e, D), bool)
            pinned[:min(e, T)] = known[:min(e, T)]
            rev, rev_pinned = seq[::-1], pinned[::-1]
            back = rollout(rev[:T_h], -ctrl[:e][::-1], n_back, denoiser, sched, rng, normalizer, T_p, pad,
                           None, rev[T_h:T_h + n_back], rev_pinned[T_h:T_h + n_back])[::-1]
        fill = seq.copy()
        if back is not None:
            span = slice(h0, e - T_h)
            has_fwd = np.zeros((n_back, 1), bool)
            lo = max(start, h0) - h0
            has_fwd[lo:] = True
            fill[span] = np.where(average & has_fwd, 0.5 * (seq[span] + back), back)
        stop = min(e, T)
        hole = ~known[h0:stop]
        values[h0:stop] = np.where(hole, fill[h0:stop], values[h0:stop])
        known[h0:stop] = True
    values = np.where(observed, clip.motion, values)
    unfilled = ~known
    mask = None if known.all() else known
    out = Clip(clip.fps, np.where(known, values, 0.0), clip.control, mask)
    return Reconstruction(out, it, unfilled)


# -- run manifest -------------------------------------------------------------

def git_blob_sha1(data: bytes) -> str:
    return hashlib.sha1(b"blob %d\0" % len(data) + data).hexdigest()


def run_manifest(config: dict, seed: int, sched: NoiseSchedule, checkpoint: str | None,
                 dataset_files: list, base_dir) -> dict:
    base = Path(base_dir)
    files = {}
    for f in sorted(Path(p) for p in dataset_files):
        files[_rel(f, base)] = git_blob_sha1(f.read_bytes())
    return {"config": config, "seed": seed, "schedule_hash": schedule_hash(sched),
            "checkpoint": None if checkpoint is None else _rel(Path(checkpoint), base), "dataset": files}


def _rel(path: Path, base: Path) -> str:
    return Path(os.path.relpath(Path(path).resolve(), base.resolve())).as_posix()


def write_manifest(path, manifest: dict) -> None:
    Path(path).write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
