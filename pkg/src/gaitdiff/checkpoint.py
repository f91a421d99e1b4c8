"""Binary checkpoints.

Layout: ``b"GAITDIFF"``, uint32 LE format version, uint32 LE metadata length,
UTF-8 JSON metadata, then float32 LE tensors back to back in the order the
metadata lists them (model parameters in declaration order, followed by
Adam moments when saved for resume).
"""
from __future__ import annotations

import json
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .ddpm import NoiseSchedule, build_schedule
from .denoiser import Denoiser, build_denoiser
from .motion.features import Normalizer
from .optim import AdamState

MAGIC = b"GAITDIFF"
VERSION = 1


class CheckpointError(ValueError):
    pass


@dataclass
class Checkpoint:
    denoiser: Denoiser
    sched: NoiseSchedule
    normalizer: Normalizer
    step: int
    epoch: int
    optimizer: AdamState | None
    meta: dict


def save_checkpoint(path, denoiser: Denoiser, sched: NoiseSchedule, normalizer: Normalizer, step: int = 0,
                    epoch: int = 0, optimizer: AdamState | None = None, extra: dict | None = None) -> None:
    if not denoiser.trainable:
        raise CheckpointError("only trainable denoisers can be checkpointed")
    tensors = [(k, p.data) for k, p in denoiser.params.items()]
    opt_meta = None
    if optimizer is not None:
        tensors += [(f"adam.m.{k}", optimizer.m[k]) for k in denoiser.params]
        tensors += [(f"adam.v.{k}", optimizer.v[k]) for k in denoiser.params]
        opt_meta = {"lr": optimizer.lr, "beta1": optimizer.beta1, "beta2": optimizer.beta2,
                    "eps": optimizer.eps, "step": optimizer.step}
    meta = {
        "architecture": denoiser.config(),
        "schedule": sched.config(),
        "step": int(step),
        "epoch": int(epoch),
        "normalizer": normalizer.to_dict(),
        "optimizer": opt_meta,
        "tensors": [{"name": k, "shape": list(a.shape)} for k, a in tensors],
        "extra": extra or {},
    }
    head = json.dumps(meta, sort_keys=True).encode()
    with open(path, "wb") as f:
        f.write(MAGIC + struct.pack("<II", VERSION, len(head)) + head)
        for _, a in tensors:
            f.write(np.ascontiguousarray(a, dtype="<f4").tobytes())


def read_meta(path) -> tuple[dict, bytes]:
    raw = Path(path).read_bytes()
    if raw[:8] != MAGIC:
        raise CheckpointError(f"{path}: not a checkpoint (bad magic)")
    version, n = struct.unpack("<II", raw[8:16])
    if version != VERSION:
        raise CheckpointError(f"{path}: unsupported checkpoint version {version}")
    return json.loads(raw[16:16 + n]), raw[16 + n:]


def load_checkpoint(path, dtype=np.float32) -> Checkpoint:
    meta, body = read_meta(path)
    arrays, off = {}, 0
    for t in meta["tensors"]:
        n = int(np.prod(t["shape"])) * 4
        if off + n > len(body):
            raise CheckpointError(f"{path}: truncated at tensor {t['name']}")
        arrays[t["name"]] = np.frombuffer(body[off:off + n], dtype="<f4").reshape(t["shape"])
        off += n
    if off != len(body):
        raise CheckpointError(f"{path}: {len(body) - off} trailing bytes")
    den = build_denoiser(meta["architecture"], seed=0, dtype=dtype)
    if list(den.params) != [t["name"] for t in meta["tensors"]][:len(den.params)]:
        raise CheckpointError(f"{path}: parameter list does not match the architecture")
    for k, p in den.params.items():
        if p.data.shape != arrays[k].shape:
            raise CheckpointError(f"{path}: shape mismatch for {k}")
        p.data[...] = arrays[k]
    opt = None
    if meta["optimizer"] is not None:
        o = meta["optimizer"]
        opt = AdamState(lr=o["lr"], beta1=o["beta1"], beta2=o["beta2"], eps=o["eps"], step=o["step"])
        for k, p in den.params.items():
            opt.m[k] = arrays[f"adam.m.{k}"].astype(p.data.dtype)
            opt.v[k] = arrays[f"adam.v.{k}"].astype(p.data.dtype)
    sc = meta["schedule"]
    sched = build_schedule(sc["S"], sc["beta_start"], sc["beta_end"], sc["kind"])
    return Checkpoint(den, sched, Normalizer.from_dict(meta["normalizer"]), meta["step"], meta["epoch"], opt, meta)
