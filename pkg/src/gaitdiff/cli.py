"""Command-line entry point.

Exit codes: 0 success, 1 runtime failure, 2 usage or configuration error.
Every subcommand writes its outputs plus a ``manifest.json`` under ``--out``.
"""
from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from .checkpoint import load_checkpoint, save_checkpoint
from .config import ConfigError, RunConfig, dump_config, load_config
from .ddpm import schedule_csv, schedule_hash
from .denoiser import build_denoiser
from .engine import (TrainConfig, TrainingError, prepare_windows, reconstruct, rollout_world, run_manifest, train,
                     write_manifest)
from .metrics import ROW_FIELDS, evaluate_clip, format_row, write_report
from .motion.clip import Clip
from .motion.features import local_clip, to_world
from .motion.gait import GaitParams, gen_synthetic_gait
from .motion.io import load_clip, save_clip
from .motion.skeleton import DEFAULT_SKELETON
from .seeding import int_seed, rng_for


class UsageError(ValueError):
    pass


def _global_flags(p: argparse.ArgumentParser, suppress: bool) -> None:
    d = argparse.SUPPRESS if suppress else None
    p.add_argument("--config", default=d, help="INI configuration file")
    p.add_argument("--seed", type=int, default=d, help="master seed (overrides [run] seed)")
    p.add_argument("--out", default=d if suppress else "out", help="output directory (default: out)")
    p.add_argument("--quiet", action="store_true", default=d if suppress else False, help="print nothing on success")
    p.add_argument("--set", action="append", default=d if suppress else [], metavar="SECTION.KEY=VALUE",
                   help="override a config value; repeatable")


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="gaitdiff", description="Autoregressive diffusion for skeletal locomotion.")
    _global_flags(p, suppress=False)
    p.add_argument("--print-config", action="store_true", help="print the effective configuration and exit")
    sub = p.add_subparsers(dest="command", metavar="COMMAND")

    def cmd(name, help_):
        sp = sub.add_parser(name, help=help_)
        _global_flags(sp, suppress=True)
        return sp

    g = cmd("gen-data", "write synthetic gait clips")
    g.add_argument("--clips", type=int)
    g.add_argument("--duration", type=float, help="seconds per clip")
    g.add_argument("--fps", type=float)

    t = cmd("train", "train a denoiser on a generated dataset")
    t.add_argument("--data", required=True, help="directory holding dataset.json")
    t.add_argument("--epochs", type=int)
    t.add_argument("--resume", help="checkpoint to continue from")

    s = cmd("sample", "roll out new frames from a seed clip")
    s.add_argument("--checkpoint", required=True)
    s.add_argument("--seed-clip", required=True, help="clip whose first T_h frames seed the rollout")
    s.add_argument("--frames", type=int)

    r = cmd("reconstruct", "fill the masked entries of a clip")
    r.add_argument("--checkpoint", required=True)
    r.add_argument("--clip", required=True)

    e = cmd("eval", "footstep and bone-length report for clips")
    e.add_argument("--clip", required=True, action="append", help="clip file; repeatable")

    cmd("schedule", "write the noise schedule table")
    return p


# -- helpers ------------------------------------------------------------------

def _say(args, *msg) -> None:
    if not args.quiet:
        print(*msg)


def _out(args) -> Path:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _manifest(args, cfg: RunConfig, sched, checkpoint, inputs, extra: dict | None = None) -> None:
    out = Path(args.out)
    m = run_manifest(cfg.to_dict(), cfg.seed, sched, checkpoint, inputs, out)
    m["command"] = args.command
    if extra:
        m.update(extra)
    write_manifest(out / "manifest.json", m)


def _need(path, what: str) -> Path:
    p = Path(path)
    if not p.exists():
        raise FileNotFoundError(f"{what} not found: {p}")
    return p


# -- subcommands --------------------------------------------------------------

def cmd_gen_data(args, cfg: RunConfig) -> None:
    d = cfg.data
    out = _out(args)
    clip_dir = out / "clips"
    clip_dir.mkdir(exist_ok=True)
    rng = rng_for(cfg.seed, "data")
    files = []
    for i in range(d.clips):
        freq = float(rng.uniform(d.step_freq_min, d.step_freq_max))
        params = GaitParams(step_freq=freq, duration=d.duration, fps=d.fps, profile=d.profile,
                            stance_slip=d.stance_slip)
        clip = gen_synthetic_gait(params, seed=int(rng.integers(2**31)))
        path = clip_dir / f"clip_{i:03d}.csv"
        save_clip(clip, path)
        files.append(path)
    DEFAULT_SKELETON.save(out / "skeleton.json")
    dataset = {"clips": [f.relative_to(out).as_posix() for f in files], "skeleton": "skeleton.json",
               "fps": d.fps, "frames_per_clip": params.n_frames}
    (out / "dataset.json").write_text(json.dumps(dataset, indent=2, sort_keys=True) + "\n")
    _manifest(args, cfg, cfg.diffusion.build(), None, files)
    _say(args, f"wrote {len(files)} clips of {params.n_frames} frames to {clip_dir}")


def _load_dataset(data_dir: Path) -> tuple[list[Clip], list[Path]]:
    manifest = _need(data_dir / "dataset.json", "dataset manifest")
    ds = json.loads(manifest.read_text())
    files = [data_dir / f for f in ds["clips"]]
    return [load_clip(_need(f, "clip")) for f in files], files


def cmd_train(args, cfg: RunConfig) -> None:
    tr = cfg.train
    clips, files = _load_dataset(Path(args.data))
    windows = prepare_windows(clips, DEFAULT_SKELETON, tr.T_h, tr.T_p, tr.stride, tr.augment)
    if not windows:
        raise UsageError(f"no clip is long enough for a {tr.T_h + tr.T_p}-frame window")
    if tr.max_windows and len(windows) > tr.max_windows:
        pick = np.sort(rng_for(cfg.seed, "data").choice(len(windows), tr.max_windows, replace=False))
        windows = [windows[i] for i in pick]
    tc = TrainConfig(epochs=tr.epochs, batch_size=tr.batch_size, lr=tr.lr, T_h=tr.T_h, T_p=tr.T_p,
                     dropout=tr.scheduler(), seed=cfg.seed, diffusion=cfg.diffusion, normalize=tr.normalize)
    sched = cfg.diffusion.build()
    if args.resume:
        ck = load_checkpoint(_need(args.resume, "checkpoint"))
        if ck.denoiser.config() != cfg.model.architecture(tr.T_h, tr.T_p):
            raise UsageError("checkpoint architecture does not match the configuration")
        if ck.sched.config() != sched.config():
            raise UsageError("checkpoint noise schedule does not match the configuration")
        den, norm, opt, start = ck.denoiser, ck.normalizer, ck.optimizer, ck.epoch
        rng = rng_for(cfg.seed, "training", start)  # resumed runs draw from an epoch-keyed stream
    else:
        den = build_denoiser(cfg.model.architecture(tr.T_h, tr.T_p), seed=int_seed(cfg.seed, "init"))
        norm, opt, start, rng = None, None, 0, rng_for(cfg.seed, "training")
    log = (lambda e, l: print(f"epoch {e}: loss {l:.6f}")) if not args.quiet and tr.epochs <= 50 else None
    res = train(windows, den, tc, sched, norm, rng, opt, start, log)
    out = _out(args)
    ckpt = out / "model.ckpt"
    save_checkpoint(ckpt, res.denoiser, sched, res.normalizer, res.steps, start + tr.epochs, res.optimizer,
                    {"windows": len(windows)})
    lines = ["epoch,loss"] + [f"{start + i},{l!r}" for i, l in enumerate(res.epoch_loss)]
    (out / "loss.csv").write_text("\n".join(lines) + "\n")
    _manifest(args, cfg, sched, ckpt, files, {"windows": len(windows), "steps": res.steps})
    last = f"{res.epoch_loss[-1]:.6f}" if res.epoch_loss else "n/a"
    _say(args, f"trained {tr.epochs} epochs ({res.steps} steps total) on {len(windows)} windows; final loss {last}")


def cmd_sample(args, cfg: RunConfig) -> None:
    ck = load_checkpoint(_need(args.checkpoint, "checkpoint"))
    clip = load_clip(_need(args.seed_clip, "seed clip"))
    T_h = ck.denoiser.T_h
    if clip.T < T_h:
        raise UsageError(f"seed clip has {clip.T} frames; the model needs {T_h}")
    if clip.motion.shape[1] != ck.meta["architecture"]["D"]:
        raise UsageError(f"seed clip has {clip.motion.shape[1]} motion columns, checkpoint expects "
                         f"{ck.meta['architecture']['D']}")
    N = cfg.sample.frames
    seed = Clip(clip.fps, clip.motion[:T_h], clip.control[:T_h], None if clip.mask is None else clip.mask[:T_h])
    gen = rollout_world(seed, N, clip.control, ck.denoiser, ck.sched, rng_for(cfg.seed, "sampling"), ck.normalizer)
    out = _out(args)
    save_clip(gen, out / "sample.csv")
    _manifest(args, cfg, ck.sched, args.checkpoint, [args.seed_clip], {"frames": N})
    _say(args, f"wrote {N} frames to {out / 'sample.csv'}")


def cmd_reconstruct(args, cfg: RunConfig) -> None:
    ck = load_checkpoint(_need(args.checkpoint, "checkpoint"))
    clip = load_clip(_need(args.clip, "clip"))
    out = _out(args)
    rc_cfg = cfg.reconstruct
    if clip.mask is None or clip.mask.all():
        result, iterations, filled, unfilled = clip, 0, 0, 0
    else:
        local, track = local_clip(clip, DEFAULT_SKELETON)
        rec = reconstruct(local, ck.denoiser, ck.sched, rng_for(cfg.seed, "sampling"), ck.normalizer,
                          horizon=rc_cfg.horizon or None, average=rc_cfg.average,
                          max_iterations=rc_cfg.max_iterations or None)
        world = to_world(rec.clip.motion, track, DEFAULT_SKELETON)
        known = ~rec.unfilled
        motion = np.where(clip.mask, clip.motion, np.where(known, world, 0.0))
        result = Clip(clip.fps, motion, clip.control, known)
        iterations, filled, unfilled = rec.iterations, int((known & ~clip.mask).sum()), int(rec.unfilled.sum())
    save_clip(result, out / "reconstructed.csv")
    report = {"iterations": iterations, "entries_filled": filled, "entries_unfilled": unfilled,
              "frames_touched": [] if clip.mask is None else np.flatnonzero(~clip.mask.all(axis=1)).tolist()}
    (out / "mask_report.json").write_text(json.dumps(report, indent=2, sort_keys=True) + "\n")
    _manifest(args, cfg, ck.sched, args.checkpoint, [args.clip])
    _say(args, f"filled {filled} entries in {iterations} passes; {unfilled} left unfilled")
    if unfilled:
        raise RuntimeError(f"{unfilled} entries could not be reconstructed")


def cmd_eval(args, cfg: RunConfig) -> None:
    out = _out(args)
    reports = {}
    header = "\t".join(("clip",) + ROW_FIELDS)
    rows = [header]
    for i, path in enumerate(args.clip):
        clip = load_clip(_need(path, "clip"))
        rep = evaluate_clip(clip, DEFAULT_SKELETON, cfg.eval.v_grid, cfg.eval.min_frames)
        name = Path(path).stem if len(args.clip) == 1 else f"{i:03d}_{Path(path).stem}"
        reports[name] = rep
        rows.append(format_row(rep["row"], name))
        write_report(rep, out / f"report_{name}.json", out / f"curve_{name}.csv")
    (out / "table.tsv").write_text("\n".join(rows) + "\n")
    _manifest(args, cfg, cfg.diffusion.build(), None, args.clip)
    _say(args, "\n".join(rows))


def cmd_schedule(args, cfg: RunConfig) -> None:
    sched = cfg.diffusion.build()
    out = _out(args)
    (out / "schedule.csv").write_text(schedule_csv(sched))
    _manifest(args, cfg, sched, None, [])
    _say(args, f"S={sched.S} alpha_bar_S={float(sched.alpha_bar[-1])!r} sha256={schedule_hash(sched)}")


COMMANDS = {"gen-data": cmd_gen_data, "train": cmd_train, "sample": cmd_sample,
            "reconstruct": cmd_reconstruct, "eval": cmd_eval, "schedule": cmd_schedule}


def _effective_config(args) -> RunConfig:
    overrides = list(args.set or [])
    if args.command == "gen-data":
        for k in ("clips", "duration", "fps"):
            if getattr(args, k, None) is not None:
                overrides.append(f"data.{k}={getattr(args, k)}")
    if args.command == "train" and getattr(args, "epochs", None) is not None:
        overrides.append(f"train.epochs={args.epochs}")
    if args.command == "sample" and getattr(args, "frames", None) is not None:
        overrides.append(f"sample.frames={args.frames}")
    if args.seed is not None:
        overrides.append(f"seed={args.seed}")
    return load_config(args.config, overrides)


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return int(e.code or 0)
    try:
        cfg = _effective_config(args)
        if args.print_config:
            print(dump_config(cfg), end="")
            return 0
        if args.command is None:
            parser.print_usage(sys.stderr)
            print("gaitdiff: error: a subcommand is required", file=sys.stderr)
            return 2
        COMMANDS[args.command](args, cfg)
        return 0
    except (ConfigError, UsageError) as e:
        print(f"gaitdiff: error: {e}", file=sys.stderr)
        return 2
    except (TrainingError, RuntimeError, OSError, ValueError) as e:
        print(f"gaitdiff: {type(e).__name__}: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
