"""Run the whole CLI pipeline into one directory.

    python3 scripts/pipeline.py configs/smoke.ini out/smoke
    python3 scripts/pipeline.py configs/desk.ini out/desk      # several minutes

Writes data/, run/, sample/, reconstruct/ and eval/ under the output root.
"""
import argparse
import sys
from pathlib import Path

import numpy as np

from gaitdiff.cli import main
from gaitdiff.motion import load_clip, save_clip


def step(*argv):
    print("gaitdiff", " ".join(argv), flush=True)
    rc = main(list(argv))
    if rc:
        sys.exit(f"failed with exit code {rc}")


def run(config: str, root: Path):
    base = ["--config", config]
    data, run_dir = root / "data", root / "run"
    ckpt = run_dir / "model.ckpt"
    step(*base, "--out", str(data), "gen-data")
    step(*base, "--out", str(run_dir), "train", "--data", str(data))
    first = data / "clips" / "clip_000.csv"
    step(*base, "--out", str(root / "sample"), "sample", "--checkpoint", str(ckpt), "--seed-clip", str(first))

    # knock out the right arm for a third of the clip
    clip = load_clip(first)
    mask = np.ones_like(clip.motion, bool)
    T = clip.T
    mask[T // 3: 2 * T // 3, 30:39] = False
    holes = root / "holes.csv"
    save_clip(clip.with_mask(mask), holes)
    step(*base, "--out", str(root / "reconstruct"), "reconstruct", "--checkpoint", str(ckpt), "--clip", str(holes))

    step(*base, "--out", str(root / "eval"), "eval", "--clip", str(first),
         "--clip", str(root / "sample" / "sample.csv"), "--clip", str(root / "reconstruct" / "reconstructed.csv"))


if __name__ == "__main__":
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("config")
    ap.add_argument("out", type=Path)
    a = ap.parse_args()
    run(a.config, a.out)
