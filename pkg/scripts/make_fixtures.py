"""Regenerate the frozen regression fixtures under tests/fixtures.

Run only when a deliberate numerical change invalidates them:

    python3 scripts/make_fixtures.py
"""
import shutil
import sys
import tempfile
from pathlib import Path

from gaitdiff.cli import main

FIX = Path(__file__).resolve().parent.parent / "tests" / "fixtures"


def run():
    cfg = str(FIX / "tiny.ini")
    with tempfile.TemporaryDirectory() as tmp:
        data, run_dir = Path(tmp) / "data", Path(tmp) / "run"
        if main(["--config", cfg, "--out", str(data), "--quiet", "gen-data"]):
            sys.exit("gen-data failed")
        if main(["--config", cfg, "--out", str(run_dir), "--quiet", "train", "--data", str(data)]):
            sys.exit("train failed")
        shutil.copy(run_dir / "loss.csv", FIX / "tiny_loss.csv")
    print(f"wrote {FIX / 'tiny_loss.csv'}")


if __name__ == "__main__":
    run()
