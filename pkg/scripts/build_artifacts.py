"""Build corpora, generators and the planner used by the other scripts.

    python scripts/build_artifacts.py runs/main --steps 4000
"""
import argparse
import sys
from pathlib import Path

from coordsynth.cli import main as coordsynth


def run(*args):
    code = coordsynth([str(a) for a in args])
    if code:
        sys.exit(code)


def build(out: Path, steps: int, episodes: int, seed: int) -> None:
    out.mkdir(parents=True, exist_ok=True)
    for style in ("dance", "boxing"):
        gen = out / f"{style}_gen.npz"
        if gen.exists():
            continue
        run("gen-data", "--style", style, "--seed", seed, "--out", out / f"{style}_corpus.npz")
        run("train-gen", "--corpus", out / f"{style}_corpus.npz", "--out", gen, "--steps", steps, "--seed", seed)
    if not (out / "policy.npz").exists():
        run("train-planner", "--generator", out / "dance_gen.npz", "--out", out / "policy.npz",
            "--episodes", episodes, "--seed", seed)


if __name__ == "__main__":
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("out", type=Path)
    ap.add_argument("--steps", type=int, default=4000)
    ap.add_argument("--episodes", type=int, default=240)
    ap.add_argument("--seed", type=int, default=0)
    a = ap.parse_args()
    build(a.out, a.steps, a.episodes, a.seed)
