"""Close-contact frames with and without distance guidance over seeded 8-character scenes.

    python scripts/guidance_ablation.py runs/main --scenes 20 --eta 0.1 1 4
"""
import argparse
import math
from pathlib import Path

import numpy as np

from coordsynth.coordination import SceneConfig, run_scene
from coordsynth.generator import load_checkpoint
from coordsynth.guidance import ConstraintSet
from coordsynth.motion import close_frame_fraction, hip_distance, min_pairwise_hip_distance, peak_jerk


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("runs", type=Path)
    ap.add_argument("--scenes", type=int, default=20)
    ap.add_argument("--n", type=int, default=8)
    ap.add_argument("--T", type=int, default=4)
    ap.add_argument("--tau", type=float, default=0.25)
    ap.add_argument("--eta", type=float, nargs="+", default=[4.0])
    a = ap.parse_args()

    gen = load_checkpoint(a.runs / "dance_gen.npz")
    radius = 0.5 * math.sqrt(a.tau)
    settings = [("off", None)] + [(f"eta={e:g}", e) for e in a.eta]
    for name, eta in settings:
        stats = []
        for s in range(a.scenes):
            cfg = SceneConfig(n_characters=a.n, T=a.T, seed=1000 + s, constraints=ConstraintSet(tau=a.tau),
                              guidance=eta is not None, eta=eta or 0.0)
            tl, _ = run_scene(cfg, gen, "random")
            stats.append((close_frame_fraction(tl, radius), min_pairwise_hip_distance(tl), peak_jerk(tl),
                          hip_distance(tl)))
        close, mind, ts, hd = np.array(stats).T
        print(f"{name:8s} close frames {close.mean():.4f}  min hip distance {mind.min():.3f}  "
              f"TS median {np.median(ts):.0f}  HD {hd.mean():.3f}")


if __name__ == "__main__":
    main()
