"""Run the dance-trained planner on the boxing generator and compare hip distance.

    python scripts/transfer.py runs/main --scenes 20
"""
import argparse
from pathlib import Path

import numpy as np

from coordsynth.generator import load_checkpoint
from coordsynth.planner import PlannerPolicy, RLConfig, evaluate_policy, load_policy


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("runs", type=Path)
    ap.add_argument("--scenes", type=int, default=20)
    a = ap.parse_args()
    net, _ = load_policy(a.runs / "policy.npz")
    cfg = RLConfig()
    hd = {}
    for style in ("dance", "boxing"):
        rows = evaluate_policy({"trained": PlannerPolicy(net)}, load_checkpoint(a.runs / f"{style}_gen.npz"),
                               a.scenes, cfg)
        hd[style] = np.array([r["HD"] for r in rows])
        print(f"{style:7s} HD mean {hd[style].mean():.3f}  TS median {np.median([r['TS'] for r in rows]):.0f}")
    print(f"boxing > dance on {(hd['boxing'] > hd['dance']).sum()}/{a.scenes} paired seeds")


if __name__ == "__main__":
    main()
