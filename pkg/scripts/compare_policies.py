"""Paired TS / HD / diversity comparison of the trained, random and static planners.

    python scripts/compare_policies.py runs/main --scenes 20
"""
import argparse
import math
from pathlib import Path

import numpy as np

from coordsynth.generator import load_checkpoint
from coordsynth.planner import PlannerPolicy, RLConfig, evaluate_policy, load_policy, write_rows


def sign_test(wins: int, n: int) -> float:
    return sum(math.comb(n, k) for k in range(wins, n + 1)) / 2**n


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("runs", type=Path)
    ap.add_argument("--generator", default="dance_gen.npz")
    ap.add_argument("--scenes", type=int, default=20)
    ap.add_argument("--seed", type=int, default=10_000)
    ap.add_argument("--T", type=int, default=8)
    a = ap.parse_args()

    gen = load_checkpoint(a.runs / a.generator)
    net, saved = load_policy(a.runs / "policy.npz")
    cfg = RLConfig(T=a.T, n_characters=saved["n_characters"], eta=saved["eta"],
                   lambda_smooth=saved["lambda_smooth"], tau=saved["tau"])
    rows = evaluate_policy({"trained": PlannerPolicy(net), "random": "random", "static": "static"},
                           gen, a.scenes, cfg, seed=a.seed)
    out = a.runs / f"compare_{Path(a.generator).stem}.csv"
    write_rows(out, rows)

    by = {p: [r for r in rows if r["policy"] == p] for p in ("trained", "random", "static")}
    for p, rs in by.items():
        ts = np.array([r["TS"] for r in rs])
        multi = sum(r["quads_multi"] for r in rs) / sum(r["quads"] for r in rs)
        print(f"{p:8s} TS mean {ts.mean():8.1f} median {np.median(ts):8.1f}  "
              f"HD {np.mean([r['HD'] for r in rs]):.3f}  quads with >=2 matchings {multi:.0%}")
    t = np.array([r["TS"] for r in by["trained"]])
    r = np.array([r["TS"] for r in by["random"]])
    wins = int((t < r).sum())
    print(f"trained vs random: reduction {1 - t.mean() / r.mean():+.1%}, wins {wins}/{len(t)}, "
          f"sign test p={sign_test(wins, len(t)):.3f}")
    print(f"rows written to {out}")


if __name__ == "__main__":
    main()
