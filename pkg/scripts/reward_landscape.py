"""Mean planner reward and TS of simple fixed policies, for reading the RL results.

Each policy maps the current matching (canonical index) to an action:
keep it, switch away from it, always pick a fixed canonical index, or pick at random.

    python scripts/reward_landscape.py runs/main --episodes 16
"""
import argparse
from pathlib import Path

import numpy as np

from coordsynth.coordination import normalize_pairing, quad_members
from coordsynth.generator import load_checkpoint
from coordsynth.motion import peak_jerk
from coordsynth.planner import RLConfig, canonical_order, enumerate_actions, featurize, rollout

POLICIES = {
    "random": lambda cur, rng: int(rng.integers(3)),
    "keep": lambda cur, rng: cur,
    "switch": lambda cur, rng: int((cur + 1 + rng.integers(2)) % 3),
    "index0": lambda cur, rng: 0,
    "index1": lambda cur, rng: 1,
    "index2": lambda cur, rng: 2,
}


class FixedPolicy:
    def __init__(self, rule):
        self.rule = rule
        self.decisions = []

    def plan(self, state, quad_pairs, rng):
        quad = canonical_order(quad_members(quad_pairs), state.hips())
        actions = enumerate_actions(quad)
        cur = actions.index(normalize_pairing(quad_pairs))
        a = self.rule(cur, rng)
        self.decisions.append((quad, featurize(state.last.data[list(quad)], cur), a))
        return actions[a]


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("runs", type=Path)
    ap.add_argument("--episodes", type=int, default=16)
    a = ap.parse_args()
    gen = load_checkpoint(a.runs / "dance_gen.npz")
    cfg = RLConfig()
    for name, rule in POLICIES.items():
        rewards, ts = [], []
        for k in range(a.episodes):
            trajs, state = rollout(FixedPolicy(rule), gen, cfg, 7000 + k)
            rewards.append(np.mean([r for t in trajs for _, _, r in t]))
            ts.append(peak_jerk(state.timeline()))
        rewards = np.array(rewards)
        print(f"{name:7s} reward {rewards.mean():.3f} +- {rewards.std(ddof=1) / np.sqrt(len(rewards)):.3f}  "
              f"TS mean {np.mean(ts):7.0f} median {np.median(ts):7.0f}")


if __name__ == "__main__":
    main()
