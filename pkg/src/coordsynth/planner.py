"""Quad-local transition planning as a small policy-gradient problem.

State: featurized last clip of the four quad characters. Action: one of the
three perfect matchings of the quad. Reward: seam smoothness plus a novelty
bonus for matchings the quad has not used recently.
"""
from __future__ import annotations

import csv
import json
import logging
import math
from collections import deque
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .coordination import (Pair, Pairing, SceneConfig, SceneState, TransitionPlan, _sub_seed, advance,
                           matchings_of, normalize_pairing, quad_members, resolve_policy, run_scene,
                           start_scene, form_quads)
from .generator import Denoiser
from .guidance import ConstraintSet
from .motion import HIP, POS, VEL, hip_distance, peak_jerk
from .nn import MLP, Adam

log = logging.getLogger(__name__)

POLICY_MAGIC = "COORDSYNTH-POLICY-v1"
N_ACTIONS = 3
LIMBS = (3, 4, 5, 6)
OBS_DIM = 4 * 7 + N_ACTIONS


class PlannerError(RuntimeError):
    pass


def enumerate_actions(quad: Sequence[int]) -> list[Pairing]:
    """The 3 matchings of ``quad`` in canonical order (keep, cross, swap) over its given order."""
    if len(quad) != 4 or len(set(quad)) != 4:
        raise PlannerError(f"quad needs 4 distinct indices, got {tuple(quad)}")
    return matchings_of(tuple(quad))


def canonical_order(quad: Sequence[int], hips: np.ndarray) -> tuple[int, int, int, int]:
    """Quad members sorted by distance of their hip to the quad centroid, ties by index."""
    pts = np.asarray(hips, dtype=float)[list(quad)]
    d = np.linalg.norm(pts - pts.mean(axis=0), axis=1)
    return tuple(int(i) for _, i in sorted(zip(np.round(d, 9), quad)))


def featurize(clips: np.ndarray, pairing_index: int) -> np.ndarray:
    """Observation for four clips (4, w, J, 10) given in canonical order.

    Uses the last frame: per character hip position and velocity in the quad
    frame (centroid at the origin, mean horizontal hip velocity along +x) and
    mean limb extension, followed by a one-hot of the current matching.
    """
    clips = np.asarray(clips, dtype=float)
    if clips.shape[0] != 4:
        raise PlannerError("featurize needs exactly 4 clips")
    frame = clips[:, -1]
    hips = frame[:, HIP, POS]
    vel = frame[:, HIP, VEL]
    rel = hips - hips.mean(axis=0)
    heading = vel[:, [0, 2]].mean(axis=0)
    if np.linalg.norm(heading) > 1e-9:
        c, s = heading / np.linalg.norm(heading)
    else:
        c, s = 1.0, 0.0

    def rotate(v):
        out = v.copy()
        out[:, 0] = c * v[:, 0] + s * v[:, 2]
        out[:, 2] = -s * v[:, 0] + c * v[:, 2]
        return out

    limbs = [j for j in LIMBS if j < clips.shape[2]]
    ext = np.linalg.norm(frame[:, limbs, POS] - hips[:, None], axis=-1).mean(axis=1) if limbs else np.zeros(4)
    per_char = np.concatenate([rotate(rel), rotate(vel), ext[:, None]], axis=1)
    onehot = np.zeros(N_ACTIONS)
    onehot[pairing_index] = 1.0
    return np.concatenate([per_char.reshape(-1), onehot])


def softmax(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def init_policy(seed: int = 0, hidden: tuple[int, ...] = (64, 64)) -> MLP:
    return MLP.init([OBS_DIM, *hidden, N_ACTIONS], seed, activation="tanh", out_scale=0.01)


def policy_forward(params: MLP, obs: np.ndarray) -> np.ndarray:
    logits = params(np.atleast_2d(obs))
    probs = softmax(logits)
    return probs[0] if np.ndim(obs) == 1 else probs


# ---------------------------------------------------------------------------
# rewards


def _window_mean_acc(pos: np.ndarray, lo: int, hi: int, fps: float) -> np.ndarray:
    """Mean central-difference acceleration over frames [lo, hi) of pos (n, F, J, 3)."""
    acc = (pos[:, lo + 1:hi + 1] - 2.0 * pos[:, lo:hi] + pos[:, lo - 1:hi - 1]) * fps**2
    return acc.mean(axis=1)


def reward_smooth(prev: np.ndarray, nxt: np.ndarray, fps: float, overlap: int = 0, window: int = 10,
                  joints: Optional[Sequence[int]] = (HIP,)) -> float:
    """``exp(-|acc_before - acc_after|^2)`` across the seam between two clips.

    ``prev``/``nxt`` are (n, w, J, 10) clips of the same characters; the first
    ``overlap`` frames of ``nxt`` repeat the tail of ``prev``. Accelerations are
    averaged over ``window`` frames on each side of the seam; the squared
    difference is summed over characters and the selected ``joints``
    (all joints when ``None``).
    """
    pos = np.concatenate([prev[..., POS], nxt[:, overlap:, :, POS]], axis=1)
    seam = prev.shape[1]
    if seam - window < 1 or seam + window > pos.shape[1] - 1:
        raise PlannerError("insufficient frames around the seam for the acceleration window")
    if joints is not None:
        pos = pos[:, :, list(joints)]
    before = _window_mean_acc(pos, seam - window, seam, fps)
    after = _window_mean_acc(pos, seam, seam + window, fps)
    return float(np.exp(-np.sum((before - after) ** 2)))


def reward_div(action, history: deque) -> int:
    """1 if ``action`` is absent from the recent-action buffer; ``action`` is then pushed."""
    novel = int(action not in history)
    history.append(action)
    return novel


@dataclass
class ActionHistory:
    """Recent matchings per quad (keyed by its member set)."""

    H: int = 3
    buffers: dict = field(default_factory=dict)

    def buffer(self, quad: Sequence[int]) -> deque:
        key = frozenset(quad)
        if key not in self.buffers:
            self.buffers[key] = deque(maxlen=self.H)
        return self.buffers[key]

    def novelty(self, quad: Sequence[int], pairing: Pairing) -> int:
        return reward_div(normalize_pairing(pairing), self.buffer(quad))


def step_env(state: SceneState, plans: Sequence[TransitionPlan], generator: Denoiser, history: ActionHistory,
             window: int = 10, joints: Optional[Sequence[int]] = (HIP,)) -> list[float]:
    """Advance the scene one step with ``plans`` and return ``r_smooth + r_div`` per plan."""
    prev = state.last
    nxt = advance(state, generator, plans)
    rewards = []
    for plan in plans:
        q = list(plan.quad)
        r_s = reward_smooth(prev.data[q], nxt.data[q], nxt.fps, state.config.k_overlap, window, joints)
        rewards.append(r_s + history.novelty(plan.quad, plan.new_pairing))
    return rewards


# ---------------------------------------------------------------------------
# policy


@dataclass
class PlannerPolicy:
    """Learned planner usable as a scene policy (``coordination.run_scene``)."""

    net: MLP
    greedy: bool = False
    decisions: list = field(default_factory=list)

    def decide(self, state: SceneState, quad_pairs: tuple[Pair, Pair], rng: np.random.Generator):
        quad = canonical_order(quad_members(quad_pairs), state.hips())
        actions = enumerate_actions(quad)
        current = actions.index(normalize_pairing(quad_pairs))
        obs = featurize(state.last.data[list(quad)], current)
        probs = policy_forward(self.net, obs)
        if not np.all(np.isfinite(probs)):
            raise PlannerError(f"non-finite policy output for quad {quad}: {probs}")
        a = int(np.argmax(probs)) if self.greedy else int(rng.choice(N_ACTIONS, p=probs))
        return quad, obs, a, actions[a]

    def plan(self, state: SceneState, quad_pairs: tuple[Pair, Pair], rng: np.random.Generator) -> Pairing:
        quad, obs, a, pairing = self.decide(state, quad_pairs, rng)
        self.decisions.append((quad, obs, a))
        return pairing


def log_prob_grads(net: MLP, obs: np.ndarray, actions: np.ndarray, weights: np.ndarray) -> list[np.ndarray]:
    """Gradient of ``sum_i weights_i * log pi(actions_i | obs_i)`` w.r.t. the policy parameters."""
    logits, cache = net.forward(np.atleast_2d(obs))
    probs = softmax(logits)
    onehot = np.eye(N_ACTIONS)[np.asarray(actions)]
    dlogits = (onehot - probs) * np.asarray(weights, dtype=float)[:, None]
    grads, _ = net.backward(cache, dlogits)
    return grads


def discounted_returns(rewards: Sequence[float], gamma: float) -> np.ndarray:
    out = np.zeros(len(rewards))
    g = 0.0
    for t in range(len(rewards) - 1, -1, -1):
        g = rewards[t] + gamma * g
        out[t] = g
    return out


@dataclass(frozen=True)
class RLConfig:
    episodes: int = 240
    T: int = 8
    gamma: float = 0.95
    lr: float = 3e-3
    baseline_decay: float = 0.9
    seed: int = 0
    H: int = 3
    n_characters: int = 4
    batch_episodes: int = 4
    hidden: tuple[int, ...] = (64, 64)
    window: int = 10
    reward_joints: Optional[tuple[int, ...]] = (HIP,)
    tau: float = 0.25
    lambda_smooth: float = 0.01
    w_dist: float = 1.0
    eta: float = 4.0

    def __post_init__(self):
        if not 0 < self.gamma <= 1:
            raise ValueError("gamma must lie in (0, 1]")
        if self.T < 2:
            raise ValueError("T must be >= 2 for any transition")

    def scene(self, seed: int, **overrides) -> SceneConfig:
        cons = ConstraintSet(self.tau, self.lambda_smooth, self.w_dist)
        return SceneConfig(**{"n_characters": self.n_characters, "T": self.T, "seed": seed,
                              "constraints": cons, "eta": self.eta, **overrides})


def rollout(policy: PlannerPolicy, generator: Denoiser, config: RLConfig, seed: int,
            scene_overrides: Optional[dict] = None) -> tuple[list, SceneState]:
    """One training episode; returns per-quad trajectories [(obs, action, reward), ...]."""
    scene = config.scene(seed, **(scene_overrides or {}))
    rng = np.random.default_rng(_sub_seed(seed, 1_000_003))
    state = start_scene(scene, generator)
    history = ActionHistory(config.H)
    trajectories: dict = {}
    while state.t < scene.T:
        policy.decisions.clear()
        plans = []
        for quad_pairs in form_quads(state.assignment, state.hips()):
            pairing = normalize_pairing(policy.plan(state, quad_pairs, rng))
            plans.append(TransitionPlan(quad_members(quad_pairs), pairing))
        decisions = list(policy.decisions)
        rewards = step_env(state, plans, generator, history, config.window, config.reward_joints)
        for (quad, obs, a), r in zip(decisions, rewards):
            trajectories.setdefault(frozenset(quad), []).append((obs, a, r))
    return list(trajectories.values()), state


def train_policy(generator: Denoiser, config: RLConfig = RLConfig(),
                 progress=None) -> tuple[MLP, dict]:
    """Likelihood-ratio policy gradient with an exponential-moving-average baseline."""
    net = init_policy(config.seed, config.hidden)
    policy = PlannerPolicy(net)
    opt = Adam(lr=config.lr)
    baseline = None
    curve = {"episode": [], "mean_reward": [], "baseline": []}
    batch_grads = None
    for ep in range(config.episodes):
        trajs, _ = rollout(policy, generator, config, _sub_seed(config.seed, 17, ep))
        obs, acts, rets, rewards = [], [], [], []
        for traj in trajs:
            r = [x[2] for x in traj]
            rewards += r
            rets += list(discounted_returns(r, config.gamma))
            obs += [x[0] for x in traj]
            acts += [x[1] for x in traj]
        rets = np.asarray(rets)
        if baseline is None:
            baseline = float(rets.mean())
        grads = log_prob_grads(net, np.array(obs), np.array(acts), rets - baseline)
        baseline = config.baseline_decay * baseline + (1 - config.baseline_decay) * float(rets.mean())
        batch_grads = grads if batch_grads is None else [a + b for a, b in zip(batch_grads, grads)]
        if (ep + 1) % config.batch_episodes == 0 or ep == config.episodes - 1:
            # ascent: the optimizer minimizes, so negate
            opt.step(net.params, [-g / config.batch_episodes for g in batch_grads])
            batch_grads = None
            if not all(np.all(np.isfinite(p)) for p in net.params):
                raise PlannerError(f"non-finite policy parameters after episode {ep}")
        curve["episode"].append(ep)
        curve["mean_reward"].append(float(np.mean(rewards)))
        curve["baseline"].append(baseline)
        if progress:
            progress(ep, curve["mean_reward"][-1])
    return net, curve


# ---------------------------------------------------------------------------
# evaluation


def distinct_matchings(plan_log: Sequence[dict]) -> dict[frozenset, int]:
    """Distinct matchings in effect per quad over a plan log (initial matching included)."""
    seen: dict[frozenset, set] = {}
    for entry in plan_log:
        key = frozenset(entry["quad"])
        s = seen.setdefault(key, set())
        if "previous" in entry and not s:
            s.add(normalize_pairing(tuple(map(tuple, entry["previous"]))))
        s.add(normalize_pairing(tuple(map(tuple, entry["pairing"]))))
    return {k: len(v) for k, v in seen.items()}


def evaluate_policy(policies: dict, generator: Denoiser, n_scenes: int, config: RLConfig,
                    seed: int = 10_000, scene_overrides: Optional[dict] = None) -> list[dict]:
    """Paired evaluation: every policy runs on the same scene seeds.

    ``policies`` maps a name to "static", "random" or a PlannerPolicy.
    """
    rows = []
    for k in range(n_scenes):
        scene_seed = _sub_seed(seed, k)
        for name, policy in policies.items():
            timeline, plan_log = run_scene(config.scene(scene_seed, **(scene_overrides or {})), generator, policy)
            counts = distinct_matchings(plan_log)
            rows.append({
                "policy": name,
                "scene": k,
                "seed": scene_seed,
                "TS": peak_jerk(timeline),
                "HD": hip_distance(timeline),
                "distinct_min": min(counts.values()) if counts else 1,
                "distinct_mean": float(np.mean(list(counts.values()))) if counts else 1.0,
                "quads_multi": sum(v >= 2 for v in counts.values()),
                "quads": len(counts),
            })
    return rows


def write_rows(path, rows: list[dict]) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=list(rows[0]))
        writer.writeheader()
        writer.writerows(rows)


def save_policy(path, net: MLP, config: RLConfig, curve: Optional[dict] = None) -> None:
    header = {"magic": POLICY_MAGIC, "sizes": net.sizes, "activation": net.activation,
              "config": asdict(config)}
    with open(path, "wb") as fh:
        np.savez(fh, header=np.array(json.dumps(header, sort_keys=True)), **net.state())


def load_policy(path) -> tuple[MLP, dict]:
    with np.load(path, allow_pickle=False) as z:
        header = json.loads(str(z["header"]))
        if header.get("magic") != POLICY_MAGIC:
            raise PlannerError(f"{path}: not a policy checkpoint ({header.get('magic')!r})")
        net = MLP.from_state(z, len(header["sizes"]) - 1, header["activation"])
    return net, header["config"]
