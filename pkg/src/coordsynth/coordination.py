"""Group-wise scene synthesis: pairing, quads, plans and the autoregressive loop."""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field, replace
from typing import Callable, Optional, Sequence, Union

import numpy as np

from .generator import Denoiser, sample
from .guidance import ConstraintSet, total_guidance
from .motion import HIP, POS, VEL, ClipSet, SceneTimeline
from .synth_data import canonicalize_pair, translate_clip

log = logging.getLogger(__name__)

Pair = tuple[int, int]
Pairing = tuple[Pair, Pair]


class CoordinationError(RuntimeError):
    pass


class SpawnError(CoordinationError):
    pass


def _pair(a: int, b: int) -> Pair:
    return (a, b) if a < b else (b, a)


@dataclass(frozen=True)
class GroupAssignment:
    pairs: tuple[Pair, ...]

    def __post_init__(self):
        pairs = tuple(sorted(_pair(int(a), int(b)) for a, b in self.pairs))
        object.__setattr__(self, "pairs", pairs)
        members = [i for p in pairs for i in p]
        if len(set(members)) != len(members) or any(a == b for a, b in pairs):
            raise CoordinationError(f"not a matching: {pairs}")
        if sorted(members) != list(range(len(members))):
            raise CoordinationError(f"matching does not cover 0..{len(members) - 1}: {pairs}")

    @property
    def N(self) -> int:
        return 2 * len(self.pairs)

    def partner(self, i: int) -> int:
        for a, b in self.pairs:
            if i == a:
                return b
            if i == b:
                return a
        raise KeyError(i)


def matchings_of(quad: Sequence[int]) -> list[Pairing]:
    """The three perfect matchings of four indices, in the given order:
    keep (1,2)(3,4), cross (1,3)(2,4), swap (1,4)(2,3); each in normalized form."""
    a, b, c, d = quad
    return [normalize_pairing(m) for m in (((a, b), (c, d)), ((a, c), (b, d)), ((a, d), (b, c)))]


def normalize_pairing(pairing) -> Pairing:
    p = sorted(_pair(*x) for x in pairing)
    return (p[0], p[1])


@dataclass(frozen=True)
class TransitionPlan:
    quad: tuple[int, int, int, int]
    new_pairing: Pairing

    def __post_init__(self):
        quad = tuple(int(i) for i in self.quad)
        if len(set(quad)) != 4:
            raise CoordinationError(f"quad indices must be distinct: {quad}")
        pairing = normalize_pairing(self.new_pairing)
        if sorted(i for p in pairing for i in p) != sorted(quad):
            raise CoordinationError(f"pairing {pairing} does not cover quad {quad}")
        object.__setattr__(self, "quad", quad)
        object.__setattr__(self, "new_pairing", pairing)


def pad_virtual(n_requested: int) -> tuple[int, tuple[bool, ...]]:
    if n_requested < 2:
        raise CoordinationError("need at least 2 characters")
    n_padded = 4 * math.ceil(n_requested / 4)
    return n_padded, tuple(i >= n_requested for i in range(n_padded))


def _greedy_match(points: np.ndarray) -> list[Pair]:
    n = len(points)
    cand = []
    for i in range(n):
        for j in range(i + 1, n):
            d = float(np.linalg.norm(points[i] - points[j]))
            cand.append((round(d, 9), i, j))
    cand.sort()
    used, out = set(), []
    for _, i, j in cand:
        if i not in used and j not in used:
            used.update((i, j))
            out.append((i, j))
    return out


def initial_grouping(hips: np.ndarray) -> GroupAssignment:
    """Greedily pair the closest unpaired characters (ties: lowest indices)."""
    hips = np.asarray(hips, dtype=float)
    if len(hips) % 2:
        raise CoordinationError("need an even number of characters")
    return GroupAssignment(tuple(_greedy_match(hips)))


def form_quads(assignment: GroupAssignment, hips: np.ndarray) -> list[tuple[Pair, Pair]]:
    """Greedily join the two pairs with the closest hip centroids (ties: lowest pair index)."""
    if len(assignment.pairs) % 2:
        raise CoordinationError("odd number of pairs; pad with virtual characters first")
    hips = np.asarray(hips, dtype=float)
    centroids = np.array([(hips[a] + hips[b]) / 2 for a, b in assignment.pairs])
    return [(assignment.pairs[i], assignment.pairs[j]) for i, j in _greedy_match(centroids)]


def quad_members(quad_pairs: tuple[Pair, Pair]) -> tuple[int, int, int, int]:
    return tuple(sorted(quad_pairs[0] + quad_pairs[1]))


def apply_plan(assignment: GroupAssignment, plans: Sequence[TransitionPlan]) -> GroupAssignment:
    seen: set[int] = set()
    for plan in plans:
        if seen & set(plan.quad):
            raise CoordinationError(f"plans overlap on characters {sorted(seen & set(plan.quad))}")
        seen |= set(plan.quad)
    pairs = list(assignment.pairs)
    for plan in plans:
        q = set(plan.quad)
        inside = [p for p in pairs if set(p) <= q]
        straddling = [p for p in pairs if (set(p) & q) and not set(p) <= q]
        if straddling:
            raise CoordinationError(f"quad {plan.quad} splits existing pairs {straddling}")
        pairs = [p for p in pairs if p not in inside] + list(plan.new_pairing)
    return GroupAssignment(tuple(pairs))


# ---------------------------------------------------------------------------
# synthesis


@dataclass(frozen=True)
class SceneConfig:
    n_characters: int = 4
    T: int = 4
    seed: int = 0
    constraints: ConstraintSet = ConstraintSet()
    spacing: Optional[float] = None
    eta: float = 4.0
    k_overlap: int = 4
    guidance: bool = True
    partner_distance: float = 0.8

    def __post_init__(self):
        if self.n_characters < 2:
            raise CoordinationError("n_characters must be >= 2")
        if self.T < 1:
            raise CoordinationError("T must be >= 1")

    @property
    def grid_spacing(self) -> float:
        if self.spacing is not None:
            return self.spacing
        # pair centers; the clearance between neighbouring pairs is the first term
        return max(1.0, 2.0 * math.sqrt(self.constraints.tau)) + self.partner_distance


def _sub_seed(seed: int, *keys: int) -> int:
    return int(np.random.SeedSequence([int(seed), *map(int, keys)]).generate_state(1)[0])


def initial_positions(n_padded: int, spacing: float, partner_distance: float) -> np.ndarray:
    """Hip spawn points: consecutive index pairs centered on a square grid."""
    n_pairs = n_padded // 2
    cols = math.ceil(math.sqrt(n_pairs))
    pos = np.zeros((n_padded, 3))
    for k in range(n_pairs):
        r, c = divmod(k, cols)
        center = np.array([c * spacing, 0.0, r * spacing])
        pos[2 * k] = center + [-partner_distance / 2, 0, 0]
        pos[2 * k + 1] = center + [partner_distance / 2, 0, 0]
    return pos


def synthesize_step(prev: Optional[ClipSet], assignment: GroupAssignment, generator: Denoiser,
                    constraints: ConstraintSet, seed: int, *, spawn: Optional[np.ndarray] = None,
                    eta: float = 4.0, k_overlap: int = 4, guidance: bool = True,
                    virtual_flags: Sequence[bool] = (),
                    on_guidance: Optional[Callable[[Pair, list], None]] = None) -> ClipSet:
    """Generate the next clip of every group, lowest-index group first.

    Each group is inpainted from the last ``k_overlap`` frames of ``prev`` and
    guided away from the groups generated before it. With ``prev=None`` the
    groups are sampled unconditionally around the midpoint of their ``spawn``
    hips.
    """
    _, w, J, C = generator.clip_shape
    N = assignment.N
    fps = generator.fps
    if prev is not None and (prev.N != N or prev.w != w):
        raise CoordinationError(f"previous clip set has shape {prev.data.shape}, expected N={N}, w={w}")
    if prev is None and spawn is None:
        raise CoordinationError("first step needs spawn positions")
    out = np.zeros((N, w, J, C))
    others: list[np.ndarray] = []
    for g, (i, j) in enumerate(sorted(assignment.pairs)):
        mask = np.zeros(generator.clip_shape)
        if prev is None:
            observed = None
            offset = np.zeros(3)
            mid = (spawn[i] + spawn[j]) / 2
            offset[[0, 2]] = mid[[0, 2]]
            history = None
        else:
            world_obs = np.zeros(generator.clip_shape)
            world_obs[:, :k_overlap] = prev.data[[i, j], w - k_overlap:]
            observed, offset = canonicalize_pair(world_obs)
            observed[:, k_overlap:] = 0.0
            mask[:, :k_overlap] = 1.0
            history = prev.data[[i, j], : w - k_overlap]

        callback = None
        if guidance:
            snapshot = list(others)
            if on_guidance is not None:
                on_guidance((i, j), snapshot)

            def callback(local, snapshot=snapshot, offset=offset, history=history):
                return total_guidance(translate_clip(local, offset), snapshot, history, constraints)

        try:
            local = sample(generator, observed, mask, callback, seed=_sub_seed(seed, g), eta=eta)
        except Exception as exc:
            raise CoordinationError(f"group {(i, j)} failed: {exc}") from exc
        clip = translate_clip(local, offset)
        out[[i, j]] = clip
        others.append(clip)
    return ClipSet(out, fps, tuple(virtual_flags) or (False,) * N)


def static_clip(position: np.ndarray, like: np.ndarray) -> np.ndarray:
    """A motionless copy of ``like`` (w, J, 10) whose hip stands at ``position`` (x, z used)."""
    out = like.copy()
    frame = out[-1].copy()
    delta = np.zeros(3)
    delta[[0, 2]] = np.asarray(position, float)[[0, 2]] - frame[HIP, POS][[0, 2]]
    frame[:, POS] += delta
    frame[:, VEL] = 0.0
    out[:] = frame
    return out


PolicyFn = Callable[["SceneState", tuple[Pair, Pair], np.random.Generator], Pairing]
PolicyLike = Union[str, PolicyFn, object]


def static_policy(state, quad_pairs, rng) -> Pairing:
    return normalize_pairing(quad_pairs)


def random_policy(state, quad_pairs, rng) -> Pairing:
    options = matchings_of(quad_members(quad_pairs))
    return options[int(rng.integers(3))]


def resolve_policy(policy: PolicyLike) -> PolicyFn:
    if policy == "static":
        return static_policy
    if policy == "random":
        return random_policy
    if hasattr(policy, "plan"):
        return policy.plan
    if callable(policy):
        return policy
    raise CoordinationError(f"unknown policy {policy!r}")


@dataclass
class SceneState:
    """Mutable run state owned by a single scene loop."""

    config: SceneConfig
    steps: list[ClipSet] = field(default_factory=list)
    step_flags: list[tuple[bool, ...]] = field(default_factory=list)
    assignment: Optional[GroupAssignment] = None
    flags: tuple[bool, ...] = ()
    plans: list[dict] = field(default_factory=list)
    events: list[dict] = field(default_factory=list)
    t: int = 0

    @property
    def N(self) -> int:
        return len(self.flags)

    @property
    def last(self) -> ClipSet:
        return self.steps[-1]

    def hips(self, frame: int = -1) -> np.ndarray:
        return self.last.data[:, frame, HIP, POS]

    def timeline(self) -> SceneTimeline:
        steps = [ClipSet(s.data, s.fps, f) for s, f in zip(self.steps, self.step_flags)]
        return SceneTimeline(steps, seed=self.config.seed, overlap=self.config.k_overlap,
                             meta={"step_flags": [list(f) for f in self.step_flags]})


def start_scene(config: SceneConfig, generator: Denoiser) -> SceneState:
    n_padded, flags = pad_virtual(config.n_characters)
    spawn = initial_positions(n_padded, config.grid_spacing, config.partner_distance)
    state = SceneState(config, flags=flags)
    state.assignment = initial_grouping(spawn)
    first = synthesize_step(None, state.assignment, generator, config.constraints, _sub_seed(config.seed, 0),
                            spawn=spawn, eta=config.eta, k_overlap=config.k_overlap,
                            guidance=config.guidance, virtual_flags=flags)
    state.steps.append(first)
    state.step_flags.append(flags)
    state.t = 1
    return state


def plan_step(state: SceneState, policy: PolicyLike, rng: np.random.Generator) -> list[TransitionPlan]:
    choose = resolve_policy(policy)
    plans = []
    for quad_pairs in form_quads(state.assignment, state.hips()):
        pairing = normalize_pairing(choose(state, quad_pairs, rng))
        plans.append(TransitionPlan(quad_members(quad_pairs), pairing))
    return plans


def advance(state: SceneState, generator: Denoiser, plans: Sequence[TransitionPlan]) -> ClipSet:
    """Apply ``plans`` and synthesize the next step in place."""
    cfg = state.config
    before = state.assignment
    state.assignment = apply_plan(state.assignment, plans)
    for plan in plans:
        previous = [list(p) for p in before.pairs if set(p) <= set(plan.quad)]
        state.plans.append({"step": state.t + 1, "quad": list(plan.quad), "previous": previous,
                            "pairing": [list(p) for p in plan.new_pairing]})
    nxt = synthesize_step(state.last, state.assignment, generator, cfg.constraints, _sub_seed(cfg.seed, state.t),
                          eta=cfg.eta, k_overlap=cfg.k_overlap, guidance=cfg.guidance, virtual_flags=state.flags)
    state.steps.append(nxt)
    state.step_flags.append(state.flags)
    state.t += 1
    return nxt


def run_scene(config: SceneConfig, generator: Denoiser, policy: PolicyLike = "static",
              events: Sequence[tuple[int, float, float]] = ()) -> tuple[SceneTimeline, list[dict]]:
    """Synthesize ``config.T`` steps. ``events`` are (step, x, z) add-character requests
    applied once ``step`` steps exist."""
    rng = np.random.default_rng(_sub_seed(config.seed, 1_000_003))
    state = start_scene(config, generator)
    pending = sorted(events)
    while state.t < config.T:
        while pending and pending[0][0] <= state.t:
            t_ev, x, z = pending.pop(0)
            add_character(state, np.array([x, 0.0, z]), seed=_sub_seed(config.seed, 7, t_ev))
        plans = plan_step(state, policy, rng)
        advance(state, generator, plans)
    return state.timeline(), state.plans


def add_character(state: SceneState, spawn_position: np.ndarray, seed: int = 0) -> SceneState:
    """Insert a real character standing at ``spawn_position`` (x, z) before the next step.

    A free virtual slot is reused when one exists; otherwise four slots (the
    newcomer plus three virtual characters) are appended and earlier steps are
    back-filled with flagged placeholders.
    """
    cfg = state.config
    spawn = np.asarray(spawn_position, dtype=float)
    radius = math.sqrt(cfg.constraints.tau)
    hips = state.hips()
    real = [i for i, v in enumerate(state.flags) if not v]
    for i in real:
        if np.linalg.norm((hips[i] - spawn)[[0, 2]]) < radius:
            raise SpawnError(f"spawn too close: ({spawn[0]:g}, {spawn[2]:g}) within {radius:g} m of character {i}")
    virtual = [i for i, v in enumerate(state.flags) if v]
    last = state.last.data.copy()
    if virtual:
        slot = virtual[0]
        last[slot] = static_clip(spawn, last[slot])
        state.steps[-1] = ClipSet(last, state.last.fps, state.steps[-1].virtual_flags)
        flags = list(state.flags)
        flags[slot] = False
        state.flags = tuple(flags)
    else:
        N = state.N
        slot = N
        spacing = cfg.grid_spacing
        offsets = [np.zeros(3), np.array([0.0, 0.0, cfg.partner_distance]),
                   np.array([spacing * 50, 0.0, 0.0]), np.array([spacing * 50, 0.0, cfg.partner_distance])]
        template = last[0]
        extra = np.stack([static_clip(spawn + off, template) for off in offsets])
        state.steps = [ClipSet(np.concatenate([s.data, extra], axis=0), s.fps) for s in state.steps]
        state.step_flags = [tuple(f) + (True,) * 4 for f in state.step_flags]
        state.flags = tuple(state.flags) + (False, True, True, True)
        pairs = list(state.assignment.pairs) + [(N, N + 1), (N + 2, N + 3)]
        state.assignment = GroupAssignment(tuple(pairs))
    state.events.append({"step": state.t, "character": slot, "spawn": [float(spawn[0]), float(spawn[2])]})
    log.info("added character %d at step %d", slot, state.t)
    return state
