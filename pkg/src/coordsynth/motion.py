"""Motion containers, finite-difference kinematics and scene metrics.

Every clip tensor uses the channel layout ``[pos(3), rot(4), vel(3)]`` per
joint, with rotations stored as unit quaternions ``(w, x, y, z)``, positions
in meters, velocities in meters/second and the y axis pointing up. Joint 0 is
the hip.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

POS = slice(0, 3)
ROT = slice(3, 7)
VEL = slice(7, 10)
CHANNELS = 10
HIP = 0

JOINT_NAMES = ("hip", "chest", "head", "left_hand", "right_hand", "left_foot", "right_foot", "neck")

SCENE_FORMAT = "coordsynth-scene/1"


class MotionError(ValueError):
    pass


@dataclass(frozen=True)
class Pose:
    positions: np.ndarray  # (J, 3)
    rotations: np.ndarray  # (J, 4)
    velocities: np.ndarray  # (J, 3)

    def __post_init__(self):
        for name in ("positions", "rotations", "velocities"):
            if not np.all(np.isfinite(getattr(self, name))):
                raise MotionError(f"non-finite {name}")
        norms = np.linalg.norm(self.rotations, axis=-1)
        if np.any(np.abs(norms - 1.0) > 1e-6):
            raise MotionError("rotations must be unit quaternions")

    @property
    def hip(self) -> np.ndarray:
        return self.positions[HIP]


@dataclass(frozen=True)
class MotionClip:
    """One character's clip, ``data`` of shape (w, J, 10)."""

    data: np.ndarray
    fps: int

    def __post_init__(self):
        if self.data.ndim != 3 or self.data.shape[-1] != CHANNELS:
            raise MotionError(f"clip data must be (w, J, {CHANNELS}), got {self.data.shape}")
        if self.fps <= 0:
            raise MotionError("fps must be positive")

    @property
    def w(self) -> int:
        return self.data.shape[0]

    @property
    def frames(self) -> list[Pose]:
        return [Pose(f[:, POS], f[:, ROT], f[:, VEL]) for f in self.data]

    @property
    def positions(self) -> np.ndarray:
        return self.data[..., POS]


@dataclass(frozen=True)
class ClipSet:
    """Clips of all characters for one autoregressive step, ``data`` of shape (N, w, J, 10)."""

    data: np.ndarray
    fps: int
    virtual_flags: tuple[bool, ...] = ()

    def __post_init__(self):
        if self.data.ndim != 4 or self.data.shape[-1] != CHANNELS:
            raise MotionError(f"clip set data must be (N, w, J, {CHANNELS}), got {self.data.shape}")
        if self.data.shape[0] < 2:
            raise MotionError("a clip set needs at least 2 characters")
        if not self.virtual_flags:
            object.__setattr__(self, "virtual_flags", (False,) * self.data.shape[0])
        if len(self.virtual_flags) != self.data.shape[0]:
            raise MotionError("virtual_flags length must equal N")

    @property
    def N(self) -> int:
        return self.data.shape[0]

    @property
    def w(self) -> int:
        return self.data.shape[1]

    @property
    def J(self) -> int:
        return self.data.shape[2]

    def clip(self, n: int) -> MotionClip:
        return MotionClip(self.data[n], self.fps)

    @property
    def clips(self) -> list[MotionClip]:
        return [self.clip(n) for n in range(self.N)]


@dataclass(frozen=True)
class SceneTimeline:
    """T clip sets. ``overlap`` leading frames of every step after the first
    repeat the tail of the previous step (inpainting seam) and are dropped
    when the timeline is flattened to a continuous motion."""

    steps: tuple[ClipSet, ...]
    seed: int = 0
    overlap: int = 0
    meta: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        object.__setattr__(self, "steps", tuple(self.steps))
        if not self.steps:
            raise MotionError("timeline needs at least one step")
        first = self.steps[0]
        for s in self.steps[1:]:
            if s.data.shape != first.data.shape or s.fps != first.fps:
                raise MotionError("all steps must share N, w, J and fps")
        if not 0 <= self.overlap < first.w:
            raise MotionError("overlap must be in [0, w)")

    @property
    def T(self) -> int:
        return len(self.steps)

    @property
    def N(self) -> int:
        return self.steps[0].N

    @property
    def w(self) -> int:
        return self.steps[0].w

    @property
    def J(self) -> int:
        return self.steps[0].J

    @property
    def fps(self) -> int:
        return self.steps[0].fps

    @property
    def virtual_flags(self) -> tuple[bool, ...]:
        return self.steps[-1].virtual_flags

    def continuous(self) -> np.ndarray:
        """(N, F, J, 10) motion with seam duplicates removed."""
        parts = [self.steps[0].data] + [s.data[:, self.overlap:] for s in self.steps[1:]]
        return np.concatenate(parts, axis=1)

    def real_mask(self) -> np.ndarray:
        """(N, F) booleans aligned with ``continuous()``: character is real (not virtual) at that frame."""
        parts = []
        for t, s in enumerate(self.steps):
            n_frames = s.w if t == 0 else s.w - self.overlap
            parts.append(np.repeat(~np.array(s.virtual_flags, dtype=bool)[:, None], n_frames, axis=1))
        return np.concatenate(parts, axis=1)

    def seam_indices(self) -> list[int]:
        """Frame index (in ``continuous()``) of the first new frame of each step after the first."""
        stride = self.w - self.overlap
        return [self.w + (t - 1) * stride for t in range(1, self.T)]


def _as_positions(frames) -> np.ndarray:
    if isinstance(frames, np.ndarray):
        return frames
    return np.stack([p.positions for p in frames])


def acceleration(frames: Sequence[Pose] | np.ndarray, fps: float) -> np.ndarray:
    """Central second difference of positions along axis 0, scaled by fps**2.

    Accepts a list of poses or a position array whose first axis is time.
    The result has two fewer frames than the input.
    """
    pos = _as_positions(frames)
    if pos.shape[0] < 3:
        raise MotionError("insufficient frames")
    return (pos[2:] - 2.0 * pos[1:-1] + pos[:-2]) * float(fps) ** 2


def peak_jerk(timeline: SceneTimeline, boundary_window: int = 10) -> float:
    """Maximum jerk norm around clip seams (transition smoothness, TS)."""
    if timeline.T < 2:
        raise MotionError("no transitions")
    if boundary_window < 2:
        raise MotionError("boundary_window must be >= 2")
    pos = timeline.continuous()[..., POS]
    real = timeline.real_mask()
    half = boundary_window // 2
    F = pos.shape[1]
    fps = float(timeline.fps)
    peak = 0.0
    for s in timeline.seam_indices():
        lo, hi = max(0, s - half), min(F, s + half)
        chars = np.flatnonzero(real[:, lo:hi].all(axis=1))
        if hi - lo < 4 or len(chars) == 0:
            continue
        acc = acceleration(np.moveaxis(pos[chars, lo:hi], 1, 0), fps)
        jerk = fps * (acc[1:] - acc[:-1])
        peak = max(peak, float(np.linalg.norm(jerk, axis=-1).max()))
    return peak


def _pairwise_sq(h: np.ndarray) -> np.ndarray:
    """h: (N, F, 3) -> squared distances of unordered pairs, (P, F)."""
    i, j = np.triu_indices(h.shape[0], k=1)
    return np.sum((h[i] - h[j]) ** 2, axis=-1)


def _real_pair_sq(timeline: SceneTimeline) -> tuple[np.ndarray, np.ndarray]:
    """Squared hip distances of all unordered pairs (P, F) and which are between real characters."""
    hips = timeline.continuous()[:, :, HIP, POS]
    real = timeline.real_mask()
    i, j = np.triu_indices(hips.shape[0], k=1)
    return _pairwise_sq(hips), real[i] & real[j]


def hip_distance(timeline: SceneTimeline) -> float:
    """Mean squared pairwise hip distance over real characters and frames (HD).

    With a fixed set of n real characters over F frames this is
    ``2 / (n (n-1) F) * sum_f sum_{i<j} |h_i - h_j|^2``; when characters join
    mid-scene each frame averages over the pairs present in it.
    """
    d2, valid = _real_pair_sq(timeline)
    counts = valid.sum(axis=0)
    if counts.max(initial=0) < 1:
        raise MotionError("hip distance needs at least 2 real characters")
    per_frame = np.where(valid, d2, 0.0).sum(axis=0)
    present = counts > 0
    return float(np.mean(per_frame[present] / counts[present]))


def min_pairwise_hip_distance(timeline: SceneTimeline) -> float:
    d2, valid = _real_pair_sq(timeline)
    if not valid.any():
        return float("inf")
    return float(np.sqrt(d2[valid].min()))


def close_frame_fraction(timeline: SceneTimeline, radius: float) -> float:
    """Fraction of frames in which any two real hips are closer than ``radius``."""
    d2, valid = _real_pair_sq(timeline)
    return float(np.mean(np.any(valid & (d2 < radius**2), axis=0)))


def stitch(prev: ClipSet, next: ClipSet) -> float:
    """Largest position gap between the last frame of ``prev`` and the first of ``next``."""
    if prev.N != next.N or prev.J != next.J:
        raise MotionError(f"shape mismatch: {prev.data.shape} vs {next.data.shape}")
    gap = next.data[:, 0, :, POS] - prev.data[:, -1, :, POS]
    return float(np.linalg.norm(gap, axis=-1).max())


# ---------------------------------------------------------------------------
# quaternions (w, x, y, z)

def quat_yaw(angle) -> np.ndarray:
    """Rotation about +y by ``angle`` radians."""
    angle = np.asarray(angle, dtype=float)
    out = np.zeros(angle.shape + (4,))
    out[..., 0] = np.cos(angle / 2)
    out[..., 2] = np.sin(angle / 2)
    return out


def quat_axis_angle(axis: Sequence[float], angle) -> np.ndarray:
    axis = np.asarray(axis, dtype=float)
    axis = axis / np.linalg.norm(axis)
    angle = np.asarray(angle, dtype=float)
    out = np.zeros(angle.shape + (4,))
    out[..., 0] = np.cos(angle / 2)
    out[..., 1:] = np.sin(angle / 2)[..., None] * axis
    return out


def quat_normalize(q: np.ndarray) -> np.ndarray:
    norm = np.linalg.norm(q, axis=-1, keepdims=True)
    identity = np.zeros_like(q)
    identity[..., 0] = 1.0
    safe = np.where(norm > 1e-12, norm, 1.0)
    return np.where(norm > 1e-12, q / safe, identity)


# ---------------------------------------------------------------------------
# scene files

def timeline_to_dict(timeline: SceneTimeline, config: dict | None = None) -> dict:
    header = {
        "format": SCENE_FORMAT,
        "N": timeline.N,
        "T": timeline.T,
        "w": timeline.w,
        "J": timeline.J,
        "fps": timeline.fps,
        "seed": int(timeline.seed),
        "overlap": timeline.overlap,
        "virtual_flags": [bool(v) for v in timeline.virtual_flags],
        "step_virtual_flags": [[bool(v) for v in s.virtual_flags] for s in timeline.steps],
        "joints": list(JOINT_NAMES[: timeline.J]) if timeline.J <= len(JOINT_NAMES) else None,
        "units": {"pos": "m", "rot": "quaternion wxyz, local", "vel": "m/s"},
        "config": config or {},
    }
    frames = []
    for step in timeline.steps:
        for f in range(timeline.w):
            frames.append([
                [
                    {
                        "pos": step.data[n, f, j, POS].tolist(),
                        "rot": step.data[n, f, j, ROT].tolist(),
                        "vel": step.data[n, f, j, VEL].tolist(),
                    }
                    for j in range(timeline.J)
                ]
                for n in range(timeline.N)
            ])
    return {"header": header, "frames": frames}


SCENE_SCHEMA = {
    "type": "object",
    "required": ["header", "frames"],
    "properties": {
        "header": {
            "type": "object",
            "required": ["format", "N", "T", "w", "J", "fps", "seed", "overlap", "virtual_flags"],
            "properties": {
                "format": {"const": SCENE_FORMAT},
                "N": {"type": "integer", "minimum": 2},
                "T": {"type": "integer", "minimum": 1},
                "w": {"type": "integer", "minimum": 1},
                "J": {"type": "integer", "minimum": 1},
                "fps": {"type": "integer", "minimum": 1},
                "seed": {"type": "integer"},
                "overlap": {"type": "integer", "minimum": 0},
                "virtual_flags": {"type": "array", "items": {"type": "boolean"}},
            },
        },
        "frames": {
            "type": "array",
            "items": {
                "type": "array",
                "items": {
                    "type": "array",
                    "items": {
                        "type": "object",
                        "required": ["pos", "rot", "vel"],
                        "properties": {
                            "pos": {"type": "array", "items": {"type": "number"}, "minItems": 3, "maxItems": 3},
                            "rot": {"type": "array", "items": {"type": "number"}, "minItems": 4, "maxItems": 4},
                            "vel": {"type": "array", "items": {"type": "number"}, "minItems": 3, "maxItems": 3},
                        },
                    },
                },
            },
        },
    },
}


def validate_scene_dict(doc: dict) -> None:
    """Raise MotionError unless ``doc`` is a well-formed scene document."""
    import jsonschema

    try:
        jsonschema.validate(doc, SCENE_SCHEMA)
    except jsonschema.ValidationError as exc:
        raise MotionError(f"invalid scene: {exc.message}") from exc
    h = doc["header"]
    if len(doc["frames"]) != h["T"] * h["w"]:
        raise MotionError("frame count does not match T*w")
    if len(h["virtual_flags"]) != h["N"]:
        raise MotionError("virtual_flags length does not match N")
    for frame in doc["frames"]:
        if len(frame) != h["N"] or any(len(c) != h["J"] for c in frame):
            raise MotionError("frame shape does not match N, J")


def timeline_from_dict(doc: dict) -> SceneTimeline:
    validate_scene_dict(doc)
    h = doc["header"]
    arr = np.array(
        [[[j["pos"] + j["rot"] + j["vel"] for j in c] for c in frame] for frame in doc["frames"]],
        dtype=float,
    )  # (T*w, N, J, 10)
    if not np.all(np.isfinite(arr)):
        raise MotionError("invalid scene: non-finite values")
    arr = arr.reshape(h["T"], h["w"], h["N"], h["J"], CHANNELS).transpose(0, 2, 1, 3, 4)
    step_flags = h.get("step_virtual_flags") or [h["virtual_flags"]] * h["T"]
    if len(step_flags) != h["T"] or any(len(f) != h["N"] for f in step_flags):
        raise MotionError("invalid scene: step_virtual_flags shape does not match T, N")
    steps = [ClipSet(np.ascontiguousarray(a), h["fps"], tuple(f)) for a, f in zip(arr, step_flags)]
    return SceneTimeline(steps, seed=h["seed"], overlap=h["overlap"], meta={"config": h.get("config", {})})


def save_scene(path: str | Path, timeline: SceneTimeline, config: dict | None = None) -> None:
    doc = timeline_to_dict(timeline, config)
    Path(path).write_text(json.dumps(doc, separators=(",", ":")))


def load_scene(path: str | Path) -> SceneTimeline:
    try:
        doc = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise MotionError(f"invalid scene: {exc}") from exc
    return timeline_from_dict(doc)
