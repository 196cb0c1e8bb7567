"""Procedural two-character interaction corpus.

A pair orbits a slowly drifting shared center at a partner distance that
wanders around the style mean; limbs swing with a phase shared by both
partners and every character faces its partner.
"""
from __future__ import annotations

import json
import logging
import math
import warnings
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from .motion import HIP, POS, ROT, VEL, CHANNELS, ClipSet, SceneTimeline, quat_axis_angle, quat_yaw

log = logging.getLogger(__name__)

CORPUS_FORMAT = "coordsynth-corpus/1"
HIP_HEIGHT = 0.9
MIN_STD = 1e-8

# local offsets from the hip (x right, y up, z forward), indexed like JOINT_NAMES
_REST = np.array([
    [0.0, 0.0, 0.0],     # hip
    [0.0, 0.30, 0.0],    # chest
    [0.0, 0.68, 0.0],    # head
    [0.20, 0.25, 0.12],  # left hand
    [-0.20, 0.25, 0.12], # right hand
    [0.10, -0.85, 0.0],  # left foot
    [-0.10, -0.85, 0.0], # right foot
    [0.0, 0.50, 0.0],    # neck
])
# per-joint swing: (sign, scale) of the shared limb phase; 0 = rigid
_SWING = np.array([0.0, 0.0, 0.0, 1.0, -1.0, -0.5, 0.5, 0.0])


@dataclass(frozen=True)
class StyleParams:
    name: str
    partner_distance_mean: float
    partner_distance_jitter: float
    orbit_speed_range: tuple[float, float]
    limb_amplitude: float
    beat_hz: float = 1.0
    fps: int = 20
    w: int = 16
    J: int = 8

    def __post_init__(self):
        if self.partner_distance_mean <= 0:
            raise ValueError("partner_distance_mean must be positive")
        if self.w < 8:
            raise ValueError("w must be >= 8")
        if self.J < 2:
            raise ValueError("J must be >= 2")
        if self.partner_distance_jitter < 0 or self.limb_amplitude < 0:
            raise ValueError("jitter and limb amplitude must be non-negative")


STYLES = {
    "dance": StyleParams("dance", 0.8, 0.1, (0.3, 0.9), 0.12, beat_hz=0.8),
    "boxing": StyleParams("boxing", 1.4, 0.12, (0.15, 0.5), 0.18, beat_hz=1.2),
}


def get_style(name: str, **overrides) -> StyleParams:
    try:
        base = STYLES[name]
    except KeyError:
        raise ValueError(f"unknown style {name!r}; choose from {sorted(STYLES)}") from None
    return StyleParams(**{**asdict(base), **overrides}) if overrides else base


@dataclass(frozen=True)
class PairEpisode:
    timeline: SceneTimeline
    style: StyleParams
    seed: int


def _smooth_noise(rng: np.random.Generator, t: np.ndarray, n_terms: int = 3,
                  freq: tuple[float, float] = (0.15, 0.8)) -> np.ndarray:
    """Unit-variance stationary random signal made of a few slow sinusoids."""
    omegas = rng.uniform(*freq, size=n_terms)
    phases = rng.uniform(0, 2 * np.pi, size=n_terms)
    return math.sqrt(2.0 / n_terms) * np.sin(np.outer(t, omegas) + phases).sum(axis=1)


def _body(hips: np.ndarray, heading: np.ndarray, swing: np.ndarray, J: int,
          amplitude: float) -> np.ndarray:
    """Joint positions and rotations for one character.

    hips (F, 3), heading (F,), swing (F,) in [-1, 1] -> (F, J, 7)
    """
    F = hips.shape[0]
    rest = _REST[:J] if J <= len(_REST) else np.vstack([_REST, np.tile(_REST[-1], (J - len(_REST), 1))])
    gain = _SWING[:J] if J <= len(_SWING) else np.concatenate([_SWING, np.zeros(J - len(_SWING))])
    local = np.broadcast_to(rest, (F, J, 3)).copy()
    local[..., 2] += amplitude * gain[None, :] * swing[:, None]
    c, s = np.cos(heading)[:, None], np.sin(heading)[:, None]
    world = np.empty_like(local)
    world[..., 0] = c * local[..., 0] + s * local[..., 2]
    world[..., 1] = local[..., 1]
    world[..., 2] = -s * local[..., 0] + c * local[..., 2]
    world += hips[:, None, :]

    rot = np.zeros((F, J, 4))
    rot[..., 0] = 1.0
    rot[:, HIP] = quat_yaw(heading)
    swing_angle = (amplitude / 0.3) * gain[None, :] * swing[:, None]
    limbs = gain != 0
    rot[:, limbs] = quat_axis_angle((1.0, 0.0, 0.0), swing_angle[:, limbs])
    return np.concatenate([world, rot], axis=-1)


def generate_pair_episode(style: StyleParams, seed: int, T: int) -> PairEpisode:
    """Deterministic two-character episode of ``T`` clip steps (T*w frames)."""
    if T < 1:
        raise ValueError("T must be >= 1")
    rng = np.random.default_rng(seed)
    F = T * style.w
    t = np.arange(F + 1) / style.fps

    center = np.zeros((F + 1, 3))
    center[:, 0] = rng.uniform(-0.5, 0.5) + 0.3 * _smooth_noise(rng, t, freq=(0.05, 0.3))
    center[:, 2] = rng.uniform(-0.5, 0.5) + 0.3 * _smooth_noise(rng, t, freq=(0.05, 0.3))
    dist = style.partner_distance_mean + style.partner_distance_jitter * _smooth_noise(rng, t)
    dist = np.maximum(dist, 0.2)

    lo, hi = style.orbit_speed_range
    direction = rng.choice([-1.0, 1.0])
    nu = rng.uniform(0.2, 0.6)
    phi = rng.uniform(0, 2 * np.pi)
    mid, amp = 0.5 * (lo + hi), 0.5 * (hi - lo)
    theta = rng.uniform(0, 2 * np.pi) + direction * (mid * t - (amp / nu) * (np.cos(nu * t + phi) - np.cos(phi)))

    radial = np.stack([np.cos(theta), np.zeros_like(theta), np.sin(theta)], axis=1)
    beat = 2 * np.pi * style.beat_hz * t + rng.uniform(0, 2 * np.pi)
    bob = 0.02 * np.sin(2 * beat)

    data = np.empty((2, F + 1, style.J, CHANNELS))
    for n, sign in enumerate((1.0, -1.0)):
        hips = center + sign * 0.5 * dist[:, None] * radial
        hips[:, 1] = HIP_HEIGHT + bob
        to_partner = -sign * radial
        heading = np.arctan2(to_partner[:, 0], to_partner[:, 2])
        data[n, :, :, :7] = _body(hips, heading, np.sin(beat), style.J, style.limb_amplitude)
    data[..., VEL] = 0.0
    data[:, :-1, :, VEL] = style.fps * (data[:, 1:, :, POS] - data[:, :-1, :, POS])
    data = data[:, :F]

    steps = [ClipSet(np.ascontiguousarray(data[:, k * style.w:(k + 1) * style.w]), style.fps)
             for k in range(T)]
    return PairEpisode(SceneTimeline(steps, seed=seed), style, seed)


def episode_seed(seed: int, index: int) -> int:
    return int(np.random.SeedSequence([seed, index]).generate_state(1)[0])


def canonicalize_pair(clip: np.ndarray, frame: int = 0) -> tuple[np.ndarray, np.ndarray]:
    """Shift a (2, w, J, 10) clip so the pair's hip midpoint at ``frame`` sits
    at the ground-plane origin. Returns (shifted clip, offset that was removed)."""
    offset = np.zeros(3)
    mid = clip[:, frame, HIP, POS].mean(axis=0)
    offset[[0, 2]] = mid[[0, 2]]
    return translate_clip(clip, -offset), offset


def translate_clip(clip: np.ndarray, delta: np.ndarray) -> np.ndarray:
    out = clip.copy()
    out[..., POS] += delta
    return out


def n_slices(n_frames: int, w: int, stride: int) -> int:
    return 0 if n_frames < w else (n_frames - w) // stride + 1


@dataclass
class Corpus:
    """Two-character clips (n, 2, w, J, 10) in world units plus train-split statistics."""

    train: np.ndarray
    val: np.ndarray
    mean: np.ndarray  # (J, 10)
    std: np.ndarray   # (J, 10)
    fps: int
    meta: dict

    @property
    def clip_shape(self) -> tuple[int, ...]:
        return self.train.shape[1:]

    def normalize(self, x: np.ndarray) -> np.ndarray:
        return (x - self.mean) / self.std

    def denormalize(self, x: np.ndarray) -> np.ndarray:
        return x * self.std + self.mean

    def save(self, path: str | Path) -> None:
        header = json.dumps({"format": CORPUS_FORMAT, "fps": self.fps, **self.meta}, sort_keys=True)
        with open(path, "wb") as fh:
            np.savez(fh, header=np.array(header), train=self.train, val=self.val,
                     mean=self.mean, std=self.std)

    @classmethod
    def load(cls, path: str | Path) -> "Corpus":
        with np.load(path, allow_pickle=False) as z:
            header = json.loads(str(z["header"]))
            if header.get("format") != CORPUS_FORMAT:
                raise ValueError(f"{path}: not a corpus file (format {header.get('format')!r})")
            fps = header.pop("fps")
            header.pop("format")
            return cls(z["train"], z["val"], z["mean"], z["std"], fps, header)


def channel_stats(clips: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Per (joint, channel) mean/std pooled over clips, characters and frames."""
    flat = clips.reshape(-1, *clips.shape[-2:])
    mean = flat.mean(axis=0)
    std = flat.std(axis=0)
    low = std < MIN_STD
    if np.any(low):
        warnings.warn(f"{int(low.sum())} degenerate channel(s) with std < {MIN_STD}; clamped", RuntimeWarning)
        std = np.where(low, MIN_STD, std)
    return mean, std


def corpus_from_clips(clips: np.ndarray, fps: int, val_fraction: float = 0.1, meta: dict | None = None) -> Corpus:
    """Wrap an arbitrary clip array (e.g. toy data) as a corpus; the tail becomes validation."""
    n_val = max(1, int(round(len(clips) * val_fraction)))
    train, val = clips[:-n_val], clips[-n_val:]
    mean, std = channel_stats(train)
    return Corpus(train, val, mean, std, fps, dict(meta or {}))


def build_corpus(style: StyleParams, n_episodes: int, seed: int, T: int = 8, stride: int = 4,
                 val_fraction: float = 0.1) -> Corpus:
    """Slice seeded episodes into overlapping canonicalized w-frame pair clips.

    Splitting is by episode so no clip is shared between train and validation.
    """
    if n_episodes < 10:
        raise ValueError("n_episodes must be >= 10")
    n_val = max(1, int(math.ceil(n_episodes * val_fraction)))
    train, val = [], []
    for i in range(n_episodes):
        ep = generate_pair_episode(style, episode_seed(seed, i), T)
        motion = ep.timeline.continuous()
        for k in range(n_slices(motion.shape[1], style.w, stride)):
            clip, _ = canonicalize_pair(motion[:, k * stride:k * stride + style.w])
            (val if i >= n_episodes - n_val else train).append(clip)
    train, val = np.stack(train), np.stack(val)
    mean, std = channel_stats(train)
    meta = {"style": asdict(style), "n_episodes": n_episodes, "seed": seed, "T": T, "stride": stride,
            "n_train": len(train), "n_val": len(val)}
    log.info("corpus %s: %d train / %d val clips", style.name, len(train), len(val))
    return Corpus(train, val, mean, std, style.fps, meta)
