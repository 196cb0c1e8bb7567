"""Constraint functions steering the sampler, with exact gradients in world units.

All clips are (n_chars, w, J, 10) arrays; gradients have the same shape and
are non-zero only on position channels.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .motion import HIP, POS


@dataclass(frozen=True)
class ConstraintSet:
    tau: float = 0.25
    lambda_smooth: float = 0.01
    w_dist: float = 1.0

    def __post_init__(self):
        if self.tau <= 0:
            raise ValueError("tau must be positive")
        if self.lambda_smooth < 0 or self.w_dist < 0:
            raise ValueError("weights must be non-negative")


def group_distance(candidate: np.ndarray, others: Sequence[np.ndarray], tau: float) -> tuple[float, np.ndarray]:
    """Clamped personal-space term between the candidate pair and generated groups.

    For each other group and frame, every candidate hip is compared with the
    nearest hip of that group: ``min(d^2 - tau, 0)``. The value averages over
    frames and candidate characters, then over groups; it is <= 0 and zero
    iff every such distance is at least sqrt(tau).
    """
    grad = np.zeros_like(candidate, dtype=float)
    if not others:
        return 0.0, grad
    p = candidate[:, :, HIP, POS]  # (C, w, 3)
    C, w = p.shape[:2]
    scale = 1.0 / (len(others) * C * w)
    value = 0.0
    for group in others:
        q = group[:, :, HIP, POS]  # (K, w, 3)
        diff = p[:, None] - q[None]  # (C, K, w, 3)
        d2 = np.sum(diff**2, axis=-1)
        k = np.argmin(d2, axis=1)  # nearest hip per (c, f)
        near = np.take_along_axis(d2, k[:, None], axis=1)[:, 0]
        active = near < tau
        value += scale * np.sum(np.where(active, near - tau, 0.0))
        ndiff = np.take_along_axis(diff, k[:, None, :, None], axis=1)[:, 0]  # (C, w, 3)
        grad[:, :, HIP, POS] += scale * 2.0 * ndiff * active[..., None]
    return float(value), grad


def smoothness_cost(candidate: np.ndarray, observed: np.ndarray) -> tuple[float, np.ndarray]:
    """Sum of squared second differences (m/frame^2) over the last three observed
    frames followed by the candidate frames, all joints and characters."""
    if candidate.shape[0] != observed.shape[0] or candidate.shape[2:] != observed.shape[2:]:
        raise ValueError(f"shape mismatch: {candidate.shape} vs {observed.shape}")
    head = observed[:, -3:, :, POS]
    x = np.concatenate([head, candidate[..., POS]], axis=1)
    acc = x[:, 2:] - 2.0 * x[:, 1:-1] + x[:, :-2]
    value = float(np.sum(acc**2))
    gx = np.zeros_like(x)
    gx[:, 2:] += 2.0 * acc
    gx[:, 1:-1] -= 4.0 * acc
    gx[:, :-2] += 2.0 * acc
    grad = np.zeros_like(candidate, dtype=float)
    grad[..., POS] = gx[:, head.shape[1]:]
    return value, grad


def total_guidance(candidate: np.ndarray, others: Sequence[np.ndarray], observed: np.ndarray | None,
                   constraints: ConstraintSet) -> tuple[float, np.ndarray]:
    """Ascent objective ``w_dist * distance - lambda * smoothness`` and its gradient."""
    value, grad = 0.0, np.zeros_like(candidate, dtype=float)
    if constraints.w_dist:
        v, g = group_distance(candidate, others, constraints.tau)
        value += constraints.w_dist * v
        grad += constraints.w_dist * g
    if constraints.lambda_smooth and observed is not None:
        v, g = smoothness_cost(candidate, observed)
        value -= constraints.lambda_smooth * v
        grad -= constraints.lambda_smooth * g
    return value, grad
