"""Two-character clip diffusion model with x-start prediction.

The sampler follows the inpainting + reconstruction-guidance loop: predict the
clean clip, overwrite the observed elements, nudge the prediction along the
guidance gradient, then re-noise through the forward-process posterior.
"""
from __future__ import annotations

import json
import logging
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable, Optional

import numpy as np

from .motion import POS, ROT, VEL, quat_normalize
from .nn import MLP, Adam, check_param_grads
from .synth_data import Corpus

log = logging.getLogger(__name__)

CHECKPOINT_MAGIC = "COORDSYNTH-GEN-v1"
EMBED_DIM = 32

Guidance = Callable[[np.ndarray], tuple[float, np.ndarray]]


class GeneratorError(RuntimeError):
    pass


@dataclass(frozen=True)
class NoiseSchedule:
    betas: np.ndarray

    def __post_init__(self):
        b = np.asarray(self.betas, dtype=float)
        if b.ndim != 1 or len(b) < 2:
            raise ValueError("schedule needs U >= 2 steps")
        if np.any(b <= 0) or np.any(b >= 1):
            raise ValueError("betas must lie in (0, 1)")
        object.__setattr__(self, "betas", b)

    @classmethod
    def linear(cls, U: int = 50, beta_start: float = 1e-4, beta_end: float = 0.02,
               reference_steps: int | None = 1000) -> "NoiseSchedule":
        """Linear betas. The endpoints are quoted for ``reference_steps`` steps and scaled by
        ``reference_steps / U`` so a short chain still ends near pure noise; pass
        ``reference_steps=None`` to use them verbatim."""
        scale = 1.0 if reference_steps is None else reference_steps / U
        return cls(np.linspace(beta_start * scale, min(beta_end * scale, 0.999), U))

    @property
    def U(self) -> int:
        return len(self.betas)

    @property
    def alphas(self) -> np.ndarray:
        return 1.0 - self.betas

    @property
    def alpha_bars(self) -> np.ndarray:
        """Cumulative products, index u-1 holds alpha_bar_u."""
        return np.cumprod(self.alphas)

    def alpha_bar(self, u: int) -> float:
        return 1.0 if u == 0 else float(self.alpha_bars[u - 1])

    def posterior_coefs(self, u: int) -> tuple[float, float]:
        """Coefficients of (x0, x_u) in the mean of q(x_{u-1} | x_u, x0)."""
        ab, ab_prev = self.alpha_bar(u), self.alpha_bar(u - 1)
        beta = float(self.betas[u - 1])
        return (math.sqrt(ab_prev) * beta / (1.0 - ab),
                math.sqrt(1.0 - beta) * (1.0 - ab_prev) / (1.0 - ab))


def forward_diffuse(schedule: NoiseSchedule, x0: np.ndarray, u: int, noise: np.ndarray) -> np.ndarray:
    if not 1 <= u <= schedule.U:
        raise ValueError(f"timestep {u} outside [1, {schedule.U}]")
    if np.shape(noise) != np.shape(x0):
        raise ValueError("noise shape must match x0")
    ab = schedule.alpha_bar(u)
    return math.sqrt(ab) * x0 + math.sqrt(1.0 - ab) * noise


def timestep_embedding(u, U: int, dim: int = EMBED_DIM) -> np.ndarray:
    u = np.atleast_1d(np.asarray(u, dtype=float))
    half = dim // 2
    freqs = np.exp(-math.log(1000.0) * np.arange(half) / half)
    ang = np.outer(u / U * 1000.0, freqs)
    return np.concatenate([np.sin(ang), np.cos(ang)], axis=1)


@dataclass
class Denoiser:
    """x-start predictor plus everything needed to map between world and normalized units."""

    net: MLP
    schedule: NoiseSchedule
    clip_shape: tuple[int, ...]
    mean: np.ndarray
    std: np.ndarray
    fps: int
    meta: dict = field(default_factory=dict)

    @classmethod
    def init(cls, clip_shape, schedule: NoiseSchedule, mean, std, fps: int, seed: int = 0,
             hidden: tuple[int, ...] = (256, 256, 256), meta: dict | None = None) -> "Denoiser":
        D = int(np.prod(clip_shape))
        net = MLP.init([D + EMBED_DIM, *hidden, D], seed, activation="silu", out_scale=0.1)
        return cls(net, schedule, tuple(clip_shape), np.asarray(mean, float), np.asarray(std, float), fps,
                   dict(meta or {}))

    @property
    def dim(self) -> int:
        return int(np.prod(self.clip_shape))

    def normalize(self, x):
        return (x - self.mean) / self.std

    def denormalize(self, x):
        return x * self.std + self.mean

    def _inputs(self, x_u: np.ndarray, u) -> np.ndarray:
        x = x_u.reshape(-1, self.dim)
        emb = timestep_embedding(u, self.schedule.U)
        if emb.shape[0] == 1 and x.shape[0] > 1:
            emb = np.repeat(emb, x.shape[0], axis=0)
        return np.concatenate([x, emb], axis=1)

    def loss_and_grads(self, x0: np.ndarray, x_u: np.ndarray, u: np.ndarray) -> tuple[float, list[np.ndarray]]:
        """Mean squared x-start error (normalized units) and its parameter gradients."""
        target = x0.reshape(-1, self.dim)
        pred, cache = self.net.forward(self._inputs(x_u, u))
        diff = pred - target
        loss = float(np.mean(diff**2))
        grads, _ = self.net.backward(cache, 2.0 * diff / diff.size)
        return loss, grads

    def loss(self, x0, x_u, u) -> float:
        return float(np.sum(self.loss_terms(x0, x_u, u)))

    def loss_terms(self, x0, x_u, u) -> np.ndarray:
        """Per-element contributions whose sum is ``loss``."""
        pred = self.net(self._inputs(x_u, u))
        return (pred - x0.reshape(-1, self.dim)) ** 2 / pred.size


def predict_x0(model: Denoiser, x_u: np.ndarray, u: int) -> np.ndarray:
    """Clean-clip prediction in normalized units for a single clip or a batch."""
    x_u = np.asarray(x_u, dtype=float)
    if x_u.shape[-len(model.clip_shape):] != model.clip_shape:
        raise GeneratorError(f"expected trailing shape {model.clip_shape}, got {x_u.shape}")
    out = model.net(model._inputs(x_u, u))
    return out.reshape(x_u.shape)


@dataclass(frozen=True)
class TrainConfig:
    steps: int = 3000
    batch_size: int = 64
    lr: float = 1e-3
    lr_final: float = 1e-4
    seed: int = 0
    hidden: tuple[int, ...] = (256, 256, 256)
    val_every: int = 250
    val_batches: int = 4
    context_frames: int = 4
    context_prob: float = 0.5


def _val_loss(model: Denoiser, val: np.ndarray, seed: int, batches: int, batch_size: int) -> float:
    rng = np.random.default_rng(seed)
    total = 0.0
    for _ in range(batches):
        idx = rng.integers(0, len(val), size=batch_size)
        x0 = val[idx]
        u = rng.integers(1, model.schedule.U + 1, size=batch_size)
        noise = rng.standard_normal(x0.shape)
        ab = model.schedule.alpha_bars[u - 1].reshape(-1, *([1] * (x0.ndim - 1)))
        total += model.loss(x0, np.sqrt(ab) * x0 + np.sqrt(1 - ab) * noise, u)
    return total / batches


def train_denoiser(corpus: Corpus, schedule: NoiseSchedule, config: TrainConfig = TrainConfig(),
                   progress: Optional[Callable[[int, float], None]] = None) -> tuple[Denoiser, dict]:
    """Fit the x-start denoiser by Adam on minibatches; deterministic given ``config.seed``."""
    if len(corpus.train) < 100:
        raise GeneratorError("corpus needs at least 100 training clips")
    train = corpus.normalize(corpus.train)
    val = corpus.normalize(corpus.val) if len(corpus.val) else train[:64]
    model = Denoiser.init(corpus.clip_shape, schedule, corpus.mean, corpus.std, corpus.fps, seed=config.seed,
                          hidden=config.hidden, meta={"train": asdict(config), "corpus": corpus.meta})
    rng = np.random.default_rng(config.seed + 1)
    opt = Adam(lr=config.lr)
    val_seed = config.seed + 2
    history = {"step": [], "train_loss": [], "val_step": [0],
               "val_loss": [_val_loss(model, val, val_seed, config.val_batches, config.batch_size)]}
    decay = (config.lr_final / config.lr) ** (1.0 / max(1, config.steps - 1))
    running = None
    for step in range(1, config.steps + 1):
        idx = rng.integers(0, len(train), size=config.batch_size)
        x0 = train[idx]
        u = rng.integers(1, schedule.U + 1, size=config.batch_size)
        noise = rng.standard_normal(x0.shape)
        ab = schedule.alpha_bars[u - 1].reshape(-1, *([1] * (x0.ndim - 1)))
        x_u = np.sqrt(ab) * x0 + np.sqrt(1 - ab) * noise
        if config.context_frames:
            # clean leading frames teach the network to continue an observed seam
            ctx = rng.random(config.batch_size) < config.context_prob
            k = config.context_frames
            x_u[ctx, :, :k] = x0[ctx, :, :k]
        loss, grads = model.loss_and_grads(x0, x_u, u)
        if not np.isfinite(loss):
            raise GeneratorError(f"loss diverged at step {step} (loss={loss}); lower the learning rate")
        opt.step(model.net.params, grads, lr=config.lr * decay ** (step - 1))
        running = loss if running is None else 0.98 * running + 0.02 * loss
        history["step"].append(step)
        history["train_loss"].append(loss)
        if step % config.val_every == 0 or step == config.steps:
            history["val_step"].append(step)
            history["val_loss"].append(_val_loss(model, val, val_seed, config.val_batches, config.batch_size))
            if progress:
                progress(step, history["val_loss"][-1])
            log.info("step %d: train %.4f val %.4f", step, running, history["val_loss"][-1])
    return model, history


def gradcheck(model: Denoiser, batch: np.ndarray, seed: int = 0, per_tensor: int = 12, step: float = 1e-5,
              grad_fn: Optional[Callable] = None) -> float:
    """Max relative error of backprop vs central differences on a sampled subset of weights.

    ``batch`` holds clean clips in normalized units. ``grad_fn(model, x0, x_u, u)`` overrides
    the analytic gradient (used to confirm the check catches broken gradients).
    """
    rng = np.random.default_rng(seed)
    x0 = np.asarray(batch, dtype=float)
    u = rng.integers(1, model.schedule.U + 1, size=len(x0))
    noise = rng.standard_normal(x0.shape)
    ab = model.schedule.alpha_bars[u - 1].reshape(-1, *([1] * (x0.ndim - 1)))
    x_u = np.sqrt(ab) * x0 + np.sqrt(1 - ab) * noise
    if grad_fn is None:
        _, grads = model.loss_and_grads(x0, x_u, u)
    else:
        grads = grad_fn(model, x0, x_u, u)
    scale = max(float(max(np.abs(g).max() for g in grads)), 1e-300)
    return check_param_grads(model.net.params, lambda: model.loss_terms(x0, x_u, u), grads, rng=rng,
                             per_tensor=per_tensor, step=step, floor=1e-6 * scale)


def reconstruct_channels(clip: np.ndarray, fps: int) -> np.ndarray:
    """Unit-normalize quaternions and rebuild velocities from positions (forward difference)."""
    out = clip.copy()
    out[..., ROT] = quat_normalize(out[..., ROT])
    pos = out[..., POS]
    vel = np.empty_like(pos)
    vel[:, :-1] = fps * (pos[:, 1:] - pos[:, :-1])
    vel[:, -1] = vel[:, -2]
    out[..., VEL] = vel
    return out


def anchor_residual(x0: np.ndarray, observed: np.ndarray, keep: np.ndarray, decay: float = 1.0) -> np.ndarray:
    """Per-element correction that carries the prediction error on observed elements to
    unobserved ones: each (character, joint, channel) series takes the residual of its
    nearest preceding observed frame (or the first observed frame, before any), shrunk by
    ``decay`` per frame of distance from it."""
    w = x0.shape[1]
    frames = np.arange(w).reshape(1, w, *([1] * (x0.ndim - 2)))
    has = keep.any(axis=1, keepdims=True)
    last = np.maximum.accumulate(np.where(keep, frames, -1), axis=1)
    first = np.argmax(keep, axis=1)[:, None]
    src = np.where(last >= 0, last, first)
    res = np.take_along_axis(observed - x0, src, axis=1) * decay ** np.abs(frames - src)
    return np.where(has & ~keep, res, 0.0)


def sample(model: Denoiser, observed: Optional[np.ndarray], mask: np.ndarray, guidance: Optional[Guidance] = None,
           seed: int = 0, eta: float = 4.0, anchor: bool = True, info: Optional[dict] = None,
           anchor_decay: float = 0.95) -> np.ndarray:
    """Draw one two-character clip (world units).

    Elements where ``mask`` is 1 are copied from ``observed`` and are bit-exact in the
    result. ``guidance(clip_world) -> (value, grad_world)`` is ascended with step ``eta``
    (meters per unit gradient) on the unmasked elements of every x-start prediction.
    """
    shape = model.clip_shape
    mask = np.broadcast_to(np.asarray(mask, dtype=float), shape)
    if not np.all((mask == 0) | (mask == 1)):
        raise GeneratorError("mask must be binary")
    if observed is None:
        if np.any(mask):
            raise GeneratorError("an empty observation requires an all-zero mask")
        observed = np.zeros(shape)
    observed = np.asarray(observed, dtype=float)
    if observed.shape != shape:
        raise GeneratorError(f"observed shape {observed.shape} != {shape}")
    keep = mask.astype(bool)
    free = 1.0 - mask
    obs_n = model.normalize(observed)
    sched = model.schedule
    rng = np.random.default_rng(seed)
    warnings_count = 0

    x = rng.standard_normal(shape)
    x0 = x
    for u in range(sched.U, 0, -1):
        x = np.where(keep, obs_n, x)
        x0 = predict_x0(model, x, u)
        if anchor:
            x0 = x0 + anchor_residual(x0, obs_n, keep, anchor_decay)
        x0 = np.where(keep, obs_n, x0)
        if guidance is not None and eta:
            _, grad = guidance(model.denormalize(x0))
            grad = np.asarray(grad, dtype=float)
            if grad.shape != shape or not np.all(np.isfinite(grad)):
                warnings_count += 1
            else:
                x0 = x0 + eta * free * grad / model.std
        if u > 1:
            c0, cu = sched.posterior_coefs(u)
            x = c0 * x0 + cu * x + math.sqrt(sched.betas[u - 1]) * rng.standard_normal(shape)
    out = reconstruct_channels(model.denormalize(x0), model.fps)
    out = np.where(keep, observed, out)
    if info is not None:
        info["guidance_warnings"] = warnings_count
    if warnings_count:
        log.warning("guidance returned non-finite gradients on %d step(s); ignored", warnings_count)
    return out


def save_checkpoint(path: str | Path, model: Denoiser) -> None:
    header = {
        "magic": CHECKPOINT_MAGIC,
        "sizes": model.net.sizes,
        "activation": model.net.activation,
        "clip_shape": list(model.clip_shape),
        "fps": model.fps,
        "meta": model.meta,
    }
    with open(path, "wb") as fh:
        np.savez(fh, header=np.array(json.dumps(header, sort_keys=True)), betas=model.schedule.betas,
                 mean=model.mean, std=model.std, **model.net.state())


def load_checkpoint(path: str | Path) -> Denoiser:
    try:
        z = np.load(path, allow_pickle=False)
    except (OSError, ValueError) as exc:
        raise GeneratorError(f"{path}: unreadable checkpoint ({exc})") from exc
    with z:
        if "header" not in z:
            raise GeneratorError(f"{path}: missing checkpoint header")
        header = json.loads(str(z["header"]))
        if header.get("magic") != CHECKPOINT_MAGIC:
            raise GeneratorError(f"{path}: checkpoint version {header.get('magic')!r}, expected {CHECKPOINT_MAGIC!r}")
        n_layers = len(header["sizes"]) - 1
        net = MLP.from_state(z, n_layers, header["activation"])
        return Denoiser(net, NoiseSchedule(z["betas"]), tuple(header["clip_shape"]), z["mean"], z["std"],
                        header["fps"], header["meta"])
