"""Small dense networks with hand-derived backpropagation (float64 numpy)."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


def _silu(z):
    s = 1.0 / (1.0 + np.exp(-z))
    return z * s, s


ACTIVATIONS = ("silu", "tanh")


@dataclass
class MLP:
    """Dense network ``x -> act(x W1 + b1) -> ... -> x Wk + bk`` (linear output)."""

    weights: list[np.ndarray]
    biases: list[np.ndarray]
    activation: str = "silu"

    @classmethod
    def init(cls, sizes: list[int], seed: int, activation: str = "silu", out_scale: float = 1.0) -> "MLP":
        if activation not in ACTIVATIONS:
            raise ValueError(f"unknown activation {activation!r}")
        rng = np.random.default_rng(seed)
        weights, biases = [], []
        for k, (fan_in, fan_out) in enumerate(zip(sizes[:-1], sizes[1:])):
            scale = np.sqrt(1.0 / fan_in)
            if k == len(sizes) - 2:
                scale *= out_scale
            weights.append(rng.normal(0.0, scale, size=(fan_in, fan_out)))
            biases.append(np.zeros(fan_out))
        return cls(weights, biases, activation)

    @property
    def sizes(self) -> list[int]:
        return [self.weights[0].shape[0]] + [W.shape[1] for W in self.weights]

    @property
    def params(self) -> list[np.ndarray]:
        """Flat list ``[W1, b1, W2, b2, ...]``; arrays are shared, not copied."""
        out = []
        for W, b in zip(self.weights, self.biases):
            out += [W, b]
        return out

    def copy(self) -> "MLP":
        return MLP([W.copy() for W in self.weights], [b.copy() for b in self.biases], self.activation)

    def forward(self, x: np.ndarray) -> tuple[np.ndarray, list]:
        cache = []
        h = x
        last = len(self.weights) - 1
        for k, (W, b) in enumerate(zip(self.weights, self.biases)):
            z = h @ W + b
            if k == last:
                cache.append((h, None, None))
                return z, cache
            if self.activation == "silu":
                a, s = _silu(z)
                cache.append((h, z, s))
            else:
                a = np.tanh(z)
                cache.append((h, z, a))
            h = a
        raise AssertionError("unreachable")

    def __call__(self, x: np.ndarray) -> np.ndarray:
        return self.forward(x)[0]

    def backward(self, cache: list, dout: np.ndarray) -> tuple[list[np.ndarray], np.ndarray]:
        """Gradients ``[dW1, db1, ...]`` (same order as ``params``) and d/dx."""
        grads: list[np.ndarray] = [None] * (2 * len(self.weights))
        g = dout
        for k in range(len(self.weights) - 1, -1, -1):
            h, z, aux = cache[k]
            if z is not None:
                if self.activation == "silu":
                    s = aux
                    g = g * (s * (1.0 + z * (1.0 - s)))
                else:
                    g = g * (1.0 - aux**2)
            grads[2 * k] = h.T @ g
            grads[2 * k + 1] = g.sum(axis=0)
            g = g @ self.weights[k].T
        return grads, g

    def state(self, prefix: str = "") -> dict[str, np.ndarray]:
        out = {}
        for k, (W, b) in enumerate(zip(self.weights, self.biases)):
            out[f"{prefix}W{k}"] = W
            out[f"{prefix}b{k}"] = b
        return out

    @classmethod
    def from_state(cls, state: dict, n_layers: int, activation: str, prefix: str = "") -> "MLP":
        return cls([np.array(state[f"{prefix}W{k}"]) for k in range(n_layers)],
                   [np.array(state[f"{prefix}b{k}"]) for k in range(n_layers)], activation)


@dataclass
class Adam:
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    t: int = 0
    m: list = field(default_factory=list)
    v: list = field(default_factory=list)

    def step(self, params: list[np.ndarray], grads: list[np.ndarray], lr: float | None = None) -> None:
        if not self.m:
            self.m = [np.zeros_like(p) for p in params]
            self.v = [np.zeros_like(p) for p in params]
        self.t += 1
        lr = self.lr if lr is None else lr
        c1 = 1.0 - self.beta1**self.t
        c2 = 1.0 - self.beta2**self.t
        for p, g, m, v in zip(params, grads, self.m, self.v):
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            p -= lr * (m / c1) / (np.sqrt(v / c2) + self.eps)


def relative_error(analytic, numeric, floor: float = 1e-10):
    analytic = np.asarray(analytic, dtype=float)
    numeric = np.asarray(numeric, dtype=float)
    denom = np.maximum(np.abs(analytic) + np.abs(numeric), floor)
    return np.abs(analytic - numeric) / denom


def check_param_grads(params: list[np.ndarray], loss_fn, analytic: list[np.ndarray], *, rng: np.random.Generator,
                      per_tensor: int = 12, step: float = 1e-5, floor: float = 1e-10) -> float:
    """Max relative error between ``analytic`` gradients and central differences of
    ``loss_fn()`` on a random subsample of entries of every tensor in ``params``.

    ``loss_fn`` must read the (mutated in place) params. It may return the loss
    as an array of terms to be summed; the terms are then differenced before
    summation, which keeps rounding noise far below that of two large sums.
    """
    worst = 0.0
    for p, g in zip(params, analytic):
        flat, gflat = p.reshape(-1), g.reshape(-1)
        idx = rng.choice(flat.size, size=min(per_tensor, flat.size), replace=False)
        for i in idx:
            old = flat[i]
            flat[i] = old + step
            up = loss_fn()
            flat[i] = old - step
            down = loss_fn()
            flat[i] = old
            numeric = float(np.sum(np.asarray(up) - np.asarray(down))) / (2.0 * step)
            err = float(relative_error(gflat[i], numeric, floor))
            if np.isfinite(err):
                worst = max(worst, err)
            else:
                worst = float("inf")
    return worst
