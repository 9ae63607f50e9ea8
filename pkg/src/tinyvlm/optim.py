"""SGD with momentum and Adam with decoupled weight decay.

Both operate on a name->Tensor mapping and keep their state keyed by
parameter name so it can be checkpointed and restored exactly.
"""

from __future__ import annotations

import numpy as np

from .autodiff import Tensor


class MissingGradError(RuntimeError):
    """A trainable parameter had no gradient at step time."""


def _require_grad(name: str, tensor: Tensor) -> np.ndarray:
    if tensor.grad is None:
        raise MissingGradError(f"parameter {name!r} has no gradient")
    return tensor.grad


class SGD:
    """p <- p - lr * m where m <- momentum * m + (g + wd * p)."""

    kind = "sgd"

    def __init__(self, lr: float, momentum: float = 0.9, weight_decay: float = 0.0):
        self.lr = lr
        self.momentum = momentum
        self.weight_decay = weight_decay
        self.velocity: dict[str, np.ndarray] = {}

    def step(self, params: dict[str, Tensor]) -> None:
        for name, p in params.items():
            g = _require_grad(name, p)
            d = g + self.weight_decay * p.data if self.weight_decay else g
            m = self.velocity.get(name)
            if m is None:
                m = np.zeros_like(p.data)
                self.velocity[name] = m
            m *= self.momentum
            m += d
            p.data -= (self.lr * m).astype(p.data.dtype, copy=False)

    def state_dict(self) -> dict:
        return {
            "kind": self.kind, "lr": self.lr, "momentum": self.momentum,
            "weight_decay": self.weight_decay,
            "buffers": {f"velocity.{n}": v for n, v in self.velocity.items()},
            "scalars": {},
        }

    def load_buffers(self, buffers: dict[str, np.ndarray], scalars: dict) -> None:
        self.velocity = {n[len("velocity."):]: b for n, b in buffers.items()}


class AdamW:
    """Bias-corrected Adam with weight decay applied outside the adaptive term."""

    kind = "adamw"

    def __init__(self, lr: float, beta1: float = 0.9, beta2: float = 0.999,
                 eps: float = 1e-8, weight_decay: float = 0.0):
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.weight_decay = weight_decay
        self.m: dict[str, np.ndarray] = {}
        self.v: dict[str, np.ndarray] = {}
        self.t = 0

    def step(self, params: dict[str, Tensor]) -> None:
        self.t += 1
        bc1 = 1.0 - self.beta1 ** self.t
        bc2 = 1.0 - self.beta2 ** self.t
        for name, p in params.items():
            g = _require_grad(name, p)
            m = self.m.setdefault(name, np.zeros_like(p.data))
            v = self.v.setdefault(name, np.zeros_like(p.data))
            m *= self.beta1
            m += (1 - self.beta1) * g
            v *= self.beta2
            v += (1 - self.beta2) * (g * g)
            update = (m / bc1) / (np.sqrt(v / bc2) + self.eps)
            if self.weight_decay:
                update = update + self.weight_decay * p.data
            p.data -= (self.lr * update).astype(p.data.dtype, copy=False)

    def state_dict(self) -> dict:
        buffers = {f"m.{n}": b for n, b in self.m.items()}
        buffers.update({f"v.{n}": b for n, b in self.v.items()})
        return {
            "kind": self.kind, "lr": self.lr, "beta1": self.beta1, "beta2": self.beta2,
            "eps": self.eps, "weight_decay": self.weight_decay,
            "buffers": buffers, "scalars": {"t": self.t},
        }

    def load_buffers(self, buffers: dict[str, np.ndarray], scalars: dict) -> None:
        self.m = {n[2:]: b for n, b in buffers.items() if n.startswith("m.")}
        self.v = {n[2:]: b for n, b in buffers.items() if n.startswith("v.")}
        self.t = int(scalars.get("t", 0))


def make_optimizer(kind: str, lr: float, weight_decay: float):
    if kind == "sgd":
        return SGD(lr=lr, weight_decay=weight_decay)
    if kind == "adamw":
        return AdamW(lr=lr, weight_decay=weight_decay)
    raise ValueError(f"unknown optimizer kind {kind!r}")
