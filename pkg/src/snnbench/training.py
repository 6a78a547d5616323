"""Losses, gradient containers, optimizers and the shared minibatch loop."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .core import Network

log = logging.getLogger(__name__)

LOSS_KINDS = ("softmax-cross-entropy", "mean-squared")


class TrainingDiverged(RuntimeError):
    """Raised when a loss or gradient turns non-finite."""


@dataclass(frozen=True)
class LossSpec:
    kind: str = "softmax-cross-entropy"

    def __post_init__(self):
        if self.kind not in LOSS_KINDS:
            raise ValueError(f"unknown loss {self.kind!r}; expected one of {LOSS_KINDS}")


def softmax(z: np.ndarray) -> np.ndarray:
    z = z - z.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def one_hot(labels, n_classes: int) -> np.ndarray:
    labels = np.atleast_1d(np.asarray(labels, dtype=int))
    out = np.zeros((labels.size, n_classes))
    out[np.arange(labels.size), labels] = 1.0
    return out


def loss_and_grad(scores: np.ndarray, labels, spec: LossSpec) -> tuple[float, np.ndarray]:
    """Batch-mean loss and its gradient with respect to ``scores [B, K]``."""
    B, K = scores.shape
    target = one_hot(labels, K)
    if spec.kind == "softmax-cross-entropy":
        z = scores - scores.max(axis=1, keepdims=True)
        logp = z - np.log(np.exp(z).sum(axis=1, keepdims=True))
        loss = -float(np.sum(target * logp)) / B
        grad = (np.exp(logp) - target) / B
    else:
        diff = scores - target
        loss = 0.5 * float(np.sum(diff**2)) / B
        grad = diff / B
    return loss, grad


def output_error(scores: np.ndarray, target: np.ndarray, spec: LossSpec) -> np.ndarray:
    """Per-sample dL/dscores (no batch averaging)."""
    if spec.kind == "softmax-cross-entropy":
        return softmax(scores) - target
    return scores - target


@dataclass
class Gradients:
    dw: list[np.ndarray]
    dv: list[Optional[np.ndarray]]

    @classmethod
    def zeros_like(cls, net: Network) -> "Gradients":
        return cls(
            [np.zeros_like(layer.w) for layer in net.layers],
            [None if layer.v is None else np.zeros_like(layer.v) for layer in net.layers],
        )

    def arrays(self) -> list[np.ndarray]:
        return [*self.dw, *(d for d in self.dv if d is not None)]

    def flat(self) -> np.ndarray:
        return np.concatenate([a.ravel() for a in self.arrays()])

    def is_finite(self) -> bool:
        return all(np.all(np.isfinite(a)) for a in self.arrays())

    def scaled(self, c: float) -> "Gradients":
        return Gradients([c * d for d in self.dw], [None if d is None else c * d for d in self.dv])

    def add_(self, other: "Gradients") -> "Gradients":
        for a, b in zip(self.dw, other.dw):
            a += b
        for a, b in zip(self.dv, other.dv):
            if a is not None:
                a += b
        return self


@dataclass(frozen=True)
class OptimizerSpec:
    kind: str = "sgd"
    lr: float = 1e-3
    momentum: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    def __post_init__(self):
        if self.kind not in ("sgd", "momentum", "adam"):
            raise ValueError(f"unknown optimizer {self.kind!r}")
        if self.lr < 0:
            raise ValueError("learning rate must be non-negative")


class Optimizer:
    """Applies parameter updates in place; keeps per-parameter state."""

    def __init__(self, spec: OptimizerSpec):
        self.spec = spec
        self._state: dict[tuple[int, str], list[np.ndarray]] = {}
        self._t = 0

    def step(self, net: Network, grads: Gradients, layers=None) -> None:
        spec = self.spec
        if spec.lr == 0.0:
            return
        self._t += 1
        idx = range(len(net.layers)) if layers is None else layers
        for i in idx:
            layer = net.layers[i]
            self._update(layer.w, grads.dw[i], (i, "w"))
            if layer.v is not None and grads.dv[i] is not None:
                self._update(layer.v, grads.dv[i], (i, "v"))

    def _update(self, param: np.ndarray, grad: np.ndarray, key) -> None:
        spec = self.spec
        if spec.kind == "sgd":
            param -= spec.lr * grad
        elif spec.kind == "momentum":
            (buf,) = self._state.setdefault(key, [np.zeros_like(param)])
            buf *= spec.momentum
            buf += grad
            param -= spec.lr * buf
        else:
            m, v = self._state.setdefault(key, [np.zeros_like(param), np.zeros_like(param)])
            m *= spec.momentum
            m += (1 - spec.momentum) * grad
            v *= spec.beta2
            v += (1 - spec.beta2) * grad**2
            mhat = m / (1 - spec.momentum**self._t)
            vhat = v / (1 - spec.beta2**self._t)
            param -= spec.lr * mhat / (np.sqrt(vhat) + spec.eps)


def as_optimizer(opt) -> Optimizer:
    return opt if isinstance(opt, Optimizer) else Optimizer(opt)


@dataclass
class EpochStats:
    loss: float
    accuracy: float
    n_samples: int
    extra: dict = field(default_factory=dict)


def check_finite_loss(loss: float, grads: Optional[Gradients], where: str) -> None:
    if not np.isfinite(loss) or (grads is not None and not grads.is_finite()):
        raise TrainingDiverged(f"{where}: non-finite loss or gradient (loss={loss})")


def run_epoch(
    net: Network,
    data,
    opt,
    grad_fn: Callable,
    batch_size: int,
    shuffle_seed: int,
    name: str,
) -> EpochStats:
    """Minibatch loop shared by the gradient-based rules.

    ``grad_fn(net, xb, yb)`` returns ``(Gradients, loss, scores)`` for a
    ``[T, B, C]`` batch with batch-mean gradients.
    """
    from .data import batches

    opt = as_optimizer(opt)
    total_loss = 0.0
    correct = 0
    seen = 0
    for xb, yb in batches(data, batch_size, shuffle_seed):
        grads, loss, scores = grad_fn(net, xb, yb)
        check_finite_loss(loss, grads, name)
        opt.step(net, grads)
        n = len(yb)
        total_loss += loss * n
        correct += int(np.sum(np.argmax(scores, axis=1) == yb))
        seen += n
    return EpochStats(loss=total_loss / max(seen, 1), accuracy=correct / max(seen, 1), n_samples=seen)


class StateMeter:
    """Peak element counts of learning state, keyed by what holds them."""

    def __init__(self):
        self.peaks: dict[str, int] = {}

    def add(self, name: str, n_elements: int) -> None:
        self.peaks[name] = max(self.peaks.get(name, 0), int(n_elements))

    @property
    def total(self) -> int:
        return sum(self.peaks.values())
