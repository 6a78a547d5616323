"""Representational similarity (linear CKA) and Fisher information traces."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Optional

import numpy as np

from .core import Network, as_batch, simulate, spike_representation
from .training import LossSpec, softmax


class UndefinedSimilarity(ValueError):
    """CKA of a constant representation (zero self-HSIC)."""


def gram_linear(rep) -> np.ndarray:
    rep = np.asarray(rep, dtype=np.float64)
    if not np.all(np.isfinite(rep)):
        raise ValueError("representation contains non-finite values")
    return rep @ rep.T


def centering_matrix(b: int) -> np.ndarray:
    return np.eye(b) - np.ones((b, b)) / b


def _check_pair(K: np.ndarray, L: np.ndarray) -> int:
    if K.shape != L.shape or K.ndim != 2 or K.shape[0] != K.shape[1]:
        raise ValueError(f"Gram matrices must be square and equal in size, got {K.shape} and {L.shape}")
    return K.shape[0]


def hsic_biased(K, L) -> float:
    """``tr(K C L C) / (b - 1)^2`` with the centering matrix ``C``."""
    K = np.asarray(K, dtype=np.float64)
    L = np.asarray(L, dtype=np.float64)
    b = _check_pair(K, L)
    if b < 2:
        raise ValueError("biased HSIC needs at least 2 examples")
    Kc = K - K.mean(axis=0, keepdims=True)
    Kc = Kc - Kc.mean(axis=1, keepdims=True)
    Lc = L - L.mean(axis=0, keepdims=True)
    Lc = Lc - Lc.mean(axis=1, keepdims=True)
    return float(np.sum(Kc * Lc)) / (b - 1) ** 2


def hsic_unbiased(K, L) -> float:
    """Unbiased HSIC U-statistic on Gram matrices with zeroed diagonals."""
    K = np.array(K, dtype=np.float64)
    L = np.array(L, dtype=np.float64)
    b = _check_pair(K, L)
    if b < 4:
        raise ValueError(f"unbiased HSIC needs at least 4 examples, got {b}")
    np.fill_diagonal(K, 0.0)
    np.fill_diagonal(L, 0.0)
    ones = np.ones(b)
    k1 = K @ ones
    l1 = L @ ones
    trace_kl = float(np.sum(K * L))
    term2 = float(k1.sum()) * float(l1.sum()) / ((b - 1) * (b - 2))
    term3 = 2.0 * float(k1 @ l1) / (b - 2)
    return (trace_kl + term2 - term3) / (b * (b - 3))


def _hsic(estimator: str):
    if estimator == "biased":
        return hsic_biased
    if estimator == "unbiased":
        return hsic_unbiased
    raise ValueError(f"unknown estimator {estimator!r}")


def _normalize(xy: float, xx: float, yy: float) -> float:
    denom = xx * yy
    if not denom > 0.0:
        raise UndefinedSimilarity("CKA is undefined for a constant representation (zero self-HSIC)")
    return xy / np.sqrt(denom)


def cka(rep_a, rep_b, estimator: str = "unbiased") -> float:
    rep_a = np.asarray(rep_a, dtype=np.float64)
    rep_b = np.asarray(rep_b, dtype=np.float64)
    if rep_a.shape[0] != rep_b.shape[0]:
        raise ValueError("representations must share the batch dimension")
    hsic = _hsic(estimator)
    K = gram_linear(rep_a)
    L = gram_linear(rep_b)
    return _normalize(hsic(K, L), hsic(K, K), hsic(L, L))


@dataclass
class CkaAccumulator:
    """Running sums of unbiased HSIC terms over minibatches."""

    kl: float = 0.0
    kk: float = 0.0
    ll: float = 0.0
    batches: int = 0
    batch_size: Optional[int] = None

    def update(self, rep_a, rep_b) -> None:
        rep_a = np.asarray(rep_a, dtype=np.float64)
        rep_b = np.asarray(rep_b, dtype=np.float64)
        b = rep_a.shape[0]
        if rep_b.shape[0] != b:
            raise ValueError("batch sizes of the two representations differ")
        if self.batch_size is None:
            self.batch_size = b
        elif b != self.batch_size:
            raise ValueError(f"all batches must share b={self.batch_size}, got {b}")
        K = gram_linear(rep_a)
        L = gram_linear(rep_b)
        self.kl += hsic_unbiased(K, L)
        self.kk += hsic_unbiased(K, K)
        self.ll += hsic_unbiased(L, L)
        self.batches += 1

    def value(self) -> float:
        if self.batches == 0:
            raise ValueError("no batches accumulated")
        n = self.batches
        return _normalize(self.kl / n, self.kk / n, self.ll / n)


def cka_minibatch(stream: Iterable, acc: Optional[CkaAccumulator] = None) -> float:
    acc = CkaAccumulator() if acc is None else acc
    for rep_a, rep_b in stream:
        acc.update(rep_a, rep_b)
    return acc.value()


def layer_representations(net: Network, x, source: str = "spikes") -> list[np.ndarray]:
    """Per-layer ``[B, T * n]`` blocks for a ``[B, T, C]`` batch.

    A non-spiking readout layer always contributes its potentials.
    """
    _, traces = simulate(net, as_batch(x), record=True)
    reps = []
    for i, layer in enumerate(net.layers):
        src = source if layer.spiking else "potentials"
        reps.append(spike_representation(traces, i, "spikes" if src == "spikes" else "potentials"))
    return reps


def cka_matrix(net_a: Network, net_b: Network, x, batch_size: int = 128, source: str = "spikes") -> np.ndarray:
    """Layer-by-layer minibatch CKA between two networks on the same inputs."""
    x = np.asarray(x, dtype=np.float64)
    n_full = (len(x) // batch_size) * batch_size
    if n_full == 0:
        raise ValueError(f"need at least one full batch of {batch_size} examples")
    accs = [[CkaAccumulator() for _ in net_b.layers] for _ in net_a.layers]
    for start in range(0, n_full, batch_size):
        xb = x[start : start + batch_size]
        ra = layer_representations(net_a, xb, source)
        rb = layer_representations(net_b, xb, source)
        for i, a in enumerate(ra):
            for j, b in enumerate(rb):
                accs[i][j].update(a, b)
    out = np.full((len(net_a.layers), len(net_b.layers)), np.nan)
    for i in range(len(net_a.layers)):
        for j in range(len(net_b.layers)):
            try:
                out[i, j] = accs[i][j].value()
            except UndefinedSimilarity:
                pass
    return out


# --- Fisher information -----------------------------------------------------


@dataclass
class FisherProfile:
    """Fisher trace per weight group, keyed ``"L{layer}.w"`` / ``"L{layer}.v"``."""

    values: dict[str, float]
    normalized: bool = False
    upto_t: Optional[int] = None
    per_step: dict[int, dict[str, float]] = field(default_factory=dict)

    def total(self) -> float:
        return float(sum(self.values.values()))

    def normalize(self) -> "FisherProfile":
        total = self.total()
        if not total > 0.0:
            raise ValueError("cannot normalize an all-zero Fisher profile")
        return FisherProfile({k: v / total for k, v in self.values.items()}, True, self.upto_t, self.per_step)

    def linear(self) -> dict[str, float]:
        return {k: v for k, v in self.values.items() if k.endswith(".w")}

    def recurrent(self) -> dict[str, float]:
        return {k: v for k, v in self.values.items() if k.endswith(".v")}


def group_names(net: Network) -> list[str]:
    names = []
    for i, layer in enumerate(net.layers):
        names.append(f"L{i}.w")
        if layer.v is not None:
            names.append(f"L{i}.v")
    return names


def _grad_of_nll(net: Network, x: np.ndarray, y: int, grad_source: str, context):
    """Gradient of ``-log f_w(y | x)`` under the chosen learning rule's estimator."""
    if grad_source == "bptt":
        from .bptt import bptt_gradients

        return bptt_gradients(net, x, y, LossSpec())[0]
    if grad_source == "eprop":
        from .eprop import eprop_gradients

        return eprop_gradients(net, x, y, context, LossSpec(), error_mode="terminal")[0]
    if grad_source == "decolle":
        from .decolle import decolle_gradients

        return decolle_gradients(net, x, y, context, LossSpec())[0]
    raise ValueError(f"unknown gradient source {grad_source!r}")


def fisher_trace(
    net: Network,
    data,
    upto_t: Optional[int] = None,
    grad_source: str = "bptt",
    y_mode: str = "sample",
    seed: int = 0,
    normalize: bool = False,
    context=None,
    max_samples: Optional[int] = None,
) -> FisherProfile:
    """Mean squared gradient norm of the log predictive probability per group.

    Inputs are truncated to their first ``upto_t`` steps. ``y_mode`` picks
    the class: ``"sample"`` draws it from the model's softmax, ``"expected"``
    sums over classes weighted by their probability (exact expectation),
    ``"argmax"`` takes the top class and ``"label"`` the dataset label.
    ``context`` carries feedback matrices (e-prop) or readouts (DECOLLE).
    """
    x_all = np.asarray(data.x, dtype=np.float64)
    labels = np.asarray(data.y)
    T = x_all.shape[1]
    t = T if upto_t is None else int(upto_t)
    if not 1 <= t <= T:
        raise ValueError(f"upto_t must lie in [1, {T}], got {upto_t}")
    if y_mode not in ("sample", "expected", "argmax", "label"):
        raise ValueError(f"unknown y_mode {y_mode!r}")
    n = len(x_all) if max_samples is None else min(len(x_all), max_samples)
    if n == 0:
        raise ValueError("empty dataset")
    rng = np.random.default_rng(seed)
    names = group_names(net)
    sums = dict.fromkeys(names, 0.0)

    def add(grads, weight):
        k = 0
        for i, layer in enumerate(net.layers):
            sums[names[k]] += weight * float(np.sum(grads.dw[i] ** 2))
            k += 1
            if layer.v is not None:
                sums[names[k]] += weight * float(np.sum(grads.dv[i] ** 2))
                k += 1

    for i in range(n):
        x = x_all[i, :t]
        scores, _ = simulate(net, as_batch(x))
        probs = softmax(scores[0])
        if y_mode == "expected":
            for y, py in enumerate(probs):
                if py > 0.0:
                    add(_grad_of_nll(net, x, y, grad_source, context), py)
            continue
        if y_mode == "sample":
            y = int(rng.choice(len(probs), p=probs))
        elif y_mode == "argmax":
            y = int(np.argmax(probs))
        else:
            y = int(labels[i])
        add(_grad_of_nll(net, x, y, grad_source, context), 1.0)

    profile = FisherProfile({k: v / n for k, v in sums.items()}, False, t)
    return profile.normalize() if normalize else profile


def fisher_over_time(net: Network, data, steps: Iterable[int], normalize: str = "final", **kwargs) -> dict[int, FisherProfile]:
    """Fisher profiles at several truncation points.

    ``normalize="final"`` divides every profile by the total of the last
    one, ``"per-step"`` normalizes each separately, ``"none"`` leaves raw values.
    """
    steps = list(steps)
    raw = {t: fisher_trace(net, data, upto_t=t, **kwargs) for t in steps}
    if normalize == "none":
        return raw
    if normalize == "per-step":
        return {t: p.normalize() for t, p in raw.items()}
    total = raw[steps[-1]].total()
    if not total > 0.0:
        raise ValueError("cannot normalize an all-zero Fisher profile")
    return {t: FisherProfile({k: v / total for k, v in p.values.items()}, True, t) for t, p in raw.items()}
