"""FGSM perturbations and targeted backdoor poisoning."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .analysis import cka, layer_representations
from .core import Network, SpikeTensor, accuracy, predict
from .data import Dataset
from .training import LossSpec, one_hot, output_error

FGSM_MODES = ("ann-counterpart", "surrogate-direct")
DEFAULT_EPSILONS = (0.001, 0.005, 0.01, 0.02, 0.05)


class MissingGradient(RuntimeError):
    pass


@dataclass(frozen=True)
class FgsmConfig:
    epsilon: float = 0.01
    mode: str = "ann-counterpart"
    epsilons: tuple[float, ...] = DEFAULT_EPSILONS
    max_intensity: float = 1.0

    def __post_init__(self):
        if self.epsilon < 0 or any(e < 0 for e in self.epsilons):
            raise ValueError("epsilon must be non-negative")
        if self.mode not in FGSM_MODES:
            raise ValueError(f"unknown FGSM mode {self.mode!r}")


@dataclass
class RateModel:
    """Rate-based stand-in of a spiking network with snapshot weights.

    Hidden layers apply ``relu(W r)`` and, when recurrent, one fold
    ``relu(W r + V a)``; the last layer is linear. The input rate is the
    per-channel mean over time.
    """

    weights: list[np.ndarray]
    recurrent: list[Optional[np.ndarray]]

    def forward(self, rates: np.ndarray, keep: bool = False):
        acts = [rates]
        cache = []
        r = rates
        last = len(self.weights) - 1
        for i, (w, v) in enumerate(zip(self.weights, self.recurrent)):
            pre1 = r @ w.T
            if i == last:
                r = pre1
                cache.append((pre1, None, None))
                break
            a1 = np.maximum(pre1, 0.0)
            if v is None:
                r = a1
                cache.append((pre1, None, None))
            else:
                pre2 = pre1 + a1 @ v.T
                r = np.maximum(pre2, 0.0)
                cache.append((pre1, a1, pre2))
            acts.append(r)
        return (r, acts, cache) if keep else r

    def input_gradient(self, rates: np.ndarray, labels, loss: LossSpec = LossSpec()) -> np.ndarray:
        scores, acts, cache = self.forward(rates, keep=True)
        grad = output_error(scores, one_hot(labels, scores.shape[1]), loss)
        last = len(self.weights) - 1
        for i in range(last, -1, -1):
            w, v = self.weights[i], self.recurrent[i]
            pre1, a1, pre2 = cache[i]
            if i == last:
                d_pre1 = grad
            elif v is None:
                d_pre1 = grad * (pre1 > 0)
            else:
                d_pre2 = grad * (pre2 > 0)
                d_pre1 = d_pre2 + (d_pre2 @ v) * (pre1 > 0)
            grad = d_pre1 @ w
        return grad


def build_ann_counterpart(net: Network) -> RateModel:
    return RateModel(
        [layer.w.copy() for layer in net.layers],
        [None if layer.v is None else layer.v.copy() for layer in net.layers],
    )


def _bounded(x: np.ndarray, adv: np.ndarray, eps: float) -> np.ndarray:
    # pull entries that overshoot eps by round-off back towards x
    while True:
        bad = np.abs(adv - x) > eps
        if not bad.any():
            return adv
        adv = np.where(bad, np.nextafter(adv, x), adv)


def fgsm_batch(model, x: np.ndarray, labels, epsilon: float, mode: str = "ann-counterpart", max_intensity: float = 1.0) -> np.ndarray:
    """Adversarial copies of ``x [N, T, C]``, each entry moved by at most ``epsilon``."""
    x = np.asarray(x, dtype=np.float64)
    if epsilon < 0:
        raise ValueError("epsilon must be non-negative")
    if epsilon == 0:
        return x.copy()
    labels = np.atleast_1d(labels)
    if mode == "ann-counterpart":
        rm = model if isinstance(model, RateModel) else build_ann_counterpart(model)
        g = rm.input_gradient(x.mean(axis=1), labels)
        step = np.sign(g)[:, None, :]
    elif mode == "surrogate-direct":
        from .bptt import input_gradient

        if not isinstance(model, Network):
            raise TypeError("surrogate-direct mode needs the spiking network")
        step = np.sign(input_gradient(model, x, labels))
    else:
        raise ValueError(f"unknown FGSM mode {mode!r}")
    if not np.any(step):
        raise MissingGradient("input gradient is zero everywhere; the model offers no gradient path")
    adv = np.clip(x + epsilon * step, 0.0, max_intensity)
    return _bounded(x, adv, epsilon)


def fgsm_perturb(model, input, label: int, cfg: FgsmConfig) -> SpikeTensor:
    data = input.data if isinstance(input, SpikeTensor) else np.asarray(input, dtype=np.float64)
    adv = fgsm_batch(model, data[None], [label], cfg.epsilon, cfg.mode, cfg.max_intensity)
    return SpikeTensor(adv[0])


def fgsm_sweep(net: Network, test: Dataset, cfg: FgsmConfig) -> list[tuple[float, float]]:
    """``(epsilon, accuracy)`` for every epsilon in ``cfg.epsilons``."""
    model = build_ann_counterpart(net) if cfg.mode == "ann-counterpart" else net
    out = []
    for eps in cfg.epsilons:
        adv = fgsm_batch(model, test.x, test.y, eps, cfg.mode, cfg.max_intensity)
        out.append((float(eps), accuracy(net, adv, test.y)))
    return out


# --- backdoor -----------------------------------------------------------------


@dataclass(frozen=True)
class TriggerSpec:
    pixel_locations: tuple[int, ...]
    value: float = 1.0

    def __post_init__(self):
        if len(self.pixel_locations) != 4:
            raise ValueError("a trigger modifies exactly 4 locations")
        if len(set(self.pixel_locations)) != 4:
            raise ValueError("trigger locations must be distinct")


def default_trigger(channels: int, grid_width: Optional[int] = None, value: float = 1.0) -> TriggerSpec:
    """2x2 block at the top-left of the channel grid (square grid if ``grid_width`` is None)."""
    if grid_width is None:
        side = math.isqrt(channels)
        grid_width = side if side * side == channels else channels
    if grid_width >= 2 and channels >= grid_width + 2:
        locs = (0, 1, grid_width, grid_width + 1)
    else:
        locs = (0, 1, 2, 3)
    return TriggerSpec(locs, value)


@dataclass(frozen=True)
class PoisonPlan:
    source: int
    target: int
    poison_rate: float
    trigger: TriggerSpec
    seed: int = 0

    def __post_init__(self):
        if self.source == self.target:
            raise ValueError("source and target classes must differ")
        if not 0.0 <= self.poison_rate <= 1.0:
            raise ValueError("poison_rate must lie in [0, 1]")


def _trigger_array(x: np.ndarray, trig: TriggerSpec) -> np.ndarray:
    locs = np.asarray(trig.pixel_locations)
    if locs.min() < 0 or locs.max() >= x.shape[-1]:
        raise ValueError(f"trigger location out of range for {x.shape[-1]} channels")
    out = x.copy()
    out[..., locs] = trig.value
    return out


def apply_trigger(sample, trig: TriggerSpec) -> SpikeTensor:
    data = sample.data if isinstance(sample, SpikeTensor) else np.asarray(sample, dtype=np.float64)
    return SpikeTensor(_trigger_array(data, trig))


def poison_count(n_source: int, rate: float) -> int:
    """``floor(rate * n_source)``, tolerant of binary round-off such as 0.29 * 100."""
    return int(math.floor(rate * n_source + 1e-9))


def poison_indices(data: Dataset, plan: PoisonPlan) -> np.ndarray:
    source_idx = np.flatnonzero(data.y == plan.source)
    if source_idx.size == 0:
        raise ValueError(f"no samples of source class {plan.source}")
    n = poison_count(source_idx.size, plan.poison_rate)
    rng = np.random.default_rng(plan.seed)
    return np.sort(rng.choice(source_idx, size=n, replace=False))


def poison_dataset(data: Dataset, plan: PoisonPlan) -> Dataset:
    idx = poison_indices(data, plan)
    x = data.x.copy()
    y = data.y.copy()
    if idx.size:
        x[idx] = _trigger_array(x[idx], plan.trigger)
        y[idx] = plan.target
    return Dataset(x, y, data.n_classes)


def attack_success_rate(net: Network, test: Dataset, plan: PoisonPlan) -> tuple[float, float]:
    """``(asr, clean_accuracy)``; ASR is over triggered source-class test samples."""
    src = np.flatnonzero(test.y == plan.source)
    if src.size == 0:
        raise ValueError(f"no test samples of source class {plan.source}")
    triggered = _trigger_array(test.x[src], plan.trigger)
    asr = float(np.mean(predict(net, triggered) == plan.target))
    clean = accuracy(net, test.x, test.y)
    return asr, clean


def random_plans(n_classes: int, rate: float, trigger: TriggerSpec, n_plans: int = 5, seed: int = 0) -> list[PoisonPlan]:
    """Random distinct (source, target) pairs, one plan per draw."""
    rng = np.random.default_rng(seed)
    plans = []
    for k in range(n_plans):
        source, target = rng.choice(n_classes, size=2, replace=False)
        plans.append(PoisonPlan(int(source), int(target), rate, trigger, seed=seed + k))
    return plans


# --- representational robustness ------------------------------------------------


@dataclass
class CkaDelta:
    epsilons: list[float]
    ff: np.ndarray  # [n_layers, n_eps] clean-vs-adversarial CKA
    rec: np.ndarray
    delta: np.ndarray = field(init=False)

    def __post_init__(self):
        self.delta = self.rec - self.ff


def clean_adv_cka(net: Network, x: np.ndarray, labels, epsilons: Sequence[float], cfg: FgsmConfig, estimator: str = "unbiased") -> np.ndarray:
    model = build_ann_counterpart(net) if cfg.mode == "ann-counterpart" else net
    clean = layer_representations(net, x)
    out = np.zeros((len(net.layers), len(epsilons)))
    for j, eps in enumerate(epsilons):
        adv = layer_representations(net, fgsm_batch(model, x, labels, eps, cfg.mode, cfg.max_intensity))
        for i, (a, b) in enumerate(zip(clean, adv)):
            out[i, j] = cka(a, b, estimator)
    return out


def robustness_cka_delta(net_ff: Network, net_rec: Network, clean: Dataset, cfg: FgsmConfig, estimator: str = "unbiased") -> CkaDelta:
    """Layerwise clean-vs-adversarial CKA of the recurrent net minus the feed-forward net."""
    if len(net_ff.layers) != len(net_rec.layers):
        raise ValueError("architectures must have the same depth")
    eps = [float(e) for e in cfg.epsilons]
    ff = clean_adv_cka(net_ff, clean.x, clean.y, eps, cfg, estimator)
    rec = clean_adv_cka(net_rec, clean.x, clean.y, eps, cfg, estimator)
    return CkaDelta(eps, ff, rec)
