"""Experiment orchestration: training, evaluation, analyses and attacks per seed."""

from __future__ import annotations

import logging
import math
import os
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Optional

import numpy as np

from .. import analysis, attacks
from ..bptt import train_epoch_bptt
from ..core import Network, accuracy, init_network
from ..data import Dataset, load_manifest_datasets, synth_split
from ..decolle import make_readouts, train_epoch_decolle
from ..eprop import make_feedback, train_epoch_eprop
from ..training import LossSpec, Optimizer, OptimizerSpec
from .config import ExperimentConfig
from .probe import learning_state_elements

log = logging.getLogger(__name__)

CONTEXT_SEED_OFFSET = 10_000
SHUFFLE_STRIDE = 1_000_003


@dataclass
class TrainedModel:
    net: Network
    context: Any  # feedback matrices (e-prop), readouts (DECOLLE) or None
    loss_curve: list[float] = field(default_factory=list)
    accuracy_curve: list[float] = field(default_factory=list)


@dataclass
class SeedResult:
    seed: int
    initial_accuracy: Optional[float] = None
    train_accuracy: Optional[float] = None
    test_accuracy: Optional[float] = None
    loss_curve: list[float] = field(default_factory=list)
    accuracy_curve: list[float] = field(default_factory=list)
    peak_learning_state: Optional[int] = None
    cka: Optional[list[list[Optional[float]]]] = None
    fisher: Optional[dict[str, float]] = None
    fisher_over_time: dict[int, dict[str, float]] = field(default_factory=dict)
    fgsm: list[dict] = field(default_factory=list)
    backdoor: list[dict] = field(default_factory=list)
    errors: list[dict] = field(default_factory=list)
    timing: dict[str, float] = field(default_factory=dict)

    def to_dict(self, timing: bool = True) -> dict:
        d = {
            "seed": self.seed,
            "initial_accuracy": self.initial_accuracy,
            "train_accuracy": self.train_accuracy,
            "test_accuracy": self.test_accuracy,
            "loss_curve": list(self.loss_curve),
            "accuracy_curve": list(self.accuracy_curve),
            "peak_learning_state": self.peak_learning_state,
            "cka": self.cka,
            "fisher": self.fisher,
            # JSON object keys are strings
            "fisher_over_time": {str(t): v for t, v in self.fisher_over_time.items()},
            "fgsm": list(self.fgsm),
            "backdoor": list(self.backdoor),
            "errors": list(self.errors),
        }
        if timing:
            d["timing"] = dict(self.timing)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "SeedResult":
        d = dict(d)
        d["fisher_over_time"] = {int(t): v for t, v in d.get("fisher_over_time", {}).items()}
        return cls(**d)


@dataclass
class ExperimentReport:
    method: str
    architecture: str
    config: dict
    seeds: list[SeedResult] = field(default_factory=list)

    @property
    def aggregate(self) -> dict:
        return aggregate(self.seeds)

    @property
    def errors(self) -> list[dict]:
        return [dict(e, seed=s.seed) for s in self.seeds for e in s.errors]

    def to_dict(self, timing: bool = True) -> dict:
        return {
            "method": self.method,
            "architecture": self.architecture,
            "config": self.config,
            "seeds": [s.to_dict(timing) for s in self.seeds],
            "aggregate": self.aggregate,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentReport":
        return cls(d["method"], d["architecture"], d["config"], [SeedResult.from_dict(s) for s in d["seeds"]])


def _mean(values) -> Optional[float]:
    vals = [v for v in values if v is not None and not (isinstance(v, float) and math.isnan(v))]
    return float(np.mean(vals)) if vals else None


def aggregate(seeds: list[SeedResult]) -> dict:
    """Means over the seeds that produced each quantity."""
    out: dict[str, Any] = {"n_seeds": len(seeds)}
    for key in ("initial_accuracy", "train_accuracy", "test_accuracy", "peak_learning_state"):
        out[key] = _mean(getattr(s, key) for s in seeds)
    eps = sorted({row["epsilon"] for s in seeds for row in s.fgsm})
    out["fgsm"] = [
        {"epsilon": e, "accuracy": _mean(r["accuracy"] for s in seeds for r in s.fgsm if r["epsilon"] == e)} for e in eps
    ]
    rates = sorted({row["rate"] for s in seeds for row in s.backdoor})
    out["backdoor"] = [
        {
            "rate": r,
            "accuracy": _mean(x["accuracy"] for s in seeds for x in s.backdoor if x["rate"] == r),
            "asr": _mean(x["asr"] for s in seeds for x in s.backdoor if x["rate"] == r),
        }
        for r in rates
    ]
    groups = sorted({g for s in seeds if s.fisher for g in s.fisher})
    out["fisher"] = {g: _mean(s.fisher.get(g) for s in seeds if s.fisher) for g in groups} or None
    return out


# --- data and training --------------------------------------------------------


def load_task(config: ExperimentConfig, seed: int) -> tuple[Dataset, Dataset]:
    task = config.task
    if task.kind == "synthetic":
        data_seed = seed if task.seed is None else task.seed
        return synth_split(
            task.classes, task.n_train_per_class, task.n_test_per_class, task.T, task.channels, task.jitter, data_seed, task.rate
        )
    train, test = load_manifest_datasets(Path(task.manifest))
    if test is None:
        raise ValueError(f"{task.manifest}: manifest has no test split")
    return train, test


def build_model(config: ExperimentConfig, n_inputs: int, n_classes: int, seed: int) -> TrainedModel:
    net = init_network(config.network_config(n_inputs, n_classes), seed)
    context = None
    if config.method == "eprop":
        context = make_feedback(net, config.feedback_mode, seed + CONTEXT_SEED_OFFSET)
    elif config.method == "decolle":
        context = make_readouts(net, seed + CONTEXT_SEED_OFFSET)
    return TrainedModel(net, context)


def train_model(config: ExperimentConfig, train: Dataset, seed: int, epochs: Optional[int] = None) -> TrainedModel:
    model = build_model(config, train.channels, train.n_classes, seed)
    opt = Optimizer(OptimizerSpec(config.optimizer, config.lr))
    loss = LossSpec(config.loss)
    for epoch in range(config.epochs if epochs is None else epochs):
        shuffle = seed * SHUFFLE_STRIDE + epoch
        if config.method == "bptt":
            stats = train_epoch_bptt(model.net, train, opt, config.batch_size, shuffle, loss)
        elif config.method == "eprop":
            stats = train_epoch_eprop(model.net, train, model.context, opt, config.batch_size, shuffle, loss, config.error_mode)
        else:
            stats = train_epoch_decolle(
                model.net, train, model.context, opt, config.batch_size, shuffle, loss, config.decolle_online
            )
        model.loss_curve.append(float(stats.loss))
        model.accuracy_curve.append(float(stats.accuracy))
    return model


def _fgsm_config(config: ExperimentConfig) -> attacks.FgsmConfig:
    eps = tuple(float(e) for e in config.attacks.fgsm_epsilons)
    return attacks.FgsmConfig(epsilon=eps[0] if eps else 0.0, mode=config.attacks.fgsm_mode, epsilons=eps)


def backdoor_rows(config: ExperimentConfig, train: Dataset, test: Dataset, seed: int) -> list[dict]:
    """Retrain on poisoned data for every (rate, plan) and measure ASR."""
    spec = config.attacks
    trigger = attacks.default_trigger(train.channels, spec.trigger_grid_width)
    rows = []
    for rate in spec.poison_rates:
        for plan in attacks.random_plans(train.n_classes, float(rate), trigger, spec.poison_plans, seed):
            model = train_model(config, attacks.poison_dataset(train, plan), seed)
            asr, clean = attacks.attack_success_rate(model.net, test, plan)
            rows.append({"rate": float(rate), "source": plan.source, "target": plan.target, "accuracy": clean, "asr": asr})
    return rows


class _Stage:
    """Records the wall time of a stage and turns its failure into an error entry."""

    def __init__(self, result: SeedResult, name: str):
        self.result = result
        self.name = name

    def __enter__(self):
        self.t0 = time.perf_counter()
        return self

    def __exit__(self, exc_type, exc, tb):
        self.result.timing[self.name] = time.perf_counter() - self.t0
        if exc is None:
            return False
        if not isinstance(exc, Exception):
            return False
        log.warning("seed %d: stage %s failed: %s", self.result.seed, self.name, exc)
        self.result.errors.append({"stage": self.name, "error": type(exc).__name__, "message": str(exc)})
        return True


def run_seed(config: ExperimentConfig, seed: int) -> tuple[SeedResult, Optional[TrainedModel]]:
    result = SeedResult(seed)
    model = None
    train = test = None
    with _Stage(result, "data"):
        train, test = load_task(config, seed)
    if train is None:
        return result, None
    with _Stage(result, "init"):
        init = build_model(config, train.channels, train.n_classes, seed)
        result.initial_accuracy = accuracy(init.net, test.x, test.y)
    with _Stage(result, "train"):
        model = train_model(config, train, seed)
        result.loss_curve = model.loss_curve
        result.accuracy_curve = model.accuracy_curve
    if model is None:
        return result, None
    with _Stage(result, "evaluate"):
        result.train_accuracy = accuracy(model.net, train.x, train.y)
        result.test_accuracy = accuracy(model.net, test.x, test.y)
    with _Stage(result, "memory"):
        xb = train.x[: config.batch_size]
        result.peak_learning_state = learning_state_elements(config.method, model.net, xb, train.y[: config.batch_size], model.context)
    an = config.analysis
    if an.cka:
        with _Stage(result, "cka"):
            mat = analysis.cka_matrix(model.net, model.net, test.x, min(an.cka_batch_size, len(test)), an.cka_source)
            result.cka = [[None if np.isnan(v) else float(v) for v in row] for row in mat]
    if an.fisher:
        with _Stage(result, "fisher"):
            kw = dict(grad_source=config.method, y_mode=an.fisher_y_mode, seed=seed, context=model.context, max_samples=an.fisher_samples)
            prof = analysis.fisher_trace(model.net, test, normalize=True, **kw)
            result.fisher = prof.values
            if an.fisher_steps:
                over = analysis.fisher_over_time(model.net, test, an.fisher_steps, an.fisher_normalize, **kw)
                result.fisher_over_time = {t: p.values for t, p in over.items()}
    if config.attacks.fgsm_epsilons:
        with _Stage(result, "fgsm"):
            sweep = attacks.fgsm_sweep(model.net, test, _fgsm_config(config))
            result.fgsm = [{"epsilon": e, "accuracy": a} for e, a in sweep]
    if config.attacks.poison_rates:
        with _Stage(result, "backdoor"):
            result.backdoor = backdoor_rows(config, train, test, seed)
    return result, model


def bench_threads() -> int:
    raw = os.environ.get("BENCH_THREADS", "1")
    try:
        return max(1, int(raw))
    except ValueError:
        raise ValueError(f"BENCH_THREADS must be an integer, got {raw!r}") from None


def run_experiment(config: ExperimentConfig, keep_models: bool = False):
    """Train and evaluate every seed; seeds run concurrently up to ``BENCH_THREADS``.

    Results are ordered by the config's seed list whatever the completion
    order. With ``keep_models`` the trained models are returned as well.
    """
    config.validate()
    threads = min(bench_threads(), len(config.seeds))
    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            outs = list(pool.map(lambda s: run_seed(config, s), config.seeds))
    else:
        outs = [run_seed(config, s) for s in config.seeds]
    report = ExperimentReport(config.method, config.architecture, config.to_dict(), [r for r, _ in outs])
    if keep_models:
        return report, [m for _, m in outs]
    return report
