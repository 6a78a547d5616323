"""Empirical space/time scaling of the learning rules."""

from __future__ import annotations

import time
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from ..bptt import bptt_batch
from ..core import LifParams, NetworkConfig, as_batch, init_network
from ..decolle import decolle_batch, make_readouts
from ..eprop import eprop_batch, make_feedback
from ..training import LossSpec, StateMeter


def _gradient_call(method: str, net, xb, y, context, meter):
    if method == "bptt":
        return bptt_batch(net, xb, y, LossSpec(), meter=meter)
    if method == "eprop":
        return eprop_batch(net, xb, y, context, LossSpec(), meter=meter)
    if method == "decolle":
        return decolle_batch(net, xb, y, context, None, LossSpec(), meter)
    raise ValueError(f"unknown method {method!r}")


def _default_context(method: str, net, seed: int = 0):
    if method == "eprop":
        return make_feedback(net, "random-fixed", seed)
    if method == "decolle":
        return make_readouts(net, seed)
    return None


def learning_state_elements(method: str, net, x, y, context=None) -> int:
    """Peak count of learning-state elements for one gradient call on ``x [B, T, C]``."""
    if context is None:
        context = _default_context(method, net)
    meter = StateMeter()
    _gradient_call(method, net, as_batch(np.asarray(x, dtype=np.float64)), np.asarray(y), context, meter)
    return meter.total


@dataclass
class ProbePoint:
    hidden: int
    t_steps: int
    memory: int
    seconds_per_step: float


@dataclass
class ScalingTable:
    method: str
    points: list[ProbePoint]
    slopes: dict[str, float] = field(default_factory=dict)

    def memory_vs_t(self, hidden: Optional[int] = None) -> tuple[np.ndarray, np.ndarray]:
        hidden = self.points[0].hidden if hidden is None else hidden
        pts = sorted((p for p in self.points if p.hidden == hidden), key=lambda p: p.t_steps)
        return np.array([p.t_steps for p in pts], float), np.array([p.memory for p in pts], float)


def loglog_slope(x, y) -> float:
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if len(x) < 2 or np.any(x <= 0) or np.any(y <= 0):
        raise ValueError("log-log fit needs at least two positive points")
    return float(np.polyfit(np.log(x), np.log(y), 1)[0])


def complexity_probe(
    method: str,
    layer_sizes: Sequence[int] = (32, 64, 128),
    t_values: Sequence[int] = (10, 20, 40, 80),
    n_inputs: int = 64,
    n_classes: int = 2,
    batch_size: int = 1,
    rate: float = 0.1,
    repeats: int = 1,
    seed: int = 0,
) -> ScalingTable:
    """Measure learning-state memory and time per step over a size x T grid.

    Networks have one hidden layer of each width in ``layer_sizes``. Slopes
    are fitted in log-log space: ``memory_vs_T`` and ``time_vs_T`` at the
    first width, ``memory_vs_N`` and ``time_vs_N`` at the first T.
    """
    layer_sizes = [int(n) for n in layer_sizes]
    t_values = [int(t) for t in t_values]
    if len(set(t_values)) < 3 and len(set(layer_sizes)) < 3:
        raise ValueError("a probe needs a sweep of at least 3 points")
    rng = np.random.default_rng(seed)
    points = []
    for n in layer_sizes:
        cfg = NetworkConfig(n_inputs, (n,), n_classes, lif=LifParams(0.9, 0.5, 0.9))
        net = init_network(cfg, seed)
        context = _default_context(method, net, seed)
        for T in t_values:
            x = (rng.random((batch_size, T, n_inputs)) < rate).astype(np.float64)
            y = rng.integers(0, n_classes, size=batch_size)
            xb = as_batch(x)
            meter = StateMeter()
            best = np.inf
            for _ in range(max(1, repeats)):
                t0 = time.perf_counter()
                _gradient_call(method, net, xb, y, context, meter)
                best = min(best, time.perf_counter() - t0)
            points.append(ProbePoint(n, T, meter.total, best / T))
    table = ScalingTable(method, points)
    n0, t0_ = layer_sizes[0], t_values[0]
    by_t = sorted((p for p in points if p.hidden == n0), key=lambda p: p.t_steps)
    by_n = sorted((p for p in points if p.t_steps == t0_), key=lambda p: p.hidden)
    if len(by_t) >= 2:
        table.slopes["memory_vs_T"] = loglog_slope([p.t_steps for p in by_t], [p.memory for p in by_t])
        table.slopes["time_vs_T"] = loglog_slope([p.t_steps for p in by_t], [p.seconds_per_step * p.t_steps for p in by_t])
    if len(by_n) >= 2:
        table.slopes["memory_vs_N"] = loglog_slope([p.hidden for p in by_n], [p.memory for p in by_n])
        table.slopes["time_vs_N"] = loglog_slope([p.hidden for p in by_n], [p.seconds_per_step * p.t_steps for p in by_n])
    return table
