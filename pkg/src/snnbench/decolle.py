"""DECOLLE: per-layer random readouts with local losses and online updates.

No error crosses layers: each layer's update uses its own readout error,
its own surrogate derivative and a presynaptic trace. The readout layer of
the network (a leaky integrator by default) is read out by the identity on
its membrane potential, so its local loss is the network loss at each step.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .core import LayerParams, LayerState, LifParams, Network, SurrogateSpec, as_batch, surrogate_grad, _step
from .training import (
    EpochStats,
    Gradients,
    LossSpec,
    TrainingDiverged,
    as_optimizer,
    check_finite_loss,
    loss_and_grad,
    one_hot,
    output_error,
)


@dataclass
class LocalReadout:
    """Fixed readout ``y = g @ activity``; ``source`` is ``"spikes"`` or ``"potential"``."""

    g: np.ndarray  # [n_classes, n_neurons]
    pseudo_target: Optional[np.ndarray] = None
    source: str = "spikes"


@dataclass
class PresynapticTrace:
    q: np.ndarray
    p: np.ndarray

    @classmethod
    def zeros(cls, n_in: int) -> "PresynapticTrace":
        return cls(np.zeros(n_in), np.zeros(n_in))


def make_readouts(net: Network, seed: int) -> list[LocalReadout]:
    """One fixed random readout per hidden layer plus the identity readout at the top."""
    rng = np.random.default_rng(seed)
    k = net.n_classes
    out = []
    for i, layer in enumerate(net.layers):
        if i == len(net.layers) - 1:
            out.append(LocalReadout(np.eye(k), source="spikes" if layer.spiking else "potential"))
        else:
            bound = 1.0 / np.sqrt(layer.n_out)
            out.append(LocalReadout(rng.uniform(-bound, bound, size=(k, layer.n_out))))
    return out


def local_readout(spikes, readout: LocalReadout) -> np.ndarray:
    spikes = np.asarray(spikes, dtype=np.float64)
    if spikes.shape[-1] != readout.g.shape[1]:
        raise ValueError(f"readout expects {readout.g.shape[1]} neurons, got {spikes.shape[-1]}")
    return spikes @ readout.g.T


def trace_update(trace: PresynapticTrace, input_spikes, lif: LifParams) -> PresynapticTrace:
    q = lif.alpha_syn * trace.q + np.asarray(input_spikes, dtype=np.float64)
    return PresynapticTrace(q, lif.alpha_mem * trace.p + q)


def _neuron_error(activity, readout: LocalReadout, target, loss: LossSpec):
    y = activity @ readout.g.T
    return output_error(y, target, loss) @ readout.g, y


def decolle_step_update(
    layer: LayerParams,
    state: LayerState,
    trace: PresynapticTrace,
    readout: LocalReadout,
    loss: LossSpec = LossSpec(),
    eta: float = 1e-3,
    surrogate: SurrogateSpec = SurrogateSpec(),
    target=None,
) -> np.ndarray:
    """Weight delta ``-eta * err_i * sigma'(u_i) * p_j`` for one timestep."""
    target = readout.pseudo_target if target is None else np.asarray(target, dtype=np.float64)
    if target is None:
        raise ValueError("a pseudo-target is required")
    activity = state.potential if readout.source == "potential" else state.spikes
    err, _ = _neuron_error(activity, readout, target, loss)
    if readout.source == "potential" or not layer.spiking:
        h = np.ones_like(state.potential)
    else:
        h = surrogate_grad(state.potential, surrogate, layer.lif.v_th)
    return -eta * np.outer(err * h, trace.p)


def _local_loss(y, target, loss: LossSpec) -> float:
    return loss_and_grad(y, np.argmax(target, axis=1), loss)[0] * y.shape[0]


def decolle_batch(
    net: Network,
    xb: np.ndarray,
    labels,
    readouts: list[LocalReadout],
    opt=None,
    loss: LossSpec = LossSpec(),
    meter=None,
):
    """Run one batch ``[T, B, C]`` with local learning.

    With an optimizer the per-step batch-mean gradients are applied at every
    timestep (online). Without one, nothing is applied and the summed
    gradients are returned. Returns ``(Gradients, network_loss, scores, local_loss)``.
    """
    if len(readouts) != len(net.layers):
        raise ValueError("every layer needs a local readout")
    T, B, _ = xb.shape
    labels = np.atleast_1d(labels)
    target = one_hot(labels, net.n_classes)
    total = Gradients.zeros_like(net)
    opt = None if opt is None else as_optimizer(opt)

    cur = [np.zeros((B, l.n_out)) for l in net.layers]
    pot = [np.zeros((B, l.n_out)) for l in net.layers]
    spk = [np.zeros((B, l.n_out)) for l in net.layers]
    q = [np.zeros((B, l.n_in)) for l in net.layers]
    p = [np.zeros((B, l.n_in)) for l in net.layers]
    qr = [np.zeros((B, l.n_out)) if l.v is not None else None for l in net.layers]
    pr = [np.zeros((B, l.n_out)) if l.v is not None else None for l in net.layers]
    if meter is not None:
        # traces plus the per-step local error vector; nothing is kept across steps
        n = sum(2 * l.n_in + l.n_out + (2 * l.n_out if l.v is not None else 0) for l in net.layers)
        meter.add("local-traces", n * B)
    scores = np.zeros((B, net.n_classes))
    local_loss = 0.0

    for t in range(T):
        layer_in = xb[t]
        step = Gradients.zeros_like(net)
        for li, (layer, ro) in enumerate(zip(net.layers, readouts)):
            lif = layer.lif
            prev = spk[li]
            if layer.v is not None:
                qr[li] = lif.alpha_syn * qr[li] + prev
                pr[li] = lif.alpha_mem * pr[li] + qr[li]
            cur[li], pot[li], spk[li] = _step(layer, cur[li], pot[li], prev, layer_in)
            q[li] = lif.alpha_syn * q[li] + layer_in
            p[li] = lif.alpha_mem * p[li] + q[li]
            activity = pot[li] if ro.source == "potential" else spk[li]
            err, y = _neuron_error(activity, ro, target, loss)
            local_loss += _local_loss(y, target, loss)
            if ro.source == "potential" or not layer.spiking:
                lh = err / B
            else:
                lh = err * surrogate_grad(pot[li], net.surrogate, lif.v_th) / B
            step.dw[li] += lh.T @ p[li]
            if layer.v is not None:
                step.dv[li] += lh.T @ pr[li]
            layer_in = spk[li]
        scores = scores + (pot[-1] if net.readout_mode == "membrane-sum" else spk[-1])
        if opt is not None:
            if not step.is_finite():
                raise TrainingDiverged(f"decolle: non-finite update at t={t}")
            opt.step(net, step)
        total.add_(step)

    loss_value, _ = loss_and_grad(scores, labels, loss)
    return total, loss_value, scores, local_loss / B


def decolle_gradients(net: Network, input, target, readouts: list[LocalReadout], loss: LossSpec = LossSpec(), meter=None):
    """Sequence-accumulated local gradients without touching the weights; returns ``(Gradients, local_loss)``."""
    grads, _, _, local = decolle_batch(net, as_batch(input), target, readouts, None, loss, meter)
    return grads, local


def train_epoch_decolle(
    net: Network,
    data,
    readouts: list[LocalReadout],
    opt,
    batch_size: int = 16,
    shuffle_seed: Optional[int] = 0,
    loss: LossSpec = LossSpec(),
    online: bool = True,
) -> EpochStats:
    """One pass of local learning; ``online=False`` applies one update per batch."""
    from .data import batches

    opt = as_optimizer(opt)
    total_loss = 0.0
    correct = 0
    seen = 0
    for x, y in batches(data, batch_size, shuffle_seed):
        xb = as_batch(x)
        if online:
            grads, loss_value, scores, _ = decolle_batch(net, xb, y, readouts, opt, loss)
        else:
            grads, loss_value, scores, _ = decolle_batch(net, xb, y, readouts, None, loss)
            check_finite_loss(loss_value, grads, "decolle")
            opt.step(net, grads)
        if not np.isfinite(loss_value):
            raise TrainingDiverged(f"decolle: non-finite loss {loss_value}")
        total_loss += loss_value * len(y)
        correct += int(np.sum(np.argmax(scores, axis=1) == y))
        seen += len(y)
    return EpochStats(loss=total_loss / max(seen, 1), accuracy=correct / max(seen, 1), n_samples=seen)
