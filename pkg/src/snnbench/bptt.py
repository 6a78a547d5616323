"""Backpropagation through time over the unrolled LIF recursion."""

from __future__ import annotations

from typing import Optional

import numpy as np

from .core import Network, as_batch, logistic, simulate, surrogate_grad
from .training import (
    EpochStats,
    Gradients,
    LossSpec,
    TrainingDiverged,
    loss_and_grad,
    run_epoch,
)


def _pseudo_derivative(net: Network, layer, potentials: np.ndarray, soft: bool) -> np.ndarray:
    if soft:
        sig = logistic((potentials - layer.lif.v_th) * net.surrogate.slope)
        return net.surrogate.slope * sig * (1.0 - sig)
    return surrogate_grad(potentials, net.surrogate, layer.lif.v_th)


def backward(
    net: Network,
    traces,
    dscores: np.ndarray,
    soft: bool = False,
    detach_reset: bool = True,
    want_input_grad: bool = False,
):
    """Reverse sweep over stored traces given ``dL/dscores [B, K]``.

    Returns ``(Gradients, input_grad)``; ``input_grad`` is ``[T, B, C]`` or None.
    """
    grads = Gradients.zeros_like(net)
    last = len(net.layers) - 1
    T, B, _ = traces[-1].potentials.shape

    # dL/ds for the layer being processed, indexed by time
    ds_ext = np.zeros((T, B, net.layers[-1].n_out))
    direct_u = None
    if net.readout_mode == "membrane-sum":
        direct_u = dscores
    else:
        ds_ext += dscores[None]

    input_grad = None
    for li in range(last, -1, -1):
        layer = net.layers[li]
        tr = traces[li]
        lif = layer.lif
        sg = _pseudo_derivative(net, layer, tr.potentials, soft) if layer.spiking else None
        need_dx = li > 0 or want_input_grad
        dx = np.zeros_like(tr.inputs) if need_dx else None
        g_u = np.zeros((B, layer.n_out))
        g_i = np.zeros((B, layer.n_out))
        ds_carry = np.zeros((B, layer.n_out))  # contributions to dL/ds^t from step t+1
        for t in range(T - 1, -1, -1):
            g_u = lif.alpha_mem * g_u
            if li == last and direct_u is not None:
                g_u = g_u + direct_u
            if layer.spiking:
                ds = ds_ext[t] + ds_carry
                g_u = g_u + ds * sg[t]
            g_i = g_u + lif.alpha_syn * g_i
            grads.dw[li] += g_i.T @ tr.inputs[t]
            if need_dx:
                dx[t] = g_i @ layer.w
            ds_carry = np.zeros((B, layer.n_out))
            if t > 0:
                if layer.v is not None:
                    grads.dv[li] += g_i.T @ tr.spikes[t - 1]
                    ds_carry += g_i @ layer.v
                if layer.spiking and lif.refractory_subtract and not detach_reset:
                    ds_carry -= lif.v_th * g_u
        ds_ext = dx
        if li == 0:
            input_grad = dx
    return grads, input_grad


def bptt_batch(net: Network, xb, labels, loss: LossSpec = LossSpec(), soft: bool = False, detach_reset: bool = True, meter=None):
    """Batch-mean BPTT gradients for ``xb [T, B, C]``; returns ``(Gradients, loss, scores)``."""
    scores, traces = simulate(net, xb, record=True, soft=soft)
    if meter is not None:
        meter.add("traces", sum(tr.n_elements for tr in traces))
    loss_value, dscores = loss_and_grad(scores, labels, loss)
    if not np.isfinite(loss_value):
        raise TrainingDiverged(f"bptt: non-finite loss {loss_value}")
    grads, _ = backward(net, traces, dscores, soft=soft, detach_reset=detach_reset)
    return grads, loss_value, scores


def bptt_gradients(net: Network, input, target, loss: LossSpec = LossSpec(), soft: bool = False, detach_reset: bool = True, meter=None):
    """dL/dw by a full reverse sweep.

    ``input`` may be a SpikeTensor, ``[T, C]`` or a ``[B, T, C]`` batch with
    ``target`` holding one label per sample. Returns ``(Gradients, loss)``.
    Pass ``soft=True, detach_reset=False`` for the exact gradient of
    :func:`forward_soft`.
    """
    grads, loss_value, _ = bptt_batch(net, as_batch(input), np.atleast_1d(target), loss, soft, detach_reset, meter)
    return grads, loss_value


def input_gradient(
    net: Network, input, target, loss: LossSpec = LossSpec(), soft: bool = False, detach_reset: bool = True
) -> np.ndarray:
    """dL/dinput with the same batch layout as ``input``."""
    x = np.asarray(getattr(input, "data", input), dtype=np.float64)
    xb = as_batch(x)
    scores, traces = simulate(net, xb, record=True, soft=soft)
    _, dscores = loss_and_grad(scores, np.atleast_1d(target), loss)
    _, dx = backward(net, traces, dscores, soft=soft, detach_reset=detach_reset, want_input_grad=True)
    # undo the batch-mean so each sample sees its own gradient
    dx = dx * xb.shape[1]
    return dx[:, 0] if x.ndim == 2 else dx.transpose(1, 0, 2)


def train_epoch_bptt(net: Network, data, opt, batch_size: int = 16, shuffle_seed: Optional[int] = 0, loss: LossSpec = LossSpec()) -> EpochStats:
    def grad_fn(net, x, y):
        return bptt_batch(net, as_batch(x), y, loss)

    return run_epoch(net, data, opt, grad_fn, batch_size, shuffle_seed, "bptt")
