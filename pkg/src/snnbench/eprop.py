"""E-prop: forward eligibility traces combined with broadcast learning signals.

With the reset detached, ``du_i^t/du_i^{t-1} = alpha_mem`` for every neuron,
so the eligibility vector of synapse ``(i, j)`` is the same for all
postsynaptic ``i``: a double-exponential filter of presynaptic input.
``EligibilityState.elig_vector`` exposes it with the full ``[n_out, n_in]``
shape as a broadcast view of that filtered row.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .core import LayerParams, LayerState, Network, SurrogateSpec, as_batch, surrogate_grad, _step
from .training import (
    EpochStats,
    Gradients,
    LossSpec,
    TrainingDiverged,
    loss_and_grad,
    one_hot,
    output_error,
    run_epoch,
)

FEEDBACK_MODES = ("random-fixed", "symmetric")
ERROR_MODES = ("per-step", "terminal")


@dataclass
class EligibilityState:
    """Per-layer forward state of e-prop for one sample."""

    filtered_input: np.ndarray  # [n_in], synaptic filter of presynaptic spikes
    membrane_filtered: np.ndarray  # [n_in], membrane filter of filtered_input
    n_out: int
    filtered_rec: Optional[np.ndarray] = None  # [n_out], same for own delayed spikes
    membrane_rec: Optional[np.ndarray] = None
    eligibility: Optional[np.ndarray] = None  # e_ij^t of the last update
    eligibility_rec: Optional[np.ndarray] = None

    @classmethod
    def zeros(cls, layer: LayerParams) -> "EligibilityState":
        rec = layer.v is not None
        return cls(
            filtered_input=np.zeros(layer.n_in),
            membrane_filtered=np.zeros(layer.n_in),
            n_out=layer.n_out,
            filtered_rec=np.zeros(layer.n_out) if rec else None,
            membrane_rec=np.zeros(layer.n_out) if rec else None,
        )

    @property
    def elig_vector(self) -> np.ndarray:
        return np.broadcast_to(self.membrane_filtered, (self.n_out, self.membrane_filtered.size))

    @property
    def elig_vector_rec(self) -> Optional[np.ndarray]:
        if self.membrane_rec is None:
            return None
        return np.broadcast_to(self.membrane_rec, (self.n_out, self.n_out))


@dataclass
class FeedbackMatrices:
    """``g[l]`` is ``[n_neurons_l, n_classes]`` for every hidden layer ``l``."""

    g: list[np.ndarray]
    mode: str = "random-fixed"

    @classmethod
    def random(cls, net: Network, seed: int) -> "FeedbackMatrices":
        rng = np.random.default_rng(seed)
        k = 1.0 / np.sqrt(net.n_classes)
        g = [rng.uniform(-k, k, size=(layer.n_out, net.n_classes)) for layer in net.layers[:-1]]
        return cls(g, "random-fixed")

    @classmethod
    def symmetric(cls, net: Network) -> "FeedbackMatrices":
        return cls(symmetric_feedback(net), "symmetric")

    def refresh(self, net: Network) -> None:
        if self.mode == "symmetric":
            self.g = symmetric_feedback(net)


def symmetric_feedback(net: Network) -> list[np.ndarray]:
    """Transposed products of downstream forward weights, one per hidden layer."""
    out = []
    prod = np.eye(net.n_classes)
    for layer in reversed(net.layers[1:]):
        prod = prod @ layer.w  # [K, n_in of this layer]
        out.append(prod.T.copy())
    return out[::-1]


def make_feedback(net: Network, mode: str, seed: int = 0) -> FeedbackMatrices:
    if mode not in FEEDBACK_MODES:
        raise ValueError(f"unknown feedback mode {mode!r}")
    return FeedbackMatrices.random(net, seed) if mode == "random-fixed" else FeedbackMatrices.symmetric(net)


def eligibility_update(
    state: EligibilityState,
    input_spikes,
    own_prev_spikes,
    params: LayerParams,
    potential=None,
    surrogate: SurrogateSpec = SurrogateSpec(),
) -> EligibilityState:
    """Advance the eligibility vector by one step.

    ``potential`` is the postsynaptic membrane potential after this step;
    when given, ``eligibility = sigma'(u) * elig_vector`` is filled in. For a
    non-spiking layer the pseudo-derivative is 1.
    """
    x = np.asarray(input_spikes, dtype=np.float64)
    if x.shape != state.filtered_input.shape:
        raise ValueError(f"expected {state.filtered_input.size} inputs, got shape {x.shape}")
    lif = params.lif
    q = lif.alpha_syn * state.filtered_input + x
    p = lif.alpha_mem * state.membrane_filtered + q
    new = EligibilityState(q, p, state.n_out)
    if params.v is not None:
        prev = np.asarray(own_prev_spikes, dtype=np.float64)
        if prev.shape != (params.n_out,):
            raise ValueError("own_prev_spikes does not match layer size")
        new.filtered_rec = lif.alpha_syn * state.filtered_rec + prev
        new.membrane_rec = lif.alpha_mem * state.membrane_rec + new.filtered_rec
    if potential is not None:
        h = surrogate_grad(np.asarray(potential), surrogate, lif.v_th) if params.spiking else np.ones(params.n_out)
        new.eligibility = np.outer(h, p)
        if new.membrane_rec is not None:
            new.eligibility_rec = np.outer(h, new.membrane_rec)
    return new


def learning_signal(output_error, fb: FeedbackMatrices, layer: int) -> np.ndarray:
    """``L_i = sum_k g_ik * error_k``; works on ``[K]`` or batched ``[B, K]`` errors."""
    return np.asarray(output_error) @ fb.g[layer].T


def _readout_derivative(net: Network, pot_out: np.ndarray, spk_out=None) -> np.ndarray:
    layer = net.layers[-1]
    if net.readout_mode == "membrane-sum":
        return np.ones_like(pot_out)
    return surrogate_grad(pot_out, net.surrogate, layer.lif.v_th)


def eprop_batch(
    net: Network,
    xb: np.ndarray,
    labels,
    fb: Optional[FeedbackMatrices],
    loss: LossSpec = LossSpec(),
    error_mode: str = "per-step",
    meter=None,
):
    """One forward sweep accumulating e-prop gradients for ``xb [T, B, C]``.

    The output layer uses its exact error, hidden layers receive it through
    ``fb``. ``error_mode="per-step"`` uses the running readout at each step;
    ``"terminal"`` uses the end-of-sequence error. Returns batch-mean
    ``(Gradients, loss, scores)``.
    """
    if error_mode not in ERROR_MODES:
        raise ValueError(f"unknown error mode {error_mode!r}")
    if net.layers[-1].v is not None:
        raise ValueError("e-prop needs an output layer without recurrent weights")
    T, B, _ = xb.shape
    L = len(net.layers)
    if L > 1 and (fb is None or len(fb.g) != L - 1):
        raise ValueError("feedback matrices must cover every hidden layer")
    labels = np.atleast_1d(labels)
    target = one_hot(labels, net.n_classes)
    grads = Gradients.zeros_like(net)

    cur = [np.zeros((B, l.n_out)) for l in net.layers]
    pot = [np.zeros((B, l.n_out)) for l in net.layers]
    spk = [np.zeros((B, l.n_out)) for l in net.layers]
    q = [np.zeros((B, l.n_in)) for l in net.layers]
    p = [np.zeros((B, l.n_in)) for l in net.layers]
    qr = [np.zeros((B, l.n_out)) if l.v is not None else None for l in net.layers]
    pr = [np.zeros((B, l.n_out)) if l.v is not None else None for l in net.layers]
    terminal = error_mode == "terminal"
    # terminal mode keeps per-sample summed eligibilities, per-step keeps nothing extra
    esum = [np.zeros((B, l.n_out, l.n_in)) for l in net.layers] if terminal else None
    esum_r = [np.zeros((B, l.n_out, l.n_out)) if l.v is not None else None for l in net.layers] if terminal else None
    if meter is not None:
        n = 0
        for l in net.layers:
            n += 2 * l.n_in + l.n_out * l.n_in  # filters plus the eligibility matrix
            if l.v is not None:
                n += 2 * l.n_out + l.n_out * l.n_out
        meter.add("eligibility", n * B)
    scores = np.zeros((B, net.n_classes))

    for t in range(T):
        layer_in = xb[t]
        h = []
        for li, layer in enumerate(net.layers):
            prev = spk[li]
            lif = layer.lif
            if layer.v is not None:
                qr[li] = lif.alpha_syn * qr[li] + prev
                pr[li] = lif.alpha_mem * pr[li] + qr[li]
            cur[li], pot[li], spk[li] = _step(layer, cur[li], pot[li], prev, layer_in)
            q[li] = lif.alpha_syn * q[li] + layer_in
            p[li] = lif.alpha_mem * p[li] + q[li]
            if li == L - 1:
                h.append(_readout_derivative(net, pot[li]))
            else:
                h.append(surrogate_grad(pot[li], net.surrogate, lif.v_th))
            layer_in = spk[li]
        scores = scores + (pot[-1] if net.readout_mode == "membrane-sum" else spk[-1])
        if terminal:
            for li, layer in enumerate(net.layers):
                esum[li] += h[li][:, :, None] * p[li][:, None, :]
                if layer.v is not None:
                    esum_r[li] += h[li][:, :, None] * pr[li][:, None, :]
            continue
        err = output_error(scores, target, loss) / B
        for li, layer in enumerate(net.layers):
            sig = err if li == L - 1 else learning_signal(err, fb, li)
            lh = sig * h[li]
            grads.dw[li] += lh.T @ p[li]
            if layer.v is not None:
                grads.dv[li] += lh.T @ pr[li]

    loss_value, dscores = loss_and_grad(scores, labels, loss)
    if not np.isfinite(loss_value):
        raise TrainingDiverged(f"eprop: non-finite loss {loss_value}")
    if terminal:
        for li, layer in enumerate(net.layers):
            sig = dscores if li == L - 1 else learning_signal(dscores, fb, li)
            grads.dw[li] += np.einsum("bi,bij->ij", sig, esum[li])
            if layer.v is not None:
                grads.dv[li] += np.einsum("bi,bij->ij", sig, esum_r[li])
    return grads, loss_value, scores


def eprop_gradients(
    net: Network,
    input,
    target,
    fb: Optional[FeedbackMatrices] = None,
    loss: LossSpec = LossSpec(),
    error_mode: str = "per-step",
    meter=None,
):
    """E-prop weight gradients for one sample (or a ``[B, T, C]`` batch); returns ``(Gradients, loss)``."""
    grads, loss_value, _ = eprop_batch(net, as_batch(input), target, fb, loss, error_mode, meter)
    return grads, loss_value


def train_epoch_eprop(
    net: Network,
    data,
    fb: FeedbackMatrices,
    opt,
    batch_size: int = 16,
    shuffle_seed: Optional[int] = 0,
    loss: LossSpec = LossSpec(),
    error_mode: str = "per-step",
) -> EpochStats:
    def grad_fn(net, x, y):
        fb.refresh(net)
        return eprop_batch(net, as_batch(x), y, fb, loss, error_mode)

    return run_epoch(net, data, opt, grad_fn, batch_size, shuffle_seed, "eprop")
