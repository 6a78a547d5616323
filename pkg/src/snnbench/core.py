"""LIF neuron dynamics, surrogate derivatives and the shared forward pass.

All simulation is time-major. Batched internals work on arrays shaped
``[T, B, channels]``; the public single-sample entry points wrap them.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Optional, Sequence

import numpy as np

SURROGATE_KINDS = ("fast-sigmoid", "rectangular", "sigmoid-soft")
READOUT_MODES = ("membrane-sum", "spike-count")


@dataclass(frozen=True)
class LifParams:
    alpha_syn: float = 0.9
    alpha_mem: float = 0.5
    v_th: float = 0.9
    refractory_subtract: bool = True

    def __post_init__(self):
        # zero decay is the memoryless limit and is allowed
        if not 0.0 <= self.alpha_syn <= 1.0:
            raise ValueError(f"alpha_syn must lie in [0, 1], got {self.alpha_syn}")
        if not 0.0 <= self.alpha_mem <= 1.0:
            raise ValueError(f"alpha_mem must lie in [0, 1], got {self.alpha_mem}")
        if not self.v_th > 0.0:
            raise ValueError(f"v_th must be positive, got {self.v_th}")


@dataclass(frozen=True)
class SurrogateSpec:
    kind: str = "fast-sigmoid"
    slope: float = 10.0

    def __post_init__(self):
        if self.kind not in SURROGATE_KINDS:
            raise ValueError(f"unknown surrogate {self.kind!r}; expected one of {SURROGATE_KINDS}")
        if not self.slope > 0.0:
            raise ValueError(f"surrogate slope must be positive, got {self.slope}")


@dataclass
class LayerParams:
    """Weights of one fully connected LIF layer.

    ``w`` is ``[n_out, n_in]``; ``v`` (recurrent, ``[n_out, n_out]``) is
    present only for recurrent layers. A non-spiking layer is a leaky
    integrator used as the readout layer.
    """

    w: np.ndarray
    lif: LifParams
    v: Optional[np.ndarray] = None
    spiking: bool = True

    def __post_init__(self):
        self.w = np.asarray(self.w, dtype=np.float64)
        if self.w.ndim != 2:
            raise ValueError("w must be a matrix")
        if self.v is not None:
            self.v = np.asarray(self.v, dtype=np.float64)
            if self.v.shape != (self.n_out, self.n_out):
                raise ValueError(f"v must be {self.n_out}x{self.n_out}, got {self.v.shape}")
            if not self.spiking:
                raise ValueError("a non-spiking layer cannot carry recurrent weights")
        if not np.all(np.isfinite(self.w)) or (self.v is not None and not np.all(np.isfinite(self.v))):
            raise ValueError("layer weights must be finite")

    @property
    def n_in(self) -> int:
        return self.w.shape[1]

    @property
    def n_out(self) -> int:
        return self.w.shape[0]

    @property
    def recurrent(self) -> bool:
        return self.v is not None

    def copy(self) -> "LayerParams":
        return LayerParams(
            w=self.w.copy(), lif=self.lif, v=None if self.v is None else self.v.copy(), spiking=self.spiking
        )


@dataclass
class LayerState:
    current: np.ndarray
    potential: np.ndarray
    spikes: np.ndarray

    @classmethod
    def zeros(cls, n: int) -> "LayerState":
        return cls(np.zeros(n), np.zeros(n), np.zeros(n))


@dataclass
class SpikeTensor:
    """Time-major activity ``[T, channels]`` with non-negative entries."""

    data: np.ndarray

    def __post_init__(self):
        self.data = np.asarray(self.data, dtype=np.float64)
        if self.data.ndim != 2:
            raise ValueError(f"SpikeTensor data must be [T, channels], got shape {self.data.shape}")
        if self.data.shape[0] < 1:
            raise ValueError("SpikeTensor needs at least one timestep")
        if not np.all(np.isfinite(self.data)):
            raise ValueError("SpikeTensor entries must be finite")
        if np.any(self.data < 0):
            raise ValueError("SpikeTensor entries must be non-negative")

    @property
    def t_steps(self) -> int:
        return self.data.shape[0]

    @property
    def channels(self) -> int:
        return self.data.shape[1]


@dataclass
class Network:
    layers: list[LayerParams]
    readout_mode: str = "membrane-sum"
    surrogate: SurrogateSpec = field(default_factory=SurrogateSpec)

    def __post_init__(self):
        if not self.layers:
            raise ValueError("network needs at least one layer")
        if self.readout_mode not in READOUT_MODES:
            raise ValueError(f"unknown readout mode {self.readout_mode!r}")
        for prev, nxt in zip(self.layers, self.layers[1:]):
            if nxt.n_in != prev.n_out:
                raise ValueError(f"layer dimensions do not chain: {prev.n_out} -> {nxt.n_in}")
            if not prev.spiking:
                raise ValueError("only the last layer may be non-spiking")
        if self.readout_mode == "spike-count" and not self.layers[-1].spiking:
            raise ValueError("spike-count readout needs a spiking output layer")

    @property
    def n_inputs(self) -> int:
        return self.layers[0].n_in

    @property
    def n_classes(self) -> int:
        return self.layers[-1].n_out

    @property
    def recurrent(self) -> bool:
        return any(layer.recurrent for layer in self.layers)

    def copy(self) -> "Network":
        return Network([layer.copy() for layer in self.layers], self.readout_mode, self.surrogate)

    def with_lif(self, lif: LifParams) -> "Network":
        layers = [replace(layer.copy(), lif=lif) for layer in self.layers]
        return Network(layers, self.readout_mode, self.surrogate)


@dataclass
class LayerTrace:
    """Per-timestep record of one layer for a single sample."""

    inputs: np.ndarray  # [T, n_in]
    currents: np.ndarray  # [T, n_out]
    potentials: np.ndarray  # [T, n_out]
    spikes: np.ndarray  # [T, n_out]

    def __len__(self) -> int:
        return self.inputs.shape[0]

    def state(self, t: int) -> LayerState:
        return LayerState(self.currents[t].copy(), self.potentials[t].copy(), self.spikes[t].copy())


@dataclass(frozen=True)
class NetworkConfig:
    n_inputs: int
    hidden: tuple[int, ...]
    n_classes: int
    recurrent: bool = False
    lif: LifParams = field(default_factory=LifParams)
    surrogate: SurrogateSpec = field(default_factory=SurrogateSpec)
    readout_mode: str = "membrane-sum"
    output_spiking: bool = False


def surrogate_grad(u, spec: SurrogateSpec, v_th: float):
    """Pseudo-derivative of the spike step at potential ``u`` (array-friendly)."""
    x = np.asarray(u, dtype=np.float64) - v_th
    if spec.kind == "fast-sigmoid":
        out = 1.0 / (1.0 + spec.slope * np.abs(x)) ** 2
    elif spec.kind == "rectangular":
        out = np.where(np.abs(x) < 0.5 / spec.slope, spec.slope, 0.0)
    else:
        sig = logistic(x * spec.slope)
        out = spec.slope * sig * (1.0 - sig)
    return float(out) if np.ndim(out) == 0 else out


def logistic(x):
    # split by sign so large |x| never overflows exp
    x = np.asarray(x, dtype=np.float64)
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def _check_finite(arr: np.ndarray, what: str) -> None:
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"non-finite values in {what}")


def _step(layer: LayerParams, cur, pot, prev_spk, x, soft_slope: Optional[float] = None):
    """One batched LIF update; returns ``(current, potential, spikes)``.

    The reset subtracts ``v_th`` where the previous step spiked. With
    ``soft_slope`` the spike becomes ``logistic((u - v_th) * slope)``.
    """
    lif = layer.lif
    cur = lif.alpha_syn * cur + x @ layer.w.T
    if layer.v is not None:
        cur = cur + prev_spk @ layer.v.T
    pot = lif.alpha_mem * pot + cur
    if layer.spiking and lif.refractory_subtract:
        pot = pot - lif.v_th * prev_spk
    if not layer.spiking:
        spk = np.zeros_like(pot)
    elif soft_slope is None:
        spk = (pot > lif.v_th).astype(np.float64)
    else:
        spk = logistic((pot - lif.v_th) * soft_slope)
    return cur, pot, spk


def lif_step(state: LayerState, params: LayerParams, input_spikes, prev_own_spikes=None) -> LayerState:
    input_spikes = np.asarray(input_spikes, dtype=np.float64)
    if input_spikes.shape != (params.n_in,):
        raise ValueError(f"expected input of length {params.n_in}, got shape {input_spikes.shape}")
    if state.potential.shape != (params.n_out,):
        raise ValueError("state does not match layer size")
    _check_finite(input_spikes, "input spikes")
    prev = state.spikes if prev_own_spikes is None else np.asarray(prev_own_spikes, dtype=np.float64)
    if params.v is not None and prev.shape != (params.n_out,):
        raise ValueError("previous own spikes do not match layer size")
    # reset is gated by the layer's own previous spikes, recurrence by prev_own_spikes
    lif = params.lif
    cur = lif.alpha_syn * state.current + params.w @ input_spikes
    if params.v is not None:
        cur = cur + params.v @ prev
    pot = lif.alpha_mem * state.potential + cur
    if params.spiking and lif.refractory_subtract:
        pot = pot - lif.v_th * state.spikes
    spk = (pot > lif.v_th).astype(np.float64) if params.spiking else np.zeros_like(pot)
    return LayerState(cur, pot, spk)


@dataclass
class BatchTrace:
    """Batched per-layer record, arrays shaped ``[T, B, n]``."""

    inputs: np.ndarray
    currents: np.ndarray
    potentials: np.ndarray
    spikes: np.ndarray

    @property
    def n_elements(self) -> int:
        return self.inputs.size + self.currents.size + self.potentials.size + self.spikes.size

    def sample(self, b: int) -> LayerTrace:
        return LayerTrace(self.inputs[:, b], self.currents[:, b], self.potentials[:, b], self.spikes[:, b])


def as_batch(x) -> np.ndarray:
    """Coerce a SpikeTensor, ``[T, C]`` or ``[B, T, C]`` input into ``[T, B, C]``."""
    if isinstance(x, SpikeTensor):
        x = x.data
    x = np.asarray(x, dtype=np.float64)
    if x.ndim == 2:
        return x[:, None, :]
    if x.ndim == 3:
        return np.ascontiguousarray(x.transpose(1, 0, 2))
    raise ValueError(f"cannot interpret input of shape {x.shape}")


def readout(net: Network, traces_or_pot: np.ndarray, spikes: Optional[np.ndarray] = None) -> np.ndarray:
    if net.readout_mode == "membrane-sum":
        return traces_or_pot.sum(axis=0)
    return spikes.sum(axis=0)


def simulate(net: Network, xb: np.ndarray, record: bool = False, soft: bool = False):
    """Run the network over a batch ``xb`` of shape ``[T, B, C]``.

    Returns ``(scores [B, K], traces)``; ``traces`` is a list of BatchTrace
    when ``record`` is set, else None.
    """
    T, B, C = xb.shape
    if C != net.n_inputs:
        raise ValueError(f"input has {C} channels, network expects {net.n_inputs}")
    _check_finite(xb, "input")
    slope = net.surrogate.slope if soft else None
    traces = [] if record else None
    layer_in = xb
    for layer in net.layers:
        n = layer.n_out
        cur = np.zeros((B, n))
        pot = np.zeros((B, n))
        spk = np.zeros((B, n))
        if record:
            rec_c = np.empty((T, B, n))
            rec_u = np.empty((T, B, n))
            rec_s = np.empty((T, B, n))
        else:
            out_u = np.empty((T, B, n))
            out_s = np.empty((T, B, n))
        for t in range(T):
            cur, pot, spk = _step(layer, cur, pot, spk, layer_in[t], slope)
            if record:
                rec_c[t], rec_u[t], rec_s[t] = cur, pot, spk
            else:
                out_u[t], out_s[t] = pot, spk
        if record:
            traces.append(BatchTrace(layer_in, rec_c, rec_u, rec_s))
            out_u, out_s = rec_u, rec_s
        layer_in = out_s
    scores = readout(net, out_u, out_s)
    return scores, traces


def forward(net: Network, input: SpikeTensor, record: bool = False):
    """Class scores for one sample; with ``record`` also per-layer traces."""
    if not isinstance(input, SpikeTensor):
        input = SpikeTensor(input)
    scores, traces = simulate(net, as_batch(input), record=record)
    if not record:
        return scores[0], None
    return scores[0], [tr.sample(0) for tr in traces]


def forward_soft(net: Network, input: SpikeTensor) -> np.ndarray:
    """Differentiable variant of :func:`forward` with logistic spikes."""
    if not isinstance(input, SpikeTensor):
        input = SpikeTensor(input)
    scores, _ = simulate(net, as_batch(input), soft=True)
    return scores[0]


def layer_sizes(config: NetworkConfig) -> list[int]:
    return [config.n_inputs, *config.hidden, config.n_classes]


def init_network(config: NetworkConfig, seed: int) -> Network:
    """Uniform(-1/sqrt(n_in), 1/sqrt(n_in)) weights, reproducible by seed.

    Recurrent matrices are added to hidden layers only; the readout layer
    is a leaky integrator unless ``output_spiking`` is set.
    """
    sizes = layer_sizes(config)
    if any(int(n) <= 0 for n in sizes):
        raise ValueError(f"layer sizes must be positive, got {sizes}")
    rng = np.random.default_rng(seed)
    layers = []
    n_layers = len(sizes) - 1
    for i, (n_in, n_out) in enumerate(zip(sizes, sizes[1:])):
        is_out = i == n_layers - 1
        k = 1.0 / np.sqrt(n_in)
        w = rng.uniform(-k, k, size=(n_out, n_in))
        v = None
        if config.recurrent and not is_out:
            kv = 1.0 / np.sqrt(n_out)
            v = rng.uniform(-kv, kv, size=(n_out, n_out))
        spiking = config.output_spiking if is_out else True
        layers.append(LayerParams(w=w, lif=config.lif, v=v, spiking=spiking))
    return Network(layers, readout_mode=config.readout_mode, surrogate=config.surrogate)


def predict(net: Network, x, batch_size: int = 256) -> np.ndarray:
    """Argmax class for each sample of an ``[N, T, C]`` array."""
    x = np.asarray(x, dtype=np.float64)
    out = []
    for start in range(0, len(x), batch_size):
        scores, _ = simulate(net, as_batch(x[start : start + batch_size]))
        out.append(np.argmax(scores, axis=1))
    return np.concatenate(out) if out else np.zeros(0, dtype=int)


def accuracy(net: Network, x, y) -> float:
    if len(y) == 0:
        return float("nan")
    return float(np.mean(predict(net, x) == np.asarray(y)))


def spike_representation(traces: Sequence[BatchTrace], layer: int, source: str = "spikes") -> np.ndarray:
    """Batch-major ``[B, T * n]`` block of one layer's activity concatenated over time."""
    tr = traces[layer]
    arr = tr.spikes if source == "spikes" else tr.potentials
    T, B, n = arr.shape
    return arr.transpose(1, 0, 2).reshape(B, T * n)
