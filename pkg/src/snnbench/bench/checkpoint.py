"""Versioned binary model checkpoints with a JSON metadata sidecar.

Layout: 8-byte magic ``SNNBCKPT``, little-endian uint16 format version,
uint16 reserved, uint64 payload length, then an ``.npz`` archive with the
weight arrays and any fixed feedback or readout matrices. The sidecar
``<file>.json`` describes layer structure, neuron parameters and the
experiment config that produced the model.
"""

from __future__ import annotations

import io
import json
import struct
from pathlib import Path
from typing import Any, Optional

import numpy as np

from ..core import LayerParams, LifParams, Network, SurrogateSpec
from ..decolle import LocalReadout
from ..eprop import FeedbackMatrices

MAGIC = b"SNNBCKPT"
FORMAT_VERSION = 1
_HEADER = struct.Struct("<8sHHQ")


class CheckpointError(ValueError):
    pass


def sidecar_path(path) -> Path:
    path = Path(path)
    return path.with_name(path.name + ".json")


def save_checkpoint(path, net: Network, context=None, metadata: Optional[dict] = None) -> Path:
    path = Path(path)
    arrays = {}
    layers = []
    for i, layer in enumerate(net.layers):
        arrays[f"w{i}"] = layer.w
        if layer.v is not None:
            arrays[f"v{i}"] = layer.v
        lif = layer.lif
        layers.append(
            {
                "n_in": layer.n_in,
                "n_out": layer.n_out,
                "recurrent": layer.v is not None,
                "spiking": layer.spiking,
                "alpha_syn": lif.alpha_syn,
                "alpha_mem": lif.alpha_mem,
                "v_th": lif.v_th,
                "refractory_subtract": lif.refractory_subtract,
            }
        )
    ctx: dict[str, Any] = {"kind": None}
    if isinstance(context, FeedbackMatrices):
        ctx = {"kind": "feedback", "mode": context.mode, "count": len(context.g)}
        for i, g in enumerate(context.g):
            arrays[f"fb{i}"] = g
    elif isinstance(context, list) and context and isinstance(context[0], LocalReadout):
        ctx = {"kind": "readouts", "sources": [r.source for r in context]}
        for i, r in enumerate(context):
            arrays[f"ro{i}"] = r.g
    buf = io.BytesIO()
    np.savez(buf, **arrays)
    payload = buf.getvalue()
    path.write_bytes(_HEADER.pack(MAGIC, FORMAT_VERSION, 0, len(payload)) + payload)
    meta = {
        "format_version": FORMAT_VERSION,
        "layers": layers,
        "readout_mode": net.readout_mode,
        "surrogate": {"kind": net.surrogate.kind, "slope": net.surrogate.slope},
        "context": ctx,
        "metadata": metadata or {},
    }
    sidecar_path(path).write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n")
    return path


def load_checkpoint(path):
    """Returns ``(Network, context, metadata)``."""
    path = Path(path)
    raw = path.read_bytes()
    if len(raw) < _HEADER.size:
        raise CheckpointError(f"{path}: file too short for a checkpoint header")
    magic, version, _, n = _HEADER.unpack_from(raw)
    if magic != MAGIC:
        raise CheckpointError(f"{path}: not a model checkpoint (bad magic)")
    if version != FORMAT_VERSION:
        raise CheckpointError(f"{path}: unsupported checkpoint version {version}")
    payload = raw[_HEADER.size :]
    if len(payload) != n:
        raise CheckpointError(f"{path}: truncated payload ({len(payload)} of {n} bytes)")
    side = sidecar_path(path)
    if not side.exists():
        raise CheckpointError(f"{path}: missing metadata sidecar {side.name}")
    meta = json.loads(side.read_text())
    arrays = np.load(io.BytesIO(payload))
    layers = []
    for i, spec in enumerate(meta["layers"]):
        lif = LifParams(spec["alpha_syn"], spec["alpha_mem"], spec["v_th"], spec.get("refractory_subtract", True))
        v = arrays[f"v{i}"] if spec["recurrent"] else None
        layers.append(LayerParams(w=arrays[f"w{i}"].copy(), lif=lif, v=None if v is None else v.copy(), spiking=spec["spiking"]))
    sur = meta["surrogate"]
    net = Network(layers, readout_mode=meta["readout_mode"], surrogate=SurrogateSpec(sur["kind"], sur["slope"]))
    ctx = meta["context"]
    context = None
    if ctx["kind"] == "feedback":
        context = FeedbackMatrices([arrays[f"fb{i}"].copy() for i in range(ctx["count"])], ctx["mode"])
    elif ctx["kind"] == "readouts":
        context = [LocalReadout(arrays[f"ro{i}"].copy(), source=src) for i, src in enumerate(ctx["sources"])]
    return net, context, meta["metadata"]
