"""Experiment configuration, YAML serialization and hyperparameter presets."""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Optional

import yaml

from ..core import LifParams, NetworkConfig, SurrogateSpec

METHODS = ("bptt", "eprop", "decolle")
ARCHITECTURES = ("FF", "REC")


class ConfigError(ValueError):
    pass


@dataclass
class TaskSpec:
    """Where samples come from.

    ``kind="synthetic"`` generates the template task; ``kind="events"``
    reads a dataset manifest (see :func:`snnbench.data.load_manifest`).
    ``seed=None`` draws a fresh synthetic task per run seed.
    """

    kind: str = "synthetic"
    classes: int = 2
    n_train_per_class: int = 100
    n_test_per_class: int = 50
    T: int = 20
    channels: int = 256
    jitter: float = 0.05
    rate: float = 0.15
    seed: Optional[int] = None
    manifest: Optional[str] = None


@dataclass
class AttackSpec:
    fgsm_epsilons: list[float] = field(default_factory=list)
    fgsm_mode: str = "ann-counterpart"
    poison_rates: list[float] = field(default_factory=list)
    poison_plans: int = 5
    trigger_grid_width: Optional[int] = None


@dataclass
class AnalysisSpec:
    cka: bool = False
    cka_batch_size: int = 128
    cka_source: str = "spikes"
    fisher: bool = False
    fisher_y_mode: str = "sample"
    fisher_samples: int = 64
    fisher_steps: list[int] = field(default_factory=list)
    fisher_normalize: str = "final"


@dataclass
class ExperimentConfig:
    name: str = "experiment"
    method: str = "bptt"
    architecture: str = "FF"
    task: TaskSpec = field(default_factory=TaskSpec)
    hidden: list[int] = field(default_factory=lambda: [120, 84])
    alpha_syn: float = 0.9
    alpha_mem: float = 0.5
    v_th: float = 0.9
    surrogate: str = "fast-sigmoid"
    surrogate_slope: float = 10.0
    readout_mode: str = "membrane-sum"
    output_spiking: bool = False
    loss: str = "softmax-cross-entropy"
    optimizer: str = "sgd"
    lr: float = 1e-3
    batch_size: int = 16
    epochs: int = 100
    seeds: list[int] = field(default_factory=lambda: [0, 1, 2, 3, 4])
    feedback_mode: str = "random-fixed"
    error_mode: str = "per-step"
    decolle_online: bool = True
    analysis: AnalysisSpec = field(default_factory=AnalysisSpec)
    attacks: AttackSpec = field(default_factory=AttackSpec)

    def validate(self) -> "ExperimentConfig":
        if self.method not in METHODS:
            raise ConfigError(f"unknown method {self.method!r}; expected one of {METHODS}")
        if self.architecture not in ARCHITECTURES:
            raise ConfigError(f"unknown architecture {self.architecture!r}; expected FF or REC")
        if self.task.kind not in ("synthetic", "events"):
            raise ConfigError(f"unknown task kind {self.task.kind!r}")
        if self.task.kind == "events" and not self.task.manifest:
            raise ConfigError("an events task needs a manifest path")
        if self.epochs < 0 or self.batch_size <= 0:
            raise ConfigError("epochs must be >= 0 and batch_size > 0")
        if not self.seeds:
            raise ConfigError("at least one seed is required")
        try:
            self.lif()
            SurrogateSpec(self.surrogate, self.surrogate_slope)
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc
        return self

    def lif(self) -> LifParams:
        return LifParams(self.alpha_syn, self.alpha_mem, self.v_th)

    def network_config(self, n_inputs: int, n_classes: int) -> NetworkConfig:
        # recurrence is added to hidden layers only, so e-prop's readout never has v
        return NetworkConfig(
            n_inputs=n_inputs,
            hidden=tuple(int(h) for h in self.hidden),
            n_classes=n_classes,
            recurrent=self.architecture == "REC",
            lif=self.lif(),
            surrogate=SurrogateSpec(self.surrogate, self.surrogate_slope),
            readout_mode=self.readout_mode,
            output_spiking=self.output_spiking,
        )

    def to_dict(self) -> dict[str, Any]:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> "ExperimentConfig":
        d = dict(d)
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        task = TaskSpec(**d.pop("task", {}) or {})
        analysis = AnalysisSpec(**d.pop("analysis", {}) or {})
        attacks = AttackSpec(**d.pop("attacks", {}) or {})
        return cls(task=task, analysis=analysis, attacks=attacks, **d)


def load_config(path) -> ExperimentConfig:
    try:
        raw = yaml.safe_load(Path(path).read_text())
    except yaml.YAMLError as exc:
        raise ConfigError(f"{path}: {exc}") from exc
    raw = raw or {}
    base = {}
    if "preset" in raw:
        base = preset(raw.pop("preset")).to_dict()
    return ExperimentConfig.from_dict(_merge(base, raw)).validate()


def save_config(config: ExperimentConfig, path) -> None:
    Path(path).write_text(dump_config(config))


def dump_config(config: ExperimentConfig) -> str:
    return yaml.safe_dump(config.to_dict(), sort_keys=False)


def _merge(base: dict, override: dict) -> dict:
    out = dict(base)
    for k, v in override.items():
        if isinstance(v, dict) and isinstance(out.get(k), dict):
            out[k] = _merge(out[k], v)
        else:
            out[k] = v
    return out


def apply_overrides(config: ExperimentConfig, assignments: list[str]) -> ExperimentConfig:
    """Apply ``key=value`` overrides; dotted keys reach nested sections."""
    d = config.to_dict()
    for item in assignments:
        if "=" not in item:
            raise ConfigError(f"override {item!r} is not key=value")
        key, value = item.split("=", 1)
        parts = key.split(".")
        node = d
        for p in parts[:-1]:
            if p not in node or not isinstance(node[p], dict):
                raise ConfigError(f"unknown config section {p!r}")
            node = node[p]
        if parts[-1] not in node:
            raise ConfigError(f"unknown config key {key!r}")
        node[parts[-1]] = yaml.safe_load(value)
    return ExperimentConfig.from_dict(d).validate()


# (alpha_syn, alpha_mem, v_th, lr, batch size, epochs) per dataset / method / architecture
_TABLE = {
    "nmnist": {
        ("bptt", "FF"): (0.9, 0.5, 0.9, 1e-4, 16, 100),
        ("eprop", "FF"): (0.99, 0.95, 0.2, 5e-3, 5, 100),
        ("decolle", "FF"): (0.97, 0.92, 1.0, 1e-3, 72, 100),
        ("bptt", "REC"): (0.9, 0.5, 0.9, 1e-2, 256, 100),
        ("eprop", "REC"): (0.99, 0.95, 0.2, 5e-3, 4, 100),
        ("decolle", "REC"): (0.97, 0.92, 1.0, 1e-5, 72, 100),
    },
    "dvs": {
        ("bptt", "FF"): (0.9, 0.5, 1.0, 1e-3, 16, 100),
        ("eprop", "FF"): (0.95, 0.65, 0.3, 1e-3, 15, 100),
        ("decolle", "FF"): (0.9, 0.65, 0.9, 2e-4, 72, 100),
        ("bptt", "REC"): (0.95, 0.5, 0.9, 1e-3, 32, 100),
        ("eprop", "REC"): (0.95, 0.6, 0.7, 3e-3, 15, 100),
        ("decolle", "REC"): (0.05, 0.2, 1.0, 3e-5, 72, 100),
    },
    "timit": {
        ("bptt", "FF"): (0.9, 0.5, 1.0, 1e-3, 8, 100),
        ("eprop", "FF"): (0.99, 0.3, 1.0, 5e-4, 4, 100),
        ("decolle", "FF"): (0.97, 0.9, 0.9, 2e-4, 128, 100),
        ("bptt", "REC"): (0.9, 0.7, 1.0, 1e-3, 8, 100),
        ("eprop", "REC"): (0.99, 0.3, 1.0, 5e-4, 4, 100),
        ("decolle", "REC"): (0.97, 0.3, 1.0, 1e-5, 32, 100),
    },
}

_DATASET_SHAPE = {
    # hidden sizes, T, pixel channels, classes
    "nmnist": ([120, 84], 60, 34 * 34, 10),
    "dvs": ([512], 60, 128 * 128, 11),
    "timit": ([400], 60, None, None),
}

# desk-scale synthetic task: the same lr for every rule, tuned on a small grid
_SYNTH = {
    ("bptt", "FF"): 3e-3,
    ("eprop", "FF"): 3e-3,
    ("decolle", "FF"): 3e-3,
    ("bptt", "REC"): 3e-3,
    ("eprop", "REC"): 3e-3,
    ("decolle", "REC"): 3e-3,
}


def preset_names() -> list[str]:
    names = []
    for ds in (*_TABLE, "synth"):
        for method in METHODS:
            for arch in ARCHITECTURES:
                names.append(f"{ds}-{method}-{arch.lower()}")
    return names


def preset(name: str) -> ExperimentConfig:
    """Configuration for ``{dataset}-{method}-{ff|rec}``."""
    parts = name.lower().split("-")
    if len(parts) != 3 or name.lower() not in preset_names():
        raise ConfigError(f"unknown preset {name!r}; available: {', '.join(preset_names())}")
    ds, method, arch = parts
    arch = arch.upper()
    if ds == "synth":
        return ExperimentConfig(
            name=name.lower(),
            method=method,
            architecture=arch,
            task=TaskSpec(),
            hidden=[120, 84],
            alpha_syn=0.9,
            alpha_mem=0.5,
            v_th=0.9,
            lr=_SYNTH[(method, arch)],
            batch_size=16,
            epochs=50,
        ).validate()
    a_syn, a_mem, v_th, lr, bs, epochs = _TABLE[ds][(method, arch)]
    hidden, T, channels, classes = _DATASET_SHAPE[ds]
    task = TaskSpec(kind="events", T=T, manifest=f"{ds}/manifest.json")
    if channels is not None:
        task.channels = channels
        task.classes = classes
    cfg = ExperimentConfig(
        name=name.lower(),
        method=method,
        architecture=arch,
        task=task,
        hidden=list(hidden),
        alpha_syn=a_syn,
        alpha_mem=a_mem,
        v_th=v_th,
        lr=lr,
        batch_size=bs,
        epochs=epochs,
    )
    return cfg.validate()
