"""Dataset container, loaders, spike encoders and batching."""

from __future__ import annotations

import csv
import json
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Iterator, Optional

import numpy as np

from .core import SpikeTensor

IDX_IMAGES_MAGIC = 0x00000803
IDX_LABELS_MAGIC = 0x00000801
EVENT_CSV_HEADER = ("t", "channel", "polarity", "label")


class DataFormatError(ValueError):
    pass


@dataclass
class Dataset:
    """Uniformly shaped spike samples: ``x`` is ``[N, T, C]``, ``y`` is ``[N]``."""

    x: np.ndarray
    y: np.ndarray
    n_classes: int

    def __post_init__(self):
        self.x = np.asarray(self.x, dtype=np.float64)
        self.y = np.asarray(self.y, dtype=np.int64)
        if self.x.ndim != 3:
            raise ValueError(f"x must be [N, T, C], got {self.x.shape}")
        if self.y.shape != (self.x.shape[0],):
            raise ValueError("labels do not match sample count")
        if self.n_classes < 1:
            raise ValueError("n_classes must be positive")
        if self.y.size and (self.y.min() < 0 or self.y.max() >= self.n_classes):
            raise ValueError("labels out of range")
        if np.any(self.x < 0):
            raise ValueError("spike data must be non-negative")

    def __len__(self) -> int:
        return self.x.shape[0]

    def __getitem__(self, i: int) -> tuple[SpikeTensor, int]:
        return SpikeTensor(self.x[i]), int(self.y[i])

    @property
    def t_steps(self) -> int:
        return self.x.shape[1]

    @property
    def channels(self) -> int:
        return self.x.shape[2]

    def subset(self, idx) -> "Dataset":
        idx = np.asarray(idx, dtype=int)
        return Dataset(self.x[idx], self.y[idx], self.n_classes)

    def copy(self) -> "Dataset":
        return Dataset(self.x.copy(), self.y.copy(), self.n_classes)


def batches(data: Dataset, batch_size: int, shuffle_seed: Optional[int] = None) -> Iterator[tuple[np.ndarray, np.ndarray]]:
    """Yield ``(x [B, T, C], y [B])``; the final partial batch is included."""
    if batch_size <= 0:
        raise ValueError("batch_size must be positive")
    n = len(data)
    order = np.arange(n) if shuffle_seed is None else np.random.default_rng(shuffle_seed).permutation(n)
    for start in range(0, n, batch_size):
        idx = order[start : start + batch_size]
        yield data.x[idx], data.y[idx]


def load_idx_images(path) -> np.ndarray:
    """Read an IDX ubyte image file into ``[N, rows, cols]`` floats in [0, 1]."""
    raw = Path(path).read_bytes()
    if len(raw) < 16:
        raise DataFormatError(f"{path}: file too short for an IDX image header")
    magic, n, rows, cols = struct.unpack(">IIII", raw[:16])
    if magic != IDX_IMAGES_MAGIC:
        raise DataFormatError(f"{path}: bad magic 0x{magic:08x}, expected 0x{IDX_IMAGES_MAGIC:08x}")
    expected = n * rows * cols
    payload = raw[16:]
    if len(payload) < expected:
        raise DataFormatError(f"{path}: truncated payload ({len(payload)} of {expected} bytes)")
    arr = np.frombuffer(payload, dtype=np.uint8, count=expected).reshape(n, rows, cols)
    return arr.astype(np.float64) / 255.0


def load_idx_labels(path) -> np.ndarray:
    raw = Path(path).read_bytes()
    if len(raw) < 8:
        raise DataFormatError(f"{path}: file too short for an IDX label header")
    magic, n = struct.unpack(">II", raw[:8])
    if magic != IDX_LABELS_MAGIC:
        raise DataFormatError(f"{path}: bad magic 0x{magic:08x}, expected 0x{IDX_LABELS_MAGIC:08x}")
    if len(raw) - 8 < n:
        raise DataFormatError(f"{path}: truncated payload")
    return np.frombuffer(raw[8:], dtype=np.uint8, count=n).astype(np.int64)


def write_idx_images(path, images) -> None:
    images = np.asarray(images)
    n, rows, cols = images.shape
    data = np.clip(np.rint(images * 255.0), 0, 255).astype(np.uint8)
    Path(path).write_bytes(struct.pack(">IIII", IDX_IMAGES_MAGIC, n, rows, cols) + data.tobytes())


def load_events_csv(path, T: int, channels: int, n_classes: Optional[int] = None, clamp: bool = False) -> Dataset:
    """Bin an event CSV into a Dataset.

    Columns are ``sample,t,channel,polarity,label`` or, for a single-sample
    file, ``t,channel,polarity,label``. Polarity +1 maps to channel plane 0
    (``channel``) and -1 to plane 1 (``channels + channel``), so samples
    have ``2 * channels`` columns. Repeated events in a bin add up unless
    ``clamp`` is set.
    """
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = tuple(h.strip() for h in next(reader))
        except StopIteration:
            raise DataFormatError(f"{path}: empty event file") from None
        if header == EVENT_CSV_HEADER:
            has_sample = False
        elif header == ("sample", *EVENT_CSV_HEADER):
            has_sample = True
        else:
            raise DataFormatError(f"{path}: header must be {','.join(EVENT_CSV_HEADER)} (optionally prefixed by sample)")
        rows = [r for r in reader if r]

    samples: dict[int, np.ndarray] = {}
    labels: dict[int, int] = {}
    for lineno, row in enumerate(rows, start=2):
        try:
            vals = [int(v) for v in row]
        except ValueError:
            raise DataFormatError(f"{path}:{lineno}: non-integer field") from None
        if has_sample:
            sid, t, ch, pol, label = vals
        else:
            sid = 0
            t, ch, pol, label = vals
        if not 0 <= t < T:
            raise DataFormatError(f"{path}:{lineno}: t={t} outside [0, {T})")
        if not 0 <= ch < channels:
            raise DataFormatError(f"{path}:{lineno}: channel={ch} outside [0, {channels})")
        if pol not in (1, -1):
            raise DataFormatError(f"{path}:{lineno}: polarity must be +1 or -1")
        if label < 0 or (n_classes is not None and label >= n_classes):
            raise DataFormatError(f"{path}:{lineno}: label {label} out of range")
        if sid in labels and labels[sid] != label:
            raise DataFormatError(f"{path}:{lineno}: sample {sid} has conflicting labels")
        labels[sid] = label
        grid = samples.setdefault(sid, np.zeros((T, 2 * channels)))
        grid[t, ch if pol == 1 else channels + ch] += 1.0

    ids = sorted(samples)
    x = np.stack([samples[i] for i in ids]) if ids else np.zeros((0, T, 2 * channels))
    if clamp:
        x = np.minimum(x, 1.0)
    y = np.array([labels[i] for i in ids], dtype=np.int64)
    k = n_classes if n_classes is not None else (int(y.max()) + 1 if y.size else 1)
    return Dataset(x, y, k)


def events_from_dataset(data: Dataset) -> list[tuple[int, int, int, int, int, int]]:
    """Inverse of :func:`load_events_csv`: ``(sample, t, channel, polarity, label, count)`` records."""
    channels = data.channels // 2
    out = []
    for sid in range(len(data)):
        ts, cs = np.nonzero(data.x[sid])
        for t, c in zip(ts, cs):
            pol = 1 if c < channels else -1
            out.append((sid, int(t), int(c % channels), pol, int(data.y[sid]), int(data.x[sid, t, c])))
    return out


def write_events_csv(path, data: Dataset) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(("sample", *EVENT_CSV_HEADER))
        for sid, t, ch, pol, label, count in events_from_dataset(data):
            for _ in range(count):
                w.writerow((sid, t, ch, pol, label))


def load_manifest(path) -> dict:
    """Dataset manifest JSON: ``{"train": ..., "test": ..., "T": ..., "channels": ..., "class_names": [...]}``."""
    path = Path(path)
    manifest = json.loads(path.read_text())
    for key in ("T", "channels", "class_names"):
        if key not in manifest:
            raise DataFormatError(f"{path}: manifest missing {key!r}")
    return manifest


def load_manifest_datasets(path) -> tuple[Dataset, Optional[Dataset]]:
    path = Path(path)
    m = load_manifest(path)
    k = len(m["class_names"])
    train = load_events_csv(path.parent / m["train"], m["T"], m["channels"], n_classes=k, clamp=m.get("clamp", False))
    test = None
    if m.get("test"):
        test = load_events_csv(path.parent / m["test"], m["T"], m["channels"], n_classes=k, clamp=m.get("clamp", False))
    return train, test


def encode_poisson(image, T: int, max_rate: float = 1.0, seed: int = 0) -> SpikeTensor:
    """Bernoulli rate code: each step spikes with probability ``intensity * max_rate``."""
    image = np.asarray(image, dtype=np.float64).ravel()
    if not 0.0 <= max_rate <= 1.0:
        raise ValueError("max_rate must lie in [0, 1]")
    if np.any(image < 0) or np.any(image > 1):
        raise ValueError("intensities must lie in [0, 1]")
    rng = np.random.default_rng(seed)
    p = image * max_rate
    return SpikeTensor((rng.random((T, image.size)) < p).astype(np.float64))


def synth_pattern_dataset(
    classes: int,
    n_per_class: int,
    T: int,
    channels: int,
    jitter: float = 0.05,
    seed: int = 0,
    rate: float = 0.15,
) -> Dataset:
    """Spatiotemporal template task.

    Each class owns a random binary template ``[T, C]`` with firing
    probability ``rate``. Every sample drops each template spike with
    probability ``jitter`` and adds background spikes with probability
    ``jitter * rate / (1 - rate)``, which keeps the expected firing rate at
    ``rate``. Samples are ordered by class.
    """
    if min(classes, n_per_class, T, channels) <= 0:
        raise ValueError("dataset dimensions must be positive")
    if not 0.0 <= jitter <= 1.0:
        raise ValueError("jitter must lie in [0, 1]")
    if not 0.0 < rate < 1.0:
        raise ValueError("rate must lie in (0, 1)")
    rng = np.random.default_rng(seed)
    templates = (rng.random((classes, T, channels)) < rate).astype(np.float64)
    x = np.repeat(templates, n_per_class, axis=0)
    p_add = jitter * rate / (1.0 - rate) if rate < 1.0 else 0.0
    u = rng.random(x.shape)
    x = np.where(x > 0, (u >= jitter).astype(np.float64), (u < p_add).astype(np.float64))
    y = np.repeat(np.arange(classes), n_per_class)
    return Dataset(x, y, classes)


def synth_split(classes, n_train_per_class, n_test_per_class, T, channels, jitter=0.05, seed=0, rate=0.15):
    """Train/test split drawn from one set of templates."""
    full = synth_pattern_dataset(classes, n_train_per_class + n_test_per_class, T, channels, jitter, seed, rate)
    n = n_train_per_class + n_test_per_class
    train_idx = [c * n + i for c in range(classes) for i in range(n_train_per_class)]
    test_idx = [c * n + n_train_per_class + i for c in range(classes) for i in range(n_test_per_class)]
    return full.subset(train_idx), full.subset(test_idx)
