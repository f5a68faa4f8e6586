"""Dataset container, on-disk format and the synthetic paired-channel generator.

On disk a dataset is a directory with ``manifest.json`` and ``data.bin``.
``data.bin`` is the magic ``MTSD``, a little-endian u32 format version, then
every sample's T x C values as little-endian float64 in manifest order.
Synthetic datasets also carry ``decomposition.bin`` (magic ``MTSS``, same
layout) holding the clean signal part of every sample; noise is
``values - signal``.

Random streams come from numpy's Philox counter-based generator.
"""

from __future__ import annotations

import json
import math
import struct
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from .snr import make_rng

DATA_MAGIC = b"MTSD"
SIGNAL_MAGIC = b"MTSS"
FORMAT_VERSION = 1
GENERATOR = "numpy-philox4x64"


class ConfigError(ValueError):
    pass


@dataclass
class Dataset:
    values: np.ndarray  # N x T x C
    labels: np.ndarray  # N
    subjects: list[str]
    num_classes: int
    signal: np.ndarray | None = None  # ground-truth clean part, synthetic data only

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if self.values.ndim != 3:
            raise ConfigError("values must be N x T x C")
        if len(self.labels) != len(self.values) or len(self.subjects) != len(self.values):
            raise ConfigError("values, labels and subjects disagree on sample count")
        if self.labels.size and (self.labels.min() < 0 or self.labels.max() >= self.num_classes):
            raise ConfigError("label outside [0, num_classes)")

    def __len__(self) -> int:
        return len(self.values)

    @property
    def steps(self) -> int:
        return self.values.shape[1]

    @property
    def channels(self) -> int:
        return self.values.shape[2]

    def subset(self, idx) -> "Dataset":
        idx = np.asarray(idx, dtype=np.int64)
        return Dataset(
            self.values[idx],
            self.labels[idx],
            [self.subjects[i] for i in idx],
            self.num_classes,
            None if self.signal is None else self.signal[idx],
        )

    @property
    def noise(self) -> np.ndarray:
        if self.signal is None:
            raise ValueError("dataset has no signal/noise decomposition")
        return self.values - self.signal


def _pack(magic: bytes, arr: np.ndarray) -> bytes:
    return magic + struct.pack("<I", FORMAT_VERSION) + np.ascontiguousarray(arr, dtype="<f8").tobytes()


def _unpack(raw: bytes, magic: bytes, shape, path) -> np.ndarray:
    if raw[:4] != magic:
        raise ConfigError(f"{path}: bad magic {raw[:4]!r}")
    (version,) = struct.unpack("<I", raw[4:8])
    if version != FORMAT_VERSION:
        raise ConfigError(f"{path}: unsupported format version {version}")
    body = np.frombuffer(raw[8:], dtype="<f8")
    if body.size != int(np.prod(shape)):
        raise ConfigError(f"{path}: expected {int(np.prod(shape))} values, found {body.size}")
    return body.astype(np.float64).reshape(shape)


def atomic_write(path: Path, data: bytes | str) -> None:
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    if isinstance(data, str):
        tmp.write_text(data, encoding="utf-8")
    else:
        tmp.write_bytes(data)
    tmp.replace(path)


def save_dataset(ds: Dataset, path) -> None:
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    n, steps, channels = ds.values.shape
    manifest = {
        "format_version": FORMAT_VERSION,
        "generator": GENERATOR,
        "num_classes": ds.num_classes,
        "T": steps,
        "C": channels,
        "samples": [{"label": int(l), "subject_id": s} for l, s in zip(ds.labels, ds.subjects)],
        "has_decomposition": ds.signal is not None,
    }
    atomic_write(path / "data.bin", _pack(DATA_MAGIC, ds.values))
    if ds.signal is not None:
        atomic_write(path / "decomposition.bin", _pack(SIGNAL_MAGIC, ds.signal))
    atomic_write(path / "manifest.json", json.dumps(manifest, indent=1) + "\n")


def load_dataset(path) -> Dataset:
    path = Path(path)
    manifest = json.loads((path / "manifest.json").read_text(encoding="utf-8"))
    if manifest.get("format_version") != FORMAT_VERSION:
        raise ConfigError(f"{path}: unsupported manifest version {manifest.get('format_version')}")
    shape = (len(manifest["samples"]), manifest["T"], manifest["C"])
    values = _unpack((path / "data.bin").read_bytes(), DATA_MAGIC, shape, path / "data.bin")
    signal = None
    if manifest.get("has_decomposition"):
        signal = _unpack((path / "decomposition.bin").read_bytes(), SIGNAL_MAGIC, shape, path / "decomposition.bin")
    return Dataset(
        values,
        [s["label"] for s in manifest["samples"]],
        [s["subject_id"] for s in manifest["samples"]],
        manifest["num_classes"],
        signal,
    )


@dataclass
class SyntheticSpec:
    """Classes separated by sinusoid frequencies, channels generated as correlated pairs.

    Channel ``p`` and channel ``p + C/2`` form a pair. The first channel of
    a pair carries a class template A (two sinusoids, unit variance), its
    partner ``rho*A + sqrt(1-rho^2)*B`` with B built on different
    frequencies, so the within-pair signal correlation over a window is
    exactly ``rho``. Templates are scaled to variance ``sigma_s2``; noise is
    white Gaussian with variance ``sigma_e2`` and within-pair correlation
    ``gamma``. Each subject gets its own template phases.
    """

    num_classes: int = 2
    subjects_per_class: int = 10
    samples_per_subject: int = 20
    steps: int = 64
    channels: int = 4
    sigma_s2: float = 0.25
    sigma_e2: float = 1.0
    rho: float = 0.0
    gamma: float = 0.9
    seed: int = 0

    def validate(self) -> None:
        if self.channels < 2 or self.channels % 2:
            raise ConfigError("channels must be even and >= 2")
        if self.sigma_s2 <= 0 or self.sigma_e2 < 0:
            raise ConfigError("sigma_s2 must be positive and sigma_e2 non-negative")
        if abs(self.rho) > 1 or abs(self.gamma) > 1:
            raise ConfigError("rho and gamma must lie in [-1, 1]")
        if self.num_classes < 2 or self.subjects_per_class < 1 or self.samples_per_subject < 1:
            raise ConfigError("need >= 2 classes and >= 1 subject and sample per class")
        if max(max(pair) for pair in class_frequencies(self.num_classes)) >= self.steps / 2:
            raise ConfigError(f"T={self.steps} too short for {self.num_classes} classes of distinct frequencies")

    def to_dict(self) -> dict:
        return asdict(self)


def class_frequencies(num_classes: int) -> list[tuple[int, int, int, int]]:
    """(A1, A2, B1, B2) cycles per window for each class; all distinct integers."""
    return [(2 + 4 * c, 3 + 4 * c, 4 + 4 * c, 5 + 4 * c) for c in range(num_classes)]


def _template(steps: int, f1: int, f2: int, ph1: float, ph2: float) -> np.ndarray:
    t = np.arange(steps) / steps
    return np.sin(2 * math.pi * f1 * t + ph1) + np.sin(2 * math.pi * f2 * t + ph2)


def generate_synthetic(spec: SyntheticSpec, seed: int | None = None) -> Dataset:
    spec.validate()
    rng = make_rng(spec.seed if seed is None else seed)
    pairs = spec.channels // 2
    freqs = class_frequencies(spec.num_classes)
    sig_scale = math.sqrt(spec.sigma_s2)
    noise_scale = math.sqrt(spec.sigma_e2)
    mix = math.sqrt(max(0.0, 1.0 - spec.rho * spec.rho))
    cross = math.sqrt(max(0.0, 1.0 - spec.gamma * spec.gamma))

    values, signals, labels, subjects = [], [], [], []
    for c in range(spec.num_classes):
        fa1, fa2, fb1, fb2 = freqs[c]
        for s in range(spec.subjects_per_class):
            phases = rng.uniform(0.0, 2 * math.pi, size=(pairs, 4))
            signal = np.empty((spec.steps, spec.channels))
            for p in range(pairs):
                a = _template(spec.steps, fa1, fa2, phases[p, 0], phases[p, 1])
                b = _template(spec.steps, fb1, fb2, phases[p, 2], phases[p, 3])
                signal[:, p] = sig_scale * a
                signal[:, p + pairs] = sig_scale * (spec.rho * a + mix * b)
            for _ in range(spec.samples_per_subject):
                z1 = rng.standard_normal((spec.steps, pairs))
                z2 = rng.standard_normal((spec.steps, pairs))
                noise = np.concatenate([z1, spec.gamma * z1 + cross * z2], axis=1) * noise_scale
                signals.append(signal)
                values.append(signal + noise)
                labels.append(c)
                subjects.append(f"c{c}s{s:03d}")
    return Dataset(np.stack(values), labels, subjects, spec.num_classes, np.stack(signals))


def fused_snr(ds: Dataset, n: int, a: float, b: float) -> tuple[float, float]:
    """(input SNR of the first channel, SNR of a*x[:n] + b*x[-n:]) from the stored decomposition."""
    sig, noise = ds.signal, ds.noise
    c = ds.channels
    fs = a * sig[:, :, :n] + b * sig[:, :, c - n:]
    fe = a * noise[:, :, :n] + b * noise[:, :, c - n:]
    snr_in = np.mean(sig[:, :, :n] ** 2) / np.mean(noise[:, :, :n] ** 2)
    return float(snr_in), float(np.mean(fs ** 2) / np.mean(fe ** 2))
