"""Datasets: CIFAR-10/100 binary records and a synthetic patterned set."""

from __future__ import annotations

import math
import os
from dataclasses import dataclass, field

import numpy as np
import torch
import torch.nn.functional as F

from .errors import ConfigError, FormatError
from .model import ImageBatch
from .rng import substream

CIFAR_PIXELS = 3 * 32 * 32
_CIFAR_FILES = {
    ("cifar10_bin", "train"): [f"data_batch_{i}.bin" for i in range(1, 6)],
    ("cifar10_bin", "test"): ["test_batch.bin"],
    ("cifar100_bin", "train"): ["train.bin"],
    ("cifar100_bin", "test"): ["test.bin"],
}


@dataclass
class Dataset:
    pixels: torch.Tensor  # float32 [N, C, H, W] in [0, 1]
    labels: torch.Tensor  # int64 [N]
    num_classes: int

    def __len__(self):
        return self.labels.shape[0]

    def batch(self, index) -> ImageBatch:
        return ImageBatch(self.pixels[index], self.labels[index])

    def take(self, n: int) -> "Dataset":
        return Dataset(self.pixels[:n], self.labels[:n], self.num_classes)


@dataclass(frozen=True)
class SyntheticParams:
    num_classes: int = 10
    image_size: int = 32
    channels: int = 3
    samples: int = 1000
    noise: float = 0.1
    pattern_grid: int = 4
    seed: int = 0

    def __post_init__(self):
        if self.num_classes < 2:
            raise ConfigError("synthetic data needs at least 2 classes")
        if self.samples < 1 or self.image_size < 1 or self.channels < 1:
            raise ConfigError("samples, image_size and channels must be positive")
        if not 0.0 <= self.noise <= 1.0:
            raise ConfigError("noise must lie in [0, 1]")


@dataclass(frozen=True)
class DatasetSource:
    kind: str = "synthetic"
    path: str | None = None
    split: str = "train"
    subset_fraction: float = 1.0
    synthetic: SyntheticParams = field(default_factory=SyntheticParams)

    def __post_init__(self):
        if self.kind not in ("cifar10_bin", "cifar100_bin", "synthetic"):
            raise ConfigError(f"unknown dataset kind {self.kind!r}")
        if self.split not in ("train", "test"):
            raise ConfigError(f"unknown split {self.split!r}")
        if not 0.0 < self.subset_fraction <= 1.0:
            raise ConfigError("subset_fraction must lie in (0, 1]")


def parse_cifar_records(raw: bytes, label_bytes: int, num_classes: int, origin: int = 0):
    """Decode concatenated CIFAR records into (uint8 [N,3,32,32], int64 [N]).

    CIFAR-100 records carry (coarse, fine) labels; the fine label is the last
    label byte and is the one kept.
    """
    record = label_bytes + CIFAR_PIXELS
    if len(raw) % record:
        bad = len(raw) - len(raw) % record
        raise FormatError(
            f"truncated CIFAR file: {len(raw)} bytes is not a multiple of the {record}-byte record",
            origin + bad,
        )
    arr = np.frombuffer(raw, dtype=np.uint8).reshape(-1, record)
    labels = arr[:, label_bytes - 1].astype(np.int64)
    bad = np.flatnonzero(labels >= num_classes)
    if bad.size:
        i = int(bad[0])
        raise FormatError(
            f"label {labels[i]} out of range [0, {num_classes})", origin + i * record + label_bytes - 1
        )
    return arr[:, label_bytes:].reshape(-1, 3, 32, 32), labels


def _resolve_files(source: DatasetSource) -> list[str]:
    if source.path is None:
        raise ConfigError(f"{source.kind} needs data.path")
    if os.path.isdir(source.path):
        files = [os.path.join(source.path, f) for f in _CIFAR_FILES[(source.kind, source.split)]]
    else:
        files = [source.path]
    missing = [f for f in files if not os.path.exists(f)]
    if missing:
        raise ConfigError(f"dataset files not found: {missing}")
    return files


def _subset(ds: Dataset, fraction: float, seed: int) -> Dataset:
    if fraction >= 1.0:
        return ds
    n = max(1, math.ceil(len(ds) * fraction))
    keep = torch.randperm(len(ds), generator=substream(seed, "subset"))[:n].sort().values
    return Dataset(ds.pixels[keep], ds.labels[keep], ds.num_classes)


def load_cifar(source: DatasetSource) -> Dataset:
    label_bytes, num_classes = (1, 10) if source.kind == "cifar10_bin" else (2, 100)
    images, labels = [], []
    for path in _resolve_files(source):
        with open(path, "rb") as fh:
            raw = fh.read()
        try:
            x, y = parse_cifar_records(raw, label_bytes, num_classes)
        except FormatError as exc:
            err = FormatError(f"{path}: {exc.args[0]}")
            err.offset = exc.offset
            raise err from None
        images.append(x)
        labels.append(y)
    pixels = torch.from_numpy(np.concatenate(images)).to(torch.float32) / 255.0
    ds = Dataset(pixels, torch.from_numpy(np.concatenate(labels)), num_classes)
    return _subset(ds, source.subset_fraction, source.synthetic.seed)


def gen_synthetic(params: SyntheticParams, split: str = "train") -> Dataset:
    """Class-conditional patterns plus uniform noise.

    Each class gets a random blocky base pattern in [0.2, 0.8] (a
    ``pattern_grid``-square grid upsampled to the image); a sample is
    ``clamp(base + noise * U(-1, 1), 0, 1)``. Labels cycle through the classes.
    Splits share the class patterns and differ in labels order and noise.
    """
    g, s = params.pattern_grid, params.image_size
    coarse = 0.2 + 0.6 * torch.rand(
        (params.num_classes, params.channels, g, g),
        generator=substream(params.seed, "synthetic", "patterns"),
        dtype=torch.float64,
    )
    gen = substream(params.seed, "synthetic", split)
    bases = F.interpolate(coarse, size=(s, s), mode="nearest")
    labels = torch.arange(params.samples, dtype=torch.int64) % params.num_classes
    labels = labels[torch.randperm(params.samples, generator=gen)]
    noise = 2.0 * torch.rand((params.samples, params.channels, s, s), generator=gen, dtype=torch.float64) - 1.0
    pixels = (bases[labels] + params.noise * noise).clamp(0.0, 1.0)
    return Dataset(pixels.to(torch.float32), labels, params.num_classes)


def load_dataset(source: DatasetSource) -> Dataset:
    if source.kind == "synthetic":
        if source.path is not None:
            ds = load_npz(source.path)
        else:
            ds = gen_synthetic(source.synthetic, source.split)
        return _subset(ds, source.subset_fraction, source.synthetic.seed)
    return load_cifar(source)


def save_npz(ds: Dataset, path: str) -> None:
    np.savez(path, pixels=ds.pixels.numpy(), labels=ds.labels.numpy(), num_classes=ds.num_classes)


def load_npz(path: str) -> Dataset:
    if not os.path.exists(path):
        raise ConfigError(f"dataset file not found: {path}")
    with np.load(path) as z:
        return Dataset(
            torch.from_numpy(z["pixels"]).to(torch.float32),
            torch.from_numpy(z["labels"]).to(torch.int64),
            int(z["num_classes"]),
        )


def iter_batches(ds: Dataset, batch_size: int, generator: torch.Generator | None = None):
    """Yield ImageBatches; shuffled when a generator is given. Keeps the ragged tail."""
    n = len(ds)
    order = torch.randperm(n, generator=generator) if generator is not None else torch.arange(n)
    for start in range(0, n, batch_size):
        yield ds.batch(order[start:start + batch_size])


def num_batches(ds: Dataset, batch_size: int) -> int:
    return math.ceil(len(ds) / batch_size)
