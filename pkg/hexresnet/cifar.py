"""
CIFAR-10 binary batch ingestion, splitting, normalization and augmentation.

Record layout: one label byte followed by 3072 pixel bytes (1024 R, 1024 G,
1024 B, each channel row-major), 3073 bytes per record, 10000 records per file.
"""

from __future__ import annotations

import logging
from collections import deque
from concurrent.futures import Future, ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Deque, Iterator, List, Optional, Sequence, Tuple, Union

import numpy as np

from .errors import ConfigError, DatasetError
from .tensor import derive_rng

logger = logging.getLogger(__name__)

IMAGE_SHAPE = (3, 32, 32)
PIXEL_BYTES = 3 * 32 * 32
RECORD_BYTES = 1 + PIXEL_BYTES
RECORDS_PER_FILE = 10_000
NUM_CLASSES = 10
CROP_PADDING = 4

TRAIN_FILES: Tuple[str, ...] = tuple(f"data_batch_{i}.bin" for i in range(1, 6))
TEST_FILE = "test_batch.bin"

# stream ids for derive_rng; nonzero so no stream equals make_rng(seed)
SPLIT_STREAM = 1
SHUFFLE_STREAM = 2
AUGMENT_STREAM = 3


@dataclass(frozen=True)
class CifarRecord:
    label: int
    pixels: np.ndarray  # (3, 32, 32) uint8

    def __post_init__(self) -> None:
        if not 0 <= self.label < NUM_CLASSES:
            raise DatasetError(f"label {self.label} outside 0..{NUM_CLASSES - 1}")
        if self.pixels.shape != IMAGE_SHAPE or self.pixels.dtype != np.uint8:
            raise DatasetError(f"pixels must be uint8 {IMAGE_SHAPE}, got {self.pixels.dtype} {self.pixels.shape}")

    def to_bytes(self) -> bytes:
        return bytes([self.label]) + self.pixels.tobytes()


@dataclass
class CifarDataset:
    images: np.ndarray  # (N, 3, 32, 32) uint8
    labels: np.ndarray  # (N,) uint8

    def __len__(self) -> int:
        return int(self.labels.shape[0])

    def record(self, index: int) -> CifarRecord:
        return CifarRecord(int(self.labels[index]), self.images[index])

    def records(self) -> Iterator[CifarRecord]:
        for i in range(len(self)):
            yield self.record(i)

    def subset(self, indices: Sequence[int]) -> "CifarDataset":
        idx = np.asarray(indices, dtype=np.int64)
        return CifarDataset(self.images[idx], self.labels[idx])

    @classmethod
    def concatenate(cls, parts: Sequence["CifarDataset"]) -> "CifarDataset":
        return cls(
            np.concatenate([p.images for p in parts]),
            np.concatenate([p.labels for p in parts]),
        )


@dataclass
class CifarSplits:
    train: CifarDataset
    test: CifarDataset


def parse_records(buffer: bytes, source: str = "<buffer>") -> CifarDataset:
    if len(buffer) % RECORD_BYTES != 0:
        raise DatasetError(f"{source}: {len(buffer)} bytes is not a whole number of {RECORD_BYTES}-byte records")
    raw = np.frombuffer(buffer, dtype=np.uint8).reshape(-1, RECORD_BYTES)
    labels = raw[:, 0].copy()
    bad = np.flatnonzero(labels >= NUM_CLASSES)
    if bad.size:
        raise DatasetError(f"{source}: record {int(bad[0])} has label {int(labels[bad[0]])} >= {NUM_CLASSES}")
    images = raw[:, 1:].reshape((-1,) + IMAGE_SHAPE).copy()
    return CifarDataset(images, labels)


def serialize_records(dataset: CifarDataset) -> bytes:
    """Inverse of :func:`parse_records`."""
    raw = np.empty((len(dataset), RECORD_BYTES), dtype=np.uint8)
    raw[:, 0] = dataset.labels
    raw[:, 1:] = dataset.images.reshape(len(dataset), PIXEL_BYTES)
    return raw.tobytes()


def load_batch_file(path: Path, records_per_file: int = RECORDS_PER_FILE) -> CifarDataset:
    if not path.is_file():
        raise DatasetError(f"missing CIFAR-10 batch file: {path}")
    expected = records_per_file * RECORD_BYTES
    size = path.stat().st_size
    if size != expected:
        raise DatasetError(f"size mismatch for {path}: {size} bytes, expected {expected}")
    return parse_records(path.read_bytes(), source=str(path))


def load_batches(directory: Union[str, Path], records_per_file: int = RECORDS_PER_FILE) -> CifarSplits:
    """Read data_batch_1..5.bin and test_batch.bin from ``directory``."""
    directory = Path(directory)
    train = CifarDataset.concatenate([load_batch_file(directory / name, records_per_file) for name in TRAIN_FILES])
    test = load_batch_file(directory / TEST_FILE, records_per_file)
    logger.info("Loaded CIFAR-10 from %s: %d train, %d test records", directory, len(train), len(test))
    return CifarSplits(train=train, test=test)


def make_synthetic_batches(
    directory: Union[str, Path],
    rng: np.random.Generator,
    records_per_file: int = RECORDS_PER_FILE,
    label_noise: float = 0.0,
) -> Path:
    """
    Write the six batch files with class-dependent synthetic images.

    Each class is a sinusoidal grating with its own orientation and
    frequency, drawn at a random phase and contrast over a random background
    colour with pixel noise. Colour carries no class information, so a network
    has to learn oriented filters. With ``label_noise`` > 0 that fraction of
    labels is redrawn uniformly, which keeps the achievable loss away from zero.
    """
    if not 0.0 <= label_noise <= 1.0:
        raise ValueError(f"label_noise must be in [0, 1], got {label_noise}")
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    angles = np.tile(np.arange(5) * np.pi / 8, 2)
    freqs = np.repeat([0.09, 0.18], 5)
    rows, cols = np.mgrid[0 : IMAGE_SHAPE[1], 0 : IMAGE_SHAPE[2]]
    for name in TRAIN_FILES + (TEST_FILE,):
        classes = rng.integers(0, NUM_CLASSES, size=records_per_file)
        phase = rng.uniform(0.0, 2 * np.pi, size=records_per_file)
        contrast = rng.uniform(20.0, 40.0, size=records_per_file)
        background = rng.uniform(64.0, 192.0, size=(records_per_file, 3))
        proj = rows * np.cos(angles[classes])[:, None, None] + cols * np.sin(angles[classes])[:, None, None]
        pattern = np.cos(2 * np.pi * freqs[classes][:, None, None] * proj + phase[:, None, None])
        noise = rng.normal(0.0, 32.0, size=(records_per_file,) + IMAGE_SHAPE)
        pixels = background[:, :, None, None] + contrast[:, None, None, None] * pattern[:, None] + noise
        images = np.clip(pixels, 0, 255).astype(np.uint8)
        flipped = rng.random(records_per_file) < label_noise
        labels = np.where(flipped, rng.integers(0, NUM_CLASSES, size=records_per_file), classes).astype(np.uint8)
        (directory / name).write_bytes(serialize_records(CifarDataset(images, labels)))
    return directory


@dataclass(frozen=True)
class SplitSpec:
    """Seeded train/validation partition of the 50k training records."""

    train: int = 45_000
    validation: int = 5_000
    seed: int = 0

    def __post_init__(self) -> None:
        if self.train < 1 or self.validation < 0:
            raise ConfigError(f"invalid split sizes train={self.train} validation={self.validation}")


def split_train_validation(dataset: CifarDataset, spec: SplitSpec) -> Tuple[CifarDataset, CifarDataset]:
    """Disjoint (train, validation) subsets; the partition depends on ``spec.seed`` only."""
    if spec.train + spec.validation > len(dataset):
        raise ConfigError(
            f"split needs {spec.train + spec.validation} records, dataset has {len(dataset)}"
        )
    order = derive_rng(spec.seed, SPLIT_STREAM).permutation(len(dataset))
    validation = order[: spec.validation]
    train = order[spec.validation: spec.validation + spec.train]
    return dataset.subset(train), dataset.subset(validation)


def compute_channel_stats(images: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """Per-channel mean and standard deviation on the 0-1 pixel scale."""
    scaled = images.astype(np.float64) / 255.0
    return scaled.mean(axis=(0, 2, 3)), scaled.std(axis=(0, 2, 3))


def _safe_std(stds: np.ndarray) -> np.ndarray:
    stds = np.asarray(stds, dtype=np.float64)
    return np.where(stds > 0, stds, 1.0)


def standardize(images: np.ndarray, means: Sequence[float], stds: Sequence[float]) -> np.ndarray:
    """(x / 255 - mean) / std per channel, float32. Channels with zero spread are only centred."""
    means = np.asarray(means, dtype=np.float64).reshape(1, 3, 1, 1)
    stds = _safe_std(stds).reshape(1, 3, 1, 1)
    return ((images.astype(np.float64) / 255.0 - means) / stds).astype(np.float32)


def augment(
    record: Union[CifarRecord, np.ndarray],
    rng: np.random.Generator,
    means: Sequence[float],
    stds: Sequence[float],
    offset: Optional[Tuple[int, int]] = None,
    flip: Optional[bool] = None,
) -> np.ndarray:
    """
    Zero-pad to 40x40, crop 32x32 at ``offset`` (random if None), flip
    horizontally with probability 1/2 (or as forced), then standardize.
    """
    pixels = record.pixels if isinstance(record, CifarRecord) else record
    if offset is None:
        offset = tuple(int(v) for v in rng.integers(0, 2 * CROP_PADDING + 1, size=2))  # type: ignore[assignment]
    if flip is None:
        flip = bool(rng.random() < 0.5)
    dy, dx = offset  # type: ignore[misc]
    if not (0 <= dy <= 2 * CROP_PADDING and 0 <= dx <= 2 * CROP_PADDING):
        raise ValueError(f"crop offset {offset} outside 0..{2 * CROP_PADDING}")
    scaled = pixels.astype(np.float64) / 255.0
    padded = np.pad(scaled, ((0, 0), (CROP_PADDING, CROP_PADDING), (CROP_PADDING, CROP_PADDING)))
    crop = padded[:, dy:dy + 32, dx:dx + 32]
    if flip:
        crop = crop[:, :, ::-1]
    means_ = np.asarray(means, dtype=np.float64).reshape(3, 1, 1)
    stds_ = _safe_std(stds).reshape(3, 1, 1)
    return ((crop - means_) / stds_).astype(np.float32)


def augment_batch(
    images: np.ndarray,
    rng: np.random.Generator,
    means: Sequence[float],
    stds: Sequence[float],
) -> np.ndarray:
    """Vectorized :func:`augment` over a (N, 3, 32, 32) uint8 batch."""
    n = images.shape[0]
    offsets = rng.integers(0, 2 * CROP_PADDING + 1, size=(n, 2))
    flips = rng.random(n) < 0.5
    p = CROP_PADDING
    padded = np.pad(images.astype(np.float32) / 255.0, ((0, 0), (0, 0), (p, p), (p, p)))
    out = np.empty((n,) + IMAGE_SHAPE, dtype=np.float32)
    for i, ((dy, dx), flip) in enumerate(zip(offsets, flips)):
        crop = padded[i, :, dy:dy + 32, dx:dx + 32]
        out[i] = crop[:, :, ::-1] if flip else crop
    means_ = np.asarray(means, dtype=np.float32).reshape(1, 3, 1, 1)
    stds_ = _safe_std(stds).astype(np.float32).reshape(1, 3, 1, 1)
    return (out - means_) / stds_


class BatchLoader:
    """
    Mini-batch iterator over a dataset.

    Shuffling is a function of ``(seed, epoch)`` and augmentation of
    ``(seed, epoch, batch index)``, so batches do not depend on how many
    prefetch workers produce them.
    """

    def __init__(
        self,
        dataset: CifarDataset,
        batch_size: int,
        means: Sequence[float],
        stds: Sequence[float],
        seed: int = 0,
        shuffle: bool = True,
        augment: bool = True,
        workers: int = 0,
    ) -> None:
        if batch_size < 1:
            raise ConfigError(f"batch size must be at least 1, got {batch_size}")
        self.dataset = dataset
        self.batch_size = batch_size
        self.means = tuple(float(m) for m in means)
        self.stds = tuple(float(s) for s in stds)
        self.seed = seed
        self.shuffle = shuffle
        self.augment = augment
        self.workers = workers

    def __len__(self) -> int:
        return -(-len(self.dataset) // self.batch_size)

    def _order(self, epoch: int) -> np.ndarray:
        if self.shuffle:
            return derive_rng(self.seed, SHUFFLE_STREAM, epoch).permutation(len(self.dataset))
        return np.arange(len(self.dataset))

    def _make_batch(self, epoch: int, index: int, indices: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
        images = self.dataset.images[indices]
        labels = self.dataset.labels[indices].astype(np.int64)
        if self.augment:
            rng = derive_rng(self.seed, AUGMENT_STREAM, epoch, index)
            return augment_batch(images, rng, self.means, self.stds), labels
        return standardize(images, self.means, self.stds), labels

    def epoch(self, epoch: int) -> Iterator[Tuple[np.ndarray, np.ndarray]]:
        order = self._order(epoch)
        chunks: List[np.ndarray] = [
            order[start:start + self.batch_size] for start in range(0, len(order), self.batch_size)
        ]
        if self.workers <= 0:
            for index, chunk in enumerate(chunks):
                yield self._make_batch(epoch, index, chunk)
            return

        with ThreadPoolExecutor(max_workers=self.workers, thread_name_prefix="cifar-prefetch") as pool:
            pending: Deque[Future] = deque()
            upcoming = iter(enumerate(chunks))
            for index, chunk in upcoming:
                pending.append(pool.submit(self._make_batch, epoch, index, chunk))
                if len(pending) >= 2 * self.workers:
                    break
            while pending:
                batch = pending.popleft().result()
                nxt = next(upcoming, None)
                if nxt is not None:
                    pending.append(pool.submit(self._make_batch, epoch, nxt[0], nxt[1]))
                yield batch
