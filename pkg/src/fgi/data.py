"""Sequential-pixel datasets: IDX ingestion, chunking into time steps, and a
seeded synthetic stand-in that needs no downloads."""
from __future__ import annotations

import gzip
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Iterator, Tuple

import numpy as np

SEQ_LENGTHS = (28, 49, 98, 196, 392, 784)
IMAGE_SIZE = 784

IDX_IMAGES_MAGIC = 0x00000803
IDX_LABELS_MAGIC = 0x00000801

MNIST_FILES = {
    "train": ("train-images-idx3-ubyte", "train-labels-idx1-ubyte"),
    "test": ("t10k-images-idx3-ubyte", "t10k-labels-idx1-ubyte"),
}


class IdxFormatError(ValueError):
    pass


class IdxConsistencyError(ValueError):
    pass


class IdxTruncatedError(OSError):
    pass


@dataclass(frozen=True)
class SeqConfig:
    sequence_length: int = 784
    batch_size: int = 128

    def __post_init__(self):
        if self.sequence_length not in SEQ_LENGTHS:
            raise ValueError(f"sequence length must be one of {SEQ_LENGTHS}")
        if self.batch_size < 1:
            raise ValueError("batch size must be >= 1")

    @property
    def inputs_per_step(self) -> int:
        return IMAGE_SIZE // self.sequence_length


@dataclass(frozen=True)
class Sample:
    sequence: np.ndarray  # [T, inputs_per_step]
    label: int


@dataclass(frozen=True)
class Dataset:
    images: np.ndarray  # [N, 784] in [0, 1]
    labels: np.ndarray  # [N] int
    classes: int = 10

    def __len__(self):
        return len(self.labels)

    def sample(self, i: int, cfg: SeqConfig) -> Sample:
        return Sample(reshape_sequence(self.images[i], cfg), int(self.labels[i]))

    def batches(self, batch_size: int, seed: int = 0, shuffle: bool = True) -> Iterator[Tuple[np.ndarray, np.ndarray]]:
        """Endless stream of full batches; reshuffled every epoch when asked."""
        n = len(self)
        if n < batch_size:
            raise ValueError(f"dataset of {n} samples cannot fill a batch of {batch_size}")
        rng = np.random.default_rng(seed)
        while True:
            order = rng.permutation(n) if shuffle else np.arange(n)
            for start in range(0, n - batch_size + 1, batch_size):
                idx = order[start : start + batch_size]
                yield self.images[idx], self.labels[idx]


def reshape_sequence(image: np.ndarray, cfg: SeqConfig) -> np.ndarray:
    """Row-major chunking: step t carries pixels [t*k, (t+1)*k)."""
    image = np.asarray(image)
    if image.shape != (IMAGE_SIZE,):
        raise ValueError(f"expected a flat 784-pixel image, got {image.shape}")
    return image.reshape(cfg.sequence_length, cfg.inputs_per_step)


def to_sequence_batch(images: np.ndarray, cfg: SeqConfig) -> np.ndarray:
    """[B, 784] images -> [T, B, inputs_per_step] network inputs."""
    b = images.shape[0]
    return np.ascontiguousarray(
        images.reshape(b, cfg.sequence_length, cfg.inputs_per_step).transpose(1, 0, 2)
    )


def _read(path) -> bytes:
    path = Path(path)
    if path.suffix == ".gz":
        with gzip.open(path, "rb") as fh:
            return fh.read()
    return path.read_bytes()


def _header(buf: bytes, path, magic: int, ndim: int):
    if len(buf) < 4:
        raise IdxTruncatedError(f"{path}: header truncated")
    (found,) = struct.unpack_from(">I", buf, 0)
    if found != magic:
        raise IdxFormatError(f"{path}: bad magic 0x{found:08x}, expected 0x{magic:08x}")
    if len(buf) < 4 + 4 * ndim:
        raise IdxTruncatedError(f"{path}: header truncated")
    return struct.unpack_from(f">{ndim}I", buf, 4)


def load_idx(images_path, labels_path) -> Dataset:
    img = _read(images_path)
    lab = _read(labels_path)
    n, rows, cols = _header(img, images_path, IDX_IMAGES_MAGIC, 3)
    (n_labels,) = _header(lab, labels_path, IDX_LABELS_MAGIC, 1)
    if n != n_labels:
        raise IdxConsistencyError(f"{n} images but {n_labels} labels")
    if len(img) < 16 + n * rows * cols:
        raise IdxTruncatedError(f"{images_path}: expected {n * rows * cols} pixel bytes")
    if len(lab) < 8 + n:
        raise IdxTruncatedError(f"{labels_path}: expected {n} label bytes")
    pixels = np.frombuffer(img, dtype=np.uint8, count=n * rows * cols, offset=16)
    images = pixels.reshape(n, rows * cols).astype(np.float64) / 255.0
    labels = np.frombuffer(lab, dtype=np.uint8, count=n, offset=8).astype(np.int64)
    classes = max(10, int(labels.max()) + 1) if n else 10
    return Dataset(images, labels, classes)


def load_mnist(data_dir, split: str = "train") -> Dataset:
    """Load one MNIST split from its conventional file names (optionally .gz)."""
    data_dir = Path(data_dir)
    paths = []
    for name in MNIST_FILES[split]:
        plain, packed = data_dir / name, data_dir / (name + ".gz")
        paths.append(plain if plain.exists() or not packed.exists() else packed)
    return load_idx(*paths)


def write_idx(path, array: np.ndarray) -> None:
    """Write a uint8 array as IDX (3-d images or 1-d labels)."""
    array = np.asarray(array, dtype=np.uint8)
    magic = {3: IDX_IMAGES_MAGIC, 1: IDX_LABELS_MAGIC}[array.ndim]
    header = struct.pack(f">I{array.ndim}I", magic, *array.shape)
    Path(path).write_bytes(header + array.tobytes())


def synthetic_dataset(seed: int, n_per_class: int, classes: int = 2) -> Dataset:
    """Pseudo-images whose class is where along the sequence the energy sits.

    The 784-pixel sequence is split into ``classes`` contiguous segments;
    class ``c`` lights up segment ``c`` on top of uniform background noise.
    """
    if classes < 2:
        raise ValueError("need at least two classes")
    rng = np.random.default_rng(seed)
    seg = IMAGE_SIZE // classes
    n = n_per_class * classes
    labels = np.repeat(np.arange(classes), n_per_class)
    images = rng.uniform(0.0, 0.2, size=(n, IMAGE_SIZE))
    for i, c in enumerate(labels):
        images[i, c * seg : (c + 1) * seg] += rng.uniform(0.4, 0.8, size=seg)
    order = rng.permutation(n)
    images = np.clip(images[order], 0.0, 1.0)
    return Dataset(images, labels[order].astype(np.int64), classes)
