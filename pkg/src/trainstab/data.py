"""Desk-scale classification data.

Synthetic Gaussian-mixture tasks, an IDX-format loader, seeded batch
schedules and seeded additive-jitter augmentation.  All functions are pure
in their arguments plus the SeedPlan.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

from .rng import SeedPlan, derive_stream, gaussians

__all__ = [
    "Dataset",
    "MixtureSpec",
    "IdxFormatError",
    "gen_mixture",
    "load_idx",
    "write_idx",
    "batch_indices",
    "augment",
]


class IdxFormatError(ValueError):
    """Malformed IDX file (bad magic, truncated payload, count mismatch)."""


@dataclass(frozen=True)
class Dataset:
    inputs: np.ndarray  # (n, d) float64
    labels: np.ndarray  # (n,) int64 in [0, n_classes)
    n_classes: int
    split: str = "train"

    def __post_init__(self):
        if self.inputs.shape[0] != self.labels.shape[0]:
            raise ValueError("inputs/labels row count mismatch")
        if self.labels.size and int(self.labels.max()) >= self.n_classes:
            raise ValueError("label out of range")

    @property
    def n(self) -> int:
        return self.inputs.shape[0]

    @property
    def dim(self) -> int:
        return self.inputs.shape[1]


@dataclass(frozen=True)
class MixtureSpec:
    classes: int
    dim: int
    n_train: int
    n_test: int
    separation: float
    noise_std: float
    seed: int

    def __post_init__(self):
        if self.classes < 2:
            raise ValueError("need at least 2 classes")
        if self.dim < 1:
            raise ValueError("dim must be >= 1")
        if self.noise_std < 0:
            raise ValueError("noise_std must be >= 0")
        if self.classes > self.n_train:
            raise ValueError("more classes than training examples")


def gen_mixture(spec: MixtureSpec) -> tuple[Dataset, Dataset]:
    """Deterministic Gaussian-mixture task.

    Class means are seeded Gaussian directions normalized to length
    separation/sqrt(2), putting typical pairwise mean distances near
    ``separation``.  Examples are mean + noise_std * standard normal.
    """
    gen = derive_stream(spec.seed, "data", 0)
    dirs = gaussians(gen, (spec.classes, spec.dim))
    norms = np.linalg.norm(dirs, axis=1, keepdims=True)
    norms[norms == 0] = 1.0
    means = dirs / norms * (spec.separation / np.sqrt(2.0))

    def draw(n: int, split: str) -> Dataset:
        labels = np.arange(n, dtype=np.int64) % spec.classes
        noise = gaussians(gen, (n, spec.dim))
        inputs = means[labels] + spec.noise_std * noise
        return Dataset(inputs, labels, spec.classes, split)

    return draw(spec.n_train, "train"), draw(spec.n_test, "test")


_IDX_DTYPES = {
    0x08: np.dtype(">u1"),
    0x09: np.dtype(">i1"),
    0x0B: np.dtype(">i2"),
    0x0C: np.dtype(">i4"),
    0x0D: np.dtype(">f4"),
    0x0E: np.dtype(">f8"),
}


def _read_idx_array(path) -> np.ndarray:
    with open(path, "rb") as fh:
        raw = fh.read()
    if len(raw) < 4:
        raise IdxFormatError(f"{path}: truncated header")
    zero0, zero1, type_code, ndims = struct.unpack(">BBBB", raw[:4])
    if zero0 != 0 or zero1 != 0 or type_code not in _IDX_DTYPES:
        raise IdxFormatError(
            f"{path}: bad magic {raw[:4].hex()} (expected 0000<type><ndims>)"
        )
    header_end = 4 + 4 * ndims
    if len(raw) < header_end:
        raise IdxFormatError(f"{path}: truncated dimension header")
    dims = struct.unpack(f">{ndims}I", raw[4:header_end])
    dtype = _IDX_DTYPES[type_code]
    count = int(np.prod(dims)) if dims else 0
    expected = header_end + count * dtype.itemsize
    if len(raw) != expected:
        raise IdxFormatError(
            f"{path}: payload is {len(raw) - header_end} bytes, "
            f"expected {count * dtype.itemsize} for dims {dims}"
        )
    arr = np.frombuffer(raw, dtype=dtype, count=count, offset=header_end)
    return arr.reshape(dims)


def load_idx(images_path, labels_path, split: str = "train") -> Dataset:
    """Load an IDX image/label file pair.

    Unsigned-byte images are scaled to [0, 1]; float payloads are taken
    as written.  Images are flattened to one row per example.
    """
    images = _read_idx_array(images_path)
    labels = _read_idx_array(labels_path)
    if labels.ndim != 1:
        raise IdxFormatError(f"{labels_path}: labels must be 1-D, got {labels.ndim}-D")
    if images.ndim < 2:
        raise IdxFormatError(f"{images_path}: images must be at least 2-D")
    if images.shape[0] != labels.shape[0]:
        raise IdxFormatError(
            f"image count {images.shape[0]} != label count {labels.shape[0]}"
        )
    flat = images.reshape(images.shape[0], -1).astype(np.float64)
    if images.dtype == np.dtype(">u1"):
        flat /= 255.0
    labels64 = labels.astype(np.int64)
    if labels64.size and labels64.min() < 0:
        raise IdxFormatError(f"{labels_path}: negative label")
    n_classes = int(labels64.max()) + 1 if labels64.size else 0
    return Dataset(flat, labels64, n_classes, split)


def write_idx(array: np.ndarray, path) -> None:
    """Write an array as IDX (unsigned byte or big-endian double)."""
    if array.dtype == np.uint8:
        code, dtype = 0x08, np.dtype(">u1")
    else:
        code, dtype = 0x0E, np.dtype(">f8")
    with open(path, "wb") as fh:
        fh.write(struct.pack(">BBBB", 0, 0, code, array.ndim))
        fh.write(struct.pack(f">{array.ndim}I", *array.shape))
        fh.write(np.ascontiguousarray(array, dtype=dtype).tobytes())


def batch_indices(n: int, batch_size: int, step: int, plan: SeedPlan) -> np.ndarray:
    """Training indices for one step under drop-last epoch shuffling.

    Each epoch draws a fresh seeded permutation of [0, n); the step's batch is
    the corresponding contiguous slice.  Pure in (n, batch_size, step, seed).
    """
    if batch_size > n:
        raise ValueError("batch_size exceeds dataset size")
    steps_per_epoch = n // batch_size
    epoch, pos = divmod(step, steps_per_epoch)
    perm = plan.stream("batch-order", epoch).permutation(n)
    return perm[pos * batch_size : (pos + 1) * batch_size]


def augment(inputs: np.ndarray, step: int, plan: SeedPlan, jitter_std: float) -> np.ndarray:
    """Seeded additive Gaussian jitter; jitter_std = 0 is the exact identity."""
    if jitter_std < 0:
        raise ValueError("jitter_std must be >= 0")
    if jitter_std == 0:
        return inputs
    noise = gaussians(plan.stream("augment", step), inputs.shape)
    return inputs + jitter_std * noise
