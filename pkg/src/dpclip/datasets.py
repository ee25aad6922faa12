"""Dataset loading and generation: IDX image files, numeric CSV, and
synthetic Gaussian blob classification problems."""

import gzip
import struct

import numpy as np

from .errors import ConfigurationError, IdxFormatError
from .network import Batch
from . import rng as rngmod

IDX_IMAGES_MAGIC = 0x00000803
IDX_LABELS_MAGIC = 0x00000801


def _read_idx_bytes(path):
    with open(path, "rb") as fh:
        head = fh.read(2)
        fh.seek(0)
        if head == b"\x1f\x8b":
            with gzip.open(fh) as gz:
                return gz.read()
        return fh.read()


def _require(data, offset, count, path):
    if len(data) < offset + count:
        raise IdxFormatError(
            f"{path}: truncated at offset {offset}: need {offset + count} bytes, file has {len(data)}"
        )
    return data[offset:offset + count]


def load_mnist_idx(images_path, labels_path):
    """Load an IDX image/label file pair.

    Returns (X, y): X is (n, rows*cols) float64 with pixels scaled to
    [0, 1] (pixel/255), y is (n,) int64 labels.  Dimensions are big-endian
    per the IDX convention; magic numbers 2051 (images) and 2049 (labels)
    are enforced and truncation errors report the failing offset.
    Gzip-compressed files are handled transparently.
    """
    img = _read_idx_bytes(images_path)
    magic, n_images, rows, cols = struct.unpack(">IIII", _require(img, 0, 16, images_path))
    if magic != IDX_IMAGES_MAGIC:
        raise IdxFormatError(
            f"{images_path}: bad magic 0x{magic:08x} at offset 0, expected 0x{IDX_IMAGES_MAGIC:08x}"
        )
    pixels = _require(img, 16, n_images * rows * cols, images_path)
    X = np.frombuffer(pixels, dtype=np.uint8).astype(np.float64) / 255.0
    X = X.reshape(n_images, rows * cols)

    lab = _read_idx_bytes(labels_path)
    magic, n_labels = struct.unpack(">II", _require(lab, 0, 8, labels_path))
    if magic != IDX_LABELS_MAGIC:
        raise IdxFormatError(
            f"{labels_path}: bad magic 0x{magic:08x} at offset 0, expected 0x{IDX_LABELS_MAGIC:08x}"
        )
    raw = _require(lab, 8, n_labels, labels_path)
    y = np.frombuffer(raw, dtype=np.uint8).astype(np.int64)
    if n_labels != n_images:
        raise IdxFormatError(
            f"{labels_path}: {n_labels} labels for {n_images} images in {images_path}"
        )
    return X, y


def load_csv_dataset(path):
    """Numeric CSV with the integer class label in the last column."""
    data = np.loadtxt(path, delimiter=",", dtype=np.float64, ndmin=2)
    if data.shape[1] < 2:
        raise ConfigurationError(f"{path}: need at least one feature column plus a label column")
    return data[:, :-1], data[:, -1].astype(np.int64)


def normalize(data, mean, std):
    """x <- (x - mean) / std per channel; std must be positive."""
    mean = np.asarray(mean, dtype=np.float64)
    std = np.asarray(std, dtype=np.float64)
    if np.any(std <= 0):
        raise ConfigurationError(f"normalization std must be > 0, got {std}")
    if isinstance(data, Batch):
        return Batch((data.inputs - mean) / std, data.labels)
    return (np.asarray(data, dtype=np.float64) - mean) / std


def synth_blobs(n, dim, classes, separation, seed):
    """Gaussian clusters with pairwise class-mean distance ``separation``.

    Class c's mean is (separation/sqrt(2)) * e_c, so any two means are
    exactly ``separation`` apart; within-class covariance is the identity.
    Labels are balanced and the sample order is shuffled deterministically
    per seed.
    """
    if classes < 2:
        raise ConfigurationError(f"need at least 2 classes, got {classes}")
    if classes > dim:
        raise ConfigurationError(
            f"blob construction places class means on coordinate axes: "
            f"classes ({classes}) must not exceed dim ({dim})"
        )
    if n < classes:
        raise ConfigurationError(f"need at least one sample per class ({classes}), got n={n}")
    gen = rngmod.stream(seed, "data")
    counts = np.full(classes, n // classes)
    counts[: n % classes] += 1
    labels = np.repeat(np.arange(classes), counts)
    gen.shuffle(labels)
    means = np.zeros((classes, dim))
    means[np.arange(classes), np.arange(classes)] = separation / np.sqrt(2.0)
    X = gen.standard_normal((n, dim)) + means[labels]
    return X, labels
