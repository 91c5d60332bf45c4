"""Reader for the IDX binary format used by MNIST-style datasets."""

import gzip
import struct
from dataclasses import dataclass

import numpy as np

from ..errors import IdxFormatError

IMAGE_MAGIC = 0x00000803
LABEL_MAGIC = 0x00000801


@dataclass
class IdxDataset:
    images: np.ndarray  # (n, rows * cols) float64 in [0, 1]
    labels: np.ndarray  # (n,) int64
    shape: tuple


def _read_bytes(path):
    with open(path, "rb") as fh:
        head = fh.read(2)
        fh.seek(0)
        raw = fh.read()
    if head == b"\x1f\x8b":
        raw = gzip.decompress(raw)
    return raw


def read_idx(path):
    """Parse one IDX file into an array of unsigned bytes with its declared shape."""
    raw = _read_bytes(path)
    if len(raw) < 8:
        raise IdxFormatError(f"{path}: file too short for an IDX header ({len(raw)} bytes)")
    (magic,) = struct.unpack(">I", raw[:4])
    if magic not in (IMAGE_MAGIC, LABEL_MAGIC):
        raise IdxFormatError(f"{path}: bad magic number 0x{magic:08x}")
    ndim = magic & 0xFF
    header = 4 + 4 * ndim
    if len(raw) < header:
        raise IdxFormatError(f"{path}: truncated header")
    dims = struct.unpack(">" + "I" * ndim, raw[4:header])
    count = int(np.prod(dims))
    if len(raw) - header < count:
        raise IdxFormatError(f"{path}: truncated data, expected {count} bytes, found {len(raw) - header}")
    data = np.frombuffer(raw, dtype=np.uint8, count=count, offset=header)
    return data.reshape(dims), magic


def load_idx_dataset(images_path, labels_path=None):
    """Load an IDX image file (and optionally its label file).

    Images are flattened and scaled to [0, 1].  Without a label file the
    labels are all zero.
    """
    images, magic = read_idx(images_path)
    if magic != IMAGE_MAGIC:
        raise IdxFormatError(f"{images_path}: expected an image file (magic 0x803), got 0x{magic:08x}")
    n = images.shape[0]
    flat = images.reshape(n, -1).astype(np.float64) / 255.0
    if labels_path is None:
        labels = np.zeros(n, dtype=np.int64)
    else:
        raw_labels, lmagic = read_idx(labels_path)
        if lmagic != LABEL_MAGIC:
            raise IdxFormatError(f"{labels_path}: expected a label file (magic 0x801), got 0x{lmagic:08x}")
        if raw_labels.shape[0] != n:
            raise IdxFormatError(f"{labels_path}: {raw_labels.shape[0]} labels for {n} images")
        labels = raw_labels.astype(np.int64)
    return IdxDataset(flat, labels, tuple(images.shape[1:]))


def write_idx(path, array):
    """Write a uint8 array as IDX (magic 0x801 for 1-D, 0x803 for 3-D)."""
    array = np.asarray(array, dtype=np.uint8)
    magic = 0x00000800 | array.ndim
    with open(path, "wb") as fh:
        fh.write(struct.pack(">I", magic))
        fh.write(struct.pack(">" + "I" * array.ndim, *array.shape))
        fh.write(array.tobytes())
