"""Reader and writer for the IDX container used by MNIST (unsigned-byte payloads only)."""

from __future__ import annotations

import gzip
import pathlib

import numpy as np

IMAGES_MAGIC = 0x00000803
LABELS_MAGIC = 0x00000801
UBYTE = 0x08


class IdxFormatError(ValueError):
    pass


def _read_bytes(path: str | pathlib.Path) -> bytes:
    p = pathlib.Path(path)
    data = p.read_bytes()
    if p.suffix == ".gz":
        data = gzip.decompress(data)
    return data


def parse_idx(data: bytes, expected_magic: int | None = None) -> np.ndarray:
    """Decode a big-endian IDX buffer into a uint8 array of the declared shape."""
    if len(data) < 4:
        raise IdxFormatError("unexpected end of data")
    magic = int.from_bytes(data[:4], "big")
    zero, dtype_code, ndim = int.from_bytes(data[:2], "big"), data[2], data[3]
    if zero != 0 or dtype_code != UBYTE or ndim == 0:
        raise IdxFormatError("not an IDX file")
    if expected_magic is not None and magic != expected_magic:
        raise IdxFormatError("not an IDX file")

    header = 4 + 4 * ndim
    if len(data) < header:
        raise IdxFormatError("unexpected end of data")
    dims = tuple(int(d) for d in np.frombuffer(data, dtype=">u4", count=ndim, offset=4))
    size = int(np.prod(dims))
    if len(data) < header + size:
        raise IdxFormatError("unexpected end of data")
    return np.frombuffer(data, dtype=np.uint8, count=size, offset=header).reshape(dims)


def read_idx(path: str | pathlib.Path, expected_magic: int | None = None) -> np.ndarray:
    return parse_idx(_read_bytes(path), expected_magic)


def encode_idx(array: np.ndarray) -> bytes:
    array = np.asarray(array)
    if array.dtype != np.uint8:
        raise ValueError(f"IDX writer supports uint8 arrays, got {array.dtype}")
    header = bytes([0, 0, UBYTE, array.ndim]) + np.asarray(array.shape, dtype=">u4").tobytes()
    return header + np.ascontiguousarray(array).tobytes()


def write_idx(path: str | pathlib.Path, array: np.ndarray) -> None:
    p = pathlib.Path(path)
    p.parent.mkdir(parents=True, exist_ok=True)
    data = encode_idx(array)
    p.write_bytes(gzip.compress(data) if p.suffix == ".gz" else data)


def load_idx(images_path: str | pathlib.Path, labels_path: str | pathlib.Path) -> tuple[np.ndarray, np.ndarray]:
    """Images scaled to [0, 1] with shape (N, rows, cols) and integer labels of shape (N,)."""
    images = read_idx(images_path, IMAGES_MAGIC)
    labels = read_idx(labels_path, LABELS_MAGIC)
    if images.shape[0] != labels.shape[0]:
        raise IdxFormatError(f"image count {images.shape[0]} != label count {labels.shape[0]}")
    return images.astype(np.float64) / 255.0, labels.astype(np.int64)


def save_idx(
    images_path: str | pathlib.Path,
    labels_path: str | pathlib.Path,
    images: np.ndarray,
    labels: np.ndarray,
) -> None:
    """Inverse of load_idx for images already quantized to multiples of 1/255."""
    write_idx(images_path, np.rint(np.asarray(images) * 255.0).astype(np.uint8))
    write_idx(labels_path, np.asarray(labels).astype(np.uint8))
