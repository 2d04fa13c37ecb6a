"""IDX (MNIST-style) binary dataset ingestion.

Big-endian headers: image files carry magic 0x00000803 and 28x28 planes,
label files magic 0x00000801.  Pixels are scaled to [0, 1].
"""
from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

__all__ = ["IdxDataset", "IdxFormatError", "load_idx"]

IMAGE_MAGIC = 0x00000803
LABEL_MAGIC = 0x00000801


class IdxFormatError(ValueError):
    """Corrupt or truncated IDX file; the message carries the byte offset."""


@dataclass(frozen=True, eq=False)
class IdxDataset:
    images: np.ndarray  # (n, 784) float64 in [0, 1]
    labels: np.ndarray  # (n,) int64

    def __len__(self) -> int:
        return len(self.images)


def _read_header(raw: bytes, path, fmt: str, expected_magic: int):
    size = struct.calcsize(fmt)
    if len(raw) < size:
        raise IdxFormatError(f"{path}: truncated header, file ends at offset {len(raw)}")
    fields = struct.unpack_from(fmt, raw, 0)
    if fields[0] != expected_magic:
        raise IdxFormatError(
            f"{path}: bad magic 0x{fields[0]:08x} at offset 0 (expected 0x{expected_magic:08x})"
        )
    return fields, size


def load_idx(images_path, labels_path) -> IdxDataset:
    """Parse paired IDX image and label files."""
    img_raw = Path(images_path).read_bytes()
    (_, count, rows, cols), offset = _read_header(img_raw, images_path, ">IIII", IMAGE_MAGIC)
    if (rows, cols) != (28, 28):
        raise IdxFormatError(
            f"{images_path}: expected 28x28 images, header says {rows}x{cols} (offset 8)"
        )
    need = offset + count * rows * cols
    if len(img_raw) < need:
        raise IdxFormatError(
            f"{images_path}: truncated pixel data, file ends at offset {len(img_raw)} "
            f"(need {need})"
        )
    pixels = np.frombuffer(img_raw, dtype=np.uint8, count=count * rows * cols, offset=offset)
    images = pixels.reshape(count, rows * cols).astype(float) / 255.0

    lbl_raw = Path(labels_path).read_bytes()
    (_, lcount), loffset = _read_header(lbl_raw, labels_path, ">II", LABEL_MAGIC)
    if lcount != count:
        raise IdxFormatError(
            f"{labels_path}: {lcount} labels for {count} images (offset 4)"
        )
    if len(lbl_raw) < loffset + lcount:
        raise IdxFormatError(
            f"{labels_path}: truncated label data, file ends at offset {len(lbl_raw)} "
            f"(need {loffset + lcount})"
        )
    labels = np.frombuffer(lbl_raw, dtype=np.uint8, count=lcount, offset=loffset).astype(np.int64)
    return IdxDataset(images=images, labels=labels)
