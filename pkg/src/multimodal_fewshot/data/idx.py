"""IDX image/label container (the MNIST on-disk format).

Layout is big-endian: magic u32 (0x00000803 for u8 image tensors,
0x00000801 for u8 label vectors), then one u32 per dimension, then the
payload bytes. Pixels are stored as bytes 0-255 and mapped to [0, 1] on
load by dividing by 255.
"""

from __future__ import annotations

import struct
from typing import Optional

import numpy as np

from ..errors import ArgumentError, FormatError, ShapeError
from .sets import IMAGE_SIDE, ImageItem, ImageSet

IMAGE_MAGIC = 0x00000803
LABEL_MAGIC = 0x00000801


def _read_exact(fh, n: int, what: str) -> bytes:
    data = fh.read(n)
    if len(data) != n:
        raise FormatError(f"truncated IDX file: expected {n} bytes for {what}, got {len(data)}")
    return data


def _record_id(index: int, count: int) -> str:
    width = max(1, len(str(count - 1)))
    return f"{index:0{width}d}"


def load_idx_labels(path) -> np.ndarray:
    """Load an IDX label vector as an int array."""
    with open(path, "rb") as fh:
        magic, count = struct.unpack(">II", _read_exact(fh, 8, "label header"))
        if magic != LABEL_MAGIC:
            raise FormatError(f"bad IDX label magic 0x{magic:08x} in {path}")
        payload = _read_exact(fh, count, "label payload")
    return np.frombuffer(payload, dtype=np.uint8).astype(np.int64)


def load_idx_images(path, labels_path: Optional[str] = None) -> ImageSet:
    """Load an IDX image file into an ImageSet.

    Item ids are zero-padded record indices in file order. If
    ``labels_path`` is given, its entries are attached as item labels.
    """
    with open(path, "rb") as fh:
        magic, count, rows, cols = struct.unpack(">IIII", _read_exact(fh, 16, "image header"))
        if magic != IMAGE_MAGIC:
            raise FormatError(f"bad IDX image magic 0x{magic:08x} in {path}")
        if (rows, cols) != (IMAGE_SIDE, IMAGE_SIDE):
            raise ShapeError(f"expected {IMAGE_SIDE}x{IMAGE_SIDE} images, file declares {rows}x{cols}")
        payload = _read_exact(fh, count * rows * cols, "pixel payload")

    labels = None
    if labels_path is not None:
        labels = load_idx_labels(labels_path)
        if len(labels) != count:
            raise FormatError(
                f"label count {len(labels)} does not match image count {count}"
            )

    pixels = np.frombuffer(payload, dtype=np.uint8).reshape(count, rows, cols)
    items = []
    for i in range(count):
        grid = pixels[i].astype(np.float64) / 255.0
        label = int(labels[i]) if labels is not None else None
        items.append(ImageItem(id=_record_id(i, count), grid=grid, label=label))
    return ImageSet(items)


def save_idx_images(images: ImageSet, path, labels_path: Optional[str] = None) -> None:
    """Write an ImageSet as an IDX file, quantizing pixels to bytes.

    When ``labels_path`` is given every item must carry an integer label
    in [0, 255].
    """
    count = len(images)
    with open(path, "wb") as fh:
        fh.write(struct.pack(">IIII", IMAGE_MAGIC, count, IMAGE_SIDE, IMAGE_SIDE))
        for item in images:
            quantized = np.rint(np.asarray(item.grid, dtype=np.float64) * 255.0).astype(np.uint8)
            fh.write(quantized.tobytes())
    if labels_path is not None:
        with open(labels_path, "wb") as fh:
            fh.write(struct.pack(">II", LABEL_MAGIC, count))
            for item in images:
                if not isinstance(item.label, (int, np.integer)) or not (0 <= int(item.label) <= 255):
                    raise ArgumentError(
                        f"item {item.id!r}: IDX labels must be integers in [0, 255], got {item.label!r}"
                    )
                fh.write(struct.pack("B", int(item.label)))


__all__ = ["load_idx_images", "load_idx_labels", "save_idx_images", "IMAGE_MAGIC", "LABEL_MAGIC"]
