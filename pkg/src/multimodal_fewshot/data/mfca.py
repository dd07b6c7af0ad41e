"""MFCA: a small binary container for variable-length feature sequences.

Layout (all integers little-endian):

    bytes  0-3   magic "MFCA"
    bytes  4-7   u32 item count
    bytes  8-11  u32 frame_dim
    per item:
        u16 id byte length, then the id as UTF-8
        u32 frame count (must be >= 1)
        frame_count * frame_dim float32 values, row-major

The format is bit-exact: ``write(load(path))`` reproduces the file
byte for byte.
"""

from __future__ import annotations

import struct

import numpy as np

from ..errors import EmptyItemError, FormatError, ShapeError
from .sets import SpeechItem, SpeechSet

MAGIC = b"MFCA"


def _read_exact(fh, n: int, what: str) -> bytes:
    data = fh.read(n)
    if len(data) != n:
        raise FormatError(f"truncated MFCA file: expected {n} bytes for {what}, got {len(data)}")
    return data


def load_feature_archive(path) -> SpeechSet:
    """Load an MFCA archive; items come back in file order."""
    with open(path, "rb") as fh:
        if _read_exact(fh, 4, "magic") != MAGIC:
            raise FormatError(f"bad MFCA magic in {path}")
        count, frame_dim = struct.unpack("<II", _read_exact(fh, 8, "header"))
        items = []
        for i in range(count):
            (id_len,) = struct.unpack("<H", _read_exact(fh, 2, f"item {i} id length"))
            item_id = _read_exact(fh, id_len, f"item {i} id").decode("utf-8")
            (n_frames,) = struct.unpack("<I", _read_exact(fh, 4, f"item {item_id!r} frame count"))
            if n_frames == 0:
                raise EmptyItemError(f"item {item_id!r}: zero frames")
            payload = _read_exact(fh, 4 * n_frames * frame_dim, f"item {item_id!r} frames")
            frames = np.frombuffer(payload, dtype="<f4").reshape(n_frames, frame_dim)
            items.append(SpeechItem(id=item_id, frames=frames.astype(np.float32)))
        trailing = fh.read(1)
        if trailing:
            raise FormatError(f"trailing bytes after {count} declared items in {path}")
    return SpeechSet(items, frame_dim=frame_dim)


def write_feature_archive(speech: SpeechSet, path) -> None:
    """Write a SpeechSet as an MFCA archive (frames stored as float32-LE)."""
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<II", len(speech), speech.frame_dim))
        for item in speech:
            frames = np.ascontiguousarray(item.frames, dtype="<f4")
            if frames.shape[1] != speech.frame_dim:
                raise ShapeError(
                    f"item {item.id!r}: frame dim {frames.shape[1]} != archive dim {speech.frame_dim}"
                )
            encoded = item.id.encode("utf-8")
            fh.write(struct.pack("<H", len(encoded)))
            fh.write(encoded)
            fh.write(struct.pack("<I", frames.shape[0]))
            fh.write(frames.tobytes())


__all__ = ["load_feature_archive", "write_feature_archive", "MAGIC"]
