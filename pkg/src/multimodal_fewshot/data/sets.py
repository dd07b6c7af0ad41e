"""Dataset containers for the two modalities, plus label maps and splitting.

All containers are immutable after construction (arrays are marked
read-only), so they can be shared freely across threads.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from typing import Iterable, Optional, Union

import numpy as np

from ..errors import ArgumentError, ShapeError, EmptyItemError
from ..seeding import rng_for

IMAGE_SIDE = 28

Label = Union[str, int]


def _freeze(arr: np.ndarray) -> np.ndarray:
    arr = np.asarray(arr)
    arr.flags.writeable = False
    return arr


@dataclass(frozen=True)
class SpeechItem:
    """One spoken word: a (n_frames, frame_dim) float array of feature frames."""

    id: str
    frames: np.ndarray
    label: Optional[Label] = None

    def __post_init__(self):
        frames = np.asarray(self.frames)
        if frames.dtype != np.float32:
            frames = frames.astype(np.float64)
        if frames.ndim != 2:
            raise ShapeError(f"item {self.id!r}: frames must be 2-d, got shape {frames.shape}")
        if frames.shape[0] == 0:
            raise EmptyItemError(f"item {self.id!r}: zero-frame sequence")
        object.__setattr__(self, "frames", _freeze(frames))


@dataclass(frozen=True)
class ImageItem:
    """One 28x28 grayscale image with pixel values in [0, 1]."""

    id: str
    grid: np.ndarray
    label: Optional[Label] = None

    def __post_init__(self):
        grid = np.asarray(self.grid)
        if grid.dtype != np.float32:
            grid = grid.astype(np.float64)
        if grid.shape != (IMAGE_SIDE, IMAGE_SIDE):
            raise ShapeError(f"item {self.id!r}: expected {IMAGE_SIDE}x{IMAGE_SIDE} grid, got {grid.shape}")
        if grid.min() < 0.0 or grid.max() > 1.0:
            raise ArgumentError(f"item {self.id!r}: pixel values outside [0, 1]")
        object.__setattr__(self, "grid", _freeze(grid))


class _ItemSet:
    """Shared behaviour of SpeechSet / ImageSet: id index, label helpers."""

    def __init__(self, items):
        self.items = tuple(items)
        index = {}
        for pos, item in enumerate(self.items):
            if item.id in index:
                raise ArgumentError(f"duplicate item id {item.id!r}")
            index[item.id] = pos
        self._index = index

    def __len__(self) -> int:
        return len(self.items)

    def __iter__(self):
        return iter(self.items)

    def __getitem__(self, pos):
        return self.items[pos]

    @property
    def ids(self) -> tuple:
        return tuple(item.id for item in self.items)

    def by_id(self, item_id: str):
        try:
            return self.items[self._index[item_id]]
        except KeyError:
            raise ArgumentError(f"unknown item id {item_id!r}") from None

    def has_id(self, item_id: str) -> bool:
        return item_id in self._index

    @property
    def labelled(self) -> bool:
        return all(item.label is not None for item in self.items)


class SpeechSet(_ItemSet):
    """An ordered collection of spoken-word items with a common frame dimension."""

    def __init__(self, items: Iterable[SpeechItem], frame_dim: Optional[int] = None):
        super().__init__(items)
        if frame_dim is None:
            if not self.items:
                raise ArgumentError("frame_dim required for an empty SpeechSet")
            frame_dim = self.items[0].frames.shape[1]
        for item in self.items:
            if item.frames.shape[1] != frame_dim:
                raise ShapeError(
                    f"item {item.id!r}: frame dim {item.frames.shape[1]} != set frame dim {frame_dim}"
                )
        self.frame_dim = int(frame_dim)

    def replace_items(self, items) -> "SpeechSet":
        return SpeechSet(items, frame_dim=self.frame_dim)


class ImageSet(_ItemSet):
    """An ordered collection of 28x28 image items."""

    def __init__(self, items: Iterable[ImageItem]):
        super().__init__(items)

    def replace_items(self, items) -> "ImageSet":
        return ImageSet(items)


def strip_labels(dataset):
    """Return the same set with every label removed; order is preserved.

    Idempotent: stripping an unlabelled set returns an equivalent set.
    """
    items = [replace(item, label=None) for item in dataset.items]
    return dataset.replace_items(items)


@dataclass(frozen=True)
class PairLabels:
    """Oracle class maps, used only for ground-truth pairing and scoring.

    ``speech_to_class`` maps speech ids to spoken class names (e.g. "oh");
    ``image_to_class`` maps image ids to visual digit classes (0-9).
    """

    class_names: tuple
    speech_to_class: dict
    image_to_class: dict

    def validate(self, speech: SpeechSet, images: ImageSet) -> None:
        for sid in self.speech_to_class:
            if not speech.has_id(sid):
                raise ArgumentError(f"labelled speech id {sid!r} not in set")
        for iid in self.image_to_class:
            if not images.has_id(iid):
                raise ArgumentError(f"labelled image id {iid!r} not in set")


@dataclass(frozen=True)
class SplitSpec:
    """Train/validation/test fractions plus the seed that fixes the shuffle."""

    fractions: tuple = (0.7, 0.1, 0.2)
    seed: int = 0

    def __post_init__(self):
        fr = tuple(float(f) for f in self.fractions)
        if len(fr) != 3 or any(not (0.0 < f < 1.0) for f in fr):
            raise ArgumentError(f"fractions must be three values in (0, 1), got {fr}")
        if not math.isclose(sum(fr), 1.0, abs_tol=1e-9):
            raise ArgumentError(f"fractions must sum to 1 within 1e-9, got sum {sum(fr)!r}")
        object.__setattr__(self, "fractions", fr)


def split(dataset, spec: SplitSpec):
    """Partition a set into (train, validation, test).

    Stratified by label when labels exist; validation/test sizes are floored
    and the remainder goes to train. Deterministic given ``spec.seed``; the
    original item order is preserved inside each part.
    """
    if len(dataset) == 0:
        raise ArgumentError("cannot split an empty set")
    rng = rng_for(spec.seed, "split")
    groups = {}
    for pos, item in enumerate(dataset.items):
        groups.setdefault(item.label, []).append(pos)

    _, f_val, f_test = spec.fractions
    part_of = {}
    for label in sorted(groups, key=lambda lab: (lab is None, str(lab))):
        positions = np.array(groups[label])
        order = rng.permutation(len(positions))
        n = len(positions)
        n_val = int(n * f_val)
        n_test = int(n * f_test)
        shuffled = positions[order]
        for pos in shuffled[:n_test]:
            part_of[pos] = 2
        for pos in shuffled[n_test:n_test + n_val]:
            part_of[pos] = 1
        for pos in shuffled[n_test + n_val:]:
            part_of[pos] = 0

    parts = ([], [], [])
    for pos, item in enumerate(dataset.items):
        parts[part_of[pos]].append(item)
    return tuple(dataset.replace_items(p) for p in parts)
