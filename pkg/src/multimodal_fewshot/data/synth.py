"""Synthetic paired-digit generator, the desk-scale stand-in corpus.

Eleven spoken classes ("one" .. "nine", "zero", "oh") pair with ten visual
digit classes; "zero" and "oh" both map to the digit 0. Each class has one
fixed prototype — a smooth feature trajectory for speech (class-dependent
length, 6 to 12 frames) and a segment-stroke glyph for images — and items
are prototypes plus additive uniform noise, clipped to the valid range.
Prototypes are fixed module constants: noise seeds never change them, so
runs at different seeds stay comparable.

A companion generator emits labelled non-digit background classes (random
trajectories / random stroke glyphs) for transfer-learning experiments.
"""

from __future__ import annotations

from typing import Tuple

import numpy as np

from ..errors import ArgumentError
from ..seeding import rng_for
from .sets import IMAGE_SIDE, ImageItem, ImageSet, PairLabels, SpeechItem, SpeechSet

SPOKEN_CLASSES = (
    "one", "two", "three", "four", "five", "six", "seven", "eight", "nine",
    "zero", "oh",
)
VISUAL_CLASSES = tuple(range(10))
SPOKEN_TO_VISUAL = {
    "one": 1, "two": 2, "three": 3, "four": 4, "five": 5, "six": 6,
    "seven": 7, "eight": 8, "nine": 9, "zero": 0, "oh": 0,
}

# Prototype shape constants. Every prototype rides on a class-independent
# carrier (a fixed trajectory for speech, a constant background level for
# images) with small class-specific deviations on top. The carrier mimics
# the structured nuisance of real features (channel, speaker, paper): it
# dominates raw cosine comparisons and amplifies noise in their rankings,
# while trained encoders learn to project it out.
_PROTO_SEED = 745122297
_CARRIER_START = 0.45
_CARRIER_STEP = 0.25
_CARRIER_MAX_LEN = 12
_SPEECH_START = 0.18
_SPEECH_STEP = 0.11
_SPEECH_CLIP = 0.85
IMAGE_BASE_LEVEL = 0.45
GLYPH_INTENSITY = 0.40

# Seven-segment boxes as (row slice, column slice) on the 28x28 canvas.
_SEGMENTS = {
    "A": (slice(4, 7), slice(9, 19)),
    "B": (slice(4, 14), slice(16, 19)),
    "C": (slice(14, 24), slice(16, 19)),
    "D": (slice(21, 24), slice(9, 19)),
    "E": (slice(14, 24), slice(9, 12)),
    "F": (slice(4, 14), slice(9, 12)),
    "G": (slice(12, 15), slice(9, 19)),
}
_DIGIT_SEGMENTS = {
    0: "ABCDEF",
    1: "BC",
    2: "ABGED",
    3: "ABGCD",
    4: "FGBC",
    5: "AFGCD",
    6: "AFGEDC",
    7: "ABC",
    8: "ABCDEFG",
    9: "ABCDFG",
}


def _noisy_frames(proto: np.ndarray, noise: float, rng: np.random.Generator) -> np.ndarray:
    """Half the speech noise budget is a per-item offset (a speaker-like
    shift, constant across frames), the rest elementwise jitter."""
    offset = rng.uniform(-noise / 2, noise / 2, size=proto.shape[1])
    jitter = rng.uniform(-noise / 2, noise / 2, size=proto.shape)
    return np.clip(proto + offset + jitter, -1.0, 1.0)


def _noisy_grid(proto: np.ndarray, noise: float, rng: np.random.Generator) -> np.ndarray:
    return np.clip(proto + rng.uniform(-noise, noise, size=proto.shape), 0.0, 1.0)


def visual_class_for(spoken_class: str) -> int:
    """Map a spoken class name to the visual digit it denotes."""
    try:
        return SPOKEN_TO_VISUAL[spoken_class]
    except KeyError:
        raise ArgumentError(f"unknown spoken class {spoken_class!r}") from None


def digit_glyph(digit: int) -> np.ndarray:
    """The fixed 28x28 prototype glyph for a visual digit class."""
    if digit not in _DIGIT_SEGMENTS:
        raise ArgumentError(f"digit must be 0-9, got {digit!r}")
    grid = np.full((IMAGE_SIDE, IMAGE_SIDE), IMAGE_BASE_LEVEL)
    for seg in _DIGIT_SEGMENTS[digit]:
        rows, cols = _SEGMENTS[seg]
        grid[rows, cols] = IMAGE_BASE_LEVEL + GLYPH_INTENSITY
    return grid


def _speech_carrier(frame_dim: int) -> np.ndarray:
    """The shared carrier trajectory all spoken prototypes ride on."""
    rng = rng_for(_PROTO_SEED, "carrier", frame_dim)
    start = rng.uniform(-_CARRIER_START, _CARRIER_START, size=frame_dim)
    steps = rng.uniform(-_CARRIER_STEP, _CARRIER_STEP, size=(_CARRIER_MAX_LEN - 1, frame_dim))
    return np.vstack([start, start + np.cumsum(steps, axis=0)])


def _trajectory(rng: np.random.Generator, length: int, frame_dim: int) -> np.ndarray:
    start = rng.uniform(-_SPEECH_START, _SPEECH_START, size=frame_dim)
    steps = rng.uniform(-_SPEECH_STEP, _SPEECH_STEP, size=(length - 1, frame_dim))
    deviation = np.vstack([start, start + np.cumsum(steps, axis=0)])
    traj = _speech_carrier(frame_dim)[:length] + deviation
    return np.clip(traj, -_SPEECH_CLIP, _SPEECH_CLIP)


def speech_prototype(spoken_class: str, frame_dim: int = 13) -> np.ndarray:
    """The fixed prototype trajectory for a spoken digit class."""
    idx = SPOKEN_CLASSES.index(spoken_class)
    length = 6 + idx % 7
    rng = rng_for(_PROTO_SEED, "speech", spoken_class, frame_dim)
    return _trajectory(rng, length, frame_dim)


def _stroke_glyph(rng: np.random.Generator) -> np.ndarray:
    """A random glyph of 3-5 straight strokes, 2 px thick, on the base level."""
    grid = np.full((IMAGE_SIDE, IMAGE_SIDE), IMAGE_BASE_LEVEL)
    for _ in range(int(rng.integers(3, 6))):
        r0, c0, r1, c1 = rng.uniform(4, 24, size=4)
        for t in np.linspace(0.0, 1.0, 48):
            r = int(round(r0 + (r1 - r0) * t))
            c = int(round(c0 + (c1 - c0) * t))
            grid[r:r + 2, c:c + 2] = IMAGE_BASE_LEVEL + GLYPH_INTENSITY
    return grid


def synth_paired_digits(
    n_per_class: int, noise: float, seed: int, frame_dim: int = 13
) -> Tuple[SpeechSet, ImageSet, PairLabels]:
    """Generate the paired-digits corpus: 11 spoken and 10 visual classes.

    Every item is its class prototype plus elementwise uniform noise of
    half-width ``noise``, clipped to the valid range ([-1, 1] for speech
    features, [0, 1] for pixels). Deterministic given the arguments.
    """
    if n_per_class < 1:
        raise ArgumentError(f"n_per_class must be >= 1, got {n_per_class}")
    if noise < 0:
        raise ArgumentError(f"noise must be nonnegative, got {noise}")

    rng_speech = rng_for(seed, "digit-speech-noise")
    rng_image = rng_for(seed, "digit-image-noise")

    speech_items, speech_to_class = [], {}
    for spoken in SPOKEN_CLASSES:
        proto = speech_prototype(spoken, frame_dim)
        for _ in range(n_per_class):
            item_id = f"spk{len(speech_items):05d}"
            speech_items.append(
                SpeechItem(id=item_id, frames=_noisy_frames(proto, noise, rng_speech), label=spoken)
            )
            speech_to_class[item_id] = spoken

    image_items, image_to_class = [], {}
    for digit in VISUAL_CLASSES:
        proto = digit_glyph(digit)
        for _ in range(n_per_class):
            item_id = f"img{len(image_items):05d}"
            image_items.append(ImageItem(id=item_id, grid=_noisy_grid(proto, noise, rng_image), label=digit))
            image_to_class[item_id] = digit

    labels = PairLabels(
        class_names=SPOKEN_CLASSES,
        speech_to_class=speech_to_class,
        image_to_class=image_to_class,
    )
    return SpeechSet(speech_items, frame_dim=frame_dim), ImageSet(image_items), labels


def synth_background(
    n_speech_classes: int,
    n_image_classes: int,
    n_per_class: int,
    noise: float,
    seed: int,
    frame_dim: int = 13,
) -> Tuple[SpeechSet, ImageSet]:
    """Generate labelled background data containing no digit classes.

    Speech classes are random smooth trajectories named "w00", "w01", ...;
    image classes are random stroke glyphs named "g00", "g01", ....
    """
    if n_per_class < 1:
        raise ArgumentError(f"n_per_class must be >= 1, got {n_per_class}")
    if noise < 0:
        raise ArgumentError(f"noise must be nonnegative, got {noise}")

    rng_speech = rng_for(seed, "bg-speech-noise")
    rng_image = rng_for(seed, "bg-image-noise")

    speech_items = []
    for k in range(n_speech_classes):
        name = f"w{k:02d}"
        proto_rng = rng_for(_PROTO_SEED, "bg-speech", k, frame_dim)
        proto = _trajectory(proto_rng, 6 + k % 7, frame_dim)
        for _ in range(n_per_class):
            speech_items.append(
                SpeechItem(id=f"bspk{len(speech_items):05d}", frames=_noisy_frames(proto, noise, rng_speech), label=name)
            )

    image_items = []
    for k in range(n_image_classes):
        name = f"g{k:02d}"
        proto = _stroke_glyph(rng_for(_PROTO_SEED, "bg-image", k))
        for _ in range(n_per_class):
            image_items.append(
                ImageItem(id=f"bimg{len(image_items):05d}", grid=_noisy_grid(proto, noise, rng_image), label=name)
            )

    return SpeechSet(speech_items, frame_dim=frame_dim), ImageSet(image_items)
