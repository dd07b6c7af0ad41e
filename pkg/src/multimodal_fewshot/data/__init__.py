from .sets import (
    IMAGE_SIDE,
    ImageItem,
    ImageSet,
    PairLabels,
    SpeechItem,
    SpeechSet,
    SplitSpec,
    split,
    strip_labels,
)
from .idx import load_idx_images, load_idx_labels, save_idx_images
from .mfca import load_feature_archive, write_feature_archive
from .preprocess import preprocess_background_image
from .synth import (
    SPOKEN_CLASSES,
    SPOKEN_TO_VISUAL,
    VISUAL_CLASSES,
    digit_glyph,
    speech_prototype,
    synth_background,
    synth_paired_digits,
    visual_class_for,
)

__all__ = [
    "IMAGE_SIDE",
    "ImageItem",
    "ImageSet",
    "PairLabels",
    "SpeechItem",
    "SpeechSet",
    "SplitSpec",
    "split",
    "strip_labels",
    "load_idx_images",
    "load_idx_labels",
    "save_idx_images",
    "load_feature_archive",
    "write_feature_archive",
    "preprocess_background_image",
    "SPOKEN_CLASSES",
    "SPOKEN_TO_VISUAL",
    "VISUAL_CLASSES",
    "digit_glyph",
    "speech_prototype",
    "synth_background",
    "synth_paired_digits",
    "visual_class_for",
]
