import numpy as np
import pytest

from multimodal_fewshot import SpeechArch, VisionArch, synth_paired_digits
from multimodal_fewshot.data.sets import SplitSpec, split


def tiny_speech_arch(frame_dim=3, latent=4):
    return SpeechArch(frame_dim=frame_dim, hidden=5, depth=1, latent_dim=latent)


def tiny_vision_arch(latent=4):
    return VisionArch(side=8, channels=(2, 3), latent_dim=latent)


def randomize_params(params, seed, scale=0.4):
    """Fill every parameter with random values (zero biases sit exactly on
    ReLU kinks, which breaks finite differences, not the analytic side)."""
    rng = np.random.default_rng(seed)
    for _, p in params.param_items():
        p[...] = rng.normal(scale=scale, size=p.shape).astype(p.dtype)


@pytest.fixture(scope="session")
def digits_small():
    """A small paired-digits corpus with train/val/test splits and labels."""
    speech, images, labels = synth_paired_digits(20, 0.3, seed=901)
    sp = split(speech, SplitSpec((0.6, 0.15, 0.25), seed=11))
    im = split(images, SplitSpec((0.6, 0.15, 0.25), seed=12))
    return {
        "speech": dict(zip(("train", "val", "test"), sp)),
        "images": dict(zip(("train", "val", "test"), im)),
        "labels": labels,
    }
