import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from multimodal_fewshot.errors import ArgumentError, DegenerateVectorError, ShapeError
from multimodal_fewshot.losses import (
    LossWeights,
    cae_loss,
    latent_match_loss,
    mcae_loss,
    mtriplet_loss,
    weighted_mcae,
)
from multimodal_fewshot.nn.networks import build_direct_model
from tests.conftest import tiny_speech_arch, tiny_vision_arch


def test_cae_loss_examples():
    assert cae_loss(np.array([[1.0]]), np.array([[1.0]])) == 0.0
    assert cae_loss(np.array([[0.0]]), np.array([[1.0]])) == 1.0
    assert np.isclose(cae_loss(np.array([0.5, 0.5]), np.array([0.0, 1.0])), 0.5)
    with pytest.raises(ShapeError):
        cae_loss(np.zeros((2, 3)), np.zeros((3, 2)))


def test_weighted_mcae_examples():
    assert weighted_mcae(0.0, 0.0, 0.0) == 0.0
    assert abs(weighted_mcae(1.0, 2.0, 0.5) - 1.1) <= 1e-12
    assert weighted_mcae(3.0, 9.9, 4.2, LossWeights(1.0, 0.0, 0.0)) == 3.0


def test_loss_weights_defaults_and_validation():
    w = LossWeights()
    assert (w.alpha_a, w.alpha_v, w.alpha_z) == (0.3, 0.3, 0.4)
    with pytest.raises(ArgumentError):
        LossWeights(-0.1, 0.3, 0.4)
    with pytest.raises(ArgumentError):
        LossWeights(float("nan"), 0.3, 0.4)


def test_mcae_loss_linearity_against_parts():
    params = build_direct_model("mcae", tiny_speech_arch(), tiny_vision_arch(), seed=3, dtype=np.float64)
    rng = np.random.default_rng(0)
    example = (
        rng.uniform(-1, 1, (4, 3)),
        rng.uniform(-1, 1, (5, 3)),
        rng.uniform(0, 1, (8, 8)),
        rng.uniform(0, 1, (8, 8)),
    )
    from multimodal_fewshot.nn.networks import decode_image, decode_speech, encode_image, encode_speech

    z_a = encode_speech(params, example[0])
    z_v = encode_image(params, example[2])
    l_a = cae_loss(decode_speech(params, z_a, 5), example[1])
    l_v = cae_loss(decode_image(params, z_v), example[3])
    l_z = latent_match_loss(z_a, z_v)
    for w in (LossWeights(), LossWeights(1, 0, 0), LossWeights(0.2, 0.5, 1.3)):
        assert np.isclose(mcae_loss(example, params, w), weighted_mcae(l_a, l_v, l_z, w), atol=1e-10)


def unit(i, dim=6):
    v = np.zeros(dim)
    v[i] = 1.0
    return v


def test_mtriplet_examples():
    e = unit(0)
    assert abs(mtriplet_loss(e, e, e, e, 0.2) - 0.4) <= 1e-12
    assert mtriplet_loss(e, e, unit(1), unit(2), 0.2) == 0.0
    z_vn = np.zeros(6)
    z_vn[0] = z_vn[1] = 1.0
    assert mtriplet_loss(e, e, unit(1), z_vn, 0.2) == 0.0  # derived: 0.2 - 0.29289 < 0


def test_mtriplet_bounds_and_degenerate():
    rng = np.random.default_rng(2)
    m = 0.2
    for _ in range(200):
        z = [rng.normal(size=5) for _ in range(4)]
        val = mtriplet_loss(*z, m)
        assert 0.0 <= val <= 2 * (m + 2) + 1e-12
    with pytest.raises(DegenerateVectorError):
        mtriplet_loss(np.zeros(5), unit(0, 5), unit(1, 5), unit(2, 5), m)


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 100_000), st.floats(0.05, 5.0), st.integers(0, 3))
def test_mtriplet_scale_invariance(seed, scale, which):
    rng = np.random.default_rng(seed)
    z = [rng.normal(size=5) for _ in range(4)]
    base = mtriplet_loss(*z, 0.2)
    scaled = list(z)
    scaled[which] = scaled[which] * scale
    assert abs(mtriplet_loss(*scaled, 0.2) - base) <= 1e-9


def test_mtriplet_zero_when_negatives_far():
    rng = np.random.default_rng(4)
    for _ in range(50):
        z_a = rng.normal(size=6)
        z_v = z_a + rng.normal(scale=0.01, size=6)
        z_neg = -z_a + rng.normal(scale=0.01, size=6)
        assert mtriplet_loss(z_a, z_v, z_neg, z_neg, 0.2) == 0.0
