"""Layer- and loss-level gradient checks against central finite differences.

All networks here are float64 with randomized parameters; the acceptance
suite runs the full >= 20-instance sweep, these cover each layer kind.
"""

import numpy as np

from multimodal_fewshot.losses import LossWeights, softmax_cross_entropy
from multimodal_fewshot.nn import layers as L
from multimodal_fewshot.nn.gradcheck import finite_difference, max_relative_error
from multimodal_fewshot.nn.networks import build_direct_model
from multimodal_fewshot.training import MCAEExample, TripletExample, _mcae_batch, _triplet_batch
from tests.conftest import randomize_params, tiny_speech_arch, tiny_vision_arch

H = 1e-5
TOL = 1e-4


def check_layer(layer, x, forward):
    y, cache = forward(x)
    rng = np.random.default_rng(99)
    probe = rng.normal(size=y.shape)

    def f():
        out, _ = forward(x)
        return float(np.sum(out * probe))

    layer.zero_grads()
    dx = layer.backward(cache, probe)
    analytic = [dx] + [g.copy() for g in layer.grads.values()]
    numeric = finite_difference(f, [x] + list(layer.params.values()), h=H)
    assert max_relative_error(analytic, numeric) <= TOL


def test_linear_gradients():
    rng = np.random.default_rng(0)
    layer = L.Linear(4, 3, rng, np.float64)
    check_layer(layer, rng.normal(size=(5, 4)), layer.forward)


def test_rnn_gradients():
    rng = np.random.default_rng(1)
    layer = L.RNN(3, 4, rng, np.float64)
    check_layer(layer, rng.normal(size=(2, 6, 3)), layer.forward)


def test_conv_gradients():
    rng = np.random.default_rng(2)
    layer = L.Conv2d(2, 3, rng, dtype=np.float64)
    check_layer(layer, rng.normal(size=(2, 2, 8, 8)), layer.forward)


def test_conv_transpose_gradients():
    rng = np.random.default_rng(3)
    layer = L.ConvTranspose2d(3, 2, rng, dtype=np.float64)
    layer.b[...] = rng.normal(size=layer.b.shape)  # keep pre-activations off 0
    check_layer(layer, rng.normal(size=(2, 3, 4, 4)), layer.forward)


def test_maxpool_gradients():
    rng = np.random.default_rng(4)
    pool = L.MaxPool2d(2)
    x = rng.normal(size=(2, 3, 8, 8))
    y, cache = pool.forward(x)
    probe = rng.normal(size=y.shape)

    def f():
        out, _ = pool.forward(x)
        return float(np.sum(out * probe))

    dx = pool.backward(cache, probe)
    numeric = finite_difference(f, [x], h=H)
    assert max_relative_error([dx], numeric) <= TOL


def test_softmax_cross_entropy_gradients():
    rng = np.random.default_rng(5)
    logits = rng.normal(size=(6, 4))
    targets = rng.integers(0, 4, size=6)

    def f():
        losses, _ = softmax_cross_entropy(logits, targets)
        return float(np.sum(losses))

    _, grad = softmax_cross_entropy(logits, targets)
    numeric = finite_difference(f, [logits], h=H)
    assert max_relative_error([grad], numeric) <= TOL


def test_mcae_loss_gradients_through_networks():
    rng = np.random.default_rng(6)
    params = build_direct_model("mcae", tiny_speech_arch(), tiny_vision_arch(), seed=0, dtype=np.float64)
    randomize_params(params, 101)
    batch = [
        MCAEExample(
            x_a=rng.uniform(-1, 1, (4, 3)),
            x_a_pair=rng.uniform(-1, 1, (5, 3)),
            x_v=rng.uniform(0, 1, (8, 8)),
            x_v_pair=rng.uniform(0, 1, (8, 8)),
        )
        for _ in range(2)
    ]
    weights = LossWeights()

    def f():
        return float(np.mean(_mcae_batch(params, batch, weights, update=False)))

    params.zero_grads()
    _mcae_batch(params, batch, weights, update=True)
    analytic = [g.copy() for _, g in params.grad_items()]
    numeric = finite_difference(f, [p for _, p in params.param_items()], h=H)
    assert max_relative_error(analytic, numeric) <= TOL


def test_mtriplet_loss_gradients_through_encoders():
    rng = np.random.default_rng(7)
    params = build_direct_model("mtriplet", tiny_speech_arch(), tiny_vision_arch(), seed=0, dtype=np.float64)
    randomize_params(params, 102)
    anchors = [
        TripletExample(x_a=rng.uniform(-1, 1, (4, 3)), x_v=rng.uniform(0, 1, (8, 8)), pivot_class="c")
        for _ in range(3)
    ]
    negs_s = [rng.uniform(-1, 1, (6, 3)) for _ in range(3)]
    negs_i = [rng.uniform(0, 1, (8, 8)) for _ in range(3)]

    def f():
        return float(np.mean(_triplet_batch(params, anchors, negs_s, negs_i, 0.2, update=False)))

    params.zero_grads()
    _triplet_batch(params, anchors, negs_s, negs_i, 0.2, update=True)
    analytic = [g.copy() for _, g in params.grad_items()]
    numeric = finite_difference(f, [p for _, p in params.param_items()], h=H)
    assert max_relative_error(analytic, numeric) <= TOL
