"""Encoder/decoder networks for both modalities and the classifier head.

Reference architecture: the speech encoder runs stacked tanh recurrent
layers (hidden width 200, depth 3 by default) over the frame sequence and
projects the final state to the 130-dimensional latent space; the speech
decoder unrolls the same stack conditioned on the latent vector at every
step with a per-step linear output. The vision encoder is two 3x3
convolution + max-pool blocks (32 then 64 channels) followed by a linear
projection; the vision decoder mirrors it with transposed convolutions and
a final sigmoid. All sizes are configurable so tests can run tiny
instances.
"""

from __future__ import annotations

import copy
from dataclasses import asdict, dataclass, field
from typing import Optional

import numpy as np

from ..errors import ArgumentError, ShapeError, StateError
from ..seeding import rng_for
from .layers import (
    Conv2d,
    ConvTranspose2d,
    Linear,
    MaxPool2d,
    RNNStack,
    relu_backward,
    relu_forward,
    sigmoid_backward,
    sigmoid_forward,
)

LATENT_DIM = 130


@dataclass(frozen=True)
class SpeechArch:
    frame_dim: int
    hidden: int = 200
    depth: int = 3
    latent_dim: int = LATENT_DIM


@dataclass(frozen=True)
class VisionArch:
    side: int = 28
    channels: tuple = (32, 64)
    latent_dim: int = LATENT_DIM

    def __post_init__(self):
        if self.side % 4 != 0:
            raise ArgumentError(f"image side must be divisible by 4, got {self.side}")
        object.__setattr__(self, "channels", tuple(self.channels))


class SpeechEncoder:
    def __init__(self, arch: SpeechArch, rng, dtype=np.float32):
        self.arch = arch
        self.dtype = dtype
        self.rnn = RNNStack(arch.frame_dim, arch.hidden, arch.depth, rng, dtype)
        self.proj = Linear(arch.hidden, arch.latent_dim, rng, dtype)

    def layers(self):
        return [*self.rnn.cells, self.proj]

    def forward(self, x: np.ndarray):
        """x: (batch, time, frame_dim) -> (batch, latent_dim)."""
        states, rnn_cache = self.rnn.forward(np.asarray(x, dtype=self.dtype))
        final = states[:, -1, :]
        z, lin_cache = self.proj.forward(final)
        return z, (rnn_cache, lin_cache, states.shape)

    def backward(self, cache, dz: np.ndarray) -> None:
        rnn_cache, lin_cache, states_shape = cache
        dfinal = self.proj.backward(lin_cache, dz)
        dstates = np.zeros(states_shape, dtype=self.dtype)
        dstates[:, -1, :] = dfinal
        self.rnn.backward(rnn_cache, dstates)


class SpeechDecoder:
    def __init__(self, arch: SpeechArch, rng, dtype=np.float32):
        self.arch = arch
        self.dtype = dtype
        self.rnn = RNNStack(arch.latent_dim, arch.hidden, arch.depth, rng, dtype)
        self.out = Linear(arch.hidden, arch.frame_dim, rng, dtype)

    def layers(self):
        return [*self.rnn.cells, self.out]

    def forward(self, z: np.ndarray, steps: int):
        """z: (batch, latent_dim) -> (batch, steps, frame_dim)."""
        if steps < 1:
            raise ArgumentError(f"target length must be >= 1, got {steps}")
        z = np.asarray(z, dtype=self.dtype)
        batch = z.shape[0]
        x = np.repeat(z[:, None, :], steps, axis=1)
        states, rnn_cache = self.rnn.forward(x)
        flat, lin_cache = self.out.forward(states.reshape(batch * steps, -1))
        y = flat.reshape(batch, steps, self.arch.frame_dim)
        return y, (rnn_cache, lin_cache, states.shape)

    def backward(self, cache, dy: np.ndarray) -> np.ndarray:
        rnn_cache, lin_cache, states_shape = cache
        batch, steps, _ = dy.shape
        dflat = self.out.backward(lin_cache, dy.reshape(batch * steps, -1))
        dstates = dflat.reshape(states_shape)
        dx = self.rnn.backward(rnn_cache, dstates)
        return dx.sum(axis=1)


class VisionEncoder:
    def __init__(self, arch: VisionArch, rng, dtype=np.float32):
        self.arch = arch
        self.dtype = dtype
        c1, c2 = arch.channels
        self.conv1 = Conv2d(1, c1, rng, dtype=dtype)
        self.conv2 = Conv2d(c1, c2, rng, dtype=dtype)
        self.pool = MaxPool2d(2)
        self.flat_dim = c2 * (arch.side // 4) ** 2
        self.proj = Linear(self.flat_dim, arch.latent_dim, rng, dtype)

    def layers(self):
        return [self.conv1, self.conv2, self.proj]

    def forward(self, x: np.ndarray):
        """x: (batch, 1, side, side) -> (batch, latent_dim)."""
        x = np.asarray(x, dtype=self.dtype)
        a1, c1 = self.conv1.forward(x)
        r1, m1 = relu_forward(a1)
        p1, pc1 = self.pool.forward(r1)
        a2, c2 = self.conv2.forward(p1)
        r2, m2 = relu_forward(a2)
        p2, pc2 = self.pool.forward(r2)
        flat = p2.reshape(x.shape[0], self.flat_dim)
        z, lin = self.proj.forward(flat)
        return z, (c1, m1, pc1, c2, m2, pc2, p2.shape, lin)

    def backward(self, cache, dz: np.ndarray) -> None:
        c1, m1, pc1, c2, m2, pc2, p2_shape, lin = cache
        dflat = self.proj.backward(lin, dz)
        dp2 = dflat.reshape(p2_shape)
        dr2 = self.pool.backward(pc2, dp2)
        da2 = relu_backward(dr2, m2)
        dp1 = self.conv2.backward(c2, da2)
        dr1 = self.pool.backward(pc1, dp1)
        da1 = relu_backward(dr1, m1)
        self.conv1.backward(c1, da1)


class VisionDecoder:
    def __init__(self, arch: VisionArch, rng, dtype=np.float32):
        self.arch = arch
        self.dtype = dtype
        c1, c2 = arch.channels
        self.base = arch.side // 4
        self.c2 = c2
        self.proj = Linear(arch.latent_dim, c2 * self.base ** 2, rng, dtype)
        self.deconv1 = ConvTranspose2d(c2, c1, rng, dtype=dtype)
        self.deconv2 = ConvTranspose2d(c1, 1, rng, dtype=dtype)

    def layers(self):
        return [self.proj, self.deconv1, self.deconv2]

    def forward(self, z: np.ndarray):
        """z: (batch, latent_dim) -> (batch, 1, side, side) in (0, 1)."""
        z = np.asarray(z, dtype=self.dtype)
        flat, lin = self.proj.forward(z)
        r0, m0 = relu_forward(flat)
        grid = r0.reshape(z.shape[0], self.c2, self.base, self.base)
        a1, c1 = self.deconv1.forward(grid)
        r1, m1 = relu_forward(a1)
        a2, c2 = self.deconv2.forward(r1)
        y, sig = sigmoid_forward(a2)
        return y, (lin, m0, grid.shape, c1, m1, c2, sig)

    def backward(self, cache, dy: np.ndarray) -> np.ndarray:
        lin, m0, grid_shape, c1, m1, c2, sig = cache
        da2 = sigmoid_backward(dy, sig)
        dr1 = self.deconv2.backward(c2, da2)
        da1 = relu_backward(dr1, m1)
        dgrid = self.deconv1.backward(c1, da1)
        dr0 = dgrid.reshape(dy.shape[0], -1)
        dflat = relu_backward(dr0, m0)
        return self.proj.backward(lin, dflat)


_NETWORK_FIELDS = (
    "speech_encoder",
    "speech_decoder",
    "vision_encoder",
    "vision_decoder",
    "head",
)


@dataclass
class ModelParams:
    """A bundle of networks plus the architecture needed to rebuild them."""

    kind: str
    latent_dim: int
    speech_arch: Optional[SpeechArch] = None
    vision_arch: Optional[VisionArch] = None
    speech_encoder: Optional[SpeechEncoder] = None
    speech_decoder: Optional[SpeechDecoder] = None
    vision_encoder: Optional[VisionEncoder] = None
    vision_decoder: Optional[VisionDecoder] = None
    head: Optional[Linear] = None
    classes: Optional[tuple] = None
    meta: dict = field(default_factory=dict)

    def networks(self):
        for name in _NETWORK_FIELDS:
            net = getattr(self, name)
            if net is not None:
                yield name, net

    def _layer_items(self):
        for net_name, net in self.networks():
            if isinstance(net, Linear):
                yield net_name, net
            else:
                for i, layer in enumerate(net.layers()):
                    yield f"{net_name}.{i}", layer

    def param_items(self):
        for prefix, layer in self._layer_items():
            yield from layer.param_items(prefix)

    def grad_items(self):
        for prefix, layer in self._layer_items():
            yield from layer.grad_items(prefix)

    def zero_grads(self):
        for _, layer in self._layer_items():
            layer.zero_grads()

    def snapshot(self) -> dict:
        return {name: arr.copy() for name, arr in self.param_items()}

    def restore(self, snap: dict) -> None:
        for name, arr in self.param_items():
            arr[...] = snap[name]

    def assert_finite(self) -> None:
        for name, arr in self.param_items():
            if not np.all(np.isfinite(arr)):
                raise StateError(f"non-finite values in parameter {name}")


def clone_model(params: ModelParams) -> ModelParams:
    """Deep copy: independent arrays, same architecture and metadata."""
    return copy.deepcopy(params)


def _speech_arch_from(arch) -> SpeechArch:
    return arch if isinstance(arch, SpeechArch) else SpeechArch(**arch)


def _vision_arch_from(arch) -> VisionArch:
    return arch if isinstance(arch, VisionArch) else VisionArch(**arch)


def build_direct_model(kind: str, speech_arch=None, vision_arch=None, seed: int = 0,
                       dtype=np.float32) -> ModelParams:
    """Build an untrained model bundle.

    Kinds: "mtriplet" (both encoders), "mcae" (encoders plus decoders),
    "speech_cae" / "vision_cae" (one modality's encoder-decoder).
    """
    if kind not in ("mtriplet", "mcae", "speech_cae", "vision_cae"):
        raise ArgumentError(f"unknown direct model kind {kind!r}")
    sa = _speech_arch_from(speech_arch) if speech_arch is not None else None
    va = _vision_arch_from(vision_arch) if vision_arch is not None else None
    if kind in ("mtriplet", "mcae"):
        if sa is None or va is None:
            raise ArgumentError(f"kind {kind!r} needs both architectures")
        if sa.latent_dim != va.latent_dim:
            raise ArgumentError("speech and vision latent dims must match")
    if kind == "speech_cae" and sa is None:
        raise ArgumentError("speech_cae needs a speech architecture")
    if kind == "vision_cae" and va is None:
        raise ArgumentError("vision_cae needs a vision architecture")

    params = ModelParams(
        kind=kind,
        latent_dim=(sa or va).latent_dim,
        speech_arch=sa,
        vision_arch=va,
    )
    if kind in ("mtriplet", "mcae", "speech_cae"):
        params.speech_encoder = SpeechEncoder(sa, rng_for(seed, "speech-encoder"), dtype)
    if kind in ("mtriplet", "mcae", "vision_cae"):
        params.vision_encoder = VisionEncoder(va, rng_for(seed, "vision-encoder"), dtype)
    if kind in ("mcae", "speech_cae"):
        params.speech_decoder = SpeechDecoder(sa, rng_for(seed, "speech-decoder"), dtype)
    if kind in ("mcae", "vision_cae"):
        params.vision_decoder = VisionDecoder(va, rng_for(seed, "vision-decoder"), dtype)
    return params


def build_classifier(modality: str, arch, classes, seed: int, dtype=np.float32) -> ModelParams:
    """Build an untrained background classifier for one modality."""
    classes = tuple(classes)
    if len(classes) < 2:
        raise ArgumentError(f"a classifier needs >= 2 classes, got {len(classes)}")
    if modality == "speech":
        sa = _speech_arch_from(arch)
        params = ModelParams(
            kind="speech_classifier",
            latent_dim=sa.latent_dim,
            speech_arch=sa,
            speech_encoder=SpeechEncoder(sa, rng_for(seed, "encoder"), dtype),
            head=Linear(sa.latent_dim, len(classes), rng_for(seed, "head"), dtype),
            classes=classes,
        )
    elif modality == "vision":
        va = _vision_arch_from(arch)
        params = ModelParams(
            kind="vision_classifier",
            latent_dim=va.latent_dim,
            vision_arch=va,
            vision_encoder=VisionEncoder(va, rng_for(seed, "encoder"), dtype),
            head=Linear(va.latent_dim, len(classes), rng_for(seed, "head"), dtype),
            classes=classes,
        )
    else:
        raise ArgumentError(f"unknown modality {modality!r}")
    return params


def _frames_of(x) -> np.ndarray:
    return np.asarray(getattr(x, "frames", x), dtype=np.float64)


def _grid_of(x) -> np.ndarray:
    return np.asarray(getattr(x, "grid", x), dtype=np.float64)


def encode_speech(params: ModelParams, x) -> np.ndarray:
    """Encode one frame sequence to a latent vector.

    Output length equals the model's latent dim regardless of input length;
    inference is deterministic.
    """
    if params.speech_encoder is None:
        raise StateError(f"model kind {params.kind!r} has no speech encoder")
    frames = _frames_of(x)
    if frames.ndim != 2 or frames.shape[1] != params.speech_arch.frame_dim:
        raise ShapeError(
            f"expected (*, {params.speech_arch.frame_dim}) frames, got {frames.shape}"
        )
    z, _ = params.speech_encoder.forward(frames[None, :, :])
    return z[0].astype(np.float64)


def encode_speech_batch(params: ModelParams, items) -> np.ndarray:
    """Encode many sequences, batching equal lengths together."""
    if params.speech_encoder is None:
        raise StateError(f"model kind {params.kind!r} has no speech encoder")
    seqs = [_frames_of(it) for it in items]
    out = np.zeros((len(seqs), params.latent_dim))
    by_len: dict[int, list[int]] = {}
    for i, s in enumerate(seqs):
        if s.shape[1] != params.speech_arch.frame_dim:
            raise ShapeError(f"item {i}: frame dim {s.shape[1]} != {params.speech_arch.frame_dim}")
        by_len.setdefault(s.shape[0], []).append(i)
    for length in sorted(by_len):
        idxs = by_len[length]
        batch = np.stack([seqs[i] for i in idxs])
        z, _ = params.speech_encoder.forward(batch)
        out[idxs] = z.astype(np.float64)
    return out


def encode_image(params: ModelParams, x) -> np.ndarray:
    """Encode one image grid to a latent vector."""
    if params.vision_encoder is None:
        raise StateError(f"model kind {params.kind!r} has no vision encoder")
    grid = _grid_of(x)
    side = params.vision_arch.side
    if grid.shape != (side, side):
        raise ShapeError(f"expected ({side}, {side}) image, got {grid.shape}")
    z, _ = params.vision_encoder.forward(grid[None, None, :, :])
    return z[0].astype(np.float64)


def encode_image_batch(params: ModelParams, items) -> np.ndarray:
    if params.vision_encoder is None:
        raise StateError(f"model kind {params.kind!r} has no vision encoder")
    grids = np.stack([_grid_of(it) for it in items])[:, None, :, :]
    z, _ = params.vision_encoder.forward(grids)
    return z.astype(np.float64)


def decode_speech(params: ModelParams, z, target_len: int) -> np.ndarray:
    """Decode a latent vector to a frame sequence of the requested length."""
    if params.speech_decoder is None:
        raise StateError(f"model kind {params.kind!r} has no speech decoder")
    if target_len < 1:
        raise ArgumentError(f"target_len must be >= 1, got {target_len}")
    z = np.asarray(z, dtype=np.float64)
    y, _ = params.speech_decoder.forward(z[None, :], target_len)
    return y[0].astype(np.float64)


def decode_image(params: ModelParams, z) -> np.ndarray:
    """Decode a latent vector to an image grid with values in (0, 1)."""
    if params.vision_decoder is None:
        raise StateError(f"model kind {params.kind!r} has no vision decoder")
    z = np.asarray(z, dtype=np.float64)
    y, _ = params.vision_decoder.forward(z[None, :])
    return y[0, 0].astype(np.float64)


def classifier_logits(params: ModelParams, z: np.ndarray) -> np.ndarray:
    if params.head is None:
        raise StateError("model has no classifier head")
    logits, _ = params.head.forward(np.asarray(z, dtype=params.head.w.dtype))
    return logits


def classifier_embedding(params: ModelParams, item) -> np.ndarray:
    """Penultimate-layer activations of a trained classifier (the layer
    before the softmax), used as the transfer-learned embedding."""
    if params.head is None:
        raise StateError("classifier_embedding requires a classifier head")
    if params.kind == "speech_classifier":
        return encode_speech(params, item)
    if params.kind == "vision_classifier":
        return encode_image(params, item)
    raise StateError(f"model kind {params.kind!r} is not a classifier")


def classifier_embedding_batch(params: ModelParams, items) -> np.ndarray:
    if params.head is None:
        raise StateError("classifier_embedding requires a classifier head")
    if params.kind == "speech_classifier":
        return encode_speech_batch(params, items)
    if params.kind == "vision_classifier":
        return encode_image_batch(params, items)
    raise StateError(f"model kind {params.kind!r} is not a classifier")


def arch_to_dict(arch) -> Optional[dict]:
    return None if arch is None else asdict(arch)
