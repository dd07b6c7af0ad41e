"""Training losses: correspondence reconstruction, the three-term
multimodal correspondence loss, and the dual-margin cross-modal triplet.

Reconstruction losses are per-example *sums* of squared differences (not
element means); a batch loss is the mean of example losses. The triplet
uses cosine distance on both terms:

    max{0, m + d(z_a, z_v) - d(z_a, z_v_neg)}
  + max{0, m + d(z_a, z_v) - d(z_a_neg, z_v)}
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ArgumentError, DegenerateVectorError, ShapeError
from .nn.networks import decode_image, decode_speech, encode_image, encode_speech


@dataclass(frozen=True)
class LossWeights:
    """Weights for the combined correspondence loss terms."""

    alpha_a: float = 0.3
    alpha_v: float = 0.3
    alpha_z: float = 0.4

    def __post_init__(self):
        for name in ("alpha_a", "alpha_v", "alpha_z"):
            value = float(getattr(self, name))
            if not np.isfinite(value) or value < 0:
                raise ArgumentError(f"{name} must be finite and nonnegative, got {value!r}")
            object.__setattr__(self, name, value)


def cae_loss(y_hat, x_pair) -> float:
    """Sum of squared differences between a reconstruction and its target."""
    y = np.asarray(getattr(y_hat, "frames", getattr(y_hat, "grid", y_hat)), dtype=np.float64)
    x = np.asarray(getattr(x_pair, "frames", getattr(x_pair, "grid", x_pair)), dtype=np.float64)
    if y.shape != x.shape:
        raise ShapeError(f"reconstruction shape {y.shape} != target shape {x.shape}")
    diff = y - x
    return float(np.sum(diff * diff))


def latent_match_loss(z_a, z_v) -> float:
    """Squared Euclidean distance between the two modality embeddings."""
    za = np.asarray(z_a, dtype=np.float64)
    zv = np.asarray(z_v, dtype=np.float64)
    if za.shape != zv.shape:
        raise ShapeError(f"latent shapes differ: {za.shape} vs {zv.shape}")
    diff = za - zv
    return float(np.sum(diff * diff))


def weighted_mcae(l_a: float, l_v: float, l_z: float, weights: LossWeights = LossWeights()) -> float:
    """Combine the three loss terms: alpha_a*l_a + alpha_v*l_v + alpha_z*l_z."""
    return weights.alpha_a * l_a + weights.alpha_v * l_v + weights.alpha_z * l_z


def mcae_loss(example, params, weights: LossWeights = LossWeights()) -> float:
    """Full combined loss for one (x_a, x_a_pair, x_v, x_v_pair) example."""
    x_a, x_a_pair, x_v, x_v_pair = (
        (example.x_a, example.x_a_pair, example.x_v, example.x_v_pair)
        if hasattr(example, "x_a")
        else example
    )
    z_a = encode_speech(params, x_a)
    target = np.asarray(getattr(x_a_pair, "frames", x_a_pair))
    l_a = cae_loss(decode_speech(params, z_a, target.shape[0]), target)
    z_v = encode_image(params, x_v)
    l_v = cae_loss(decode_image(params, z_v), getattr(x_v_pair, "grid", x_v_pair))
    l_z = latent_match_loss(z_a, z_v)
    return weighted_mcae(l_a, l_v, l_z, weights)


def _normalize_rows(mat: np.ndarray):
    norms = np.linalg.norm(mat, axis=1)
    if np.any(norms == 0.0):
        raise DegenerateVectorError("zero-norm embedding in triplet loss")
    return mat / norms[:, None], norms


def _cosine_rows_with_grads(a: np.ndarray, b: np.ndarray):
    """Row-wise cosine distance plus its gradients w.r.t. both rows."""
    an, na = _normalize_rows(a)
    bn, nb = _normalize_rows(b)
    sim = np.sum(an * bn, axis=1)
    dist = 1.0 - sim
    grad_a = (sim[:, None] * an - bn) / na[:, None]
    grad_b = (sim[:, None] * bn - an) / nb[:, None]
    return dist, grad_a, grad_b


def mtriplet_batch(z_a, z_v, z_a_neg, z_v_neg, margin: float):
    """Per-row triplet losses and gradients w.r.t. all four embeddings."""
    z_a = np.asarray(z_a, dtype=np.float64)
    z_v = np.asarray(z_v, dtype=np.float64)
    z_a_neg = np.asarray(z_a_neg, dtype=np.float64)
    z_v_neg = np.asarray(z_v_neg, dtype=np.float64)
    for other in (z_v, z_a_neg, z_v_neg):
        if other.shape != z_a.shape:
            raise ShapeError("all four embedding batches must share one shape")

    d_av, g_av_a, g_av_v = _cosine_rows_with_grads(z_a, z_v)
    d_avn, g_avn_a, g_avn_vn = _cosine_rows_with_grads(z_a, z_v_neg)
    d_anv, g_anv_an, g_anv_v = _cosine_rows_with_grads(z_a_neg, z_v)

    term1 = margin + d_av - d_avn
    term2 = margin + d_av - d_anv
    active1 = (term1 > 0).astype(np.float64)[:, None]
    active2 = (term2 > 0).astype(np.float64)[:, None]
    losses = np.maximum(term1, 0.0) + np.maximum(term2, 0.0)

    d_za = active1 * (g_av_a - g_avn_a) + active2 * g_av_a
    d_zv = active1 * g_av_v + active2 * (g_av_v - g_anv_v)
    d_zan = -active2 * g_anv_an
    d_zvn = -active1 * g_avn_vn
    return losses, d_za, d_zv, d_zan, d_zvn


def mtriplet_loss(z_a, z_v, z_a_neg, z_v_neg, margin: float = 0.2) -> float:
    """Dual-margin triplet loss for a single example."""
    rows = [np.asarray(z, dtype=np.float64).ravel()[None, :] for z in (z_a, z_v, z_a_neg, z_v_neg)]
    losses, *_ = mtriplet_batch(*rows, margin=margin)
    return float(losses[0])


def softmax_cross_entropy(logits: np.ndarray, targets: np.ndarray):
    """Per-example cross-entropy and its gradient w.r.t. the logits."""
    logits = np.asarray(logits, dtype=np.float64)
    shifted = logits - logits.max(axis=1, keepdims=True)
    log_z = np.log(np.sum(np.exp(shifted), axis=1))
    losses = log_z - shifted[np.arange(len(targets)), targets]
    probs = np.exp(shifted - log_z[:, None])
    grad = probs
    grad[np.arange(len(targets)), targets] -= 1.0
    return losses, grad
