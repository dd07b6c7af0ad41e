"""Transfer-learned background classifiers.

A classifier is the modality encoder plus a softmax head, trained with
cross-entropy on labelled background data that must not contain any of
the held-out digit classes. The penultimate layer (the encoder output,
the layer before the softmax) is the transfer embedding used for pair
mining and the indirect classifier baseline.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .data.sets import ImageSet, SpeechSet
from .data.synth import SPOKEN_CLASSES
from .errors import ArgumentError, ContaminationError
from .losses import softmax_cross_entropy
from .nn.networks import (
    LATENT_DIM,
    ModelParams,
    SpeechArch,
    VisionArch,
    build_classifier,
    classifier_embedding_batch,
)
from .nn.optim import Adam
from .seeding import rng_for
from .training import _encode_speech_grouped, _backward_speech_grouped, early_stop

DIGIT_CLASS_NAMES = frozenset(SPOKEN_CLASSES) | {str(d) for d in range(10)}


@dataclass(frozen=True)
class ClassifierConfig:
    learning_rate: float = 1e-3
    batch_size: int = 64
    max_epochs: int = 20
    patience: int = 3
    seed: int = 0
    val_fraction: float = 0.15
    hidden: int = 200
    depth: int = 3
    latent_dim: int = LATENT_DIM


def _check_background(dataset, exclude) -> list:
    if len(dataset) == 0:
        raise ArgumentError("background set is empty")
    if not dataset.labelled:
        raise ArgumentError("background items must all carry labels")
    classes = sorted({str(item.label) for item in dataset})
    for cls in classes:
        if cls.lower() in exclude:
            raise ContaminationError(f"background data contains held-out class {cls!r}")
    if len(classes) < 2:
        raise ArgumentError(f"background data needs >= 2 classes, got {len(classes)}")
    return classes


def _holdout(dataset, fraction: float, seed: int):
    """Stratified train/validation holdout used when no val set is given."""
    rng = rng_for(seed, "holdout")
    by_class: dict = {}
    for pos, item in enumerate(dataset.items):
        by_class.setdefault(str(item.label), []).append(pos)
    val_positions = set()
    for cls in sorted(by_class):
        positions = by_class[cls]
        n_val = max(1, int(len(positions) * fraction)) if len(positions) > 1 else 0
        chosen = rng.permutation(len(positions))[:n_val]
        val_positions.update(positions[i] for i in chosen)
    train_items = [it for pos, it in enumerate(dataset.items) if pos not in val_positions]
    val_items = [it for pos, it in enumerate(dataset.items) if pos in val_positions]
    return dataset.replace_items(train_items), dataset.replace_items(val_items)


def _forward_logits(params: ModelParams, items, update: bool, targets=None, scale: float = 1.0):
    """Encoder + head forward; when updating, backprop cross-entropy."""
    if params.kind == "speech_classifier":
        frames = [np.asarray(it.frames, dtype=np.float64) for it in items]
        z, groups = _encode_speech_grouped(params.speech_encoder, frames, params.latent_dim)
        encoder, backward = params.speech_encoder, groups
    else:
        grids = np.stack([np.asarray(it.grid, dtype=np.float64) for it in items])[:, None, :, :]
        z_raw, cache = params.vision_encoder.forward(grids.astype(params.vision_encoder.dtype))
        z = z_raw.astype(np.float64)
        encoder, backward = params.vision_encoder, cache

    logits, head_cache = params.head.forward(z.astype(params.head.w.dtype))
    if targets is None:
        return logits.astype(np.float64)

    losses, d_logits = softmax_cross_entropy(logits, targets)
    if update:
        d_z = params.head.backward(head_cache, (d_logits * scale).astype(params.head.w.dtype))
        if params.kind == "speech_classifier":
            _backward_speech_grouped(encoder, backward, d_z.astype(np.float64))
        else:
            encoder.backward(backward, d_z)
    return losses


def train_classifier(
    background,
    config: ClassifierConfig = ClassifierConfig(),
    val=None,
    exclude=DIGIT_CLASS_NAMES,
    log_path=None,
) -> ModelParams:
    """Train a background classifier for whichever modality the set holds.

    Raises ContaminationError if any background label is a held-out digit
    class; requires at least two classes. Returns best-validation params
    with the softmax head retained.
    """
    classes = _check_background(background, exclude)
    if val is None:
        background, val = _holdout(background, config.val_fraction, config.seed)
    else:
        _check_background(val, exclude)

    if isinstance(background, SpeechSet):
        arch = SpeechArch(
            frame_dim=background.frame_dim, hidden=config.hidden, depth=config.depth,
            latent_dim=config.latent_dim,
        )
        params = build_classifier("speech", arch, classes, config.seed)
    elif isinstance(background, ImageSet):
        arch = VisionArch(latent_dim=config.latent_dim)
        params = build_classifier("vision", arch, classes, config.seed)
    else:
        raise ArgumentError(f"unsupported background set type {type(background).__name__}")

    class_index = {cls: i for i, cls in enumerate(classes)}
    train_items = list(background.items)
    train_targets = np.array([class_index[str(it.label)] for it in train_items])
    val_items = list(val.items)
    val_targets = np.array([class_index[str(it.label)] for it in val_items])

    opt = Adam(params, lr=config.learning_rate)
    history: list[float] = []
    best_snap = params.snapshot()
    best_loss = np.inf
    log_rows = []
    for epoch in range(config.max_epochs):
        order = rng_for(config.seed, "shuffle", epoch).permutation(len(train_items))
        total = 0.0
        for start in range(0, len(order), config.batch_size):
            chunk = order[start:start + config.batch_size]
            batch = [train_items[i] for i in chunk]
            params.zero_grads()
            losses = _forward_logits(
                params, batch, update=True, targets=train_targets[chunk], scale=1.0 / len(chunk)
            )
            total += float(np.sum(losses))
            opt.step()
        val_losses = _forward_logits(params, val_items, update=False, targets=val_targets)
        val_loss = float(np.mean(val_losses))
        history.append(val_loss)
        log_rows.append((epoch, total / len(train_items), val_loss))
        if val_loss < best_loss:
            best_loss = val_loss
            best_snap = params.snapshot()
        decision, _ = early_stop(history, config.patience)
        if decision == "stop":
            break

    params.restore(best_snap)
    params.meta = {
        "seed": config.seed,
        "epochs_run": len(history),
        "best_epoch": int(np.argmin(history)),
        "classes": classes,
    }
    if log_path:
        with open(log_path, "w", encoding="utf-8") as fh:
            fh.write(f"# seed={config.seed}\n")
            for epoch, train_loss, val_loss in log_rows:
                fh.write(f"{epoch}\t{train_loss:.8f}\t{val_loss:.8f}\t0.000\n")
    return params


def classifier_accuracy(params: ModelParams, dataset) -> float:
    """Top-1 accuracy of a trained classifier on a labelled set."""
    if not dataset.labelled:
        raise ArgumentError("accuracy needs a labelled set")
    logits = _forward_logits(params, list(dataset.items), update=False)
    predicted = np.argmax(logits, axis=1)
    class_index = {cls: i for i, cls in enumerate(params.classes)}
    targets = np.array([class_index[str(it.label)] for it in dataset.items])
    return float(np.mean(predicted == targets))


def classifier_metric(params: ModelParams, descriptor: str = "transfer"):
    """Cosine metric over the classifier's penultimate-layer embeddings."""
    from .features import EmbeddingCosine

    return EmbeddingCosine(
        encode=lambda item: classifier_embedding_batch(params, [item])[0],
        batch_encode=lambda items: classifier_embedding_batch(params, items),
        descriptor=descriptor,
    )
