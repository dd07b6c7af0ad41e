"""Training loops for the direct models and the unimodal reconstruction
baselines.

Every run is a single deterministic stream: epoch shuffles, negative
sampling, and initialization all derive from the run's seed. Validation
loss is computed on *mined* validation pairs only; no trainer in this
module accepts labels. Early stopping keeps the parameters of the best
validation epoch.
"""

from __future__ import annotations

import time
from dataclasses import dataclass
from typing import Callable, Optional, Sequence

import numpy as np

from .errors import ArgumentError, NoNegativeError
from .features import cosine_rows
from .losses import LossWeights, mtriplet_batch
from .mining import MinedPair, ModalityPool, mine_hard_negatives
from .nn.networks import ModelParams, clone_model
from .nn.optim import Adam
from .seeding import derive_seed, rng_for

BATCH_SIZE_GRID = (16, 32, 64, 128, 256)


@dataclass(frozen=True)
class TrainConfig:
    """Optimization settings for one training run."""

    batch_size: int = 32
    learning_rate: float = 1e-3
    margin: float = 0.2
    max_epochs: int = 25
    patience: int = 3
    seed: int = 0
    optimizer: str = "adam"

    def __post_init__(self):
        if self.batch_size not in BATCH_SIZE_GRID:
            raise ArgumentError(
                f"batch_size must be one of {BATCH_SIZE_GRID}, got {self.batch_size}"
            )
        if self.margin <= 0:
            raise ArgumentError(f"margin must be positive, got {self.margin}")
        if self.learning_rate <= 0:
            raise ArgumentError("learning_rate must be positive")
        if self.max_epochs < 1:
            raise ArgumentError("max_epochs must be >= 1")
        if self.patience < 0:
            raise ArgumentError("patience must be >= 0")
        if self.optimizer != "adam":
            raise ArgumentError(f"unsupported optimizer {self.optimizer!r}")


def early_stop(history: Sequence[float], patience: int):
    """Decide whether to stop given the validation-loss history.

    Stops once the trailing run of non-improving epochs reaches
    max(patience, 1); an epoch improves when it is strictly below the best
    seen so far. Returns ("continue" | "stop", best_epoch) with the
    lowest-epoch tie rule for best_epoch.
    """
    history = list(history)
    if not history:
        raise ArgumentError("early_stop needs a non-empty history")
    best = np.inf
    streak = 0
    for value in history:
        if value < best:
            best = value
            streak = 0
        else:
            streak += 1
    decision = "stop" if streak >= max(patience, 1) else "continue"
    return decision, int(np.argmin(history))


@dataclass(frozen=True)
class MCAEExample:
    """One combined-loss training example: anchor and positive per modality."""

    x_a: object
    x_a_pair: object
    x_v: object
    x_v_pair: object


@dataclass(frozen=True)
class TripletExample:
    x_a: object
    x_v: object
    pivot_class: str


class _TrainLog:
    def __init__(self, path, meta: Optional[dict] = None):
        self.fh = open(path, "w", encoding="utf-8") if path else None
        if self.fh and meta:
            header = " ".join(f"{k}={v}" for k, v in sorted(meta.items()))
            self.fh.write(f"# {header}\n")

    def row(self, epoch: int, train_loss: float, val_loss: float, wall: float):
        if self.fh:
            self.fh.write(f"{epoch}\t{train_loss:.8f}\t{val_loss:.8f}\t{wall:.3f}\n")
            self.fh.flush()

    def close(self):
        if self.fh:
            self.fh.close()


def _frames_of(x) -> np.ndarray:
    return np.asarray(getattr(x, "frames", x), dtype=np.float64)


def _grid_of(x) -> np.ndarray:
    return np.asarray(getattr(x, "grid", x), dtype=np.float64)


def _encode_speech_grouped(encoder, frame_list, latent_dim):
    """Batch equal-length sequences; returns float64 Z and backward groups."""
    out = np.zeros((len(frame_list), latent_dim))
    by_len: dict[int, list[int]] = {}
    for i, frames in enumerate(frame_list):
        by_len.setdefault(frames.shape[0], []).append(i)
    groups = []
    for length in sorted(by_len):
        idxs = by_len[length]
        batch = np.stack([frame_list[i] for i in idxs]).astype(encoder.dtype)
        z, cache = encoder.forward(batch)
        out[idxs] = z
        groups.append((idxs, cache))
    return out, groups


def _backward_speech_grouped(encoder, groups, d_z: np.ndarray) -> None:
    for idxs, cache in groups:
        encoder.backward(cache, d_z[idxs].astype(encoder.dtype))


def _decode_speech_grouped(decoder, z: np.ndarray, targets):
    """Decode to each target's length; returns per-example SSE and groups."""
    losses = np.zeros(len(targets))
    by_len: dict[int, list[int]] = {}
    for i, target in enumerate(targets):
        by_len.setdefault(target.shape[0], []).append(i)
    groups = []
    for length in sorted(by_len):
        idxs = by_len[length]
        y, cache = decoder.forward(z[idxs].astype(decoder.dtype), length)
        diff = y.astype(np.float64) - np.stack([targets[i] for i in idxs])
        losses[idxs] = np.sum(diff * diff, axis=(1, 2))
        groups.append((idxs, cache, diff))
    return losses, groups


def _backward_speech_decoder(decoder, groups, coeff: np.ndarray, d_z: np.ndarray) -> None:
    """Accumulate dZ from decoder groups; dY_i = 2 * coeff_i * diff_i."""
    for idxs, cache, diff in groups:
        dy = 2.0 * coeff[idxs][:, None, None] * diff
        d_z[idxs] += decoder.backward(cache, dy.astype(decoder.dtype)).astype(np.float64)


def _mcae_batch(params: ModelParams, batch, weights: LossWeights, update: bool):
    """Loss (and, when updating, gradients) for one batch of MCAEExamples."""
    frames_a = [_frames_of(e.x_a) for e in batch]
    targets_a = [_frames_of(e.x_a_pair) for e in batch]
    grids_v = np.stack([_grid_of(e.x_v) for e in batch])[:, None, :, :]
    targets_v = np.stack([_grid_of(e.x_v_pair) for e in batch])[:, None, :, :]

    z_a, enc_groups = _encode_speech_grouped(params.speech_encoder, frames_a, params.latent_dim)
    loss_a, dec_groups = _decode_speech_grouped(params.speech_decoder, z_a, targets_a)

    z_v_raw, venc_cache = params.vision_encoder.forward(grids_v.astype(params.vision_encoder.dtype))
    z_v = z_v_raw.astype(np.float64)
    y_v, vdec_cache = params.vision_decoder.forward(z_v_raw)
    diff_v = y_v.astype(np.float64) - targets_v
    loss_v = np.sum(diff_v * diff_v, axis=(1, 2, 3))

    delta_z = z_a - z_v
    loss_z = np.sum(delta_z * delta_z, axis=1)
    losses = weights.alpha_a * loss_a + weights.alpha_v * loss_v + weights.alpha_z * loss_z

    if update:
        scale = 1.0 / len(batch)
        coeff = np.full(len(batch), weights.alpha_a * scale)
        d_za = np.zeros_like(z_a)
        _backward_speech_decoder(params.speech_decoder, dec_groups, coeff, d_za)
        d_lz = (2.0 * weights.alpha_z * scale) * delta_z
        d_za += d_lz
        _backward_speech_grouped(params.speech_encoder, enc_groups, d_za)

        d_yv = (2.0 * weights.alpha_v * scale) * diff_v
        d_zv = params.vision_decoder.backward(vdec_cache, d_yv.astype(params.vision_decoder.dtype))
        d_zv = d_zv.astype(np.float64) - d_lz
        params.vision_encoder.backward(venc_cache, d_zv.astype(params.vision_encoder.dtype))
    return losses


def _eval_in_chunks(examples, fn, chunk: int = 256) -> float:
    total = 0.0
    for start in range(0, len(examples), chunk):
        total += float(np.sum(fn(examples[start:start + chunk])))
    return total / len(examples)


def train_mcae(
    train_examples: Sequence[MCAEExample],
    val_examples: Sequence[MCAEExample],
    params_init: ModelParams,
    cfg: TrainConfig,
    weights: LossWeights = LossWeights(),
    log_path=None,
    log_meta: Optional[dict] = None,
) -> ModelParams:
    """Train the combined correspondence model; returns best-validation params."""
    train_examples = list(train_examples)
    val_examples = list(val_examples)
    if not train_examples:
        raise ArgumentError("empty training example list")
    if not val_examples:
        raise ArgumentError("empty validation example list")

    params = clone_model(params_init)
    opt = Adam(params, lr=cfg.learning_rate)
    log = _TrainLog(log_path, log_meta)
    history: list[float] = []
    best_snap = params.snapshot()
    best_loss = np.inf
    try:
        for epoch in range(cfg.max_epochs):
            started = time.perf_counter()
            order = rng_for(cfg.seed, "shuffle", epoch).permutation(len(train_examples))
            total = 0.0
            for start in range(0, len(order), cfg.batch_size):
                batch = [train_examples[i] for i in order[start:start + cfg.batch_size]]
                params.zero_grads()
                total += float(np.sum(_mcae_batch(params, batch, weights, update=True)))
                opt.step()
            train_loss = total / len(train_examples)
            val_loss = _eval_in_chunks(val_examples, lambda ex: _mcae_batch(params, ex, weights, update=False))
            history.append(val_loss)
            if val_loss < best_loss:
                best_loss = val_loss
                best_snap = params.snapshot()
            log.row(epoch, train_loss, val_loss, time.perf_counter() - started)
            decision, _ = early_stop(history, cfg.patience)
            if decision == "stop":
                break
    finally:
        log.close()

    params.restore(best_snap)
    params.meta = dict(params.meta)
    params.meta.update(
        {"seed": cfg.seed, "epochs_run": len(history), "best_epoch": int(np.argmin(history)),
         "val_history": [float(v) for v in history]}
    )
    return params


def _triplet_batch(params: ModelParams, anchors, neg_speech, neg_images, margin: float, update: bool):
    frames_a = [_frames_of(e.x_a) for e in anchors]
    frames_an = [_frames_of(item) for item in neg_speech]
    grids_v = np.stack([_grid_of(e.x_v) for e in anchors])[:, None, :, :]
    grids_vn = np.stack([_grid_of(item) for item in neg_images])[:, None, :, :]

    z_a, groups_a = _encode_speech_grouped(params.speech_encoder, frames_a, params.latent_dim)
    z_an, groups_an = _encode_speech_grouped(params.speech_encoder, frames_an, params.latent_dim)
    z_v_raw, cache_v = params.vision_encoder.forward(grids_v.astype(params.vision_encoder.dtype))
    z_vn_raw, cache_vn = params.vision_encoder.forward(grids_vn.astype(params.vision_encoder.dtype))

    losses, d_za, d_zv, d_zan, d_zvn = mtriplet_batch(
        z_a, z_v_raw.astype(np.float64), z_an, z_vn_raw.astype(np.float64), margin
    )
    if update:
        scale = 1.0 / len(anchors)
        _backward_speech_grouped(params.speech_encoder, groups_a, d_za * scale)
        _backward_speech_grouped(params.speech_encoder, groups_an, d_zan * scale)
        params.vision_encoder.backward(cache_v, (d_zv * scale).astype(params.vision_encoder.dtype))
        params.vision_encoder.backward(cache_vn, (d_zvn * scale).astype(params.vision_encoder.dtype))
    return losses


def _negatives_for(pairs, speech_pool, image_pool, k_sample, seed):
    negs = []
    for pair in pairs:
        sid, iid = mine_hard_negatives(pair, speech_pool, image_pool, k_sample, seed)
        negs.append((speech_pool.item(sid), image_pool.item(iid)))
    return negs


def _semihard_pick(cross_dists: np.ndarray, positive_dist: float) -> int:
    """FaceNet-style pick: the closest candidate farther than the positive;
    if none qualifies, the closest overall."""
    beyond = cross_dists > positive_dist
    if np.any(beyond):
        masked = np.where(beyond, cross_dists, np.inf)
        return int(np.argmin(masked))
    return int(np.argmin(cross_dists))


def _online_negatives(params, pairs, speech_pool, image_pool, k_sample, seed, mode="within"):
    """Per-epoch negatives mined in the current model's own space.

    ``mode``: "within" ranks candidates by distance to the anchor item in
    its own modality; "cross" by the loss-relevant cross-modal distance;
    the "-semihard" suffixes apply the closest-beyond-the-positive pick.
    """
    from .nn.networks import encode_image_batch, encode_speech_batch

    z_speech = encode_speech_batch(params, speech_pool.items)
    z_image = encode_image_batch(params, image_pool.items)
    speech_rows = {item.id: i for i, item in enumerate(speech_pool.items)}
    image_rows = {item.id: i for i, item in enumerate(image_pool.items)}
    semihard = mode.endswith("semihard")
    cross = mode.startswith("cross")

    negs = []
    for pair in pairs:
        za = z_speech[speech_rows[pair.speech_id]]
        zv = z_image[image_rows[pair.image_id]]
        d_pos = float(cosine_rows(za[None, :], zv[None, :])[0, 0])

        cand_s = _sample_candidates(speech_pool, pair.speech_id, k_sample, seed)
        ref = zv if cross else za
        dists = cosine_rows(z_speech[cand_s], ref[None, :])[:, 0]
        pick = _semihard_pick(dists, d_pos) if semihard else int(np.argmin(dists))
        neg_s = speech_pool.items[cand_s[pick]]

        cand_i = _sample_candidates(image_pool, pair.image_id, k_sample, seed)
        ref = za if cross else zv
        dists = cosine_rows(ref[None, :], z_image[cand_i])[0]
        pick = _semihard_pick(dists, d_pos) if semihard else int(np.argmin(dists))
        neg_i = image_pool.items[cand_i[pick]]
        negs.append((neg_s, neg_i))
    return negs


def _sample_candidates(pool: ModalityPool, anchor_id: str, k_sample, seed) -> np.ndarray:
    others = pool._others(pool.class_of(anchor_id))
    if others.size == 0:
        raise NoNegativeError(f"no other-class candidates for {anchor_id!r}")
    if k_sample is not None and k_sample < others.size:
        rng = rng_for(seed, "negative", anchor_id)
        return np.sort(rng.choice(others, size=k_sample, replace=False))
    return others


def train_mtriplet(
    train_pairs: Sequence[MinedPair],
    val_pairs: Sequence[MinedPair],
    params_init: ModelParams,
    cfg: TrainConfig,
    speech_pool: ModalityPool,
    image_pool: ModalityPool,
    val_speech_pool: Optional[ModalityPool] = None,
    val_image_pool: Optional[ModalityPool] = None,
    k_sample: Optional[int] = 100,
    negative_mode: str = "online-within-semihard",
    log_path=None,
    log_meta: Optional[dict] = None,
) -> ModelParams:
    """Train the dual-margin triplet model with per-epoch hard negatives.

    ``negative_mode``: "online-within" (default) re-mines negatives every
    epoch in the current model's own space, closest to the anchor within
    its modality; "online-cross"/"online-*-semihard" variants rank by the
    cross-modal distance or apply the semi-hard pick; "input" uses the
    pools' metrics via ``mine_hard_negatives``. Validation negatives are
    the hardest ones under the pools' metrics, mined once, so the
    early-stopping signal is comparable across epochs and does not
    saturate early.
    """
    train_pairs = list(train_pairs)
    val_pairs = list(val_pairs)
    if not train_pairs:
        raise ArgumentError("empty training pair list")
    if not val_pairs:
        raise ArgumentError("empty validation pair list")
    val_speech_pool = val_speech_pool or speech_pool
    val_image_pool = val_image_pool or image_pool

    anchors = [
        TripletExample(
            x_a=speech_pool.item(p.speech_id), x_v=image_pool.item(p.image_id), pivot_class=p.pivot_class
        )
        for p in train_pairs
    ]
    val_anchors = [
        TripletExample(
            x_a=val_speech_pool.item(p.speech_id), x_v=val_image_pool.item(p.image_id),
            pivot_class=p.pivot_class,
        )
        for p in val_pairs
    ]
    val_negs = _negatives_for(
        val_pairs, val_speech_pool, val_image_pool, None, derive_seed(cfg.seed, "val-negatives")
    )

    params = clone_model(params_init)
    opt = Adam(params, lr=cfg.learning_rate)
    log = _TrainLog(log_path, log_meta)
    history: list[float] = []
    best_snap = params.snapshot()
    best_loss = np.inf

    def _val_loss() -> float:
        total = 0.0
        for start in range(0, len(val_anchors), 256):
            sl = slice(start, start + 256)
            total += float(
                np.sum(
                    _triplet_batch(
                        params,
                        val_anchors[sl],
                        [n[0] for n in val_negs[sl]],
                        [n[1] for n in val_negs[sl]],
                        cfg.margin,
                        update=False,
                    )
                )
            )
        return total / len(val_anchors)

    try:
        for epoch in range(cfg.max_epochs):
            started = time.perf_counter()
            epoch_seed = derive_seed(cfg.seed, "negatives", epoch)
            if negative_mode.startswith("online"):
                mode = negative_mode.split("online-", 1)[1] if "-" in negative_mode else "within"
                negs = _online_negatives(
                    params, train_pairs, speech_pool, image_pool, k_sample, epoch_seed, mode
                )
            else:
                negs = _negatives_for(train_pairs, speech_pool, image_pool, k_sample, epoch_seed)
            order = rng_for(cfg.seed, "shuffle", epoch).permutation(len(anchors))
            total = 0.0
            for start in range(0, len(order), cfg.batch_size):
                chunk = order[start:start + cfg.batch_size]
                params.zero_grads()
                total += float(
                    np.sum(
                        _triplet_batch(
                            params,
                            [anchors[i] for i in chunk],
                            [negs[i][0] for i in chunk],
                            [negs[i][1] for i in chunk],
                            cfg.margin,
                            update=True,
                        )
                    )
                )
                opt.step()
            train_loss = total / len(anchors)
            val_loss = _val_loss()
            history.append(val_loss)
            if val_loss < best_loss:
                best_loss = val_loss
                best_snap = params.snapshot()
            log.row(epoch, train_loss, val_loss, time.perf_counter() - started)
            decision, _ = early_stop(history, cfg.patience)
            if decision == "stop":
                break
    finally:
        log.close()

    params.restore(best_snap)
    params.meta = dict(params.meta)
    params.meta.update(
        {"seed": cfg.seed, "epochs_run": len(history), "best_epoch": int(np.argmin(history)),
         "val_history": [float(v) for v in history]}
    )
    return params


def _cae_speech_batch(encoder, decoder, batch, update: bool, latent_dim: int):
    frames = [_frames_of(item) for item, _ in batch]
    targets = [_frames_of(pos) for _, pos in batch]
    z, enc_groups = _encode_speech_grouped(encoder, frames, latent_dim)
    losses, dec_groups = _decode_speech_grouped(decoder, z, targets)
    if update:
        scale = 1.0 / len(batch)
        coeff = np.full(len(batch), scale)
        d_z = np.zeros_like(z)
        _backward_speech_decoder(decoder, dec_groups, coeff, d_z)
        _backward_speech_grouped(encoder, enc_groups, d_z)
    return losses


def _cae_vision_batch(encoder, decoder, batch, update: bool):
    grids = np.stack([_grid_of(item) for item, _ in batch])[:, None, :, :]
    targets = np.stack([_grid_of(pos) for _, pos in batch])[:, None, :, :]
    z_raw, enc_cache = encoder.forward(grids.astype(encoder.dtype))
    y, dec_cache = decoder.forward(z_raw)
    diff = y.astype(np.float64) - targets
    losses = np.sum(diff * diff, axis=(1, 2, 3))
    if update:
        scale = 1.0 / len(batch)
        d_y = (2.0 * scale) * diff
        d_z = decoder.backward(dec_cache, d_y.astype(decoder.dtype))
        encoder.backward(enc_cache, d_z)
    return losses


def train_unimodal_cae(
    train_pairs: Sequence[tuple],
    val_pairs: Sequence[tuple],
    params_init: ModelParams,
    cfg: TrainConfig,
    modality: str,
    log_path=None,
    log_meta: Optional[dict] = None,
) -> ModelParams:
    """Train one modality's reconstruction model on (item, positive) pairs."""
    if modality not in ("speech", "vision"):
        raise ArgumentError(f"unknown modality {modality!r}")
    train_pairs = list(train_pairs)
    val_pairs = list(val_pairs)
    if not train_pairs:
        raise ArgumentError("empty training pair list")
    if not val_pairs:
        raise ArgumentError("empty validation pair list")

    params = clone_model(params_init)
    opt = Adam(params, lr=cfg.learning_rate)
    log = _TrainLog(log_path, log_meta)
    history: list[float] = []
    best_snap = params.snapshot()
    best_loss = np.inf

    def run_batch(batch, update: bool):
        if modality == "speech":
            return _cae_speech_batch(
                params.speech_encoder, params.speech_decoder, batch, update, params.latent_dim
            )
        return _cae_vision_batch(params.vision_encoder, params.vision_decoder, batch, update)

    try:
        for epoch in range(cfg.max_epochs):
            started = time.perf_counter()
            order = rng_for(cfg.seed, "shuffle", epoch).permutation(len(train_pairs))
            total = 0.0
            for start in range(0, len(order), cfg.batch_size):
                batch = [train_pairs[i] for i in order[start:start + cfg.batch_size]]
                params.zero_grads()
                total += float(np.sum(run_batch(batch, update=True)))
                opt.step()
            train_loss = total / len(train_pairs)
            val_loss = _eval_in_chunks(val_pairs, lambda ex: run_batch(ex, update=False))
            history.append(val_loss)
            if val_loss < best_loss:
                best_loss = val_loss
                best_snap = params.snapshot()
            log.row(epoch, train_loss, val_loss, time.perf_counter() - started)
            decision, _ = early_stop(history, cfg.patience)
            if decision == "stop":
                break
    finally:
        log.close()

    params.restore(best_snap)
    params.meta = dict(params.meta)
    params.meta.update(
        {"seed": cfg.seed, "epochs_run": len(history), "best_epoch": int(np.argmin(history)),
         "val_history": [float(v) for v in history]}
    )
    return params
