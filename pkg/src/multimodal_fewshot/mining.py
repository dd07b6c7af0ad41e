"""Constructing noisy training pairs from unlabelled in-domain data.

Cross-modal pairs come from the support-set pivot: every unlabelled item
is assigned to its nearest support item, and for each support pair the
speech and image buckets are zipped through independent seeded
permutations (min length, no replacement). A support pair with an empty
bucket contributes itself once, so every class stays represented.

Within-modality positives are nearest neighbours excluding self; hard
negatives are the closest item among a seeded sample drawn from items
whose pivot class differs from the anchor's. All tie rules are
lowest-index, and bucket contents are canonicalized by item id, so
results are independent of pool iteration order.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .data.synth import visual_class_for
from .errors import ArgumentError, NoNegativeError
from .seeding import rng_for


@dataclass(frozen=True)
class Assignment:
    """One pool item assigned to its nearest support item."""

    item_id: str
    support_index: int
    support_class: str
    distance: float


@dataclass(frozen=True)
class MinedPair:
    """A cross-modal training pair with its pivot provenance.

    Oracle pairs carry ``pivot_index`` -1 and the true class as pivot class.
    """

    speech_id: str
    image_id: str
    pivot_index: int
    pivot_class: str


@dataclass(frozen=True)
class SupportPair:
    speech: object
    image: object
    class_name: str


class SupportSet:
    """L x K paired speech-image examples, K pairs for each of L classes."""

    def __init__(self, pairs: Sequence[SupportPair]):
        self.pairs = tuple(pairs)
        if not self.pairs:
            raise ArgumentError("support set cannot be empty")
        counts: dict[str, int] = {}
        for p in self.pairs:
            counts[p.class_name] = counts.get(p.class_name, 0) + 1
        k_values = set(counts.values())
        if len(k_values) != 1:
            raise ArgumentError(f"support set must have K pairs per class, got counts {counts}")
        self.k = k_values.pop()
        self.class_names = tuple(sorted(counts))

    def __len__(self) -> int:
        return len(self.pairs)

    def speech_items(self):
        return [p.speech for p in self.pairs]

    def image_items(self):
        return [p.image for p in self.pairs]

    def classes(self):
        return [p.class_name for p in self.pairs]


def assign_to_support(pool_items, support_items, support_classes, metric) -> list[Assignment]:
    """Assign each pool item to its nearest support item (exact scan).

    Ties break to the lowest support index; each item's assignment is
    independent of the rest of the pool.
    """
    if len(support_items) == 0:
        raise ArgumentError("support set cannot be empty")
    if len(support_items) != len(support_classes):
        raise ArgumentError("support items and classes must align")
    pool_items = list(pool_items)
    if not pool_items:
        return []
    dists = np.asarray(metric.pairwise(pool_items, list(support_items)))
    winners = dists.argmin(axis=1)
    return [
        Assignment(
            item_id=item.id,
            support_index=int(w),
            support_class=support_classes[int(w)],
            distance=float(dists[i, w]),
        )
        for i, (item, w) in enumerate(zip(pool_items, winners))
    ]


def mine_cross_modal_pairs(
    speech_assignments: Sequence[Assignment],
    image_assignments: Sequence[Assignment],
    support: SupportSet,
    seed: int,
) -> list[MinedPair]:
    """Zip each support pair's speech and image buckets into novel pairs."""
    speech_buckets: dict[int, list[str]] = {}
    for a in speech_assignments:
        speech_buckets.setdefault(a.support_index, []).append(a.item_id)
    image_buckets: dict[int, list[str]] = {}
    for a in image_assignments:
        image_buckets.setdefault(a.support_index, []).append(a.item_id)

    pairs = []
    for pivot, sup in enumerate(support.pairs):
        bucket_a = sorted(speech_buckets.get(pivot, ()))
        bucket_v = sorted(image_buckets.get(pivot, ()))
        if bucket_a and bucket_v:
            perm_a = rng_for(seed, "bucket", "speech", pivot).permutation(len(bucket_a))
            perm_v = rng_for(seed, "bucket", "image", pivot).permutation(len(bucket_v))
            for j in range(min(len(bucket_a), len(bucket_v))):
                pairs.append(
                    MinedPair(
                        speech_id=bucket_a[perm_a[j]],
                        image_id=bucket_v[perm_v[j]],
                        pivot_index=pivot,
                        pivot_class=sup.class_name,
                    )
                )
        else:
            # Empty bucket: fall back to the support pair itself.
            pairs.append(
                MinedPair(
                    speech_id=sup.speech.id,
                    image_id=sup.image.id,
                    pivot_index=pivot,
                    pivot_class=sup.class_name,
                )
            )
    return pairs


def mine_within_modality_positives(items: Sequence, metric) -> list[tuple]:
    """Pair every item with its nearest neighbour excluding itself."""
    items = list(items)
    if len(items) < 2:
        raise ArgumentError(f"need >= 2 items to mine positives, got {len(items)}")
    dists = np.asarray(metric.pairwise(items, items), dtype=np.float64)
    np.fill_diagonal(dists, np.inf)
    winners = dists.argmin(axis=1)
    return [(item, items[int(w)]) for item, w in zip(items, winners)]


class ModalityPool:
    """Mined items of one modality with their pivot classes and metric."""

    def __init__(self, items: Sequence, classes: Sequence[str], metric):
        if len(items) != len(classes):
            raise ArgumentError("items and classes must align")
        self.items = list(items)
        self.classes = list(classes)
        self.metric = metric
        self._by_id = {item.id: i for i, item in enumerate(self.items)}
        if len(self._by_id) != len(self.items):
            raise ArgumentError("pool items must have unique ids")
        self._other_cache: dict[str, np.ndarray] = {}

    def item(self, item_id: str):
        return self.items[self._by_id[item_id]]

    def class_of(self, item_id: str) -> str:
        return self.classes[self._by_id[item_id]]

    def _others(self, anchor_class: str) -> np.ndarray:
        if anchor_class not in self._other_cache:
            self._other_cache[anchor_class] = np.array(
                [i for i, c in enumerate(self.classes) if c != anchor_class], dtype=np.int64
            )
        return self._other_cache[anchor_class]

    def hard_negative(self, anchor_item, anchor_class: str, k_sample: Optional[int], seed: int) -> str:
        """Closest other-class item among a seeded sample of size k_sample.

        ``k_sample`` None (or >= pool size) means the full candidate set.
        """
        others = self._others(anchor_class)
        if others.size == 0:
            raise NoNegativeError(f"no item outside class {anchor_class!r} to mine as negative")
        if k_sample is not None and k_sample < others.size:
            rng = rng_for(seed, "negative", anchor_item.id)
            chosen = np.sort(rng.choice(others, size=k_sample, replace=False))
        else:
            chosen = others
        candidates = [self.items[i] for i in chosen]
        row = np.asarray(self.metric.pairwise([anchor_item], candidates))[0]
        return candidates[int(np.argmin(row))].id


def mine_hard_negatives(
    anchor_pair: MinedPair,
    speech_pool: ModalityPool,
    image_pool: ModalityPool,
    k_sample: Optional[int],
    seed: int,
) -> tuple[str, str]:
    """Mine one hard negative per modality for a mined anchor pair.

    Candidacy is decided by each pool's own class labelling of the anchor,
    so a pool may collapse pivot classes that are indistinguishable in its
    modality (spoken "zero"/"oh" both map to digit 0 on the image side).
    """
    speech_neg = speech_pool.hard_negative(
        speech_pool.item(anchor_pair.speech_id),
        speech_pool.class_of(anchor_pair.speech_id),
        k_sample,
        seed,
    )
    image_neg = image_pool.hard_negative(
        image_pool.item(anchor_pair.image_id),
        image_pool.class_of(anchor_pair.image_id),
        k_sample,
        seed,
    )
    return speech_neg, image_neg


def _require_labels(dataset, what: str):
    if not dataset.labelled:
        raise ArgumentError(f"{what} must be fully labelled for oracle mining")


def mine_oracle_pairs(speech_set, image_set, seed: int) -> list[MinedPair]:
    """Ground-truth pairs: zip seeded permutations within each true class.

    Spoken classes "zero" and "oh" both draw from visual class 0.
    """
    _require_labels(speech_set, "speech set")
    _require_labels(image_set, "image set")

    speech_by_class: dict[str, list[str]] = {}
    for item in speech_set:
        speech_by_class.setdefault(item.label, []).append(item.id)
    images_by_class: dict[int, list[str]] = {}
    for item in image_set:
        images_by_class.setdefault(int(item.label), []).append(item.id)

    pairs = []
    for spoken in sorted(speech_by_class):
        visual = visual_class_for(spoken)
        if visual not in images_by_class:
            raise ArgumentError(f"no images of visual class {visual} for spoken class {spoken!r}")
        ids_a = sorted(speech_by_class[spoken])
        ids_v = sorted(images_by_class[visual])
        perm_a = rng_for(seed, "oracle", spoken, "speech").permutation(len(ids_a))
        perm_v = rng_for(seed, "oracle", spoken, "image").permutation(len(ids_v))
        for j in range(min(len(ids_a), len(ids_v))):
            pairs.append(
                MinedPair(
                    speech_id=ids_a[perm_a[j]],
                    image_id=ids_v[perm_v[j]],
                    pivot_index=-1,
                    pivot_class=spoken,
                )
            )
    return pairs


def mine_oracle_positives(items: Sequence, seed: int) -> list[tuple]:
    """Ground-truth within-class positives via a seeded cyclic permutation."""
    by_class: dict = {}
    for item in items:
        if item.label is None:
            raise ArgumentError("oracle positives need labelled items")
        by_class.setdefault(item.label, []).append(item)

    out = []
    for label in sorted(by_class, key=str):
        group = sorted(by_class[label], key=lambda it: it.id)
        perm = rng_for(seed, "oracle-pos", label).permutation(len(group))
        cycle = [group[i] for i in perm]
        for t, item in enumerate(cycle):
            partner = cycle[(t + 1) % len(cycle)] if len(cycle) > 1 else item
            out.append((item, partner))
    return out


def fraction_class_correct(pairs: Sequence[MinedPair], labels) -> float:
    """Share of mined pairs whose speech and image classes truly match."""
    if not pairs:
        raise ArgumentError("no pairs to score")
    good = sum(
        1
        for p in pairs
        if visual_class_for(labels.speech_to_class[p.speech_id]) == int(labels.image_to_class[p.image_id])
    )
    return good / len(pairs)


def write_pair_manifest(pairs: Sequence[MinedPair], path, meta: dict) -> None:
    """TSV: speech_id, image_id, pivot_index, pivot_class; sidecar holds meta."""
    with open(path, "w", encoding="utf-8") as fh:
        for p in pairs:
            fh.write(f"{p.speech_id}\t{p.image_id}\t{p.pivot_index}\t{p.pivot_class}\n")
    with open(f"{path}.meta.json", "w", encoding="utf-8") as fh:
        json.dump(meta, fh, sort_keys=True, indent=2)
        fh.write("\n")


def read_pair_manifest(path) -> list[MinedPair]:
    pairs = []
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            line = line.rstrip("\n")
            if not line:
                continue
            sid, iid, pivot, cls = line.split("\t")
            pairs.append(MinedPair(speech_id=sid, image_id=iid, pivot_index=int(pivot), pivot_class=cls))
    return pairs


def write_positive_manifest(positives: Sequence[tuple], path, meta: dict) -> None:
    """TSV: item_id, positive_id; sidecar holds meta."""
    with open(path, "w", encoding="utf-8") as fh:
        for item, pos in positives:
            fh.write(f"{item.id}\t{pos.id}\n")
    with open(f"{path}.meta.json", "w", encoding="utf-8") as fh:
        json.dump(meta, fh, sort_keys=True, indent=2)
        fh.write("\n")


def read_positive_manifest(path) -> dict:
    mapping = {}
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            line = line.rstrip("\n")
            if not line:
                continue
            item_id, pos_id = line.split("\t")
            mapping[item_id] = pos_id
    return mapping
