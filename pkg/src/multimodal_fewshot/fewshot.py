"""Episode construction and the matching procedures.

An episode is one few-shot trial: a support set with K speech-image pairs
per spoken class, a matching set with exactly one unused image per visual
class, and spoken queries drawn from items outside the support set.

Direct matching compares the query embedding straight to the matching-set
image embeddings in the shared space. Indirect matching is the two-step
baseline: nearest support speech item first, then the nearest matching
image to that support pair's image. A query counts as correct when the
predicted image's class equals the query's visual class, with the spoken
classes "zero" and "oh" both scoring against digit 0.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from typing import Callable, Optional, Sequence

import numpy as np

from .data.sets import ImageSet, PairLabels, SpeechSet
from .data.synth import SPOKEN_TO_VISUAL, visual_class_for
from .errors import ArgumentError
from .features import cosine_rows, nearest
from .mining import SupportPair, SupportSet
from .seeding import derive_seed, rng_for


@dataclass(frozen=True)
class Episode:
    episode_id: int
    support: SupportSet
    matching: tuple
    queries: tuple

    def __post_init__(self):
        support_ids = {p.speech.id for p in self.support.pairs} | {
            p.image.id for p in self.support.pairs
        }
        held_out = {m.id for m in self.matching} | {q.id for q in self.queries}
        overlap = support_ids & held_out
        if overlap:
            raise ArgumentError(f"support items leak into matching/query sets: {sorted(overlap)}")


@dataclass(frozen=True)
class MatchResult:
    episode_id: int
    query_id: str
    predicted_image_id: str
    predicted_visual_class: int
    true_spoken_class: str
    true_visual_class: int
    correct: bool


def score_query(predicted_class: int, true_class: str, labels: PairLabels) -> bool:
    """Is a predicted visual class correct for a spoken query class?

    "zero" and "oh" both score correct against visual class 0; every other
    spoken class requires its own digit.
    """
    if true_class not in labels.class_names:
        raise ArgumentError(f"unknown spoken class {true_class!r}")
    if true_class not in SPOKEN_TO_VISUAL:
        raise ArgumentError(f"spoken class {true_class!r} has no visual mapping")
    if int(predicted_class) not in set(SPOKEN_TO_VISUAL.values()):
        raise ArgumentError(f"unknown visual class {predicted_class!r}")
    return visual_class_for(true_class) == int(predicted_class)


def _group_ids(mapping: dict, universe) -> dict:
    groups: dict = {}
    for item_id, cls in mapping.items():
        if universe.has_id(item_id):
            groups.setdefault(cls, []).append(item_id)
    return {cls: sorted(ids) for cls, ids in groups.items()}


def _draw(rng, pool: list, count: int, what: str) -> list:
    if len(pool) < count:
        raise ArgumentError(f"not enough items to sample {count} {what} (have {len(pool)})")
    chosen = rng.choice(len(pool), size=count, replace=False)
    return [pool[i] for i in sorted(chosen)]


def _sample_support(rng, test_speech, test_images, labels, class_names, K):
    speech_by_class = _group_ids(labels.speech_to_class, test_speech)
    images_by_class = _group_ids(labels.image_to_class, test_images)
    used_images: set = set()
    support_pairs = []
    for cls in class_names:
        speech_ids = _draw(rng, speech_by_class.get(cls, []), K, f"support words of {cls!r}")
        image_pool = [i for i in images_by_class.get(visual_class_for(cls), []) if i not in used_images]
        image_ids = _draw(rng, image_pool, K, f"support images of class {visual_class_for(cls)}")
        used_images.update(image_ids)
        for sid, iid in zip(speech_ids, image_ids):
            support_pairs.append(
                SupportPair(speech=test_speech.by_id(sid), image=test_images.by_id(iid), class_name=cls)
            )
    return SupportSet(support_pairs), used_images, speech_by_class, images_by_class


def sample_support_set(
    test_speech: SpeechSet, test_images: ImageSet, labels: PairLabels, K: int, seed: int
) -> SupportSet:
    """Sample a standalone K-shot support set (the mining pivot)."""
    rng = rng_for(seed, "support")
    support, _, _, _ = _sample_support(rng, test_speech, test_images, labels, list(labels.class_names), K)
    return support


def sample_episode(
    test_speech: SpeechSet,
    test_images: ImageSet,
    labels: PairLabels,
    L: int = 11,
    K: int = 5,
    N: int = 10,
    n_queries: int = 10,
    seed: int = 0,
    episode_id: int = 0,
) -> Episode:
    """Sample one episode from the test pools; deterministic given seed."""
    class_names = list(labels.class_names)
    if L != len(class_names):
        raise ArgumentError(f"L={L} but the label set defines {len(class_names)} spoken classes")
    visual_classes = sorted({visual_class_for(c) for c in class_names})
    if N != len(visual_classes):
        raise ArgumentError(f"N={N} but the label set defines {len(visual_classes)} visual classes")

    rng = rng_for(seed, "episode")
    support, used_images, speech_by_class, images_by_class = _sample_support(
        rng, test_speech, test_images, labels, class_names, K
    )
    support_speech_ids = {p.speech.id for p in support.pairs}

    matching = []
    for visual in visual_classes:
        pool = [i for i in images_by_class.get(visual, []) if i not in used_images]
        iid = _draw(rng, pool, 1, f"matching image of class {visual}")[0]
        used_images.add(iid)
        matching.append(test_images.by_id(iid))

    available = {
        cls: [i for i in speech_by_class.get(cls, []) if i not in support_speech_ids]
        for cls in class_names
    }
    queries = []
    for _ in range(n_queries):
        open_classes = [c for c in class_names if available[c]]
        if not open_classes:
            raise ArgumentError("ran out of non-support speech items for queries")
        cls = open_classes[int(rng.integers(len(open_classes)))]
        pick = int(rng.integers(len(available[cls])))
        queries.append(test_speech.by_id(available[cls].pop(pick)))

    return Episode(
        episode_id=episode_id, support=support, matching=tuple(matching), queries=tuple(queries)
    )


def sample_episodes(
    count: int,
    test_speech: SpeechSet,
    test_images: ImageSet,
    labels: PairLabels,
    L: int = 11,
    K: int = 5,
    N: int = 10,
    n_queries: int = 10,
    seed: int = 0,
) -> list[Episode]:
    return [
        sample_episode(
            test_speech, test_images, labels, L=L, K=K, N=N, n_queries=n_queries,
            seed=derive_seed(seed, "episode", i), episode_id=i,
        )
        for i in range(count)
    ]


def match_direct(
    speech_encoder: Callable, image_encoder: Callable, query, matching: Sequence
) -> int:
    """Nearest matching image to the query in the shared embedding space."""
    z_query = np.asarray(speech_encoder(query), dtype=np.float64)[None, :]
    z_images = np.vstack([np.asarray(image_encoder(m), dtype=np.float64) for m in matching])
    return int(np.argmin(cosine_rows(z_query, z_images)[0]))


def match_indirect(speech_metric, image_metric, support: SupportSet, query, matching: Sequence) -> int:
    """Two-step baseline: pivot through the nearest support pair."""
    step1, _ = nearest(query, support.speech_items(), speech_metric)
    pivot_image = support.pairs[step1].image
    step2, _ = nearest(pivot_image, list(matching), image_metric)
    return step2


def classify_unimodal(metric, query, support: SupportSet, modality: str = "speech") -> str:
    """1-nearest-neighbour class over all L x K support items of one modality."""
    if modality == "speech":
        items = support.speech_items()
    elif modality == "vision":
        items = support.image_items()
    else:
        raise ArgumentError(f"unknown modality {modality!r}")
    winner, _ = nearest(query, items, metric)
    return support.pairs[winner].class_name


def save_episode_manifest(episodes: Sequence[Episode], path, meta: Optional[dict] = None) -> None:
    """One JSON line of ids per episode, for exact reruns."""
    with open(path, "w", encoding="utf-8") as fh:
        if meta:
            fh.write("# " + json.dumps(meta, sort_keys=True) + "\n")
        for ep in episodes:
            record = {
                "episode": ep.episode_id,
                "support": [[p.speech.id, p.image.id, p.class_name] for p in ep.support.pairs],
                "matching": [m.id for m in ep.matching],
                "queries": [q.id for q in ep.queries],
            }
            fh.write(json.dumps(record, sort_keys=True) + "\n")


def load_episode_manifest(path, test_speech: SpeechSet, test_images: ImageSet) -> list[Episode]:
    episodes = []
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            record = json.loads(line)
            support = SupportSet(
                [
                    SupportPair(
                        speech=test_speech.by_id(sid), image=test_images.by_id(iid), class_name=cls
                    )
                    for sid, iid, cls in record["support"]
                ]
            )
            episodes.append(
                Episode(
                    episode_id=int(record["episode"]),
                    support=support,
                    matching=tuple(test_images.by_id(i) for i in record["matching"]),
                    queries=tuple(test_speech.by_id(i) for i in record["queries"]),
                )
            )
    return episodes
