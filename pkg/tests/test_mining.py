import numpy as np
import pytest

from multimodal_fewshot.data.sets import SpeechItem
from multimodal_fewshot.errors import ArgumentError, NoNegativeError
from multimodal_fewshot.features import CosineVectors, cosine_distance
from multimodal_fewshot.mining import (
    MinedPair,
    ModalityPool,
    SupportPair,
    SupportSet,
    assign_to_support,
    fraction_class_correct,
    mine_cross_modal_pairs,
    mine_hard_negatives,
    mine_oracle_pairs,
    mine_oracle_positives,
    mine_within_modality_positives,
    read_pair_manifest,
    read_positive_manifest,
    write_pair_manifest,
    write_positive_manifest,
)


class Vec:
    """A minimal item: id plus a raw vector (CosineVectors reads .values)."""

    def __init__(self, item_id, values, label=None):
        self.id = item_id
        self.values = np.asarray(values, dtype=np.float64)
        self.label = label


def rand_items(n, dim, seed, prefix="x"):
    rng = np.random.default_rng(seed)
    return [Vec(f"{prefix}{i:03d}", rng.normal(size=dim)) for i in range(n)]


def brute_assign(pool, support_items, support_classes, metric):
    out = []
    for item in pool:
        dists = [metric.distance(item, s) for s in support_items]
        best = int(np.argmin(dists))
        out.append((item.id, best, support_classes[best], dists[best]))
    return out


def test_assignment_self():
    items = rand_items(6, 4, 0)
    classes = [f"c{i}" for i in range(6)]
    assignments = assign_to_support(items, items, classes, CosineVectors())
    for i, a in enumerate(assignments):
        assert a.support_index == i
        assert a.distance <= 1e-12


def test_assignment_matches_brute_force():
    metric = CosineVectors()
    pool = rand_items(300, 6, 1, "p")
    support = rand_items(55, 6, 2, "s")
    classes = [f"c{i % 11}" for i in range(55)]
    got = assign_to_support(pool, support, classes, metric)
    expect = brute_assign(pool, support, classes, metric)
    for a, (item_id, idx, cls, dist) in zip(got, expect):
        assert (a.item_id, a.support_index, a.support_class) == (item_id, idx, cls)
        assert np.isclose(a.distance, dist, atol=1e-12)


def test_assignment_empty_pool_and_empty_support():
    assert assign_to_support([], rand_items(3, 4, 3), ["a", "b", "c"], CosineVectors()) == []
    with pytest.raises(ArgumentError):
        assign_to_support(rand_items(2, 4, 4), [], [], CosineVectors())


def test_assignment_order_independent():
    metric = CosineVectors()
    pool = rand_items(40, 5, 5)
    support = rand_items(7, 5, 6, "s")
    classes = [f"c{i}" for i in range(7)]
    base = {a.item_id: a for a in assign_to_support(pool, support, classes, metric)}
    rng = np.random.default_rng(0)
    shuffled = [pool[i] for i in rng.permutation(len(pool))]
    for a in assign_to_support(shuffled, support, classes, metric):
        assert base[a.item_id].support_index == a.support_index


def make_support(n_classes=3, k=1, dim=4, seed=20):
    rng = np.random.default_rng(seed)
    pairs = []
    for c in range(n_classes):
        for _ in range(k):
            pairs.append(
                SupportPair(
                    speech=Vec(f"sup_a{len(pairs)}", rng.normal(size=dim)),
                    image=Vec(f"sup_v{len(pairs)}", rng.normal(size=dim)),
                    class_name=f"c{c}",
                )
            )
    return SupportSet(pairs)


def assignments_for(bucket_sizes, prefix):
    """Craft assignments placing n items in each pivot's bucket."""
    from multimodal_fewshot.mining import Assignment

    out = []
    for pivot, n in enumerate(bucket_sizes):
        for j in range(n):
            out.append(Assignment(f"{prefix}{pivot}_{j}", pivot, f"c{pivot}", 0.1))
    return out


def test_zip_mining_singleton_and_min_length():
    support = make_support(3, 1)
    sa = assignments_for([1, 3, 0], "a")
    ia = assignments_for([1, 5, 0], "v")
    pairs = mine_cross_modal_pairs(sa, ia, support, seed=5)
    by_pivot = {}
    for p in pairs:
        by_pivot.setdefault(p.pivot_index, []).append(p)
    assert len(by_pivot[0]) == 1
    assert by_pivot[0][0].speech_id == "a0_0" and by_pivot[0][0].image_id == "v0_0"
    assert len(by_pivot[1]) == 3  # min(3, 5)
    used_images = [p.image_id for p in by_pivot[1]]
    assert len(set(used_images)) == 3  # each image used at most once
    # empty bucket falls back to the support pair itself, once
    assert len(by_pivot[2]) == 1
    assert by_pivot[2][0].speech_id == "sup_a2" and by_pivot[2][0].image_id == "sup_v2"


def test_zip_mining_deterministic():
    support = make_support(2, 2)
    sa = assignments_for([2, 3, 1, 2], "a")
    ia = assignments_for([2, 2, 2, 2], "v")
    a = mine_cross_modal_pairs(sa, ia, support, seed=9)
    b = mine_cross_modal_pairs(sa, ia, support, seed=9)
    assert a == b
    c = mine_cross_modal_pairs(sa, ia, support, seed=10)
    assert a != c


def test_positives_identical_pair_and_brute_force():
    twin = [Vec("a", [1.0, 0.0]), Vec("b", [1.0, 0.0])]
    got = mine_within_modality_positives(twin, CosineVectors())
    assert got[0][1].id == "b" and got[1][1].id == "a"

    items = rand_items(200, 5, 30)
    metric = CosineVectors()
    got = mine_within_modality_positives(items, metric)
    for i, (item, pos) in enumerate(got):
        dists = [metric.distance(item, other) if j != i else np.inf for j, other in enumerate(items)]
        assert pos.id == items[int(np.argmin(dists))].id


def test_positives_duplicate_tie_rule_and_min_count():
    tri = [Vec("a", [1.0, 1.0]), Vec("b", [1.0, 1.0]), Vec("c", [1.0, 1.0])]
    got = mine_within_modality_positives(tri, CosineVectors())
    assert [pos.id for _, pos in got] == ["b", "a", "a"]  # lowest index on exact ties
    with pytest.raises(ArgumentError):
        mine_within_modality_positives([tri[0]], CosineVectors())


def test_hard_negative_two_classes_and_brute_force():
    metric = CosineVectors()
    items = rand_items(2, 4, 40)
    pool = ModalityPool(items, ["c0", "c1"], metric)
    assert pool.hard_negative(items[0], "c0", None, seed=1) == items[1].id

    items = rand_items(200, 4, 41)
    classes = [f"c{i % 5}" for i in range(200)]
    pool = ModalityPool(items, classes, metric)
    for anchor_pos in (0, 7, 150):
        anchor = items[anchor_pos]
        got = pool.hard_negative(anchor, classes[anchor_pos], None, seed=2)
        dists = [
            metric.distance(anchor, other) if classes[j] != classes[anchor_pos] else np.inf
            for j, other in enumerate(items)
        ]
        assert got == items[int(np.argmin(dists))].id


def test_hard_negative_single_class_errors():
    items = rand_items(5, 4, 42)
    pool = ModalityPool(items, ["same"] * 5, CosineVectors())
    with pytest.raises(NoNegativeError):
        pool.hard_negative(items[0], "same", None, seed=0)


def test_hard_negative_sampling_deterministic_and_fresh_per_seed():
    items = rand_items(60, 4, 43)
    classes = [f"c{i % 3}" for i in range(60)]
    pool = ModalityPool(items, classes, CosineVectors())
    a = pool.hard_negative(items[0], "c0", 5, seed=1)
    assert a == pool.hard_negative(items[0], "c0", 5, seed=1)
    picks = {pool.hard_negative(items[0], "c0", 5, seed=s) for s in range(10)}
    assert len(picks) > 1  # per-epoch reseeding yields fresh negatives


def test_mine_hard_negatives_pair_api():
    metric = CosineVectors()
    items_a = rand_items(10, 4, 44, "a")
    items_v = rand_items(10, 4, 45, "v")
    classes = [f"c{i % 2}" for i in range(10)]
    speech_pool = ModalityPool(items_a, classes, metric)
    image_pool = ModalityPool(items_v, classes, metric)
    pair = MinedPair(speech_id="a003", image_id="v003", pivot_index=3, pivot_class="c1")
    neg_a, neg_v = mine_hard_negatives(pair, speech_pool, image_pool, None, seed=3)
    assert speech_pool.class_of(neg_a) != "c1"
    assert image_pool.class_of(neg_v) != "c1"


def test_oracle_pairs_bijection_and_zero_oh(digits_small):
    speech = digits_small["speech"]["train"]
    images = digits_small["images"]["train"]
    labels = digits_small["labels"]
    pairs = mine_oracle_pairs(speech, images, seed=8)
    assert fraction_class_correct(pairs, labels) == 1.0
    zero_imgs = {p.image_id for p in pairs if p.pivot_class == "zero"}
    oh_imgs = {p.image_id for p in pairs if p.pivot_class == "oh"}
    assert zero_imgs and oh_imgs
    assert all(labels.image_to_class[i] == 0 for i in zero_imgs | oh_imgs)


def test_oracle_pairs_single_item_bijection():
    rng = np.random.default_rng(1)
    from multimodal_fewshot.data.sets import ImageItem, ImageSet, SpeechSet

    speech = SpeechSet(
        [SpeechItem(id=f"s{c}", frames=rng.normal(size=(3, 4)), label=c) for c in ("one", "two")]
    )
    images = ImageSet(
        [ImageItem(id=f"i{d}", grid=rng.uniform(0, 1, (28, 28)), label=d) for d in (1, 2)]
    )
    pairs = mine_oracle_pairs(speech, images, seed=0)
    assert {(p.speech_id, p.image_id) for p in pairs} == {("sone", "i1"), ("stwo", "i2")}
    with pytest.raises(ArgumentError):
        mine_oracle_pairs(speech, ImageSet([ImageItem(id="i9", grid=rng.uniform(0, 1, (28, 28)), label=9)]), seed=0)


def test_oracle_positives_same_class_and_self_for_singletons():
    items = [Vec("a1", [1, 0], "a"), Vec("a2", [0, 1], "a"), Vec("b1", [1, 1], "b")]
    got = dict((it.id, pos.id) for it, pos in mine_oracle_positives(items, seed=3))
    assert got["a1"] == "a2" and got["a2"] == "a1"
    assert got["b1"] == "b1"


def test_manifest_round_trips(tmp_path):
    pairs = [MinedPair("a1", "v1", 0, "one"), MinedPair("a2", "v2", -1, "zero")]
    path = tmp_path / "pairs.tsv"
    write_pair_manifest(pairs, path, {"metric": "transfer", "seed": 5})
    assert read_pair_manifest(path) == pairs
    import json

    meta = json.loads((tmp_path / "pairs.tsv.meta.json").read_text())
    assert meta["metric"] == "transfer"

    pos = [(Vec("a", [1]), Vec("b", [1])), (Vec("b", [1]), Vec("a", [1]))]
    ppath = tmp_path / "pos.tsv"
    write_positive_manifest(pos, ppath, {"seed": 1})
    assert read_positive_manifest(ppath) == {"a": "b", "b": "a"}


def test_mining_zero_noise_pairs_all_correct(digits_small):
    from multimodal_fewshot.data.synth import synth_paired_digits
    from multimodal_fewshot.data.sets import SplitSpec, split, strip_labels
    from multimodal_fewshot.features import CosinePixels, DtwSequences
    from multimodal_fewshot.fewshot import sample_support_set

    speech, images, labels = synth_paired_digits(8, 0.0, seed=77)
    support = sample_support_set(speech, images, labels, K=1, seed=3)
    sa = assign_to_support(strip_labels(speech).items, support.speech_items(), support.classes(), DtwSequences())
    ia = assign_to_support(strip_labels(images).items, support.image_items(), support.classes(), CosinePixels())
    pairs = mine_cross_modal_pairs(sa, ia, support, seed=4)
    assert fraction_class_correct(pairs, labels) == 1.0
