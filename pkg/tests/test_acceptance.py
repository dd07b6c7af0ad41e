"""Acceptance suite: one test per criterion, each printing a PASS line.

Criteria 4, 8, and 9 drive the full synthetic pipeline; the grid fixture
runs two experiments (transfer- and cosine-mined arms) at the pinned
scale: noise 0.3, 60 items per class, 2 batch sizes x 2 seeds, 100
episodes.
"""

import json
import time

import numpy as np
import pytest

from multimodal_fewshot.data.sets import SplitSpec, split
from multimodal_fewshot.data.synth import synth_paired_digits, visual_class_for
from multimodal_fewshot.evaluation import OracleMatcher, RandomMatcher, accuracy, confusion, run_episodes
from multimodal_fewshot.features import CosineVectors, cosine_distance, dtw_distance, nearest
from multimodal_fewshot.fewshot import sample_episodes, score_query
from multimodal_fewshot.losses import LossWeights, mtriplet_loss, weighted_mcae
from multimodal_fewshot.mining import ModalityPool, assign_to_support, mine_within_modality_positives
from multimodal_fewshot.nn.gradcheck import finite_difference, max_relative_error
from multimodal_fewshot.nn.networks import SpeechArch, VisionArch, build_direct_model
from multimodal_fewshot.pipeline import Experiment, ExperimentConfig
from multimodal_fewshot.training import MCAEExample, TripletExample, _cae_speech_batch, _cae_vision_batch, _mcae_batch, _triplet_batch
from tests.conftest import randomize_params


def report(criterion, detail, started):
    print(f"\nACCEPTANCE {criterion}: PASS ({detail}; {time.time() - started:.1f}s)")


# --------------------------------------------------------------- criterion 1


def test_criterion_1_loss_exactness():
    started = time.time()
    e = np.zeros(130)
    e[0] = 1.0
    assert abs(mtriplet_loss(e, e, e, e, 0.2) - 0.4) <= 1e-12
    o1, o2 = np.zeros(130), np.zeros(130)
    o1[1] = 1.0
    o2[2] = 1.0
    assert abs(mtriplet_loss(e, e, o1, o2, 0.2) - 0.0) <= 1e-12
    assert abs(weighted_mcae(1.0, 2.0, 0.5, LossWeights(0.3, 0.3, 0.4)) - 1.1) <= 1e-12
    assert time.time() - started < 1.0
    report(1, "triplet 2m=0.4 and satisfied-margin 0.0; combined loss 1.1", started)


# --------------------------------------------------------------- criterion 2


def test_criterion_2_gradient_checks():
    started = time.time()
    rng = np.random.default_rng(20240811)
    sa = SpeechArch(frame_dim=3, hidden=4, depth=1, latent_dim=3)
    va = VisionArch(side=8, channels=(2, 3), latent_dim=3)
    tol, h = 1e-4, 1e-5
    instances = 0
    worst = 0.0

    def check(params, loss_fn):
        nonlocal instances, worst
        params.zero_grads()
        loss_fn(update=True)
        analytic = [g.copy() for _, g in params.grad_items()]
        numeric = finite_difference(lambda: loss_fn(update=False), [p for _, p in params.param_items()], h=h)
        err = max_relative_error(analytic, numeric)
        worst = max(worst, err)
        assert err <= tol, f"gradient mismatch {err:.2e}"
        instances += 1

    for trial in range(7):
        params = build_direct_model("mcae", sa, va, seed=trial, dtype=np.float64)
        randomize_params(params, 300 + trial)
        batch = [
            MCAEExample(
                x_a=rng.uniform(-1, 1, (int(rng.integers(2, 6)), 3)),
                x_a_pair=rng.uniform(-1, 1, (int(rng.integers(2, 6)), 3)),
                x_v=rng.uniform(0, 1, (8, 8)),
                x_v_pair=rng.uniform(0, 1, (8, 8)),
            )
            for _ in range(2)
        ]
        check(params, lambda update, p=params, b=batch: float(
            np.mean(_mcae_batch(p, b, LossWeights(), update=update))))

    for trial in range(7):
        params = build_direct_model("mtriplet", sa, va, seed=trial, dtype=np.float64)
        randomize_params(params, 400 + trial)
        anchors = [
            TripletExample(x_a=rng.uniform(-1, 1, (4, 3)), x_v=rng.uniform(0, 1, (8, 8)), pivot_class="x")
            for _ in range(3)
        ]
        negs_s = [rng.uniform(-1, 1, (5, 3)) for _ in range(3)]
        negs_i = [rng.uniform(0, 1, (8, 8)) for _ in range(3)]
        check(params, lambda update, p=params: float(
            np.mean(_triplet_batch(p, anchors, negs_s, negs_i, 0.2, update=update))))

    for trial in range(3):
        params = build_direct_model("speech_cae", sa, None, seed=trial, dtype=np.float64)
        randomize_params(params, 500 + trial)
        pairs = [(rng.uniform(-1, 1, (4, 3)), rng.uniform(-1, 1, (6, 3))) for _ in range(2)]
        check(params, lambda update, p=params: float(np.mean(
            _cae_speech_batch(p.speech_encoder, p.speech_decoder, pairs, update, p.latent_dim))))

    for trial in range(3):
        params = build_direct_model("vision_cae", None, va, seed=trial, dtype=np.float64)
        randomize_params(params, 600 + trial)
        pairs = [(rng.uniform(0, 1, (8, 8)), rng.uniform(0, 1, (8, 8))) for _ in range(2)]
        check(params, lambda update, p=params: float(np.mean(
            _cae_vision_batch(p.vision_encoder, p.vision_decoder, pairs, update))))

    assert instances >= 20
    report(2, f"{instances} instances, worst rel err {worst:.2e} <= 1e-4 at 64-bit", started)


# --------------------------------------------------------------- criterion 3


class _Vec:
    def __init__(self, item_id, values):
        self.id = item_id
        self.values = values


def test_criterion_3_oracle_equivalence():
    started = time.time()
    rng = np.random.default_rng(33)
    metric = CosineVectors()

    # nearest vs exhaustive scan
    cands = [rng.normal(size=8) for _ in range(500)]
    for _ in range(20):
        q = rng.normal(size=8)
        idx, dist = nearest(q, cands, metric)
        brute = [cosine_distance(q, c) for c in cands]
        assert idx == int(np.argmin(brute)) and np.isclose(dist, min(brute), atol=1e-12)

    # assign_to_support vs brute force
    pool = [_Vec(f"p{i:03d}", rng.normal(size=6)) for i in range(500)]
    support = [_Vec(f"s{i:02d}", rng.normal(size=6)) for i in range(55)]
    classes = [f"c{i % 11}" for i in range(55)]
    got = assign_to_support(pool, support, classes, metric)
    for item, a in zip(pool, got):
        dists = [metric.distance(item, s) for s in support]
        assert a.support_index == int(np.argmin(dists))
        assert a.support_class == classes[a.support_index]

    # within-modality positives vs brute force
    items = [_Vec(f"x{i:03d}", rng.normal(size=5)) for i in range(500)]
    for i, (item, pos) in enumerate(mine_within_modality_positives(items, metric)):
        dists = [metric.distance(item, o) if j != i else np.inf for j, o in enumerate(items)]
        assert pos.id == items[int(np.argmin(dists))].id

    # hard negatives (k_sample=all) vs brute force
    neg_items = [_Vec(f"n{i:03d}", rng.normal(size=5)) for i in range(200)]
    neg_classes = [f"c{i % 7}" for i in range(200)]
    pool_obj = ModalityPool(neg_items, neg_classes, metric)
    for anchor_pos in range(0, 200, 5):
        anchor = neg_items[anchor_pos]
        got_id = pool_obj.hard_negative(anchor, neg_classes[anchor_pos], None, seed=1)
        dists = [
            metric.distance(anchor, o) if neg_classes[j] != neg_classes[anchor_pos] else np.inf
            for j, o in enumerate(neg_items)
        ]
        assert got_id == neg_items[int(np.argmin(dists))].id

    # dtw vs full alignment enumeration (sequence length <= 6)
    from tests.test_features import brute_dtw

    for _ in range(20):
        a = rng.normal(size=(int(rng.integers(1, 7)), 3)) + 0.1
        b = rng.normal(size=(int(rng.integers(1, 7)), 3)) + 0.1
        assert np.isclose(dtw_distance(a, b), brute_dtw(a, b), atol=1e-12)

    report(3, "nearest, assignment, positives, negatives, dtw all match brute force", started)


# ------------------------------------------------- criteria 4, 8, 9 fixtures


GRID_BASE = {
    "seed": 4242,
    "data": {"n_per_class": 60, "noise": 0.3, "frame_dim": 13, "split": [0.7, 0.1, 0.2],
              "background": {"speech_classes": 24, "image_classes": 16, "n_per_class": 30, "noise": 0.3}},
    "mining": {"metric": "transfer", "k_sample": 100},
    "grid": {"batch_sizes": [16, 32], "seeds": [0, 1]},
    "episodes": {"count": 100, "K": 5, "queries": 10},
    "training": {"max_epochs": 60, "patience": 6},
    "classifier": {"max_epochs": 12, "patience": 3},
}


@pytest.fixture(scope="session")
def grid_summaries(tmp_path_factory):
    """Criterion 4 workload: transfer and cosine experiments on one episode
    protocol (noise 0.3, n=60, 2 batch sizes x 2 seeds, 100 episodes)."""
    root = tmp_path_factory.mktemp("acceptance4")
    started = time.time()
    transfer = Experiment(ExperimentConfig.from_dict({
        **GRID_BASE, "out": str(root / "transfer"),
        "arms": ["mcae", "mtriplet", "oracle_mcae", "oracle_mtriplet"],
    })).run_all()
    cosine = Experiment(ExperimentConfig.from_dict({
        **GRID_BASE, "out": str(root / "cosine"),
        "mining": {"metric": "cosine", "k_sample": 100},
        "arms": ["mcae", "mtriplet"],
    })).run_all()
    print(f"\n[grid fixture] both experiments in {(time.time() - started) / 60:.1f} min")
    return {"transfer": transfer, "cosine": cosine, "minutes": (time.time() - started) / 60}


def mean_of(summary, arm):
    return summary["arms"][arm]["mean_pct"]


def test_criterion_4a_mining_quality_ordering(grid_summaries):
    started = time.time()
    transfer, cosine = grid_summaries["transfer"], grid_summaries["cosine"]
    slack = 2.0
    for model in ("mtriplet", "mcae"):
        oracle = mean_of(transfer, f"oracle_{model}_direct")
        mined = mean_of(transfer, f"{model}_direct")
        raw = mean_of(cosine, f"{model}_direct")
        assert oracle >= mined - slack, f"{model}: oracle {oracle:.1f} < transfer {mined:.1f} - 2"
        assert mined >= raw - slack, f"{model}: transfer {mined:.1f} < cosine {raw:.1f} - 2"
    detail = "; ".join(
        f"{m}: oracle {mean_of(transfer, f'oracle_{m}_direct'):.1f} >= transfer "
        f"{mean_of(transfer, f'{m}_direct'):.1f} >= cosine {mean_of(cosine, f'{m}_direct'):.1f}"
        for m in ("mtriplet", "mcae")
    )
    report("4a", detail, started)


def test_criterion_4b_direct_vs_indirect_application(grid_summaries):
    started = time.time()
    transfer = grid_summaries["transfer"]
    for model in ("mtriplet", "mcae"):
        direct = mean_of(transfer, f"{model}_direct")
        indirect = mean_of(transfer, f"{model}_indirect")
        assert direct >= indirect - 2.0, f"{model}: direct {direct:.1f} < indirect {indirect:.1f} - 2"
    detail = "; ".join(
        f"{m}: direct {mean_of(transfer, f'{m}_direct'):.1f} vs indirect "
        f"{mean_of(transfer, f'{m}_indirect'):.1f}"
        for m in ("mtriplet", "mcae")
    )
    report("4b", detail, started)


def test_criterion_4c_mtriplet_vs_mcae(grid_summaries):
    started = time.time()
    transfer = grid_summaries["transfer"]
    tri, cae = mean_of(transfer, "mtriplet_direct"), mean_of(transfer, "mcae_direct")
    assert tri >= cae - 2.0
    report("4c", f"transfer mtriplet {tri:.1f} >= transfer mcae {cae:.1f} - 2 "
                 f"(grid runtime {grid_summaries['minutes']:.1f} min)", started)


# --------------------------------------------------------------- criterion 5


def test_criterion_5_oracle_ceiling(tmp_path_factory):
    started = time.time()
    out = tmp_path_factory.mktemp("acceptance5")
    cfg = ExperimentConfig.from_dict({
        "seed": 515,
        "out": str(out / "run"),
        "data": {"n_per_class": 48, "noise": 0.0, "frame_dim": 13, "split": [0.6, 0.15, 0.25],
                  "background": {"speech_classes": 4, "image_classes": 3, "n_per_class": 8, "noise": 0.0}},
        "arms": ["oracle_mtriplet"],
        "mining": {"metric": "cosine", "k_sample": 100},
        # zero noise collapses each class to one repeated pattern, so the
        # hinge needs a large batch and a long leash to settle all margins
        "grid": {"batch_sizes": [128], "seeds": [0]},
        "episodes": {"count": 100, "K": 5, "queries": 10},
        "training": {"max_epochs": 80, "patience": 12},
        "classifier": {"max_epochs": 2, "patience": 1},
    })
    summary = Experiment(cfg).run_all()
    acc = mean_of(summary, "oracle_mtriplet_direct")
    assert acc >= 95.0, f"oracle ceiling {acc:.1f} < 95"
    report(5, f"oracle mtriplet direct at zero noise: {acc:.1f}% over 100 episodes", started)


# ---------------------------------------------------- criteria 6 and 7 data


@pytest.fixture(scope="session")
def protocol_run():
    speech, images, labels = synth_paired_digits(60, 0.3, seed=606)
    _, _, sp_test = split(speech, SplitSpec((0.7, 0.1, 0.2), seed=1))
    _, _, im_test = split(images, SplitSpec((0.7, 0.1, 0.2), seed=2))
    episodes = sample_episodes(400, sp_test, im_test, labels, L=11, K=5, N=10, n_queries=10, seed=661)
    return episodes, labels


def test_criterion_6_protocol_fidelity(protocol_run):
    started = time.time()
    episodes, labels = protocol_run
    assert len(episodes) == 400
    assert all(len(ep.support) == 55 for ep in episodes)
    assert all(len(ep.matching) == 10 for ep in episodes)
    assert all(len(ep.queries) == 10 for ep in episodes)
    results = run_episodes(OracleMatcher(labels), episodes, labels)
    assert len(results) == 4000
    assert accuracy(results) == 1.0
    # a crafted "oh" query predicted as image class 0 scores correct
    assert score_query(0, "oh", labels) is True
    oh_results = [r for r in results if r.true_spoken_class == "oh"]
    assert oh_results and all(r.predicted_visual_class == 0 and r.correct for r in oh_results)
    report(6, "400 episodes x 10 queries = 4000 results; support 55; matching 10; oh->0 correct", started)


def test_criterion_7_chance_floor(protocol_run):
    started = time.time()
    episodes, labels = protocol_run
    results = run_episodes(RandomMatcher(seed=77), episodes, labels)
    acc = accuracy(results)
    half = 2.576 * np.sqrt(0.1 * 0.9 / 4000)  # 99% binomial interval around 0.10
    assert 0.1 - half <= acc <= 0.1 + half, f"random accuracy {acc:.4f} outside +/-{half:.4f}"
    report(7, f"uniform-random matcher: {acc:.4f} within 0.1 +/- {half:.4f}", started)


# --------------------------------------------------------------- criterion 8


MINI_PIPELINE = {
    "seed": 888,
    "data": {"n_per_class": 20, "noise": 0.25, "frame_dim": 5, "split": [0.6, 0.15, 0.25],
              "background": {"speech_classes": 4, "image_classes": 3, "n_per_class": 10, "noise": 0.25}},
    "arms": ["dtw_pixels", "indirect_classifier", "indirect_cae", "mcae", "mtriplet",
             "oracle_mcae", "oracle_mtriplet"],
    "mining": {"metric": "transfer", "k_sample": 20},
    "grid": {"batch_sizes": [16, 32], "seeds": [0]},
    "episodes": {"count": 10, "K": 2, "queries": 10},
    "training": {"max_epochs": 3, "patience": 2},
    "classifier": {"max_epochs": 3, "patience": 2},
    "architecture": {"hidden": 12, "depth": 1, "latent_dim": 8},
}


def test_criterion_8_determinism(tmp_path_factory):
    started = time.time()
    root = tmp_path_factory.mktemp("acceptance8")
    blobs = []
    for run in ("a", "b"):
        out = root / run
        Experiment(ExperimentConfig.from_dict({**MINI_PIPELINE, "out": str(out)})).run_all()
        report_dir = out / "report"
        files = sorted(p.name for p in report_dir.iterdir())
        assert "summary.json" in files
        assert any(f.startswith("grid_") for f in files)
        assert any(f.startswith("confusion_") for f in files)
        blobs.append({name: (report_dir / name).read_bytes() for name in files})
    assert blobs[0].keys() == blobs[1].keys()
    for name in blobs[0]:
        assert blobs[0][name] == blobs[1][name], f"{name} differs between identical runs"
    report(8, f"two full pipeline runs byte-identical across {len(blobs[0])} report files", started)


# --------------------------------------------------------------- criterion 9


def test_criterion_9_confusion_reconciliation(grid_summaries):
    started = time.time()
    checked = 0
    for summary in (grid_summaries["transfer"], grid_summaries["cosine"]):
        for arm, info in summary["arms"].items():
            counts = np.array(info["confusion"], dtype=np.int64)
            rows = info["confusion_rows"]
            cols = info["confusion_cols"]
            mass = sum(
                int(counts[r, cols.index(visual_class_for(name))]) for r, name in enumerate(rows)
            )
            assert mass / counts.sum() == info["confusion_cell_accuracy"], arm
            checked += 1
    # hand-built check: zero/oh rows score against column 0 exactly
    from tests.test_evaluation import make_result

    results = [make_result("oh", 0), make_result("zero", 0), make_result("zero", 9), make_result("two", 2)]
    mat = confusion(results)
    assert mat.class_consistent_mass() == 3 and mat.total == 4
    assert mat.class_consistent_mass() / mat.total == accuracy(results)
    report(9, f"confusion mass/total equals reported accuracy exactly for {checked} arms", started)
