"""End-to-end experiment pipeline: prepare -> mine -> train -> evaluate ->
report, all reproducible from one config file and one master seed.

Every stage derives its randomness by hashing the master seed with the
stage name, writes its artifacts under the output directory, and records a
state marker with the config hash, so completed stages are skipped on
rerun and two runs with the same config are byte-identical (wall-clock
columns in training logs aside).
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass
from pathlib import Path
from typing import Optional

from .classifiers import ClassifierConfig, classifier_metric, train_classifier
from .data.idx import load_idx_images, save_idx_images
from .data.mfca import load_feature_archive, write_feature_archive
from .data.sets import ImageSet, PairLabels, SpeechSet, SplitSpec, split, strip_labels
from .data.synth import synth_background, synth_paired_digits, visual_class_for
from .errors import ArgumentError, IoError, StateError
from .evaluation import (
    ArmReport,
    RunGrid,
    accuracy,
    confusion,
    emit_report,
    run_episodes,
)
from .features import CosinePixels, DtwSequences, EmbeddingCosine
from .fewshot import (
    MatchResult,
    load_episode_manifest,
    match_direct,
    match_indirect,
    sample_episodes,
    sample_support_set,
    save_episode_manifest,
)
from .losses import LossWeights
from .mining import (
    ModalityPool,
    assign_to_support,
    mine_cross_modal_pairs,
    mine_oracle_pairs,
    mine_oracle_positives,
    mine_within_modality_positives,
    read_pair_manifest,
    read_positive_manifest,
    write_pair_manifest,
    write_positive_manifest,
)
from .nn.checkpoint import load_checkpoint, save_checkpoint
from .nn.networks import (
    SpeechArch,
    VisionArch,
    build_direct_model,
    encode_image_batch,
    encode_speech_batch,
)
from .seeding import derive_seed
from .training import MCAEExample, TrainConfig, train_mcae, train_mtriplet, train_unimodal_cae

VALID_ARMS = (
    "dtw_pixels",
    "indirect_classifier",
    "indirect_cae",
    "mcae",
    "mtriplet",
    "oracle_mcae",
    "oracle_mtriplet",
)
DIRECT_ARMS = ("mcae", "mtriplet", "oracle_mcae", "oracle_mtriplet")
MINED_ARMS = ("mcae", "mtriplet")
ORACLE_ARMS = ("oracle_mcae", "oracle_mtriplet")


@dataclass
class ExperimentConfig:
    """Everything one experiment needs; see config schema in the README."""

    seed: int = 1234
    out: str = "runs/experiment"
    # synthetic data
    n_per_class: int = 60
    noise: float = 0.3
    frame_dim: int = 13
    split_fractions: tuple = (0.7, 0.1, 0.2)
    bg_speech_classes: int = 16
    bg_image_classes: int = 12
    bg_n_per_class: int = 40
    bg_noise: float = 0.3
    data_paths: Optional[dict] = None
    # arms and mining
    arms: tuple = ("dtw_pixels", "indirect_classifier", "indirect_cae", "mcae", "mtriplet")
    mining_metric: str = "transfer"
    k_sample: Optional[int] = 100
    # model grid
    batch_sizes: tuple = (16, 32, 64, 128, 256)
    grid_seeds: tuple = (0, 1, 2, 3, 4)
    # episode protocol
    episodes: int = 400
    L: int = 11
    K: int = 5
    N: int = 10
    queries: int = 10
    # training
    learning_rate: float = 1e-3
    max_epochs: int = 25
    patience: int = 3
    margin: float = 0.2
    loss_weights: tuple = (0.3, 0.3, 0.4)
    # background classifiers
    classifier_batch: int = 64
    classifier_epochs: int = 20
    classifier_patience: int = 3
    # architecture
    hidden: int = 200
    depth: int = 3
    latent_dim: int = 130

    def __post_init__(self):
        self.arms = tuple(self.arms)
        self.batch_sizes = tuple(int(b) for b in self.batch_sizes)
        self.grid_seeds = tuple(int(s) for s in self.grid_seeds)
        self.split_fractions = tuple(float(f) for f in self.split_fractions)
        self.loss_weights = tuple(float(w) for w in self.loss_weights)
        for arm in self.arms:
            if arm not in VALID_ARMS:
                raise ArgumentError(f"unknown arm {arm!r}; valid arms: {VALID_ARMS}")
        if not self.arms:
            raise ArgumentError("at least one arm is required")
        if self.mining_metric not in ("transfer", "cosine"):
            raise ArgumentError(f"mining metric must be 'transfer' or 'cosine', got {self.mining_metric!r}")
        if not self.batch_sizes or not self.grid_seeds:
            raise ArgumentError("the model grid cannot be empty")

    @classmethod
    def from_dict(cls, raw: dict) -> "ExperimentConfig":
        data = raw.get("data", {})
        bg = data.get("background", {})
        grid = raw.get("grid", {})
        episodes = raw.get("episodes", {})
        training = raw.get("training", {})
        clf = raw.get("classifier", {})
        mining = raw.get("mining", {})
        arch = raw.get("architecture", {})
        kwargs = dict(
            seed=raw.get("seed", 1234),
            out=raw.get("out", "runs/experiment"),
            n_per_class=data.get("n_per_class", 60),
            noise=data.get("noise", 0.3),
            frame_dim=data.get("frame_dim", 13),
            split_fractions=tuple(data.get("split", (0.7, 0.1, 0.2))),
            bg_speech_classes=bg.get("speech_classes", 16),
            bg_image_classes=bg.get("image_classes", 12),
            bg_n_per_class=bg.get("n_per_class", 40),
            bg_noise=bg.get("noise", 0.3),
            data_paths=data.get("paths"),
            arms=tuple(raw.get("arms", ("dtw_pixels", "indirect_classifier", "indirect_cae", "mcae", "mtriplet"))),
            mining_metric=mining.get("metric", "transfer"),
            k_sample=mining.get("k_sample", 100),
            batch_sizes=tuple(grid.get("batch_sizes", (16, 32, 64, 128, 256))),
            grid_seeds=tuple(grid.get("seeds", (0, 1, 2, 3, 4))),
            episodes=episodes.get("count", 400),
            L=episodes.get("L", 11),
            K=episodes.get("K", 5),
            N=episodes.get("N", 10),
            queries=episodes.get("queries", 10),
            learning_rate=training.get("learning_rate", 1e-3),
            max_epochs=training.get("max_epochs", 25),
            patience=training.get("patience", 3),
            margin=training.get("margin", 0.2),
            loss_weights=tuple(training.get("loss_weights", (0.3, 0.3, 0.4))),
            classifier_batch=clf.get("batch_size", 64),
            classifier_epochs=clf.get("max_epochs", 20),
            classifier_patience=clf.get("patience", 3),
            hidden=arch.get("hidden", 200),
            depth=arch.get("depth", 3),
            latent_dim=arch.get("latent_dim", 130),
        )
        return cls(**kwargs)

    @classmethod
    def from_file(cls, path) -> "ExperimentConfig":
        try:
            with open(path, encoding="utf-8") as fh:
                raw = json.load(fh)
        except OSError as exc:
            raise IoError(f"cannot read config file {path}: {exc}") from exc
        except json.JSONDecodeError as exc:
            raise ArgumentError(f"config file {path} is not valid JSON: {exc}") from exc
        return cls.from_dict(raw)

    def to_dict(self) -> dict:
        return {
            "seed": self.seed,
            "out": self.out,
            "data": {
                "n_per_class": self.n_per_class,
                "noise": self.noise,
                "frame_dim": self.frame_dim,
                "split": list(self.split_fractions),
                "background": {
                    "speech_classes": self.bg_speech_classes,
                    "image_classes": self.bg_image_classes,
                    "n_per_class": self.bg_n_per_class,
                    "noise": self.bg_noise,
                },
                "paths": self.data_paths,
            },
            "arms": list(self.arms),
            "mining": {"metric": self.mining_metric, "k_sample": self.k_sample},
            "grid": {"batch_sizes": list(self.batch_sizes), "seeds": list(self.grid_seeds)},
            "episodes": {
                "count": self.episodes, "L": self.L, "K": self.K, "N": self.N, "queries": self.queries,
            },
            "training": {
                "learning_rate": self.learning_rate,
                "max_epochs": self.max_epochs,
                "patience": self.patience,
                "margin": self.margin,
                "loss_weights": list(self.loss_weights),
            },
            "classifier": {
                "batch_size": self.classifier_batch,
                "max_epochs": self.classifier_epochs,
                "patience": self.classifier_patience,
            },
            "architecture": {"hidden": self.hidden, "depth": self.depth, "latent_dim": self.latent_dim},
        }

    def config_hash(self) -> str:
        # The output directory is a location, not an experiment parameter:
        # the same experiment written elsewhere must hash identically.
        payload = {k: v for k, v in self.to_dict().items() if k != "out"}
        blob = json.dumps(payload, sort_keys=True).encode("utf-8")
        return hashlib.sha256(blob).hexdigest()[:16]


class Experiment:
    """Stage runner bound to one config and one output directory."""

    def __init__(self, cfg: ExperimentConfig):
        self.cfg = cfg
        self.out = Path(cfg.out)
        self.hash = cfg.config_hash()
        self.dirs = {
            name: self.out / name
            for name in ("data", "classifiers", "mining", "checkpoints", "logs", "results", "report", "state")
        }
        # Shared raw-metric instances so DTW results are memoized across stages.
        self._dtw = DtwSequences()
        self._pixels = CosinePixels()
        self._cache: dict = {}

    # ------------------------------------------------------------------ utils

    def _meta(self) -> dict:
        # The config echo drops "out": reports must be byte-identical for
        # identical experiments regardless of where they were written.
        echo = {k: v for k, v in self.cfg.to_dict().items() if k != "out"}
        return {"master_seed": self.cfg.seed, "config_hash": self.hash, "config": echo}

    def _marker(self, stage: str) -> Path:
        return self.dirs["state"] / f"{stage}.json"

    def _stage_done(self, stage: str) -> bool:
        marker = self._marker(stage)
        if not marker.exists():
            return False
        try:
            with open(marker, encoding="utf-8") as fh:
                return json.load(fh).get("config_hash") == self.hash
        except (OSError, json.JSONDecodeError):
            return False

    def _mark_done(self, stage: str) -> None:
        self.dirs["state"].mkdir(parents=True, exist_ok=True)
        with open(self._marker(stage), "w", encoding="utf-8") as fh:
            json.dump({"config_hash": self.hash, "master_seed": self.cfg.seed, "stage": stage}, fh, sort_keys=True)
            fh.write("\n")

    def _require(self, path: Path, what: str) -> Path:
        if not path.exists():
            raise StateError(f"missing {what}: {path} (run the earlier pipeline stages first)")
        return path

    def _speech_arch(self) -> SpeechArch:
        return SpeechArch(
            frame_dim=self.cfg.frame_dim, hidden=self.cfg.hidden, depth=self.cfg.depth,
            latent_dim=self.cfg.latent_dim,
        )

    def _vision_arch(self) -> VisionArch:
        return VisionArch(side=28, channels=(32, 64), latent_dim=self.cfg.latent_dim)

    def _needs_classifiers(self) -> bool:
        # Oracle arms also consult the transfer metric, for hard negatives.
        metric_arms = any(a in self.cfg.arms for a in MINED_ARMS + ORACLE_ARMS)
        return ("indirect_classifier" in self.cfg.arms) or (
            metric_arms and self.cfg.mining_metric == "transfer"
        )

    # ------------------------------------------------------------ data access

    def labels(self) -> PairLabels:
        if "labels" not in self._cache:
            path = self._require(self.dirs["data"] / "labels.json", "label file")
            with open(path, encoding="utf-8") as fh:
                raw = json.load(fh)
            self._cache["labels"] = PairLabels(
                class_names=tuple(raw["class_names"]),
                speech_to_class=dict(raw["speech_to_class"]),
                image_to_class={k: int(v) for k, v in raw["image_to_class"].items()},
            )
        return self._cache["labels"]

    def speech_split(self, name: str, labelled: bool = False) -> SpeechSet:
        key = ("speech", name, labelled)
        if key not in self._cache:
            path = self._require(self.dirs["data"] / f"speech_{name}.mfca", f"speech {name} archive")
            dataset = load_feature_archive(path)
            if labelled:
                labels = self.labels()
                dataset = dataset.replace_items(
                    [it.__class__(id=it.id, frames=it.frames, label=labels.speech_to_class[it.id]) for it in dataset]
                )
            self._cache[key] = dataset
        return self._cache[key]

    def image_split(self, name: str, labelled: bool = False) -> ImageSet:
        key = ("images", name, labelled)
        if key not in self._cache:
            path = self._require(self.dirs["data"] / f"images_{name}.idx", f"image {name} file")
            with open(self._require(self.dirs["data"] / "splits.json", "split manifest"), encoding="utf-8") as fh:
                order = json.load(fh)["images"][name]
            dataset = load_idx_images(path)
            if len(order) != len(dataset):
                raise StateError(f"split manifest and {path} disagree on item count")
            labels = self.labels()
            items = []
            for item, item_id in zip(dataset, order):
                label = int(labels.image_to_class[item_id]) if labelled else None
                items.append(item.__class__(id=item_id, grid=item.grid, label=label))
            self._cache[key] = ImageSet(items)
        return self._cache[key]

    # ---------------------------------------------------------------- prepare

    def _source_data(self):
        cfg = self.cfg
        if cfg.data_paths:
            required = ["speech_train", "speech_val", "speech_test",
                        "images_train", "images_val", "images_test", "labels"]
            for key in required:
                if key not in cfg.data_paths:
                    raise ArgumentError(f"data.paths is missing the field {key!r}")
                if not Path(cfg.data_paths[key]).exists():
                    raise IoError(f"data.paths.{key}: no such file {cfg.data_paths[key]}")
            speech = {s: load_feature_archive(cfg.data_paths[f"speech_{s}"]) for s in ("train", "val", "test")}
            images = {}
            with open(cfg.data_paths["labels"], encoding="utf-8") as fh:
                raw = json.load(fh)
            labels = PairLabels(
                class_names=tuple(raw["class_names"]),
                speech_to_class=dict(raw["speech_to_class"]),
                image_to_class={k: int(v) for k, v in raw["image_to_class"].items()},
            )
            for s in ("train", "val", "test"):
                loaded = load_idx_images(cfg.data_paths[f"images_{s}"])
                ids = raw["image_ids"][s]
                if len(ids) != len(loaded):
                    raise ArgumentError(f"labels file image_ids[{s}] does not match images_{s}")
                images[s] = ImageSet(
                    [it.__class__(id=ids[i], grid=it.grid, label=None) for i, it in enumerate(loaded)]
                )
            return speech, images, labels

        speech_all, images_all, labels = synth_paired_digits(
            cfg.n_per_class, cfg.noise, derive_seed(cfg.seed, "data"), frame_dim=cfg.frame_dim
        )
        sp = dict(zip(("train", "val", "test"),
                      split(speech_all, SplitSpec(cfg.split_fractions, derive_seed(cfg.seed, "split-speech")))))
        im = dict(zip(("train", "val", "test"),
                      split(images_all, SplitSpec(cfg.split_fractions, derive_seed(cfg.seed, "split-images")))))
        return sp, im, labels

    def prepare(self) -> None:
        """Generate or ingest datasets, write splits, train background
        classifiers when the transfer metric or classifier baseline needs
        them."""
        if self._stage_done("prepare"):
            return
        cfg = self.cfg
        for d in self.dirs.values():
            d.mkdir(parents=True, exist_ok=True)

        speech, images, labels = self._source_data()
        splits_record: dict = {"speech": {}, "images": {}}
        for name in ("train", "val", "test"):
            write_feature_archive(strip_labels(speech[name]), self.dirs["data"] / f"speech_{name}.mfca")
            save_idx_images(strip_labels(images[name]), self.dirs["data"] / f"images_{name}.idx")
            splits_record["speech"][name] = list(speech[name].ids)
            splits_record["images"][name] = list(images[name].ids)
        with open(self.dirs["data"] / "splits.json", "w", encoding="utf-8") as fh:
            json.dump({**splits_record, "master_seed": cfg.seed, "config_hash": self.hash}, fh, sort_keys=True, indent=2)
            fh.write("\n")
        with open(self.dirs["data"] / "labels.json", "w", encoding="utf-8") as fh:
            json.dump(
                {
                    "class_names": list(labels.class_names),
                    "speech_to_class": labels.speech_to_class,
                    "image_to_class": labels.image_to_class,
                    "master_seed": cfg.seed,
                    "config_hash": self.hash,
                },
                fh, sort_keys=True, indent=2,
            )
            fh.write("\n")
        with open(self.dirs["data"] / "manifest.json", "w", encoding="utf-8") as fh:
            json.dump(
                {
                    "master_seed": cfg.seed,
                    "config_hash": self.hash,
                    "counts": {
                        "speech": {k: len(v) for k, v in speech.items()},
                        "images": {k: len(v) for k, v in images.items()},
                    },
                },
                fh, sort_keys=True, indent=2,
            )
            fh.write("\n")

        if self._needs_classifiers():
            bg_speech, bg_images = synth_background(
                cfg.bg_speech_classes, cfg.bg_image_classes, cfg.bg_n_per_class, cfg.bg_noise,
                derive_seed(cfg.seed, "background"), frame_dim=cfg.frame_dim,
            )
            for modality, dataset in (("speech", bg_speech), ("vision", bg_images)):
                clf_cfg = ClassifierConfig(
                    batch_size=cfg.classifier_batch,
                    max_epochs=cfg.classifier_epochs,
                    patience=cfg.classifier_patience,
                    seed=derive_seed(cfg.seed, "classifier", modality),
                    hidden=cfg.hidden,
                    depth=cfg.depth,
                    latent_dim=cfg.latent_dim,
                )
                clf = train_classifier(dataset, clf_cfg, log_path=self.dirs["logs"] / f"classifier_{modality}.tsv")
                clf.meta.update({"master_seed": cfg.seed, "config_hash": self.hash})
                save_checkpoint(clf, self.dirs["classifiers"] / f"{modality}.ckpt")

        self._mark_done("prepare")

    # ------------------------------------------------------------------- mine

    def _classifiers(self):
        if "classifiers" not in self._cache:
            speech = load_checkpoint(self._require(self.dirs["classifiers"] / "speech.ckpt", "speech classifier checkpoint"))
            vision = load_checkpoint(self._require(self.dirs["classifiers"] / "vision.ckpt", "vision classifier checkpoint"))
            self._cache["classifiers"] = (speech, vision)
        return self._cache["classifiers"]

    def _mining_metrics(self):
        """(speech metric, image metric) for the configured mining metric."""
        if self.cfg.mining_metric == "transfer":
            speech_clf, vision_clf = self._classifiers()
            return classifier_metric(speech_clf, "transfer"), classifier_metric(vision_clf, "transfer")
        return self._dtw, self._pixels

    def _labelled_pool(self, split_name: str):
        return self.speech_split(split_name, labelled=True), self.image_split(split_name, labelled=True)

    def mine(self) -> None:
        """Mine cross-modal pairs, within-modality positives, oracle pairs,
        and the unsupervised reconstruction pairs, as the arms require."""
        if self._stage_done("mine"):
            return
        cfg = self.cfg
        self.dirs["mining"].mkdir(parents=True, exist_ok=True)
        labels = self.labels()
        test_speech = self.speech_split("test")
        test_images = self.image_split("test")

        support = sample_support_set(test_speech, test_images, labels, cfg.K, derive_seed(cfg.seed, "support"))
        with open(self.dirs["mining"] / "support.tsv", "w", encoding="utf-8") as fh:
            fh.write(f"# seed={cfg.seed} config={self.hash}\n")
            for p in support.pairs:
                fh.write(f"{p.speech.id}\t{p.image.id}\t{p.class_name}\n")

        mined_needed = any(a in cfg.arms for a in MINED_ARMS)
        if mined_needed:
            speech_metric, image_metric = self._mining_metrics()
            meta = {
                "metric": cfg.mining_metric,
                "speech_metric": speech_metric.descriptor,
                "image_metric": image_metric.descriptor,
                "master_seed": cfg.seed,
                "config_hash": self.hash,
            }
            for split_name in ("train", "val"):
                pool_speech = self.speech_split(split_name)
                pool_images = self.image_split(split_name)
                sa = assign_to_support(pool_speech.items, support.speech_items(), support.classes(), speech_metric)
                ia = assign_to_support(pool_images.items, support.image_items(), support.classes(), image_metric)
                pairs = mine_cross_modal_pairs(sa, ia, support, derive_seed(cfg.seed, "mine", split_name))
                write_pair_manifest(pairs, self.dirs["mining"] / f"pairs_{split_name}.tsv", {**meta, "split": split_name})
                if "mcae" in cfg.arms:
                    lookup_s = self._pair_item_lookup(pool_speech, support, "speech")
                    lookup_i = self._pair_item_lookup(pool_images, support, "image")
                    mined_s = [lookup_s[i] for i in sorted({p.speech_id for p in pairs})]
                    mined_i = [lookup_i[i] for i in sorted({p.image_id for p in pairs})]
                    pos_s = mine_within_modality_positives(mined_s, speech_metric)
                    pos_i = mine_within_modality_positives(mined_i, image_metric)
                    write_positive_manifest(pos_s, self.dirs["mining"] / f"pos_speech_{split_name}.tsv", {**meta, "split": split_name})
                    write_positive_manifest(pos_i, self.dirs["mining"] / f"pos_image_{split_name}.tsv", {**meta, "split": split_name})

        if any(a in cfg.arms for a in ORACLE_ARMS):
            for split_name in ("train", "val"):
                lsp, lim = self._labelled_pool(split_name)
                pairs = mine_oracle_pairs(lsp, lim, derive_seed(cfg.seed, "oracle", split_name))
                write_pair_manifest(
                    pairs, self.dirs["mining"] / f"oracle_pairs_{split_name}.tsv",
                    {"metric": "oracle", "master_seed": cfg.seed, "config_hash": self.hash, "split": split_name},
                )
                if "oracle_mcae" in cfg.arms:
                    pos_s = mine_oracle_positives(list(lsp.items), derive_seed(cfg.seed, "oracle-pos", split_name, "speech"))
                    pos_i = mine_oracle_positives(list(lim.items), derive_seed(cfg.seed, "oracle-pos", split_name, "image"))
                    write_positive_manifest(pos_s, self.dirs["mining"] / f"oracle_pos_speech_{split_name}.tsv",
                                            {"metric": "oracle", "split": split_name, "master_seed": cfg.seed, "config_hash": self.hash})
                    write_positive_manifest(pos_i, self.dirs["mining"] / f"oracle_pos_image_{split_name}.tsv",
                                            {"metric": "oracle", "split": split_name, "master_seed": cfg.seed, "config_hash": self.hash})

        if "indirect_cae" in cfg.arms:
            for split_name in ("train", "val"):
                pool_speech = self.speech_split(split_name)
                pool_images = self.image_split(split_name)
                pos_s = mine_within_modality_positives(list(pool_speech.items), self._dtw)
                pos_i = mine_within_modality_positives(list(pool_images.items), self._pixels)
                write_positive_manifest(pos_s, self.dirs["mining"] / f"cae_pos_speech_{split_name}.tsv",
                                        {"metric": "cosine", "split": split_name, "master_seed": cfg.seed, "config_hash": self.hash})
                write_positive_manifest(pos_i, self.dirs["mining"] / f"cae_pos_image_{split_name}.tsv",
                                        {"metric": "cosine", "split": split_name, "master_seed": cfg.seed, "config_hash": self.hash})

        self._mark_done("mine")

    def _pair_item_lookup(self, pool, support, side: str) -> dict:
        lookup = {item.id: item for item in pool}
        for p in support.pairs:
            item = p.speech if side == "speech" else p.image
            lookup[item.id] = item
        return lookup

    def _support(self):
        if "support" not in self._cache:
            from .mining import SupportPair, SupportSet

            path = self._require(self.dirs["mining"] / "support.tsv", "support manifest")
            test_speech = self.speech_split("test")
            test_images = self.image_split("test")
            pairs = []
            with open(path, encoding="utf-8") as fh:
                for line in fh:
                    line = line.strip()
                    if not line or line.startswith("#"):
                        continue
                    sid, iid, cls = line.split("\t")
                    pairs.append(SupportPair(speech=test_speech.by_id(sid), image=test_images.by_id(iid), class_name=cls))
            self._cache["support"] = SupportSet(pairs)
        return self._cache["support"]

    # ------------------------------------------------------------------ train

    def _mcae_examples(self, prefix: str, split_name: str):
        pairs = read_pair_manifest(self._require(self.dirs["mining"] / f"{prefix}pairs_{split_name}.tsv",
                                                 f"{prefix or 'mined '}pair manifest ({split_name})"))
        pos_s = read_positive_manifest(self._require(self.dirs["mining"] / f"{prefix}pos_speech_{split_name}.tsv",
                                                     f"speech positives ({split_name})"))
        pos_i = read_positive_manifest(self._require(self.dirs["mining"] / f"{prefix}pos_image_{split_name}.tsv",
                                                     f"image positives ({split_name})"))
        support = self._support()
        lookup_s = self._pair_item_lookup(self.speech_split(split_name), support, "speech")
        lookup_i = self._pair_item_lookup(self.image_split(split_name), support, "image")
        examples = [
            MCAEExample(
                x_a=lookup_s[p.speech_id],
                x_a_pair=lookup_s[pos_s[p.speech_id]],
                x_v=lookup_i[p.image_id],
                x_v_pair=lookup_i[pos_i[p.image_id]],
            )
            for p in pairs
        ]
        return examples

    def _triplet_data(self, prefix: str, split_name: str, metrics):
        pairs = read_pair_manifest(self._require(self.dirs["mining"] / f"{prefix}pairs_{split_name}.tsv",
                                                 f"{prefix or 'mined '}pair manifest ({split_name})"))
        support = self._support()
        lookup_s = self._pair_item_lookup(self.speech_split(split_name), support, "speech")
        lookup_i = self._pair_item_lookup(self.image_split(split_name), support, "image")
        speech_metric, image_metric = metrics
        class_of_s = {p.speech_id: p.pivot_class for p in pairs}
        # Image-side negative candidacy collapses pivot classes through the
        # spoken -> digit map: an "oh"-pivot image must not serve as a
        # negative for a "zero" anchor (it is the same digit).
        class_of_i = {p.image_id: str(visual_class_for(p.pivot_class)) for p in pairs}
        ids_s = sorted(class_of_s)
        ids_i = sorted(class_of_i)
        speech_pool = ModalityPool([lookup_s[i] for i in ids_s], [class_of_s[i] for i in ids_s], speech_metric)
        image_pool = ModalityPool([lookup_i[i] for i in ids_i], [class_of_i[i] for i in ids_i], image_metric)
        return pairs, speech_pool, image_pool

    def _arm_training_data(self, arm: str):
        key = ("arm-data", arm)
        if key in self._cache:
            return self._cache[key]
        if arm == "mcae":
            data = {"train": self._mcae_examples("", "train"), "val": self._mcae_examples("", "val")}
        elif arm == "oracle_mcae":
            data = {"train": self._mcae_examples("oracle_", "train"), "val": self._mcae_examples("oracle_", "val")}
        elif arm in ("mtriplet", "oracle_mtriplet"):
            # Negatives are "non-matching but close" in the observable input
            # space: raw-feature distances keep margin violations alive far
            # longer than classifier-embedding distances, which saturate the
            # hinge early and leave the modalities misaligned.
            metrics = (self._dtw, self._pixels)
            prefix = "oracle_" if arm == "oracle_mtriplet" else ""
            data = {
                "train": self._triplet_data(prefix, "train", metrics),
                "val": self._triplet_data(prefix, "val", metrics),
            }
        elif arm == "indirect_cae":
            data = {}
            for split_name in ("train", "val"):
                pool_s = self.speech_split(split_name)
                pool_i = self.image_split(split_name)
                pos_s = read_positive_manifest(self._require(self.dirs["mining"] / f"cae_pos_speech_{split_name}.tsv",
                                                             f"reconstruction speech positives ({split_name})"))
                pos_i = read_positive_manifest(self._require(self.dirs["mining"] / f"cae_pos_image_{split_name}.tsv",
                                                             f"reconstruction image positives ({split_name})"))
                data[split_name] = {
                    "speech": [(pool_s.by_id(a), pool_s.by_id(b)) for a, b in sorted(pos_s.items())],
                    "vision": [(pool_i.by_id(a), pool_i.by_id(b)) for a, b in sorted(pos_i.items())],
                }
        else:
            raise ArgumentError(f"arm {arm!r} has no training stage")
        self._cache[key] = data
        return data

    def _cell_paths(self, arm: str, bs: int, gseed: int):
        stem = f"bs{bs}_s{gseed}"
        return (
            self.dirs["checkpoints"] / arm / f"{stem}.ckpt",
            self.dirs["logs"] / arm / f"{stem}.tsv",
        )

    def train(self) -> None:
        """Train one checkpoint per (arm, batch size, seed) grid cell;
        completed cells are skipped."""
        cfg = self.cfg
        trainable = [a for a in cfg.arms if a in DIRECT_ARMS or a == "indirect_cae"]
        for arm in trainable:
            for bs in cfg.batch_sizes:
                for gseed in cfg.grid_seeds:
                    ckpt_path, log_path = self._cell_paths(arm, bs, gseed)
                    if arm == "indirect_cae":
                        done = ckpt_path.with_name(f"bs{bs}_s{gseed}_speech.ckpt").exists() and \
                            ckpt_path.with_name(f"bs{bs}_s{gseed}_vision.ckpt").exists()
                    else:
                        done = ckpt_path.exists()
                    if done:
                        continue
                    ckpt_path.parent.mkdir(parents=True, exist_ok=True)
                    log_path.parent.mkdir(parents=True, exist_ok=True)
                    self._train_cell(arm, bs, gseed, ckpt_path, log_path)

    def _train_cell(self, arm: str, bs: int, gseed: int, ckpt_path: Path, log_path: Path) -> None:
        cfg = self.cfg
        cell_seed = derive_seed(cfg.seed, "train", arm, bs, gseed)
        tcfg = TrainConfig(
            batch_size=bs, learning_rate=cfg.learning_rate, margin=cfg.margin,
            max_epochs=cfg.max_epochs, patience=cfg.patience, seed=cell_seed,
        )
        log_meta = {"arm": arm, "batch_size": bs, "grid_seed": gseed, "master_seed": cfg.seed, "config": self.hash}
        init_seed = derive_seed(cfg.seed, "init", arm, bs, gseed)
        data = self._arm_training_data(arm)

        if arm in ("mcae", "oracle_mcae"):
            params = build_direct_model("mcae", self._speech_arch(), self._vision_arch(), init_seed)
            model = train_mcae(
                data["train"], data["val"], params, tcfg,
                weights=LossWeights(*cfg.loss_weights), log_path=log_path, log_meta=log_meta,
            )
        elif arm in ("mtriplet", "oracle_mtriplet"):
            train_pairs, speech_pool, image_pool = data["train"]
            val_pairs, val_speech_pool, val_image_pool = data["val"]
            params = build_direct_model("mtriplet", self._speech_arch(), self._vision_arch(), init_seed)
            model = train_mtriplet(
                train_pairs, val_pairs, params, tcfg, speech_pool, image_pool,
                val_speech_pool=val_speech_pool, val_image_pool=val_image_pool,
                k_sample=cfg.k_sample, log_path=log_path, log_meta=log_meta,
            )
        elif arm == "indirect_cae":
            for modality, kind in (("speech", "speech_cae"), ("vision", "vision_cae")):
                params = build_direct_model(
                    kind,
                    self._speech_arch() if modality == "speech" else None,
                    self._vision_arch() if modality == "vision" else None,
                    derive_seed(init_seed, modality),
                )
                model = train_unimodal_cae(
                    data["train"][modality], data["val"][modality], params, tcfg, modality,
                    log_path=log_path.with_name(f"bs{bs}_s{gseed}_{modality}.tsv"),
                    log_meta={**log_meta, "modality": modality},
                )
                model.meta.update(log_meta)
                save_checkpoint(model, ckpt_path.with_name(f"bs{bs}_s{gseed}_{modality}.ckpt"))
            return
        else:
            raise ArgumentError(f"arm {arm!r} is not trainable")
        model.meta.update(log_meta)
        save_checkpoint(model, ckpt_path)

    # --------------------------------------------------------------- evaluate

    def _manifest_matches(self, path: Path) -> bool:
        try:
            with open(path, encoding="utf-8") as fh:
                first = fh.readline()
            return first.startswith("# ") and json.loads(first[2:]).get("config_hash") == self.hash
        except (OSError, json.JSONDecodeError):
            return False

    def _episodes(self):
        if "episodes" in self._cache:
            return self._cache["episodes"]
        cfg = self.cfg
        path = self.dirs["results"] / "episodes.jsonl"
        test_speech = self.speech_split("test")
        test_images = self.image_split("test")
        if path.exists() and self._manifest_matches(path):
            episodes = load_episode_manifest(path, test_speech, test_images)
        else:
            episodes = sample_episodes(
                cfg.episodes, test_speech, test_images, self.labels(),
                L=cfg.L, K=cfg.K, N=cfg.N, n_queries=cfg.queries, seed=derive_seed(cfg.seed, "episodes"),
            )
            self.dirs["results"].mkdir(parents=True, exist_ok=True)
            save_episode_manifest(episodes, path, {"master_seed": cfg.seed, "config_hash": self.hash})
        self._cache["episodes"] = episodes
        return episodes

    def _model_metrics(self, model):
        """Embedding-backed metrics over the model's own space; a missing
        encoder (single-modality bundles) yields None on that side."""
        speech_metric = image_metric = None
        if model.speech_encoder is not None:
            speech_metric = EmbeddingCosine(
                encode=lambda item: encode_speech_batch(model, [item])[0],
                batch_encode=lambda items: encode_speech_batch(model, items),
                descriptor=f"{model.kind}-speech",
            )
            speech_metric._fill_cache(list(self.speech_split("test").items))
        if model.vision_encoder is not None:
            image_metric = EmbeddingCosine(
                encode=lambda item: encode_image_batch(model, [item])[0],
                batch_encode=lambda items: encode_image_batch(model, items),
                descriptor=f"{model.kind}-vision",
            )
            image_metric._fill_cache(list(self.image_split("test").items))
        return speech_metric, image_metric

    def _evaluate_model(self, arm_key: str, cell: tuple, matcher) -> float:
        episodes = self._episodes()
        results = run_episodes(matcher, episodes, self.labels())
        out_dir = self.dirs["results"] / arm_key
        out_dir.mkdir(parents=True, exist_ok=True)
        bs, gseed = cell
        with open(out_dir / f"bs{bs}_s{gseed}.tsv", "w", encoding="utf-8") as fh:
            fh.write(f"# seed={self.cfg.seed} config={self.hash}\n")
            for r in results:
                fh.write(
                    f"{r.episode_id}\t{r.query_id}\t{r.predicted_image_id}\t{r.predicted_visual_class}"
                    f"\t{r.true_spoken_class}\t{r.true_visual_class}\t{int(r.correct)}\n"
                )
        return accuracy(results)

    def evaluate(self) -> None:
        """Run every requested arm (direct models in both application modes)
        on the shared episode set, then emit the report files."""
        if self._stage_done("evaluate"):
            return
        cfg = self.cfg
        self._episodes()

        for arm in cfg.arms:
            if arm == "dtw_pixels":
                matcher = lambda ep, q: match_indirect(self._dtw, self._pixels, ep.support, q, ep.matching)
                self._evaluate_model("dtw_pixels", (0, 0), matcher)
            elif arm == "indirect_classifier":
                speech_clf, vision_clf = self._classifiers()
                sm = classifier_metric(speech_clf, "transfer")
                im = classifier_metric(vision_clf, "transfer")
                matcher = lambda ep, q: match_indirect(sm, im, ep.support, q, ep.matching)
                self._evaluate_model("indirect_classifier", (0, 0), matcher)
            elif arm == "indirect_cae":
                for bs in cfg.batch_sizes:
                    for gseed in cfg.grid_seeds:
                        sp = load_checkpoint(self._require(
                            self.dirs["checkpoints"] / arm / f"bs{bs}_s{gseed}_speech.ckpt",
                            f"indirect_cae speech checkpoint (bs={bs}, seed={gseed})"))
                        vi = load_checkpoint(self._require(
                            self.dirs["checkpoints"] / arm / f"bs{bs}_s{gseed}_vision.ckpt",
                            f"indirect_cae vision checkpoint (bs={bs}, seed={gseed})"))
                        sm, _ = self._model_metrics(sp)
                        _, im = self._model_metrics(vi)
                        matcher = lambda ep, q, sm=sm, im=im: match_indirect(sm, im, ep.support, q, ep.matching)
                        self._evaluate_model(arm, (bs, gseed), matcher)
            else:
                for bs in cfg.batch_sizes:
                    for gseed in cfg.grid_seeds:
                        ckpt, _ = self._cell_paths(arm, bs, gseed)
                        model = load_checkpoint(self._require(ckpt, f"{arm} checkpoint (bs={bs}, seed={gseed})"))
                        sm, im = self._model_metrics(model)
                        direct = lambda ep, q, sm=sm, im=im: match_direct(sm.embed, im.embed, q, ep.matching)
                        indirect = lambda ep, q, sm=sm, im=im: match_indirect(sm, im, ep.support, q, ep.matching)
                        self._evaluate_model(f"{arm}_direct", (bs, gseed), direct)
                        self._evaluate_model(f"{arm}_indirect", (bs, gseed), indirect)

        self.report(force=True)
        self._mark_done("evaluate")

    # ----------------------------------------------------------------- report

    def _read_results(self, path: Path) -> list[MatchResult]:
        results = []
        with open(path, encoding="utf-8") as fh:
            for line in fh:
                line = line.rstrip("\n")
                if not line or line.startswith("#"):
                    continue
                ep, qid, iid, pred, spoken, true_vis, correct = line.split("\t")
                results.append(
                    MatchResult(
                        episode_id=int(ep), query_id=qid, predicted_image_id=iid,
                        predicted_visual_class=int(pred), true_spoken_class=spoken,
                        true_visual_class=int(true_vis), correct=bool(int(correct)),
                    )
                )
        return results

    def report(self, force: bool = False) -> dict:
        """Aggregate stored per-model results into the report files."""
        if not force and self._stage_done("report"):
            with open(self.dirs["report"] / "summary.json", encoding="utf-8") as fh:
                return json.load(fh)
        results_root = self.dirs["results"]
        if not results_root.exists():
            raise StateError(f"missing results directory {results_root} (run evaluate first)")
        arm_reports = []
        for arm_dir in sorted(p for p in results_root.iterdir() if p.is_dir()):
            grid = RunGrid()
            per_cell: dict = {}
            for cell_file in sorted(arm_dir.glob("bs*_s*.tsv")):
                stem = cell_file.stem
                bs = int(stem.split("_")[0][2:])
                gseed = int(stem.split("_")[1][1:])
                results = self._read_results(cell_file)
                per_cell[(bs, gseed)] = results
                grid.add(bs, gseed, accuracy(results))
            if not per_cell:
                continue
            best_cell = max(grid.accuracies, key=lambda c: (grid.accuracies[c], -c[0], -c[1]))
            arm_reports.append(
                ArmReport(
                    arm=arm_dir.name,
                    grid=grid,
                    confusion=confusion(per_cell[best_cell]),
                    confusion_cell=best_cell,
                    confusion_cell_accuracy=grid.accuracies[best_cell],
                )
            )
        if not arm_reports:
            raise StateError("no evaluation results found (run evaluate first)")
        summary = emit_report(arm_reports, self._meta(), self.dirs["report"])
        self._mark_done("report")
        return summary

    # -------------------------------------------------------------- run all

    def run_all(self) -> dict:
        self.prepare()
        self.mine()
        self.train()
        self.evaluate()
        return self.report()
