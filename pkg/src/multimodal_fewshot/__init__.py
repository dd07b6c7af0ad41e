"""Few-shot speech-to-image matching in a shared embedding space.

The library learns one multimodal embedding space for spoken-word feature
sequences and digit images from a handful of given pairs plus mined
unlabelled pairs, and evaluates L-way K-shot speech-to-image matching
against indirect two-step baselines.
"""

from .data import (
    ImageItem,
    ImageSet,
    PairLabels,
    SpeechItem,
    SpeechSet,
    SplitSpec,
    load_feature_archive,
    load_idx_images,
    preprocess_background_image,
    save_idx_images,
    split,
    strip_labels,
    synth_background,
    synth_paired_digits,
    write_feature_archive,
)
from .features import (
    CosinePixels,
    CosineVectors,
    DtwSequences,
    EmbeddingCosine,
    cosine_distance,
    dtw_distance,
    nearest,
    pixel_distance,
)
from .losses import LossWeights, cae_loss, latent_match_loss, mcae_loss, mtriplet_loss, weighted_mcae
from .mining import (
    Assignment,
    MinedPair,
    ModalityPool,
    SupportPair,
    SupportSet,
    assign_to_support,
    mine_cross_modal_pairs,
    mine_hard_negatives,
    mine_oracle_pairs,
    mine_within_modality_positives,
)
from .nn import (
    ModelParams,
    SpeechArch,
    VisionArch,
    build_classifier,
    build_direct_model,
    classifier_embedding,
    decode_image,
    decode_speech,
    encode_image,
    encode_speech,
    load_checkpoint,
    save_checkpoint,
)
from .classifiers import ClassifierConfig, classifier_accuracy, classifier_metric, train_classifier
from .training import (
    MCAEExample,
    TrainConfig,
    early_stop,
    train_mcae,
    train_mtriplet,
    train_unimodal_cae,
)
from .fewshot import (
    Episode,
    MatchResult,
    classify_unimodal,
    match_direct,
    match_indirect,
    sample_episode,
    sample_episodes,
    sample_support_set,
    score_query,
)
from .evaluation import (
    ConfusionMatrix,
    OracleMatcher,
    RandomMatcher,
    RunGrid,
    accuracy,
    aggregate,
    confusion,
    emit_report,
    run_episodes,
)
from .pipeline import Experiment, ExperimentConfig

__version__ = "0.1.0"
