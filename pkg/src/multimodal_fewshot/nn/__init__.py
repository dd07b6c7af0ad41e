from .networks import (
    LATENT_DIM,
    ModelParams,
    SpeechArch,
    VisionArch,
    build_classifier,
    build_direct_model,
    classifier_embedding,
    classifier_embedding_batch,
    clone_model,
    decode_image,
    decode_speech,
    encode_image,
    encode_image_batch,
    encode_speech,
    encode_speech_batch,
)
from .checkpoint import load_checkpoint, save_checkpoint
from .optim import Adam

__all__ = [
    "LATENT_DIM",
    "ModelParams",
    "SpeechArch",
    "VisionArch",
    "build_classifier",
    "build_direct_model",
    "classifier_embedding",
    "classifier_embedding_batch",
    "clone_model",
    "decode_image",
    "decode_speech",
    "encode_image",
    "encode_image_batch",
    "encode_speech",
    "encode_speech_batch",
    "load_checkpoint",
    "save_checkpoint",
    "Adam",
]
