"""Pre-trained transformer backbones with the MLP classification head."""

from .classic import CLASSIC_KINDS, ClassicHeadModel, train_classic_head
from .model import (
    SequenceClassifier,
    TorchHead,
    TrainedBaseModel,
    build_model,
    encode_batch,
    fine_tune,
    fingerprint_module,
    load_trained_model,
    pool,
    predict_batch,
    token_ids,
)
from .providers import (
    WEIGHTS_DIR_ENV,
    HuggingFaceProvider,
    LoadedBackbone,
    RandomInitProvider,
    load_saved_backbone,
    make_provider,
)
from .registry import BACKBONE_NAMES, DEFAULT_POOLING, POOLINGS, BackboneId, registry
from ..training import TrainConfig

__all__ = [
    "BACKBONE_NAMES", "CLASSIC_KINDS", "DEFAULT_POOLING", "POOLINGS", "WEIGHTS_DIR_ENV",
    "BackboneId", "ClassicHeadModel", "HuggingFaceProvider", "LoadedBackbone", "RandomInitProvider",
    "SequenceClassifier", "TorchHead", "TrainConfig", "TrainedBaseModel",
    "build_model", "encode_batch", "fine_tune", "fingerprint_module", "load_saved_backbone",
    "load_trained_model", "make_provider", "pool", "predict_batch", "registry", "token_ids",
    "train_classic_head",
]
