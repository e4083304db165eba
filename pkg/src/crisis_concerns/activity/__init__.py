"""Activity-concern text classification with a from-scratch transformer encoder."""

from .encoder import EncoderConfig, attention, encode_and_classify, forward, init_params
from .labels import ACTIVITY_LABELS, DISPLAY_NAMES, NUM_CLASSES, label_index
from .training import (
    ActivityModel,
    OptimizerSettings,
    classify_corpus,
    load_checkpoint,
    save_checkpoint,
    train_classifier,
)
from .vocab import TokenSequence, Vocabulary, build_vocab, tokenize

__all__ = [
    "ACTIVITY_LABELS",
    "DISPLAY_NAMES",
    "NUM_CLASSES",
    "ActivityModel",
    "EncoderConfig",
    "OptimizerSettings",
    "TokenSequence",
    "Vocabulary",
    "attention",
    "build_vocab",
    "classify_corpus",
    "encode_and_classify",
    "forward",
    "init_params",
    "label_index",
    "load_checkpoint",
    "save_checkpoint",
    "tokenize",
    "train_classifier",
]
