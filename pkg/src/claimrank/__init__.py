"""Bi-encoder retrieval of previously fact-checked claims for social media posts."""

__version__ = "0.1.0"

from .corpus import Corpus, FactCheck, MappingPair, Post, TextView, load_corpus, preprocess, select_text
from .encoder import EncoderParams, Vocabulary, embed_sentence, init_params
from .ensemble import FusionConfig, ModelRun, fuse
from .errors import DataError, FormatError
from .evaluation import EvalReport, GoldMapping, evaluate, success_at_k, write_predictions
from .index import RankedList, VectorIndex, build_index, search_topk
from .training import TrainConfig, mnr_loss, symmetric_loss, train

__all__ = [
    "Corpus", "FactCheck", "MappingPair", "Post", "TextView", "load_corpus", "preprocess",
    "select_text", "EncoderParams", "Vocabulary", "embed_sentence", "init_params",
    "FusionConfig", "ModelRun", "fuse", "DataError", "FormatError", "EvalReport",
    "GoldMapping", "evaluate", "success_at_k", "write_predictions", "RankedList",
    "VectorIndex", "build_index", "search_topk", "TrainConfig", "mnr_loss",
    "symmetric_loss", "train",
]
