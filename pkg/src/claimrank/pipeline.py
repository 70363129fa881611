"""End-to-end glue: train, embed, index, retrieve, evaluate."""
from __future__ import annotations

import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Mapping, Optional, Union

import numpy as np

from . import encoder
from .corpus import Corpus, FactCheck, Post, TextView, select_text
from .encoder import EncoderParams, Vocabulary
from .ensemble import FusionConfig, ModelRun, fuse
from .errors import FormatError
from .evaluation import EvalReport, GoldMapping, evaluate
from .index import VectorIndex, build_index, search_many
from .training import TrainConfig, TrainResult, kfold_split, train

log = logging.getLogger(__name__)


def embed_items(items: Mapping[int, Union[Post, FactCheck]], view: TextView,
                vocab: Vocabulary, params: EncoderParams,
                max_len: int) -> tuple[np.ndarray, np.ndarray]:
    """Embed posts or fact-checks in ascending id order.

    Returns ``(ids, vectors)``; items whose text yields no tokens get zero rows.
    """
    ids = np.array(sorted(items), dtype=np.int64)
    texts = [select_text(items[i], view) for i in ids]
    return ids, encoder.embed_texts(texts, vocab, params, max_len)


def save_embeddings(path: Union[str, Path], ids: np.ndarray, vectors: np.ndarray) -> None:
    with open(path, "wb") as fh:
        np.savez(fh, ids=np.asarray(ids, dtype=np.int64), vectors=vectors)


def load_embeddings(path: Union[str, Path]) -> tuple[np.ndarray, np.ndarray]:
    try:
        with np.load(path) as data:
            ids, vectors = data["ids"], data["vectors"]
    except (KeyError, ValueError, OSError) as exc:
        raise FormatError(f"{path}: not an embeddings file ({exc})") from None
    if vectors.ndim != 2 or len(ids) != len(vectors):
        raise FormatError(f"{path}: ids and vectors disagree in length")
    return ids, vectors


def index_from_embeddings(ids: np.ndarray, vectors: np.ndarray) -> VectorIndex:
    """Index every non-degenerate row; zero rows cannot be ranked and are left out."""
    keep = np.linalg.norm(vectors, axis=1) > encoder.NORM_FLOOR
    if not keep.all():
        log.warning("leaving %d fact-checks without usable text out of the index",
                    int((~keep).sum()))
    return build_index(zip(ids[keep], vectors[keep]), dim=vectors.shape[1])


def retrieve(index: VectorIndex, post_ids: np.ndarray, queries: np.ndarray, k: int,
             name: str = "run", threads: int = 1) -> ModelRun:
    lists = search_many(index, [int(p) for p in post_ids], queries, k, threads)
    return ModelRun(name, lists)


@dataclass
class FoldOutcome:
    result: TrainResult
    run: ModelRun
    report: EvalReport


def train_and_retrieve(corpus: Corpus, view: TextView, config: TrainConfig,
                       eval_posts: set[int], candidates: Optional[set[int]] = None,
                       fold: Optional[int] = None, fold_of: Optional[np.ndarray] = None,
                       k: int = 10, threads: int = 1, name: str = "run") -> FoldOutcome:
    """Train one model, index the candidate fact-checks and rank them for ``eval_posts``."""
    result = train(corpus, view, config, fold=fold, fold_of=fold_of)
    facts = corpus.fact_checks if candidates is None else \
        {i: corpus.fact_checks[i] for i in candidates}
    fids, fvecs = embed_items(facts, view, result.vocab, result.params, config.max_len)
    index = index_from_embeddings(fids, fvecs)
    posts = {p: corpus.posts[p] for p in eval_posts}
    pids, pvecs = embed_items(posts, view, result.vocab, result.params, config.max_len)
    run = retrieve(index, pids, pvecs, k, name=name, threads=threads)
    report = evaluate(run.lists, GoldMapping.from_corpus(corpus, eval_posts), k)
    return FoldOutcome(result, run, report)


def fold_posts(corpus: Corpus, fold_of: np.ndarray, fold: int) -> set[int]:
    return {m.post_id for m, f in zip(corpus.mappings, fold_of) if f == fold}


def fold_ensemble(corpus: Corpus, view: TextView, config: TrainConfig, eval_posts: set[int],
                  k_folds: int = 5, k: int = 10,
                  fusion: FusionConfig = FusionConfig()) -> tuple[list[FoldOutcome], dict]:
    """Train one model per fold (each without its fold) and fuse their rankings of ``eval_posts``."""
    fold_of = kfold_split(len(corpus.mappings), k_folds, config.seed)
    outcomes = [
        train_and_retrieve(corpus, view, config, eval_posts, fold=f, fold_of=fold_of, k=k,
                           name=f"fold{f}")
        for f in range(k_folds)
    ]
    fused = fuse([o.run for o in outcomes], fusion)
    return outcomes, fused
