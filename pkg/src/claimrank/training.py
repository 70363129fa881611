"""Contrastive training of the shared-weight bi-encoder.

Each batch pairs post ``i`` with its gold fact-check ``i``; every other
fact-check in the batch is a negative. Posts and fact-checks go through the
same encoder parameters.
"""
from __future__ import annotations

import dataclasses
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Union

import numpy as np
import yaml

from . import encoder
from .corpus import Corpus, MappingPair, TextView, is_skippable, select_text
from .encoder import BACKBONE_TENSORS, EncoderParams, Vocabulary
from .errors import DataError

log = logging.getLogger(__name__)

MASKED_LOGIT = -1e9
ADAM_BETAS = (0.9, 0.999)
ADAM_EPS = 1e-8


@dataclass
class TrainConfig:
    batch_size: int = 24
    epochs: int = 20
    warmup_steps: int = 400
    lr_backbone: float = 1e-4
    lr_custom: float = 1e-4
    weight_decay: float = 0.005
    clip_value: float = 1.0
    temperature: float = 0.05
    seed: int = 42
    loss: str = "symmetric"
    # model shape
    pooling: str = "mean"
    embed_dim: int = 64
    hidden: int = 32
    max_len: int = 64
    vocab_min_count: int = 1
    vocab_max_size: Optional[int] = None
    freeze_backbone: bool = False
    freeze_custom: bool = False

    def __post_init__(self):
        for name in ("batch_size", "embed_dim", "hidden", "max_len"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be positive")
        for name in ("lr_backbone", "lr_custom", "clip_value", "temperature"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")
        if self.epochs < 0 or self.warmup_steps < 0:
            raise ValueError("epochs and warmup_steps must be non-negative")
        if self.loss not in ("mnr", "symmetric"):
            raise ValueError(f"unknown loss {self.loss!r}")
        if self.pooling not in encoder.POOLING_MODES:
            raise ValueError(f"unknown pooling {self.pooling!r}")

    @classmethod
    def multilingual(cls, **overrides) -> "TrainConfig":
        return cls(**{"batch_size": 24, "epochs": 20, "warmup_steps": 400, **overrides})

    @classmethod
    def crosslingual(cls, **overrides) -> "TrainConfig":
        return cls(**{"batch_size": 36, "epochs": 10, "warmup_steps": 500, **overrides})

    def replace(self, **changes) -> "TrainConfig":
        return dataclasses.replace(self, **changes)

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)


def load_config_file(path: Union[str, Path]) -> dict:
    """Flat ``key: value`` mapping from a YAML file."""
    data = yaml.safe_load(Path(path).read_text(encoding="utf-8")) or {}
    if not isinstance(data, dict) or any(isinstance(v, (dict, list)) for v in data.values()):
        raise DataError(f"{path}: config must be a flat key/value mapping")
    return data


# ---------------------------------------------------------------------------
# Similarity and losses
# ---------------------------------------------------------------------------

def similarity_matrix(Q: np.ndarray, C: np.ndarray, temperature: float) -> np.ndarray:
    """``S[i, j] = cos(q_i, c_j) / T``; a zero vector has cosine 0 with everything."""
    if temperature <= 0:
        raise ValueError("temperature must be positive")
    Qn = Q / np.maximum(np.linalg.norm(Q, axis=1), encoder.NORM_FLOOR)[:, None]
    Cn = C / np.maximum(np.linalg.norm(C, axis=1), encoder.NORM_FLOOR)[:, None]
    return Qn @ Cn.T / temperature


def similarity_backward(dS: np.ndarray, Q: np.ndarray, C: np.ndarray,
                        temperature: float) -> tuple[np.ndarray, np.ndarray]:
    """Gradients w.r.t. ``Q`` and ``C`` of a loss with gradient ``dS`` w.r.t. the similarity matrix."""
    def parts(X):
        norms = np.linalg.norm(X, axis=1)
        safe = np.maximum(norms, encoder.NORM_FLOOR)[:, None]
        return X / safe, safe, norms < encoder.NORM_FLOOR

    Qn, q_norm, q_deg = parts(Q)
    Cn, c_norm, c_deg = parts(C)
    dQn = dS @ Cn / temperature
    dCn = dS.T @ Qn / temperature

    def through_norm(dXn, Xn, safe, deg):
        proj = np.where(deg[:, None], 0.0, Xn * (Xn * dXn).sum(axis=1, keepdims=True))
        return (dXn - proj) / safe

    return through_norm(dQn, Qn, q_norm, q_deg), through_norm(dCn, Cn, c_norm, c_deg)


def _check_square(S):
    S = np.asarray(S, dtype=np.float64)
    if S.ndim != 2 or S.shape[0] != S.shape[1]:
        raise ValueError(f"similarity matrix must be square, got shape {S.shape}")
    return S


def mnr_loss(S: np.ndarray, mask: Optional[np.ndarray] = None) -> tuple[float, np.ndarray]:
    """Mean in-batch softmax cross-entropy with the diagonal as target.

    ``mask[i, j] = True`` removes entry ``(i, j)`` from row ``i``'s softmax
    (a false negative). Returns the loss and its gradient w.r.t. ``S``.
    """
    S = _check_square(S)
    B = S.shape[0]
    if mask is not None:
        S = np.where(mask, MASKED_LOGIT, S)
    row_max = S.max(axis=1, keepdims=True)
    shifted = S - row_max
    exp = np.exp(shifted)
    denom = exp.sum(axis=1)
    log_probs_diag = np.diag(shifted) - np.log(denom)
    loss = float(-log_probs_diag.mean())
    grad = exp / denom[:, None]
    grad[np.arange(B), np.arange(B)] -= 1.0
    return loss, grad / B


def symmetric_loss(S: np.ndarray, mask: Optional[np.ndarray] = None) -> tuple[float, np.ndarray]:
    """Average of the row-wise and column-wise cross-entropies."""
    S = _check_square(S)
    row_loss, row_grad = mnr_loss(S, mask)
    col_loss, col_grad = mnr_loss(S.T, None if mask is None else mask.T)
    return 0.5 * (row_loss + col_loss), 0.5 * (row_grad + col_grad.T)


LOSSES = {"mnr": mnr_loss, "symmetric": symmetric_loss}


def false_negative_mask(post_ids, fact_check_ids, gold: dict[int, set[int]]) -> np.ndarray:
    """``mask[i, j]`` is set when fact-check ``j`` is also gold for post ``i`` (``i != j``)."""
    B = len(post_ids)
    mask = np.zeros((B, B), dtype=bool)
    for i, p in enumerate(post_ids):
        golds = gold.get(p, ())
        for j, f in enumerate(fact_check_ids):
            if i != j and f in golds:
                mask[i, j] = True
    return mask


# ---------------------------------------------------------------------------
# Optimizer
# ---------------------------------------------------------------------------

@dataclass
class OptimizerState:
    m: dict[str, np.ndarray]
    v: dict[str, np.ndarray]
    step: int = 0

    @classmethod
    def for_params(cls, params: EncoderParams) -> "OptimizerState":
        return cls(params.zeros_like(), params.zeros_like())


def lr_schedule(step: int, warmup_steps: int) -> float:
    """Linear warmup from 0 to 1 over ``warmup_steps``, then constant."""
    if warmup_steps <= 0 or step >= warmup_steps:
        return 1.0
    return step / warmup_steps


def clip_gradients(grads: dict[str, np.ndarray], clip_value: float) -> dict[str, np.ndarray]:
    """Element-wise clamp to ``[-clip_value, clip_value]``."""
    return {k: np.clip(g, -clip_value, clip_value) for k, g in grads.items()}


def group_lr(name: str, config: TrainConfig) -> float:
    if name in BACKBONE_TENSORS:
        return 0.0 if config.freeze_backbone else config.lr_backbone
    return 0.0 if config.freeze_custom else config.lr_custom


def adamw_step(params: EncoderParams, grads: dict[str, np.ndarray], state: OptimizerState,
               config: TrainConfig, lr_scale: float = 1.0) -> None:
    """One in-place AdamW update with decoupled weight decay and bias correction."""
    for name, g in grads.items():
        if not np.all(np.isfinite(g)):
            raise FloatingPointError(f"non-finite gradient in {name}")
    b1, b2 = ADAM_BETAS
    state.step += 1
    c1 = 1.0 - b1 ** state.step
    c2 = 1.0 - b2 ** state.step
    for name, g in grads.items():
        p = getattr(params, name)
        if p.shape != g.shape:
            raise ValueError(f"gradient for {name} has shape {g.shape}, expected {p.shape}")
        lr = group_lr(name, config) * lr_scale
        m = state.m[name]
        v = state.v[name]
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * g * g
        if lr == 0.0:
            continue
        p *= 1.0 - lr * config.weight_decay
        p -= lr * (m / c1) / (np.sqrt(v / c2) + ADAM_EPS)


# ---------------------------------------------------------------------------
# Folds and candidate sampling
# ---------------------------------------------------------------------------

def kfold_split(pair_count: int, k: int, seed: int) -> np.ndarray:
    """Fold id per pair: seeded shuffle, then round-robin over ``k`` folds."""
    if k < 2:
        raise ValueError("k must be at least 2")
    if pair_count < k:
        raise ValueError(f"cannot split {pair_count} pairs into {k} folds")
    order = np.random.default_rng(seed).permutation(pair_count)
    fold_of = np.empty(pair_count, dtype=np.int64)
    fold_of[order] = np.arange(pair_count) % k
    return fold_of


def sample_negative_pool(corpus: Corpus, fraction: float, seed: int,
                         post_ids: Optional[set[int]] = None) -> set[int]:
    """Evaluation candidates: gold fact-checks of ``post_ids`` plus a seeded
    ``floor(fraction * N)`` sample of the N remaining fact-checks."""
    if not 0 < fraction <= 1:
        raise ValueError("fraction must be in (0, 1]")
    gold = corpus.gold()
    posts = set(gold) if post_ids is None else set(post_ids)
    positives = {f for p in posts for f in gold.get(p, ())}
    negatives = sorted(set(corpus.fact_checks) - positives)
    count = math.floor(fraction * len(negatives) + 1e-9)
    rng = np.random.default_rng(seed)
    picked = rng.choice(len(negatives), size=count, replace=False) if count else []
    return positives | {negatives[i] for i in picked}


# ---------------------------------------------------------------------------
# Training loop
# ---------------------------------------------------------------------------

@dataclass
class EpochRecord:
    epoch: int
    step: int
    loss: float
    lr_scale: float


@dataclass
class TrainResult:
    params: EncoderParams
    vocab: Vocabulary
    log: list[EpochRecord] = field(default_factory=list)
    skipped_pairs: int = 0

    def write_log(self, path: Union[str, Path]) -> None:
        Path(path).write_text(format_log(self.log), encoding="utf-8")


def format_log(records: list[EpochRecord]) -> str:
    return "".join(f"{r.epoch}\t{r.step}\t{r.loss:.10g}\t{r.lr_scale:.6g}\n" for r in records)


@dataclass
class PairData:
    """Tokenized training pairs in corpus mapping order."""

    post_ids: np.ndarray
    fact_check_ids: np.ndarray
    post_tokens: tuple[np.ndarray, np.ndarray]
    fact_tokens: tuple[np.ndarray, np.ndarray]


def training_pairs(corpus: Corpus, view: TextView,
                   fold_of: Optional[np.ndarray] = None,
                   fold: Optional[int] = None) -> tuple[list[MappingPair], list[str], list[str], int]:
    """Mapping pairs usable for training, with their cleaned texts.

    Pairs in the held-out ``fold`` and pairs whose post or fact-check text is
    skippable are dropped. Returns (pairs, post texts, fact texts, n_skipped).
    """
    pairs, post_texts, fact_texts, skipped = [], [], [], 0
    for idx, m in enumerate(corpus.mappings):
        if fold is not None and fold_of is not None and fold_of[idx] == fold:
            continue
        pt = select_text(corpus.posts[m.post_id], view)
        ft = select_text(corpus.fact_checks[m.fact_check_id], view)
        if is_skippable(pt, view.min_tokens, view.min_alnum_ratio) or \
                is_skippable(ft, view.min_tokens, view.min_alnum_ratio):
            skipped += 1
            continue
        pairs.append(m)
        post_texts.append(pt)
        fact_texts.append(ft)
    return pairs, post_texts, fact_texts, skipped


def batch_loss(params: EncoderParams, post_ids: np.ndarray, post_mask: np.ndarray,
               fact_ids: np.ndarray, fact_mask: np.ndarray, temperature: float,
               loss: str = "symmetric", fn_mask: Optional[np.ndarray] = None,
               with_grad: bool = True):
    """Loss of one in-batch contrastive step and, optionally, parameter gradients."""
    Q, q_cache = encoder.forward(post_ids, post_mask, params)
    C, c_cache = encoder.forward(fact_ids, fact_mask, params)
    S = similarity_matrix(Q, C, temperature)
    value, dS = LOSSES[loss](S, fn_mask)
    if not with_grad:
        return value, None
    dQ, dC = similarity_backward(dS, Q, C, temperature)
    grads = encoder.backward(dQ, q_cache, params)
    for name, g in encoder.backward(dC, c_cache, params).items():
        grads[name] += g
    return value, grads


def _trim(ids, mask):
    width = max(1, int(mask.sum(axis=1).max()))
    return ids[:, :width], mask[:, :width]


def train(corpus: Corpus, view: TextView, config: TrainConfig,
          fold: Optional[int] = None, fold_of: Optional[np.ndarray] = None,
          vocab: Optional[Vocabulary] = None,
          params: Optional[EncoderParams] = None) -> TrainResult:
    """Train an encoder on the corpus mappings (minus the held-out fold, if any)."""
    pairs, post_texts, fact_texts, skipped = training_pairs(corpus, view, fold_of, fold)
    if config.epochs and len(pairs) < max(2, config.batch_size):
        raise DataError(f"only {len(pairs)} usable training pairs for batch size "
                        f"{config.batch_size}")
    if skipped:
        log.info("skipped %d pairs with unusable text", skipped)
    if vocab is None:
        # the whole fact-check collection is known up front, so it shares the vocabulary
        collection = [select_text(f, view) for f in corpus.fact_checks.values()]
        vocab = Vocabulary.build(post_texts + collection, config.vocab_min_count,
                                 config.vocab_max_size)
    if params is None:
        params = encoder.init_params(len(vocab), config.embed_dim, config.hidden,
                                     config.pooling, config.seed)
    post_ids, post_mask = encoder.tokenize_batch(post_texts, vocab, config.max_len)
    fact_ids, fact_mask = encoder.tokenize_batch(fact_texts, vocab, config.max_len)
    pid = np.array([m.post_id for m in pairs])
    fid = np.array([m.fact_check_id for m in pairs])
    gold = corpus.gold()

    state = OptimizerState.for_params(params)
    result = TrainResult(params, vocab, skipped_pairs=skipped)
    n = len(pairs)
    step = 0
    for epoch in range(config.epochs):
        order = np.random.default_rng(config.seed + epoch).permutation(n)
        losses = []
        scale = lr_schedule(step, config.warmup_steps)
        for start in range(0, n, config.batch_size):
            idx = order[start:start + config.batch_size]
            if len(idx) < 2:
                continue
            fn_mask = false_negative_mask(pid[idx], fid[idx], gold)
            value, grads = batch_loss(
                params, *_trim(post_ids[idx], post_mask[idx]),
                *_trim(fact_ids[idx], fact_mask[idx]),
                config.temperature, config.loss, fn_mask)
            scale = lr_schedule(step, config.warmup_steps)
            adamw_step(params, clip_gradients(grads, config.clip_value), state, config, scale)
            losses.append(value)
            step += 1
        record = EpochRecord(epoch, step, float(np.mean(losses)) if losses else float("nan"), scale)
        result.log.append(record)
        log.debug("epoch %d step %d loss %.6f", record.epoch, record.step, record.loss)
    return result
