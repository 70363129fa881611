"""Sentence encoder: token lookup backbone, mean or BiLSTM-attention pooling.

All computation is float64 numpy with hand-written backward passes. Batches
are ``(B, n)`` integer id arrays with a matching ``{0, 1}`` float mask.

Reductions over the sequence axis are accumulated position by position so
that appending padding never changes a result, down to the last bit.
"""
from __future__ import annotations

import re
import struct
from collections import Counter
from dataclasses import dataclass, fields
from pathlib import Path
from typing import Iterable, Mapping, NamedTuple, Optional, Union

import numpy as np

from .corpus import IMG_TOKEN, URL_TOKEN
from .errors import FormatError

PAD, UNK = "<PAD>", "<UNK>"
PAD_ID, UNK_ID = 0, 1

MASK_EPS = 1e-9
NORM_FLOOR = 1e-12
MASKED_LOGIT = -1e9

POOLING_MODES = ("mean", "attention")

CHECKPOINT_MAGIC = b"CRNK"
CHECKPOINT_VERSION = 1


# ---------------------------------------------------------------------------
# Vocabulary and tokenization
# ---------------------------------------------------------------------------

class Vocabulary:
    """Dense token -> id map with ``<PAD>`` at 0 and ``<UNK>`` at 1."""

    def __init__(self, token_to_id: Mapping[str, int]):
        mapping = dict(token_to_id)
        mapping.setdefault(PAD, PAD_ID)
        mapping.setdefault(UNK, UNK_ID)
        if mapping[PAD] != PAD_ID or mapping[UNK] != UNK_ID:
            raise ValueError("<PAD> and <UNK> must have ids 0 and 1")
        ids = sorted(mapping.values())
        if ids != list(range(len(ids))):
            raise ValueError("vocabulary ids must be dense and unique")
        self._ids = mapping
        self._tokens = [""] * len(mapping)
        for tok, i in mapping.items():
            self._tokens[i] = tok

    @classmethod
    def build(cls, texts: Iterable[str], min_count: int = 1,
              max_size: Optional[int] = None) -> "Vocabulary":
        """Frequency-ordered vocabulary; ties broken alphabetically."""
        counts = Counter(tok for text in texts for tok in split_tokens(text))
        specials = [PAD, UNK, URL_TOKEN, IMG_TOKEN]
        ranked = sorted((t for t, c in counts.items() if c >= min_count and t not in specials),
                        key=lambda t: (-counts[t], t))
        if max_size is not None:
            ranked = ranked[:max(0, max_size - len(specials))]
        return cls({tok: i for i, tok in enumerate(specials + ranked)})

    def __len__(self) -> int:
        return len(self._tokens)

    def __contains__(self, token: str) -> bool:
        return token in self._ids

    def __eq__(self, other) -> bool:
        return isinstance(other, Vocabulary) and self._tokens == other._tokens

    def id_of(self, token: str) -> int:
        return self._ids.get(token, UNK_ID)

    def token(self, idx: int) -> str:
        return self._tokens[idx]

    @property
    def tokens(self) -> list[str]:
        return list(self._tokens)

    def save(self, path: Union[str, Path]) -> None:
        Path(path).write_text("".join(t + "\n" for t in self._tokens), encoding="utf-8")

    @classmethod
    def load(cls, path: Union[str, Path]) -> "Vocabulary":
        lines = Path(path).read_text(encoding="utf-8").split("\n")
        if lines and lines[-1] == "":
            lines.pop()
        if len(set(lines)) != len(lines):
            raise FormatError(f"{path}: duplicate tokens in vocabulary file")
        return cls({tok: i for i, tok in enumerate(lines)})


_SPLIT_RE = re.compile(rf"{re.escape(URL_TOKEN)}|{re.escape(IMG_TOKEN)}|\w+")


def split_tokens(text: str) -> list[str]:
    """Lowercased word tokens; punctuation and whitespace separate tokens."""
    return [t if t in (URL_TOKEN, IMG_TOKEN) else t.lower() for t in _SPLIT_RE.findall(text)]


class TokenSequence(NamedTuple):
    ids: np.ndarray   # (n,) int64
    mask: np.ndarray  # (n,) float64 in {0, 1}


def tokenize(text: str, vocab: Vocabulary, max_len: int) -> TokenSequence:
    ids = np.full(max_len, PAD_ID, dtype=np.int64)
    mask = np.zeros(max_len, dtype=np.float64)
    toks = split_tokens(text)[:max_len]
    ids[:len(toks)] = [vocab.id_of(t) for t in toks]
    mask[:len(toks)] = 1.0
    return TokenSequence(ids, mask)


def tokenize_batch(texts: Iterable[str], vocab: Vocabulary,
                   max_len: int) -> tuple[np.ndarray, np.ndarray]:
    """Stack tokenized texts, trimming padding columns no sequence uses."""
    seqs = [tokenize(t, vocab, max_len) for t in texts]
    if not seqs:
        return np.zeros((0, 1), dtype=np.int64), np.zeros((0, 1))
    ids = np.stack([s.ids for s in seqs])
    mask = np.stack([s.mask for s in seqs])
    width = max(1, int(mask.sum(axis=1).max()))
    return ids[:, :width], mask[:, :width]


# ---------------------------------------------------------------------------
# Parameters
# ---------------------------------------------------------------------------

@dataclass
class EncoderParams:
    embedding: np.ndarray      # (V, d)
    fwd_w_ih: np.ndarray       # (4h, d)  gate order i, f, g, o
    fwd_w_hh: np.ndarray       # (4h, h)
    fwd_b: np.ndarray          # (4h,)
    bwd_w_ih: np.ndarray
    bwd_w_hh: np.ndarray
    bwd_b: np.ndarray
    attn_w: np.ndarray         # (2h,)
    attn_b: np.ndarray         # (1,)
    pooling: str = "mean"

    def __post_init__(self):
        if self.pooling not in POOLING_MODES:
            raise ValueError(f"unknown pooling mode {self.pooling!r}")
        v, d = self.embedding.shape
        h = self.fwd_w_hh.shape[1]
        expected = {
            "fwd_w_ih": (4 * h, d), "fwd_w_hh": (4 * h, h), "fwd_b": (4 * h,),
            "bwd_w_ih": (4 * h, d), "bwd_w_hh": (4 * h, h), "bwd_b": (4 * h,),
            "attn_w": (2 * h,), "attn_b": (1,),
        }
        for name, shape in expected.items():
            if getattr(self, name).shape != shape:
                raise ValueError(f"{name} has shape {getattr(self, name).shape}, expected {shape}")

    @property
    def vocab_size(self) -> int:
        return self.embedding.shape[0]

    @property
    def dim(self) -> int:
        return self.embedding.shape[1]

    @property
    def hidden(self) -> int:
        return self.fwd_w_hh.shape[1]

    @property
    def output_dim(self) -> int:
        return self.dim if self.pooling == "mean" else 2 * self.hidden

    def tensors(self) -> dict[str, np.ndarray]:
        return {name: getattr(self, name) for name in TENSOR_NAMES}

    def copy(self) -> "EncoderParams":
        return EncoderParams(**{k: v.copy() for k, v in self.tensors().items()},
                             pooling=self.pooling)

    def zeros_like(self) -> dict[str, np.ndarray]:
        return {k: np.zeros_like(v) for k, v in self.tensors().items()}


TENSOR_NAMES = tuple(f.name for f in fields(EncoderParams) if f.name != "pooling")
BACKBONE_TENSORS = ("embedding",)
CUSTOM_TENSORS = tuple(n for n in TENSOR_NAMES if n not in BACKBONE_TENSORS)


def init_params(vocab_size: int, dim: int, hidden: int, pooling: str = "mean",
                seed: int = 0) -> EncoderParams:
    """Random initialization.

    Embeddings ~ U(-0.05, 0.05); LSTM weights ~ U(-1/sqrt(h), 1/sqrt(h)) with
    forget-gate bias 1; the attention projection starts at zero, which makes
    attention pooling begin as a masked mean of the BiLSTM states.
    """
    rng = np.random.default_rng(seed)
    bound = 1.0 / np.sqrt(hidden)

    def lstm():
        w_ih = rng.uniform(-bound, bound, (4 * hidden, dim))
        w_hh = rng.uniform(-bound, bound, (4 * hidden, hidden))
        b = rng.uniform(-bound, bound, 4 * hidden)
        b[hidden:2 * hidden] = 1.0
        return w_ih, w_hh, b

    emb = rng.uniform(-0.05, 0.05, (vocab_size, dim))
    fw, bw = lstm(), lstm()
    return EncoderParams(emb, *fw, *bw, np.zeros(2 * hidden), np.zeros(1), pooling=pooling)


# ---------------------------------------------------------------------------
# Forward pieces (single sequence)
# ---------------------------------------------------------------------------

def encode_tokens(seq: TokenSequence, params: EncoderParams) -> np.ndarray:
    """Hidden states ``H`` (n, d): embedding rows for real tokens, zeros for padding."""
    return _lookup(seq.ids[None], seq.mask[None], params.embedding)[0]


def mean_pool(H: np.ndarray, mask: np.ndarray, eps: float = MASK_EPS) -> np.ndarray:
    return _mean_pool(H[None], np.asarray(mask, dtype=np.float64)[None], eps)[0]


def bilstm_forward(H: np.ndarray, params: EncoderParams,
                   mask: Optional[np.ndarray] = None) -> np.ndarray:
    """BiLSTM states ``L`` (n, 2h); ``mask`` defaults to all positions real."""
    if mask is None:
        mask = np.ones(H.shape[0])
    L, _ = _bilstm(H[None], np.asarray(mask, dtype=np.float64)[None], params)
    return L[0]


def attention_pool(L: np.ndarray, mask: np.ndarray, params: EncoderParams) -> np.ndarray:
    mask = np.asarray(mask, dtype=np.float64)
    S, _ = _attention_pool(L[None], mask[None], params.attn_w, params.attn_b)
    return S[0]


class EmbeddingVector(NamedTuple):
    vector: np.ndarray
    unit_norm: bool


def embed_sentence(text: str, vocab: Vocabulary, params: EncoderParams,
                   max_len: int) -> EmbeddingVector:
    """Unit-norm embedding of one (already cleaned) text.

    Empty text in mean mode gives the zero vector with ``unit_norm=False``;
    in attention mode it raises ``ValueError``.
    """
    seq = tokenize(text, vocab, max_len)
    emb, cache = forward(seq.ids[None], seq.mask[None], params)
    return EmbeddingVector(emb[0], not cache.degenerate[0])


def embed_texts(texts: list[str], vocab: Vocabulary, params: EncoderParams,
                max_len: int, batch_size: int = 256) -> np.ndarray:
    """Stack of unit-norm embeddings (N, D).

    Texts without any token give zero rows in both pooling modes.
    """
    out = np.zeros((len(texts), params.output_dim))
    for start in range(0, len(texts), batch_size):
        ids, mask = tokenize_batch(texts[start:start + batch_size], vocab, max_len)
        rows = np.flatnonzero(mask.sum(axis=1) > 0)
        if rows.size:
            out[start + rows], _ = forward(ids[rows], mask[rows], params)
    return out


# ---------------------------------------------------------------------------
# Batched forward / backward
# ---------------------------------------------------------------------------

def _sigmoid(x):
    return 0.5 * (1.0 + np.tanh(0.5 * x))


def _lookup(ids, mask, table):
    if ids.size and (ids.min() < 0 or ids.max() >= table.shape[0]):
        raise ValueError(f"token id out of range [0, {table.shape[0]})")
    return table[ids] * mask[..., None]


def _seq_sum(x, weights):
    """sum_t weights[:, t] * x[:, t] accumulated in position order."""
    acc = np.zeros((x.shape[0], x.shape[2]))
    for t in range(x.shape[1]):
        acc += weights[:, t, None] * x[:, t]
    return acc


def _mean_pool(H, mask, eps=MASK_EPS):
    count = np.zeros(mask.shape[0])
    for t in range(mask.shape[1]):
        count += mask[:, t]
    return _seq_sum(H, mask) / (count + eps)[:, None]


def _lstm_direction(X, M, w_ih, w_hh, b, reverse):
    B, n, _ = X.shape
    h = w_hh.shape[1]
    h_prev = np.zeros((B, h))
    c_prev = np.zeros((B, h))
    out = np.zeros((B, n, h))
    steps = []
    order = range(n - 1, -1, -1) if reverse else range(n)
    for t in order:
        m = M[:, t, None]
        a = X[:, t] @ w_ih.T + h_prev @ w_hh.T + b
        i = _sigmoid(a[:, :h])
        f = _sigmoid(a[:, h:2 * h])
        g = np.tanh(a[:, 2 * h:3 * h])
        o = _sigmoid(a[:, 3 * h:])
        c_new = f * c_prev + i * g
        tc = np.tanh(c_new)
        h_new = o * tc
        steps.append((t, m, h_prev, c_prev, i, f, g, o, tc))
        # padded positions pass state through untouched and emit zeros
        c_prev = np.where(m > 0, c_new, c_prev)
        h_prev = np.where(m > 0, h_new, h_prev)
        out[:, t] = np.where(m > 0, h_new, 0.0)
    return out, steps


def _lstm_direction_backward(d_out, X, steps, w_ih, w_hh):
    B, n, d = X.shape
    h = w_hh.shape[1]
    dX = np.zeros_like(X)
    dw_ih = np.zeros_like(w_ih)
    dw_hh = np.zeros_like(w_hh)
    db = np.zeros(4 * h)
    dh_next = np.zeros((B, h))
    dc_next = np.zeros((B, h))
    for t, m, h_prev, c_prev, i, f, g, o, tc in reversed(steps):
        dh_new = m * (dh_next + d_out[:, t])
        dc_new = m * dc_next + dh_new * o * (1.0 - tc * tc)
        da = np.concatenate([
            dc_new * g * i * (1.0 - i),
            dc_new * c_prev * f * (1.0 - f),
            dc_new * i * (1.0 - g * g),
            dh_new * tc * o * (1.0 - o),
        ], axis=1)
        dw_ih += da.T @ X[:, t]
        dw_hh += da.T @ h_prev
        db += da.sum(axis=0)
        dX[:, t] = da @ w_ih
        dh_next = da @ w_hh + (1.0 - m) * dh_next
        dc_next = dc_new * f + (1.0 - m) * dc_next
    return dX, dw_ih, dw_hh, db


def _bilstm(H, mask, p: EncoderParams):
    fwd, fsteps = _lstm_direction(H, mask, p.fwd_w_ih, p.fwd_w_hh, p.fwd_b, reverse=False)
    bwd, bsteps = _lstm_direction(H, mask, p.bwd_w_ih, p.bwd_w_hh, p.bwd_b, reverse=True)
    return np.concatenate([fwd, bwd], axis=2), (fsteps, bsteps)


def _attention_pool(L, mask, w, b):
    if np.any(mask.sum(axis=1) == 0):
        raise ValueError("empty sequence for attention pooling")
    z = (L * w).sum(axis=2) + b[0]
    z = np.where(mask > 0, z, MASKED_LOGIT)
    e = np.exp(z - z.max(axis=1, keepdims=True))
    total = np.zeros(L.shape[0])
    for t in range(L.shape[1]):
        total += e[:, t]
    alpha = e / total[:, None]
    return _seq_sum(L, alpha), alpha


@dataclass
class ForwardCache:
    ids: np.ndarray
    mask: np.ndarray
    H: np.ndarray
    pooled: np.ndarray
    norms: np.ndarray
    out: np.ndarray
    degenerate: np.ndarray
    L: Optional[np.ndarray] = None
    alpha: Optional[np.ndarray] = None
    lstm_steps: Optional[tuple] = None


def forward(ids: np.ndarray, mask: np.ndarray,
            params: EncoderParams) -> tuple[np.ndarray, ForwardCache]:
    """Encode a batch to L2-normalized embeddings ``(B, D)`` plus a backward cache."""
    mask = np.asarray(mask, dtype=np.float64)
    H = _lookup(ids, mask, params.embedding)
    L = alpha = steps = None
    if params.pooling == "mean":
        pooled = _mean_pool(H, mask)
    else:
        L, steps = _bilstm(H, mask, params)
        pooled, alpha = _attention_pool(L, mask, params.attn_w, params.attn_b)
    norms = np.sqrt((pooled * pooled).sum(axis=1))
    degenerate = norms < NORM_FLOOR
    out = pooled / np.maximum(norms, NORM_FLOOR)[:, None]
    return out, ForwardCache(ids, mask, H, pooled, norms, out, degenerate, L, alpha, steps)


def backward(d_out: np.ndarray, cache: ForwardCache,
             params: EncoderParams) -> dict[str, np.ndarray]:
    """Parameter gradients given the gradient of a scalar loss w.r.t. ``forward``'s output."""
    if d_out.shape != cache.out.shape:
        raise ValueError(f"gradient shape {d_out.shape} does not match output {cache.out.shape}")
    grads = params.zeros_like()
    u, norms = cache.out, cache.norms
    safe = np.maximum(norms, NORM_FLOOR)[:, None]
    proj = np.where(cache.degenerate[:, None], 0.0, u * (u * d_out).sum(axis=1, keepdims=True))
    d_pooled = (d_out - proj) / safe

    mask = cache.mask
    if params.pooling == "mean":
        count = mask.sum(axis=1) + MASK_EPS
        dH = mask[..., None] * (d_pooled / count[:, None])[:, None, :]
    else:
        L, alpha = cache.L, cache.alpha
        dL = alpha[..., None] * d_pooled[:, None, :]
        d_alpha = np.einsum("btk,bk->bt", L, d_pooled)
        dz = alpha * (d_alpha - (alpha * d_alpha).sum(axis=1, keepdims=True))
        dz = dz * mask
        grads["attn_w"] = np.einsum("bt,btk->k", dz, L)
        grads["attn_b"] = np.array([dz.sum()])
        dL += dz[..., None] * params.attn_w
        h = params.hidden
        fsteps, bsteps = cache.lstm_steps
        dH_f, grads["fwd_w_ih"], grads["fwd_w_hh"], grads["fwd_b"] = _lstm_direction_backward(
            dL[:, :, :h], cache.H, fsteps, params.fwd_w_ih, params.fwd_w_hh)
        dH_b, grads["bwd_w_ih"], grads["bwd_w_hh"], grads["bwd_b"] = _lstm_direction_backward(
            dL[:, :, h:], cache.H, bsteps, params.bwd_w_ih, params.bwd_w_hh)
        dH = dH_f + dH_b

    dH = dH * mask[..., None]
    np.add.at(grads["embedding"], cache.ids.reshape(-1), dH.reshape(-1, dH.shape[2]))
    return grads


# ---------------------------------------------------------------------------
# Checkpoint file
# ---------------------------------------------------------------------------

_HEADER = struct.Struct("<4sIQIII")


def save_checkpoint(params: EncoderParams, path: Union[str, Path]) -> None:
    """Write ``CRNK`` header, dims and every tensor as little-endian float64."""
    header = _HEADER.pack(CHECKPOINT_MAGIC, CHECKPOINT_VERSION, params.vocab_size,
                          params.dim, params.hidden, POOLING_MODES.index(params.pooling))
    with open(path, "wb") as fh:
        fh.write(header)
        for name in TENSOR_NAMES:
            fh.write(np.ascontiguousarray(getattr(params, name), dtype="<f8").tobytes())


def load_checkpoint(path: Union[str, Path]) -> EncoderParams:
    data = Path(path).read_bytes()
    if len(data) < _HEADER.size:
        raise FormatError(f"{path}: truncated header at offset {len(data)}: "
                          f"expected {_HEADER.size} bytes, got {len(data)}")
    magic, version, vocab_size, dim, hidden, mode = _HEADER.unpack_from(data)
    if magic != CHECKPOINT_MAGIC:
        raise FormatError(f"{path}: bad magic {magic!r} at offset 0")
    if version != CHECKPOINT_VERSION:
        raise FormatError(f"{path}: unsupported checkpoint version {version} at offset 4")
    if mode >= len(POOLING_MODES):
        raise FormatError(f"{path}: unknown pooling code {mode} at offset 24")
    h4 = 4 * hidden
    shapes = {
        "embedding": (vocab_size, dim),
        "fwd_w_ih": (h4, dim), "fwd_w_hh": (h4, hidden), "fwd_b": (h4,),
        "bwd_w_ih": (h4, dim), "bwd_w_hh": (h4, hidden), "bwd_b": (h4,),
        "attn_w": (2 * hidden,), "attn_b": (1,),
    }
    expected = _HEADER.size + 8 * sum(int(np.prod(s)) for s in shapes.values())
    if len(data) != expected:
        raise FormatError(f"{path}: payload size mismatch at offset {_HEADER.size}: "
                          f"expected {expected} bytes, got {len(data)}")
    offset = _HEADER.size
    tensors = {}
    for name in TENSOR_NAMES:
        count = int(np.prod(shapes[name]))
        arr = np.frombuffer(data, dtype="<f8", count=count, offset=offset)
        tensors[name] = arr.astype(np.float64).reshape(shapes[name])
        offset += 8 * count
    return EncoderParams(**tensors, pooling=POOLING_MODES[mode])
