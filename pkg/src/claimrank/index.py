"""Exact top-k cosine search over unit-norm fact-check embeddings."""
from __future__ import annotations

import struct
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Union

import numpy as np

from .encoder import NORM_FLOOR
from .errors import DataError, FormatError

INDEX_MAGIC = b"BIDX"
INDEX_VERSION = 1
_HEADER = struct.Struct("<4sIIQ")


@dataclass
class RankedList:
    """Top hits for one post, best first; ties are ordered by ascending id."""

    post_id: int
    hits: list[tuple[int, float]] = field(default_factory=list)

    @property
    def ids(self) -> list[int]:
        return [fid for fid, _ in self.hits]

    def truncated(self, k: int) -> "RankedList":
        return RankedList(self.post_id, list(self.hits[:k]))


@dataclass
class VectorIndex:
    ids: np.ndarray     # (N,) uint64
    matrix: np.ndarray  # (N, D) float64, unit rows

    @property
    def dim(self) -> int:
        return self.matrix.shape[1]

    def __len__(self) -> int:
        return len(self.ids)


def build_index(entries: Iterable[tuple[int, np.ndarray]], dim: int | None = None) -> VectorIndex:
    """Index ``(fact_check_id, embedding)`` pairs; rows are L2-normalized on the way in."""
    ids, rows, seen = [], [], set()
    for fid, vec in entries:
        fid = int(fid)
        if fid < 0:
            raise DataError(f"negative fact-check id {fid}")
        if fid in seen:
            raise DataError(f"duplicate fact-check id {fid} in index")
        vec = np.asarray(vec, dtype=np.float64).reshape(-1)
        if dim is None:
            dim = vec.shape[0]
        elif vec.shape[0] != dim:
            raise DataError(f"fact-check {fid}: dimension {vec.shape[0]}, expected {dim}")
        seen.add(fid)
        ids.append(fid)
        rows.append(vec)
    matrix = np.array(rows, dtype=np.float64).reshape(len(rows), dim or 0)
    norms = np.linalg.norm(matrix, axis=1)
    if np.any(norms < NORM_FLOOR):
        bad = [ids[i] for i in np.flatnonzero(norms < NORM_FLOOR)]
        raise DataError(f"zero embedding for fact-check ids {bad[:10]}")
    matrix /= norms[:, None]
    return VectorIndex(np.array(ids, dtype=np.uint64), matrix)


def _select_top(scores: np.ndarray, ids: np.ndarray, k: int) -> np.ndarray:
    n = scores.shape[0]
    if k >= n:
        cand = np.arange(n)
    else:
        # everything tied with the k-th best must compete on id
        kth = np.partition(scores, n - k)[n - k]
        cand = np.flatnonzero(scores >= kth)
    order = np.lexsort((ids[cand], -scores[cand]))
    return cand[order[:k]]


def search_topk(index: VectorIndex, query: np.ndarray, k: int,
                post_id: int = -1) -> RankedList:
    """Exact cosine top-k by full scan."""
    if k < 1:
        raise ValueError("k must be at least 1")
    if len(index) == 0:
        return RankedList(post_id)
    query = np.asarray(query, dtype=np.float64).reshape(-1)
    if query.shape[0] != index.dim:
        raise DataError(f"query dimension {query.shape[0]} does not match index dimension {index.dim}")
    query = query / max(float(np.linalg.norm(query)), NORM_FLOOR)
    scores = index.matrix @ query
    top = _select_top(scores, index.ids, k)
    return RankedList(post_id, [(int(index.ids[i]), float(scores[i])) for i in top])


def search_many(index: VectorIndex, post_ids: list[int], queries: np.ndarray, k: int,
                threads: int = 1) -> dict[int, RankedList]:
    """Search every query row; ``threads`` only changes wall time, never results."""
    def one(i):
        return search_topk(index, queries[i], k, post_id=int(post_ids[i]))

    if threads > 1:
        with ThreadPoolExecutor(threads) as pool:
            lists = list(pool.map(one, range(len(post_ids))))
    else:
        lists = [one(i) for i in range(len(post_ids))]
    return {rl.post_id: rl for rl in lists}


def save_index(index: VectorIndex, path: Union[str, Path]) -> None:
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(INDEX_MAGIC, INDEX_VERSION, index.dim, len(index)))
        fh.write(np.ascontiguousarray(index.ids, dtype="<u8").tobytes())
        fh.write(np.ascontiguousarray(index.matrix, dtype="<f8").tobytes())


def load_index(path: Union[str, Path]) -> VectorIndex:
    data = Path(path).read_bytes()
    if len(data) < _HEADER.size:
        raise FormatError(f"{path}: truncated header at offset {len(data)}: "
                          f"expected {_HEADER.size} bytes, got {len(data)}")
    magic, version, dim, n = _HEADER.unpack_from(data)
    if magic != INDEX_MAGIC:
        raise FormatError(f"{path}: bad magic {magic!r} at offset 0")
    if version != INDEX_VERSION:
        raise FormatError(f"{path}: unsupported index version {version} at offset 4")
    expected = _HEADER.size + 8 * n + 8 * n * dim
    if len(data) != expected:
        raise FormatError(f"{path}: payload size mismatch at offset {_HEADER.size}: "
                          f"expected {expected} bytes, got {len(data)}")
    ids = np.frombuffer(data, dtype="<u8", count=n, offset=_HEADER.size).astype(np.uint64)
    matrix = np.frombuffer(data, dtype="<f8", count=n * dim,
                           offset=_HEADER.size + 8 * n).astype(np.float64).reshape(n, dim)
    if len(np.unique(ids)) != n:
        raise FormatError(f"{path}: duplicate ids in index")
    return VectorIndex(ids, matrix)
