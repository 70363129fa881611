"""Fusion of ranked lists from several model runs (folds or backbones)."""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Union

from .errors import DataError, FormatError
from .index import RankedList


@dataclass
class ModelRun:
    name: str
    lists: dict[int, RankedList] = field(default_factory=dict)


@dataclass(frozen=True)
class FusionConfig:
    method: str = "score_sum"
    rrf_constant: float = 60.0
    k_out: int = 10
    normalize: bool = False  # min-max rescale each list's scores before summing

    def __post_init__(self):
        if self.method not in ("score_sum", "rrf"):
            raise ValueError(f"unknown fusion method {self.method!r}")
        if self.k_out < 1:
            raise ValueError("k_out must be at least 1")
        if not self.rrf_constant > 0:
            raise ValueError("rrf_constant must be positive")


def _contributions(hits: list[tuple[int, float]], config: FusionConfig) -> dict[int, float]:
    if config.method == "rrf":
        return {fid: 1.0 / (config.rrf_constant + rank) for rank, (fid, _) in enumerate(hits, 1)}
    if config.normalize and hits:
        hi, lo = hits[0][1], hits[-1][1]
        span = hi - lo
        return {fid: (s - lo) / span if span > 0 else 1.0 for fid, s in hits}
    return {fid: s for fid, s in hits}


def fuse(runs: list[ModelRun], config: FusionConfig = FusionConfig()) -> dict[int, RankedList]:
    """Combine runs post by post and keep the ``k_out`` best fused candidates.

    ``score_sum`` adds each candidate's score over the runs that retrieved it
    (absent means 0); ``rrf`` adds ``1 / (rrf_constant + rank)``.
    """
    if not runs:
        raise DataError("no runs to fuse")
    posts = set(runs[0].lists)
    for run in runs[1:]:
        if set(run.lists) != posts:
            missing = sorted(posts ^ set(run.lists))
            raise DataError(f"run {run.name!r} does not cover the same posts; "
                            f"mismatched post ids {missing[:10]}")
    out = {}
    for pid in sorted(posts):
        # canonical summation order keeps totals independent of run order
        contributions = sorted(
            tuple(sorted(_contributions(run.lists[pid].hits, config).items()))
            for run in runs)
        totals: dict[int, float] = {}
        for contrib in contributions:
            for fid, value in contrib:
                totals[fid] = totals.get(fid, 0.0) + value
        best = sorted(totals.items(), key=lambda kv: (-kv[1], kv[0]))[:config.k_out]
        out[pid] = RankedList(pid, best)
    return out


def _pointer(*parts) -> str:
    """JSON pointer to the offending value, quoted; the whole document is ``''``."""
    return repr("".join("/" + str(p).replace("~", "~0").replace("/", "~1") for p in parts))


def run_from_json(data, name: str = "run") -> ModelRun:
    if not isinstance(data, dict):
        raise FormatError(f"at {_pointer()}: run file must be a JSON object")
    lists = {}
    for key, hits in data.items():
        try:
            pid = int(key)
        except ValueError:
            raise FormatError(f"at {_pointer(key)}: post id must be a decimal string") from None
        if not isinstance(hits, list):
            raise FormatError(f"at {_pointer(key)}: expected a list of [fact_check_id, score]")
        parsed, seen = [], set()
        for i, hit in enumerate(hits):
            if (not isinstance(hit, list) or len(hit) != 2 or isinstance(hit[0], bool)
                    or not isinstance(hit[0], int)
                    or isinstance(hit[1], bool) or not isinstance(hit[1], (int, float))):
                raise FormatError(f"at {_pointer(key, i)}: expected [integer id, number score]")
            fid, score = hit[0], float(hit[1])
            if not math.isfinite(score):
                raise FormatError(f"at {_pointer(key, i, 1)}: score must be finite")
            if fid in seen:
                raise FormatError(f"at {_pointer(key, i)}: duplicate fact-check id {fid} "
                                  f"in hits of post {pid}")
            if parsed and (score > parsed[-1][1] or (score == parsed[-1][1] and fid < parsed[-1][0])):
                raise FormatError(f"at {_pointer(key, i)}: hits not sorted")
            seen.add(fid)
            parsed.append((fid, score))
        lists[pid] = RankedList(pid, parsed)
    return ModelRun(name, lists)


def run_to_json_text(run: ModelRun) -> str:
    """Run file text; scores carry 17 significant digits so they reload exactly."""
    lines = []
    for pid in sorted(run.lists):
        hits = ", ".join(f"[{fid}, {score:.17g}]" for fid, score in run.lists[pid].hits)
        lines.append(f'  "{pid}": [{hits}]')
    return "{\n" + ",\n".join(lines) + "\n}\n" if lines else "{}\n"


def save_run(run: ModelRun, path: Union[str, Path]) -> None:
    Path(path).write_text(run_to_json_text(run), encoding="utf-8")


def load_run(path: Union[str, Path], name: str | None = None) -> ModelRun:
    path = Path(path)
    try:
        data = json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise FormatError(f"{path}: invalid JSON: {exc}") from None
    try:
        return run_from_json(data, name or path.stem)
    except FormatError as exc:
        raise FormatError(f"{path}: {exc}") from None
