"""Success@K scoring and the prediction file format."""
from __future__ import annotations

import json
import re
import warnings
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Sequence, Union

from .corpus import Corpus, load_mappings
from .errors import DataError, FormatError
from .index import RankedList

_POST_KEY_RE = re.compile(r"Post-(\d+)")


@dataclass
class GoldMapping:
    gold: dict[int, set[int]]
    language: dict[int, str] = field(default_factory=dict)

    def __post_init__(self):
        empty = [p for p, g in self.gold.items() if not g]
        if empty:
            raise DataError(f"posts without gold fact-checks: {sorted(empty)[:10]}")

    @classmethod
    def from_corpus(cls, corpus: Corpus, post_ids=None) -> "GoldMapping":
        gold = corpus.gold()
        if post_ids is not None:
            keep = set(post_ids)
            gold = {p: g for p, g in gold.items() if p in keep}
        return cls(gold, {p: corpus.posts[p].language for p in gold})

    @classmethod
    def from_mapping_file(cls, path: Union[str, Path],
                          languages: Mapping[int, str] | None = None) -> "GoldMapping":
        """Gold sets from a mapping CSV.

        Without ``languages``, a post's language is the first half of its
        ``language_pair`` (``"spa-eng"`` -> ``"spa"``).
        """
        gold: dict[int, set[int]] = {}
        lang: dict[int, str] = {}
        for m in load_mappings(path):
            gold.setdefault(m.post_id, set()).add(m.fact_check_id)
            lang.setdefault(m.post_id, m.language_pair.split("-")[0])
        if languages is not None:
            lang = {p: languages.get(p, lang.get(p, "")) for p in gold}
        return cls(gold, lang)


Predictions = Mapping[int, Union[RankedList, Sequence[int]]]


def _ids(entry) -> list[int]:
    return entry.ids if isinstance(entry, RankedList) else list(entry)


def _hit_flags(predictions: Predictions, gold: GoldMapping, k: int) -> dict[int, bool]:
    if k < 1:
        raise ValueError("k must be at least 1")
    if not gold.gold:
        raise DataError("gold mapping is empty")
    missing = [p for p in gold.gold if p not in predictions]
    if missing:
        warnings.warn(f"{len(missing)} gold posts have no predictions; counted as misses",
                      stacklevel=3)
    return {p: p in predictions and not gold.gold[p].isdisjoint(_ids(predictions[p])[:k])
            for p in gold.gold}


def success_at_k(predictions: Predictions, gold: GoldMapping, k: int = 10) -> float:
    """Fraction of gold posts with at least one gold fact-check in their top ``k``."""
    flags = _hit_flags(predictions, gold, k)
    return sum(flags.values()) / len(flags)


@dataclass
class EvalReport:
    k: int
    s_at_k_avg: float                                 # micro: over posts
    avg_by_language: float                            # macro: over languages
    per_language: dict[str, tuple[float, int]] = field(default_factory=dict)

    @property
    def post_count(self) -> int:
        return sum(n for _, n in self.per_language.values())

    def to_dict(self) -> dict:
        return {
            "k": self.k,
            "s_at_k_avg": self.s_at_k_avg,
            "avg_by_language": self.avg_by_language,
            "post_count": self.post_count,
            "per_language": {lang: {"s_at_k": s, "posts": n}
                             for lang, (s, n) in sorted(self.per_language.items())},
        }

    def format(self) -> str:
        label = f"S@{self.k}"
        rows = [(f"{label} (avg)", f"{self.s_at_k_avg:.6f}", str(self.post_count)),
                (f"{label} (avg_by_language)", f"{self.avg_by_language:.6f}", "")]
        rows += [(f"{label} ({lang or '?'})", f"{s:.6f}", str(n))
                 for lang, (s, n) in sorted(self.per_language.items())]
        head = ("Metric", "Score", "Posts")
        w = [max(len(r[i]) for r in [head, *rows]) for i in range(3)]
        lines = [f"{head[0]:<{w[0]}}  {head[1]:>{w[1]}}  {head[2]:>{w[2]}}"]
        lines.append("-" * len(lines[0]))
        lines += [f"{a:<{w[0]}}  {b:>{w[1]}}  {c:>{w[2]}}" for a, b, c in rows]
        return "\n".join(lines)


def evaluate(predictions: Predictions, gold: GoldMapping, k: int = 10) -> EvalReport:
    flags = _hit_flags(predictions, gold, k)
    groups: dict[str, list[bool]] = {}
    for pid, hit in flags.items():
        groups.setdefault(gold.language.get(pid, ""), []).append(hit)
    per_language = {lang: (sum(h) / len(h), len(h)) for lang, h in groups.items()}
    micro = sum(flags.values()) / len(flags)
    macro = sum(s for s, _ in per_language.values()) / len(per_language)
    return EvalReport(k, micro, macro, per_language)


def write_predictions(predictions: Predictions, k: int, path: Union[str, Path]) -> None:
    """Write ``{"Post-<id>": [fact_check_id, ...]}`` with keys in ascending post id."""
    out = {}
    for pid in sorted(predictions):
        ids = _ids(predictions[pid])
        if len(ids) > k:
            raise DataError(f"post {pid} has {len(ids)} predictions, more than k={k}")
        out[f"Post-{pid}"] = [int(i) for i in ids]
    Path(path).write_text(json.dumps(out) + "\n", encoding="utf-8")


def read_predictions(path: Union[str, Path], k: int | None = None) -> dict[int, list[int]]:
    try:
        data = json.loads(Path(path).read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise FormatError(f"{path}: invalid JSON: {exc}") from None
    if not isinstance(data, dict):
        raise FormatError(f"{path}: predictions must be a JSON object")
    out = {}
    for key, ids in data.items():
        match = _POST_KEY_RE.fullmatch(key)
        if not match:
            raise FormatError(f"{path}: key {key!r} is not of the form 'Post-<id>'")
        if not isinstance(ids, list) or not all(
                isinstance(i, int) and not isinstance(i, bool) for i in ids):
            raise FormatError(f"{path}: value of {key!r} must be an array of integers")
        if k is not None and len(ids) > k:
            raise FormatError(f"{path}: {key!r} lists {len(ids)} ids, more than {k}")
        out[int(match.group(1))] = ids
    return out
