"""Dataset ingestion and text cleaning.

A corpus directory holds three CSV files::

    fact_checks.csv               id,claim,title,url,language,claim_en
    posts.csv                     id,text,ocr_text,verdict,language,text_en
    fact_check_post_mapping.csv   post_id,fact_check_id,language_pair

Files are UTF-8, comma separated, with double-quote quoting.
"""
from __future__ import annotations

import csv
import re
from collections import Counter
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Union

from .errors import DataError

FACT_CHECKS_FILE = "fact_checks.csv"
POSTS_FILE = "posts.csv"
MAPPING_FILE = "fact_check_post_mapping.csv"

FACT_CHECK_COLUMNS = ("id", "claim", "title", "url", "language", "claim_en")
POST_COLUMNS = ("id", "text", "ocr_text", "verdict", "language", "text_en")
MAPPING_COLUMNS = ("post_id", "fact_check_id", "language_pair")

URL_TOKEN = "<URL>"
IMG_TOKEN = "<IMG>"


@dataclass(frozen=True)
class FactCheck:
    id: int
    claim: str
    title: str = ""
    url: str = ""
    language: str = ""
    claim_en: str = ""


@dataclass(frozen=True)
class Post:
    id: int
    text: str
    ocr_text: str = ""
    verdict: str = ""
    language: str = ""
    text_en: str = ""


@dataclass(frozen=True)
class MappingPair:
    post_id: int
    fact_check_id: int
    language_pair: str = ""


@dataclass(frozen=True)
class Corpus:
    posts: dict[int, Post]
    fact_checks: dict[int, FactCheck]
    mappings: tuple[MappingPair, ...]

    def gold(self) -> dict[int, set[int]]:
        """Post id -> set of gold fact-check ids."""
        out: dict[int, set[int]] = {}
        for m in self.mappings:
            out.setdefault(m.post_id, set()).add(m.fact_check_id)
        return out

    def language_counts(self) -> dict[str, tuple[int, int]]:
        """Language -> (post count, fact-check count)."""
        posts = Counter(p.language for p in self.posts.values())
        facts = Counter(f.language for f in self.fact_checks.values())
        return {lang: (posts.get(lang, 0), facts.get(lang, 0))
                for lang in sorted(set(posts) | set(facts))}


@dataclass(frozen=True)
class TextView:
    """Which text fields feed the encoder.

    ``mode="source"`` uses the original-language fields, ``mode="english"``
    the translation columns. Posts concatenate text then OCR text; fact-checks
    concatenate claim then title (title only when ``include_title``).
    """

    mode: str = "source"
    include_title: bool = True
    min_tokens: int = 3
    min_alnum_ratio: float = 0.4

    def __post_init__(self):
        if self.mode not in ("source", "english"):
            raise ValueError(f"unknown text view mode {self.mode!r}")


# ---------------------------------------------------------------------------
# Cleaning
# ---------------------------------------------------------------------------

_PUNCT_MAP = str.maketrans({
    "\u2018": "'", "\u2019": "'", "\u201a": "'", "\u201b": "'",
    "\u201c": '"', "\u201d": '"', "\u201e": '"', "\u201f": '"',
    "\u00ab": '"', "\u00bb": '"',
    "\u2013": "-", "\u2014": "-", "\u2015": "-", "\u2212": "-",
    "\u2026": "...",
})

_EMOJI_RE = re.compile(
    "["
    "\U0001F1E6-\U0001F1FF"  # regional indicators (flags)
    "\U0001F300-\U0001F5FF"  # misc symbols & pictographs
    "\U0001F600-\U0001F64F"  # emoticons
    "\U0001F680-\U0001F6FF"  # transport & map
    "\U0001F900-\U0001F9FF"  # supplemental symbols & pictographs
    "\U0001FA70-\U0001FAFF"
    "\u2600-\u27BF"  # misc symbols, dingbats
    "\uFE00-\uFE0F"  # variation selectors
    "\u200D"  # zero-width joiner
    "]+"
)
_IMG_RE = re.compile(r"(?:https?://)?(?:www\.)?pic\.twitter\.com/\S*", re.IGNORECASE)
URL_RE = re.compile(r"(?:https?://|www\.)\S+", re.IGNORECASE)
_REPEAT_PUNCT_RE = re.compile(r"([!?])\1+")
_SPACE_RE = re.compile(r"\s+")
_TOKEN_RE = re.compile(r"\S+")


def preprocess(raw: str) -> str:
    """Clean one social-media text.

    Image links become ``<IMG>``, other URLs ``<URL>``, emoji are dropped,
    typographic punctuation is mapped to ASCII and whitespace is collapsed.
    The function is idempotent.
    """
    if not raw:
        return ""
    text = raw.translate(_PUNCT_MAP)
    text = _EMOJI_RE.sub(" ", text)
    text = _IMG_RE.sub(f" {IMG_TOKEN} ", text)
    text = URL_RE.sub(f" {URL_TOKEN} ", text)
    text = _REPEAT_PUNCT_RE.sub(r"\1", text)
    return _SPACE_RE.sub(" ", text).strip(" ")


def is_skippable(text: str, min_tokens: int = 3, min_alnum_ratio: float = 0.4) -> bool:
    """True when cleaned text is too short or mostly symbols to be worth encoding."""
    tokens = [t for t in _TOKEN_RE.findall(text) if any(c.isalnum() for c in t)]
    if len(tokens) < min_tokens:
        return True
    chars = [c for c in text if not c.isspace()]
    alnum = sum(c.isalnum() for c in chars)
    return alnum < min_alnum_ratio * len(chars)


def select_text(item: Union[Post, FactCheck], view: TextView) -> str:
    """Cleaned encoder input for a post or fact-check under ``view``.

    The result may be empty or otherwise skippable; check with
    :func:`is_skippable` before encoding.
    """
    english = view.mode == "english"
    if isinstance(item, Post):
        main = preprocess(item.text_en if english else item.text)
        parts = [main]
        if not english and item.ocr_text:
            ocr = preprocess(item.ocr_text)
            # noisy OCR is dropped on its own, independently of the post text
            if not is_skippable(ocr, view.min_tokens, view.min_alnum_ratio):
                parts.append(ocr)
    elif isinstance(item, FactCheck):
        parts = [preprocess(item.claim_en if english else item.claim)]
        if view.include_title and not english:
            parts.append(preprocess(item.title))
    else:
        raise TypeError(f"cannot select text from {type(item).__name__}")
    return " ".join(p for p in parts if p)


def skippable(item: Union[Post, FactCheck], view: TextView) -> bool:
    return is_skippable(select_text(item, view), view.min_tokens, view.min_alnum_ratio)


# ---------------------------------------------------------------------------
# CSV I/O
# ---------------------------------------------------------------------------

def _read_rows(path: Path, columns: tuple[str, ...]) -> Iterable[tuple[int, dict[str, str]]]:
    if not path.is_file():
        raise DataError(f"missing corpus file: {path.name}")
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise DataError(f"{path.name}: empty file, expected header") from None
        missing = [c for c in columns if c not in header]
        if missing:
            raise DataError(f"{path.name}: header lacks columns {missing}")
        pos = {c: header.index(c) for c in columns}
        for row in reader:
            line = reader.line_num
            if not row:
                continue
            if len(row) != len(header):
                raise DataError(
                    f"{path.name}:{line}: expected {len(header)} fields, got {len(row)}")
            yield line, {c: row[i] for c, i in pos.items()}


def _parse_id(value: str, path: Path, line: int, column: str) -> int:
    try:
        out = int(value)
    except ValueError:
        raise DataError(f"{path.name}:{line}: {column} {value!r} is not an integer") from None
    if out < 0:
        raise DataError(f"{path.name}:{line}: {column} {out} is negative")
    return out


def load_fact_checks(path: Union[str, Path]) -> dict[int, FactCheck]:
    path = Path(path)
    out: dict[int, FactCheck] = {}
    for line, row in _read_rows(path, FACT_CHECK_COLUMNS):
        fid = _parse_id(row["id"], path, line, "id")
        if fid in out:
            raise DataError(f"{path.name}:{line}: duplicate fact-check id {fid}")
        if not row["claim"].strip():
            raise DataError(f"{path.name}:{line}: fact-check {fid} has an empty claim")
        out[fid] = FactCheck(fid, row["claim"], row["title"], row["url"],
                             row["language"], row["claim_en"])
    return out


def load_posts(path: Union[str, Path]) -> dict[int, Post]:
    path = Path(path)
    out: dict[int, Post] = {}
    for line, row in _read_rows(path, POST_COLUMNS):
        pid = _parse_id(row["id"], path, line, "id")
        if pid in out:
            raise DataError(f"{path.name}:{line}: duplicate post id {pid}")
        if not row["text"].strip() and not row["ocr_text"].strip():
            raise DataError(f"{path.name}:{line}: post {pid} has neither text nor ocr_text")
        out[pid] = Post(pid, row["text"], row["ocr_text"], row["verdict"],
                        row["language"], row["text_en"])
    return out


def load_mappings(path: Union[str, Path]) -> list[MappingPair]:
    path = Path(path)
    seen: set[tuple[int, int]] = set()
    out = []
    for line, row in _read_rows(path, MAPPING_COLUMNS):
        pair = MappingPair(_parse_id(row["post_id"], path, line, "post_id"),
                           _parse_id(row["fact_check_id"], path, line, "fact_check_id"),
                           row["language_pair"])
        key = (pair.post_id, pair.fact_check_id)
        if key in seen:
            raise DataError(f"{path.name}:{line}: duplicate mapping {key}")
        seen.add(key)
        out.append(pair)
    return out


def load_corpus(directory: Union[str, Path]) -> Corpus:
    """Load and cross-check the three corpus files in ``directory``."""
    directory = Path(directory)
    fact_checks = load_fact_checks(directory / FACT_CHECKS_FILE)
    posts = load_posts(directory / POSTS_FILE)
    mappings = load_mappings(directory / MAPPING_FILE)
    for m in mappings:
        if m.post_id not in posts:
            raise DataError(f"{MAPPING_FILE}: post_id {m.post_id} not found in {POSTS_FILE}")
        if m.fact_check_id not in fact_checks:
            raise DataError(
                f"{MAPPING_FILE}: fact_check_id {m.fact_check_id} not found in {FACT_CHECKS_FILE}")
    return Corpus(posts, fact_checks, tuple(mappings))


def write_corpus(corpus: Corpus, directory: Union[str, Path]) -> None:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)

    def dump(name, columns, rows):
        with (directory / name).open("w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh)
            writer.writerow(columns)
            writer.writerows(rows)

    dump(FACT_CHECKS_FILE, FACT_CHECK_COLUMNS,
         ([f.id, f.claim, f.title, f.url, f.language, f.claim_en]
          for f in corpus.fact_checks.values()))
    dump(POSTS_FILE, POST_COLUMNS,
         ([p.id, p.text, p.ocr_text, p.verdict, p.language, p.text_en]
          for p in corpus.posts.values()))
    dump(MAPPING_FILE, MAPPING_COLUMNS,
         ([m.post_id, m.fact_check_id, m.language_pair] for m in corpus.mappings))


def format_corpus_stats(corpus: Corpus) -> str:
    """Per-language post / fact-check counts as an aligned text table."""
    counts = corpus.language_counts()
    rows = [(lang or "?", str(p), str(f)) for lang, (p, f) in counts.items()]
    rows.append(("total", str(len(corpus.posts)), str(len(corpus.fact_checks))))
    head = ("language", "posts", "fact-checks")
    widths = [max(len(r[i]) for r in [head, *rows]) for i in range(3)]
    lines = [f"{head[0]:<{widths[0]}}  {head[1]:>{widths[1]}}  {head[2]:>{widths[2]}}"]
    lines.append("-" * len(lines[0]))
    for lang, p, f in rows:
        lines.append(f"{lang:<{widths[0]}}  {p:>{widths[1]}}  {f:>{widths[2]}}")
    lines.append(f"mappings: {len(corpus.mappings)}")
    return "\n".join(lines)
