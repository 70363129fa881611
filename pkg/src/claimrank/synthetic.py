"""Synthetic corpora with a known perfect matching, for tests and demos."""
from __future__ import annotations

import numpy as np

from .corpus import Corpus, FactCheck, MappingPair, Post


def make_separable_corpus(n_pairs: int = 64, n_distractors: int = 200,
                          tokens_per_text: int = 4, seed: int = 0,
                          languages: tuple[str, ...] = ("eng", "spa")) -> Corpus:
    """Post/claim pairs over disjoint per-pair token sets.

    Post ``i`` and its claim draw from the same private token set but use
    different tokens, so nothing matches lexically until the encoder learns the
    association. Distractor fact-checks use their own private tokens.
    Post ids start at 1000, gold fact-check ids at 0 and distractor ids at
    ``n_pairs``.
    """
    rng = np.random.default_rng(seed)
    posts, facts, maps = {}, {}, []
    for i in range(n_pairs):
        toks = [f"w{i}x{j}" for j in range(2 * tokens_per_text)]
        rng.shuffle(toks)
        lang = languages[i % len(languages)]
        post_text = " ".join(toks[:tokens_per_text])
        claim = " ".join(toks[tokens_per_text:])
        pid = 1000 + i
        posts[pid] = Post(pid, post_text, "", "", lang, post_text)
        facts[i] = FactCheck(i, claim, "", "", lang, claim)
        maps.append(MappingPair(pid, i, f"{lang}-{lang}"))
    for k in range(n_distractors):
        fid = n_pairs + k
        claim = " ".join(f"d{k}x{j}" for j in range(tokens_per_text))
        facts[fid] = FactCheck(fid, claim, "", "", languages[k % len(languages)], claim)
    return Corpus(posts, facts, tuple(maps))
