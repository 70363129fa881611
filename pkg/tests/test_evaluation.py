import json

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

import oracles
from claimrank.errors import DataError, FormatError
from claimrank.evaluation import (EvalReport, GoldMapping, evaluate, read_predictions,
                                  success_at_k, write_predictions)
from claimrank.index import RankedList, build_index, search_topk


def four_posts():
    gold = GoldMapping({1: {10}, 2: {20}, 3: {30}, 4: {40}},
                       {1: "eng", 2: "eng", 3: "spa", 4: "spa"})
    preds = {1: [10, 11], 2: [21, 20], 3: [31], 4: [41, 30, 40]}
    return preds, gold


@st.composite
def instances(draw):
    n_posts = draw(st.integers(1, 8))
    gold = {p: set(draw(st.lists(st.integers(0, 20), min_size=1, max_size=3)))
            for p in range(n_posts)}
    preds = {p: draw(st.lists(st.integers(0, 20), max_size=15, unique=True))
             for p in range(n_posts) if draw(st.booleans()) or p == 0}
    return preds, gold


class TestSuccessAtK:
    @pytest.mark.parametrize("rank,expected", [(10, 1.0), (11, 0.0), (1, 1.0)])
    def test_boundary(self, rank, expected):
        ranked = list(range(100, 100 + rank - 1)) + [7]
        assert success_at_k({1: ranked}, GoldMapping({1: {7}}), 10) == expected

    def test_counting(self):
        preds, gold = four_posts()
        assert success_at_k(preds, gold, 10) == 0.75

    def test_any_gold_counts(self):
        assert success_at_k({1: [5, 6]}, GoldMapping({1: {6, 99}}), 2) == 1.0

    def test_accepts_ranked_lists(self):
        rl = RankedList(1, [(3, 0.9), (7, 0.2)])
        assert success_at_k({1: rl}, GoldMapping({1: {7}}), 2) == 1.0
        assert success_at_k({1: rl}, GoldMapping({1: {7}}), 1) == 0.0

    def test_missing_post_warns_and_misses(self):
        with pytest.warns(UserWarning, match="counted as misses"):
            assert success_at_k({1: [10]}, GoldMapping({1: {10}, 2: {20}}), 10) == 0.5

    def test_empty_gold(self):
        with pytest.raises(DataError):
            success_at_k({}, GoldMapping({}), 10)

    def test_gold_needs_ids(self):
        with pytest.raises(DataError):
            GoldMapping({1: set()})

    @pytest.mark.filterwarnings("ignore:.*counted as misses")
    @settings(max_examples=300, deadline=None)
    @given(instances(), st.integers(1, 16))
    def test_vs_recount_and_monotone(self, inst, k):
        preds, gold = inst
        got = success_at_k(preds, GoldMapping(gold), k)
        nxt = success_at_k(preds, GoldMapping(gold), k + 1)
        assert got == oracles.success_recount(preds, gold, k)
        assert got <= nxt

    def test_full_index_search_is_perfect(self):
        rng = np.random.default_rng(0)
        idx = build_index(zip(range(30), rng.normal(size=(30, 5))))
        preds = {p: search_topk(idx, rng.normal(size=5), 30, p) for p in range(6)}
        gold = GoldMapping({p: {int(rng.integers(30))} for p in range(6)})
        assert success_at_k(preds, gold, 30) == 1.0


class TestEvaluate:
    def test_languages(self):
        preds, gold = four_posts()
        report = evaluate({1: [10], 2: [20], 3: [0], 4: [0]}, gold, 10)
        assert report.s_at_k_avg == 0.5
        assert report.per_language == {"eng": (1.0, 2), "spa": (0.0, 2)}
        assert report.avg_by_language == 0.5

    def test_single_language(self):
        gold = GoldMapping({1: {1}, 2: {2}, 3: {3}}, {1: "fra", 2: "fra", 3: "fra"})
        report = evaluate({1: [1], 2: [0], 3: [3]}, gold, 10)
        assert report.per_language["fra"] == (report.s_at_k_avg, 3)

    def test_micro_and_macro_differ(self):
        gold = GoldMapping({1: {1}, 2: {2}, 3: {3}}, {1: "eng", 2: "eng", 3: "tha"})
        report = evaluate({1: [1], 2: [2], 3: [0]}, gold, 10)
        assert report.s_at_k_avg == pytest.approx(2 / 3)
        assert report.avg_by_language == 0.5

    @pytest.mark.filterwarnings("ignore:.*counted as misses")
    @settings(max_examples=200, deadline=None)
    @given(instances(), st.integers(1, 12), st.lists(st.sampled_from(["eng", "spa", "ara"]),
                                                      min_size=8, max_size=8))
    def test_micro_identity(self, inst, k, langs):
        preds, gold = inst
        report = evaluate(preds, GoldMapping(gold, dict(enumerate(langs))), k)
        weighted = sum(s * n for s, n in report.per_language.values()) / report.post_count
        assert weighted == pytest.approx(report.s_at_k_avg, abs=1e-12)
        assert report.post_count == len(gold)

    def test_format_and_json(self):
        preds, gold = four_posts()
        report = evaluate(preds, gold, 10)
        lines = report.format().splitlines()
        assert lines[0].split() == ["Metric", "Score", "Posts"]
        assert "S@10 (avg)" in lines[2] and lines[2].split()[-1] == "4"
        assert len({len(line) for line in lines[2:]}) == 1
        data = report.to_dict()
        assert data["per_language"]["eng"] == {"s_at_k": 1.0, "posts": 2}
        json.dumps(data)

    def test_gold_from_mapping_file(self, corpus_dir):
        gold = GoldMapping.from_mapping_file(corpus_dir / "fact_check_post_mapping.csv")
        assert gold.gold == {1: {10}, 2: {11}}
        assert gold.language == {1: "eng", 2: "spa"}


class TestPredictionFile:
    def test_exact_text(self, tmp_path):
        write_predictions({12345: RankedList(12345, [(987, 0.9), (654, 0.8)])}, 10,
                          tmp_path / "p.json")
        assert (tmp_path / "p.json").read_text() == '{"Post-12345": [987, 654]}\n'

    def test_empty(self, tmp_path):
        write_predictions({}, 10, tmp_path / "p.json")
        assert json.loads((tmp_path / "p.json").read_text()) == {}

    def test_key_order(self, tmp_path):
        write_predictions({30: [1], 4: [2], 100: [3]}, 10, tmp_path / "p.json")
        assert list(json.loads((tmp_path / "p.json").read_text())) == \
            ["Post-4", "Post-30", "Post-100"]

    def test_round_trip(self, tmp_path):
        preds = {p: list(range(p, p + 10)) for p in range(20)}
        write_predictions(preds, 10, tmp_path / "p.json")
        assert read_predictions(tmp_path / "p.json", k=10) == preds

    def test_too_long(self, tmp_path):
        with pytest.raises(DataError, match="more than k=10"):
            write_predictions({1: list(range(11))}, 10, tmp_path / "p.json")

    @pytest.mark.parametrize("text,msg", [
        ("[1]", "JSON object"),
        ('{"12": [1]}', "Post-<id>"),
        ('{"Post-1": [1.5]}', "integers"),
        ('{"Post-1": [true]}', "integers"),
        ('{"Post-1": "x"}', "integers"),
        ("{", "invalid JSON"),
    ])
    def test_read_rejects(self, tmp_path, text, msg):
        (tmp_path / "p.json").write_text(text)
        with pytest.raises(FormatError, match=msg):
            read_predictions(tmp_path / "p.json")
