import hashlib
import json

import pytest

from claimrank.cli import run
from claimrank.corpus import write_corpus
from claimrank.ensemble import ModelRun, save_run
from claimrank.evaluation import read_predictions
from claimrank.index import RankedList
from claimrank.synthetic import make_separable_corpus

FAST = ["--set", "batch_size=8", "--set", "epochs=4", "--set", "warmup_steps=0",
        "--set", "lr_backbone=0.003", "--set", "lr_custom=0.003", "--set", "embed_dim=16",
        "--set", "hidden=8", "--set", "max_len=8"]


@pytest.fixture(scope="module")
def data_dir(tmp_path_factory):
    path = tmp_path_factory.mktemp("corpus")
    write_corpus(make_separable_corpus(n_pairs=16, n_distractors=20), path)
    return path


@pytest.fixture(scope="module")
def trained(tmp_path_factory, data_dir):
    out = tmp_path_factory.mktemp("run")
    assert run(["pipeline", "--data", str(data_dir), "--out-dir", str(out), *FAST]) == 0
    return out


@pytest.fixture
def four_post_files(tmp_path):
    (tmp_path / "mapping.csv").write_text(
        "post_id,fact_check_id,language_pair\n"
        "1,10,eng-eng\n2,20,eng-eng\n3,30,spa-spa\n4,40,spa-eng\n")
    (tmp_path / "p.json").write_text(json.dumps(
        {"Post-1": [10, 11], "Post-2": [21, 20], "Post-3": [31], "Post-4": [41, 30, 40]}))
    return tmp_path


def sha(path):
    return hashlib.sha256(path.read_bytes()).hexdigest()


class TestUsage:
    def test_unknown_subcommand(self, capsys):
        assert run(["foo"]) == 1
        assert "usage:" in capsys.readouterr().err

    def test_unknown_flag(self, capsys, four_post_files):
        assert run(["evaluate", "--pred", "x", "--gold", "y", "--bogus"]) == 1
        assert "usage:" in capsys.readouterr().err

    def test_no_subcommand(self):
        assert run([]) == 1

    def test_version(self, capsys):
        assert run(["--version"]) == 0
        out = capsys.readouterr().out
        assert "CRNK v1" in out and "BIDX v1" in out

    def test_bad_set(self, four_post_files):
        d = four_post_files
        assert run(["evaluate", "--pred", str(d / "p.json"), "--gold", str(d / "mapping.csv"),
                    "--set", "nonsense"]) == 1

    def test_unknown_config_key(self, four_post_files):
        d = four_post_files
        assert run(["evaluate", "--pred", str(d / "p.json"), "--gold", str(d / "mapping.csv"),
                    "--set", "colour=red"]) == 1


class TestEvaluate:
    def test_four_posts(self, capsys, four_post_files):
        d = four_post_files
        code = run(["evaluate", "--pred", str(d / "p.json"), "--gold", str(d / "mapping.csv"),
                    "--k", "10", "--report-json", str(d / "r.json")])
        out = capsys.readouterr().out
        assert code == 0
        assert out.splitlines()[0] == "S@10 = 0.7500"
        report = json.loads((d / "r.json").read_text())
        assert report["per_language"] == {"eng": {"s_at_k": 1.0, "posts": 2},
                                          "spa": {"s_at_k": 0.5, "posts": 2}}

    def test_k_from_config(self, capsys, four_post_files):
        d = four_post_files
        (d / "c.yaml").write_text("k: 1\n")
        run(["evaluate", "--pred", str(d / "p.json"), "--gold", str(d / "mapping.csv"),
             "--config", str(d / "c.yaml")])
        assert capsys.readouterr().out.startswith("S@1 = 0.2500")

    def test_missing_file(self, capsys, tmp_path):
        assert run(["evaluate", "--pred", str(tmp_path / "nope.json"),
                    "--gold", str(tmp_path / "nope.csv")]) == 2
        assert "error" in capsys.readouterr().err

    def test_malformed_predictions(self, four_post_files):
        (four_post_files / "p.json").write_text('{"x": 1}')
        assert run(["evaluate", "--pred", str(four_post_files / "p.json"),
                    "--gold", str(four_post_files / "mapping.csv")]) == 2


class TestCorpusCommands:
    def test_ingest(self, capsys, data_dir, tmp_path):
        assert run(["ingest", "--data", str(data_dir), "--stats-out", str(tmp_path / "s.txt")]) == 0
        assert "total" in capsys.readouterr().out
        assert "total" in (tmp_path / "s.txt").read_text()

    def test_ingest_bad_corpus(self, tmp_path):
        assert run(["ingest", "--data", str(tmp_path)]) == 2

    def test_split_folds(self, data_dir, tmp_path):
        assert run(["split-folds", "--data", str(data_dir), "--k", "4", "--seed", "3",
                    "--out", str(tmp_path / "f.json")]) == 0
        folds = json.loads((tmp_path / "f.json").read_text())
        assert (folds["k"], folds["seed"], len(folds["fold_of"])) == (4, 3, 16)
        assert sorted(folds["fold_of"]) == sorted([0, 1, 2, 3] * 4)


class TestPipeline:
    def test_artifacts(self, trained):
        for name in ("model.crnk", "vocab.txt", "train_log.tsv", "index.bin", "run.json",
                     "predictions.json", "report.txt", "report.json", "manifest.json"):
            assert (trained / name).is_file(), name
        manifest = json.loads((trained / "manifest.json").read_text())
        assert manifest["seed"] == 42 and manifest["finished_at"]
        assert manifest["config"]["batch_size"] == 8
        assert all(len(d) == 64 for d in manifest["inputs"].values())
        preds = read_predictions(trained / "predictions.json", k=10)
        assert len(preds) == 16

    def test_retrieve_format_and_threads(self, trained, data_dir, tmp_path):
        common = ["retrieve", "--index", str(trained / "index.bin"),
                  "--posts", str(data_dir / "posts.csv"), "--k", "10", *FAST]
        assert run([*common, "--out", str(tmp_path / "a.json")]) == 0
        assert run([*common, "--threads", "4", "--out", str(tmp_path / "b.json"),
                    "--run-out", str(tmp_path / "run.json")]) == 0
        assert sha(tmp_path / "a.json") == sha(tmp_path / "b.json")
        data = json.loads((tmp_path / "a.json").read_text())
        assert all(k.startswith("Post-") and len(v) <= 10 and all(type(i) is int for i in v)
                   for k, v in data.items())
        assert sha(tmp_path / "a.json") == sha(trained / "predictions.json")

    def test_embed_build_index_matches_pipeline(self, trained, data_dir, tmp_path):
        assert run(["embed", "--data", str(data_dir), "--checkpoint", str(trained / "model.crnk"),
                    "--out", str(tmp_path / "e.npz"), *FAST]) == 0
        assert run(["build-index", "--embeddings", str(tmp_path / "e.npz"),
                    "--out", str(tmp_path / "i.bin")]) == 0
        assert sha(tmp_path / "i.bin") == sha(trained / "index.bin")

    def test_train_subcommand_matches_pipeline(self, trained, data_dir, tmp_path):
        assert run(["train", "--data", str(data_dir), "--out-dir", str(tmp_path), *FAST]) == 0
        assert sha(tmp_path / "model.crnk") == sha(trained / "model.crnk")

    def test_held_out_fold(self, data_dir, tmp_path):
        assert run(["split-folds", "--data", str(data_dir), "--k", "4",
                    "--out", str(tmp_path / "f.json")]) == 0
        assert run(["pipeline", "--data", str(data_dir), "--out-dir", str(tmp_path / "o"),
                    "--fold", "1", "--folds", str(tmp_path / "f.json"), *FAST]) == 0
        assert len(read_predictions(tmp_path / "o" / "predictions.json")) == 4


class TestEnsemble:
    def test_fuse_runs(self, tmp_path, capsys):
        save_run(ModelRun("a", {1: RankedList(1, [(5, 0.9), (6, 0.5)])}), tmp_path / "a.json")
        save_run(ModelRun("b", {1: RankedList(1, [(6, 0.8), (7, 0.7)])}), tmp_path / "b.json")
        assert run(["ensemble", "--runs", str(tmp_path / "a.json"), str(tmp_path / "b.json"),
                    "--k", "2", "--out", str(tmp_path / "f.json")]) == 0
        assert json.loads((tmp_path / "f.json").read_text()) == {"Post-1": [6, 5]}

    def test_mismatched_posts(self, tmp_path):
        save_run(ModelRun("a", {1: RankedList(1, [(5, 0.9)])}), tmp_path / "a.json")
        save_run(ModelRun("b", {2: RankedList(2, [(5, 0.9)])}), tmp_path / "b.json")
        assert run(["ensemble", "--runs", str(tmp_path / "a.json"), str(tmp_path / "b.json"),
                    "--out", str(tmp_path / "f.json")]) == 2
