"""Command line entry point: ``claimrank <subcommand> [options]``.

Exit status is 0 on success, 1 on usage errors and 2 on data errors.
"""
from __future__ import annotations

import argparse
import dataclasses
import hashlib
import json
import logging
import sys
from datetime import datetime, timezone
from pathlib import Path

import numpy as np
import yaml

from . import __version__, encoder, index as vindex
from .corpus import (FACT_CHECKS_FILE, MAPPING_FILE, POSTS_FILE, TextView,
                     format_corpus_stats, load_corpus, load_posts)
from .encoder import Vocabulary, load_checkpoint, save_checkpoint
from .ensemble import FusionConfig, fuse, load_run, save_run, ModelRun
from .errors import DataError
from .evaluation import GoldMapping, evaluate, read_predictions, write_predictions
from .pipeline import (embed_items, index_from_embeddings, load_embeddings, retrieve,
                       save_embeddings)
from .training import TrainConfig, kfold_split, load_config_file, sample_negative_pool, train

log = logging.getLogger("claimrank")

CHECKPOINT_NAME = "model.crnk"
VOCAB_NAME = "vocab.txt"

TRAIN_KEYS = {f.name for f in dataclasses.fields(TrainConfig)}
VIEW_KEYS = {f.name for f in dataclasses.fields(TextView)}
FUSION_KEYS = {f.name for f in dataclasses.fields(FusionConfig)}
EXTRA_KEYS = {"track", "k", "folds", "negative_fraction"}


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(f"{self.prog}: error: {message}")


# ---------------------------------------------------------------------------
# Settings
# ---------------------------------------------------------------------------

@dataclasses.dataclass
class Settings:
    track: str
    train: TrainConfig
    view: TextView
    fusion: FusionConfig
    k: int
    folds: int
    negative_fraction: float | None

    def snapshot(self) -> dict:
        return {"track": self.track, "k": self.k, "folds": self.folds,
                "negative_fraction": self.negative_fraction,
                **self.train.to_dict(), **dataclasses.asdict(self.view),
                **dataclasses.asdict(self.fusion)}


def _coerce(value: str):
    parsed = yaml.safe_load(value)
    return value if parsed is None and value.strip() else parsed


def resolve_settings(args) -> Settings:
    """Defaults for the track, then the config file, then command-line flags."""
    values: dict = {}
    if args.config:
        values.update(load_config_file(args.config))
    for item in args.set or []:
        if "=" not in item:
            raise UsageError(f"--set expects key=value, got {item!r}")
        key, raw = item.split("=", 1)
        values[key.strip()] = _coerce(raw)
    if getattr(args, "seed", None) is not None:
        values["seed"] = args.seed
    unknown = set(values) - TRAIN_KEYS - VIEW_KEYS - FUSION_KEYS - EXTRA_KEYS
    if unknown:
        raise UsageError(f"unknown config keys: {sorted(unknown)}")
    track = args.mode or values.get("track", "multilingual")
    if track not in ("multilingual", "crosslingual"):
        raise UsageError(f"unknown track {track!r}")
    train_values = {k: v for k, v in values.items() if k in TRAIN_KEYS}
    make = TrainConfig.crosslingual if track == "crosslingual" else TrainConfig.multilingual
    view_values = {k: v for k, v in values.items() if k in VIEW_KEYS}
    if track == "crosslingual":
        view_values["mode"] = "english"
    try:
        return Settings(
            track=track,
            train=make(**train_values),
            view=TextView(**view_values),
            fusion=FusionConfig(**{k: v for k, v in values.items() if k in FUSION_KEYS}),
            k=int(values.get("k", 10)),
            folds=int(values.get("folds", 5)),
            negative_fraction=values.get("negative_fraction"),
        )
    except (TypeError, ValueError) as exc:
        raise DataError(f"invalid configuration: {exc}") from None


def _digest(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def _now() -> str:
    return datetime.now(timezone.utc).isoformat(timespec="seconds")


def write_manifest(out_dir: Path, settings: Settings, inputs: list[Path],
                   artifacts: dict[str, str], started: str, finished: str | None = None) -> None:
    manifest = {
        "version": __version__,
        "seed": settings.train.seed,
        "config": settings.snapshot(),
        "inputs": {str(p): _digest(p) for p in inputs if p.is_file()},
        "artifacts": artifacts,
        "started_at": started,
        "finished_at": finished,
    }
    (out_dir / "manifest.json").write_text(json.dumps(manifest, indent=2) + "\n")


def _corpus_inputs(data: Path) -> list[Path]:
    return [data / FACT_CHECKS_FILE, data / POSTS_FILE, data / MAPPING_FILE]


def _model_paths(args, anchor: Path | None = None) -> tuple[Path, Path]:
    base = anchor.parent if anchor is not None else Path(".")
    ckpt = Path(args.checkpoint) if args.checkpoint else base / CHECKPOINT_NAME
    vocab = Path(args.vocab) if args.vocab else ckpt.parent / VOCAB_NAME
    return ckpt, vocab


def _load_folds(path: str) -> np.ndarray:
    data = json.loads(Path(path).read_text())
    try:
        return np.asarray(data["fold_of"], dtype=np.int64)
    except (KeyError, TypeError):
        raise DataError(f"{path}: not a folds file") from None


# ---------------------------------------------------------------------------
# Subcommands
# ---------------------------------------------------------------------------

def cmd_ingest(args, settings: Settings) -> int:
    corpus = load_corpus(args.data)
    text = format_corpus_stats(corpus)
    print(text)
    if args.stats_out:
        Path(args.stats_out).write_text(text + "\n", encoding="utf-8")
    return 0


def cmd_split_folds(args, settings: Settings) -> int:
    corpus = load_corpus(args.data)
    k = args.k or settings.folds
    fold_of = kfold_split(len(corpus.mappings), k, settings.train.seed)
    payload = {"k": k, "seed": settings.train.seed, "fold_of": fold_of.tolist()}
    Path(args.out).write_text(json.dumps(payload) + "\n")
    sizes = np.bincount(fold_of, minlength=k)
    print(f"{len(fold_of)} pairs -> {k} folds, sizes {sizes.tolist()}")
    return 0


def _train(args, settings: Settings, out_dir: Path):
    corpus = load_corpus(args.data)
    fold_of = None
    if args.fold is not None:
        fold_of = _load_folds(args.folds) if args.folds else \
            kfold_split(len(corpus.mappings), settings.folds, settings.train.seed)
        if len(fold_of) != len(corpus.mappings):
            raise DataError("folds file does not match the number of mappings")
    result = train(corpus, settings.view, settings.train, fold=args.fold, fold_of=fold_of)
    save_checkpoint(result.params, out_dir / CHECKPOINT_NAME)
    result.vocab.save(out_dir / VOCAB_NAME)
    result.write_log(out_dir / "train_log.tsv")
    for rec in result.log:
        log.info("epoch %d\tstep %d\tloss %.6f\tlr_scale %.4f",
                 rec.epoch, rec.step, rec.loss, rec.lr_scale)
    return corpus, fold_of, result


def cmd_train(args, settings: Settings) -> int:
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    started = _now()
    inputs = _corpus_inputs(Path(args.data))
    arts = {"checkpoint": CHECKPOINT_NAME, "vocab": VOCAB_NAME, "log": "train_log.tsv"}
    write_manifest(out_dir, settings, inputs, arts, started)
    _, _, result = _train(args, settings, out_dir)
    write_manifest(out_dir, settings, inputs, arts, started, _now())
    last = result.log[-1].loss if result.log else float("nan")
    print(f"trained {len(result.log)} epochs, final loss {last:.6f}; "
          f"checkpoint {out_dir / CHECKPOINT_NAME}")
    return 0


def cmd_embed(args, settings: Settings) -> int:
    corpus = load_corpus(args.data)
    ckpt, vocab_path = _model_paths(args)
    params, vocab = load_checkpoint(ckpt), Vocabulary.load(vocab_path)
    items = corpus.fact_checks if args.what == "fact-checks" else corpus.posts
    ids, vecs = embed_items(items, settings.view, vocab, params, settings.train.max_len)
    save_embeddings(args.out, ids, vecs)
    print(f"embedded {len(ids)} {args.what} -> {args.out}")
    return 0


def cmd_build_index(args, settings: Settings) -> int:
    ids, vecs = load_embeddings(args.embeddings)
    idx = index_from_embeddings(ids, vecs)
    vindex.save_index(idx, args.out)
    print(f"indexed {len(idx)} vectors of dimension {idx.dim} -> {args.out}")
    return 0


def cmd_retrieve(args, settings: Settings) -> int:
    idx = vindex.load_index(args.index)
    ckpt, vocab_path = _model_paths(args, anchor=Path(args.index))
    params, vocab = load_checkpoint(ckpt), Vocabulary.load(vocab_path)
    posts = load_posts(args.posts)
    k = args.k or settings.k
    pids, qvecs = embed_items(posts, settings.view, vocab, params, settings.train.max_len)
    run = retrieve(idx, pids, qvecs, k, name=Path(args.out).stem, threads=args.threads)
    write_predictions(run.lists, k, args.out)
    if args.run_out:
        save_run(run, args.run_out)
    print(f"retrieved top-{k} for {len(pids)} posts -> {args.out}")
    return 0


def cmd_ensemble(args, settings: Settings) -> int:
    runs = [load_run(p) for p in args.runs]
    cfg = dataclasses.replace(settings.fusion,
                              **{k: v for k, v in (("method", args.method), ("k_out", args.k))
                                 if v is not None})
    fused = fuse(runs, cfg)
    write_predictions(fused, cfg.k_out, args.out)
    if args.run_out:
        save_run(ModelRun("fused", fused), args.run_out)
    print(f"fused {len(runs)} runs over {len(fused)} posts -> {args.out}")
    return 0


def cmd_evaluate(args, settings: Settings) -> int:
    k = args.k or settings.k
    preds = read_predictions(args.pred)
    languages = None
    if args.posts:
        languages = {p.id: p.language for p in load_posts(args.posts).values()}
    gold = GoldMapping.from_mapping_file(args.gold, languages)
    report = evaluate(preds, gold, k)
    print(f"S@{k} = {report.s_at_k_avg:.4f}")
    print(report.format())
    if args.report_json:
        Path(args.report_json).write_text(json.dumps(report.to_dict(), indent=2) + "\n")
    return 0


def cmd_pipeline(args, settings: Settings) -> int:
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    started = _now()
    inputs = _corpus_inputs(Path(args.data))
    arts = {"checkpoint": CHECKPOINT_NAME, "vocab": VOCAB_NAME, "log": "train_log.tsv",
            "fact_check_embeddings": "fact_checks.npz", "index": "index.bin",
            "run": "run.json", "predictions": "predictions.json",
            "report": "report.txt", "report_json": "report.json"}
    write_manifest(out_dir, settings, inputs, arts, started)

    corpus, fold_of, result = _train(args, settings, out_dir)
    cfg, view, k = settings.train, settings.view, settings.k
    if args.fold is not None:
        eval_posts = {m.post_id for m, f in zip(corpus.mappings, fold_of) if f == args.fold}
    else:
        eval_posts = set(corpus.gold())
    if settings.negative_fraction is not None:
        pool = sample_negative_pool(corpus, settings.negative_fraction, cfg.seed, eval_posts)
        facts = {i: corpus.fact_checks[i] for i in pool}
    else:
        facts = corpus.fact_checks
    fids, fvecs = embed_items(facts, view, result.vocab, result.params, cfg.max_len)
    save_embeddings(out_dir / arts["fact_check_embeddings"], fids, fvecs)
    idx = index_from_embeddings(fids, fvecs)
    vindex.save_index(idx, out_dir / arts["index"])

    posts = {p: corpus.posts[p] for p in eval_posts}
    pids, pvecs = embed_items(posts, view, result.vocab, result.params, cfg.max_len)
    run = retrieve(idx, pids, pvecs, k, name="pipeline", threads=args.threads)
    save_run(run, out_dir / arts["run"])
    write_predictions(run.lists, k, out_dir / arts["predictions"])

    report = evaluate(run.lists, GoldMapping.from_corpus(corpus, eval_posts), k)
    (out_dir / arts["report"]).write_text(report.format() + "\n")
    (out_dir / arts["report_json"]).write_text(json.dumps(report.to_dict(), indent=2) + "\n")
    write_manifest(out_dir, settings, inputs, arts, started, _now())
    print(f"S@{k} = {report.s_at_k_avg:.4f}")
    print(report.format())
    return 0


COMMANDS = {
    "ingest": cmd_ingest,
    "split-folds": cmd_split_folds,
    "train": cmd_train,
    "embed": cmd_embed,
    "build-index": cmd_build_index,
    "retrieve": cmd_retrieve,
    "ensemble": cmd_ensemble,
    "evaluate": cmd_evaluate,
    "pipeline": cmd_pipeline,
}


def build_parser() -> argparse.ArgumentParser:
    common = _Parser(add_help=False)
    common.add_argument("--config", help="flat YAML key/value config file")
    common.add_argument("--seed", type=int, help="random seed (overrides config)")
    common.add_argument("--threads", type=int, default=1,
                        help="parallel retrieval queries; never changes results")
    common.add_argument("--mode", choices=("multilingual", "crosslingual"),
                        help="training defaults; crosslingual forces English text")
    common.add_argument("--set", action="append", metavar="KEY=VALUE",
                        help="override one config key (repeatable)")
    common.add_argument("-v", "--verbose", action="store_true")

    parser = _Parser(prog="claimrank", description="Fact-checked claim retrieval.")
    parser.add_argument("--version", action="version", version=(
        f"claimrank {__version__} (checkpoint {encoder.CHECKPOINT_MAGIC.decode()} "
        f"v{encoder.CHECKPOINT_VERSION}, index {vindex.INDEX_MAGIC.decode()} "
        f"v{vindex.INDEX_VERSION})"))
    sub = parser.add_subparsers(dest="command", metavar="COMMAND", parser_class=_Parser)
    sub.required = True

    p = sub.add_parser("ingest", parents=[common], help="validate a corpus and print counts")
    p.add_argument("--data", required=True)
    p.add_argument("--stats-out")

    p = sub.add_parser("split-folds", parents=[common], help="assign mappings to k folds")
    p.add_argument("--data", required=True)
    p.add_argument("--k", type=int)
    p.add_argument("--out", required=True)

    for name in ("train", "pipeline"):
        p = sub.add_parser(name, parents=[common],
                           help="train an encoder" if name == "train"
                           else "train, index, retrieve and evaluate in one go")
        p.add_argument("--data", required=True)
        p.add_argument("--out-dir", required=True)
        p.add_argument("--fold", type=int, help="hold this fold out of training")
        p.add_argument("--folds", help="folds file from split-folds")

    p = sub.add_parser("embed", parents=[common], help="embed posts or fact-checks")
    p.add_argument("--data", required=True)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--vocab")
    p.add_argument("--what", choices=("fact-checks", "posts"), default="fact-checks")
    p.add_argument("--out", required=True)

    p = sub.add_parser("build-index", parents=[common], help="build an index from embeddings")
    p.add_argument("--embeddings", required=True)
    p.add_argument("--out", required=True)

    p = sub.add_parser("retrieve", parents=[common], help="rank fact-checks for posts")
    p.add_argument("--index", required=True)
    p.add_argument("--posts", required=True, help="posts.csv")
    p.add_argument("--checkpoint", help=f"defaults to {CHECKPOINT_NAME} next to the index")
    p.add_argument("--vocab")
    p.add_argument("--k", type=int)
    p.add_argument("--out", required=True, help="predictions JSON")
    p.add_argument("--run-out", help="also write scored run JSON for ensembling")

    p = sub.add_parser("ensemble", parents=[common], help="fuse scored runs")
    p.add_argument("--runs", nargs="+", required=True)
    p.add_argument("--method", choices=("score_sum", "rrf"))
    p.add_argument("--k", type=int)
    p.add_argument("--out", required=True)
    p.add_argument("--run-out")

    p = sub.add_parser("evaluate", parents=[common], help="Success@K of a predictions file")
    p.add_argument("--pred", required=True)
    p.add_argument("--gold", required=True, help="fact_check_post_mapping.csv")
    p.add_argument("--posts", help="posts.csv, for post languages")
    p.add_argument("--k", type=int)
    p.add_argument("--report-json")
    return parser


def run(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                            format="%(levelname)s %(name)s: %(message)s")
        settings = resolve_settings(args)
        return COMMANDS[args.command](args, settings)
    except SystemExit as exc:  # --help / --version
        return exc.code or 0
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return 1
    except (ValueError, FileNotFoundError) as exc:
        print(f"claimrank: error: {exc}", file=sys.stderr)
        return 2


def main() -> None:
    sys.exit(run())
