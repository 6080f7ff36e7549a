"""Command-line interface.

Every pipeline procedure is independently invocable (build-trainset,
train-ngram, train-mlp, build-refs, score, plan, filter, mix,
decontaminate, stats, rank, embed-list, align), and `run` executes a whole
declarative config. Exit codes: 0 success, 2 configuration error, 3 data
error, 4 stage failure.

Usage examples:
    corpusfilter build-trainset --lang dan_Latn \
        --positive quiz=data/quiz.jsonl:question,answer \
        --negative-corpus data/corpus.docs.jsonl --cap 80000 --seed 7 \
        --out-dir out/trainset
    corpusfilter train-ngram --trainset out/trainset/train.docs.jsonl \
        --lang dan_Latn --buckets 65536 --out out/model.ngqf
    corpusfilter score --scorer ngram --model out/model.ngqf \
        --corpus data/corpus.docs.jsonl --out out/scores.tsv
    corpusfilter plan --scores out/scores.tsv --retention 0.10 --out out/plan.json
    corpusfilter filter --corpus data/corpus.docs.jsonl --plan out/plan.json \
        --out out/filtered.docs.jsonl
    corpusfilter run --config pipeline.yaml --jobs 4
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from . import __version__, analytics, cosine, decontam, mlp, selector
from .corpus_io import CorpusManifest, corpus_files, iter_corpus, read_documents, write_documents
from .errors import ConfigError, CorpusFilterError, DataError, StageError
from .ngram_classifier import (
    NgramModel,
    NgramTokenizerConfig,
    PRESETS,
    TrainConfig,
    preset_for_language,
    train_ngram,
)
from .ngram_scoring import NgramScorer
from .pipeline import (
    _load_embeddings_any,
    _positive_matrix,
    run_pipeline,
    validate_config,
)
from .scores import ScoreTable, concat_tables
from .trainset import PositiveSource, TrainsetSpec, build_trainset, load_labeled

log = logging.getLogger("corpusfilter")

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_DATA = 3
EXIT_STAGE = 4


def parse_named_source(value: str):
    """Parse NAME=PATH[:FIELD1,FIELD2,...] flags."""
    if "=" not in value:
        raise ConfigError(f"expected NAME=PATH[:FIELDS], got {value!r}")
    name, rest = value.split("=", 1)
    if ":" in rest:
        path, fields = rest.rsplit(":", 1)
        field_list = [f for f in fields.split(",") if f]
    else:
        path, field_list = rest, ["text"]
    return name, path, field_list


def cmd_build_trainset(args) -> int:
    positives = [PositiveSource(name, path, fields)
                 for name, path, fields in (parse_named_source(v) for v in args.positive)]
    spec = TrainsetSpec(
        lang=args.lang,
        positive_sources=positives,
        negative_corpus=args.negative_corpus,
        cap_per_class=args.cap,
        seed=args.seed,
    )
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    report = build_trainset(spec, out_dir / "train.docs.jsonl",
                            out_dir / "heldout.docs.jsonl")
    report.save(out_dir / "report.json")
    print(f"trainset: {report.train_docs} train / {report.heldout_docs} heldout "
          f"({report.positives_sampled} pos, {report.negatives_sampled} neg)")
    return EXIT_OK


def _tokenizer_from_args(args) -> NgramTokenizerConfig:
    preset_name = args.preset or preset_for_language(args.lang)
    if preset_name not in PRESETS:
        raise ConfigError(f"unknown preset {preset_name!r}")
    tok = PRESETS[preset_name]["tokenizer"]
    return NgramTokenizerConfig(
        mode=args.mode or tok.mode,
        ngram_order=args.order if args.order is not None else tok.ngram_order,
        min_count=args.min_count if args.min_count is not None else tok.min_count,
        lowercase=args.lowercase,
    )


def cmd_train_ngram(args) -> int:
    samples = load_labeled(args.trainset)
    preset_name = args.preset or preset_for_language(args.lang)
    base = PRESETS[preset_name]["train"]
    cfg = TrainConfig(
        epochs=args.epochs if args.epochs is not None else base.epochs,
        lr=args.lr if args.lr is not None else base.lr,
        dim=args.dim,
        bucket_count=args.buckets,
        seed=args.seed,
    )
    model = train_ngram(samples, _tokenizer_from_args(args), cfg)
    model.save(args.out)
    losses = model.train_meta["epoch_losses"]
    print(f"trained on {len(samples)} samples, vocab {len(model.vocab)}, "
          f"loss {losses[0]:.4f} -> {losses[-1]:.4f}, saved {args.out}")
    return EXIT_OK


def cmd_train_mlp(args) -> int:
    samples = load_labeled(args.trainset)
    matrix = _load_embeddings_any(args.embeddings)
    cfg = mlp.MlpConfig(
        input_dim=matrix.dim, hidden_dim=args.hidden, epochs=args.epochs,
        lr=args.lr, dropout=args.dropout, batch_size=args.batch_size,
        seed=args.seed,
    )
    model = mlp.train_mlp(samples, matrix, cfg)
    model.save(args.out)
    losses = model.train_meta["epoch_losses"]
    print(f"trained on {len(samples)} samples, loss {losses[0]:.4f} -> "
          f"{losses[-1]:.4f}, saved {args.out}")
    return EXIT_OK


def cmd_build_refs(args) -> int:
    samples = load_labeled(args.trainset)
    matrix = _load_embeddings_any(args.embeddings)
    refs = cosine.build_reference_set(_positive_matrix(matrix, samples),
                                      k=args.k, seed=args.seed)
    refs.save(args.out)
    print(f"reference set: {len(refs)} vectors (requested {args.k}), saved {args.out}")
    return EXIT_OK


def cmd_score(args) -> int:
    if args.scorer == "ngram":
        if not args.model or not args.corpus:
            raise ConfigError("ngram scoring needs --model and --corpus")
        model = NgramModel.load(args.model)
        scorer = NgramScorer(model)
        tables = [scorer.score_documents(read_documents(f), chunk_size=args.chunk)
                  for f in corpus_files(args.corpus)]
        table = concat_tables(tables)
    elif args.scorer == "mlp":
        if not args.model or not args.embeddings:
            raise ConfigError("mlp scoring needs --model and --embeddings")
        table = mlp.score_mlp(mlp.MlpModel.load(args.model),
                              _load_embeddings_any(args.embeddings))
    elif args.scorer == "cosine":
        if not args.refs or not args.embeddings:
            raise ConfigError("cosine scoring needs --refs and --embeddings")
        table = cosine.score_cosine(cosine.ReferenceSet.load(args.refs),
                                    _load_embeddings_any(args.embeddings))
    else:
        raise ConfigError(f"unknown scorer {args.scorer!r}")
    table.save(args.out)
    print(f"scored {len(table)} documents with {args.scorer}, saved {args.out}")
    return EXIT_OK


def cmd_plan(args) -> int:
    table = ScoreTable.load(args.scores)
    if args.retention is not None:
        p = args.retention
    elif args.budget is not None:
        if not args.manifest:
            raise ConfigError("--budget needs --manifest for the corpus total")
        manifest = CorpusManifest.load(args.manifest)
        budget = selector.retention_for_budget(manifest, args.budget)
        p = budget.fraction
        print(f"budget {args.budget} of {budget.total_tokens} tokens -> "
              f"retention {p:.4f} ({budget.percent}%)")
    else:
        raise ConfigError("need --retention or --budget")
    plan = selector.plan_selection(table, p, method=args.method)
    plan.save(args.out)
    print(f"plan retains {len(plan.retained)}/{plan.total_docs} documents "
          f"(threshold {plan.threshold!r}), saved {args.out}")
    return EXIT_OK


def cmd_filter(args) -> int:
    plan = selector.SelectionPlan.load(args.plan)
    run = selector.CorpusFilterRun(plan)
    write_documents(
        (kept for doc in iter_corpus(args.corpus) if (kept := run.feed(doc)) is not None),
        args.out,
    )
    stats = run.finish()
    if args.out_stats:
        Path(args.out_stats).write_text(
            json.dumps(stats.to_dict(), indent=2, sort_keys=True) + "\n",
            encoding="utf-8")
    print(f"retained {stats.retained_docs}/{stats.input_docs} docs "
          f"({stats.retained_tokens}/{stats.input_tokens} tokens), saved {args.out}")
    return EXIT_OK


def cmd_mix(args) -> int:
    filtered = list(iter_corpus(args.filtered))
    raw = list(iter_corpus(args.raw))
    mixed, stats = selector.mix_replay(filtered, raw, args.rate, seed=args.seed)
    write_documents(mixed, args.out)
    print(f"mixed corpus: {stats.output_docs} docs, {stats.replay_docs} replayed "
          f"({stats.rate:.2%}), saved {args.out}")
    return EXIT_OK


def cmd_decontaminate(args) -> int:
    sources = [decontam.BenchmarkSource(name, path, fields)
               for name, path, fields in (parse_named_source(v) for v in args.benchmark)]
    index = decontam.build_index(sources, n=args.n)
    if args.out_index:
        index.save(args.out_index)
    run = decontam.DecontaminationRun(index)
    write_documents(
        (kept for doc in iter_corpus(args.corpus) if (kept := run.feed(doc)) is not None),
        args.out,
    )
    report = run.report
    if args.out_report:
        Path(args.out_report).write_text(
            json.dumps(report.to_dict(), indent=2, sort_keys=True) + "\n",
            encoding="utf-8")
    print(f"removed {report.removed_docs}/{report.total_docs} documents "
          f"({report.contamination_rate:.4%}), saved {args.out}")
    return EXIT_OK


def cmd_stats(args) -> int:
    baseline = list(iter_corpus(args.baseline))
    runs = []
    for v in args.run:
        name, path,_ = parse_named_source(v)
        runs.append((name, list(iter_corpus(path))))
    metric_table = analytics.MetricTable.from_csv(args.metric_csv) if args.metric_csv else None
    report = analytics.compare_filters(baseline, runs, metric_table=metric_table)
    analytics.report_to_files(report, args.out_json, args.out_csv)
    for run in report["runs"]:
        print(f"{run['name']}: {run['docs']} docs "
              f"({run['retained_doc_fraction']:.2%} docs, "
              f"{run['retained_token_fraction']:.2%} tokens)")
    return EXIT_OK


def cmd_rank(args) -> int:
    table = analytics.MetricTable.from_csv(args.metric_csv, direction=args.direction)
    ranks = analytics.average_rank(table)
    if args.out:
        Path(args.out).write_text(
            json.dumps({"average_rank": ranks}, indent=2, sort_keys=True) + "\n",
            encoding="utf-8")
    for name, rank in sorted(ranks.items(), key=lambda kv: kv[1]):
        print(f"{rank:8.4f}  {name}")
    return EXIT_OK


def cmd_embed_list(args) -> int:
    files = corpus_files(args.corpus)
    shards = []
    for f in files:
        count = sum(1 for _ in read_documents(f))
        shards.append({
            "docs": str(f),
            "embx": str(Path(args.embx_dir) / (Path(f).name.replace(".docs.jsonl", "") + ".embx")),
            "doc_count": count,
        })
    payload = {"max_tokens": 512, "dim": 768, "shards": shards}
    Path(args.out).write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n",
                              encoding="utf-8")
    print(f"embedding handoff list for {len(shards)} shard(s), saved {args.out}")
    return EXIT_OK


def cmd_align(args) -> int:
    from .embeddings import align as align_op

    matrix = _load_embeddings_any(args.embeddings)
    report = align_op(matrix, iter_corpus(args.corpus))
    if args.out:
        Path(args.out).write_text(
            json.dumps(report.to_dict(), indent=2, sort_keys=True) + "\n",
            encoding="utf-8")
    print(f"aligned: {report.aligned} ({len(report.missing)} missing, "
          f"{len(report.orphans)} orphans)")
    return EXIT_OK if report.aligned else EXIT_DATA


def cmd_run(args) -> int:
    pipeline = validate_config(args.config, seed_override=args.seed_override,
                               jobs=args.jobs)
    print(f"config {args.config}: {len(pipeline.stages)} stages, "
          f"hash {pipeline.config_hash}")
    manifest = run_pipeline(pipeline, dry_run=args.dry_run)
    if args.dry_run:
        for s in manifest["stages"]:
            print(f"  would run {s['name']} ({s['type']})")
        return EXIT_OK
    for s in manifest["stages"]:
        state = "skipped" if s["skipped"] else f"{s['duration_s']:.2f}s"
        print(f"  {s['name']} ({s['type']}): {state}")
    print(f"run manifest: {pipeline.workdir / 'run_manifest.json'}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="corpusfilter",
        description="Model-based quality filtering for multilingual web corpora",
    )
    parser.add_argument("--version", action="version", version=__version__)
    parser.add_argument("-v", "--verbose", action="store_true", help="debug logging")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("build-trainset", help="build a binary classifier training set")
    p.add_argument("--lang", required=True)
    p.add_argument("--positive", action="append", required=True,
                   metavar="NAME=PATH[:FIELDS]",
                   help="positive source; FIELDS is a comma list of text fields")
    p.add_argument("--negative-corpus", required=True)
    p.add_argument("--cap", type=int, default=80_000)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out-dir", required=True)
    p.set_defaults(func=cmd_build_trainset)

    p = sub.add_parser("train-ngram", help="train the hashed n-gram classifier")
    p.add_argument("--trainset", required=True)
    p.add_argument("--lang", default="und_Latn")
    p.add_argument("--preset", choices=sorted(PRESETS))
    p.add_argument("--mode", choices=["whitespace", "character"])
    p.add_argument("--order", type=int)
    p.add_argument("--min-count", type=int)
    p.add_argument("--lowercase", action="store_true")
    p.add_argument("--epochs", type=int)
    p.add_argument("--lr", type=float)
    p.add_argument("--dim", type=int, default=100)
    p.add_argument("--buckets", type=int, default=2_000_000)
    p.add_argument("--seed", type=int, default=1)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_train_ngram)

    p = sub.add_parser("train-mlp", help="train the embedding MLP classifier")
    p.add_argument("--trainset", required=True)
    p.add_argument("--embeddings", required=True, help=".embx file or directory")
    p.add_argument("--hidden", type=int, default=256)
    p.add_argument("--epochs", type=int, default=6)
    p.add_argument("--lr", type=float, default=3e-4)
    p.add_argument("--dropout", type=float, default=0.2)
    p.add_argument("--batch-size", type=int, default=256)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_train_mlp)

    p = sub.add_parser("build-refs", help="sample the cosine reference set")
    p.add_argument("--trainset", required=True)
    p.add_argument("--embeddings", required=True)
    p.add_argument("--k", type=int, default=cosine.DEFAULT_K)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_build_refs)

    p = sub.add_parser("score", help="score documents with a trained filter")
    p.add_argument("--scorer", choices=["ngram", "mlp", "cosine"], required=True)
    p.add_argument("--model")
    p.add_argument("--refs")
    p.add_argument("--corpus")
    p.add_argument("--embeddings")
    p.add_argument("--chunk", type=int, default=4096)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_score)

    p = sub.add_parser("plan", help="derive the retained-id set from scores")
    p.add_argument("--scores", required=True)
    p.add_argument("--retention", type=float)
    p.add_argument("--budget", type=int, help="token budget")
    p.add_argument("--manifest", help="corpus manifest for --budget")
    p.add_argument("--method", choices=["sort", "refine"], default="sort")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_plan)

    p = sub.add_parser("filter", help="apply a selection plan to a corpus")
    p.add_argument("--corpus", required=True)
    p.add_argument("--plan", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--out-stats")
    p.set_defaults(func=cmd_filter)

    p = sub.add_parser("mix", help="mix raw replay documents into a filtered corpus")
    p.add_argument("--filtered", required=True)
    p.add_argument("--raw", required=True)
    p.add_argument("--rate", type=float, required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_mix)

    p = sub.add_parser("decontaminate", help="remove benchmark-overlapping documents")
    p.add_argument("--corpus", required=True)
    p.add_argument("--benchmark", action="append", required=True,
                   metavar="NAME=PATH[:FIELDS]")
    p.add_argument("--n", type=int, default=13)
    p.add_argument("--out", required=True)
    p.add_argument("--out-report")
    p.add_argument("--out-index")
    p.set_defaults(func=cmd_decontaminate)

    p = sub.add_parser("stats", help="compare filtered corpora against a baseline")
    p.add_argument("--baseline", required=True)
    p.add_argument("--run", action="append", required=True, metavar="NAME=PATH")
    p.add_argument("--metric-csv")
    p.add_argument("--out-json", required=True)
    p.add_argument("--out-csv")
    p.set_defaults(func=cmd_stats)

    p = sub.add_parser("rank", help="tie-averaged rank aggregation of a metric table")
    p.add_argument("--metric-csv", required=True)
    p.add_argument("--direction", choices=["higher", "lower"], default="higher")
    p.add_argument("--out")
    p.set_defaults(func=cmd_rank)

    p = sub.add_parser("embed-list", help="emit the shard list awaiting embeddings")
    p.add_argument("--corpus", required=True)
    p.add_argument("--embx-dir", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_embed_list)

    p = sub.add_parser("align", help="check corpus/embedding id alignment")
    p.add_argument("--corpus", required=True)
    p.add_argument("--embeddings", required=True)
    p.add_argument("--out")
    p.set_defaults(func=cmd_align)

    p = sub.add_parser("run", help="execute a declarative pipeline config")
    p.add_argument("--config", required=True)
    p.add_argument("--jobs", type=int)
    p.add_argument("--seed-override", type=int)
    p.add_argument("--dry-run", action="store_true")
    p.set_defaults(func=cmd_run)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.INFO,
        format="%(asctime)s %(levelname)s %(name)s %(message)s",
    )
    try:
        return args.func(args)
    except ConfigError as exc:
        log.error("config error: %s", exc)
        return EXIT_CONFIG
    except StageError as exc:
        log.error("%s", exc)
        return EXIT_STAGE
    except (DataError, CorpusFilterError) as exc:
        log.error("data error: %s", exc)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
