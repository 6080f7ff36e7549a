"""Declarative end-to-end runs: a YAML config lists stages, the runner
executes them in order with content-hash skipping.

Every stage records a signature of its own config plus the content hashes
of its inputs; an unchanged stage whose outputs are intact is skipped on
rerun. All products of a run embed the config hash (score-table headers,
plan files, model metadata, corpus sidecar manifests), and a stage fed
inputs carrying two different config hashes refuses to run.
"""

from __future__ import annotations

import hashlib
import json
import logging
import os
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Dict, List, Optional, Sequence, Tuple, Union

import yaml

from . import analytics, cosine, decontam, mlp, selector, trainset
from .corpus_io import (
    CorpusManifest,
    corpus_files,
    iter_corpus,
    read_documents,
    write_documents,
    ws_token_count,
)
from .embeddings import EmbeddingMatrix, read_embeddings
from .errors import ConfigError, DataError, StageError
from .ngram_classifier import (
    NgramModel,
    NgramTokenizerConfig,
    PRESETS,
    TrainConfig,
    preset_for_language,
    train_ngram,
)
from .ngram_scoring import NgramScorer
from .scores import ScoreTable, concat_tables
from .trainset import LabeledSample, PositiveSource, TrainsetSpec, build_trainset, load_labeled

log = logging.getLogger(__name__)

PathLike = Union[str, Path]


def file_sha256(path: PathLike) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for block in iter(lambda: fh.read(1 << 20), b""):
            h.update(block)
    return h.hexdigest()


def _canonical(obj) -> str:
    return json.dumps(obj, sort_keys=True, ensure_ascii=False, separators=(",", ":"))


@dataclass
class Stage:
    name: str
    type: str
    config: dict


@dataclass
class PipelineConfig:
    """A validated pipeline: language, seed, and an ordered stage list."""

    language: str
    seed: int
    workdir: Path
    stages: List[Stage]
    jobs: int = 1
    config_hash: str = ""
    base_dir: Path = field(default_factory=Path)

    def stage_names(self) -> List[str]:
        return [s.name for s in self.stages]


# stage type -> (required keys, path-or-ref keys with the output role a
# stage reference resolves to, output roles)
STAGE_TYPES: Dict[str, dict] = {
    "build-trainset": {
        "required": ["positives", "negative_corpus"],
        "refs": {"negative_corpus": "corpus"},
        "outputs": ["train", "heldout", "report"],
    },
    "train-ngram": {
        "required": ["trainset"],
        "refs": {"trainset": "train"},
        "outputs": ["model"],
    },
    "train-mlp": {
        "required": ["trainset", "embeddings"],
        "refs": {"trainset": "train", "embeddings": "embeddings"},
        "outputs": ["model"],
    },
    "build-refs": {
        "required": ["trainset", "embeddings"],
        "refs": {"trainset": "train", "embeddings": "embeddings"},
        "outputs": ["refs"],
    },
    "score": {
        "required": ["scorer"],
        "refs": {"corpus": "corpus", "model": "model", "refs": "refs",
                 "embeddings": "embeddings"},
        "outputs": ["scores"],
    },
    "plan": {
        "required": ["scores"],
        "refs": {"scores": "scores", "corpus_manifest": "manifest"},
        "outputs": ["plan"],
    },
    "filter": {
        "required": ["corpus", "plan"],
        "refs": {"corpus": "corpus", "plan": "plan"},
        "outputs": ["corpus", "manifest", "stats"],
    },
    "mix": {
        "required": ["filtered", "raw", "rate"],
        "refs": {"filtered": "corpus", "raw": "corpus"},
        "outputs": ["corpus", "manifest", "stats"],
    },
    "decontaminate": {
        "required": ["corpus", "benchmarks"],
        "refs": {"corpus": "corpus"},
        "outputs": ["corpus", "manifest", "index", "report"],
    },
    "stats": {
        "required": ["baseline", "runs"],
        "refs": {"baseline": "corpus"},
        "outputs": ["report", "csv"],
    },
    "rank": {
        "required": ["metric_csv"],
        "refs": {},
        "outputs": ["report"],
    },
    "embed-list": {
        "required": ["corpus"],
        "refs": {"corpus": "corpus"},
        "outputs": ["report"],
    },
    "align": {
        "required": ["corpus", "embeddings"],
        "refs": {"corpus": "corpus", "embeddings": "embeddings"},
        "outputs": ["report"],
    },
}


def _expand_path(value: str, base_dir: Path) -> str:
    expanded = os.path.expanduser(os.path.expandvars(value))
    p = Path(expanded)
    if not p.is_absolute():
        p = base_dir / p
    return str(p)


def validate_config(path: PathLike, seed_override: Optional[int] = None,
                    jobs: Optional[int] = None) -> PipelineConfig:
    """Parse, interpolate, and cross-check a pipeline config file."""
    path = Path(path)
    try:
        raw = yaml.safe_load(path.read_text(encoding="utf-8"))
    except yaml.YAMLError as exc:
        raise ConfigError(f"{path}: not valid YAML: {exc}") from None
    if not isinstance(raw, dict):
        raise ConfigError(f"{path}: config root must be a mapping")
    for key in ("language", "workdir", "stages"):
        if key not in raw:
            raise ConfigError(f"{path}: missing required key {key!r}")

    base_dir = path.parent.resolve()
    seed = int(seed_override if seed_override is not None else raw.get("seed", 0))
    stages: List[Stage] = []
    seen: Dict[str, str] = {}
    for i, entry in enumerate(raw["stages"]):
        if not isinstance(entry, dict) or "name" not in entry or "type" not in entry:
            raise ConfigError(f"stage #{i}: every stage needs 'name' and 'type'")
        name, stype = str(entry["name"]), str(entry["type"])
        if stype not in STAGE_TYPES:
            raise ConfigError(f"stage {name!r}: unknown stage type {stype!r}")
        if name in seen:
            raise ConfigError(f"duplicate stage name {name!r}")
        seen[name] = stype
        cfg = {k: v for k, v in entry.items() if k not in ("name", "type")}
        for req in STAGE_TYPES[stype]["required"]:
            if req not in cfg:
                raise ConfigError(f"stage {name!r}: missing required key {req!r}")
        stages.append(Stage(name=name, type=stype, config=cfg))

    pipeline = PipelineConfig(
        language=str(raw["language"]),
        seed=seed,
        workdir=Path(_expand_path(str(raw["workdir"]), base_dir)),
        stages=stages,
        jobs=int(jobs if jobs is not None else raw.get("jobs", 1)),
        base_dir=base_dir,
    )
    _check_references(pipeline)
    hash_basis = {
        "language": pipeline.language,
        "seed": pipeline.seed,
        "stages": [{"name": s.name, "type": s.type, "config": s.config}
                   for s in pipeline.stages],
    }
    pipeline.config_hash = hashlib.sha256(_canonical(hash_basis).encode()).hexdigest()[:12]
    return pipeline


def _check_references(pipeline: PipelineConfig) -> None:
    """Stage inputs must point to earlier stages or existing paths."""
    earlier: Dict[str, Stage] = {}
    names = set(pipeline.stage_names())
    for stage in pipeline.stages:
        refs = STAGE_TYPES[stage.type]["refs"]
        for key in refs:
            value = stage.config.get(key)
            if value is None:
                continue
            if isinstance(value, str) and value in names:
                if value not in earlier:
                    raise ConfigError(
                        f"stage {stage.name!r}: reference {value!r} is not an "
                        "earlier stage (cyclic or forward dependency)"
                    )
                continue
            if isinstance(value, str):
                resolved = Path(_expand_path(value, pipeline.base_dir))
                if not resolved.exists():
                    raise ConfigError(
                        f"stage {stage.name!r}: path for {key!r} does not exist: {resolved}"
                    )
        if stage.type == "stats":
            for run in stage.config.get("runs", []):
                if isinstance(run, str) and run in names and run not in earlier:
                    raise ConfigError(
                        f"stage {stage.name!r}: run reference {run!r} is not an earlier stage"
                    )
        earlier[stage.name] = stage


# A consuming role accepts these producer roles, in preference order
# (a trainset's train split is a corpus too).
_ROLE_ALIASES: Dict[str, Tuple[str, ...]] = {"corpus": ("corpus", "train")}


@dataclass
class StageResult:
    name: str
    type: str
    skipped: bool
    duration_s: float
    inputs: Dict[str, dict]
    outputs: Dict[str, dict]
    counts: Dict[str, float] = field(default_factory=dict)


class _Runtime:
    """Execution state shared by stage handlers within one run."""

    def __init__(self, pipeline: PipelineConfig):
        self.pipeline = pipeline
        self.outputs: Dict[str, Dict[str, str]] = {}  # stage name -> role -> path

    def stage_dir(self, stage: Stage) -> Path:
        d = self.pipeline.workdir / stage.name
        d.mkdir(parents=True, exist_ok=True)
        return d

    def resolve(self, stage: Stage, key: str, value: str) -> str:
        """A stage-name reference becomes that stage's output path."""
        role = STAGE_TYPES[stage.type]["refs"].get(key)
        if value in self.outputs:
            produced = self.outputs[value]
            for candidate in _ROLE_ALIASES.get(role, (role,)):
                if candidate in produced:
                    return produced[candidate]
            raise ConfigError(
                f"stage {stage.name!r}: stage {value!r} does not produce a "
                f"{role!r} output"
            )
        return _expand_path(value, self.pipeline.base_dir)


def _collect_config_hash(paths: Sequence[str]) -> Dict[str, str]:
    """Config hashes embedded in known input artifacts, keyed by path."""
    found: Dict[str, str] = {}
    for p in paths:
        path = Path(p)
        if not path.exists():
            continue
        sidecar = path.with_name(path.name + ".manifest.json")
        try:
            if path.suffix == ".tsv":
                found[p] = ScoreTable.load(path).config_hash
            elif path.suffix == ".json":
                obj = json.loads(path.read_text(encoding="utf-8"))
                if isinstance(obj, dict) and obj.get("config_hash"):
                    found[p] = str(obj["config_hash"])
            elif sidecar.exists():
                obj = json.loads(sidecar.read_text(encoding="utf-8"))
                if isinstance(obj, dict) and obj.get("config_hash"):
                    found[p] = str(obj["config_hash"])
        except Exception:
            continue
    return {p: h for p, h in found.items() if h}


def _write_corpus_sidecar(corpus_path: Path, manifest: CorpusManifest,
                          config_hash: str, stage: str) -> Path:
    sidecar = corpus_path.with_name(corpus_path.name + ".manifest.json")
    payload = {
        "config_hash": config_hash,
        "stage": stage,
        "paths": [corpus_path.name],
        "doc_count": manifest.doc_count,
        "total_ws_tokens": manifest.total_ws_tokens,
        "lang": manifest.lang,
    }
    sidecar.write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n",
                       encoding="utf-8")
    return sidecar


def _load_embeddings_any(path_str: str) -> EmbeddingMatrix:
    """One .embx file, or every *.embx in a directory merged in name order."""
    path = Path(path_str)
    if path.is_dir():
        shard_paths = sorted(path.glob("*.embx"))
        if not shard_paths:
            raise DataError(f"no .embx shards in {path}")
        matrices = [read_embeddings(p) for p in shard_paths]
        dim = matrices[0].dim
        ids: List[str] = []
        for m in matrices:
            if m.dim != dim:
                raise DataError(f"mixed embedding dims under {path}")
            ids.extend(m.ids)
        import numpy as np

        return EmbeddingMatrix(
            dim=dim, ids=ids,
            vectors=np.concatenate([m.vectors for m in matrices], axis=0),
            meta=matrices[0].meta,
        )
    return read_embeddings(path)


def _positive_matrix(matrix: EmbeddingMatrix, samples: Sequence[LabeledSample]) -> EmbeddingMatrix:
    import numpy as np

    index = matrix.index()
    rows, ids = [], []
    for s in samples:
        if s.label == trainset.POSITIVE:
            if s.id not in index:
                raise DataError(f"no embedding for positive sample {s.id!r}")
            rows.append(index[s.id])
            ids.append(s.id)
    if not rows:
        raise DataError("trainset has no positive samples with embeddings")
    return EmbeddingMatrix(dim=matrix.dim, ids=ids,
                           vectors=matrix.vectors[np.asarray(rows)], meta=matrix.meta)


def _benchmark_sources(cfg_list, base_dir: Path) -> List[decontam.BenchmarkSource]:
    sources = []
    for entry in cfg_list:
        if not isinstance(entry, dict) or "name" not in entry or "path" not in entry:
            raise ConfigError("each benchmark needs 'name' and 'path'")
        sources.append(decontam.BenchmarkSource(
            name=str(entry["name"]),
            path=_expand_path(str(entry["path"]), base_dir),
            fields=[str(f) for f in entry.get("fields", ["text"])],
        ))
    return sources


def _score_ngram_shard(model_path: str, shard_path: str, config_hash: str) -> ScoreTable:
    model = NgramModel.load(model_path)
    scorer = NgramScorer(model)
    return scorer.score_documents(read_documents(shard_path), config_hash=config_hash)


# ---------------------------------------------------------------------------
# Stage handlers. Each returns (outputs {role: path}, counts {name: number}).
# ---------------------------------------------------------------------------

def _run_build_trainset(stage: Stage, rt: _Runtime) -> Tuple[Dict[str, str], dict]:
    cfg = stage.config
    out = rt.stage_dir(stage)
    positives = [
        PositiveSource(
            name=str(p["name"]),
            path=_expand_path(str(p["path"]), rt.pipeline.base_dir),
            fields=[str(f) for f in p.get("fields", ["text"])],
        )
        for p in cfg["positives"]
    ]
    spec = TrainsetSpec(
        lang=rt.pipeline.language,
        positive_sources=positives,
        negative_corpus=rt.resolve(stage, "negative_corpus", cfg["negative_corpus"]),
        cap_per_class=int(cfg.get("cap_per_class", 80_000)),
        seed=rt.pipeline.seed,
        heldout_fraction=float(cfg.get("heldout_fraction", trainset.HELDOUT_FRACTION)),
    )
    train_path = out / "train.docs.jsonl"
    heldout_path = out / "heldout.docs.jsonl"
    report = build_trainset(spec, train_path, heldout_path)
    report_path = out / "report.json"
    payload = report.to_dict()
    payload["config_hash"] = rt.pipeline.config_hash
    report_path.write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n",
                           encoding="utf-8")
    outputs = {"train": str(train_path), "heldout": str(heldout_path),
               "report": str(report_path)}
    counts = {"train_docs": report.train_docs, "heldout_docs": report.heldout_docs}
    return outputs, counts


def _run_train_ngram(stage: Stage, rt: _Runtime) -> Tuple[Dict[str, str], dict]:
    cfg = stage.config
    out = rt.stage_dir(stage)
    samples = load_labeled(rt.resolve(stage, "trainset", cfg["trainset"]))
    preset_name = cfg.get("preset") or preset_for_language(rt.pipeline.language)
    if preset_name not in PRESETS:
        raise ConfigError(f"stage {stage.name!r}: unknown preset {preset_name!r}")
    preset = PRESETS[preset_name]
    tok: NgramTokenizerConfig = preset["tokenizer"]
    base: TrainConfig = preset["train"]
    tokenizer = NgramTokenizerConfig(
        mode=str(cfg.get("mode", tok.mode)),
        ngram_order=int(cfg.get("ngram_order", tok.ngram_order)),
        min_count=int(cfg.get("min_count", tok.min_count)),
        lowercase=bool(cfg.get("lowercase", tok.lowercase)),
    )
    train_cfg = TrainConfig(
        epochs=int(cfg.get("epochs", base.epochs)),
        lr=float(cfg.get("lr", base.lr)),
        dim=int(cfg.get("dim", base.dim)),
        bucket_count=int(cfg.get("bucket_count", base.bucket_count)),
        seed=rt.pipeline.seed,
    )
    model = train_ngram(samples, tokenizer, train_cfg)
    model.train_meta["config_hash"] = rt.pipeline.config_hash
    model_path = out / "model.ngqf"
    model.save(model_path)
    counts = {"train_samples": len(samples), "vocab": len(model.vocab)}
    return {"model": str(model_path)}, counts


def _run_train_mlp(stage: Stage, rt: _Runtime) -> Tuple[Dict[str, str], dict]:
    cfg = stage.config
    out = rt.stage_dir(stage)
    samples = load_labeled(rt.resolve(stage, "trainset", cfg["trainset"]))
    matrix = _load_embeddings_any(rt.resolve(stage, "embeddings", cfg["embeddings"]))
    mlp_cfg = mlp.MlpConfig(
        input_dim=matrix.dim,
        hidden_dim=int(cfg.get("hidden_dim", 256)),
        epochs=int(cfg.get("epochs", 6)),
        lr=float(cfg.get("lr", 3e-4)),
        dropout=float(cfg.get("dropout", 0.2)),
        batch_size=int(cfg.get("batch_size", 256)),
        seed=rt.pipeline.seed,
    )
    model = mlp.train_mlp(samples, matrix, mlp_cfg)
    model.train_meta["config_hash"] = rt.pipeline.config_hash
    model_path = out / "model.mlpx"
    model.save(model_path)
    return {"model": str(model_path)}, {"train_samples": len(samples)}


def _run_build_refs(stage: Stage, rt: _Runtime) -> Tuple[Dict[str, str], dict]:
    cfg = stage.config
    out = rt.stage_dir(stage)
    samples = load_labeled(rt.resolve(stage, "trainset", cfg["trainset"]))
    matrix = _load_embeddings_any(rt.resolve(stage, "embeddings", cfg["embeddings"]))
    positives = _positive_matrix(matrix, samples)
    refs = cosine.build_reference_set(
        positives, k=int(cfg.get("k", cosine.DEFAULT_K)), seed=rt.pipeline.seed
    )
    refs_path = out / "refs.embx"
    refs.save(refs_path, config_hash=rt.pipeline.config_hash)
    return {"refs": str(refs_path)}, {"refs": len(refs)}


def _run_score(stage: Stage, rt: _Runtime) -> Tuple[Dict[str, str], dict]:
    cfg = stage.config
    out = rt.stage_dir(stage)
    scorer_kind = str(cfg["scorer"])
    scores_path = out / "scores.tsv"
    config_hash = rt.pipeline.config_hash

    if scorer_kind == "ngram":
        if "corpus" not in cfg or "model" not in cfg:
            raise ConfigError(f"stage {stage.name!r}: ngram scoring needs corpus and model")
        model_path = rt.resolve(stage, "model", cfg["model"])
        files = corpus_files(rt.resolve(stage, "corpus", cfg["corpus"]))
        if rt.pipeline.jobs > 1 and len(files) > 1:
            with ProcessPoolExecutor(max_workers=rt.pipeline.jobs) as pool:
                tables = list(pool.map(
                    _score_ngram_shard,
                    [str(model_path)] * len(files),
                    [str(f) for f in files],
                    [config_hash] * len(files),
                ))
        else:
            model = NgramModel.load(model_path)
            scorer = NgramScorer(model)
            tables = [scorer.score_documents(read_documents(f), config_hash=config_hash)
                      for f in files]
        table = concat_tables(tables)
    elif scorer_kind == "mlp":
        if "model" not in cfg or "embeddings" not in cfg:
            raise ConfigError(f"stage {stage.name!r}: mlp scoring needs model and embeddings")
        model = mlp.MlpModel.load(rt.resolve(stage, "model", cfg["model"]))
        matrix = _load_embeddings_any(rt.resolve(stage, "embeddings", cfg["embeddings"]))
        table = mlp.score_mlp(model, matrix, config_hash=config_hash)
    elif scorer_kind == "cosine":
        if "refs" not in cfg or "embeddings" not in cfg:
            raise ConfigError(f"stage {stage.name!r}: cosine scoring needs refs and embeddings")
        refs = cosine.ReferenceSet.load(rt.resolve(stage, "refs", cfg["refs"]))
        matrix = _load_embeddings_any(rt.resolve(stage, "embeddings", cfg["embeddings"]))
        table = cosine.score_cosine(refs, matrix, config_hash=config_hash)
    else:
        raise ConfigError(f"stage {stage.name!r}: unknown scorer {scorer_kind!r}")

    table.save(scores_path)
    return {"scores": str(scores_path)}, {"scored_docs": len(table)}


def _run_plan(stage: Stage, rt: _Runtime) -> Tuple[Dict[str, str], dict]:
    cfg = stage.config
    out = rt.stage_dir(stage)
    table = ScoreTable.load(rt.resolve(stage, "scores", cfg["scores"]))
    if "retention" in cfg:
        p = float(cfg["retention"])
    elif "token_budget" in cfg:
        if "corpus_manifest" not in cfg:
            raise ConfigError(
                f"stage {stage.name!r}: token_budget needs corpus_manifest"
            )
        manifest_path = rt.resolve(stage, "corpus_manifest", cfg["corpus_manifest"])
        obj = json.loads(Path(manifest_path).read_text(encoding="utf-8"))
        total = int(obj["total_ws_tokens"])
        p = selector.retention_for_budget(total, int(cfg["token_budget"])).fraction
    else:
        raise ConfigError(f"stage {stage.name!r}: needs 'retention' or 'token_budget'")
    plan = selector.plan_selection(table, p, method=str(cfg.get("method", "sort")))
    plan.config_hash = rt.pipeline.config_hash
    plan_path = out / "plan.json"
    plan.save(plan_path)
    return {"plan": str(plan_path)}, {"retained": len(plan.retained),
                                      "fraction": plan.retention_fraction}


def _run_filter(stage: Stage, rt: _Runtime) -> Tuple[Dict[str, str], dict]:
    cfg = stage.config
    out = rt.stage_dir(stage)
    plan = selector.SelectionPlan.load(rt.resolve(stage, "plan", cfg["plan"]))
    corpus = rt.resolve(stage, "corpus", cfg["corpus"])
    run = selector.CorpusFilterRun(plan)
    corpus_path = out / "filtered.docs.jsonl"
    manifest = write_documents(
        (kept for doc in iter_corpus(corpus) if (kept := run.feed(doc)) is not None),
        corpus_path,
    )
    stats = run.finish()
    sidecar = _write_corpus_sidecar(corpus_path, manifest, rt.pipeline.config_hash,
                                    stage.name)
    stats_path = out / "stats.json"
    payload = stats.to_dict()
    payload["config_hash"] = rt.pipeline.config_hash
    stats_path.write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n",
                          encoding="utf-8")
    outputs = {"corpus": str(corpus_path), "manifest": str(sidecar),
               "stats": str(stats_path)}
    return outputs, {"retained_docs": stats.retained_docs,
                     "retained_tokens": stats.retained_tokens}


def _run_mix(stage: Stage, rt: _Runtime) -> Tuple[Dict[str, str], dict]:
    cfg = stage.config
    out = rt.stage_dir(stage)
    filtered = list(iter_corpus(rt.resolve(stage, "filtered", cfg["filtered"])))
    raw = list(iter_corpus(rt.resolve(stage, "raw", cfg["raw"])))
    mixed, stats = selector.mix_replay(filtered, raw, float(cfg["rate"]),
                                       seed=rt.pipeline.seed)
    corpus_path = out / "mixed.docs.jsonl"
    manifest = write_documents(mixed, corpus_path)
    sidecar = _write_corpus_sidecar(corpus_path, manifest, rt.pipeline.config_hash,
                                    stage.name)
    stats_path = out / "stats.json"
    stats_path.write_text(json.dumps(
        {"config_hash": rt.pipeline.config_hash, **stats.__dict__},
        indent=2, sort_keys=True) + "\n", encoding="utf-8")
    outputs = {"corpus": str(corpus_path), "manifest": str(sidecar),
               "stats": str(stats_path)}
    return outputs, {"output_docs": stats.output_docs, "replay_docs": stats.replay_docs}


def _run_decontaminate(stage: Stage, rt: _Runtime) -> Tuple[Dict[str, str], dict]:
    cfg = stage.config
    out = rt.stage_dir(stage)
    sources = _benchmark_sources(cfg["benchmarks"], rt.pipeline.base_dir)
    index = decontam.build_index(sources, n=int(cfg.get("ngram", 13)))
    index_path = out / "index.ngix"
    index.save(index_path)
    run = decontam.DecontaminationRun(index)
    corpus_path = out / "clean.docs.jsonl"
    manifest = write_documents(
        (kept for doc in iter_corpus(rt.resolve(stage, "corpus", cfg["corpus"]))
         if (kept := run.feed(doc)) is not None),
        corpus_path,
    )
    sidecar = _write_corpus_sidecar(corpus_path, manifest, rt.pipeline.config_hash,
                                    stage.name)
    report_path = out / "report.json"
    payload = run.report.to_dict()
    payload["config_hash"] = rt.pipeline.config_hash
    report_path.write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n",
                           encoding="utf-8")
    outputs = {"corpus": str(corpus_path), "manifest": str(sidecar),
               "index": str(index_path), "report": str(report_path)}
    return outputs, {"removed_docs": run.report.removed_docs,
                     "total_docs": run.report.total_docs}


def _run_stats(stage: Stage, rt: _Runtime) -> Tuple[Dict[str, str], dict]:
    cfg = stage.config
    out = rt.stage_dir(stage)
    baseline = list(iter_corpus(rt.resolve(stage, "baseline", cfg["baseline"])))
    runs = []
    for entry in cfg["runs"]:
        if isinstance(entry, str):
            name = entry
            path = (rt.outputs[entry]["corpus"] if entry in rt.outputs
                    else _expand_path(entry, rt.pipeline.base_dir))
        else:
            name = str(entry["name"])
            value = str(entry["path"])
            path = (rt.outputs[value]["corpus"] if value in rt.outputs
                    else _expand_path(value, rt.pipeline.base_dir))
        runs.append((name, list(iter_corpus(path))))
    metric_table = None
    if cfg.get("metric_csv"):
        metric_table = analytics.MetricTable.from_csv(
            _expand_path(str(cfg["metric_csv"]), rt.pipeline.base_dir)
        )
    report = analytics.compare_filters(baseline, runs, metric_table=metric_table)
    report["config_hash"] = rt.pipeline.config_hash
    report_path = out / "report.json"
    csv_path = out / "report.csv"
    analytics.report_to_files(report, report_path, csv_path)
    return ({"report": str(report_path), "csv": str(csv_path)},
            {"runs": len(runs)})


def _run_rank(stage: Stage, rt: _Runtime) -> Tuple[Dict[str, str], dict]:
    cfg = stage.config
    out = rt.stage_dir(stage)
    table = analytics.MetricTable.from_csv(
        _expand_path(str(cfg["metric_csv"]), rt.pipeline.base_dir),
        direction=str(cfg.get("direction", "higher")),
    )
    ranks = analytics.average_rank(table)
    report_path = out / "ranks.json"
    report_path.write_text(json.dumps(
        {"config_hash": rt.pipeline.config_hash, "average_rank": ranks},
        indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return {"report": str(report_path)}, {"approaches": len(ranks)}


def _run_embed_list(stage: Stage, rt: _Runtime) -> Tuple[Dict[str, str], dict]:
    """Emit the handoff list of document shards awaiting external embedding."""
    cfg = stage.config
    out = rt.stage_dir(stage)
    files = corpus_files(rt.resolve(stage, "corpus", cfg["corpus"]))
    embx_dir = Path(_expand_path(str(cfg.get("embx_dir", out / "embx")),
                                 rt.pipeline.base_dir))
    shards = []
    for f in files:
        count = sum(1 for _ in read_documents(f))
        shards.append({
            "docs": str(f),
            "embx": str(embx_dir / (Path(f).name.replace(".docs.jsonl", "") + ".embx")),
            "doc_count": count,
        })
    report_path = out / "embed_manifest.json"
    report_path.write_text(json.dumps(
        {"config_hash": rt.pipeline.config_hash, "max_tokens": 512,
         "dim": 768, "shards": shards},
        indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return {"report": str(report_path)}, {"shards": len(shards)}


def _run_align(stage: Stage, rt: _Runtime) -> Tuple[Dict[str, str], dict]:
    from .embeddings import align as align_op

    cfg = stage.config
    out = rt.stage_dir(stage)
    matrix = _load_embeddings_any(rt.resolve(stage, "embeddings", cfg["embeddings"]))
    report = align_op(matrix, iter_corpus(rt.resolve(stage, "corpus", cfg["corpus"])))
    report_path = out / "alignment.json"
    payload = report.to_dict()
    payload["config_hash"] = rt.pipeline.config_hash
    report_path.write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n",
                           encoding="utf-8")
    return ({"report": str(report_path)},
            {"missing": len(report.missing), "orphans": len(report.orphans)})


_HANDLERS: Dict[str, Callable[[Stage, _Runtime], Tuple[Dict[str, str], dict]]] = {
    "build-trainset": _run_build_trainset,
    "train-ngram": _run_train_ngram,
    "train-mlp": _run_train_mlp,
    "build-refs": _run_build_refs,
    "score": _run_score,
    "plan": _run_plan,
    "filter": _run_filter,
    "mix": _run_mix,
    "decontaminate": _run_decontaminate,
    "stats": _run_stats,
    "rank": _run_rank,
    "embed-list": _run_embed_list,
    "align": _run_align,
}


def _stage_input_paths(stage: Stage, rt: _Runtime) -> Dict[str, str]:
    """Every resolvable file input of a stage, for hashing and hash checks."""
    paths: Dict[str, str] = {}
    refs = STAGE_TYPES[stage.type]["refs"]
    for key in refs:
        value = stage.config.get(key)
        if isinstance(value, str):
            paths[key] = rt.resolve(stage, key, value)
    if stage.type == "build-trainset":
        for i, p in enumerate(stage.config["positives"]):
            paths[f"positives[{i}]"] = _expand_path(str(p["path"]), rt.pipeline.base_dir)
    if stage.type == "decontaminate":
        for i, b in enumerate(stage.config["benchmarks"]):
            paths[f"benchmarks[{i}]"] = _expand_path(str(b["path"]), rt.pipeline.base_dir)
    if stage.type == "stats":
        for i, entry in enumerate(stage.config["runs"]):
            value = entry if isinstance(entry, str) else str(entry["path"])
            if value in rt.outputs:
                paths[f"runs[{i}]"] = rt.outputs[value]["corpus"]
            else:
                paths[f"runs[{i}]"] = _expand_path(value, rt.pipeline.base_dir)
    if stage.type in ("rank", "stats") and stage.config.get("metric_csv"):
        paths["metric_csv"] = _expand_path(str(stage.config["metric_csv"]),
                                           rt.pipeline.base_dir)
    return paths


def _hash_paths(paths: Dict[str, str]) -> Dict[str, dict]:
    hashed = {}
    for key, p in sorted(paths.items()):
        path = Path(p)
        if path.is_dir():
            entries = sorted(str(q) for q in path.iterdir() if q.is_file())
            digest = hashlib.sha256()
            for q in entries:
                digest.update(q.encode())
                digest.update(file_sha256(q).encode())
            hashed[key] = {"path": p, "sha256": digest.hexdigest()}
        elif path.exists():
            hashed[key] = {"path": p, "sha256": file_sha256(path)}
        else:
            raise DataError(f"input {key!r} does not exist: {p}")
    return hashed


def run_pipeline(pipeline: PipelineConfig, dry_run: bool = False) -> dict:
    """Execute stages in order; unchanged stages are skipped.

    Returns the run manifest (also written to workdir/run_manifest.json).
    A failing stage halts the run; the manifest still records the stages
    that completed.
    """
    rt = _Runtime(pipeline)
    pipeline.workdir.mkdir(parents=True, exist_ok=True)
    state_dir = pipeline.workdir / ".state"
    state_dir.mkdir(exist_ok=True)

    manifest: dict = {
        "config_hash": pipeline.config_hash,
        "language": pipeline.language,
        "seed": pipeline.seed,
        "stages": [],
    }
    if dry_run:
        manifest["dry_run"] = True
        for stage in pipeline.stages:
            manifest["stages"].append({"name": stage.name, "type": stage.type,
                                       "skipped": None})
        return manifest

    try:
        for stage in pipeline.stages:
            result = _run_stage(stage, rt, state_dir)
            manifest["stages"].append(result.__dict__)
    except Exception as exc:
        manifest["failed_stage"] = getattr(exc, "stage", None) or "unknown"
        manifest["error"] = str(exc)
        _write_manifest(pipeline, manifest)
        if isinstance(exc, StageError):
            raise
        raise
    _write_manifest(pipeline, manifest)
    return manifest


def _write_manifest(pipeline: PipelineConfig, manifest: dict) -> None:
    path = pipeline.workdir / "run_manifest.json"
    path.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n",
                    encoding="utf-8")


def _run_stage(stage: Stage, rt: _Runtime, state_dir: Path) -> StageResult:
    started = time.perf_counter()
    try:
        input_paths = _stage_input_paths(stage, rt)
        input_hashes = _hash_paths(input_paths)

        foreign = _collect_config_hash(list(input_paths.values()))
        distinct = set(foreign.values())
        if len(distinct) > 1:
            raise DataError(
                f"inputs carry mixed config hashes {sorted(distinct)}; refusing to "
                "combine artifacts from different runs"
            )

        signature = hashlib.sha256(_canonical({
            "type": stage.type,
            "config": stage.config,
            "seed": rt.pipeline.seed,
            "language": rt.pipeline.language,
            "config_hash": rt.pipeline.config_hash,
            "inputs": {k: v["sha256"] for k, v in input_hashes.items()},
        }).encode()).hexdigest()

        state_path = state_dir / f"{stage.name}.json"
        if state_path.exists():
            state = json.loads(state_path.read_text(encoding="utf-8"))
            if state.get("signature") == signature and all(
                Path(o["path"]).exists() and file_sha256(o["path"]) == o["sha256"]
                for o in state.get("outputs", {}).values()
            ):
                rt.outputs[stage.name] = {r: o["path"]
                                          for r, o in state["outputs"].items()}
                log.info("stage %s unchanged, skipping", stage.name)
                return StageResult(
                    name=stage.name, type=stage.type, skipped=True,
                    duration_s=round(time.perf_counter() - started, 6),
                    inputs=input_hashes, outputs=state["outputs"],
                    counts=state.get("counts", {}),
                )

        log.info("stage %s (%s) running", stage.name, stage.type)
        outputs, counts = _HANDLERS[stage.type](stage, rt)
        output_hashes = {role: {"path": p, "sha256": file_sha256(p)}
                         for role, p in outputs.items()}
        rt.outputs[stage.name] = dict(outputs)
        state_path.write_text(json.dumps(
            {"signature": signature, "outputs": output_hashes, "counts": counts},
            indent=2, sort_keys=True) + "\n", encoding="utf-8")
        return StageResult(
            name=stage.name, type=stage.type, skipped=False,
            duration_s=round(time.perf_counter() - started, 6),
            inputs=input_hashes, outputs=output_hashes, counts=counts,
        )
    except StageError:
        raise
    except Exception as exc:
        raise StageError(stage.name, exc) from exc
