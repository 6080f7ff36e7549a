"""Builders for the toy end-to-end corpus used by pipeline and acceptance
tests: a thousand-document corpus where quality anti-correlates with
length, a curated positive source, a benchmark file that contaminates a
few corpus documents, and deterministic synthetic embeddings keyed by
document id (stand-ins for the external embedding service)."""

import json
import random
from pathlib import Path

import numpy as np

from corpusfilter.corpus_io import Document, read_documents, write_documents
from corpusfilter.embeddings import write_embeddings

GOOD_WORDS = ["theorem", "proof", "question", "answer", "science", "history",
              "explain", "because", "therefore", "knowledge"]
JUNK_WORDS = ["click", "buy", "sale", "cheap", "offer", "deal", "free",
              "shipping", "discount", "casino"]

CONTAMINATING_SENTENCE = (
    "the capital of the republic is decided by the national assembly every "
    "seventh year during the spring session"
)


def toy_corpus(n=1000, seed=0, lang="dan_Latn", contaminated=16):
    """Good documents are short and knowledge-like; junk ones are long ads.

    The first `contaminated` documents embed the contaminating sentence so
    decontamination has something to find.
    """
    rng = random.Random(seed)
    docs = []
    for i in range(n):
        good = i % 2 == 0
        words = GOOD_WORDS if good else JUNK_WORDS
        length = rng.randint(8, 20) if good else rng.randint(60, 120)
        text = " ".join(rng.choice(words) for _ in range(length))
        if i < contaminated:
            text = text + " " + CONTAMINATING_SENTENCE
        docs.append(Document(id=f"doc{i:06d}", lang=lang, text=text))
    return docs


def write_toy_corpus(path, **kwargs):
    docs = toy_corpus(**kwargs)
    manifest = write_documents(docs, path)
    return docs, manifest


def write_positive_source(path, n=300, seed=1):
    """Curated knowledge-style records with question/answer fields."""
    rng = random.Random(seed)
    with open(path, "w", encoding="utf-8") as fh:
        for i in range(n):
            words = [rng.choice(GOOD_WORDS) for _ in range(rng.randint(6, 14))]
            record = {
                "question": " ".join(words[: len(words) // 2]) + "?",
                "answer": " ".join(words[len(words) // 2 :]),
            }
            fh.write(json.dumps(record, ensure_ascii=False) + "\n")
    return str(path)


def write_benchmark_file(path, extra_questions=()):
    """One benchmark whose first question contains the contaminating sentence."""
    questions = [
        "In the republic described by the statute, " + CONTAMINATING_SENTENCE + " of parliament.",
        *extra_questions,
    ]
    with open(path, "w", encoding="utf-8") as fh:
        for q in questions:
            fh.write(json.dumps({"question": q}, ensure_ascii=False) + "\n")
    return str(path)


def synthetic_vector(doc_id, text, dim=768):
    """Deterministic pseudo-embedding: quality-correlated direction plus
    id-seeded noise. Plays the role of the external encoder in tests."""
    seed = np.frombuffer(doc_id.encode("utf-8").ljust(8, b"\0")[:8], dtype=np.uint64)
    rng = np.random.Generator(np.random.PCG64(int(seed[0])))
    vec = rng.normal(scale=0.05, size=dim)
    good = sum(text.count(w) for w in GOOD_WORDS)
    junk = sum(text.count(w) for w in JUNK_WORDS)
    strength = (good - junk) / max(good + junk, 1)
    vec[:16] += strength
    return vec.astype(np.float32)


def write_synthetic_embeddings(docs_path, embx_path, dim=768):
    rows = ((doc.id, synthetic_vector(doc.id, doc.text, dim))
            for doc in read_documents(docs_path))
    return write_embeddings(rows, dim, embx_path, meta={"model": "synthetic-test-encoder"})


def make_pipeline_inputs(root: Path, n=400, contaminated=6):
    """inputs/ directory with corpus, manifest, positive source, benchmark."""
    inputs = root / "inputs"
    inputs.mkdir(parents=True, exist_ok=True)
    corpus = inputs / "corpus.docs.jsonl"
    _, manifest = write_toy_corpus(corpus, n=n, contaminated=contaminated)
    manifest.save(inputs / "corpus.manifest.json")
    write_positive_source(inputs / "quiz.jsonl", n=200)
    write_benchmark_file(inputs / "benchmark.jsonl")
    return inputs


def write_full_pipeline_config(root: Path, workdir="out") -> Path:
    """A config exercising every corpus-facing stage of the toy pipeline."""
    import yaml

    config = {
        "language": "dan_Latn",
        "seed": 42,
        "workdir": workdir,
        "stages": [
            {"name": "trainset", "type": "build-trainset",
             "positives": [{"name": "quiz", "path": "inputs/quiz.jsonl",
                            "fields": ["question", "answer"]}],
             "negative_corpus": "inputs/corpus.docs.jsonl",
             "cap_per_class": 150},
            {"name": "classifier", "type": "train-ngram",
             "trainset": "trainset", "bucket_count": 4096, "dim": 32,
             "epochs": 4},
            {"name": "scores", "type": "score", "scorer": "ngram",
             "model": "classifier", "corpus": "inputs/corpus.docs.jsonl"},
            {"name": "plan", "type": "plan", "scores": "scores",
             "retention": 0.2},
            {"name": "filtered", "type": "filter",
             "corpus": "inputs/corpus.docs.jsonl", "plan": "plan"},
            {"name": "mixed", "type": "mix", "filtered": "filtered",
             "raw": "inputs/corpus.docs.jsonl", "rate": 0.05},
            {"name": "clean", "type": "decontaminate",
             "corpus": "inputs/corpus.docs.jsonl",
             "benchmarks": [{"name": "bench", "path": "inputs/benchmark.jsonl",
                             "fields": ["question"]}]},
            {"name": "report", "type": "stats",
             "baseline": "inputs/corpus.docs.jsonl",
             "runs": ["filtered", "clean"]},
        ],
    }
    path = root / "pipeline.yaml"
    path.write_text(yaml.safe_dump(config, sort_keys=False), encoding="utf-8")
    return path


def workdir_digest(root: Path) -> dict:
    """Relative path -> sha256 for every artifact under a workdir, ignoring
    run bookkeeping (state files and the timing-bearing manifest)."""
    import hashlib

    out = {}
    for p in sorted(root.rglob("*")):
        if not p.is_file():
            continue
        rel = str(p.relative_to(root))
        if rel.startswith(".state") or rel == "run_manifest.json":
            continue
        out[rel] = hashlib.sha256(p.read_bytes()).hexdigest()
    return out
