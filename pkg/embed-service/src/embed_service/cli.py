"""Batch CLI: embed document shards into .embx files.

Usage:
    embed-service --in corpus.docs.jsonl --out corpus.embx
    embed-service --in shards_dir --out embx_dir --batch-size 64
    embed-service --in corpus.docs.jsonl --out corpus.embx \
        --model /path/to/local/encoder --fast
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from .encoder import DocumentEncoder, EncoderConfig

log = logging.getLogger("embed_service")


def shard_pairs(in_path: Path, out_path: Path):
    """Map an input file/directory onto output .embx paths."""
    if in_path.is_dir():
        shards = sorted(in_path.glob("*.docs.jsonl")) or sorted(in_path.glob("*.jsonl"))
        if not shards:
            raise FileNotFoundError(f"no document shards in {in_path}")
        out_path.mkdir(parents=True, exist_ok=True)
        return [(s, out_path / (s.name.replace(".docs.jsonl", "").replace(".jsonl", "") + ".embx"))
                for s in shards]
    return [(in_path, out_path)]


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="embed-service",
        description="Embed document shards with a multilingual transformer encoder",
    )
    parser.add_argument("--in", dest="in_path", required=True,
                        help="document file or directory of shards")
    parser.add_argument("--out", dest="out_path", required=True,
                        help=".embx file (or directory when --in is a directory)")
    parser.add_argument("--model", default=None,
                        help="model name or local path (default: xlm-roberta-base)")
    parser.add_argument("--batch-size", type=int, default=32)
    parser.add_argument("--max-tokens", type=int, default=512)
    parser.add_argument("--device", default="cpu")
    parser.add_argument("--fast", action="store_true",
                        help="throughput mode: multi-threaded, flagged in the shard header")
    parser.add_argument("--summary", help="write the run summary JSON here")
    args = parser.parse_args(argv)

    logging.basicConfig(level=logging.INFO,
                        format="%(asctime)s %(levelname)s %(message)s")

    config = EncoderConfig(
        model_name=args.model or EncoderConfig.model_name,
        max_tokens=args.max_tokens,
        batch_size=args.batch_size,
        deterministic=not args.fast,
        device=args.device,
    )
    try:
        encoder = DocumentEncoder(config)
    except Exception as exc:
        log.error("cannot load encoder %r: %s", config.model_name, exc)
        return 1

    pairs = shard_pairs(Path(args.in_path), Path(args.out_path))
    total_rows = 0
    total_errors = 0
    shards = []
    for docs, embx in pairs:
        summary = encoder.embed_corpus(docs, embx)
        shards.extend(summary.shards)
        total_rows += summary.embedded
        total_errors += len(summary.errors)
        for e in summary.errors:
            log.warning("skipped %s: %s", e.doc_id, e.reason)
        log.info("%s -> %s (%d rows, %d errors)", docs, embx,
                 summary.embedded, len(summary.errors))
    if args.summary:
        Path(args.summary).write_text(json.dumps(
            {"shards": shards, "rows": total_rows, "errors": total_errors},
            indent=2, sort_keys=True) + "\n", encoding="utf-8")
    print(f"embedded {total_rows} documents into {len(pairs)} shard(s), "
          f"{total_errors} item errors")
    return 0


if __name__ == "__main__":
    sys.exit(main())
