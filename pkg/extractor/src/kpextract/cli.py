"""Command-line front end: one operation, extract.

Exit codes: 0 success, 1 model load failure, 2 input or usage error.
Skipped sentences are reported on stderr and recorded in the manifest
written next to the output store.
"""

from __future__ import annotations

import argparse
import json
import sys
from datetime import datetime, timezone

from . import __version__
from .conllu import read_sentences
from .extract import (
    POOLINGS,
    ExtractionConfig,
    ModelLoadError,
    extract_records,
    load_backend,
    store_tag,
)
from .kpeb import write_store


def _now() -> str:
    return datetime.now(timezone.utc).isoformat(timespec="seconds")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="kpextract",
        description="dump per-word transformer embeddings to a KPEB store",
    )
    parser.add_argument("--treebank", required=True)
    parser.add_argument("--out", required=True)
    parser.add_argument("--model", required=True)
    parser.add_argument("--layer", type=int, default=None,
                        help="hidden layer index; default is the final layer")
    parser.add_argument("--pooling", choices=POOLINGS, default="mean")
    parser.add_argument("--batch", type=int, default=16)
    parser.add_argument("--max-tokens", type=int, default=None,
                        help="skip sentences with more subword pieces")
    return parser


def run(args: argparse.Namespace) -> int:
    started = _now()
    config = ExtractionConfig(
        model_tag=args.model,
        layer=args.layer,
        pooling=args.pooling,
        max_tokens=args.max_tokens,
        batch_size=args.batch,
    )
    try:
        with open(args.treebank, "r", encoding="utf-8") as fh:
            sentences = read_sentences(fh.read())
    except FileNotFoundError:
        raise ValueError(f"no such file: {args.treebank}")
    backend = load_backend(config)
    records, skipped = extract_records(sentences, config, backend)
    for sid, pieces in skipped:
        print(
            f"skipped {sid}: {pieces} pieces exceed budget "
            f"{backend.max_tokens}",
            file=sys.stderr,
        )
    with open(args.out, "wb") as fh:
        write_store(fh, backend.d1, store_tag(config, backend), records)
    manifest = {
        "treebank": args.treebank,
        "model": args.model,
        "layer": backend.layer,
        "pooling": args.pooling,
        "batch": args.batch,
        "max_tokens": backend.max_tokens,
        "d1": backend.d1,
        "package_version": __version__,
        "started": started,
        "finished": _now(),
        "sentence_count": len(sentences),
        "record_count": len(records),
        "skipped": [{"id": sid, "pieces": pieces} for sid, pieces in skipped],
    }
    with open(args.out + ".manifest.json", "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")
    print(
        f"wrote {len(records)} of {len(sentences)} sentences "
        f"(d1={backend.d1}) -> {args.out}"
    )
    return 0


def main(argv: list | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return run(args)
    except ModelLoadError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except (ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
