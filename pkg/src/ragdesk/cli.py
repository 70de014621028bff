"""Command-line entry points: ingest, serve, export-feedback.

Ingestion is hash-gated: an unchanged corpus is detected from the stored
manifest and skipped without touching the index. A scheduler that wants
periodic refresh just runs `ragdesk ingest` on a timer; the skip makes that
cheap.
"""

from __future__ import annotations

import argparse
import sys
import time
from datetime import datetime, timezone
from pathlib import Path
from typing import Sequence, TextIO

from .chatstore import ChatStore, make_engine, write_feedback_csv
from .chunking import ChunkConfig, chunk_document
from .config import AppConfig, ConfigError, build_embedder, build_vector_store, load_config
from .corpus import (
    CorpusError,
    diff_manifests,
    load_documents,
    load_stored_manifest,
    scan_corpus,
    store_manifest,
)
from .embedding import EmbeddingError, EmbeddingProvider, embed_chunks
from .policy import install_reload_signal
from .server import create_app
from .vectorstore import VectorStore, VectorStoreError


def _echo(out: TextIO | None, text: str) -> None:
    # late-bound default so redirections of sys.stdout are respected
    print(text, file=out if out is not None else sys.stdout)


def ingest_command(
    corpus_dir: Path,
    *,
    config: AppConfig,
    force: bool = False,
    dry_run: bool = False,
    embedder: EmbeddingProvider | None = None,
    store: VectorStore | None = None,
    out: TextIO | None = None,
) -> int:
    """scan -> diff -> (skip | chunk -> embed -> build -> swap -> manifest)."""
    if not corpus_dir.is_dir():
        _echo(out, f"error: corpus directory {corpus_dir} does not exist")
        return 2

    started = time.monotonic()
    try:
        fresh = scan_corpus(corpus_dir)
    except CorpusError as exc:
        _echo(out, f"error: corpus scan failed: {exc}")
        return 1

    stored = load_stored_manifest(corpus_dir)
    changes = diff_manifests(stored, fresh)

    if dry_run:
        _echo(out, f"added: {len(changes.added)} modified: {len(changes.modified)} removed: {len(changes.removed)}")
        for path in sorted(changes.added):
            _echo(out, f"  + {path}")
        for path in sorted(changes.modified):
            _echo(out, f"  ~ {path}")
        for path in sorted(changes.removed):
            _echo(out, f"  - {path}")
        return 0

    if stored is not None and changes.is_empty() and not force:
        _echo(out, "no changes, rebuild skipped")
        return 0

    embedder = embedder or build_embedder(config)
    store = store or build_vector_store(config)

    try:
        documents = load_documents(corpus_dir, fresh)
        chunk_config = ChunkConfig()
        chunks = []
        for doc in documents:
            chunks.extend(chunk_document(doc, chunk_config))
        embedded = embed_chunks(embedder, chunks)
        generation_id = store.build_generation(embedded, model_id=embedder.model_id)
        store.activate(generation_id)
    except (CorpusError, EmbeddingError, VectorStoreError) as exc:
        _echo(out, f"error: rebuild failed, live index untouched: {exc}")
        return 1

    store_manifest(corpus_dir, fresh)
    elapsed = time.monotonic() - started
    _echo(
        out,
        f"rebuilt index: {len(documents)} documents, {len(chunks)} chunks, "
        f"generation {generation_id} live ({elapsed:.2f}s)",
    )
    return 0


def serve_command(config: AppConfig, *, out: TextIO | None = None) -> int:
    import uvicorn

    from .config import build_server_state

    state = build_server_state(config)
    app = create_app(state, static_dir=config.static_dir)
    state.monitor.start()
    install_reload_signal(state.pipeline.policy_manager)
    _echo(out, f"serving on http://{config.host}:{config.port}")
    try:
        uvicorn.run(app, host=config.host, port=config.port, log_level="info")
    finally:
        state.monitor.stop()
    return 0


def _parse_when(value: str | None, flag: str) -> datetime | None:
    if value is None:
        return None
    try:
        parsed = datetime.fromisoformat(value)
    except ValueError:
        raise SystemExit(f"error: {flag} must be an ISO 8601 timestamp, got {value!r}")
    if parsed.tzinfo is None:
        parsed = parsed.replace(tzinfo=timezone.utc)
    return parsed


def export_feedback_command(
    config: AppConfig,
    *,
    since: datetime | None = None,
    until: datetime | None = None,
    out_path: Path | None = None,
    out: TextIO | None = None,
) -> int:
    chat = ChatStore(make_engine(config.db_url))
    records = chat.export_feedback(since=since, until=until)
    if out_path is None:
        write_feedback_csv(records, out if out is not None else sys.stdout)
    else:
        with open(out_path, "w", encoding="utf-8", newline="") as fh:
            count = write_feedback_csv(records, fh)
        _echo(out, f"wrote {count} feedback rows to {out_path}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="ragdesk", description="Retrieval-augmented help-desk engine")
    sub = parser.add_subparsers(dest="command", required=True)

    ingest = sub.add_parser("ingest", help="scan the corpus and rebuild the index if it changed")
    ingest.add_argument("--corpus", type=Path, help="corpus directory (defaults to the config value)")
    ingest.add_argument("--config", type=Path, help="config file path")
    ingest.add_argument("--force", action="store_true", help="rebuild even when no changes detected")
    ingest.add_argument("--dry-run", action="store_true", help="print the change set and exit")

    serve = sub.add_parser("serve", help="run the HTTP server")
    serve.add_argument("--config", type=Path, help="config file path")

    export = sub.add_parser("export-feedback", help="export user feedback as CSV")
    export.add_argument("--config", type=Path, help="config file path")
    export.add_argument("--since", help="include feedback at or after this ISO timestamp")
    export.add_argument("--until", help="include feedback at or before this ISO timestamp")
    export.add_argument("--out", type=Path, help="output file (stdout when omitted)")

    return parser


def main(argv: Sequence[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        config = load_config(args.config)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2

    if args.command == "ingest":
        corpus_dir = args.corpus if args.corpus is not None else Path(config.corpus_dir)
        return ingest_command(corpus_dir, config=config, force=args.force, dry_run=args.dry_run)
    if args.command == "serve":
        return serve_command(config)
    if args.command == "export-feedback":
        return export_feedback_command(
            config,
            since=_parse_when(args.since, "--since"),
            until=_parse_when(args.until, "--until"),
            out_path=args.out,
        )
    raise AssertionError(f"unhandled command {args.command}")


if __name__ == "__main__":
    sys.exit(main())
