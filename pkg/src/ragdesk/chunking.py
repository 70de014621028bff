"""Two-stage document chunking.

Stage 1 segments a document at Markdown ATX headings (fenced code blocks
are opaque). Stage 2 splits each segment into size-bounded pieces with a
recursive separator hierarchy and character overlap, so every chunk fits
the retrieval window while staying inside one structural section.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

from .corpus import FENCE_RE, SourceDocument, heading_text

DEFAULT_CHUNK_SIZE = 2000
DEFAULT_CHUNK_OVERLAP = 400
DEFAULT_SEPARATORS = ("\n\n", "\n", ". ", " ")


@dataclass(frozen=True)
class ChunkConfig:
    """Size/overlap bounds and the coarse-to-fine separator hierarchy."""

    chunk_size: int = DEFAULT_CHUNK_SIZE
    chunk_overlap: int = DEFAULT_CHUNK_OVERLAP
    separators: tuple[str, ...] = DEFAULT_SEPARATORS

    def __post_init__(self) -> None:
        if self.chunk_size <= 0:
            raise ValueError("chunk_size must be positive")
        if not 0 <= self.chunk_overlap < self.chunk_size:
            raise ValueError("chunk_overlap must satisfy 0 <= overlap < chunk_size")
        if not self.separators or any(not s for s in self.separators):
            raise ValueError("separators must be a non-empty list of non-empty strings")


@dataclass(frozen=True)
class Segment:
    """A structurally contiguous slice of one document."""

    text: str
    section_path: tuple[str, ...]
    doc_id: str
    start_offset: int


@dataclass(frozen=True)
class ChunkRecord:
    """One retrievable unit: bounded text plus provenance."""

    chunk_id: str
    doc_id: str
    seq: int
    text: str
    char_count: int
    section_path: tuple[str, ...]
    source_title: str


def split_markdown(doc: SourceDocument) -> list[Segment]:
    """Segment a document at ATX headings (levels 1-6), fences kept intact.

    Heading lines become section_path entries rather than segment text; a
    heading at level N truncates the path to N-1 entries before appending,
    so skipped levels collapse. Whitespace-only blocks produce no segment.
    """
    segments: list[Segment] = []
    path: list[str] = []
    block_lines: list[str] = []
    block_start = 0
    offset = 0
    fence: str | None = None

    def flush() -> None:
        raw = "".join(block_lines)
        text = raw.strip()
        if text:
            lead = len(raw) - len(raw.lstrip())
            segments.append(
                Segment(
                    text=text,
                    section_path=tuple(path_at_flush),
                    doc_id=doc.doc_id,
                    start_offset=block_start + lead,
                )
            )

    path_at_flush = list(path)
    for line in doc.markdown_text.splitlines(keepends=True):
        stripped = line.rstrip("\r\n")
        fm = FENCE_RE.match(stripped)
        if fence is not None:
            block_lines.append(line)
            if fm and fm.group(1)[0] == fence[0] and len(fm.group(1)) >= len(fence):
                fence = None
            offset += len(line)
            continue
        if fm:
            fence = fm.group(1)
            block_lines.append(line)
            offset += len(line)
            continue
        parsed = heading_text(stripped)
        if parsed is not None:
            flush()
            level, title = parsed
            del path[level - 1 :]
            path.append(title)
            path_at_flush = list(path)
            block_lines = []
            block_start = offset + len(line)
        else:
            block_lines.append(line)
        offset += len(line)
    flush()
    return segments


def split_recursive(text: str, cfg: ChunkConfig = ChunkConfig()) -> list[str]:
    """Split ``text`` into pieces of at most cfg.chunk_size characters.

    The text is split on the first separator in the hierarchy that occurs;
    fragments still over the limit are re-split with the next finer
    separator; adjacent fragments are then greedily merged back (joined by
    the separator that produced them) while the piece stays within the
    limit, seeding each new piece with up to cfg.chunk_overlap trailing
    characters of the previous one. Text containing no separator at all
    falls back to a sliding window of stride chunk_size - chunk_overlap.
    """
    if not text:
        return []
    return [p for p in _split(text, cfg.separators, cfg) if p]


def _split(text: str, separators: Sequence[str], cfg: ChunkConfig) -> list[str]:
    if len(text) <= cfg.chunk_size:
        return [text]
    sep = None
    finer: Sequence[str] = ()
    for i, candidate in enumerate(separators):
        if candidate in text:
            sep = candidate
            finer = separators[i + 1 :]
            break
    if sep is None:
        return _sliding_window(text, cfg)

    fragments = [f for f in text.split(sep) if f]
    pieces: list[str] = []
    pending: list[str] = []
    for fragment in fragments:
        if len(fragment) > cfg.chunk_size:
            if pending:
                pieces.extend(_merge(pending, sep, cfg))
                pending = []
            pieces.extend(_split(fragment, finer, cfg))
        else:
            pending.append(fragment)
    if pending:
        pieces.extend(_merge(pending, sep, cfg))
    return pieces


def _merge(fragments: list[str], sep: str, cfg: ChunkConfig) -> list[str]:
    """Greedily pack fragments into pieces <= chunk_size, overlap-seeded."""
    sep_len = len(sep)
    pieces: list[str] = []
    window: list[str] = []
    window_len = 0
    for fragment in fragments:
        added = len(fragment) + (sep_len if window else 0)
        if window and window_len + added > cfg.chunk_size:
            pieces.append(sep.join(window))
            # keep at most chunk_overlap trailing characters as the seed,
            # and guarantee the incoming fragment fits alongside it
            while window and (
                window_len > cfg.chunk_overlap
                or window_len + len(fragment) + (sep_len if window else 0) > cfg.chunk_size
            ):
                dropped = window.pop(0)
                window_len -= len(dropped) + (sep_len if window else 0)
        window.append(fragment)
        window_len += len(fragment) + (sep_len if len(window) > 1 else 0)
    if window:
        pieces.append(sep.join(window))
    return pieces


def _sliding_window(text: str, cfg: ChunkConfig) -> list[str]:
    stride = cfg.chunk_size - cfg.chunk_overlap
    pieces = []
    start = 0
    while True:
        end = min(start + cfg.chunk_size, len(text))
        pieces.append(text[start:end])
        if end >= len(text):
            return pieces
        start += stride


def chunk_document(doc: SourceDocument, cfg: ChunkConfig = ChunkConfig()) -> list[ChunkRecord]:
    """Stage-1 then stage-2 split with provenance, seq assigned in order."""
    records: list[ChunkRecord] = []
    seq = 0
    for segment in split_markdown(doc):
        for piece in split_recursive(segment.text, cfg):
            records.append(
                ChunkRecord(
                    chunk_id=f"{doc.doc_id}#{seq}",
                    doc_id=doc.doc_id,
                    seq=seq,
                    text=piece,
                    char_count=len(piece),
                    section_path=segment.section_path,
                    source_title=doc.title,
                )
            )
            seq += 1
    return records
