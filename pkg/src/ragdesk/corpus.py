"""Corpus discovery, content-hash manifests, change detection, and remote sync.

The corpus is a directory of Markdown/plain-text files. A manifest maps
each corpus-relative path to the SHA-256 of its raw bytes; diffing two
manifests yields the add/modify/remove set that drives rebuild-or-skip
decisions during ingestion.
"""

from __future__ import annotations

import hashlib
import json
import re
from dataclasses import dataclass, field
from datetime import datetime, timezone
from pathlib import Path, PurePosixPath
from typing import Callable, Iterable, Protocol

DEFAULT_EXTENSIONS = frozenset({".md", ".txt"})
MANIFEST_FILENAME = ".manifest.json"

# ATX heading: 1-6 hashes, at least one space, non-empty text.
ATX_HEADING_RE = re.compile(r"^(#{1,6})[ \t]+(\S.*?)[ \t]*$")
# Fence opener/closer: 3+ backticks or tildes, up to 3 leading spaces.
FENCE_RE = re.compile(r"^ {0,3}(`{3,}|~{3,})")

_HEX64_RE = re.compile(r"^[0-9a-f]{64}$")


class CorpusError(Exception):
    """Base class for corpus-layer failures."""


class ScanError(CorpusError):
    """The corpus root or one of its files could not be read."""


class StaleManifestError(CorpusError):
    """A manifest entry no longer matches the filesystem."""


class ManifestFormatError(CorpusError):
    """A serialized manifest could not be parsed."""


class RemoteSyncError(CorpusError):
    """The remote source could not be reached or mirrored."""


def _utcnow() -> datetime:
    return datetime.now(timezone.utc)


def heading_text(line: str) -> tuple[int, str] | None:
    """Return (level, text) if ``line`` is an ATX heading, else None."""
    m = ATX_HEADING_RE.match(line)
    if not m:
        return None
    text = re.sub(r"[ \t]+#+[ \t]*$", "", m.group(2)).strip()
    if not text:
        return None
    return len(m.group(1)), text


def extract_title(markdown_text: str, fallback: str) -> str:
    """First level-1 ATX heading outside a code fence, else ``fallback``."""
    fence: str | None = None
    for line in markdown_text.splitlines():
        fm = FENCE_RE.match(line)
        if fence is not None:
            if fm and fm.group(1)[0] == fence[0] and len(fm.group(1)) >= len(fence):
                fence = None
            continue
        if fm:
            fence = fm.group(1)
            continue
        parsed = heading_text(line)
        if parsed and parsed[0] == 1:
            return parsed[1]
    return fallback


@dataclass(frozen=True)
class SourceDocument:
    """One corpus file, decoded and ready for chunking."""

    doc_id: str
    title: str
    relative_path: str
    content_hash: str
    markdown_text: str
    byte_length: int


@dataclass(frozen=True)
class Manifest:
    """Map of corpus-relative path -> SHA-256 hex digest of raw bytes."""

    entries: dict[str, str]
    generated_at: datetime

    def __post_init__(self) -> None:
        for path, digest in self.entries.items():
            if not _is_normalized(path):
                raise ManifestFormatError(f"manifest key is not normalized: {path!r}")
            if not _HEX64_RE.match(digest):
                raise ManifestFormatError(f"manifest hash is not 64-char lowercase hex: {digest!r}")


@dataclass(frozen=True)
class ChangeSet:
    """Paths added, modified, or removed between two manifests."""

    added: frozenset[str] = field(default_factory=frozenset)
    modified: frozenset[str] = field(default_factory=frozenset)
    removed: frozenset[str] = field(default_factory=frozenset)

    def is_empty(self) -> bool:
        return not (self.added or self.modified or self.removed)


class RemoteSource(Protocol):
    """A synchronizable remote listing of corpus files.

    Implementations raise RemoteSyncError when the remote is unreachable.
    """

    def listing(self) -> dict[str, str]:
        """Map of normalized relative path -> SHA-256 hex of file bytes."""
        ...

    def fetch(self, relative_path: str) -> bytes:
        """Raw bytes of one remote file."""
        ...


def _is_normalized(path: str) -> bool:
    if not path or "\\" in path or path.startswith("/"):
        return False
    parts = path.split("/")
    return all(p not in ("", ".", "..") for p in parts)


def _normalize(relative: Path) -> str:
    return str(PurePosixPath(*relative.parts))


def _hash_bytes(data: bytes) -> str:
    return hashlib.sha256(data).hexdigest()


def _iter_corpus_files(root: Path, include_extensions: Iterable[str]) -> list[Path]:
    suffixes = {s if s.startswith(".") else f".{s}" for s in include_extensions}
    found = []
    for path in root.rglob("*"):
        if not path.is_file():
            continue
        rel = path.relative_to(root)
        # dotfiles (and dot-directories) are never part of the corpus
        if any(part.startswith(".") for part in rel.parts):
            continue
        if path.suffix.lower() in suffixes:
            found.append(path)
    return sorted(found, key=lambda p: _normalize(p.relative_to(root)))


def scan_corpus(
    root: str | Path,
    include_extensions: Iterable[str] = DEFAULT_EXTENSIONS,
    *,
    now: Callable[[], datetime] = _utcnow,
) -> Manifest:
    """Hash every matching file under ``root`` into a Manifest.

    Aborts on the first unreadable file; a partial manifest is never
    returned.
    """
    root = Path(root)
    if not root.is_dir():
        raise ScanError(f"corpus root is not a readable directory: {root}")
    entries: dict[str, str] = {}
    for path in _iter_corpus_files(root, include_extensions):
        rel = _normalize(path.relative_to(root))
        try:
            data = path.read_bytes()
        except OSError as exc:
            raise ScanError(f"cannot read corpus file {rel}: {exc}") from exc
        entries[rel] = _hash_bytes(data)
    return Manifest(entries=entries, generated_at=now())


def diff_manifests(old: Manifest | None, new: Manifest) -> ChangeSet:
    """Set difference of two manifests by path, hash-compared on shared paths.

    A missing previous manifest (first ingest) reads as everything added.
    """
    if old is None:
        return ChangeSet(added=frozenset(new.entries), removed=frozenset(), modified=frozenset())
    old_keys = set(old.entries)
    new_keys = set(new.entries)
    shared = old_keys & new_keys
    return ChangeSet(
        added=frozenset(new_keys - old_keys),
        removed=frozenset(old_keys - new_keys),
        modified=frozenset(k for k in shared if old.entries[k] != new.entries[k]),
    )


def load_documents(root: str | Path, manifest: Manifest) -> list[SourceDocument]:
    """Load one SourceDocument per manifest entry, ordered by relative path.

    Decoding never aborts (invalid UTF-8 is replaced); a vanished file does.
    """
    root = Path(root)
    documents = []
    for rel in sorted(manifest.entries):
        path = root / rel
        try:
            data = path.read_bytes()
        except FileNotFoundError as exc:
            raise StaleManifestError(f"manifest entry vanished from corpus: {rel}") from exc
        except OSError as exc:
            raise StaleManifestError(f"manifest entry unreadable: {rel}: {exc}") from exc
        text = data.decode("utf-8", errors="replace")
        documents.append(
            SourceDocument(
                doc_id=rel,
                title=extract_title(text, fallback=PurePosixPath(rel).stem),
                relative_path=rel,
                content_hash=_hash_bytes(data),
                markdown_text=text,
                byte_length=len(data),
            )
        )
    return documents


def serialize_manifest(manifest: Manifest) -> str:
    """Stable JSON form: sorted keys, UTF-8, trailing newline."""
    payload = {
        "generated_at": manifest.generated_at.isoformat(),
        "entries": dict(sorted(manifest.entries.items())),
    }
    return json.dumps(payload, ensure_ascii=False, indent=2, sort_keys=True) + "\n"


def parse_manifest(text: str) -> Manifest:
    try:
        payload = json.loads(text)
        generated_at = datetime.fromisoformat(payload["generated_at"])
        entries = dict(payload["entries"])
    except (ValueError, KeyError, TypeError) as exc:
        raise ManifestFormatError(f"malformed manifest: {exc}") from exc
    return Manifest(entries=entries, generated_at=generated_at)


def manifest_path(root: str | Path) -> Path:
    return Path(root) / MANIFEST_FILENAME


def load_stored_manifest(root: str | Path) -> Manifest | None:
    """Previously persisted manifest for ``root``, or None if absent."""
    path = manifest_path(root)
    if not path.exists():
        return None
    return parse_manifest(path.read_text(encoding="utf-8"))


def store_manifest(root: str | Path, manifest: Manifest) -> None:
    path = manifest_path(root)
    tmp = path.with_suffix(".json.tmp")
    tmp.write_text(serialize_manifest(manifest), encoding="utf-8")
    tmp.replace(path)


class LocalDirectorySource:
    """Reference RemoteSource backed by a local directory.

    Stands in for any cloud-drive integration: the remote listing is the
    directory's own manifest scan.
    """

    def __init__(self, directory: str | Path, include_extensions: Iterable[str] = DEFAULT_EXTENSIONS):
        self._directory = Path(directory)
        self._extensions = frozenset(include_extensions)

    def listing(self) -> dict[str, str]:
        try:
            manifest = scan_corpus(self._directory, self._extensions)
        except ScanError as exc:
            raise RemoteSyncError(f"remote listing failed: {exc}") from exc
        return dict(manifest.entries)

    def fetch(self, relative_path: str) -> bytes:
        try:
            return (self._directory / relative_path).read_bytes()
        except OSError as exc:
            raise RemoteSyncError(f"remote fetch failed for {relative_path}: {exc}") from exc


def sync_remote(
    source: RemoteSource,
    root: str | Path,
    include_extensions: Iterable[str] = DEFAULT_EXTENSIONS,
) -> ChangeSet:
    """Mirror the remote listing into ``root`` and report what changed.

    All downloads are fetched before any local write, so an unreachable
    remote leaves the local corpus untouched.
    """
    root = Path(root)
    root.mkdir(parents=True, exist_ok=True)
    remote = source.listing()
    local = scan_corpus(root, include_extensions)
    changes = diff_manifests(local, Manifest(entries=remote, generated_at=_utcnow()))
    fetched = {rel: source.fetch(rel) for rel in sorted(changes.added | changes.modified)}
    for rel, data in fetched.items():
        target = root / rel
        target.parent.mkdir(parents=True, exist_ok=True)
        target.write_bytes(data)
    for rel in changes.removed:
        (root / rel).unlink(missing_ok=True)
    return changes
