"""Shared fixtures: corpora on disk, deterministic embedders, scripted roles."""

from __future__ import annotations

import warnings
from pathlib import Path

import pytest

from ragdesk.chatstore import ChatStore, HistoryCache, make_engine
from ragdesk.embedding import HashedTrigramEmbedder
from ragdesk.policy import load_default_policy
from ragdesk.providers import ScriptedChatProvider, default_roles
from ragdesk.vectorstore import FileStorage, VectorStore

warnings.filterwarnings("ignore", message="Using `httpx` with `starlette.testclient`")


FIVE_DOC_CORPUS = {
    "deposit.md": (
        "# Depositing Structures\n\n"
        "## Getting started\n\n"
        "To deposit a structure, create an account on the deposition portal and "
        "upload your coordinate file in mmCIF format. Validation runs automatically "
        "after upload and reports any missing mandatory items.\n\n"
        "## Cryo-EM maps\n\n"
        "Cryo-EM depositions need both the map file and the fitted model. Include "
        "the half maps when available so the validation pipeline can compute FSC curves.\n"
    ),
    "validation.md": (
        "# Validation Reports\n\n"
        "A validation report summarizes geometry, fit-to-data, and clashscore "
        "metrics for an entry. Reports are generated for every deposition and "
        "refreshed whenever a revision is released.\n"
    ),
    "formats.md": (
        "# Data Formats\n\n"
        "The archive accepts mmCIF as the master format. Legacy PDB format files "
        "are converted on ingest; extremely large entries are only distributed as mmCIF.\n"
    ),
    "policies.md": (
        "# Archive Policies\n\n"
        "Entries may be placed on hold until publication for up to one year. "
        "Obsoleted entries remain available from the archive's historical area.\n"
    ),
    "biocuration.md": (
        "# Biocuration\n\n"
        "Biocurators standardize ligand names, check sequence database references, "
        "and annotate the biological assembly before an entry is released.\n"
    ),
}


def write_corpus(root: Path, docs: dict[str, str]) -> None:
    root.mkdir(parents=True, exist_ok=True)
    for rel, text in docs.items():
        target = root / rel
        target.parent.mkdir(parents=True, exist_ok=True)
        target.write_text(text, encoding="utf-8")


@pytest.fixture
def corpus_dir(tmp_path: Path) -> Path:
    root = tmp_path / "corpus"
    write_corpus(root, FIVE_DOC_CORPUS)
    return root


@pytest.fixture
def embedder() -> HashedTrigramEmbedder:
    return HashedTrigramEmbedder(dimension=64)


@pytest.fixture
def file_store(tmp_path: Path) -> VectorStore:
    return VectorStore(FileStorage(tmp_path / "index"))


@pytest.fixture
def chat_store() -> ChatStore:
    return ChatStore(make_engine("sqlite:///:memory:"), cache=HistoryCache())


@pytest.fixture
def default_policy():
    return load_default_policy()


def scripted_roles(qa_script, condense_script):
    """Roles where both providers replay fixed scripts."""
    return default_roles(
        ScriptedChatProvider(qa_script, model_id="scripted-qa"),
        ScriptedChatProvider(condense_script, model_id="scripted-condense"),
    )
