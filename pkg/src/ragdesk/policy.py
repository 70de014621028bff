"""Answer-policy configuration: persona, guidelines, content rules, refusal text.

The policy is data, not code. It ships as a JSON file with a fixed shape
(7 guidelines, 11 forbidden categories, 7 required directives) and can be
reloaded on SIGHUP without a restart. The rendered text becomes the fixed
head of every system prompt.
"""

from __future__ import annotations

import json
import logging
import re
import signal
import threading
import types
from dataclasses import dataclass
from importlib import resources
from pathlib import Path

logger = logging.getLogger(__name__)

GUIDELINE_COUNT = 7
FORBIDDEN_COUNT = 11
REQUIRED_COUNT = 7

FORBIDDEN_HEADER = "FORBIDDEN CONTENT"
REQUIRED_HEADER = "REQUIRED APPROACH"

EMAIL_PATTERN = r"[A-Za-z0-9._%+-]+@[A-Za-z0-9.-]+\.[A-Za-z]{2,}"


class PolicyError(Exception):
    """Raised when a policy file is missing, malformed, or violates the shape."""


@dataclass(frozen=True)
class ForbiddenCategory:
    """One denied content category: a stable label plus matcher hints.

    The hints are phrasing examples fed to the topical classifier, not
    regexes; redaction patterns are configured separately.
    """

    label: str
    patterns: tuple[str, ...]


@dataclass(frozen=True)
class PolicyPrompt:
    persona: str
    guidelines: tuple[str, ...]
    forbidden: tuple[ForbiddenCategory, ...]
    required: tuple[str, ...]
    refusal_text: str
    # hard lexical screen applied to generated text, each a regex
    redact_patterns: tuple[str, ...] = (EMAIL_PATTERN,)

    def __post_init__(self):
        if not self.persona.strip():
            raise PolicyError("persona must be non-empty")
        if not self.refusal_text.strip():
            raise PolicyError("refusal_text must be non-empty")
        if len(self.guidelines) != GUIDELINE_COUNT:
            raise PolicyError(f"expected exactly {GUIDELINE_COUNT} guidelines, got {len(self.guidelines)}")
        if len(self.forbidden) != FORBIDDEN_COUNT:
            raise PolicyError(
                f"expected exactly {FORBIDDEN_COUNT} forbidden categories, got {len(self.forbidden)}"
            )
        if len(self.required) != REQUIRED_COUNT:
            raise PolicyError(f"expected exactly {REQUIRED_COUNT} required directives, got {len(self.required)}")
        for text in (*self.guidelines, *self.required):
            if not text.strip():
                raise PolicyError("guidelines and required directives must be non-empty")
        labels = [c.label for c in self.forbidden]
        if len(set(labels)) != len(labels):
            raise PolicyError("forbidden category labels must be unique")
        for pattern in self.redact_patterns:
            try:
                re.compile(pattern)
            except re.error as exc:
                raise PolicyError(f"invalid redact pattern {pattern!r}: {exc}") from exc

    def forbidden_labels(self) -> tuple[str, ...]:
        return tuple(c.label for c in self.forbidden)


def _require(raw: dict, key: str) -> object:
    if key not in raw:
        raise PolicyError(f"policy file missing field {key!r}")
    return raw[key]


def parse_policy(text: str) -> PolicyPrompt:
    try:
        raw = json.loads(text)
    except json.JSONDecodeError as exc:
        raise PolicyError(f"policy file is not valid JSON: {exc}") from exc
    if not isinstance(raw, dict):
        raise PolicyError("policy file must be a JSON object")

    forbidden = []
    for item in _require(raw, "forbidden"):
        if not isinstance(item, dict) or "label" not in item:
            raise PolicyError("each forbidden category needs a label")
        forbidden.append(
            ForbiddenCategory(
                label=str(item["label"]),
                patterns=tuple(str(p) for p in item.get("patterns", [])),
            )
        )

    return PolicyPrompt(
        persona=str(_require(raw, "persona")),
        guidelines=tuple(str(g) for g in _require(raw, "guidelines")),
        forbidden=tuple(forbidden),
        required=tuple(str(r) for r in _require(raw, "required")),
        refusal_text=str(_require(raw, "refusal_text")),
        redact_patterns=tuple(str(p) for p in raw.get("redact_patterns", [EMAIL_PATTERN])),
    )


def load_policy(path: Path | str) -> PolicyPrompt:
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise PolicyError(f"cannot read policy file {path}: {exc}") from exc
    return parse_policy(text)


def load_default_policy() -> PolicyPrompt:
    text = resources.files("ragdesk").joinpath("data/default_policy.json").read_text(encoding="utf-8")
    return parse_policy(text)


def render_policy_text(policy: PolicyPrompt) -> str:
    """Fixed head of the system prompt: persona, guidelines, both rule blocks."""
    lines: list[str] = [policy.persona.strip(), "", "Guidelines:"]
    for i, guideline in enumerate(policy.guidelines, start=1):
        lines.append(f"{i}. {guideline}")
    lines += ["", FORBIDDEN_HEADER, "Never produce content in these categories:"]
    for category in policy.forbidden:
        if category.patterns:
            lines.append(f"- {category.label} (e.g. {'; '.join(category.patterns)})")
        else:
            lines.append(f"- {category.label}")
    lines += ["", REQUIRED_HEADER]
    for i, directive in enumerate(policy.required, start=1):
        lines.append(f"{i}. {directive}")
    return "\n".join(lines)


def screen_response(policy: PolicyPrompt, text: str) -> tuple[str, int]:
    """Redact hard-pattern matches from generated text.

    Returns the cleaned text and the number of redactions, which the caller
    records as policy violations. The prompt is the primary defense; this is
    the mechanical backstop.
    """
    violations = 0
    for pattern in policy.redact_patterns:
        text, n = re.subn(pattern, "[redacted]", text)
        violations += n
    return text, violations


class PolicyManager:
    """Holds the live policy and swaps it atomically on reload.

    A failed reload keeps the previous policy in place so a bad edit cannot
    take down a running server.
    """

    def __init__(self, path: Path | str | None = None):
        self._path = Path(path) if path is not None else None
        self._lock = threading.Lock()
        self._policy = load_policy(self._path) if self._path else load_default_policy()

    @property
    def current(self) -> PolicyPrompt:
        with self._lock:
            return self._policy

    def reload(self) -> PolicyPrompt:
        fresh = load_policy(self._path) if self._path else load_default_policy()
        with self._lock:
            self._policy = fresh
        return fresh


def install_reload_signal(manager: PolicyManager, signum: int = signal.SIGHUP) -> bool:
    """Reload the policy on signum (SIGHUP by default).

    Returns False when signal handlers cannot be installed (non-main thread,
    platforms without the signal); reload() stays available directly.
    """

    def _handle(_signum: int, _frame: types.FrameType | None) -> None:
        try:
            manager.reload()
            logger.info("policy reloaded")
        except PolicyError as exc:
            logger.error("policy reload failed, keeping previous policy: %s", exc)

    try:
        signal.signal(signum, _handle)
    except (ValueError, AttributeError, OSError):
        return False
    return True
