"""Policy shape validation, prompt rendering, lexical screening, hot reload."""

from __future__ import annotations

import json
import os
import signal
import threading
import time

import pytest

from ragdesk.policy import (
    EMAIL_PATTERN,
    FORBIDDEN_COUNT,
    FORBIDDEN_HEADER,
    GUIDELINE_COUNT,
    PolicyError,
    PolicyManager,
    PolicyPrompt,
    REQUIRED_COUNT,
    REQUIRED_HEADER,
    ForbiddenCategory,
    install_reload_signal,
    load_default_policy,
    parse_policy,
    render_policy_text,
    screen_response,
)


def policy_dict(**overrides) -> dict:
    base = {
        "persona": "You are a help desk for a data archive.",
        "guidelines": [f"guideline {i}" for i in range(1, 8)],
        "forbidden": [
            {"label": f"category-{i:02d}", "patterns": [f"hint {i}a", f"hint {i}b"]}
            for i in range(11)
        ],
        "required": [f"directive {i}" for i in range(1, 8)],
        "refusal_text": "I can only help with archive questions.",
    }
    base.update(overrides)
    return base


def make_policy(**overrides) -> PolicyPrompt:
    return parse_policy(json.dumps(policy_dict(**overrides)))


class TestShapeValidation:
    def test_counts_are_fixed(self):
        assert (GUIDELINE_COUNT, FORBIDDEN_COUNT, REQUIRED_COUNT) == (7, 11, 7)

    def test_valid_policy_parses(self):
        policy = make_policy()
        assert len(policy.guidelines) == 7
        assert len(policy.forbidden) == 11
        assert len(policy.required) == 7
        assert policy.forbidden_labels()[0] == "category-00"

    @pytest.mark.parametrize(
        "overrides",
        [
            {"guidelines": ["only one"]},
            {"guidelines": [f"g{i}" for i in range(8)]},
            {"forbidden": [{"label": "x", "patterns": []}]},
            {"required": []},
            {"persona": "   "},
            {"refusal_text": ""},
            {"guidelines": ["", "b", "c", "d", "e", "f", "g"]},
        ],
    )
    def test_bad_shapes_rejected(self, overrides):
        with pytest.raises(PolicyError):
            make_policy(**overrides)

    def test_duplicate_labels_rejected(self):
        cats = [{"label": "dup", "patterns": []} for _ in range(11)]
        with pytest.raises(PolicyError):
            make_policy(forbidden=cats)

    def test_bad_redact_pattern_rejected(self):
        with pytest.raises(PolicyError):
            make_policy(redact_patterns=["([unclosed"])

    def test_default_redact_is_email(self):
        assert make_policy().redact_patterns == (EMAIL_PATTERN,)

    def test_direct_construction_validates_too(self):
        with pytest.raises(PolicyError):
            PolicyPrompt(
                persona="p",
                guidelines=("a",) * 7,
                forbidden=tuple(ForbiddenCategory(f"c{i}", ()) for i in range(10)),
                required=("r",) * 7,
                refusal_text="no",
            )


class TestParsePolicy:
    def test_not_json(self):
        with pytest.raises(PolicyError):
            parse_policy("{nope")

    def test_not_object(self):
        with pytest.raises(PolicyError):
            parse_policy("[1, 2]")

    @pytest.mark.parametrize("missing", ["persona", "guidelines", "forbidden", "required", "refusal_text"])
    def test_missing_field_named(self, missing):
        raw = policy_dict()
        del raw[missing]
        with pytest.raises(PolicyError, match=missing):
            parse_policy(json.dumps(raw))

    def test_forbidden_entry_without_label(self):
        raw = policy_dict()
        raw["forbidden"][3] = {"patterns": ["x"]}
        with pytest.raises(PolicyError):
            parse_policy(json.dumps(raw))


class TestDefaultPolicy:
    def test_loads_and_satisfies_shape(self):
        policy = load_default_policy()
        assert len(policy.guidelines) == 7
        assert len(policy.forbidden) == 11
        assert len(policy.required) == 7
        assert policy.refusal_text.strip()
        assert all(c.patterns for c in policy.forbidden)

    def test_refusal_points_at_feedback_controls(self):
        policy = load_default_policy()
        assert "rating" in policy.refusal_text.lower()

    def test_email_screen_enabled(self):
        policy = load_default_policy()
        cleaned, n = screen_response(policy, "contact admin@example.org now")
        assert n == 1
        assert "admin@example.org" not in cleaned


class TestRenderPolicyText:
    def test_structure(self):
        policy = make_policy()
        text = render_policy_text(policy)
        lines = text.splitlines()
        assert lines[0] == policy.persona
        assert "Guidelines:" in lines
        assert FORBIDDEN_HEADER in lines
        assert REQUIRED_HEADER in lines
        # guidelines numbered 1..7 in order
        start = lines.index("Guidelines:") + 1
        assert [l.split(".")[0] for l in lines[start : start + 7]] == [str(i) for i in range(1, 8)]

    def test_forbidden_block_lists_all_labels_with_hints(self):
        policy = make_policy()
        text = render_policy_text(policy)
        forbidden_block = text.split(FORBIDDEN_HEADER)[1].split(REQUIRED_HEADER)[0]
        for category in policy.forbidden:
            assert f"- {category.label}" in forbidden_block
            for hint in category.patterns:
                assert hint in forbidden_block

    def test_category_without_patterns_rendered_bare(self):
        cats = [{"label": f"c{i}", "patterns": []} for i in range(11)]
        text = render_policy_text(make_policy(forbidden=cats))
        assert "- c0" in text
        assert "(e.g." not in text

    def test_required_block_numbered(self):
        text = render_policy_text(make_policy())
        required_block = text.split(REQUIRED_HEADER)[1]
        for i in range(1, 8):
            assert f"{i}. directive {i}" in required_block


class TestScreenResponse:
    def test_no_match_passthrough(self):
        cleaned, n = screen_response(make_policy(), "plain text, nothing to hide")
        assert cleaned == "plain text, nothing to hide"
        assert n == 0

    def test_single_email(self):
        cleaned, n = screen_response(make_policy(), "write to a.b+c@mail.example.com please")
        assert cleaned == "write to [redacted] please"
        assert n == 1

    def test_multiple_matches_counted(self):
        cleaned, n = screen_response(make_policy(), "x@y.io and z@w.net")
        assert n == 2
        assert cleaned.count("[redacted]") == 2

    def test_multiple_patterns_accumulate(self):
        policy = make_policy(redact_patterns=[EMAIL_PATTERN, r"\b\d{3}-\d{4}\b"])
        cleaned, n = screen_response(policy, "call 555-1234 or mail a@b.co")
        assert n == 2
        assert "555-1234" not in cleaned
        assert "a@b.co" not in cleaned

    def test_empty_text(self):
        assert screen_response(make_policy(), "") == ("", 0)


class TestPolicyManager:
    def test_default_policy_when_no_path(self):
        manager = PolicyManager()
        assert len(manager.current.forbidden) == 11

    def test_loads_from_path(self, tmp_path):
        path = tmp_path / "policy.json"
        path.write_text(json.dumps(policy_dict(persona="Custom persona.")))
        manager = PolicyManager(path)
        assert manager.current.persona == "Custom persona."

    def test_reload_picks_up_changes(self, tmp_path):
        path = tmp_path / "policy.json"
        path.write_text(json.dumps(policy_dict(persona="First.")))
        manager = PolicyManager(path)
        path.write_text(json.dumps(policy_dict(persona="Second.")))
        assert manager.current.persona == "First."
        manager.reload()
        assert manager.current.persona == "Second."

    def test_failed_reload_keeps_previous(self, tmp_path):
        path = tmp_path / "policy.json"
        path.write_text(json.dumps(policy_dict(persona="Good.")))
        manager = PolicyManager(path)
        path.write_text("{broken json")
        with pytest.raises(PolicyError):
            manager.reload()
        assert manager.current.persona == "Good."

    def test_missing_file_at_init(self, tmp_path):
        with pytest.raises(PolicyError):
            PolicyManager(tmp_path / "absent.json")


class TestReloadSignal:
    def test_sighup_triggers_reload(self, tmp_path):
        path = tmp_path / "policy.json"
        path.write_text(json.dumps(policy_dict(persona="Before.")))
        manager = PolicyManager(path)
        previous = signal.getsignal(signal.SIGHUP)
        try:
            assert install_reload_signal(manager) is True
            path.write_text(json.dumps(policy_dict(persona="After.")))
            os.kill(os.getpid(), signal.SIGHUP)
            deadline = time.monotonic() + 5.0
            while manager.current.persona != "After." and time.monotonic() < deadline:
                time.sleep(0.01)
            assert manager.current.persona == "After."
        finally:
            signal.signal(signal.SIGHUP, previous)

    def test_sighup_with_broken_file_keeps_policy(self, tmp_path):
        path = tmp_path / "policy.json"
        path.write_text(json.dumps(policy_dict(persona="Stable.")))
        manager = PolicyManager(path)
        previous = signal.getsignal(signal.SIGHUP)
        try:
            assert install_reload_signal(manager) is True
            path.write_text("not json at all")
            os.kill(os.getpid(), signal.SIGHUP)
            time.sleep(0.1)
            assert manager.current.persona == "Stable."
        finally:
            signal.signal(signal.SIGHUP, previous)

    def test_install_off_main_thread_reports_false(self):
        manager = PolicyManager()
        result = {}

        def attempt():
            result["ok"] = install_reload_signal(manager)

        t = threading.Thread(target=attempt)
        t.start()
        t.join()
        assert result["ok"] is False
