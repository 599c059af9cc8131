import json

import pytest

from sidiff.backends.mock import ScriptedChatBackend
from sidiff.backends.schemas import SCHEMAS, schema_for
from sidiff.backends.structured import (
    chat_complete_structured,
    extract_json,
    validate_against,
)
from sidiff.backends.types import ChatMessage, ChatRequest
from sidiff.errors import SchemaViolation

VALID_CREATIVITY = json.dumps(
    {
        "creativity_level": "HIGH",
        "reasoning": "short prompt",
        "prompt_characteristics": {
            "detail_level": "low",
            "specificity": "vague",
            "artistic_freedom": "open",
        },
    }
)


def _req(text="classify this") -> ChatRequest:
    return ChatRequest(messages=(ChatMessage.text("user", text),))


class TestExtractJson:
    def test_plain_json(self):
        assert extract_json('{"a": 1}') == {"a": 1}

    def test_fenced_json(self):
        raw = '```json\n{"creativity_level":"HIGH"}\n```'
        assert extract_json(raw) == {"creativity_level": "HIGH"}

    def test_fence_without_language_tag(self):
        assert extract_json('```\n{"a": 1}\n```') == {"a": 1}

    def test_prose_wrapped_json(self):
        raw = 'Sure, here is the analysis you asked for:\n{"a": 1}\nHope that helps!'
        assert extract_json(raw) == {"a": 1}

    def test_array_payload(self):
        assert extract_json("noise [1, 2] noise") == [1, 2]

    def test_no_json_raises(self):
        with pytest.raises(ValueError):
            extract_json("no structured content here")


class TestValidation:
    def test_schema_registry_is_complete(self):
        assert set(SCHEMAS) == {
            "creativity",
            "intent",
            "refine",
            "negative",
            "evaluation",
            "trajectory_analysis",
            "guidance_gen",
            "guidance_edit",
            "judge",
        }

    def test_unknown_schema_id(self):
        with pytest.raises(ValueError):
            schema_for("nope")

    def test_judge_score_range(self):
        assert validate_against("judge", {"overall_score": 4, "reasoning": "ok"}) is None
        assert validate_against("judge", {"overall_score": 6, "reasoning": "x"}) is not None
        assert validate_against("judge", {"overall_score": 0, "reasoning": "x"}) is not None

    def test_evaluation_score_map_exactness(self):
        obj = json.loads(VALID_CREATIVITY)
        assert validate_against("creativity", obj) is None
        del obj["reasoning"]
        assert "reasoning" in validate_against("creativity", obj)


class TestRepairLoop:
    def test_scripted_reply_keyed_by_marker(self):
        chat = ScriptedChatBackend({"S_CRE": VALID_CREATIVITY})
        out = chat_complete_structured(chat, _req("template S_CRE payload"), "creativity")
        assert out["creativity_level"] == "HIGH"

    def test_fenced_reply_parses(self):
        chat = ScriptedChatBackend({"": f"```json\n{VALID_CREATIVITY}\n```"})
        out = chat_complete_structured(chat, _req(), "creativity")
        assert out["creativity_level"] == "HIGH"

    def test_one_repair_round_trip(self):
        missing = json.dumps(
            {
                "creativity_level": "HIGH",
                "prompt_characteristics": {
                    "detail_level": "low",
                    "specificity": "vague",
                    "artistic_freedom": "open",
                },
            }
        )
        chat = ScriptedChatBackend({"": [missing, VALID_CREATIVITY]})
        out = chat_complete_structured(chat, _req(), "creativity")
        assert out["reasoning"] == "short prompt"
        assert len(chat.calls) == 2
        # the repair prompt quotes the validation error
        assert "reasoning" in chat.calls[1]

    def test_always_invalid_exhausts_after_exactly_r_attempts(self):
        chat = ScriptedChatBackend({"": "not json at all"})
        with pytest.raises(SchemaViolation) as excinfo:
            chat_complete_structured(chat, _req(), "creativity", retries=3)
        assert len(chat.calls) == 3
        assert excinfo.value.attempts == 3
        assert excinfo.value.schema_id == "creativity"
        assert excinfo.value.last_error

    def test_never_returns_invalid_value(self):
        wrong_enum = json.dumps(
            {
                "creativity_level": "EXTREME",
                "reasoning": "x",
                "prompt_characteristics": {
                    "detail_level": "low",
                    "specificity": "vague",
                    "artistic_freedom": "open",
                },
            }
        )
        chat = ScriptedChatBackend({"": [wrong_enum, wrong_enum, VALID_CREATIVITY]})
        out = chat_complete_structured(chat, _req(), "creativity", retries=3)
        assert validate_against("creativity", out) is None

    def test_retries_must_be_positive(self):
        chat = ScriptedChatBackend({"": VALID_CREATIVITY})
        with pytest.raises(ValueError):
            chat_complete_structured(chat, _req(), "creativity", retries=0)
