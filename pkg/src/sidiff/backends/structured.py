"""Structured chat completion: parse, validate, and repair JSON replies.

Real endpoints wrap JSON in code fences or prose; this module strips that,
validates against a registered schema, and re-prompts with the validation
error appended until the reply validates or the attempt budget runs out.
"""

from __future__ import annotations

import json
import re
from typing import Any

import jsonschema

from ..errors import SchemaViolation
from .schemas import schema_for
from .types import ChatBackend, ChatMessage, ChatRequest

DEFAULT_REPAIR_ATTEMPTS = 3

_FENCE_RE = re.compile(r"```(?:json)?\s*(.*?)```", re.DOTALL)

REPAIR_TEMPLATE = (
    "Your previous reply was not valid JSON for the required structure.\n"
    "Validation error: {error}\n"
    "Return ONLY the corrected JSON object, with no code fences and no "
    "surrounding text."
)


def extract_json(text: str) -> Any:
    """Parse the JSON value out of a raw model reply.

    Strips code fences first, then trims leading/trailing prose down to the
    outermost {...} or [...] span. Raises ValueError if nothing parses.
    """
    raw = text.strip()
    fenced = _FENCE_RE.search(raw)
    if fenced:
        raw = fenced.group(1).strip()
    try:
        return json.loads(raw)
    except json.JSONDecodeError:
        pass
    starts = [i for i in (raw.find("{"), raw.find("[")) if i != -1]
    if not starts:
        raise ValueError("reply contains no JSON value")
    start = min(starts)
    end = max(raw.rfind("}"), raw.rfind("]"))
    if end <= start:
        raise ValueError("reply contains no JSON value")
    return json.loads(raw[start : end + 1])


def validate_against(schema_id: str, value: Any) -> str | None:
    """Return None if value satisfies the schema, else the first error."""
    validator = jsonschema.Draft202012Validator(schema_for(schema_id))
    errors = sorted(validator.iter_errors(value), key=lambda e: list(e.absolute_path))
    if not errors:
        return None
    first = errors[0]
    path = "/".join(str(p) for p in first.absolute_path) or "(root)"
    return f"at {path}: {first.message}"


def chat_complete_structured(
    backend: ChatBackend,
    req: ChatRequest,
    schema_id: str,
    retries: int = DEFAULT_REPAIR_ATTEMPTS,
) -> Any:
    """Complete a chat request whose reply must validate against a schema.

    Makes up to `retries` total chat calls; each failed attempt feeds the
    validation error back to the model. Raises SchemaViolation carrying the
    last error once the budget is exhausted.
    """
    schema_for(schema_id)  # precondition: schema id must be registered
    if retries < 1:
        raise ValueError("retries must be >= 1")

    current = req
    last_error = "no attempts made"
    for _ in range(retries):
        raw = backend.complete(current)
        try:
            value = extract_json(raw)
        except (ValueError, json.JSONDecodeError) as exc:
            last_error = str(exc)
        else:
            error = validate_against(schema_id, value)
            if error is None:
                return value
            last_error = error
        current = ChatRequest(
            messages=current.messages
            + (
                ChatMessage.text("assistant", raw),
                ChatMessage.text("user", REPAIR_TEMPLATE.format(error=last_error)),
            ),
            temperature=current.temperature,
            max_tokens=current.max_tokens,
            seed=current.seed,
        )
    raise SchemaViolation(schema_id, retries, last_error)
