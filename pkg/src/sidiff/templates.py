"""Prompt template assets and slot substitution.

Templates live as versioned text assets under sidiff/prompts/, keyed by
template id, with `{placeholder}` slots (lowercase snake_case between single
braces). Literal JSON braces inside the templates never collide with the
placeholder pattern, so no escaping is required.
"""

from __future__ import annotations

import re
from functools import lru_cache
from importlib import resources

from .errors import MissingSlot, UnknownTemplate

TEMPLATE_IDS = (
    "s_cre",
    "s_int",
    "s_ref",
    "s_neg",
    "eval",
    "traj_gen",
    "traj_edit",
    "guide_gen",
    "guide_edit",
    "judge_group",
    "judge_individual",
    "workflow_guidance",
)

_PLACEHOLDER_RE = re.compile(r"\{([a-z][a-z0-9_]*)\}")


@lru_cache(maxsize=None)
def load_template(template_id: str) -> str:
    if template_id not in TEMPLATE_IDS:
        raise UnknownTemplate(f"no template asset named {template_id!r}")
    ref = resources.files("sidiff.prompts") / f"{template_id}.txt"
    return ref.read_text(encoding="utf-8")


def placeholders(template_text: str) -> list[str]:
    """Placeholder names in order of first appearance."""
    seen: list[str] = []
    for name in _PLACEHOLDER_RE.findall(template_text):
        if name not in seen:
            seen.append(name)
    return seen


def render(template_text: str, slots: dict[str, object]) -> str:
    """Substitute every placeholder; unbound placeholders raise MissingSlot."""

    def _sub(match: re.Match) -> str:
        name = match.group(1)
        if name not in slots:
            raise MissingSlot(f"placeholder {{{name}}} has no binding")
        return str(slots[name])

    return _PLACEHOLDER_RE.sub(_sub, template_text)


def render_template(template_id: str, slots: dict[str, object]) -> str:
    return render(load_template(template_id), slots)
