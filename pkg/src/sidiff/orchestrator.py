"""The five-step preprocessing sequence: creativity, intent, refinement,
adaptive negatives, and the edit-instruction re-run.

Every sub-agent call is a schema-validated chat completion whose system
message is assembled as: static workflow guidance, then corrective guidance
(may be empty), then the verbatim template. The original user prompt rides
through each stage untouched.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Sequence

from .backends.structured import DEFAULT_REPAIR_ATTEMPTS, chat_complete_structured
from .backends.types import ChatBackend, ChatMessage, ChatRequest, ImagePart, TextPart
from .evaluator import EvaluationReport
from .guidance import NodeGuidance
from .templates import render_template

# Universal safeguards appended to every negative prompt regardless of what
# the model returns; extensible via the safeguards parameter.
UNIVERSAL_SAFEGUARDS = ("low quality", "blurry", "distorted", "watermark")

# Fixed negative prompt used by the constant-negative ablation configuration.
FIXED_NEGATIVE_PROMPT = (
    "The tones are vibrant, overexposed, details are unclear, style, work, "
    "painting, image, still, overall grayish, worst quality, low quality, "
    "JPEG compression artifacts, ugly, incomplete, extra fingers, poorly "
    "drawn hands, poorly drawn faces, deformed, disfigured, distorted limbs, "
    "merged fingers, motionless image, cluttered background, three legs, "
    "many people in the background"
)

CREATIVITY_LEVELS = ("LOW", "MEDIUM", "HIGH")


@dataclass(frozen=True)
class CreativityAssessment:
    level: str
    reasoning: str
    characteristics: dict[str, str] = field(default_factory=dict)

    def __post_init__(self) -> None:
        if self.level not in CREATIVITY_LEVELS:
            raise ValueError(f"creativity level must be one of {CREATIVITY_LEVELS}")

    @classmethod
    def from_json(cls, obj: dict) -> "CreativityAssessment":
        return cls(
            level=obj["creativity_level"],
            reasoning=obj["reasoning"],
            characteristics=dict(obj.get("prompt_characteristics", {})),
        )


@dataclass(frozen=True)
class SemanticSpec:
    identified_elements: dict
    ambiguous_elements: tuple[dict, ...] = ()

    def __post_init__(self) -> None:
        for amb in self.ambiguous_elements:
            if not amb.get("element") or not amb.get("reason"):
                raise ValueError(
                    "every ambiguous element must name a non-empty element and reason"
                )

    @classmethod
    def from_json(cls, obj: dict) -> "SemanticSpec":
        return cls(
            identified_elements=dict(obj["identified_elements"]),
            ambiguous_elements=tuple(obj.get("ambiguous_elements", [])),
        )

    def to_json(self) -> dict:
        return {
            "identified_elements": self.identified_elements,
            "ambiguous_elements": list(self.ambiguous_elements),
        }


@dataclass(frozen=True)
class RefinedPrompt:
    text: str
    reasoning: str = ""

    def __post_init__(self) -> None:
        if not self.text:
            raise ValueError("refined prompt text must be non-empty")


@dataclass(frozen=True)
class NegativePrompt:
    text: str
    reasoning: str = ""


@dataclass(frozen=True)
class PromptBundle:
    original: str
    creativity: CreativityAssessment
    spec: SemanticSpec
    positive: RefinedPrompt
    negative: NegativePrompt


def assemble_agent_prompt(
    template_id: str,
    slots: dict[str, object],
    guidance: NodeGuidance,
    payload: str,
    images: Sequence[bytes] = (),
) -> ChatRequest:
    """Build the chat request for one sub-agent call.

    System message = workflow guidance + corrective guidance (if any) + the
    template with slots substituted, in that order. The task payload (and
    any images) form the user message.
    """
    sections = [guidance.workflow_text]
    if guidance.corrective_text:
        sections.append(guidance.corrective_text)
    sections.append(render_template(template_id, slots))
    system = "\n\n".join(sections)

    parts: list = [TextPart(payload)]
    parts.extend(ImagePart(data) for data in images)
    return ChatRequest(
        messages=(
            ChatMessage.text("system", system),
            ChatMessage(role="user", parts=tuple(parts)),
        )
    )


def assess_creativity(
    chat: ChatBackend,
    prompt: str,
    g: NodeGuidance,
    retries: int = DEFAULT_REPAIR_ATTEMPTS,
) -> CreativityAssessment:
    """Classify how much autonomous enrichment the prompt allows."""
    if not prompt:
        raise ValueError("prompt must be non-empty")
    req = assemble_agent_prompt("s_cre", {}, g, payload=prompt)
    obj = chat_complete_structured(chat, req, "creativity", retries=retries)
    return CreativityAssessment.from_json(obj)


def analyze_intent(
    chat: ChatBackend,
    prompt: str,
    c: CreativityAssessment,
    g: NodeGuidance,
    retries: int = DEFAULT_REPAIR_ATTEMPTS,
) -> SemanticSpec:
    """Extract the semantic layout and flag ambiguities, conditioned on the
    creativity level."""
    payload = f'Given prompt: "{prompt}"\nCreativity level: {c.level}'
    req = assemble_agent_prompt("s_int", {}, g, payload=payload)
    obj = chat_complete_structured(chat, req, "intent", retries=retries)
    return SemanticSpec.from_json(obj)


def _feedback_lines(feedback: dict | None) -> str:
    if not feedback:
        return ""
    lines = []
    suggestions = feedback.get("improvement_suggestions")
    if suggestions:
        lines.append(f"Evaluator improvement suggestions: {suggestions}")
    missing = feedback.get("missing_elements")
    if missing:
        lines.append(f"Missing elements to fix: {'; '.join(missing)}")
    return ("\n" + "\n".join(lines)) if lines else ""


def refine_prompt(
    chat: ChatBackend,
    prompt: str,
    spec: SemanticSpec,
    g: NodeGuidance,
    retries: int = DEFAULT_REPAIR_ATTEMPTS,
    feedback: dict | None = None,
) -> RefinedPrompt:
    """Produce the model-ready positive prompt from the semantic spec."""
    payload = (
        f'Original prompt: "{prompt}"\n'
        f"Intent analysis:\n{json.dumps(spec.to_json(), indent=2, sort_keys=True)}"
        f"{_feedback_lines(feedback)}"
    )
    req = assemble_agent_prompt("s_ref", {}, g, payload=payload)
    obj = chat_complete_structured(chat, req, "refine", retries=retries)
    return RefinedPrompt(text=obj["refined_prompt"], reasoning=obj["reasoning"])


def split_terms(text: str) -> list[str]:
    return [t.strip() for t in text.split(",") if t.strip()]


def enforce_safeguards(text: str, safeguards: Sequence[str]) -> str:
    """Union of safeguards and model terms, deduplicated, order-preserving.

    Safeguards lead so the exactly-once invariant holds no matter what the
    model returned; scene-specific terms follow in their original order.
    """
    seen = list(safeguards)
    for term in split_terms(text):
        if term not in seen:
            seen.append(term)
    return ", ".join(seen)


def build_negative_prompt(
    chat: ChatBackend,
    prompt: str,
    refined: RefinedPrompt,
    g: NodeGuidance,
    retries: int = DEFAULT_REPAIR_ATTEMPTS,
    safeguards: Sequence[str] = UNIVERSAL_SAFEGUARDS,
    feedback: dict | None = None,
) -> NegativePrompt:
    """Derive scene-specific negations and append the universal safeguards.

    The safeguard union happens engine-side so the invariant holds even when
    the model omits them.
    """
    payload = (
        f'Original prompt: "{prompt}"\n'
        f'Refined prompt: "{refined.text}"'
        f"{_feedback_lines(feedback)}"
    )
    req = assemble_agent_prompt("s_neg", {}, g, payload=payload)
    obj = chat_complete_structured(chat, req, "negative", retries=retries)
    return NegativePrompt(
        text=enforce_safeguards(obj["negative_prompt"], safeguards),
        reasoning=obj["reasoning"],
    )


def synthesize_edit_instruction(
    chat: ChatBackend,
    bundle: PromptBundle,
    report: EvaluationReport,
    refine_guidance: NodeGuidance,
    negative_guidance: NodeGuidance,
    retries: int = DEFAULT_REPAIR_ATTEMPTS,
    safeguards: Sequence[str] = UNIVERSAL_SAFEGUARDS,
) -> tuple[RefinedPrompt, NegativePrompt]:
    """Re-run refinement and negative generation with evaluator feedback.

    The caller gates this on the score falling below the threshold; the
    original prompt still rides along verbatim.
    """
    feedback = {
        "improvement_suggestions": report.improvement_suggestions,
        "missing_elements": list(report.missing_elements),
    }
    refined = refine_prompt(
        chat, bundle.original, bundle.spec, refine_guidance,
        retries=retries, feedback=feedback,
    )
    negative = build_negative_prompt(
        chat, bundle.original, refined, negative_guidance,
        retries=retries, safeguards=safeguards, feedback=feedback,
    )
    return refined, negative
