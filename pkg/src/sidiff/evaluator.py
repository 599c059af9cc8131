"""Multimodal scoring of a generated image against its prompts.

The report's two score maps are schema-exact (six aesthetic keys, four
alignment keys); the summary is the unweighted mean per dimension, and the
overall score is the mean of the two means. Editing triggers strictly below
the threshold.
"""

from __future__ import annotations

from dataclasses import dataclass

from .backends.schemas import AESTHETIC_KEYS, ALIGNMENT_KEYS
from .backends.structured import DEFAULT_REPAIR_ATTEMPTS, chat_complete_structured
from .backends.types import ChatBackend, ChatMessage, ChatRequest, ImageArtifact, ImagePart, TextPart
from .guidance import NodeGuidance
from .templates import render_template


@dataclass(frozen=True)
class EvaluationReport:
    aesthetic_reasoning: str
    aesthetic_score: dict[str, float]
    alignment_reasoning: str
    alignment_score: dict[str, float]
    detected_artifacts: tuple[str, ...]
    artifact_reasoning: str
    main_subjects_present: bool
    missing_elements: tuple[str, ...]
    improvement_suggestions: str
    overall_reasoning: str

    def __post_init__(self) -> None:
        for name, mapping, keys in (
            ("aesthetic_score", self.aesthetic_score, AESTHETIC_KEYS),
            ("alignment_score", self.alignment_score, ALIGNMENT_KEYS),
        ):
            if set(mapping) != set(keys):
                raise ValueError(f"{name} must contain exactly the keys {list(keys)}")
            for key, value in mapping.items():
                if not 0.0 <= float(value) <= 10.0:
                    raise ValueError(f"{name}[{key!r}] = {value} outside [0, 10]")

    @classmethod
    def from_json(cls, obj: dict) -> "EvaluationReport":
        return cls(
            aesthetic_reasoning=obj["aesthetic_reasoning"],
            aesthetic_score={k: float(v) for k, v in obj["aesthetic_score"].items()},
            alignment_reasoning=obj["alignment_reasoning"],
            alignment_score={k: float(v) for k, v in obj["alignment_score"].items()},
            detected_artifacts=tuple(obj["artifacts"]["detected_artifacts"]),
            artifact_reasoning=obj["artifacts"]["artifact_reasoning"],
            main_subjects_present=bool(obj["main_subjects_present"]),
            missing_elements=tuple(obj["missing_elements"]),
            improvement_suggestions=obj["improvement_suggestions"],
            overall_reasoning=obj["overall_reasoning"],
        )

    def to_json(self) -> dict:
        return {
            "aesthetic_reasoning": self.aesthetic_reasoning,
            "aesthetic_score": dict(self.aesthetic_score),
            "alignment_reasoning": self.alignment_reasoning,
            "alignment_score": dict(self.alignment_score),
            "artifacts": {
                "detected_artifacts": list(self.detected_artifacts),
                "artifact_reasoning": self.artifact_reasoning,
            },
            "main_subjects_present": self.main_subjects_present,
            "missing_elements": list(self.missing_elements),
            "improvement_suggestions": self.improvement_suggestions,
            "overall_reasoning": self.overall_reasoning,
        }


@dataclass(frozen=True)
class ScoreSummary:
    aesthetic_mean: float
    alignment_mean: float
    overall: float


def evaluate_image(
    chat: ChatBackend,
    img: ImageArtifact,
    original: str,
    refined: str,
    g: NodeGuidance,
    retries: int = DEFAULT_REPAIR_ATTEMPTS,
) -> EvaluationReport:
    """Score an image; alignment is judged mainly against the original prompt.

    The original prompt is interpolated into the template itself; the refined
    prompt and the image travel in the user message as context.
    """
    sections = [g.workflow_text]
    if g.corrective_text:
        sections.append(g.corrective_text)
    sections.append(
        render_template(
            "eval", {"original_prompt": original, "user_clarification": ""}
        )
    )
    req = ChatRequest(
        messages=(
            ChatMessage.text("system", "\n\n".join(sections)),
            ChatMessage(
                role="user",
                parts=(
                    TextPart(
                        f'Refined prompt used for generation: "{refined}"\n'
                        "Evaluate the generated image below."
                    ),
                    ImagePart(img.data),
                ),
            ),
        )
    )
    obj = chat_complete_structured(chat, req, "evaluation", retries=retries)
    return EvaluationReport.from_json(obj)


def summarize(report: EvaluationReport) -> ScoreSummary:
    """Unweighted mean per dimension; overall = mean of the two means."""
    aesthetic = sum(report.aesthetic_score.values()) / len(report.aesthetic_score)
    alignment = sum(report.alignment_score.values()) / len(report.alignment_score)
    return ScoreSummary(
        aesthetic_mean=aesthetic,
        alignment_mean=alignment,
        overall=(aesthetic + alignment) / 2.0,
    )


def needs_edit(s: ScoreSummary, tau: float) -> bool:
    """True iff the overall score falls strictly below the threshold."""
    if not 0.0 < tau <= 10.0:
        raise ValueError("tau must lie in (0, 10]")
    return s.overall < tau
