"""Experience condensation, corrective guidance, and retrieval judging.

Finished runs are condensed into node-wise pitfalls/successes; retrieved
neighbors of a new prompt are synthesized into a per-node guidance packet;
the packet is rendered into the injection text each decision node receives.
Guidance consumes only condensed fields, never raw chat logs.
"""

from __future__ import annotations

from dataclasses import dataclass

from .backends.schemas import (
    EDIT_GUIDANCE_KEYS,
    GEN_GUIDANCE_KEYS,
    TRAJECTORY_STEP_KEYS,
)
from .backends.structured import DEFAULT_REPAIR_ATTEMPTS, chat_complete_structured
from .backends.types import ChatBackend, ChatMessage, ChatRequest, ImageArtifact, ImagePart, TextPart
from .errors import UnknownNode
from .memory import RankedHit, StoreId
from .templates import load_template, render_template
from .trace import (
    NODE_EDIT,
    NODE_EDIT_DECISION,
    NODE_EVAL,
    NODE_GENERATE,
    NODE_S_CRE,
    NODE_S_INT,
    NODE_S_NEG,
    NODE_S_REF,
    FullRunTrace,
)

# Fixed node <-> packet-entry mapping. The GEN packet has seven entries for
# six injectable nodes plus the engine's edit gate (regeneration_decision).
GEN_NODE_ENTRIES = {
    NODE_S_CRE: "creativity_level_determination",
    NODE_S_INT: "intention_analysis",
    NODE_S_REF: "prompt_refinement",
    NODE_S_NEG: "negative_model_selection",
    NODE_GENERATE: "image_generation",
    NODE_EVAL: "quality_evaluation",
    NODE_EDIT_DECISION: "regeneration_decision",
}

EDIT_NODE_ENTRIES = {
    NODE_EDIT: "image_editing",
    NODE_EVAL: "quality_evaluation",
}

_KNOWN_NODES = set(GEN_NODE_ENTRIES) | set(EDIT_NODE_ENTRIES)


@dataclass
class TrajectoryAnalysis:
    """Condensed verdict on one run, keyed by the six workflow steps."""

    trajectory_reasoning: str
    step_scores: dict[str, float]
    successes: dict[str, str]
    pitfalls: dict[str, str]
    overall_rating: float

    def __post_init__(self) -> None:
        expected = set(TRAJECTORY_STEP_KEYS)
        for name, mapping in (
            ("step_scores", self.step_scores),
            ("successes", self.successes),
            ("pitfalls", self.pitfalls),
        ):
            if set(mapping) != expected:
                raise ValueError(f"{name} keys {sorted(mapping)} != {sorted(expected)}")
        for key, score in self.step_scores.items():
            if not 1.0 <= float(score) <= 10.0:
                raise ValueError(f"step score {key}={score} outside [1, 10]")
        if not 1.0 <= float(self.overall_rating) <= 10.0:
            raise ValueError("overall_rating outside [1, 10]")

    @classmethod
    def from_json(cls, obj: dict) -> "TrajectoryAnalysis":
        return cls(
            trajectory_reasoning=obj["trajectory_reasoning"],
            step_scores={k: float(v) for k, v in obj["step_scores"].items()},
            successes=dict(obj["successes"]),
            pitfalls=dict(obj["pitfalls"]),
            overall_rating=float(obj["overall_rating"]),
        )


@dataclass
class GuidancePacket:
    """Per-decision-node corrective guidance for one workflow kind."""

    kind: StoreId
    step_analysis: dict[str, dict]
    workflow_insights: dict[str, object]

    def __post_init__(self) -> None:
        expected = GEN_GUIDANCE_KEYS if self.kind is StoreId.GEN else EDIT_GUIDANCE_KEYS
        if set(self.step_analysis) != set(expected):
            raise ValueError(
                f"{self.kind.value} packet entries {sorted(self.step_analysis)} "
                f"!= {sorted(expected)}"
            )


@dataclass
class NodeGuidance:
    """What a decision node receives: static workflow text plus the
    corrective text rendered from a packet (empty before activation)."""

    workflow_text: str
    corrective_text: str = ""

    def __post_init__(self) -> None:
        if not self.workflow_text:
            raise ValueError("workflow_text must be non-empty")


def empty_node_guidance() -> NodeGuidance:
    return NodeGuidance(workflow_text=load_template("workflow_guidance"))


def build_process_summary(trace: FullRunTrace) -> str:
    lines = [
        "The workflow assessed prompt creativity, analyzed intent, refined the "
        "prompt, built an adaptive negative prompt, generated an image, and "
        "evaluated it against the original prompt.",
        f"Executed nodes in order: {', '.join(trace.node_ids())}.",
        f"Edit cycles used: {trace.edits_used}.",
        f"Final evaluation score: {trace.final_overall:g}/10.",
    ]
    return "\n".join(lines)


def condense_slots(trace: FullRunTrace, model_name: str, kind: StoreId) -> dict:
    """Slot map for the trajectory-analysis template."""
    if not trace.complete:
        raise ValueError("trace must be complete before condensation")
    refined_changed = trace.refined_prompt != trace.prompt
    return {
        "model_name": model_name,
        "process_summary": build_process_summary(trace),
        "creativity_level": trace.creativity_level,
        "original_prompt": trace.prompt,
        "refined_prompt": trace.refined_prompt,
        "refinement_quality": (
            "Significant refinement applied" if refined_changed else "Minimal refinement needed"
        ),
        "negative_prompt": trace.negative_prompt,
        "chosen_model": model_name,
        "selection_reasoning": "fixed generate/edit pipeline",
        "confidence_score": 5.0,
        "has_reference_image": "Yes" if kind is StoreId.EDIT else "No",
        "seed": trace.seed,
        "evaluation_score": f"{trace.final_overall:g}",
        "user_feedback": "None provided",
        "current_attempt": trace.edits_used + 1,
        "total_attempts": trace.edits_used + 1,
        "improvement_suggestions": trace.improvement_suggestions or "None from previous cycles",
        "human_oversight": "Enabled" if trace.human_in_loop else "Autonomous operation",
    }


def condense_trajectory(
    chat: ChatBackend,
    trace: FullRunTrace,
    images: list[ImageArtifact],
    model_name: str,
    kind: StoreId = StoreId.GEN,
    retries: int = DEFAULT_REPAIR_ATTEMPTS,
) -> TrajectoryAnalysis:
    """Condense a finished run into node-wise pitfalls and successes.

    All generated/edited images ride along as vision parts so the analyst
    model can ground its scores in what was actually rendered.
    """
    if not images:
        raise ValueError("condensation requires at least one image")
    system = render_template(
        "traj_gen" if kind is StoreId.GEN else "traj_edit",
        condense_slots(trace, model_name, kind),
    )
    parts: list = [TextPart("Generated image(s) from this workflow execution:")]
    parts.extend(ImagePart(img.data) for img in images)
    req = ChatRequest(
        messages=(
            ChatMessage.text("system", system),
            ChatMessage(role="user", parts=tuple(parts)),
        )
    )
    obj = chat_complete_structured(chat, req, "trajectory_analysis", retries=retries)
    return TrajectoryAnalysis.from_json(obj)


def serialize_hits(hits: list[RankedHit]) -> str:
    """Render retrieved neighbors into the similar_data_text slot.

    One numbered block per neighbor; neighbors are included verbatim with no
    filtering by rating, so conflicting outcomes stay visible downstream.
    """
    blocks = []
    for i, hit in enumerate(hits, start=1):
        rec = hit.record
        lines = [
            f"Example {i} (similarity {hit.similarity:.3f}):",
            f'Original prompt: "{rec.original_prompt}"',
            f"Evaluation score: {rec.evaluation_score:g}/10",
            f"Overall rating: {rec.overall_rating:g}/10",
        ]
        step_keys = [k for k in TRAJECTORY_STEP_KEYS if k in rec.step_scores]
        step_keys += sorted(set(rec.step_scores) - set(step_keys))
        if step_keys:
            scores = ", ".join(f"{k}={rec.step_scores[k]:g}" for k in step_keys)
            lines.append(f"Step scores: {scores}")
        for label, mapping in (("Successes", rec.successes), ("Pitfalls", rec.pitfalls)):
            if mapping:
                lines.append(f"{label}:")
                keys = [k for k in TRAJECTORY_STEP_KEYS if k in mapping]
                keys += sorted(set(mapping) - set(keys))
                lines.extend(f"- {k}: {mapping[k]}" for k in keys)
        blocks.append("\n".join(lines))
    return "\n\n".join(blocks)


def formulate_guidance(
    chat: ChatBackend,
    new_prompt: str,
    hits: list[RankedHit],
    kind: StoreId,
    retries: int = DEFAULT_REPAIR_ATTEMPTS,
) -> GuidancePacket:
    """Synthesize a corrective guidance packet from retrieved neighbors."""
    if not hits:
        raise ValueError("guidance formulation requires at least one retrieved hit")
    template_id = "guide_gen" if kind is StoreId.GEN else "guide_edit"
    schema_id = "guidance_gen" if kind is StoreId.GEN else "guidance_edit"
    system = render_template(
        template_id,
        {
            "similar_data_text": serialize_hits(hits),
            "workflow_description": load_template("workflow_guidance"),
            "task_focus": f'NEW PROMPT: "{new_prompt}"\n'
            "Focus every recommendation on this prompt.",
        },
    )
    req = ChatRequest(
        messages=(
            ChatMessage.text("system", system),
            ChatMessage.text("user", "Provide the workflow guidance now."),
        )
    )
    obj = chat_complete_structured(chat, req, schema_id, retries=retries)
    return GuidancePacket(
        kind=kind,
        step_analysis=dict(obj["step_analysis"]),
        workflow_insights=dict(obj["workflow_insights"]),
    )


def _format_entry(entry: dict, insights: dict) -> str:
    lines = [
        "CORRECTIVE GUIDANCE (from similar past trajectories):",
        f"- Success patterns: {entry['success_patterns']}",
        f"- Failure patterns: {entry['failure_patterns']}",
        f"- Impact on the next stage: {entry['impact_on_next']}",
        f"- Preventive guidance: {entry['preventive_guidance']}",
        f"- Recommended target score: {entry['recommended_score']}",
        "Workflow insights:",
        f"- Critical dependencies: {insights['critical_dependencies']}",
        f"- Common failure chains: {insights['common_failure_chains']}",
        f"- Success combinations: {insights['success_combinations']}",
        f"- Predicted overall rating: {insights['overall_rating_prediction']}",
    ]
    return "\n".join(lines)


def render_node_guidance(packet: GuidancePacket | None, node: str) -> NodeGuidance:
    """Resolve the injection text a decision node receives.

    With no packet (pre-activation) the corrective text is empty but the
    static workflow guidance is still present.
    """
    if packet is None:
        if node not in _KNOWN_NODES:
            raise UnknownNode(f"unknown decision node {node!r}")
        return empty_node_guidance()
    mapping = GEN_NODE_ENTRIES if packet.kind is StoreId.GEN else EDIT_NODE_ENTRIES
    if node not in mapping:
        raise UnknownNode(
            f"node {node!r} has no entry in a {packet.kind.value} guidance packet"
        )
    entry = packet.step_analysis[mapping[node]]
    return NodeGuidance(
        workflow_text=load_template("workflow_guidance"),
        corrective_text=_format_entry(entry, packet.workflow_insights),
    )


def judge_retrieval(
    chat: ChatBackend,
    query: str,
    hits: list[RankedHit],
    mode: str = "group",
    retries: int = DEFAULT_REPAIR_ATTEMPTS,
) -> list[dict]:
    """Score retrieval quality with the judge prompts.

    Group mode returns one verdict for the whole hit set; individual mode
    returns one per hit (callers typically report the mean).
    """
    if not hits:
        raise ValueError("judging requires at least one retrieved hit")
    if mode not in ("group", "individual"):
        raise ValueError(f"mode must be 'group' or 'individual', got {mode!r}")

    def _judge(template_id: str, retrieved_text: str) -> dict:
        system = render_template(
            template_id, {"query": query, "retrieved_text": retrieved_text}
        )
        req = ChatRequest(
            messages=(
                ChatMessage.text("system", system),
                ChatMessage.text("user", "Evaluate the retrieved prompts now."),
            )
        )
        obj = chat_complete_structured(chat, req, "judge", retries=retries)
        return {"overall_score": int(obj["overall_score"]), "reasoning": obj["reasoning"]}

    if mode == "group":
        text = "\n".join(
            f'{i}. "{hit.record.original_prompt}"' for i, hit in enumerate(hits, 1)
        )
        return [_judge("judge_group", text)]
    return [
        _judge("judge_individual", f'1. "{hit.record.original_prompt}"') for hit in hits
    ]


__all__ = [
    "EDIT_NODE_ENTRIES",
    "GEN_NODE_ENTRIES",
    "GuidancePacket",
    "NodeGuidance",
    "TrajectoryAnalysis",
    "build_process_summary",
    "condense_slots",
    "condense_trajectory",
    "empty_node_guidance",
    "formulate_guidance",
    "judge_retrieval",
    "render_node_guidance",
    "serialize_hits",
]
