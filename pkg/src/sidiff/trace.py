"""Execution trace of one workflow run.

The trace is append-only while the run is live; condensation reads it after
the run finishes. Kept separate from the engine so the guidance module can
consume traces without a circular import.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field
from typing import Any

from .backends.types import ImageArtifact

# Stable decision-node identifiers used in traces, step_scores keys, logs,
# and exports.
NODE_S_CRE = "s_cre"
NODE_S_INT = "s_int"
NODE_S_REF = "s_ref"
NODE_S_NEG = "s_neg"
NODE_GENERATE = "s_gen.generate"
NODE_EDIT = "s_gen.edit"
NODE_EVAL = "a_eval"
NODE_EDIT_DECISION = "engine.edit_decision"

ALL_NODES = (
    NODE_S_CRE,
    NODE_S_INT,
    NODE_S_REF,
    NODE_S_NEG,
    NODE_GENERATE,
    NODE_EDIT,
    NODE_EVAL,
    NODE_EDIT_DECISION,
)


@dataclass
class TraceNode:
    node_id: str
    inputs: dict[str, Any]
    output: Any
    score: float | None = None


@dataclass
class FullRunTrace:
    prompt: str
    seed: int
    nodes: list[TraceNode] = field(default_factory=list)
    images: list[ImageArtifact] = field(default_factory=list)
    reports: list[dict] = field(default_factory=list)
    creativity_level: str = ""
    refined_prompt: str = ""
    negative_prompt: str = ""
    final_overall: float = 0.0
    edits_used: int = 0
    improvement_suggestions: str = ""
    human_in_loop: bool = False
    config_data: dict = field(default_factory=dict)
    complete: bool = False

    def record(
        self,
        node_id: str,
        inputs: dict[str, Any],
        output: Any,
        score: float | None = None,
    ) -> None:
        self.nodes.append(TraceNode(node_id, inputs, output, score))

    def node_ids(self) -> list[str]:
        return [n.node_id for n in self.nodes]

    def to_jsonable(self) -> dict:
        """Trace sans image bytes, suitable for trace.json / quarantine."""
        return {
            "prompt": self.prompt,
            "seed": self.seed,
            "creativity_level": self.creativity_level,
            "refined_prompt": self.refined_prompt,
            "negative_prompt": self.negative_prompt,
            "final_overall": self.final_overall,
            "edits_used": self.edits_used,
            "improvement_suggestions": self.improvement_suggestions,
            "human_in_loop": self.human_in_loop,
            "config_data": self.config_data,
            "complete": self.complete,
            "nodes": [asdict(n) for n in self.nodes],
            "images": [
                {
                    "width": img.width,
                    "height": img.height,
                    "seed": img.seed,
                    "positive_prompt": img.positive_prompt,
                    "negative_prompt": img.negative_prompt,
                    "guidance_scale": img.guidance_scale,
                    "edit_depth": img.chain_length(),
                }
                for img in self.images
            ],
        }
