"""JSON schemas for every structured agent reply.

Schema ids: creativity, intent, refine, negative, evaluation,
trajectory_analysis, guidance_gen, guidance_edit, judge.

Score maps are schema-exact: missing or extra keys are rejected, not
coerced, so a malformed reply always goes through the repair loop.
"""

from __future__ import annotations

from typing import Any

AESTHETIC_KEYS = (
    "Composition",
    "Color Harmony",
    "Lighting & Exposure",
    "Focus & Sharpness",
    "Emotional Impact",
    "Uniqueness & Creativity",
)

ALIGNMENT_KEYS = (
    "Presence of Main Subjects",
    "Accuracy of Spatial Relationships",
    "Adherence to Style Requirements",
    "Background Representation",
)

TRAJECTORY_STEP_KEYS = (
    "creativity_level",
    "intention_analysis",
    "prompt_refinement",
    "negative_prompt",
    "generation",
    "evaluation",
)

GEN_GUIDANCE_KEYS = (
    "creativity_level_determination",
    "intention_analysis",
    "prompt_refinement",
    "negative_model_selection",
    "image_generation",
    "quality_evaluation",
    "regeneration_decision",
)

EDIT_GUIDANCE_KEYS = ("image_editing", "quality_evaluation")

WORKFLOW_INSIGHT_KEYS = (
    "critical_dependencies",
    "common_failure_chains",
    "success_combinations",
    "overall_rating_prediction",
)


def _exact_map(keys: tuple[str, ...], value_schema: dict) -> dict:
    return {
        "type": "object",
        "properties": {k: value_schema for k in keys},
        "required": list(keys),
        "additionalProperties": False,
    }


_SCORE_0_10 = {"type": "number", "minimum": 0, "maximum": 10}
_SCORE_1_10 = {"type": "number", "minimum": 1, "maximum": 10}
_STR = {"type": "string"}
_STR_OR_NUM = {"type": ["string", "number"]}

_GUIDANCE_ENTRY = {
    "type": "object",
    "properties": {
        "success_patterns": _STR,
        "failure_patterns": _STR,
        "impact_on_next": _STR,
        "preventive_guidance": _STR,
        "recommended_score": _STR_OR_NUM,
    },
    "required": [
        "success_patterns",
        "failure_patterns",
        "impact_on_next",
        "preventive_guidance",
        "recommended_score",
    ],
}

_WORKFLOW_INSIGHTS = {
    "type": "object",
    "properties": {
        "critical_dependencies": _STR,
        "common_failure_chains": _STR,
        "success_combinations": _STR,
        "overall_rating_prediction": _STR_OR_NUM,
    },
    "required": list(WORKFLOW_INSIGHT_KEYS),
}

SCHEMAS: dict[str, dict[str, Any]] = {
    "creativity": {
        "type": "object",
        "properties": {
            "creativity_level": {"enum": ["LOW", "MEDIUM", "HIGH"]},
            "reasoning": _STR,
            "prompt_characteristics": {
                "type": "object",
                "properties": {
                    "detail_level": {"enum": ["low", "medium", "high"]},
                    "specificity": {"enum": ["vague", "moderate", "precise"]},
                    "artistic_freedom": {"enum": ["constrained", "balanced", "open"]},
                },
                "required": ["detail_level", "specificity", "artistic_freedom"],
            },
        },
        "required": ["creativity_level", "reasoning", "prompt_characteristics"],
    },
    "intent": {
        "type": "object",
        "properties": {
            "identified_elements": {
                "type": "object",
                "properties": {
                    "main_subjects": {
                        "type": "array",
                        "items": {
                            "type": "object",
                            "additionalProperties": _STR,
                        },
                    },
                    "background": _STR,
                    "composition": _STR,
                    "color_harmony": _STR,
                    "lighting": _STR,
                    "focus_sharpness": _STR,
                    "emotional_impact": _STR,
                    "uniqueness_creativity": _STR,
                    "visual_style": _STR,
                    "references": {
                        "type": "object",
                        "properties": {
                            "content": {"type": "array"},
                            "style": _STR,
                        },
                        "required": ["content", "style"],
                    },
                },
                "required": ["main_subjects", "background", "visual_style", "references"],
            },
            "ambiguous_elements": {
                "type": "array",
                "items": {
                    "type": "object",
                    "properties": {
                        "element": {"type": "string", "minLength": 1},
                        "reason": {"type": "string", "minLength": 1},
                        "suggested_questions": {"type": "array", "items": _STR},
                        "creative_fill": _STR,
                    },
                    "required": ["element", "reason", "suggested_questions", "creative_fill"],
                },
            },
        },
        "required": ["identified_elements", "ambiguous_elements"],
    },
    "refine": {
        "type": "object",
        "properties": {
            "refined_prompt": {"type": "string", "minLength": 1},
            "reasoning": _STR,
        },
        "required": ["refined_prompt", "reasoning"],
    },
    "negative": {
        "type": "object",
        "properties": {
            "negative_prompt": _STR,
            "reasoning": _STR,
        },
        "required": ["negative_prompt", "reasoning"],
    },
    "evaluation": {
        "type": "object",
        "properties": {
            "aesthetic_reasoning": _STR,
            "aesthetic_score": _exact_map(AESTHETIC_KEYS, _SCORE_0_10),
            "alignment_reasoning": _STR,
            "alignment_score": _exact_map(ALIGNMENT_KEYS, _SCORE_0_10),
            "artifacts": {
                "type": "object",
                "properties": {
                    "detected_artifacts": {"type": "array", "items": _STR},
                    "artifact_reasoning": _STR,
                },
                "required": ["detected_artifacts", "artifact_reasoning"],
            },
            "main_subjects_present": {"type": "boolean"},
            "missing_elements": {"type": "array", "items": _STR},
            "improvement_suggestions": _STR,
            "overall_reasoning": _STR,
        },
        "required": [
            "aesthetic_reasoning",
            "aesthetic_score",
            "alignment_reasoning",
            "alignment_score",
            "artifacts",
            "main_subjects_present",
            "missing_elements",
            "improvement_suggestions",
            "overall_reasoning",
        ],
    },
    "trajectory_analysis": {
        "type": "object",
        "properties": {
            "trajectory_reasoning": _STR,
            "step_scores": _exact_map(TRAJECTORY_STEP_KEYS, _SCORE_1_10),
            "successes": _exact_map(TRAJECTORY_STEP_KEYS, _STR),
            "pitfalls": _exact_map(TRAJECTORY_STEP_KEYS, _STR),
            "overall_rating": _SCORE_1_10,
        },
        "required": [
            "trajectory_reasoning",
            "step_scores",
            "successes",
            "pitfalls",
            "overall_rating",
        ],
    },
    "guidance_gen": {
        "type": "object",
        "properties": {
            "step_analysis": _exact_map(GEN_GUIDANCE_KEYS, _GUIDANCE_ENTRY),
            "workflow_insights": _WORKFLOW_INSIGHTS,
        },
        "required": ["step_analysis", "workflow_insights"],
    },
    "guidance_edit": {
        "type": "object",
        "properties": {
            "step_analysis": _exact_map(EDIT_GUIDANCE_KEYS, _GUIDANCE_ENTRY),
            "workflow_insights": _WORKFLOW_INSIGHTS,
        },
        "required": ["step_analysis", "workflow_insights"],
    },
    "judge": {
        "type": "object",
        "properties": {
            "overall_score": {"type": "integer", "minimum": 1, "maximum": 5},
            "reasoning": _STR,
        },
        "required": ["overall_score", "reasoning"],
    },
}


def schema_for(schema_id: str) -> dict[str, Any]:
    if schema_id not in SCHEMAS:
        raise ValueError(
            f"unknown schema id {schema_id!r}; expected one of {sorted(SCHEMAS)}"
        )
    return SCHEMAS[schema_id]
