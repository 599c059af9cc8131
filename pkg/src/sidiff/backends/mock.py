"""Deterministic mock backends.

Every mock is referentially transparent: identical inputs produce
byte-identical outputs, across processes (hashes, not `random`). The one
deliberate exception is an evaluator score schedule, which is scripted test
machinery and consumes its schedule call by call.
"""

from __future__ import annotations

import hashlib
import json
import re
import threading

from .schemas import (
    AESTHETIC_KEYS,
    ALIGNMENT_KEYS,
    EDIT_GUIDANCE_KEYS,
    GEN_GUIDANCE_KEYS,
    TRAJECTORY_STEP_KEYS,
)
from .types import (
    BackendSet,
    ChatRequest,
    EmbeddingVector,
    GenerationParams,
    ImageArtifact,
)
from ..pngio import encode_solid_png

MOCK_IMAGE_SIZE = 64

# Distinctive phrases from each shipped template, used to route a request
# to the right canned reply without the mock knowing about template ids.
_STAGE_MARKERS = (
    ("s_cre", "determine the appropriate creativity level"),
    ("s_int", "expert prompt analyst for image generation"),
    ("s_ref", "You are a Qwen prompt expert"),
    ("s_neg", "expert at generating negative prompts"),
    ("eval", "You are an expert image judge"),
    ("trajectory", "expert AI model performance analyst"),
    ("guidance", "analyzing patterns in image generation workflows"),
    ("judge", "expert evaluator assessing the quality"),
)

_ORIGINAL_PROMPT_RE = re.compile(r'Original prompt: "(.*?)"', re.DOTALL)


def _digest(*parts: str) -> bytes:
    h = hashlib.sha256()
    for part in parts:
        h.update(part.encode("utf-8"))
        h.update(b"\x1f")
    return h.digest()


def stage_of(request_text: str) -> str | None:
    for stage, marker in _STAGE_MARKERS:
        if marker in request_text:
            return stage
    return None


class HashEmbedBackend:
    """Maps text to a fixed-dim vector via counter-mode hashing."""

    def __init__(self, dim: int = 64):
        if dim <= 0:
            raise ValueError("dim must be positive")
        self.dim = dim

    def embed(self, text: str) -> EmbeddingVector:
        values = []
        counter = 0
        while len(values) < self.dim:
            block = _digest(text, str(counter))
            for i in range(0, len(block) - 3, 4):
                word = int.from_bytes(block[i : i + 4], "little")
                values.append(word / 2**31 - 1.0)
                if len(values) == self.dim:
                    break
            counter += 1
        return EmbeddingVector(values=tuple(values), dim=self.dim)


class MockImageBackend:
    """Solid-color PNG whose RGB is a stable hash of the generation inputs."""

    def __init__(self):
        self._lock = threading.Lock()
        self.generate_calls = 0
        self.edit_calls = 0

    def generate(
        self, pos: str, neg: str, seed: int, cfg: GenerationParams
    ) -> ImageArtifact:
        with self._lock:
            self.generate_calls += 1
        rgb = tuple(_digest("gen", pos, neg, str(seed))[:3])
        data = encode_solid_png(MOCK_IMAGE_SIZE, MOCK_IMAGE_SIZE, rgb)
        return ImageArtifact(
            data=data,
            width=MOCK_IMAGE_SIZE,
            height=MOCK_IMAGE_SIZE,
            seed=seed,
            positive_prompt=pos,
            negative_prompt=neg,
            guidance_scale=cfg.guidance_scale,
            parent=None,
        )

    def edit(
        self,
        base: ImageArtifact,
        pos: str,
        neg: str,
        seed: int,
        cfg: GenerationParams,
    ) -> ImageArtifact:
        with self._lock:
            self.edit_calls += 1
        base_tag = hashlib.sha256(base.data).hexdigest()
        rgb = tuple(_digest("edit", base_tag, pos, neg, str(seed))[:3])
        data = encode_solid_png(base.width, base.height, rgb)
        return ImageArtifact(
            data=data,
            width=base.width,
            height=base.height,
            seed=seed,
            positive_prompt=pos,
            negative_prompt=neg,
            guidance_scale=cfg.guidance_scale,
            parent=base,
        )


class ScriptedChatBackend:
    """Substring-keyed scripted replies for unit tests.

    `script` maps a marker substring to a reply or a FIFO list of replies;
    the last reply of an exhausted list repeats. Calls are recorded.
    """

    def __init__(self, script: dict[str, str | list[str]], default: str | None = None):
        self._lock = threading.Lock()
        self._queues: dict[str, list[str]] = {
            key: list(val) if isinstance(val, list) else [val]
            for key, val in script.items()
        }
        self._default = default
        self.calls: list[str] = []

    def complete(self, req: ChatRequest) -> str:
        text = req.text_content()
        with self._lock:
            self.calls.append(text)
            for marker, queue in self._queues.items():
                if marker in text:
                    return queue.pop(0) if len(queue) > 1 else queue[0]
            if self._default is not None:
                return self._default
        raise LookupError("no scripted reply matches the request")


class DeterministicChatBackend:
    """Schema-valid canned replies for every agent stage.

    Replies are pure functions of the request text, except the optional
    evaluator score schedule: when set, the n-th evaluation call returns a
    report whose every subscore equals schedule[n]; once the schedule is
    exhausted, subsequent evaluations score a passing 10.0.
    """

    def __init__(self, eval_schedule: list[float] | None = None):
        self._lock = threading.Lock()
        self._eval_schedule = list(eval_schedule) if eval_schedule else None
        self._eval_calls = 0
        self.stage_counts: dict[str, int] = {}

    def complete(self, req: ChatRequest) -> str:
        text = req.text_content()
        stage = stage_of(text)
        if stage is None:
            raise LookupError("request matches no known agent template")
        with self._lock:
            self.stage_counts[stage] = self.stage_counts.get(stage, 0) + 1
            if stage == "eval":
                index = self._eval_calls
                self._eval_calls += 1
            else:
                index = 0
        builder = getattr(self, f"_reply_{stage}")
        return builder(text, index)

    # -- reply builders ----------------------------------------------------

    def _user_payload(self, text: str) -> str:
        # The task payload is the final segment of the request text.
        return text.rsplit("\n", 1)[-1] if "\n" in text else text

    def _reply_s_cre(self, text: str, _index: int) -> str:
        prompt = self._user_payload(text)
        words = len(prompt.split())
        if words < 10:
            level, detail, spec, freedom = "HIGH", "low", "vague", "open"
        elif words <= 25:
            level, detail, spec, freedom = "MEDIUM", "medium", "moderate", "balanced"
        else:
            level, detail, spec, freedom = "LOW", "high", "precise", "constrained"
        return json.dumps(
            {
                "creativity_level": level,
                "reasoning": f"Prompt has {words} words.",
                "prompt_characteristics": {
                    "detail_level": detail,
                    "specificity": spec,
                    "artistic_freedom": freedom,
                },
            },
            sort_keys=True,
        )

    def _reply_s_int(self, text: str, _index: int) -> str:
        match = _ORIGINAL_PROMPT_RE.search(text)
        subject = (match.group(1) if match else self._user_payload(text))[:80]
        return json.dumps(
            {
                "identified_elements": {
                    "main_subjects": [{"subject": subject}],
                    "background": "",
                    "composition": "",
                    "color_harmony": "",
                    "lighting": "",
                    "focus_sharpness": "",
                    "emotional_impact": "",
                    "uniqueness_creativity": "",
                    "visual_style": "",
                    "references": {"content": [], "style": ""},
                },
                "ambiguous_elements": [],
            },
            sort_keys=True,
        )

    def _reply_s_ref(self, text: str, _index: int) -> str:
        match = _ORIGINAL_PROMPT_RE.search(text)
        prompt = match.group(1) if match else self._user_payload(text)
        if "improvement suggestions" in text.lower():
            refined = f"{prompt}, revised per evaluator feedback"
        else:
            refined = prompt
        return json.dumps(
            {"refined_prompt": refined, "reasoning": "Preserved the original intent."},
            sort_keys=True,
        )

    def _reply_s_neg(self, text: str, _index: int) -> str:
        return json.dumps(
            {
                "negative_prompt": "low quality, blurry, oversaturated, extra limbs, text",
                "reasoning": "Common quality artifacts for this scene type.",
            },
            sort_keys=True,
        )

    def _eval_score(self, text: str, index: int) -> float:
        if self._eval_schedule is not None:
            if index < len(self._eval_schedule):
                return float(self._eval_schedule[index])
            return 10.0
        word = int.from_bytes(_digest("eval-score", text)[:4], "little")
        return 6.0 + (word % 81) / 20.0  # 6.0 .. 10.0 in 0.05 steps

    def _reply_eval(self, text: str, index: int) -> str:
        score = self._eval_score(text, index)
        needs_work = score < 8.0
        return json.dumps(
            {
                "aesthetic_reasoning": "Mock aesthetic assessment.",
                "aesthetic_score": {k: score for k in AESTHETIC_KEYS},
                "alignment_reasoning": "Mock alignment assessment.",
                "alignment_score": {k: score for k in ALIGNMENT_KEYS},
                "artifacts": {
                    "detected_artifacts": ["banding"] if needs_work else [],
                    "artifact_reasoning": "Synthetic artifact report.",
                },
                "main_subjects_present": not needs_work,
                "missing_elements": ["atmosphere too flat"] if needs_work else [],
                "improvement_suggestions": (
                    "Increase subject prominence and contrast." if needs_work else ""
                ),
                "overall_reasoning": f"Overall mock score {score:g}.",
            },
            sort_keys=True,
        )

    def _reply_trajectory(self, text: str, _index: int) -> str:
        word = int.from_bytes(_digest("traj-score", text)[:4], "little")
        score = 7.0 + (word % 31) / 10.0  # 7.0 .. 10.0
        return json.dumps(
            {
                "trajectory_reasoning": "Mock end-to-end workflow analysis.",
                "step_scores": {k: score for k in TRAJECTORY_STEP_KEYS},
                "successes": {k: f"{k} behaved as intended" for k in TRAJECTORY_STEP_KEYS},
                "pitfalls": {k: f"no {k} issues observed" for k in TRAJECTORY_STEP_KEYS},
                "overall_rating": score,
            },
            sort_keys=True,
        )

    def _guidance_entry(self, key: str) -> dict[str, str]:
        return {
            "success_patterns": f"Past runs handled {key} consistently.",
            "failure_patterns": f"Occasional {key} drift on vague prompts.",
            "impact_on_next": "Feeds directly into the next stage.",
            "preventive_guidance": f"Keep {key} tightly grounded in the prompt.",
            "recommended_score": "8",
        }

    def _reply_guidance(self, text: str, _index: int) -> str:
        keys = EDIT_GUIDANCE_KEYS if '"image_editing"' in text else GEN_GUIDANCE_KEYS
        return json.dumps(
            {
                "step_analysis": {k: self._guidance_entry(k) for k in keys},
                "workflow_insights": {
                    "critical_dependencies": "Refinement quality drives generation quality.",
                    "common_failure_chains": "Vague intent leads to weak negatives.",
                    "success_combinations": "Grounded refinement with targeted negatives.",
                    "overall_rating_prediction": "8",
                },
            },
            sort_keys=True,
        )

    def _reply_judge(self, text: str, _index: int) -> str:
        word = int.from_bytes(_digest("judge-score", text)[:4], "little")
        return json.dumps(
            {
                "overall_score": 1 + word % 5,
                "reasoning": "Mock retrieval relevance verdict.",
            },
            sort_keys=True,
        )


def mock_backend_set(
    dim: int = 64, eval_schedule: list[float] | None = None
) -> BackendSet:
    """Full deterministic backend set; no network access occurs under it."""
    image = MockImageBackend()
    return BackendSet(
        chat=DeterministicChatBackend(eval_schedule=eval_schedule),
        embed=HashEmbedBackend(dim=dim),
        gen=image,
        edit=image,
        gen_model_name="mock-image-gen",
        edit_model_name="mock-image-edit",
    )
