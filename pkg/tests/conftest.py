import json

import pytest

from sidiff.backends.mock import DeterministicChatBackend, mock_backend_set
from sidiff.backends.schemas import AESTHETIC_KEYS, ALIGNMENT_KEYS, TRAJECTORY_STEP_KEYS
from sidiff.evaluator import EvaluationReport
from sidiff.memory import StoreId, TrajectoryRecord, open_kb

TS = "2026-01-15T10:30:00.000+00:00"


def make_record(
    prompt: str = "a cat",
    *,
    regenerations: int = 0,
    reference_image: str | None = None,
    score: float = 8.0,
    rating: float = 8.0,
) -> TrajectoryRecord:
    return TrajectoryRecord(
        timestamp=TS,
        image_index="run/final.png",
        original_prompt=prompt,
        refined_prompt=f"{prompt}, clarified",
        evaluation_score=score,
        confidence_score=5.0,
        regeneration_count=regenerations,
        trajectory_reasoning="synthetic trajectory",
        step_scores={k: 8.0 for k in TRAJECTORY_STEP_KEYS},
        successes={k: f"{k} ok" for k in TRAJECTORY_STEP_KEYS},
        pitfalls={k: f"{k} none" for k in TRAJECTORY_STEP_KEYS},
        overall_rating=rating,
        config_data={"tau": 8.0},
        process_summary="synthetic process summary",
        reference_image=reference_image,
    )


def make_report(score: float = 8.0, suggestions: str = "") -> EvaluationReport:
    return EvaluationReport(
        aesthetic_reasoning="r",
        aesthetic_score={k: score for k in AESTHETIC_KEYS},
        alignment_reasoning="r",
        alignment_score={k: score for k in ALIGNMENT_KEYS},
        detected_artifacts=(),
        artifact_reasoning="",
        main_subjects_present=True,
        missing_elements=(),
        improvement_suggestions=suggestions,
        overall_reasoning="",
    )


def eval_reply(score: float) -> str:
    """A schema-valid evaluation reply whose summary equals `score`."""
    return json.dumps(
        {
            "aesthetic_reasoning": "r",
            "aesthetic_score": {k: score for k in AESTHETIC_KEYS},
            "alignment_reasoning": "r",
            "alignment_score": {k: score for k in ALIGNMENT_KEYS},
            "artifacts": {"detected_artifacts": [], "artifact_reasoning": ""},
            "main_subjects_present": True,
            "missing_elements": [],
            "improvement_suggestions": "",
            "overall_reasoning": "",
        }
    )


@pytest.fixture
def kb(tmp_path):
    with open_kb(tmp_path / "kb", dim=64) as knowledge_base:
        yield knowledge_base


@pytest.fixture
def backends():
    return mock_backend_set(dim=64)


@pytest.fixture
def chat():
    return DeterministicChatBackend()


def seed_store(kb, store: StoreId, n: int, embed, prefix: str = "prompt") -> list[int]:
    """Append n synthetic records and index their prompt embeddings."""
    from sidiff.backends.types import embed_text

    ids = []
    for i in range(n):
        rec = make_record(
            f"{prefix} {i}",
            reference_image="run/intermediate_0.png" if store is StoreId.EDIT else None,
            regenerations=1 if store is StoreId.EDIT else 0,
        )
        rec_id = kb.append_trajectory(store, rec)
        kb.index_embedding(store, rec_id, embed_text(embed, rec.original_prompt))
        ids.append(rec_id)
    return ids
