import json
import sqlite3

import numpy as np
import pytest

from sidiff.backends.mock import HashEmbedBackend
from sidiff.backends.types import EmbeddingVector
from sidiff.errors import CorruptStore, DimensionMismatch, InvariantViolation, UnknownId
from sidiff.memory import (
    DB_FILENAME,
    StoreId,
    import_trajectories,
    open_kb,
)

from conftest import make_record, seed_store


def unit_vec(dim: int, seed: int) -> EmbeddingVector:
    rng = np.random.default_rng(seed)
    raw = rng.standard_normal(dim)
    raw /= np.linalg.norm(raw)
    return EmbeddingVector(values=tuple(float(x) for x in raw), dim=dim)


class TestOpenAndSchema:
    def test_fresh_stores_are_empty(self, kb):
        assert kb.trajectory_count(StoreId.GEN) == 0
        assert kb.trajectory_count(StoreId.EDIT) == 0

    def test_reopen_preserves_records(self, tmp_path):
        path = tmp_path / "kb"
        with open_kb(path, dim=8) as kb:
            rec_id = kb.append_trajectory(StoreId.GEN, make_record("a cat"))
            kb.index_embedding(StoreId.GEN, rec_id, unit_vec(8, 1))
        with open_kb(path, dim=8) as kb:
            assert kb.trajectory_count(StoreId.GEN) == 1
            assert kb.get_record(StoreId.GEN, rec_id).original_prompt == "a cat"
            hits = kb.retrieve_similar(StoreId.GEN, unit_vec(8, 1), 1)
            assert hits[0].record.id == rec_id
            assert hits[0].similarity == pytest.approx(1.0, abs=1e-6)

    def test_missing_column_is_corrupt(self, tmp_path):
        path = tmp_path / "kb"
        open_kb(path, dim=8).close()
        conn = sqlite3.connect(path / DB_FILENAME)
        conn.execute("ALTER TABLE trajectories_gen DROP COLUMN process_summary")
        conn.commit()
        conn.close()
        with pytest.raises(CorruptStore):
            open_kb(path, dim=8)

    def test_gen_table_has_no_reference_image_column(self, tmp_path):
        path = tmp_path / "kb"
        open_kb(path, dim=8).close()
        conn = sqlite3.connect(path / DB_FILENAME)
        gen_cols = [r[1] for r in conn.execute("PRAGMA table_info(trajectories_gen)")]
        edit_cols = [r[1] for r in conn.execute("PRAGMA table_info(trajectories_edit)")]
        conn.close()
        assert "reference_image" not in gen_cols
        assert "reference_image" in edit_cols
        # bit-exact column lists
        assert gen_cols == [
            "id",
            "timestamp",
            "image_index",
            "original_prompt",
            "refined_prompt",
            "evaluation_score",
            "confidence_score",
            "regeneration_count",
            "trajectory_reasoning",
            "step_scores",
            "successes",
            "pitfalls",
            "overall_rating",
            "config_data",
            "process_summary",
        ]
        assert edit_cols == [
            "id",
            "timestamp",
            "image_index",
            "original_prompt",
            "refined_prompt",
            "evaluation_score",
            "confidence_score",
            "regeneration_count",
            "reference_image",
            "trajectory_reasoning",
            "step_scores",
            "successes",
            "pitfalls",
            "overall_rating",
            "config_data",
            "process_summary",
        ]


class TestAppend:
    def test_ids_autoincrement(self, kb):
        first = kb.append_trajectory(StoreId.GEN, make_record("a"))
        second = kb.append_trajectory(StoreId.GEN, make_record("b"))
        assert second == first + 1

    def test_regeneration_bound_enforced(self, kb):
        with pytest.raises(InvariantViolation):
            kb.append_trajectory(StoreId.GEN, make_record(regenerations=3))

    def test_reference_image_iff_edit_store(self, kb):
        with pytest.raises(InvariantViolation):
            kb.append_trajectory(StoreId.GEN, make_record(reference_image="x.png"))
        with pytest.raises(InvariantViolation):
            kb.append_trajectory(StoreId.EDIT, make_record())
        rec_id = kb.append_trajectory(
            StoreId.EDIT, make_record(reference_image="x.png", regenerations=1)
        )
        assert rec_id == 1

    def test_dual_store_append_increments_both(self, kb):
        kb.append_trajectory(StoreId.GEN, make_record())
        kb.append_trajectory(
            StoreId.EDIT, make_record(reference_image="x.png", regenerations=1)
        )
        assert kb.trajectory_count(StoreId.GEN) == 1
        assert kb.trajectory_count(StoreId.EDIT) == 1

    def test_bad_timestamp_rejected(self, kb):
        rec = make_record()
        rec.timestamp = "yesterday-ish"
        with pytest.raises(InvariantViolation):
            kb.append_trajectory(StoreId.GEN, rec)


class TestIndexing:
    def test_self_similarity_is_rank_one(self, kb):
        rec_id = kb.append_trajectory(StoreId.GEN, make_record())
        vec = unit_vec(64, 5)
        kb.index_embedding(StoreId.GEN, rec_id, vec)
        hits = kb.retrieve_similar(StoreId.GEN, vec, 5)
        assert hits[0].record.id == rec_id
        assert hits[0].similarity == pytest.approx(1.0, abs=1e-6)

    def test_reindex_replaces_vector(self, kb):
        rec_id = kb.append_trajectory(StoreId.GEN, make_record())
        old = unit_vec(64, 1)
        kb.index_embedding(StoreId.GEN, rec_id, old)
        new = unit_vec(64, 2)
        kb.index_embedding(StoreId.GEN, rec_id, new)
        hits = kb.retrieve_similar(StoreId.GEN, old, 1)
        assert hits[0].similarity < 0.999  # prior direction no longer stored

    def test_unknown_id(self, kb):
        with pytest.raises(UnknownId):
            kb.index_embedding(StoreId.GEN, 99, unit_vec(64, 1))

    def test_dim_mismatch(self, kb):
        rec_id = kb.append_trajectory(StoreId.GEN, make_record())
        with pytest.raises(DimensionMismatch):
            kb.index_embedding(StoreId.GEN, rec_id, unit_vec(32, 1))

    def test_non_unit_query_rejected(self, kb):
        with pytest.raises(ValueError):
            kb.retrieve_similar(
                StoreId.GEN, EmbeddingVector(values=(2.0,) + (0.0,) * 63, dim=64), 1
            )


class TestRetrieval:
    def test_truncates_to_store_size(self, kb):
        for i in range(3):
            rec_id = kb.append_trajectory(StoreId.GEN, make_record(f"p{i}"))
            kb.index_embedding(StoreId.GEN, rec_id, unit_vec(64, i))
        assert len(kb.retrieve_similar(StoreId.GEN, unit_vec(64, 0), 5)) == 3

    def test_ties_break_by_ascending_id(self, kb):
        vec = unit_vec(64, 9)
        first = kb.append_trajectory(StoreId.GEN, make_record("a"))
        second = kb.append_trajectory(StoreId.GEN, make_record("b"))
        kb.index_embedding(StoreId.GEN, second, vec)
        kb.index_embedding(StoreId.GEN, first, vec)
        hits = kb.retrieve_similar(StoreId.GEN, vec, 2)
        assert [h.record.id for h in hits] == [first, second]

    def test_matches_brute_force_oracle(self, tmp_path):
        # Independent oracle: per-row float64 dots over the test's own copy
        # of the indexed vectors, python-sorted by (-sim, id).
        dim, n, queries, k = 64, 300, 20, 5
        rng = np.random.default_rng(42)
        with open_kb(tmp_path / "kb", dim=dim) as kb:
            stored: dict[int, np.ndarray] = {}
            for i in range(n):
                raw = rng.standard_normal(dim)
                raw /= np.linalg.norm(raw)
                vec32 = raw.astype(np.float32)
                rec_id = kb.append_trajectory(StoreId.GEN, make_record(f"p{i}"))
                kb.index_embedding(
                    StoreId.GEN,
                    rec_id,
                    EmbeddingVector(values=tuple(float(x) for x in vec32), dim=dim),
                )
                stored[rec_id] = vec32
            for q in range(queries):
                raw = rng.standard_normal(dim)
                raw /= np.linalg.norm(raw)
                query = EmbeddingVector(values=tuple(float(x) for x in raw), dim=dim)
                q64 = np.asarray(query.values, dtype=np.float64)
                oracle = sorted(
                    (
                        (-float(np.dot(vec.astype(np.float64), q64)), rec_id)
                        for rec_id, vec in stored.items()
                    )
                )[:k]
                expected_ids = [rec_id for _, rec_id in oracle]
                got = [h.record.id for h in kb.retrieve_similar(StoreId.GEN, query, k)]
                assert got == expected_ids


class TestSidecarFormat:
    def test_wire_layout(self, tmp_path):
        import struct

        with open_kb(tmp_path / "kb", dim=4) as kb:
            rec_id = kb.append_trajectory(StoreId.GEN, make_record())
            kb.index_embedding(
                StoreId.GEN, rec_id, EmbeddingVector(values=(1.0, 0.0, 0.0, 0.0), dim=4)
            )
        data = (tmp_path / "kb" / "gen.vec").read_bytes()
        assert data[:4] == b"SDVX"
        dim = struct.unpack_from("<I", data, 4)[0]
        count = struct.unpack_from("<Q", data, 8)[0]
        assert (dim, count) == (4, 1)
        assert len(data) == 16 + count * (8 + 4 * dim)
        assert struct.unpack_from("<Q", data, 16)[0] == rec_id
        assert struct.unpack_from("<4f", data, 24) == (1.0, 0.0, 0.0, 0.0)

    def test_edit_store_has_its_own_sidecar(self, tmp_path):
        with open_kb(tmp_path / "kb", dim=4) as kb:
            rec_id = kb.append_trajectory(
                StoreId.EDIT, make_record(reference_image="x.png", regenerations=1)
            )
            kb.index_embedding(
                StoreId.EDIT, rec_id, EmbeddingVector(values=(0.0, 1.0, 0.0, 0.0), dim=4)
            )
        assert (tmp_path / "kb" / "edit.vec").exists()
        assert not (tmp_path / "kb" / "gen.vec").exists()


class TestExport:
    def test_empty_store_exports_zero(self, kb, tmp_path):
        out = tmp_path / "gen.jsonl"
        assert kb.export_trajectories(StoreId.GEN, out) == 0
        assert out.read_text() == ""

    def test_round_trip_is_field_exact(self, tmp_path):
        src = tmp_path / "src"
        dst = tmp_path / "dst"
        out = tmp_path / "gen.jsonl"
        with open_kb(src, dim=8) as kb:
            seed_store(kb, StoreId.GEN, 5, HashEmbedBackend(dim=8))
            originals = [kb.get_record(StoreId.GEN, i) for i in range(1, 6)]
            assert kb.export_trajectories(StoreId.GEN, out) == 5
        with open_kb(dst, dim=8) as kb:
            import_trajectories(kb, StoreId.GEN, out)
            for original in originals:
                copy = kb.get_record(StoreId.GEN, original.id)
                assert copy == original

    def test_export_count_matches_store_count(self, kb, tmp_path):
        seed_store(kb, StoreId.GEN, 7, HashEmbedBackend(dim=64))
        out = tmp_path / "gen.jsonl"
        assert kb.export_trajectories(StoreId.GEN, out) == kb.trajectory_count(StoreId.GEN)
        lines = [json.loads(l) for l in out.read_text().splitlines()]
        assert [obj["id"] for obj in lines] == sorted(obj["id"] for obj in lines)
