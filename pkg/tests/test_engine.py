import json

import pytest

from sidiff.backends.mock import DeterministicChatBackend, mock_backend_set
from sidiff.backends.types import BackendSet
from sidiff.engine import (
    WorkflowConfig,
    default_run_id,
    finalize_and_learn,
    fixed_clock,
    guidance_active,
    run_workflow,
)
from sidiff.errors import SidiffError, TransportError
from sidiff.memory import StoreId, open_kb

from conftest import seed_store


def cfg_with(**kwargs) -> WorkflowConfig:
    return WorkflowConfig(**{"seed": 7, **kwargs})


def scheduled_backends(schedule) -> BackendSet:
    return mock_backend_set(dim=64, eval_schedule=schedule)


class TestLoopBounds:
    def test_immediate_pass_means_no_edits(self, kb):
        backends = scheduled_backends([9.0])
        result = run_workflow("a cat", cfg_with(), kb, backends, clock=fixed_clock())
        assert result.edits_used == 0
        assert len(result.reports) == 1
        assert backends.gen.generate_calls == 1
        assert backends.gen.edit_calls == 0

    def test_budget_exhausted_below_threshold(self, kb):
        backends = scheduled_backends([7.0, 7.5, 7.9])
        result = run_workflow("a cat", cfg_with(), kb, backends, clock=fixed_clock())
        assert result.edits_used == 2
        assert len(result.reports) == 3
        assert result.overall == pytest.approx(7.9)
        assert backends.gen.generate_calls == 1
        assert backends.gen.edit_calls == 2
        assert backends.chat.stage_counts["eval"] == 3

    def test_early_exit_after_single_successful_edit(self, kb):
        backends = scheduled_backends([7.0, 8.5])
        result = run_workflow("a cat", cfg_with(), kb, backends, clock=fixed_clock())
        assert result.edits_used == 1
        assert result.overall == pytest.approx(8.5)

    def test_zero_edit_budget(self, kb):
        backends = scheduled_backends([5.0])
        result = run_workflow(
            "a cat", cfg_with(max_edits=0), kb, backends, clock=fixed_clock()
        )
        assert result.edits_used == 0
        assert backends.gen.edit_calls == 0


class TestThresholdStrictness:
    def test_exact_tau_does_not_trigger(self, kb):
        backends = scheduled_backends([8.0])
        result = run_workflow("a cat", cfg_with(), kb, backends, clock=fixed_clock())
        assert result.edits_used == 0

    def test_just_below_tau_triggers_once(self, kb):
        backends = scheduled_backends([7.999])
        result = run_workflow("a cat", cfg_with(), kb, backends, clock=fixed_clock())
        assert result.edits_used == 1


class TestTraceCompleteness:
    def test_single_pass_node_sequence(self, kb, tmp_path):
        backends = scheduled_backends([9.0])
        result = run_workflow(
            "a cat", cfg_with(), kb, backends,
            runs_dir=tmp_path / "runs", clock=fixed_clock(),
        )
        trace = json.loads((tmp_path / "runs" / result.run_id / "trace.json").read_text())
        assert [n["node_id"] for n in trace["nodes"]] == [
            "s_cre",
            "s_int",
            "s_ref",
            "s_neg",
            "s_gen.generate",
            "a_eval",
            "engine.edit_decision",
        ]

    def test_two_edit_node_sequence(self, kb, tmp_path):
        backends = scheduled_backends([7.0, 7.5, 7.9])
        result = run_workflow(
            "a cat", cfg_with(), kb, backends,
            runs_dir=tmp_path / "runs", clock=fixed_clock(),
        )
        trace = json.loads((tmp_path / "runs" / result.run_id / "trace.json").read_text())
        cycle = ["engine.edit_decision", "s_ref", "s_neg", "s_gen.edit", "a_eval"]
        assert [n["node_id"] for n in trace["nodes"]] == (
            ["s_cre", "s_int", "s_ref", "s_neg", "s_gen.generate", "a_eval"]
            + cycle
            + cycle
            + ["engine.edit_decision"]
        )

    def test_manifest_files_written(self, kb, tmp_path):
        backends = scheduled_backends([7.0, 7.5, 7.9])
        result = run_workflow(
            "a cat", cfg_with(), kb, backends,
            runs_dir=tmp_path / "runs", clock=fixed_clock(),
        )
        run_dir = tmp_path / "runs" / result.run_id
        assert (run_dir / "final.png").exists()
        assert (run_dir / "intermediate_0.png").exists()
        assert (run_dir / "intermediate_1.png").exists()
        assert (run_dir / "reports.json").exists()
        reports = json.loads((run_dir / "reports.json").read_text())
        assert len(reports) == 3


class TestDualStoreRule:
    def test_edited_run_writes_both_stores(self, kb):
        backends = scheduled_backends([7.0, 8.5])
        result = run_workflow("a cat", cfg_with(), kb, backends, clock=fixed_clock())
        assert kb.trajectory_count(StoreId.GEN) == 1
        assert kb.trajectory_count(StoreId.EDIT) == 1
        assert result.trajectory_id_gen == 1
        assert result.trajectory_id_edit == 1
        edit_rec = kb.get_record(StoreId.EDIT, result.trajectory_id_edit)
        assert edit_rec.reference_image.endswith("intermediate_0.png")
        assert edit_rec.regeneration_count == 1

    def test_clean_run_writes_gen_only(self, kb):
        backends = scheduled_backends([9.0])
        result = run_workflow("a cat", cfg_with(), kb, backends, clock=fixed_clock())
        assert kb.trajectory_count(StoreId.GEN) == 1
        assert kb.trajectory_count(StoreId.EDIT) == 0
        assert result.trajectory_id_edit is None
        gen_rec = kb.get_record(StoreId.GEN, result.trajectory_id_gen)
        assert gen_rec.reference_image is None
        assert gen_rec.original_prompt == "a cat"
        assert gen_rec.evaluation_score == pytest.approx(9.0)


class TestGuidanceGating:
    def test_boundary_at_activation_threshold(self, kb, backends):
        cfg = cfg_with(activation_threshold=200)
        seed_store(kb, StoreId.GEN, 199, backends.embed)
        assert guidance_active(kb, cfg) is False
        seed_store(kb, StoreId.GEN, 1, backends.embed, prefix="extra")
        assert guidance_active(kb, cfg) is True

    def test_threshold_one(self, kb, backends):
        seed_store(kb, StoreId.GEN, 1, backends.embed)
        assert guidance_active(kb, cfg_with(activation_threshold=1)) is True

    def test_formulation_gated_until_activation(self, tmp_path):
        with open_kb(tmp_path / "kb", dim=64) as kb:
            backends = scheduled_backends([9.0])
            cfg = cfg_with(activation_threshold=5)
            seed_store(kb, StoreId.GEN, 4, backends.embed)
            run_workflow("a cat", cfg, kb, backends, clock=fixed_clock())
            assert "guidance" not in backends.chat.stage_counts

    def test_formulation_invoked_exactly_once_after_activation(self, tmp_path):
        with open_kb(tmp_path / "kb", dim=64) as kb:
            backends = scheduled_backends([9.0])
            cfg = cfg_with(activation_threshold=5)
            seed_store(kb, StoreId.GEN, 5, backends.embed)
            run_workflow("a cat", cfg, kb, backends, clock=fixed_clock())
            assert backends.chat.stage_counts["guidance"] == 1

    def test_edit_phase_formulates_edit_packet_when_store_populated(self, tmp_path):
        with open_kb(tmp_path / "kb", dim=64) as kb:
            backends = scheduled_backends([7.0, 9.0])
            cfg = cfg_with(activation_threshold=3)
            seed_store(kb, StoreId.GEN, 3, backends.embed)
            seed_store(kb, StoreId.EDIT, 2, backends.embed)
            run_workflow("a cat", cfg, kb, backends, clock=fixed_clock())
            # one GEN packet at start, one EDIT packet at the first edit
            assert backends.chat.stage_counts["guidance"] == 2

    def test_pre_activation_runs_still_record(self, kb):
        backends = scheduled_backends([9.0])
        run_workflow("a cat", cfg_with(), kb, backends, clock=fixed_clock())
        assert kb.trajectory_count(StoreId.GEN) == 1


class TestDeterminism:
    def _run_and_export(self, tmp_path, tag):
        kb_path = tmp_path / f"kb-{tag}"
        with open_kb(kb_path, dim=64) as kb:
            backends = mock_backend_set(dim=64)
            result = run_workflow(
                "a cat", cfg_with(), kb, backends,
                runs_dir=tmp_path / f"runs-{tag}", clock=fixed_clock(),
            )
            export = tmp_path / f"export-{tag}.jsonl"
            kb.export_trajectories(StoreId.GEN, export)
            trace = (tmp_path / f"runs-{tag}" / result.run_id / "trace.json").read_bytes()
            return result, export.read_bytes(), trace

    def test_repeat_runs_are_byte_identical(self, tmp_path):
        first, export_a, trace_a = self._run_and_export(tmp_path, "a")
        second, export_b, trace_b = self._run_and_export(tmp_path, "b")
        assert export_a == export_b
        assert trace_a == trace_b
        assert first.final_image.data == second.final_image.data
        assert first.overall == second.overall
        assert first.run_id == second.run_id

    def test_run_id_is_stable(self):
        assert default_run_id("a cat", 7) == default_run_id("a cat", 7)
        assert default_run_id("a cat", 7) != default_run_id("a cat", 8)


class _FailingEditBackend:
    def edit(self, base, pos, neg, seed, cfg):
        raise TransportError("edit endpoint unreachable")


class _FailOnTrajectoryChat(DeterministicChatBackend):
    def complete(self, req):
        text = req.text_content()
        if "expert AI model performance analyst" in text:
            return "this is not json"
        return super().complete(req)


class TestFailureHandling:
    def test_backend_error_quarantines_partial_trace(self, tmp_path):
        with open_kb(tmp_path / "kb", dim=64) as kb:
            backends = mock_backend_set(dim=64, eval_schedule=[7.0])
            broken = BackendSet(
                chat=backends.chat,
                embed=backends.embed,
                gen=backends.gen,
                edit=_FailingEditBackend(),
            )
            with pytest.raises(SidiffError):
                run_workflow(
                    "a cat", cfg_with(), kb, broken,
                    runs_dir=tmp_path / "runs", clock=fixed_clock(),
                )
            quarantined = list((tmp_path / "runs" / "quarantine").glob("*.json"))
            assert len(quarantined) == 1
            payload = json.loads(quarantined[0].read_text())
            assert payload["complete"] is False
            # nothing reached the knowledge base
            assert kb.trajectory_count(StoreId.GEN) == 0

    def test_condensation_failure_still_returns_image(self, tmp_path):
        with open_kb(tmp_path / "kb", dim=64) as kb:
            base = mock_backend_set(dim=64, eval_schedule=[9.0])
            backends = BackendSet(
                chat=_FailOnTrajectoryChat(eval_schedule=[9.0]),
                embed=base.embed,
                gen=base.gen,
                edit=base.edit,
            )
            result = run_workflow(
                "a cat", cfg_with(), kb, backends,
                runs_dir=tmp_path / "runs", clock=fixed_clock(),
            )
            assert result.final_image.data
            assert result.trajectory_id_gen is None
            assert kb.trajectory_count(StoreId.GEN) == 0
            assert list((tmp_path / "runs" / "quarantine").glob("*.json"))


class TestFinalize:
    def test_direct_finalize_returns_ids(self, kb):
        from test_guidance import _finished_trace

        backends = mock_backend_set(dim=64)
        trace, _ = _finished_trace(edits=1)
        gen_id, edit_id = finalize_and_learn(
            trace, kb, backends, "runX", cfg_with(), clock=fixed_clock()
        )
        assert gen_id == 1
        assert edit_id == 1

    def test_config_invariants(self):
        with pytest.raises(ValueError):
            WorkflowConfig(tau=0.0)
        with pytest.raises(ValueError):
            WorkflowConfig(tau=10.5)
        with pytest.raises(ValueError):
            WorkflowConfig(max_edits=-1)
        with pytest.raises(ValueError):
            WorkflowConfig(retrieval_k=0)
        with pytest.raises(ValueError):
            WorkflowConfig(activation_threshold=0)

    def test_shipped_defaults(self):
        cfg = WorkflowConfig()
        assert cfg.tau == 8.0
        assert cfg.max_edits == 2
        assert cfg.retrieval_k == 5
        assert cfg.activation_threshold == 200
        assert cfg.guidance_scale == 4.0
        assert cfg.negative_weight == 1.0
