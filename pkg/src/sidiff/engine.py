"""The workflow state machine: retrieve guidance, orchestrate, generate,
evaluate, edit under a bounded budget, then record and learn.

A run is strictly sequential. Guidance activation is checked once at run
start; pre-activation runs still record trajectories (the knowledge base
has to reach the activation threshold somehow), only formulation is gated.
After the first image the loop always edits in place, never regenerates
from scratch.
"""

from __future__ import annotations

import hashlib
import json
import logging
import time
from dataclasses import dataclass, replace
from datetime import datetime, timezone
from pathlib import Path
from typing import Callable

from .backends.types import (
    BackendSet,
    GenerationParams,
    ImageArtifact,
    edit_image,
    embed_text,
    generate_image,
)
from .errors import SidiffError
from .evaluator import EvaluationReport, needs_edit, evaluate_image, summarize
from .guidance import (
    GuidancePacket,
    build_process_summary,
    condense_trajectory,
    formulate_guidance,
    render_node_guidance,
)
from .memory import KnowledgeBase, StoreId, TrajectoryRecord
from .orchestrator import (
    PromptBundle,
    UNIVERSAL_SAFEGUARDS,
    analyze_intent,
    assess_creativity,
    build_negative_prompt,
    refine_prompt,
    synthesize_edit_instruction,
)
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

logger = logging.getLogger(__name__)

Clock = Callable[[], datetime]


def utc_now() -> datetime:
    return datetime.now(timezone.utc)


def fixed_clock(epoch: str = "2000-01-01T00:00:00+00:00") -> Clock:
    """Deterministic clock for mock runs; keeps exported bytes reproducible."""
    instant = datetime.fromisoformat(epoch)
    return lambda: instant


@dataclass(frozen=True)
class WorkflowConfig:
    tau: float = 8.0
    max_edits: int = 2
    retrieval_k: int = 5
    activation_threshold: int = 200
    guidance_scale: float = 4.0
    negative_weight: float = 1.0
    seed: int = 0
    retries: int = 3
    human_in_loop: bool = False  # recorded only; nothing is ever asked
    image_width: int = 1024
    image_height: int = 1024

    def __post_init__(self) -> None:
        if not 0.0 < self.tau <= 10.0:
            raise ValueError("tau must lie in (0, 10]")
        if self.max_edits < 0:
            raise ValueError("max_edits must be >= 0")
        if self.retrieval_k < 1:
            raise ValueError("retrieval_k must be >= 1")
        if self.activation_threshold < 1:
            raise ValueError("activation_threshold must be >= 1")
        if self.retries < 1:
            raise ValueError("retries must be >= 1")
        if self.guidance_scale <= 0:
            raise ValueError("guidance_scale must be > 0")

    def generation_params(self) -> GenerationParams:
        return GenerationParams(
            width=self.image_width,
            height=self.image_height,
            guidance_scale=self.guidance_scale,
        )

    def to_json(self) -> dict:
        return {
            "tau": self.tau,
            "max_edits": self.max_edits,
            "retrieval_k": self.retrieval_k,
            "activation_threshold": self.activation_threshold,
            "guidance_scale": self.guidance_scale,
            "negative_weight": self.negative_weight,
            "seed": self.seed,
            "retries": self.retries,
            "human_in_loop": self.human_in_loop,
        }


@dataclass
class RunResult:
    final_image: ImageArtifact
    bundle: PromptBundle
    reports: list[EvaluationReport]
    edits_used: int
    overall: float
    run_id: str
    trajectory_id_gen: int | None
    trajectory_id_edit: int | None
    wall_time: float


def guidance_active(kb: KnowledgeBase, cfg: WorkflowConfig) -> bool:
    """True once the GEN store holds at least the activation threshold."""
    return kb.trajectory_count(StoreId.GEN) >= cfg.activation_threshold


def default_run_id(prompt: str, seed: int) -> str:
    return hashlib.sha256(f"{prompt}|{seed}".encode("utf-8")).hexdigest()[:12]


def _quarantine(trace: FullRunTrace, root: Path, run_id: str, clock: Clock) -> Path:
    root.mkdir(parents=True, exist_ok=True)
    stamp = clock().strftime("%Y%m%dT%H%M%S")
    path = root / f"{stamp}_{run_id}.json"
    path.write_text(
        json.dumps(trace.to_jsonable(), indent=2, sort_keys=True), encoding="utf-8"
    )
    return path


def _image_rel_paths(images: list[ImageArtifact], run_id: str) -> list[str]:
    names = [f"intermediate_{n}.png" for n in range(len(images) - 1)] + ["final.png"]
    return [f"{run_id}/{name}" for name in names]


def write_manifest(
    runs_dir: Path, run_id: str, trace: FullRunTrace, reports: list[EvaluationReport]
) -> Path:
    """Write runs/{run_id}/ with every image, trace.json, and reports.json."""
    run_dir = runs_dir / run_id
    run_dir.mkdir(parents=True, exist_ok=True)
    for image, rel in zip(trace.images, _image_rel_paths(trace.images, run_id)):
        (runs_dir / rel).write_bytes(image.data)
    (run_dir / "trace.json").write_text(
        json.dumps(trace.to_jsonable(), indent=2, sort_keys=True) + "\n",
        encoding="utf-8",
    )
    (run_dir / "reports.json").write_text(
        json.dumps([r.to_json() for r in reports], indent=2, sort_keys=True) + "\n",
        encoding="utf-8",
    )
    return run_dir


def finalize_and_learn(
    trace: FullRunTrace,
    kb: KnowledgeBase,
    backends: BackendSet,
    run_id: str,
    cfg: WorkflowConfig,
    clock: Clock = utc_now,
    episode: str | None = None,
) -> tuple[int, int | None]:
    """Condense the finished trace and persist it.

    Appends to the GEN store always, and to the EDIT store too when the run
    edited; the original-prompt embedding is indexed in every store written.
    """
    if not trace.complete:
        raise ValueError("trace must be complete before learning")
    timestamp = clock().isoformat(timespec="milliseconds")
    config_data = dict(cfg.to_json())
    config_data["episode"] = episode or ""
    rel_paths = _image_rel_paths(trace.images, run_id)

    def _record(analysis, model_name: str, reference_image: str | None) -> TrajectoryRecord:
        data = dict(config_data)
        data["model"] = model_name
        return TrajectoryRecord(
            timestamp=timestamp,
            image_index=rel_paths[-1],
            original_prompt=trace.prompt,
            refined_prompt=trace.refined_prompt,
            evaluation_score=trace.final_overall,
            confidence_score=5.0,
            regeneration_count=trace.edits_used,
            trajectory_reasoning=analysis.trajectory_reasoning,
            step_scores=analysis.step_scores,
            successes=analysis.successes,
            pitfalls=analysis.pitfalls,
            overall_rating=analysis.overall_rating,
            config_data=data,
            process_summary=build_process_summary(trace),
            reference_image=reference_image,
        )

    gen_analysis = condense_trajectory(
        backends.chat,
        trace,
        trace.images,
        backends.gen_model_name,
        kind=StoreId.GEN,
        retries=cfg.retries,
    )
    gen_id = kb.append_trajectory(StoreId.GEN, _record(gen_analysis, backends.gen_model_name, None))
    query = embed_text(backends.embed, trace.prompt)
    kb.index_embedding(StoreId.GEN, gen_id, query)

    edit_id: int | None = None
    if trace.edits_used > 0:
        edit_analysis = condense_trajectory(
            backends.chat,
            trace,
            trace.images,
            backends.edit_model_name,
            kind=StoreId.EDIT,
            retries=cfg.retries,
        )
        edit_id = kb.append_trajectory(
            StoreId.EDIT,
            _record(edit_analysis, backends.edit_model_name, rel_paths[0]),
        )
        kb.index_embedding(StoreId.EDIT, edit_id, query)
    return gen_id, edit_id


def run_workflow(
    prompt: str,
    cfg: WorkflowConfig,
    kb: KnowledgeBase,
    backends: BackendSet,
    runs_dir: str | Path | None = None,
    run_id: str | None = None,
    clock: Clock = utc_now,
    episode: str | None = None,
) -> RunResult:
    """Execute one full workflow run and learn from it.

    Backend or memory errors abort the run; the partial trace is flushed to
    the quarantine directory (never to the knowledge base) and the error is
    re-raised. A condensation failure after a successful generation also
    quarantines, but the run still returns its image.
    """
    if not prompt:
        raise ValueError("prompt must be non-empty")
    started = time.perf_counter()
    run_id = run_id or default_run_id(prompt, cfg.seed)
    runs_root = Path(runs_dir) if runs_dir is not None else None
    quarantine_root = (runs_root if runs_root is not None else kb.path) / "quarantine"

    logger.info("run %s started: seed=%d tau=%g max_edits=%d", run_id, cfg.seed,
                cfg.tau, cfg.max_edits)
    trace = FullRunTrace(
        prompt=prompt,
        seed=cfg.seed,
        human_in_loop=cfg.human_in_loop,
        config_data={**cfg.to_json(), "episode": episode or ""},
    )
    try:
        result = _run_body(prompt, cfg, kb, backends, trace)
    except (SidiffError, LookupError) as exc:
        path = _quarantine(trace, quarantine_root, run_id, clock)
        logger.error("run %s aborted: %s (trace quarantined at %s)", run_id, exc, path)
        raise SidiffError(f"run aborted ({exc}); partial trace at {path}") from exc

    bundle, image, reports = result
    trace.complete = True

    try:
        gen_id, edit_id = finalize_and_learn(
            trace, kb, backends, run_id, cfg, clock=clock, episode=episode
        )
    except (SidiffError, LookupError) as exc:
        path = _quarantine(trace, quarantine_root, run_id, clock)
        logger.warning(
            "run %s: condensation failed (%s); trace quarantined at %s", run_id, exc, path
        )
        gen_id, edit_id = None, None

    if runs_root is not None:
        write_manifest(runs_root, run_id, trace, reports)

    logger.info(
        "run %s finished: overall=%g edits=%d gen_id=%s edit_id=%s",
        run_id, trace.final_overall, trace.edits_used, gen_id, edit_id,
    )
    return RunResult(
        final_image=image,
        bundle=bundle,
        reports=reports,
        edits_used=trace.edits_used,
        overall=trace.final_overall,
        run_id=run_id,
        trajectory_id_gen=gen_id,
        trajectory_id_edit=edit_id,
        wall_time=time.perf_counter() - started,
    )


def _run_body(
    prompt: str,
    cfg: WorkflowConfig,
    kb: KnowledgeBase,
    backends: BackendSet,
    trace: FullRunTrace,
) -> tuple[PromptBundle, ImageArtifact, list[EvaluationReport]]:
    chat = backends.chat
    params = cfg.generation_params()

    # (1) guidance retrieval; formulation only once activated and only when
    # neighbors exist. The EDIT packet is deferred to the first edit.
    # Activation is evaluated once per run, never re-checked mid-run.
    gen_packet: GuidancePacket | None = None
    edit_packet: GuidancePacket | None = None
    active = guidance_active(kb, cfg)
    if active:
        query = embed_text(backends.embed, prompt)
        hits = kb.retrieve_similar(StoreId.GEN, query, cfg.retrieval_k)
        if hits:
            gen_packet = formulate_guidance(
                chat, prompt, hits, StoreId.GEN, retries=cfg.retries
            )
            logger.info("guidance active: formulated GEN packet from %d hits", len(hits))

    def node_guidance(node: str, packet: GuidancePacket | None):
        return render_node_guidance(packet, node)

    # (2) the four preprocessing sub-agents, in fixed order
    creativity = assess_creativity(
        chat, prompt, node_guidance(NODE_S_CRE, gen_packet), retries=cfg.retries
    )
    trace.creativity_level = creativity.level
    trace.record(NODE_S_CRE, {"prompt": prompt}, creativity.level)

    spec = analyze_intent(
        chat, prompt, creativity, node_guidance(NODE_S_INT, gen_packet), retries=cfg.retries
    )
    trace.record(
        NODE_S_INT,
        {"prompt": prompt, "creativity_level": creativity.level},
        {"ambiguous_elements": len(spec.ambiguous_elements)},
    )

    refined = refine_prompt(
        chat, prompt, spec, node_guidance(NODE_S_REF, gen_packet), retries=cfg.retries
    )
    trace.record(NODE_S_REF, {"prompt": prompt}, refined.text)

    negative = build_negative_prompt(
        chat,
        prompt,
        refined,
        node_guidance(NODE_S_NEG, gen_packet),
        retries=cfg.retries,
        safeguards=UNIVERSAL_SAFEGUARDS,
    )
    trace.record(NODE_S_NEG, {"refined": refined.text}, negative.text)

    bundle = PromptBundle(
        original=prompt,
        creativity=creativity,
        spec=spec,
        positive=refined,
        negative=negative,
    )
    trace.refined_prompt = refined.text
    trace.negative_prompt = negative.text

    # (3) initial generation
    image = generate_image(backends.gen, refined.text, negative.text, cfg.seed, params)
    trace.images.append(image)
    trace.record(
        NODE_GENERATE,
        {"positive": refined.text, "negative": negative.text, "seed": cfg.seed},
        {"width": image.width, "height": image.height},
    )

    # (4) evaluation
    report = evaluate_image(
        chat, image, prompt, refined.text, node_guidance(NODE_EVAL, gen_packet),
        retries=cfg.retries,
    )
    summary = summarize(report)
    reports = [report]
    trace.reports.append(report.to_json())
    trace.record(NODE_EVAL, {"image": 0}, report.overall_reasoning, score=summary.overall)

    # (5) bounded edit loop; strictly-below gating
    while needs_edit(summary, cfg.tau) and trace.edits_used < cfg.max_edits:
        trace.record(
            NODE_EDIT_DECISION,
            {"overall": summary.overall, "tau": cfg.tau, "edits_used": trace.edits_used},
            "edit",
            score=summary.overall,
        )
        if edit_packet is None and active:
            query = embed_text(backends.embed, prompt)
            edit_hits = kb.retrieve_similar(StoreId.EDIT, query, cfg.retrieval_k)
            if edit_hits:
                edit_packet = formulate_guidance(
                    chat, prompt, edit_hits, StoreId.EDIT, retries=cfg.retries
                )

        refine_g = (
            node_guidance(NODE_EDIT, edit_packet)
            if edit_packet is not None
            else node_guidance(NODE_S_REF, gen_packet)
        )
        negative_g = node_guidance(NODE_S_NEG, gen_packet)
        refined, negative = synthesize_edit_instruction(
            chat, bundle, report, refine_g, negative_g,
            retries=cfg.retries, safeguards=UNIVERSAL_SAFEGUARDS,
        )
        bundle = replace(bundle, positive=refined, negative=negative)
        trace.refined_prompt = refined.text
        trace.negative_prompt = negative.text
        trace.record(NODE_S_REF, {"feedback": report.improvement_suggestions}, refined.text)
        trace.record(NODE_S_NEG, {"refined": refined.text}, negative.text)

        image = edit_image(
            backends.edit, image, refined.text, negative.text, cfg.seed, params
        )
        trace.images.append(image)
        trace.edits_used += 1
        trace.record(
            NODE_EDIT,
            {"positive": refined.text, "negative": negative.text, "seed": cfg.seed},
            {"edit_number": trace.edits_used},
        )

        eval_g = (
            node_guidance(NODE_EVAL, edit_packet)
            if edit_packet is not None
            else node_guidance(NODE_EVAL, gen_packet)
        )
        report = evaluate_image(
            chat, image, prompt, refined.text, eval_g, retries=cfg.retries
        )
        summary = summarize(report)
        reports.append(report)
        trace.reports.append(report.to_json())
        trace.record(
            NODE_EVAL, {"image": trace.edits_used}, report.overall_reasoning,
            score=summary.overall,
        )

    trace.record(
        NODE_EDIT_DECISION,
        {"overall": summary.overall, "tau": cfg.tau, "edits_used": trace.edits_used},
        "stop",
        score=summary.overall,
    )
    trace.final_overall = summary.overall
    trace.improvement_suggestions = report.improvement_suggestions
    return bundle, image, reports

