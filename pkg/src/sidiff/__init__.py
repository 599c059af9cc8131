"""Self-improving text-to-image agent workflow.

Prompt preprocessing through five sub-agents, score-gated generate/
evaluate/edit looping, and an experience memory that condenses past runs
into retrievable guidance injected at every decision node.
"""

from .engine import (
    RunResult,
    WorkflowConfig,
    finalize_and_learn,
    fixed_clock,
    guidance_active,
    run_workflow,
)
from .evaluator import EvaluationReport, ScoreSummary, needs_edit, summarize
from .guidance import GuidancePacket, NodeGuidance, TrajectoryAnalysis
from .memory import KnowledgeBase, RankedHit, StoreId, TrajectoryRecord, open_kb
from .orchestrator import (
    CreativityAssessment,
    NegativePrompt,
    PromptBundle,
    RefinedPrompt,
    SemanticSpec,
)
from .trace import FullRunTrace

__version__ = "0.1.0"

__all__ = [
    "CreativityAssessment",
    "EvaluationReport",
    "FullRunTrace",
    "GuidancePacket",
    "KnowledgeBase",
    "NegativePrompt",
    "NodeGuidance",
    "PromptBundle",
    "RankedHit",
    "RefinedPrompt",
    "RunResult",
    "ScoreSummary",
    "SemanticSpec",
    "StoreId",
    "TrajectoryAnalysis",
    "TrajectoryRecord",
    "WorkflowConfig",
    "finalize_and_learn",
    "fixed_clock",
    "guidance_active",
    "needs_edit",
    "open_kb",
    "run_workflow",
    "summarize",
]
