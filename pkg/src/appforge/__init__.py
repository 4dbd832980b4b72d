"""Multi-agent code generation pipeline with closed-loop feedback and traceability."""

from appforge.model import Budgets, CodePlan, PipelineState
from appforge.orchestrator import Orchestrator, RunOutcome, route_feedback
from appforge.workspace import Workspace

__all__ = ["Budgets", "CodePlan", "Orchestrator", "PipelineState", "RunOutcome", "Workspace", "route_feedback"]
__version__ = "0.1.0"
