"""
Strata-NeRF - Ablation Sweep Workflow
=====================================

Trains and evaluates every (variant, codebook size) pair on one dataset using
a LangGraph workflow:

    prepare_dataset -> supervisor -> train_job -> evaluate_job -> supervisor ... -> report
"""

from pathlib import Path

from langgraph.graph import END, StateGraph

from .config import RunConfig
from .errors import StrataError
from .field import ModelConfig
from .nodes import (
    create_evaluate_job_node,
    create_prepare_dataset_node,
    create_report_node,
    create_supervisor_node,
    create_train_job_node,
)
from .state import SweepJob, SweepState


def sweep_jobs(config: RunConfig) -> list[SweepJob]:
    """One job per (variant, codebook size); codebook-free variants share a training key."""
    jobs: list[SweepJob] = []
    for variant in config.eval.ablate_variants:
        for size in config.eval.ablate_codebook_sizes:
            uses_codebook = ModelConfig(variant=variant, codebook_size=size).uses_codebook
            key = f"{variant}_N{size}" if uses_codebook else variant
            jobs.append({"variant": variant, "codebook_size": size, "key": key})
    return jobs


def sweep_steps(num_jobs: int) -> int:
    """Steps a complete sweep takes before its report: dataset, then supervisor, train and evaluate per job."""
    return 1 + 3 * num_jobs


def make_ablation_sweep(config: RunConfig, out_dir: Path, progress: bool = False):
    """Create and compile the ablation sweep LangGraph workflow."""
    out_dir = Path(out_dir)
    max_steps = sweep_steps(len(sweep_jobs(config)))

    workflow = StateGraph(SweepState)

    workflow.add_node("prepare_dataset", create_prepare_dataset_node(config, out_dir))
    workflow.add_node("supervisor", create_supervisor_node(max_steps))
    workflow.add_node("train_job", create_train_job_node(config, out_dir, progress))
    workflow.add_node("evaluate_job", create_evaluate_job_node(config, out_dir))
    workflow.add_node("report", create_report_node(out_dir))

    def route_from_supervisor(state: SweepState) -> str:
        routing = {
            "TRAIN_JOB": "train_job",
            "REPORT": "report",
        }
        return routing.get(state.get("next_node"), "report")

    # A failed training job already left its error row
    def route_after_train(state: SweepState) -> str:
        if state.get("job_error"):
            return "supervisor"
        return "evaluate_job"

    workflow.set_entry_point("prepare_dataset")
    workflow.add_edge("prepare_dataset", "supervisor")
    workflow.add_conditional_edges("supervisor", route_from_supervisor)
    workflow.add_conditional_edges("train_job", route_after_train)
    workflow.add_edge("evaluate_job", "supervisor")
    workflow.add_edge("report", END)

    return workflow.compile()


def run_ablation_sweep(app, config: RunConfig, manifest_path: Path | None = None) -> dict:
    """Run every sweep job through the compiled workflow; returns the final state."""
    jobs = sweep_jobs(config)

    initial_state = {
        "manifest_path": str(manifest_path) if manifest_path else None,
        "num_levels": 1,
        "pending_jobs": jobs,
        "current_job": None,
        "checkpoint_path": None,
        "job_error": None,
        "trained": {},
        "rows": [],
        "next_node": None,
        "current_step": 0,
        "is_complete": False,
        "report_path": None,
    }

    state = app.invoke(initial_state, {"recursion_limit": sweep_steps(len(jobs)) + 10})
    if not state.get("is_complete"):
        raise StrataError("ablation sweep ended without writing its report")
    return state
