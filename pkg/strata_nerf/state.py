"""
Strata-NeRF - Ablation Sweep State
==================================

Defines the shared state for the LangGraph ablation workflow.
"""

import operator
from typing import Annotated, List, Optional, TypedDict


class SweepJob(TypedDict):
    variant: str
    codebook_size: int
    key: str  # output directory name; variants without a codebook share one key


class SweepState(TypedDict):
    """Shared state for the ablation sweep workflow."""

    # Dataset every job trains and evaluates on
    manifest_path: Optional[str]
    num_levels: int

    # Job queue and the job in flight
    pending_jobs: List[SweepJob]
    current_job: Optional[SweepJob]
    checkpoint_path: Optional[str]
    job_error: Optional[str]

    # Keys already trained, mapped to their checkpoint path
    trained: dict

    # Result rows - appended by job nodes
    rows: Annotated[list, operator.add]

    # Routing
    next_node: Optional[str]
    current_step: int
    is_complete: bool

    # Written by the report node
    report_path: Optional[str]
