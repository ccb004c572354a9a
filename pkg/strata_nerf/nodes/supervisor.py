"""
Sweep Supervisor
================

Hands out the next (variant, codebook size) job, or finishes the sweep.
"""

import logging

from ..state import SweepState

logger = logging.getLogger(__name__)


def create_supervisor_node(max_steps: int | None = None):
    """Create the supervisor node function.

    ``max_steps`` bounds ``current_step``; past it the sweep goes straight to
    the report with the remaining jobs left undone.
    """

    def supervisor_node(state: SweepState) -> dict:
        pending = state.get("pending_jobs", [])
        current_step = state.get("current_step", 0)

        if pending and max_steps is not None and current_step > max_steps:
            logger.warning("sweep stopped at step %d with %d jobs left", current_step, len(pending))

        if not pending or (max_steps is not None and current_step > max_steps):
            return {
                "next_node": "REPORT",
                "current_job": None,
                "current_step": current_step + 1,
            }

        job, rest = pending[0], pending[1:]
        logger.info("sweep job %s (codebook %d), %d left", job["variant"], job["codebook_size"], len(rest))
        return {
            "next_node": "TRAIN_JOB",
            "current_job": job,
            "pending_jobs": rest,
            "checkpoint_path": None,
            "job_error": None,
            "current_step": current_step + 1,
        }

    return supervisor_node
