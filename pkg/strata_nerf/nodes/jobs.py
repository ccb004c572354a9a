"""
Train / Evaluate Job Nodes
==========================

One sweep job trains a variant on the sweep dataset, then scores its test
split. A failing job turns into a result row with NaN metrics and the error
message; the sweep carries on with the next job.
"""

import logging
import math
from dataclasses import replace
from pathlib import Path

from ..config import RunConfig
from ..field import parameter_count
from ..metrics import evaluate
from ..scenegen import load_manifest
from ..state import SweepState
from ..training import train

logger = logging.getLogger(__name__)

ROW_COLUMNS = ["variant", "codebook_size", "params", "frames", "psnr", "ssim", "error"]


def job_row(config: RunConfig, job: dict, num_levels: int, error: str | None = None, report=None) -> dict:
    model = replace(config.model, variant=job["variant"], codebook_size=job["codebook_size"],
                    num_levels=num_levels)
    row = {
        "variant": job["variant"],
        "codebook_size": job["codebook_size"],
        "params": parameter_count(model),
        "frames": 0,
        "psnr": math.nan,
        "ssim": math.nan,
        "error": error or "",
    }
    for level in range(num_levels):
        row[f"psnr_L{level}"] = math.nan
    if report is not None:
        row.update(report.totals)
        for level_row in report.per_level.itertuples():
            if level_row.level != "Total":
                row[f"psnr_L{level_row.level.split()[1]}"] = level_row.psnr
    return row


def create_train_job_node(config: RunConfig, out_dir: Path, progress: bool = False):
    """Create the training node function."""

    def train_job_node(state: SweepState) -> dict:
        job = state["current_job"]
        trained = dict(state.get("trained", {}))
        current_step = state.get("current_step", 0) + 1

        if job["key"] in trained:
            logger.info("reusing checkpoint for %s", job["key"])
            return {"checkpoint_path": trained[job["key"]], "current_step": current_step}

        job_dir = out_dir / job["key"]
        job_config = config.with_overrides({"variant": job["variant"], "codebook_size": job["codebook_size"]})
        try:
            manifest = load_manifest(Path(state["manifest_path"]))
            job_config.write(job_dir)
            result = train(manifest, job_config.train, job_dir, progress=progress)
        except Exception as e:
            logger.warning("job %s failed during training: %s", job["key"], e)
            return {
                "job_error": f"train: {e}",
                "rows": [job_row(config, job, state.get("num_levels", 1), f"train: {e}")],
                "current_step": current_step,
            }

        trained[job["key"]] = str(result.checkpoint)
        return {
            "checkpoint_path": str(result.checkpoint),
            "trained": trained,
            "current_step": current_step,
        }

    return train_job_node


def create_evaluate_job_node(config: RunConfig, out_dir: Path):
    """Create the evaluation node function."""

    def evaluate_job_node(state: SweepState) -> dict:
        job = state["current_job"]
        num_levels = state.get("num_levels", 1)
        try:
            manifest = load_manifest(Path(state["manifest_path"]))
            report = evaluate(
                Path(state["checkpoint_path"]), manifest, config.eval.split, config.eval.level,
                config.train.render_options, ssim_grayscale=config.eval.ssim_grayscale,
            )
            report.write(out_dir / job["key"] / f"eval_N{job['codebook_size']}")
            row = job_row(config, job, num_levels, report=report)
        except Exception as e:
            logger.warning("job %s failed during evaluation: %s", job["key"], e)
            row = job_row(config, job, num_levels, f"eval: {e}")

        return {
            "rows": [row],
            "current_step": state.get("current_step", 0) + 1,
        }

    return evaluate_job_node
