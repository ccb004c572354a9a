"""
Ablation Report Node
====================

Collects the sweep rows into ``ablation.csv`` and a tabulated ``ablation.md``.
"""

import logging
from pathlib import Path

import pandas as pd

from ..state import SweepState
from .jobs import ROW_COLUMNS

logger = logging.getLogger(__name__)


def ablation_table(rows: list[dict]) -> pd.DataFrame:
    level_columns = sorted({c for row in rows for c in row if c.startswith("psnr_L")},
                           key=lambda c: int(c[len("psnr_L"):]))
    columns = ROW_COLUMNS[:-1] + level_columns + ROW_COLUMNS[-1:]
    return pd.DataFrame(rows, columns=columns)


def create_report_node(out_dir: Path):
    """Create the report node function."""

    def report_node(state: SweepState) -> dict:
        table = ablation_table(state.get("rows", []))
        out_dir.mkdir(parents=True, exist_ok=True)
        table.to_csv(out_dir / "ablation.csv", index=False)

        summary = table.drop(columns=["error"]).to_markdown(index=False, floatfmt=".4f")
        failed = table[table["error"] != ""]
        if len(failed):
            summary += "\n\nFailed jobs:\n\n" + failed[["variant", "codebook_size", "error"]].to_markdown(index=False)
        report_path = out_dir / "ablation.md"
        report_path.write_text(summary + "\n")

        logger.info("ablation report with %d rows (%d failed) written to %s", len(table), len(failed), report_path)
        return {
            "report_path": str(report_path),
            "is_complete": True,
            "current_step": state.get("current_step", 0) + 1,
        }

    return report_node
