"""Strata-NeRF - Ablation Sweep Nodes"""

from .dataset import create_prepare_dataset_node
from .supervisor import create_supervisor_node
from .jobs import create_train_job_node, create_evaluate_job_node
from .report import create_report_node

__all__ = [
    "create_prepare_dataset_node",
    "create_supervisor_node",
    "create_train_job_node",
    "create_evaluate_job_node",
    "create_report_node",
]
