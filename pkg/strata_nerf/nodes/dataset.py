"""
Prepare Dataset Node
====================

Loads the sweep's dataset, generating the configured preset first when no
manifest was supplied.
"""

import logging
from pathlib import Path

from ..config import RunConfig
from ..scenegen import load_manifest, make_preset, verify_dataset, write_dataset
from ..state import SweepState

logger = logging.getLogger(__name__)


def create_prepare_dataset_node(config: RunConfig, out_dir: Path):
    """Create the dataset preparation node function."""

    def prepare_dataset_node(state: SweepState) -> dict:
        manifest_path = state.get("manifest_path")
        if manifest_path:
            manifest = load_manifest(Path(manifest_path))
        else:
            scene = make_preset(config.scene.preset, config.scene.resolution, config.scene.counts)
            manifest = write_dataset(scene, out_dir / "dataset", config.seed)
            logger.info("generated preset '%s' for the sweep", config.scene.preset)
        verify_dataset(manifest)
        return {
            "manifest_path": str(manifest.root / "manifest.json"),
            "num_levels": manifest.num_levels,
            "current_step": state.get("current_step", 0) + 1,
        }

    return prepare_dataset_node
