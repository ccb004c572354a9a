"""Long two-level comparison; run with STRATA_SLOW=1."""

from pathlib import Path

import pytest

from strata_nerf.config import parse_config
from strata_nerf.metrics import evaluate
from strata_nerf.scenegen import make_preset, write_dataset
from strata_nerf.training import train

TOY = Path(__file__).parent.parent / "configs" / "two-level-toy.json"


def _inner_and_total(manifest, config, out_dir):
    result = train(manifest, config.train, out_dir)
    per_level = evaluate(result.checkpoint, manifest, "test", options=config.train.render_options).per_level
    per_level = per_level.set_index("level")
    return per_level.loc[f"Level {manifest.num_levels - 1}", "psnr"], per_level.loc["Total", "psnr"]


@pytest.mark.slow
def test_conditioned_model_beats_baseline_on_the_inner_level(tmp_path):
    base = parse_config(TOY)
    manifest = write_dataset(make_preset("two-level", base.scene.resolution, base.scene.counts),
                             tmp_path / "dataset", seed=7)
    holds = 0
    for seed in (0, 1, 2):
        full = _inner_and_total(manifest, base.with_overrides({"variant": "full", "seed": seed}),
                                tmp_path / f"full_{seed}")
        baseline = _inner_and_total(manifest, base.with_overrides({"variant": "baseline", "seed": seed}),
                                    tmp_path / f"baseline_{seed}")
        if full[0] - baseline[0] >= 1.0 and full[1] - baseline[1] >= -0.25:
            holds += 1
    assert holds >= 2
