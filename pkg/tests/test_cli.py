import json

import numpy as np
import pandas as pd
import pytest

from strata_nerf.checkpoint import load_checkpoint, save_checkpoint
from strata_nerf.cli import run
from strata_nerf.field import init_params
from strata_nerf.scenegen import load_manifest
from strata_nerf.selfcheck import tiny_model

TINY_RUN = {
    "resolution": 4,
    "train_views": 2,
    "val_views": 1,
    "test_views": 1,
    "codebook_size": 16,
    "latent_dim": 8,
    "trunk_depth": 4,
    "trunk_width": 32,
    "trunk_skip": 2,
    "color_width": 16,
    "encoder_hidden": 16,
    "decoder_hidden": 16,
    "position_bands": 4,
    "direction_bands": 2,
    "iterations": 2,
    "rays_per_batch": 16,
    "num_coarse": 4,
    "num_fine": 4,
    "warmup_steps": 0,
    "log_every": 1,
    "chunk": 64,
    "orbit_views": 3,
}


@pytest.fixture
def tiny_run(tmp_path):
    path = tmp_path / "tiny.json"
    path.write_text(json.dumps(TINY_RUN))
    return path


@pytest.fixture
def trained(tmp_path, tiny_run):
    data, out = tmp_path / "data", tmp_path / "run"
    assert run(["gen", "--config", str(tiny_run), "--seed", "7", "--out", str(data)]) == 0
    assert run(["train", str(data), "--config", str(tiny_run), "--out", str(out)]) == 0
    return data, out / "checkpoint.bin"


def test_gen_writes_dataset_and_config(tmp_path, capsys):
    out = tmp_path / "d"
    assert run(["gen", "--preset", "two-level", "--seed", "7", "--resolution", "4", "--out", str(out)]) == 0
    manifest = load_manifest(out)
    assert manifest.seed == 7
    assert len(manifest.frames) == 2 * (30 + 15 + 15)
    assert json.loads((out / "run_config.json").read_text())["seed"] == 7
    assert "wrote 120 frames" in capsys.readouterr().out


def test_train_eval_render(tmp_path, trained, tiny_run, capsys):
    data, checkpoint = trained
    assert load_checkpoint(checkpoint).step == 2
    assert list(pd.read_csv(checkpoint.parent / "train_log.csv")["step"]) == [1, 2]

    assert run(["eval", str(checkpoint), "--data", str(data), "--config", str(tiny_run),
                "--out", str(tmp_path / "eval")]) == 0
    assert "Total" in capsys.readouterr().out
    assert len(pd.read_csv(tmp_path / "eval" / "frames.csv")) == 2

    assert run(["render", str(checkpoint), "--data", str(data), "--config", str(tiny_run),
                "--split", "val", "--level", "1", "--out", str(tmp_path / "renders")]) == 0
    assert [p.name for p in (tmp_path / "renders" / "images").iterdir()] == ["L1_val_000.ppm"]

    assert run(["render", str(checkpoint), "--data", str(data), "--config", str(tiny_run),
                "--orbit", "--out", str(tmp_path / "orbit")]) == 0
    assert len(list((tmp_path / "orbit" / "depth").glob("orbit_L0_*.pfm"))) == 3


def test_selfcheck_passes(capsys):
    assert run(["selfcheck", "--points", "3"]) == 0
    assert "checks passed" in capsys.readouterr().out


def test_missing_manifest_is_a_runtime_error(tmp_path, capsys):
    assert run(["train", str(tmp_path / "nowhere"), "--out", str(tmp_path / "out")]) == 2
    assert "manifest not found" in capsys.readouterr().err


@pytest.mark.parametrize("argv", [
    [],
    ["paint"],
    ["gen"],
    ["train", "--out", "x"],
    ["gen", "--out", "x", "--resolution", "four"],
])
def test_usage_errors(argv, capsys):
    assert run(argv) == 1
    assert "strata-nerf: error:" in capsys.readouterr().err


def test_config_errors(tmp_path, capsys):
    bad = tmp_path / "bad.json"
    bad.write_text(json.dumps({"codebok_size": 512}))
    assert run(["gen", "--config", str(bad), "--out", str(tmp_path / "d")]) == 1
    assert "did you mean 'codebook_size'" in capsys.readouterr().err
    assert run(["gen", "--preset", "dragon", "--out", str(tmp_path / "d")]) == 1
    assert not (tmp_path / "d").exists()


def test_help_exits_cleanly(capsys):
    assert run(["--help"]) == 0
    assert "selfcheck" in capsys.readouterr().out


def test_render_rejects_checkpoint_for_other_level_count(tmp_path, tiny_run, capsys):
    data = tmp_path / "data"
    assert run(["gen", "--config", str(tiny_run), "--out", str(data)]) == 0
    config = tiny_model("full", num_levels=1)
    checkpoint = save_checkpoint(tmp_path / "one_level.bin", init_params(config, np.random.default_rng(0)), config)
    assert run(["render", str(checkpoint), "--data", str(data), "--out", str(tmp_path / "renders")]) == 1
    assert "trained on 1 levels, dataset has 2" in capsys.readouterr().err
    assert not (tmp_path / "renders").exists()
