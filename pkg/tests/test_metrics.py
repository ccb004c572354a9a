import numpy as np
import pandas as pd
import pytest

from strata_nerf.checkpoint import Checkpoint
from strata_nerf.errors import ConfigError, ShapeError, StrataError
from strata_nerf.field import init_params
from strata_nerf.image_io import read_ppm
from strata_nerf.metrics import EvalReport, evaluate, gaussian_window, psnr, ssim
from strata_nerf.rendering import RenderOptions


def _direct_ssim(a, b, size=11, sigma=1.5, c1=1e-4, c2=9e-4):
    """Window-by-window SSIM straight from the definition."""
    window = gaussian_window(size, sigma)
    values = []
    for i in range(a.shape[0] - size + 1):
        for j in range(a.shape[1] - size + 1):
            pa, pb = a[i:i + size, j:j + size], b[i:i + size, j:j + size]
            mu_a, mu_b = np.sum(window * pa), np.sum(window * pb)
            var_a = np.sum(window * (pa - mu_a) ** 2)
            var_b = np.sum(window * (pb - mu_b) ** 2)
            cov = np.sum(window * (pa - mu_a) * (pb - mu_b))
            values.append((2 * mu_a * mu_b + c1) * (2 * cov + c2)
                          / ((mu_a ** 2 + mu_b ** 2 + c1) * (var_a + var_b + c2)))
    return float(np.mean(values))


def test_psnr_examples():
    a = np.full((8, 8, 3), 0.3)
    assert psnr(a, a) == 99.0
    assert psnr(a, a + 0.1) == pytest.approx(20.0, abs=1e-4)
    assert psnr(np.zeros((4, 4)), np.full((4, 4), 0.5)) == pytest.approx(6.0206, abs=1e-4)
    with pytest.raises(ShapeError):
        psnr(np.zeros((2, 2)), np.zeros((2, 3)))


def test_psnr_decreases_with_noise(rng):
    image = rng.uniform(size=(16, 16, 3))
    noise = rng.uniform(-1.0, 1.0, size=image.shape)
    scores = [psnr(image, image + amplitude * noise) for amplitude in (0.01, 0.02, 0.05, 0.1, 0.2)]
    assert all(a > b for a, b in zip(scores, scores[1:]))


def test_ssim_examples():
    a = np.full((16, 16), 0.2)
    b = np.full((16, 16), 0.4)
    assert ssim(a, a) == pytest.approx(1.0, abs=1e-9)
    assert ssim(a, b) == pytest.approx((2 * 0.08 + 1e-4) / (0.04 + 0.16 + 1e-4), abs=1e-4)
    assert ssim(a, b) == pytest.approx(0.8001, abs=1e-4)


def test_ssim_matches_direct_formula(rng):
    a = rng.uniform(size=(20, 18))
    b = np.clip(a + rng.normal(scale=0.1, size=a.shape), 0.0, 1.0)
    assert ssim(a, b) == pytest.approx(_direct_ssim(a, b), abs=1e-6)


def test_ssim_colour_modes(rng):
    a = rng.uniform(size=(16, 16, 3))
    b = rng.uniform(size=(16, 16, 3))
    assert ssim(a, b) == pytest.approx(ssim(a.mean(axis=-1), b.mean(axis=-1)))
    per_channel = np.mean([ssim(a[..., c], b[..., c]) for c in range(3)])
    assert ssim(a, b, grayscale=False) == pytest.approx(per_channel)


def test_metrics_are_symmetric(rng):
    a = rng.uniform(size=(12, 12, 3))
    b = rng.uniform(size=(12, 12, 3))
    assert psnr(a, b) == psnr(b, a)
    assert abs(ssim(a, b) - ssim(b, a)) < 1e-12


def test_small_images_use_global_statistics(rng):
    a = rng.uniform(size=(4, 4))
    assert ssim(a, a) == pytest.approx(1.0)
    assert -1.0 <= ssim(a, rng.uniform(size=(4, 4))) <= 1.0


def _report():
    records = [
        {"frame_id": "L0_test_000", "level": 0, "psnr": 20.0, "ssim": 0.5},
        {"frame_id": "L0_test_001", "level": 0, "psnr": 30.0, "ssim": 0.7},
        {"frame_id": "L1_test_000", "level": 1, "psnr": 25.0, "ssim": 0.9},
    ]
    return EvalReport.from_records(records, num_levels=2)


def test_report_layout_and_consistency():
    report = _report()
    table = report.per_level
    assert list(table["level"]) == ["Level 0", "Level 1", "Total"]
    assert table.loc[0, "psnr"] == 25.0
    assert report.totals == {"frames": 3, "psnr": 25.0, "ssim": pytest.approx(0.7)}
    report.check_consistency()
    assert report.histograms[("psnr", 0)][0].sum() == 2
    assert "Level 1" in report.summary_markdown()

    counts, edges = report.histograms[("ssim", 1)]
    report.histograms[("ssim", 1)] = (counts * 2, edges)
    with pytest.raises(StrataError, match="histogram"):
        report.check_consistency()


def test_report_files(tmp_path):
    report = _report()
    report.codebook_usage = {0: np.array([0, 3, 1]), 1: np.array([2, 0, 0])}
    report.write(tmp_path)
    assert len(pd.read_csv(tmp_path / "frames.csv")) == 3
    hist = pd.read_csv(tmp_path / "hist_psnr_L0.csv")
    assert list(hist.columns) == ["bin_lo", "bin_hi", "count"]
    assert len(hist) == 16 and hist["count"].sum() == 2
    assert (tmp_path / "hist_ssim.png").stat().st_size > 0
    usage = pd.read_csv(tmp_path / "codebook_usage_by_level.csv")
    assert usage["count"].sum() == 6
    assert (tmp_path / "summary.md").read_text().count("Level") == 2


def _checkpoint(tiny_config):
    config = tiny_config("full")
    return Checkpoint(init_params(config, np.random.default_rng(0)), config)


def test_self_comparison(tiny_dataset, tiny_config):
    report = evaluate(_checkpoint(tiny_config), tiny_dataset, "test",
                      render_fn=lambda frame: read_ppm(tiny_dataset.root / frame.image))
    table = report.per_level
    assert list(table["level"]) == ["Level 0", "Level 1", "Total"]
    assert (table["psnr"] == 99.0).all()
    np.testing.assert_allclose(table["ssim"], 1.0, atol=1e-9)


def test_single_frame_split(tiny_dataset, tiny_config):
    report = evaluate(_checkpoint(tiny_config), tiny_dataset, "val", level=0,
                      render_fn=lambda frame: 0.9 * read_ppm(tiny_dataset.root / frame.image))
    assert len(report.frames) == 1
    assert report.totals["psnr"] == report.frames.loc[0, "psnr"]
    assert report.totals["ssim"] == report.frames.loc[0, "ssim"]


def test_model_evaluation_collects_codebook_usage(tiny_dataset, tiny_config):
    report = evaluate(_checkpoint(tiny_config), tiny_dataset, "test", level=1,
                      options=RenderOptions(num_coarse=4, num_fine=4, chunk=32))
    assert list(report.per_level["level"]) == ["Level 1", "Total"]
    assert set(report.codebook_usage) == {1}
    assert report.codebook_usage[1].sum() == 2 * 64 * 8
    assert report.frames["psnr"].between(0.0, 99.0).all()


def test_checkpoint_level_count_must_match_dataset(tiny_dataset, tiny_config):
    config = tiny_config("full", shared_codebook=False, num_levels=3)
    checkpoint = Checkpoint(init_params(config, np.random.default_rng(0)), config)
    with pytest.raises(ConfigError, match="trained on 3 levels, dataset has 2"):
        evaluate(checkpoint, tiny_dataset, "test")
