import math

import numpy as np
import pandas as pd
import pytest

from strata_nerf import autodiff as ad
from strata_nerf import training
from strata_nerf.checkpoint import load_checkpoint
from strata_nerf.errors import ConfigError, DatasetError, NonFiniteError, ShapeError, TrainingDivergedError
from strata_nerf.field import init_params
from strata_nerf.rendering import SampleSet
from strata_nerf.training import (
    LOG_COLUMNS,
    LossTerms,
    TrainConfig,
    adam_step,
    codebook_perplexity,
    init_optimizer,
    load_training_data,
    lr_schedule,
    total_loss,
    train,
    train_step,
    usage_histogram,
)


def _small(tiny_config, **overrides):
    values = dict(iterations=3, rays_per_batch=16, num_coarse=4, num_fine=4, warmup_steps=0,
                  log_every=1, chunk=64, model=tiny_config("full"))
    values.update(overrides)
    return TrainConfig(**values)


def test_total_loss_examples():
    target = np.full((4, 3), 0.5)
    quiet = TrainConfig(lambda1=0.0, lambda2=0.0)
    assert total_loss(target, target, None, None, quiet).total.item() == 0.0
    assert total_loss(target + 0.1, target, None, None, quiet).total.item() == pytest.approx(0.01)
    terms = total_loss(target, target, None, ad.as_tensor([2.0, 2.0]), TrainConfig(lambda1=0.0, lambda2=0.1))
    assert terms.total.item() == pytest.approx(0.2)
    assert terms.vq == 2.0 and terms.recon == 0.0


def test_total_loss_distortion_term():
    target = np.zeros((1, 3))
    samples = SampleSet(np.linspace(0.0, 1.0, 4)[None], np.array([0.0]), np.array([1.0]))
    terms = total_loss(target, target, (samples, np.array([[0.0, 1.0, 0.0]])), None,
                       TrainConfig(lambda1=0.5, lambda2=0.0))
    assert terms.dist == pytest.approx(1.0 / 9.0)
    assert terms.total.item() == pytest.approx(0.5 / 9.0)


def test_total_loss_shape_mismatch():
    with pytest.raises(ShapeError):
        total_loss(np.zeros((2, 3)), np.zeros((3, 3)), None, None, TrainConfig())


def test_lr_schedule():
    config = TrainConfig(iterations=2000)
    assert lr_schedule(2000, config) == pytest.approx(2e-5)
    assert lr_schedule(1000, config) == pytest.approx(math.sqrt(0.002 * 0.00002))
    assert lr_schedule(1000, config) == pytest.approx(2e-4)
    assert lr_schedule(0, config) == 0.0
    assert lr_schedule(256, config) < lr_schedule(512, config)


def test_train_config_validation():
    with pytest.raises(ConfigError):
        TrainConfig(lr_init=1e-5, lr_final=1e-4)
    with pytest.raises(ConfigError):
        TrainConfig(lambda2=-1.0)
    with pytest.raises(ConfigError):
        TrainConfig(iterations=-1)


def test_adam_first_step_moves_by_lr():
    params = {"x": np.array([1.0])}
    state = init_optimizer(params)
    new, state = adam_step(params, {"x": np.array([1.0])}, state, lr=0.01)
    assert 1.0 - new["x"][0] == pytest.approx(0.01, rel=1e-5)
    assert state.step == 1
    assert np.all(state.v["x"] >= 0)


def test_adam_zero_gradient_keeps_params():
    params = {"w": np.arange(4.0)}
    new, _ = adam_step(params, {"w": np.zeros(4)}, init_optimizer(params), lr=0.1)
    np.testing.assert_array_equal(new["w"], params["w"])


def test_adam_rejects_non_finite_gradient():
    params = {"trunk/0/w": np.zeros(2)}
    with pytest.raises(NonFiniteError, match="trunk/0/w"):
        adam_step(params, {"trunk/0/w": np.array([np.inf, 0.0])}, init_optimizer(params), lr=0.1)


def test_codebook_perplexity():
    assert codebook_perplexity(np.array([1, 1, 1, 1])) == pytest.approx(4.0)
    assert codebook_perplexity(np.array([5, 0, 0])) == pytest.approx(1.0)
    assert codebook_perplexity(None) == 0.0


def test_training_data_batches_mix_levels(tiny_dataset):
    data = load_training_data(tiny_dataset)
    assert data.images.shape == (6, 8, 8, 3)
    rays, targets, backgrounds = data.sample_batch(200, np.random.default_rng(0))
    assert len(rays) == 200 and targets.shape == (200, 3) and backgrounds.shape == (200, 3)
    assert set(np.unique(rays.levels)) == {0, 1}
    with pytest.raises(DatasetError):
        load_training_data(tiny_dataset, "holdout")


def test_codebook_gradient_needs_latent_loss(tiny_dataset, tiny_config):
    data = load_training_data(tiny_dataset)
    for lambda2, expect_zero in ((0.0, True), (0.1, False)):
        config = _small(tiny_config, lambda2=lambda2)
        params = init_params(config.model, np.random.default_rng(0))
        _, grads, _, _ = train_step(params, data, config, np.random.default_rng(1))
        assert np.all(grads["codebook/0"] == 0.0) == expect_zero


def test_usage_histogram_counts_every_quantized_point(tiny_dataset, tiny_config):
    data = load_training_data(tiny_dataset)
    config = _small(tiny_config)
    params = init_params(config.model, np.random.default_rng(0))
    terms, _, aux, _ = train_step(params, data, config, np.random.default_rng(2))
    usage = usage_histogram(aux, config.model)
    assert usage.sum() == 16 * (4 + 4) + 16 * 4
    assert terms.recon >= 0 and terms.vq >= 0
    assert usage_histogram(aux, tiny_config("D4_vae")) is None


def test_zero_iterations_returns_initial_params(tmp_path, tiny_dataset, tiny_config):
    config = _small(tiny_config, iterations=0)
    result = train(tiny_dataset, config, tmp_path)
    expected = init_params(result.config.model, np.random.default_rng([config.seed, 0]))
    for name, value in expected.items():
        np.testing.assert_array_equal(result.params[name], value)
    assert result.log == []
    assert list(pd.read_csv(tmp_path / "train_log.csv").columns) == LOG_COLUMNS
    assert load_checkpoint(result.checkpoint).step == 0


def test_training_is_deterministic_and_logged(tmp_path, tiny_dataset, tiny_config):
    config = _small(tiny_config)
    first = train(tiny_dataset, config, tmp_path / "a")
    second = train(tiny_dataset, config, tmp_path / "b")
    assert first.checkpoint.read_bytes() == second.checkpoint.read_bytes()
    log = pd.read_csv(tmp_path / "a" / "train_log.csv")
    assert list(log["step"]) == [1, 2, 3]
    assert (log["loss_recon"] >= 0).all() and (log["loss_vq"] >= 0).all()
    usage = pd.read_csv(tmp_path / "a" / "codebook_usage.csv")
    assert (usage["points"] == 16 * 8 + 16 * 4).all()
    assert first.config.model.num_levels == 2


def test_loss_goes_down(tiny_dataset, tiny_config):
    config = _small(tiny_config, iterations=60, log_every=10, rays_per_batch=64, lr_init=0.01, lr_final=0.001)
    result = train(tiny_dataset, config)
    assert result.log[-1].loss_recon < result.log[0].loss_recon


def test_non_finite_loss_aborts_with_batch_dump(tmp_path, tiny_dataset, tiny_config, monkeypatch):
    real_step = training.train_step

    def poisoned(params, data, config, rng):
        terms, grads, aux, batch = real_step(params, data, config, rng)
        return LossTerms(ad.Tensor(np.nan), terms.recon, terms.vq, terms.dist), grads, aux, batch

    monkeypatch.setattr(training, "train_step", poisoned)
    with pytest.raises(TrainingDivergedError, match="step 1"):
        train(tiny_dataset, _small(tiny_config), tmp_path)
    assert (tmp_path / "diverged_step1.npz").exists()
