"""
Strata-NeRF - Training
======================

Loss assembly, Adam with a log-linear learning-rate schedule, and the joint
training loop over all levels of a dataset.

Per step:

1. Draw ``rays_per_batch`` (frame, pixel) pairs uniformly over every training
   frame of every level.
2. Render a coarse pass on jittered stratified samples and a fine pass on the
   coarse edges merged with importance-resampled ones.
3. Loss = fine pass + ``coarse_weight`` x coarse pass, each
   ``recon + lambda1 * dist``; plus ``lambda2`` x the latent loss averaged over
   the sample points of both passes.
4. One Adam step on every parameter.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Any

import numpy as np
import pandas as pd
from tqdm import tqdm

from . import autodiff as ad
from .checkpoint import save_checkpoint
from .errors import ConfigError, DatasetError, NonFiniteError, ShapeError, TrainingDivergedError
from .field import FieldOutput, ModelConfig, init_params, make_field
from .image_io import read_ppm
from .rendering import Camera, RayBatch, RenderOptions, RenderResult, SampleSet, camera_rays, distortion_loss, render_hierarchical
from .scenegen import DatasetManifest

logger = logging.getLogger(__name__)

LOG_COLUMNS = ["step", "lr", "loss_total", "loss_recon", "loss_vq", "loss_dist", "psnr_train_batch"]
USAGE_COLUMNS = ["step", "points", "codes_used", "perplexity"]
LOG_NAME = "train_log.csv"
USAGE_NAME = "codebook_usage.csv"
CHECKPOINT_NAME = "checkpoint.bin"


@dataclass
class TrainConfig:
    iterations: int = 150000
    rays_per_batch: int = 1024
    num_coarse: int = 64
    num_fine: int = 128
    lr_init: float = 0.002
    lr_final: float = 0.00002
    warmup_steps: int = 512
    lambda1: float = 0.0
    lambda2: float = 0.1
    coarse_weight: float = 0.1
    resample_floor: float = 0.01
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-6
    log_every: int = 100
    checkpoint_every: int = 5000
    chunk: int = 128
    seed: int = 0
    model: ModelConfig = field(default_factory=ModelConfig)

    def __post_init__(self) -> None:
        if self.iterations < 0:
            raise ConfigError(f"iterations must be >= 0, got {self.iterations}")
        if self.rays_per_batch < 1 or self.num_coarse < 1 or self.num_fine < 0:
            raise ConfigError("rays_per_batch >= 1, num_coarse >= 1 and num_fine >= 0 are required")
        if not self.lr_init >= self.lr_final > 0:
            raise ConfigError(f"need lr_init >= lr_final > 0, got {self.lr_init}, {self.lr_final}")
        if min(self.lambda1, self.lambda2, self.coarse_weight, self.resample_floor) < 0:
            raise ConfigError("loss weights and resample_floor must be >= 0")
        if self.warmup_steps < 0 or self.log_every < 1 or self.checkpoint_every < 1:
            raise ConfigError("warmup_steps >= 0, log_every >= 1 and checkpoint_every >= 1 are required")

    @property
    def render_options(self) -> RenderOptions:
        return RenderOptions(self.num_coarse, self.num_fine, self.resample_floor, self.chunk)


# ------------------------------------------------------------
# Schedule and optimizer
# ------------------------------------------------------------

def lr_schedule(step: int, config: TrainConfig) -> float:
    """Log-linear decay from lr_init to lr_final with a linear warmup multiplier."""
    progress = min(max(step / max(config.iterations, 1), 0.0), 1.0)
    base = math.exp((1.0 - progress) * math.log(config.lr_init) + progress * math.log(config.lr_final))
    warmup = min(1.0, step / config.warmup_steps) if config.warmup_steps > 0 else 1.0
    return base * warmup


@dataclass
class OptimizerState:
    m: dict[str, np.ndarray]
    v: dict[str, np.ndarray]
    step: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-6


def init_optimizer(params: dict[str, np.ndarray], beta1: float = 0.9, beta2: float = 0.999,
                   eps: float = 1e-6) -> OptimizerState:
    return OptimizerState(
        m={name: np.zeros_like(value) for name, value in params.items()},
        v={name: np.zeros_like(value) for name, value in params.items()},
        beta1=beta1, beta2=beta2, eps=eps,
    )


def adam_step(params: dict[str, np.ndarray], grads: dict[str, np.ndarray], state: OptimizerState,
              lr: float) -> tuple[dict[str, np.ndarray], OptimizerState]:
    """Bias-corrected Adam; returns new parameter and state objects."""
    for name, grad in grads.items():
        if not np.all(np.isfinite(grad)):
            raise NonFiniteError(f"adam_step: non-finite gradient for parameter {name}")
    step = state.step + 1
    b1, b2 = state.beta1, state.beta2
    new_params: dict[str, np.ndarray] = {}
    m: dict[str, np.ndarray] = {}
    v: dict[str, np.ndarray] = {}
    for name, value in params.items():
        grad = grads.get(name)
        if grad is None:
            grad = np.zeros_like(value)
        m[name] = b1 * state.m[name] + (1.0 - b1) * grad
        v[name] = b2 * state.v[name] + (1.0 - b2) * grad * grad
        m_hat = m[name] / (1.0 - b1 ** step)
        v_hat = v[name] / (1.0 - b2 ** step)
        new_params[name] = value - lr * m_hat / (np.sqrt(v_hat) + state.eps)
    return new_params, OptimizerState(m, v, step, b1, b2, state.eps)


# ------------------------------------------------------------
# Loss
# ------------------------------------------------------------

@dataclass
class LossTerms:
    total: ad.Tensor
    recon: float
    vq: float
    dist: float


def total_loss(pred: Any, target: Any, samples: RenderResult | tuple[SampleSet, Any] | None,
               vq_terms: Any, config: TrainConfig) -> LossTerms:
    """Loss for one pass: MSE + lambda1 * distortion + lambda2 * mean latent loss.

    ``vq_terms`` is a per-point loss tensor, a list of them (averaged jointly) or None.
    """
    pred = ad.as_tensor(pred)
    target = np.asarray(target, dtype=np.float64)
    if pred.shape != target.shape:
        raise ShapeError(f"total_loss: prediction {list(pred.shape)} and target {list(target.shape)} differ")
    recon = ad.mse(pred, target)
    total = recon

    dist_value = 0.0
    if samples is not None and config.lambda1 > 0:
        sample_set, weights = (samples.samples, samples.weights) if isinstance(samples, RenderResult) else samples
        dist = distortion_loss(sample_set, config.lambda1, weights)
        total = total + dist
        dist_value = dist.item() / config.lambda1

    vq_value = 0.0
    if vq_terms is not None:
        terms = vq_terms if isinstance(vq_terms, (list, tuple)) else [vq_terms]
        terms = [ad.reshape(ad.as_tensor(t), (-1,)) for t in terms if t is not None]
        if terms:
            vq = ad.mean(ad.concat(terms, axis=0) if len(terms) > 1 else terms[0])
            vq_value = vq.item()
            if config.lambda2 > 0:
                total = total + vq * config.lambda2
    return LossTerms(total, recon.item(), vq_value, dist_value)


def batch_psnr(pred: np.ndarray, target: np.ndarray) -> float:
    mse = float(np.mean((pred - target) ** 2))
    return 99.0 if mse == 0 else min(99.0, -10.0 * math.log10(mse))


# ------------------------------------------------------------
# Data
# ------------------------------------------------------------

@dataclass
class TrainingData:
    images: np.ndarray          # (F, H, W, 3)
    cameras: list[Camera]
    backgrounds: np.ndarray     # (F, 3)

    @property
    def pixels_per_frame(self) -> int:
        return self.images.shape[1] * self.images.shape[2]

    def sample_batch(self, count: int, rng: np.random.Generator) -> tuple[RayBatch, np.ndarray, np.ndarray]:
        """Uniform (frame, pixel) draws; returns rays, target colours and per-ray backgrounds."""
        height, width = self.images.shape[1:3]
        flat = rng.integers(0, len(self.cameras) * self.pixels_per_frame, size=count)
        frames = flat // self.pixels_per_frame
        pixels = flat % self.pixels_per_frame
        py, px = pixels // width, pixels % width
        order = np.argsort(frames, kind="stable")
        frames, px, py = frames[order], px[order], py[order]
        batches = [
            camera_rays(self.cameras[f], px[frames == f], py[frames == f])
            for f in np.unique(frames)
        ]
        rays = RayBatch.concatenate(batches)
        targets = self.images[frames, py, px]
        return rays, targets, self.backgrounds[frames]


def load_training_data(manifest: DatasetManifest, split: str = "train") -> TrainingData:
    frames = manifest.frames_for(split)
    if not frames:
        raise DatasetError(f"dataset at {manifest.root} has no '{split}' frames")
    expected = (manifest.scene.height, manifest.scene.width, 3)
    images = []
    for frame in frames:
        image = read_ppm(manifest.root / frame.image)
        if image.shape != expected:
            raise DatasetError(f"image {frame.image} has shape {list(image.shape)}, intrinsics say {list(expected)}")
        images.append(image)
    return TrainingData(
        images=np.stack(images),
        cameras=[manifest.camera(f) for f in frames],
        backgrounds=np.stack([manifest.background(f.level) for f in frames]),
    )


# ------------------------------------------------------------
# Loop
# ------------------------------------------------------------

@dataclass
class LogRecord:
    step: int
    lr: float
    loss_total: float
    loss_recon: float
    loss_vq: float
    loss_dist: float
    psnr_train_batch: float
    usage: np.ndarray | None = None

    @property
    def codes_used(self) -> int:
        return 0 if self.usage is None else int(np.count_nonzero(self.usage))

    @property
    def perplexity(self) -> float:
        return codebook_perplexity(self.usage)


@dataclass
class TrainResult:
    params: dict[str, np.ndarray]
    config: TrainConfig
    log: list[LogRecord]
    checkpoint: Path | None = None


def codebook_perplexity(usage: np.ndarray | None) -> float:
    """exp(-sum p log p) of a usage histogram; 0 when nothing was quantized."""
    if usage is None or usage.sum() == 0:
        return 0.0
    p = usage[usage > 0] / usage.sum()
    return float(np.exp(-np.sum(p * np.log(p))))


def usage_histogram(outputs: list[FieldOutput | Any], config: ModelConfig) -> np.ndarray | None:
    if not config.uses_codebook:
        return None
    usage = np.zeros(config.codebook_size * config.num_codebooks, dtype=np.int64)
    for aux in outputs:
        if aux is None or aux.index is None:
            continue
        flat = aux.index.ravel() + aux.codebook_id.ravel() * config.codebook_size
        usage += np.bincount(flat, minlength=usage.size)
    return usage


def _dump_batch(out_dir: Path | None, step: int, rays: RayBatch, targets: np.ndarray) -> Path | None:
    if out_dir is None:
        return None
    path = Path(out_dir) / f"diverged_step{step}.npz"
    np.savez(path, origins=rays.origins, directions=rays.directions, near=rays.near, far=rays.far,
             levels=rays.levels, targets=targets, step=step)
    return path


def _append_log(out_dir: Path | None, records: list[LogRecord]) -> None:
    if out_dir is None or not records:
        return
    rows = pd.DataFrame([{c: getattr(r, c) for c in LOG_COLUMNS} for r in records], columns=LOG_COLUMNS)
    rows.to_csv(out_dir / LOG_NAME, mode="a", header=False, index=False)
    usage = pd.DataFrame(
        [{"step": r.step, "points": 0 if r.usage is None else int(r.usage.sum()),
          "codes_used": r.codes_used, "perplexity": r.perplexity} for r in records],
        columns=USAGE_COLUMNS,
    )
    usage.to_csv(out_dir / USAGE_NAME, mode="a", header=False, index=False)


def train_step(params: dict[str, np.ndarray], data: TrainingData, config: TrainConfig,
               rng: np.random.Generator) -> tuple[LossTerms, dict[str, np.ndarray], list[Any], tuple]:
    """Forward and backward pass for one random batch; returns losses, gradients, latent aux and the batch."""
    rays, targets, backgrounds = data.sample_batch(config.rays_per_batch, rng)
    graph = ad.Graph()
    leaves = graph.leaves(params)
    field_fn = make_field(leaves, config.model, rng)
    coarse, fine = render_hierarchical(rays, field_fn, backgrounds, config.render_options, rng, jittered=True)

    two_pass = fine is not coarse
    vq_terms = [fine.aux.loss, coarse.aux.loss] if two_pass else [fine.aux.loss]
    fine_terms = total_loss(fine.color, targets, fine, vq_terms, config)
    total = fine_terms.total
    recon, dist = fine_terms.recon, fine_terms.dist
    if two_pass and config.coarse_weight > 0:
        coarse_terms = total_loss(coarse.color, targets, coarse, None, config)
        total = total + coarse_terms.total * config.coarse_weight
        recon += config.coarse_weight * coarse_terms.recon
        dist += config.coarse_weight * coarse_terms.dist
    terms = LossTerms(total, recon, fine_terms.vq, dist)

    if not np.isfinite(total.item()):
        return terms, {}, [], (rays, targets, fine)
    gradients = ad.backward(graph, total)
    grads = {name: gradients[leaf] for name, leaf in leaves.items()}
    aux = [fine.aux, coarse.aux] if two_pass else [fine.aux]
    return terms, grads, aux, (rays, targets, fine)


def train(dataset: DatasetManifest, config: TrainConfig, out_dir: Path | None = None,
          progress: bool = False) -> TrainResult:
    """Jointly train one conditioned field on every level of ``dataset``."""
    config = replace(config, model=replace(config.model, num_levels=dataset.num_levels))
    data = load_training_data(dataset)
    params = init_params(config.model, np.random.default_rng([config.seed, 0]))
    rng = np.random.default_rng([config.seed, 1])
    state = init_optimizer(params, config.adam_beta1, config.adam_beta2, config.adam_eps)

    checkpoint_path = None
    if out_dir is not None:
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        pd.DataFrame(columns=LOG_COLUMNS).to_csv(out_dir / LOG_NAME, index=False)
        pd.DataFrame(columns=USAGE_COLUMNS).to_csv(out_dir / USAGE_NAME, index=False)
        checkpoint_path = out_dir / CHECKPOINT_NAME

    logger.info(
        "training variant=%s on %d frames (%d levels) for %d steps",
        config.model.variant, len(data.cameras), dataset.num_levels, config.iterations,
    )
    log: list[LogRecord] = []
    pending: list[LogRecord] = []
    interval_usage = None
    sums = np.zeros(5)
    count = 0

    for step in tqdm(range(1, config.iterations + 1), disable=not progress, desc="train"):
        lr = lr_schedule(step, config)
        terms, grads, aux, batch = train_step(params, data, config, rng)
        if not np.isfinite(terms.total.item()):
            dump = _dump_batch(out_dir, step, batch[0], batch[1])
            raise TrainingDivergedError(
                f"loss became non-finite at step {step}" + (f"; batch saved to {dump}" if dump else "")
            )
        params, state = adam_step(params, grads, state, lr)

        usage = usage_histogram(aux, config.model)
        if usage is not None:
            interval_usage = usage if interval_usage is None else interval_usage + usage
        sums += [terms.total.item(), terms.recon, terms.vq, terms.dist,
                 batch_psnr(batch[2].color.data, batch[1])]
        count += 1

        if step % config.log_every == 0 or step == config.iterations:
            mean = sums / count
            record = LogRecord(step, lr, *mean.tolist(), usage=interval_usage)
            log.append(record)
            pending.append(record)
            logger.info(
                "step %d lr %.2e loss %.5f recon %.5f vq %.5f dist %.5f psnr %.2f codes %d",
                step, lr, *mean.tolist(), record.codes_used,
            )
            sums[:] = 0.0
            count = 0
            interval_usage = None
            _append_log(out_dir, pending)
            pending = []

        if checkpoint_path is not None and step % config.checkpoint_every == 0:
            save_checkpoint(checkpoint_path, params, config.model, step)

    if checkpoint_path is not None:
        save_checkpoint(checkpoint_path, params, config.model, config.iterations)
    return TrainResult(params, config, log, checkpoint_path)
