"""
Strata-NeRF - Latent-Conditioned Radiance Field
===============================================

One radiance MLP shared by every level of a stratified scene, conditioned by
a VQ-VAE latent generator and a latent router.

Pipeline per ray segment::

    IPE γ(x) ─► encoder ─► z ─► quantize ─► z_e ─┬─► router ─► trunk layers 1, 2
                                                 └─► decoder ─► y   (latent loss)

Variants (``ModelConfig.variant``):

- ``full``: both routers, VQ latent generator.
- ``D1``: first router only.
- ``D2``: second router only.
- ``D3``: no router; z_e concatenated to γ(x) at the trunk input.
- ``D4_vae``: diagonal-Gaussian VAE in place of the quantizer, both routers.
- ``baseline``: plain radiance field, no latent path.

Parameters live in an ordered ``dict[str, np.ndarray]``; the forward pass takes
either those arrays (inference) or autodiff leaves of them (training).
"""

from __future__ import annotations

import logging
from collections.abc import Mapping
from dataclasses import asdict, dataclass
from typing import Any, Callable

import numpy as np

from . import autodiff as ad
from .encoding import (
    FrequencyBands,
    GaussianSegment,
    contract_segment,
    ipe,
    level_encode,
    positional_encode,
)
from .errors import ConfigError, ShapeError

logger = logging.getLogger(__name__)

VARIANTS = ("full", "D1", "D2", "D3", "D4_vae", "baseline")

_ROUTERS = {"full": (1, 2), "D1": (1,), "D2": (2,), "D3": (), "D4_vae": (1, 2), "baseline": ()}


@dataclass
class ModelConfig:
    variant: str = "full"
    codebook_size: int = 1024
    latent_dim: int = 48
    shared_codebook: bool = True
    use_level_encoding: bool = False
    beta: float = 1.0
    num_levels: int = 1
    trunk_depth: int = 8
    trunk_width: int = 256
    trunk_skip: int = 4
    color_width: int = 128
    encoder_hidden: int = 48
    decoder_hidden: int = 96
    decoder_layers: int = 1
    position_bands: int = 10
    direction_bands: int = 4
    level_bands: int = 4
    unbounded: bool = False
    codebook_init_std: float = 0.2

    def __post_init__(self) -> None:
        if self.variant not in VARIANTS:
            raise ConfigError(f"variant must be one of {', '.join(VARIANTS)}; got '{self.variant}'")
        if self.codebook_size < 1:
            raise ConfigError(f"codebook_size must be >= 1, got {self.codebook_size}")
        if self.latent_dim < 1 or self.trunk_depth < 2 or self.trunk_width < 1:
            raise ConfigError("latent_dim >= 1, trunk_depth >= 2 and trunk_width >= 1 are required")
        if self.beta < 0:
            raise ConfigError(f"beta must be >= 0, got {self.beta}")
        if self.num_levels < 1:
            raise ConfigError(f"num_levels must be >= 1, got {self.num_levels}")

    @property
    def ipe_dim(self) -> int:
        return FrequencyBands(self.position_bands).output_dim(3)

    @property
    def direction_dim(self) -> int:
        return FrequencyBands(self.direction_bands).output_dim(3)

    @property
    def level_dim(self) -> int:
        return FrequencyBands(self.level_bands).output_dim(1) if self.use_level_encoding else 0

    @property
    def has_latent(self) -> bool:
        return self.variant != "baseline"

    @property
    def is_vae(self) -> bool:
        return self.variant == "D4_vae"

    @property
    def uses_codebook(self) -> bool:
        return self.has_latent and not self.is_vae

    @property
    def routers(self) -> tuple[int, ...]:
        return _ROUTERS[self.variant]

    @property
    def num_codebooks(self) -> int:
        return 1 if self.shared_codebook else self.num_levels

    def to_dict(self) -> dict[str, Any]:
        return asdict(self)


@dataclass
class LatentAux:
    """Latent-path intermediates for one batch of points."""

    z: ad.Tensor | None = None
    z_e: ad.Tensor | None = None
    y: ad.Tensor | None = None
    index: np.ndarray | None = None
    codebook_id: np.ndarray | None = None
    loss: ad.Tensor | None = None


@dataclass
class FieldOutput:
    rgb: ad.Tensor
    sigma: ad.Tensor
    aux: LatentAux


# ------------------------------------------------------------
# Parameters
# ------------------------------------------------------------

def parameter_shapes(config: ModelConfig) -> dict[str, tuple[int, ...]]:
    """Ordered name -> shape layout of every parameter tensor."""
    shapes: dict[str, tuple[int, ...]] = {}
    width = config.trunk_width
    trunk_in = config.ipe_dim + (config.latent_dim if config.variant == "D3" else 0)
    for i in range(config.trunk_depth):
        fan_in = trunk_in if i == 0 else width
        if 0 < config.trunk_skip == i:
            fan_in += config.ipe_dim
        shapes[f"trunk/{i}/w"] = (fan_in, width)
        shapes[f"trunk/{i}/b"] = (width,)
    shapes["density/w"] = (width, 1)
    shapes["density/b"] = (1,)
    shapes["bottleneck/w"] = (width, width)
    shapes["bottleneck/b"] = (width,)
    shapes["color/hidden/w"] = (width + config.direction_dim, config.color_width)
    shapes["color/hidden/b"] = (config.color_width,)
    shapes["color/out/w"] = (config.color_width, 3)
    shapes["color/out/b"] = (3,)
    if not config.has_latent:
        return shapes

    latent_out = 2 * config.latent_dim if config.is_vae else config.latent_dim
    shapes["encoder/0/w"] = (config.ipe_dim + config.level_dim, config.encoder_hidden)
    shapes["encoder/0/b"] = (config.encoder_hidden,)
    shapes["encoder/1/w"] = (config.encoder_hidden, latent_out)
    shapes["encoder/1/b"] = (latent_out,)
    fan_in = config.latent_dim
    for k in range(config.decoder_layers):
        shapes[f"decoder/{k}/w"] = (fan_in, config.decoder_hidden)
        shapes[f"decoder/{k}/b"] = (config.decoder_hidden,)
        fan_in = config.decoder_hidden
    shapes["decoder/out/w"] = (fan_in, config.ipe_dim)
    shapes["decoder/out/b"] = (config.ipe_dim,)
    if config.uses_codebook:
        for c in range(config.num_codebooks):
            shapes[f"codebook/{c}"] = (config.codebook_size, config.latent_dim)
    for k in config.routers:
        shapes[f"router/{k}/w"] = (config.latent_dim, width)
        shapes[f"router/{k}/b"] = (width,)
    return shapes


def init_params(config: ModelConfig, rng: np.random.Generator) -> dict[str, np.ndarray]:
    """He-uniform weights, zero biases, zero routers, N(0, std²) codebooks."""
    params: dict[str, np.ndarray] = {}
    for name, shape in parameter_shapes(config).items():
        if name.startswith("router/") or name.endswith("/b"):
            params[name] = np.zeros(shape)
        elif name.startswith("codebook/"):
            params[name] = rng.normal(0.0, config.codebook_init_std, size=shape)
        else:
            limit = np.sqrt(6.0 / shape[0])
            params[name] = rng.uniform(-limit, limit, size=shape)
    return params


def parameter_count(config: ModelConfig) -> int:
    return int(sum(int(np.prod(shape)) for shape in parameter_shapes(config).values()))


def parameter_ledger(config: ModelConfig, num_levels: int | None = None) -> dict[str, int]:
    """Parameter counts per component, plus the one-network-per-level alternative."""
    num_levels = num_levels or config.num_levels
    shapes = parameter_shapes(config)
    baseline = parameter_count(ModelConfig(**{**config.to_dict(), "variant": "baseline"}))

    def total(prefix: str) -> int:
        return int(sum(int(np.prod(s)) for n, s in shapes.items() if n.startswith(prefix)))

    return {
        "baseline": baseline,
        "model": parameter_count(config),
        "codebook": total("codebook/"),
        "encoder": total("encoder/"),
        "decoder": total("decoder/"),
        "router": total("router/"),
        "levelwise_baseline": baseline * num_levels,
    }


# ------------------------------------------------------------
# Latent generator
# ------------------------------------------------------------

def _affine(x: ad.Tensor, params: Mapping[str, Any], prefix: str) -> ad.Tensor:
    return ad.matmul(x, params[f"{prefix}/w"]) + params[f"{prefix}/b"]


def encode_latent(gamma_x: Any, level_code: Any, params: Mapping[str, Any],
                  config: ModelConfig) -> ad.Tensor:
    """Two affine layers (relu between) from γ(x) [+ γ(l)] to z."""
    gamma_x = ad.as_tensor(gamma_x)
    if gamma_x.shape[-1] != config.ipe_dim:
        raise ShapeError(
            f"encode_latent: expected IPE dimension {config.ipe_dim}, got {gamma_x.shape[-1]}"
        )
    if (level_code is not None) != config.use_level_encoding:
        raise ShapeError("encode_latent: level code must be given iff use_level_encoding is set")
    x = gamma_x if level_code is None else ad.concat([gamma_x, ad.as_tensor(level_code)], axis=-1)
    hidden = ad.relu(_affine(x, params, "encoder/0"))
    return _affine(hidden, params, "encoder/1")


def nearest_rows(z: np.ndarray, table: np.ndarray, chunk: int = 4096) -> np.ndarray:
    """Index of the nearest row of ``table`` for each row of ``z``; ties -> lowest index."""
    z = np.atleast_2d(np.asarray(z, dtype=np.float64))
    table = np.asarray(table, dtype=np.float64)
    if table.ndim != 2 or table.shape[0] == 0:
        raise ShapeError("quantize: codebook is empty")
    if z.shape[-1] != table.shape[1]:
        raise ShapeError(
            f"quantize: latent dimension {z.shape[-1]} does not match codebook {list(table.shape)}"
        )
    table_sq = np.sum(table * table, axis=1)
    out = np.empty(z.shape[0], dtype=np.int64)
    for start in range(0, z.shape[0], chunk):
        block = z[start:start + chunk]
        dist = np.sum(block * block, axis=1)[:, None] - 2.0 * block @ table.T + table_sq[None, :]
        best = dist.min(axis=1)
        tol = 1e-9 * (1.0 + np.abs(dist).max(axis=1))
        candidates = dist <= (best + tol)[:, None]
        index = np.argmax(candidates, axis=1)
        ambiguous = np.nonzero(candidates.sum(axis=1) > 1)[0]
        for row in ambiguous:
            rows = np.nonzero(candidates[row])[0]
            exact = np.sum((block[row][None, :] - table[rows]) ** 2, axis=1)
            index[row] = rows[np.argmin(exact)]
        out[start:start + chunk] = index
    return out


@dataclass
class Quantized:
    z_st: ad.Tensor     # z + sg(z_e - z): value of z_e, identity gradient to z
    z_e: ad.Tensor      # codebook rows, gradient flows to the codebook only
    index: np.ndarray


def quantize(z: Any, codebook: Any, row_ranges: Any = None) -> Quantized:
    """Nearest-row vector quantization with a straight-through estimator.

    ``codebook`` is an (N, D) array or tensor. When several codebooks are
    stacked into one table, ``row_ranges`` is a per-point (start, stop) pair
    restricting the search and ``index`` is reported relative to ``start``.
    """
    z = ad.as_tensor(z)
    codebook = ad.as_tensor(codebook)
    single = z.ndim == 1
    if single:
        z = ad.reshape(z, (1, z.shape[0]))
    if row_ranges is None:
        local = nearest_rows(z.data, codebook.data)
        starts = np.zeros_like(local)
    else:
        starts = np.asarray(row_ranges[0], dtype=np.int64)
        stops = np.asarray(row_ranges[1], dtype=np.int64)
        local = np.empty(z.shape[0], dtype=np.int64)
        for start, stop in sorted(set(zip(starts.tolist(), stops.tolist()))):
            mask = (starts == start) & (stops == stop)
            local[mask] = nearest_rows(z.data[mask], codebook.data[start:stop])
    z_e = ad.gather_rows(codebook, starts + local)
    z_st = z + ad.stop_gradient(z_e - z)
    if single:
        return Quantized(ad.reshape(z_st, (-1,)), ad.reshape(z_e, (-1,)), local[:1].copy().reshape(()))
    return Quantized(z_st, z_e, local)


def decode_latent(z_e: Any, params: Mapping[str, Any], config: ModelConfig) -> ad.Tensor:
    """Reconstruct γ(x) from the latent; hidden layers use relu."""
    h = ad.as_tensor(z_e)
    if h.shape[-1] != config.latent_dim:
        raise ShapeError(f"decode_latent: expected latent dimension {config.latent_dim}, got {h.shape[-1]}")
    for k in range(config.decoder_layers):
        h = ad.relu(_affine(h, params, f"decoder/{k}"))
    return _affine(h, params, "decoder/out")


def vq_loss(gamma_x: Any, y: Any, z: Any, z_e: Any, beta: float) -> ad.Tensor:
    """Latent loss per point: ||γ - y||² + ||sg(z_e) - z||² + β ||z_e - sg(z)||²."""
    gamma_x, y, z, z_e = (ad.as_tensor(v) for v in (gamma_x, y, z, z_e))
    if gamma_x.shape != y.shape or z.shape != z_e.shape:
        raise ShapeError(
            f"vq_loss: shapes {list(gamma_x.shape)}/{list(y.shape)} and "
            f"{list(z.shape)}/{list(z_e.shape)} must match pairwise"
        )
    if beta < 0:
        raise ShapeError(f"vq_loss: beta must be >= 0, got {beta}")
    reconstruction = ad.sum(ad.square(gamma_x - y), axis=-1)
    commitment = ad.sum(ad.square(ad.stop_gradient(z_e) - z), axis=-1)
    codebook = ad.sum(ad.square(z_e - ad.stop_gradient(z)), axis=-1)
    return reconstruction + commitment + codebook * beta


def vae_loss(gamma_x: Any, y: Any, mean: Any, log_var: Any) -> ad.Tensor:
    """Reconstruction plus KL(N(mean, exp(log_var)) || N(0, I)) per point."""
    reconstruction = ad.sum(ad.square(ad.as_tensor(gamma_x) - y), axis=-1)
    kl = ad.sum(ad.exp(log_var) + ad.square(mean) - 1.0 - log_var, axis=-1) * 0.5
    return reconstruction + kl


def route_latent(z_e: Any, params: Mapping[str, Any],
                 config: ModelConfig) -> tuple[ad.Tensor | None, ad.Tensor | None]:
    """Conditioning vectors for trunk layers 1 and 2 (None where the variant has no router)."""
    conds: list[ad.Tensor | None] = [None, None]
    for k in config.routers:
        if f"router/{k}/w" not in params:
            raise ShapeError(f"route_latent: variant '{config.variant}' needs parameter router/{k}/w")
        conds[k - 1] = _affine(ad.as_tensor(z_e), params, f"router/{k}")
    return conds[0], conds[1]


# ------------------------------------------------------------
# Full forward pass
# ------------------------------------------------------------

def _codebook_table(params: Mapping[str, Any], config: ModelConfig,
                    levels: np.ndarray) -> tuple[ad.Tensor, tuple[np.ndarray, np.ndarray], np.ndarray]:
    n = config.codebook_size
    if config.shared_codebook:
        ids = np.zeros(levels.shape, dtype=np.int64)
        table = ad.as_tensor(params["codebook/0"])
    else:
        if levels.size and levels.max() >= config.num_codebooks:
            raise ShapeError(
                f"model_forward: level {int(levels.max())} has no codebook "
                f"(num_levels={config.num_levels})"
            )
        ids = levels.astype(np.int64)
        table = ad.concat([params[f"codebook/{c}"] for c in range(config.num_codebooks)], axis=0)
    return table, (ids * n, ids * n + n), ids


def latent_path(gamma: ad.Tensor, levels: np.ndarray, params: Mapping[str, Any],
                config: ModelConfig, rng: np.random.Generator | None = None) -> tuple[ad.Tensor, LatentAux]:
    """Latent generator for a (P, ipe_dim) batch; returns the routed latent and aux terms."""
    level_code = (
        level_encode(levels, FrequencyBands(config.level_bands), config.num_levels)
        if config.use_level_encoding else None
    )
    z = encode_latent(gamma, level_code, params, config)
    if config.is_vae:
        d = config.latent_dim
        mean = ad.take(z, np.arange(d), axis=-1)
        log_var = ad.take(z, np.arange(d, 2 * d), axis=-1)
        noise = np.zeros(mean.shape) if rng is None else rng.standard_normal(mean.shape)
        sample = mean + ad.exp(log_var * 0.5) * noise
        y = decode_latent(sample, params, config)
        aux = LatentAux(z=mean, z_e=sample, y=y, loss=vae_loss(gamma, y, mean, log_var))
        return sample, aux
    table, ranges, ids = _codebook_table(params, config, levels)
    q = quantize(z, table, row_ranges=ranges)
    y = decode_latent(q.z_st, params, config)
    loss = vq_loss(gamma, y, z, q.z_e, config.beta)
    return q.z_st, LatentAux(z=z, z_e=q.z_e, y=y, index=q.index, codebook_id=ids, loss=loss)


def model_forward(seg: GaussianSegment, view_dirs: Any, levels: Any, params: Mapping[str, Any],
                  config: ModelConfig, rng: np.random.Generator | None = None) -> FieldOutput:
    """Colour in [0, 1]^3 and density >= 0 for every segment of a batch.

    ``seg`` may be a single segment or any batch shape; ``view_dirs`` matches
    it with a trailing 3 and ``levels`` broadcasts to the batch shape.
    """
    batch_shape = seg.batch_shape
    flat = seg.reshape(-1)
    if config.unbounded:
        flat = contract_segment(flat)
    count = flat.mu.shape[0]
    dirs = np.asarray(view_dirs, dtype=np.float64).reshape(count, 3)
    levels = np.broadcast_to(np.asarray(levels, dtype=np.int64), batch_shape).reshape(count)

    gamma = ipe(flat.mu, flat.sigma_diag, FrequencyBands(config.position_bands))
    dir_code = positional_encode(dirs, FrequencyBands(config.direction_bands))

    aux = LatentAux()
    cond1 = cond2 = None
    trunk_in = gamma
    if config.has_latent:
        latent, aux = latent_path(gamma, levels, params, config, rng)
        if config.variant == "D3":
            trunk_in = ad.concat([gamma, latent], axis=-1)
        else:
            cond1, cond2 = route_latent(latent, params, config)

    h = trunk_in
    for i in range(config.trunk_depth):
        if 0 < config.trunk_skip == i:
            h = ad.concat([h, gamma], axis=-1)
        h = ad.relu(_affine(h, params, f"trunk/{i}"))
        if i == 0 and cond1 is not None:
            h = h + cond1
        elif i == 1 and cond2 is not None:
            h = h + cond2

    sigma = ad.reshape(ad.softplus(_affine(h, params, "density")), (count,))
    bottleneck = _affine(h, params, "bottleneck")
    color_h = ad.relu(_affine(ad.concat([bottleneck, dir_code], axis=-1), params, "color/hidden"))
    rgb = ad.sigmoid(_affine(color_h, params, "color/out"))

    if batch_shape != (count,):
        rgb = ad.reshape(rgb, (*batch_shape, 3))
        sigma = ad.reshape(sigma, batch_shape)
    return FieldOutput(rgb, sigma, aux)


FieldFn = Callable[[GaussianSegment, np.ndarray, np.ndarray], FieldOutput]


def make_field(params: Mapping[str, Any], config: ModelConfig,
               rng: np.random.Generator | None = None) -> FieldFn:
    """Bind parameters and config into the closure the renderer calls."""

    def field(seg: GaussianSegment, view_dirs: np.ndarray, levels: np.ndarray) -> FieldOutput:
        return model_forward(seg, view_dirs, levels, params, config, rng)

    return field
