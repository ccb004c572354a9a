"""
Strata-NeRF - Positional Encodings
==================================

Frequency encoding, integrated positional encoding (IPE) of Gaussian ray
segments, level encoding and the unbounded-scene contraction.

Layout of every encoding of a ``d``-vector with ``L`` octaves: for octave
``l`` and dimension ``j`` the pair ``[sin(2^l x_j), cos(2^l x_j)]`` sits at
positions ``2 (l d + j)`` and ``2 (l d + j) + 1``. Octaves are outermost,
dimensions next, the sin/cos pair innermost.

All functions accept leading batch dimensions and work on autodiff tensors,
so they are differentiable end to end.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache
from typing import TYPE_CHECKING, Any

import numpy as np

from . import autodiff as ad
from .errors import GeometryError, NonFiniteError

if TYPE_CHECKING:
    from .rendering import Ray


@dataclass(frozen=True)
class FrequencyBands:
    """Octave count ``L``: frequencies 2^0 ... 2^(L-1)."""

    L: int

    def __post_init__(self) -> None:
        if self.L < 1:
            raise GeometryError(f"FrequencyBands: L must be >= 1, got {self.L}")

    def output_dim(self, d: int) -> int:
        return 2 * d * self.L


@dataclass(frozen=True)
class GaussianSegment:
    """Per-interval Gaussian; ``mu`` and ``sigma_diag`` have shape (..., 3)."""

    mu: np.ndarray
    sigma_diag: np.ndarray

    def __post_init__(self) -> None:
        object.__setattr__(self, "mu", np.asarray(self.mu, dtype=np.float64))
        object.__setattr__(self, "sigma_diag", np.asarray(self.sigma_diag, dtype=np.float64))
        if self.mu.shape != self.sigma_diag.shape or self.mu.shape[-1:] != (3,):
            raise GeometryError(
                f"GaussianSegment: mu {list(self.mu.shape)} and sigma_diag "
                f"{list(self.sigma_diag.shape)} must share a trailing dimension of 3"
            )
        if np.any(self.sigma_diag < 0):
            raise GeometryError("GaussianSegment: negative variance")

    @property
    def batch_shape(self) -> tuple[int, ...]:
        return self.mu.shape[:-1]

    def reshape(self, *shape: int) -> "GaussianSegment":
        return GaussianSegment(self.mu.reshape(*shape, 3), self.sigma_diag.reshape(*shape, 3))


@lru_cache(maxsize=64)
def _scale_matrix(d: int, L: int) -> np.ndarray:
    scales = np.zeros((d, d * L))
    for octave in range(L):
        for j in range(d):
            scales[j, octave * d + j] = 2.0 ** octave
    scales.setflags(write=False)
    return scales


def _interleave(sines: ad.Tensor, cosines: ad.Tensor) -> ad.Tensor:
    lead = sines.shape[:-1]
    width = sines.shape[-1]
    pairs = ad.concat(
        [ad.reshape(sines, (*lead, width, 1)), ad.reshape(cosines, (*lead, width, 1))],
        axis=-1,
    )
    return ad.reshape(pairs, (*lead, 2 * width))


def _require_finite(name: str, values: np.ndarray) -> None:
    if not np.all(np.isfinite(values)):
        raise NonFiniteError(f"{name}: input contains non-finite values")


def positional_encode(x: Any, bands: FrequencyBands) -> ad.Tensor:
    """Frequency encoding of (..., d) inputs into (..., 2 d L)."""
    x = ad.as_tensor(x)
    _require_finite("positional_encode", x.data)
    if x.ndim == 0:
        x = ad.reshape(x, (1,))
    scaled = ad.matmul(x, _scale_matrix(x.shape[-1], bands.L))
    return _interleave(ad.sin(scaled), ad.cos(scaled))


def ipe(mu: Any, sigma_diag: Any, bands: FrequencyBands) -> ad.Tensor:
    """Integrated encoding: sin(2^l mu) exp(-2^(2l-1) var), and the cosine twin."""
    mu = ad.as_tensor(mu)
    sigma_diag = ad.as_tensor(sigma_diag)
    _require_finite("integrated_positional_encode", mu.data)
    if np.any(sigma_diag.data < 0):
        raise GeometryError("integrated_positional_encode: negative variance")
    scales = _scale_matrix(mu.shape[-1], bands.L)
    scaled = ad.matmul(mu, scales)
    attenuation = ad.exp(ad.matmul(sigma_diag, scales * scales) * -0.5)
    return _interleave(ad.sin(scaled) * attenuation, ad.cos(scaled) * attenuation)


def integrated_positional_encode(seg: GaussianSegment, bands: FrequencyBands) -> ad.Tensor:
    return ipe(seg.mu, seg.sigma_diag, bands)


def segment_gaussians(origins: np.ndarray, directions: np.ndarray, t_edges: np.ndarray,
                      base_radii: np.ndarray) -> GaussianSegment:
    """Gaussians for every interval of a batch of rays.

    origins, directions: (R, 3); t_edges: (R, K+1); base_radii: (R,).
    Returns a segment batch of shape (R, K). Zero-width intervals are allowed
    here because merged coarse/fine edges may repeat.
    """
    t_edges = np.asarray(t_edges, dtype=np.float64)
    widths = t_edges[..., 1:] - t_edges[..., :-1]
    if np.any(widths < 0):
        raise GeometryError("segment_gaussians: interval edges must be non-decreasing")
    t_mid = 0.5 * (t_edges[..., 1:] + t_edges[..., :-1])
    mu = origins[..., None, :] + t_mid[..., None] * directions[..., None, :]
    variance = widths ** 2 / 12.0 + (np.asarray(base_radii)[..., None] * t_mid) ** 2
    return GaussianSegment(mu, np.repeat(variance[..., None], 3, axis=-1))


def segment_gaussian(ray: "Ray", t0: float, t1: float, base_radius: float) -> GaussianSegment:
    """Isotropic Gaussian approximation of one ray interval [t0, t1)."""
    if not t1 > t0:
        raise GeometryError(f"segment_gaussian: need t1 > t0, got t0={t0}, t1={t1}")
    if t0 < 0 or base_radius < 0:
        raise GeometryError("segment_gaussian: t0 and base_radius must be non-negative")
    seg = segment_gaussians(
        np.asarray(ray.origin, dtype=np.float64)[None],
        np.asarray(ray.direction, dtype=np.float64)[None],
        np.array([[t0, t1]], dtype=np.float64),
        np.array([base_radius], dtype=np.float64),
    )
    return GaussianSegment(seg.mu[0, 0], seg.sigma_diag[0, 0])


def contract(x: Any) -> ad.Tensor:
    """Map (..., 3) points into the ball of radius 2; identity inside the unit ball."""
    x = ad.as_tensor(x)
    _require_finite("contract", x.data)
    norm_sq = ad.sum(ad.square(x), axis=-1, keepdims=True)
    inside = (norm_sq.data <= 1.0).astype(np.float64)
    norm = ad.sqrt(ad.maximum(norm_sq, 1.0))
    outside_scale = (2.0 - 1.0 / norm) / norm
    scale = inside + (1.0 - inside) * outside_scale
    return x * scale


def contract_segment(seg: GaussianSegment) -> GaussianSegment:
    """Contract segment means; variances follow the tangential scale factor squared."""
    mu = seg.mu
    norm = np.linalg.norm(mu, axis=-1, keepdims=True)
    contracted = contract(mu).data
    safe = np.maximum(norm, 1.0)
    factor = np.where(norm <= 1.0, 1.0, (2.0 - 1.0 / safe) / safe)
    return GaussianSegment(contracted, seg.sigma_diag * factor ** 2)


def normalized_level(level: Any, num_levels: int) -> np.ndarray:
    level = np.asarray(level, dtype=np.float64)
    if np.any(level < 0):
        raise GeometryError(f"level_encode: level must be >= 0, got {level.min()}")
    return level / max(1, num_levels - 1)


def level_encode(level: Any, bands: FrequencyBands, num_levels: int = 2) -> ad.Tensor:
    """Encode integer level(s) after scaling by max(1, num_levels - 1)."""
    value = normalized_level(level, num_levels)
    return positional_encode(value[..., None], bands)
