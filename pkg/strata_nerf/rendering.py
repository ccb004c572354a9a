"""
Strata-NeRF - Volume Rendering
==============================

Pinhole cameras, ray generation, stratified and hierarchical sampling, and the
quadrature form of the volume rendering integral.

Camera convention: camera space looks down -z with +y up and +x right; the
pose is camera-to-world. Pixel (px, py) has its centre at (px + 0.5, py + 0.5)
with py growing downwards.

Batched functions take rays as a ``RayBatch`` of R rays and interval edges of
shape (R, K + 1). Single-ray functions are thin wrappers around them.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace
from typing import Any, Callable

import numpy as np

from . import autodiff as ad
from .encoding import GaussianSegment, segment_gaussians
from .errors import GeometryError, NonFiniteError

logger = logging.getLogger(__name__)

DEPTH_EPS = 1e-10


@dataclass
class Camera:
    width: int
    height: int
    focal: float
    pose: np.ndarray
    near: float
    far: float
    level: int = 0

    def __post_init__(self) -> None:
        self.pose = np.asarray(self.pose, dtype=np.float64)
        if self.pose.shape != (4, 4):
            raise GeometryError(f"Camera: pose must be 4x4, got {list(self.pose.shape)}")
        if self.width < 1 or self.height < 1:
            raise GeometryError(f"Camera: image size must be positive, got {self.width}x{self.height}")
        if not self.focal > 0:
            raise GeometryError(f"Camera: focal must be > 0, got {self.focal}")
        if not 0 <= self.near < self.far:
            raise GeometryError(f"Camera: need 0 <= near < far, got near={self.near}, far={self.far}")
        rotation = self.pose[:3, :3]
        if np.linalg.norm(rotation.T @ rotation - np.eye(3)) >= 1e-6:
            raise GeometryError("Camera: rotation block of the pose is not orthonormal")

    @property
    def position(self) -> np.ndarray:
        return self.pose[:3, 3]

    @property
    def forward(self) -> np.ndarray:
        return -self.pose[:3, 2]

    def to_dict(self) -> dict[str, Any]:
        return {
            "width": self.width,
            "height": self.height,
            "focal": self.focal,
            "pose": self.pose.tolist(),
            "near": self.near,
            "far": self.far,
            "level": self.level,
        }

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> "Camera":
        return cls(
            width=int(data["width"]),
            height=int(data["height"]),
            focal=float(data["focal"]),
            pose=np.asarray(data["pose"], dtype=np.float64),
            near=float(data["near"]),
            far=float(data["far"]),
            level=int(data.get("level", 0)),
        )


def look_at(position: Any, target: Any, up: Any = (0.0, 0.0, 1.0),
            fallback_up: Any = (0.0, 1.0, 0.0)) -> np.ndarray:
    """Camera-to-world pose at ``position`` whose -z axis points at ``target``."""
    position = np.asarray(position, dtype=np.float64)
    forward = np.asarray(target, dtype=np.float64) - position
    norm = np.linalg.norm(forward)
    if norm == 0:
        raise GeometryError("look_at: position coincides with target")
    forward = forward / norm
    right = np.cross(forward, np.asarray(up, dtype=np.float64))
    if np.linalg.norm(right) < 1e-9:
        right = np.cross(forward, np.asarray(fallback_up, dtype=np.float64))
    right = right / np.linalg.norm(right)
    true_up = np.cross(right, forward)
    pose = np.eye(4)
    pose[:3, 0] = right
    pose[:3, 1] = true_up
    pose[:3, 2] = -forward
    pose[:3, 3] = position
    return pose


@dataclass
class Ray:
    origin: np.ndarray
    direction: np.ndarray
    near: float
    far: float
    pixel_footprint: float
    level: int = 0

    def __post_init__(self) -> None:
        self.origin = np.asarray(self.origin, dtype=np.float64)
        self.direction = np.asarray(self.direction, dtype=np.float64)
        if abs(np.linalg.norm(self.direction) - 1.0) > 1e-9:
            raise GeometryError("Ray: direction must be unit length")
        if not self.near < self.far:
            raise GeometryError(f"Ray: need near < far, got {self.near}, {self.far}")


@dataclass
class RayBatch:
    origins: np.ndarray      # (R, 3)
    directions: np.ndarray   # (R, 3)
    near: np.ndarray         # (R,)
    far: np.ndarray          # (R,)
    radii: np.ndarray        # (R,)
    levels: np.ndarray       # (R,) int

    def __len__(self) -> int:
        return self.origins.shape[0]

    def subset(self, index: Any) -> "RayBatch":
        return RayBatch(
            self.origins[index], self.directions[index], self.near[index],
            self.far[index], self.radii[index], self.levels[index],
        )

    @classmethod
    def from_ray(cls, ray: Ray) -> "RayBatch":
        return cls(
            ray.origin[None], ray.direction[None], np.array([ray.near]), np.array([ray.far]),
            np.array([ray.pixel_footprint]), np.array([ray.level], dtype=np.int64),
        )

    @classmethod
    def concatenate(cls, batches: list["RayBatch"]) -> "RayBatch":
        return cls(*(np.concatenate([getattr(b, f) for b in batches]) for f in
                     ("origins", "directions", "near", "far", "radii", "levels")))


def pixel_footprint(focal: float) -> float:
    return 1.0 / (focal * np.sqrt(12.0))


def camera_rays(camera: Camera, px: Any, py: Any, jitter: Any = None) -> RayBatch:
    """Rays through pixels ``(px, py)``; ``jitter`` in [0, 1)^2 replaces the 0.5 centre offset."""
    px = np.asarray(px, dtype=np.int64).ravel()
    py = np.asarray(py, dtype=np.int64).ravel()
    if px.size and (px.min() < 0 or px.max() >= camera.width or py.min() < 0 or py.max() >= camera.height):
        raise GeometryError(
            f"generate_ray: pixel out of bounds for a {camera.width}x{camera.height} image"
        )
    if jitter is None:
        offset = np.full((px.size, 2), 0.5)
    else:
        offset = np.broadcast_to(np.asarray(jitter, dtype=np.float64), (px.size, 2))
    x = (px + offset[:, 0] - 0.5 * camera.width) / camera.focal
    y = -(py + offset[:, 1] - 0.5 * camera.height) / camera.focal
    local = np.stack([x, y, -np.ones_like(x)], axis=-1)
    local = local / np.linalg.norm(local, axis=-1, keepdims=True)
    directions = local @ camera.pose[:3, :3].T
    directions = directions / np.linalg.norm(directions, axis=-1, keepdims=True)
    count = px.size
    return RayBatch(
        origins=np.broadcast_to(camera.position, (count, 3)).copy(),
        directions=directions,
        near=np.full(count, camera.near),
        far=np.full(count, camera.far),
        radii=np.full(count, pixel_footprint(camera.focal)),
        levels=np.full(count, camera.level, dtype=np.int64),
    )


def image_rays(camera: Camera) -> RayBatch:
    """All pixel-centre rays of an image in row-major order."""
    py, px = np.meshgrid(np.arange(camera.height), np.arange(camera.width), indexing="ij")
    return camera_rays(camera, px, py)


def generate_ray(camera: Camera, px: int, py: int, jitter: Any = None) -> Ray:
    batch = camera_rays(camera, [px], [py], None if jitter is None else np.asarray(jitter)[None])
    return Ray(batch.origins[0], batch.directions[0], camera.near, camera.far,
               float(batch.radii[0]), camera.level)


# ------------------------------------------------------------
# Sampling
# ------------------------------------------------------------

@dataclass
class SampleSet:
    """Interval edges (..., K+1) on [near, far] plus the weights rendering filled in."""

    t_edges: np.ndarray
    near: np.ndarray
    far: np.ndarray
    weights: np.ndarray | None = None

    @property
    def num_intervals(self) -> int:
        return self.t_edges.shape[-1] - 1

    @property
    def t_mid(self) -> np.ndarray:
        return 0.5 * (self.t_edges[..., 1:] + self.t_edges[..., :-1])

    @property
    def deltas(self) -> np.ndarray:
        return self.t_edges[..., 1:] - self.t_edges[..., :-1]

    @property
    def s(self) -> np.ndarray:
        """Edges normalized to [0, 1]."""
        near = np.asarray(self.near)[..., None]
        far = np.asarray(self.far)[..., None]
        return (self.t_edges - near) / (far - near)


def stratified_samples(near: Any, far: Any, num_samples: int,
                       rng: np.random.Generator | None = None, jittered: bool = False) -> SampleSet:
    """Partition [near, far] of every ray into ``num_samples`` intervals.

    Jittered edges: each interior edge is drawn uniformly within half a bin of
    its regular position, which keeps edges sorted and the end points fixed.
    """
    if num_samples < 1:
        raise GeometryError(f"stratified_sample: K must be >= 1, got {num_samples}")
    near = np.atleast_1d(np.asarray(near, dtype=np.float64))
    far = np.atleast_1d(np.asarray(far, dtype=np.float64))
    u = np.broadcast_to(np.linspace(0.0, 1.0, num_samples + 1), (*near.shape, num_samples + 1)).copy()
    if jittered and num_samples > 1:
        if rng is None:
            raise GeometryError("stratified_sample: jittered sampling needs a random generator")
        draws = rng.uniform(-0.5, 0.5, size=(*near.shape, num_samples - 1))
        u[..., 1:-1] = u[..., 1:-1] + draws / num_samples
    t_edges = near[..., None] + u * (far - near)[..., None]
    t_edges[..., 0] = near
    t_edges[..., -1] = far
    return SampleSet(t_edges, near, far)


def stratified_sample(ray: Ray, num_samples: int, rng: np.random.Generator | None = None,
                      jittered: bool = False) -> SampleSet:
    samples = stratified_samples([ray.near], [ray.far], num_samples, rng, jittered)
    return SampleSet(samples.t_edges[0], samples.near[0], samples.far[0])


def sample_pdf(samples: SampleSet, num_fine: int, rng: np.random.Generator | None = None,
               floor: float = 0.01) -> np.ndarray:
    """Inverse-CDF draws from the piecewise-constant density w + floor * (width / ray length).

    With ``rng`` None the draws sit at bin centres of the CDF (deterministic).
    Returns sorted t values of shape (..., num_fine).
    """
    if samples.weights is None:
        raise GeometryError("hierarchical_resample: coarse weights are not populated")
    weights = np.asarray(samples.weights, dtype=np.float64)
    edges = samples.t_edges
    deltas = samples.deltas
    length = (np.asarray(samples.far) - np.asarray(samples.near))[..., None]
    mass = np.maximum(weights, 0.0) + floor * deltas / length
    total = mass.sum(axis=-1, keepdims=True)
    if np.any(total <= 0):
        raise GeometryError("hierarchical_resample: all weights are zero and the floor is disabled")
    cdf = np.concatenate([np.zeros_like(total), np.cumsum(mass, axis=-1) / total], axis=-1)

    lead = weights.shape[:-1]
    offsets = np.full((*lead, num_fine), 0.5) if rng is None else rng.uniform(size=(*lead, num_fine))
    u = (np.arange(num_fine) + offsets) / num_fine

    # right-sided search: zero-mass bins are skipped
    below = np.sum(cdf[..., None, :] <= u[..., :, None], axis=-1)
    index = np.clip(below - 1, 0, weights.shape[-1] - 1)

    cdf_lo = np.take_along_axis(cdf, index, axis=-1)
    cdf_hi = np.take_along_axis(cdf, index + 1, axis=-1)
    t_lo = np.take_along_axis(edges, index, axis=-1)
    width = np.take_along_axis(deltas, index, axis=-1)
    span = cdf_hi - cdf_lo
    frac = np.where(span > 0, (u - cdf_lo) / np.where(span > 0, span, 1.0), 0.5)
    return t_lo + np.clip(frac, 0.0, 1.0) * width


def hierarchical_resample(coarse: SampleSet, num_fine: int, rng: np.random.Generator | None = None,
                          floor: float = 0.01) -> SampleSet:
    """Fine samples from the coarse weights, merged and sorted with the coarse edges."""
    if num_fine <= 0:
        return coarse
    fine = sample_pdf(coarse, num_fine, rng, floor)
    merged = np.sort(np.concatenate([coarse.t_edges, fine], axis=-1), axis=-1)
    return SampleSet(merged, coarse.near, coarse.far)


# ------------------------------------------------------------
# Quadrature
# ------------------------------------------------------------

FieldFn = Callable[[GaussianSegment, np.ndarray, np.ndarray], Any]


@dataclass
class RenderResult:
    color: ad.Tensor                # (R, 3)
    depth: ad.Tensor                # (R,)
    weights: ad.Tensor              # (R, K)
    samples: SampleSet
    aux: Any = None
    extras: dict[str, Any] = field(default_factory=dict)

    @property
    def transmittance_final(self) -> np.ndarray:
        if "transmittance" in self.extras:
            return self.extras["transmittance"]
        return 1.0 - self.weights.data.sum(axis=-1)


def compositing_weights(sigma: Any, deltas: np.ndarray) -> tuple[ad.Tensor, np.ndarray]:
    """w_i = T_i (1 - exp(-sigma_i delta_i)); also returns the final transmittance."""
    sigma = ad.as_tensor(sigma)
    optical = sigma * deltas
    transmittance = ad.exp(-ad.cumsum(optical, axis=-1, exclusive=True))
    alpha = 1.0 - ad.exp(-optical)
    weights = transmittance * alpha
    final = np.exp(-optical.data.sum(axis=-1))
    return weights, final


def render_rays(rays: RayBatch, samples: SampleSet, field_fn: FieldFn, background: Any) -> RenderResult:
    """Composite the field along every ray of the batch."""
    segments = segment_gaussians(rays.origins, rays.directions, samples.t_edges, rays.radii)
    k = samples.num_intervals
    view_dirs = np.broadcast_to(rays.directions[:, None, :], (len(rays), k, 3))
    levels = np.broadcast_to(rays.levels[:, None], (len(rays), k))
    out = field_fn(segments, view_dirs, levels)
    rgb, sigma = out.rgb, out.sigma

    bad = ~np.isfinite(sigma.data) | ~np.all(np.isfinite(rgb.data), axis=-1)
    if np.any(bad):
        ray_index, segment_index = (int(i) for i in np.argwhere(bad)[0])
        raise NonFiniteError(f"render_ray: non-finite field output at ray {ray_index}, segment {segment_index}")

    weights, final = compositing_weights(sigma, samples.deltas)
    opacity = ad.sum(weights, axis=-1)
    background = np.broadcast_to(np.asarray(background, dtype=np.float64), (len(rays), 3))
    color = ad.sum(ad.reshape(weights, (len(rays), k, 1)) * rgb, axis=-2)
    color = color + ad.reshape(1.0 - opacity, (len(rays), 1)) * background
    depth = ad.sum(weights * samples.t_mid, axis=-1) / ad.maximum(opacity, DEPTH_EPS)
    filled = replace(samples, weights=weights.data)
    return RenderResult(color, depth, weights, filled, out.aux, {"transmittance": final})


def render_ray(ray: Ray, samples: SampleSet, field_fn: FieldFn,
               background: Any) -> tuple[ad.Tensor, ad.Tensor, SampleSet]:
    batch = RayBatch.from_ray(ray)
    batched = SampleSet(samples.t_edges[None], np.array([ray.near]), np.array([ray.far]))
    result = render_rays(batch, batched, field_fn, np.asarray(background, dtype=np.float64)[None])
    filled = SampleSet(samples.t_edges, samples.near, samples.far, result.samples.weights[0])
    return ad.reshape(result.color, (3,)), ad.reshape(result.depth, ()), filled


def distortion_loss(samples: SampleSet, lambda1: float, weights: Any = None) -> ad.Tensor:
    """lambda1 * mean over rays of sum_ij w_i w_j |s_i - s_j| + 1/3 sum_i w_i^2 (s_i+1 - s_i).

    ``weights`` defaults to the weights stored on ``samples``; pass the rendered
    tensor to keep the loss on the graph.
    """
    if lambda1 == 0:
        return ad.Tensor(0.0)
    w = ad.as_tensor(samples.weights if weights is None else weights)
    s = samples.s
    if s.ndim == 1:
        s = s[None]
        w = ad.reshape(w, (1, w.shape[-1]))
    s_mid = 0.5 * (s[..., 1:] + s[..., :-1])
    s_width = s[..., 1:] - s[..., :-1]
    k = s_mid.shape[-1]
    pairwise = np.abs(s_mid[..., :, None] - s_mid[..., None, :])
    outer = ad.reshape(w, (*w.shape[:-1], k, 1)) * ad.reshape(w, (*w.shape[:-1], 1, k))
    inter = ad.sum(outer * pairwise, axis=(-2, -1))
    intra = ad.sum(ad.square(w) * s_width, axis=-1) * (1.0 / 3.0)
    return ad.mean(inter + intra) * lambda1


# ------------------------------------------------------------
# Two-pass rendering
# ------------------------------------------------------------

@dataclass
class RenderOptions:
    num_coarse: int = 64
    num_fine: int = 128
    resample_floor: float = 0.01
    chunk: int = 128


def render_hierarchical(rays: RayBatch, field_fn: FieldFn, background: Any, options: RenderOptions,
                        rng: np.random.Generator | None = None,
                        jittered: bool = False) -> tuple[RenderResult, RenderResult]:
    """Coarse pass on stratified samples, fine pass on coarse + resampled edges."""
    coarse_samples = stratified_samples(rays.near, rays.far, options.num_coarse, rng, jittered)
    coarse = render_rays(rays, coarse_samples, field_fn, background)
    if options.num_fine <= 0:
        return coarse, coarse
    fine_samples = hierarchical_resample(
        coarse.samples, options.num_fine, rng if jittered else None, options.resample_floor
    )
    fine = render_rays(rays, fine_samples, field_fn, background)
    return coarse, fine


def render_image(camera: Camera, field_fn: FieldFn, background: Any,
                 options: RenderOptions | None = None,
                 collect: list | None = None) -> tuple[np.ndarray, np.ndarray]:
    """Deterministic inference render; returns (H, W, 3) colour and (H, W) depth.

    When ``collect`` is a list, the fine-pass latent aux of every chunk is appended to it.
    """
    options = options or RenderOptions()
    rays = image_rays(camera)
    colors = np.empty((len(rays), 3))
    depths = np.empty(len(rays))
    for start in range(0, len(rays), options.chunk):
        index = slice(start, start + options.chunk)
        _, fine = render_hierarchical(rays.subset(index), field_fn, background, options)
        colors[index] = fine.color.data
        if collect is not None:
            collect.append(fine.aux)
        depths[index] = fine.depth.data
    return (
        colors.reshape(camera.height, camera.width, 3),
        depths.reshape(camera.height, camera.width),
    )
