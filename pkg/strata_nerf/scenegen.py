"""
Strata-NeRF - Stratified Scene Generator
========================================

Analytic ray tracing of nested primitives, per-level camera shells and
dataset serialization.

A scene is a list of levels. Level 0 is outermost and is photographed from a
hemisphere outside everything; each deeper level is photographed from a shell
that sits strictly inside the hollow enclosing primitive of the level above,
so inner views never see the outside world.

Primitives are unit shapes in their own frame (sphere of radius 1, box
[-1, 1]^3, plane z = 0) placed by a centre, a rotation and a per-axis scale.
Shading is Lambert with a single directional light plus ambient, no shadows,
identical for every level.

Dataset layout::

    out_dir/
      manifest.json
      images/L{level}_{split}_{index}.ppm
      depth/L{level}_{split}_{index}.pfm
"""

from __future__ import annotations

import json
import logging
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Any

import numpy as np

from .errors import DatasetError, SceneError
from .image_io import write_pfm, write_ppm
from .parallel import map_ordered
from .rendering import Camera, Ray, image_rays, look_at

logger = logging.getLogger(__name__)

FORMAT_VERSION = 1
MANIFEST_NAME = "manifest.json"
SPLITS = ("train", "val", "test")
HIT_EPS = 1e-6

_UNIT_BOX_FACES = ((1, 2), (0, 2), (0, 1))


# ------------------------------------------------------------
# Primitives and materials
# ------------------------------------------------------------

def _color(value: Any, what: str) -> tuple[float, float, float]:
    rgb = tuple(float(v) for v in value)
    if len(rgb) != 3 or any(not 0.0 <= v <= 1.0 for v in rgb):
        raise SceneError(f"{what}: colour must be three values in [0, 1], got {value}")
    return rgb


@dataclass
class Material:
    kind: str = "flat"                  # flat | checker | gradient
    color1: tuple[float, float, float] = (0.8, 0.8, 0.8)
    color2: tuple[float, float, float] = (0.2, 0.2, 0.2)
    checker_scale: float = 0.25         # side of one checker cell in uv units
    axis: int = 2                       # gradient axis in the primitive frame

    def __post_init__(self) -> None:
        if self.kind not in ("flat", "checker", "gradient"):
            raise SceneError(f"Material: unknown kind '{self.kind}'")
        self.color1 = _color(self.color1, "Material.color1")
        self.color2 = _color(self.color2, "Material.color2")
        if not self.checker_scale > 0:
            raise SceneError("Material: checker_scale must be > 0")
        if self.axis not in (0, 1, 2):
            raise SceneError(f"Material: axis must be 0, 1 or 2, got {self.axis}")

    def albedo(self, local: np.ndarray, uv: np.ndarray) -> np.ndarray:
        c1 = np.asarray(self.color1)
        c2 = np.asarray(self.color2)
        if self.kind == "flat":
            return np.broadcast_to(c1, local.shape).copy()
        if self.kind == "checker":
            cells = np.floor(uv / self.checker_scale).astype(np.int64)
            odd = (cells.sum(axis=-1) % 2).astype(bool)
            return np.where(odd[:, None], c2, c1)
        frac = np.clip((local[:, self.axis] + 1.0) / 2.0, 0.0, 1.0)[:, None]
        return (1.0 - frac) * c1 + frac * c2


@dataclass
class Primitive:
    kind: str
    center: Any = (0.0, 0.0, 0.0)
    scale: Any = (1.0, 1.0, 1.0)
    rotation: Any = None
    material: Material = field(default_factory=Material)
    hollow: bool = False

    def __post_init__(self) -> None:
        if self.kind not in ("sphere", "box", "plane"):
            raise SceneError(f"Primitive: unknown kind '{self.kind}'")
        self.center = np.asarray(self.center, dtype=np.float64).reshape(3)
        scale = np.asarray(self.scale, dtype=np.float64)
        self.scale = np.full(3, float(scale)) if scale.ndim == 0 else scale.reshape(3)
        if np.any(self.scale <= 0):
            raise SceneError(f"Primitive: scales must be positive, got {self.scale.tolist()}")
        self.rotation = np.eye(3) if self.rotation is None else np.asarray(self.rotation, dtype=np.float64)
        if np.linalg.norm(self.rotation.T @ self.rotation - np.eye(3)) >= 1e-6:
            raise SceneError("Primitive: rotation is not orthonormal")
        if isinstance(self.material, dict):
            self.material = Material(**self.material)

    def to_local(self, points: np.ndarray) -> np.ndarray:
        return ((points - self.center) @ self.rotation) / self.scale

    def direction_to_local(self, directions: np.ndarray) -> np.ndarray:
        return (directions @ self.rotation) / self.scale

    def normal_to_world(self, normals: np.ndarray) -> np.ndarray:
        world = (normals / self.scale) @ self.rotation.T
        return world / np.linalg.norm(world, axis=-1, keepdims=True)

    def contains(self, points: Any) -> np.ndarray:
        """Strict interior test (planes have no interior)."""
        local = self.to_local(np.atleast_2d(np.asarray(points, dtype=np.float64)))
        if self.kind == "sphere":
            return np.sum(local * local, axis=-1) < 1.0
        if self.kind == "box":
            return np.all(np.abs(local) < 1.0, axis=-1)
        return np.zeros(local.shape[0], dtype=bool)

    def bounding_radius(self, about: Any) -> float:
        offset = float(np.linalg.norm(self.center - np.asarray(about, dtype=np.float64)))
        if self.kind == "sphere":
            return offset + float(self.scale.max())
        if self.kind == "box":
            return offset + float(np.linalg.norm(self.scale))
        return math.inf

    def to_dict(self) -> dict[str, Any]:
        return {
            "kind": self.kind,
            "center": self.center.tolist(),
            "scale": self.scale.tolist(),
            "rotation": self.rotation.tolist(),
            "material": asdict(self.material),
            "hollow": self.hollow,
        }

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> "Primitive":
        return cls(**{**data, "material": Material(**data.get("material", {}))})


@dataclass
class Hit:
    t: np.ndarray        # (n,), inf on a miss
    normal: np.ndarray   # (n, 3) world space, unit
    uv: np.ndarray       # (n, 2)
    local: np.ndarray    # (n, 3) hit point in the primitive frame


def _sphere_hits(o: np.ndarray, d: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    a = np.sum(d * d, axis=-1)
    b = 2.0 * np.sum(o * d, axis=-1)
    c = np.sum(o * o, axis=-1) - 1.0
    disc = b * b - 4.0 * a * c
    root = np.sqrt(np.maximum(disc, 0.0))
    t0 = (-b - root) / (2.0 * a)
    t1 = (-b + root) / (2.0 * a)
    t = np.where(t0 >= HIT_EPS, t0, np.where(t1 >= HIT_EPS, t1, np.inf))
    t = np.where(disc >= 0.0, t, np.inf)
    p = o + np.where(np.isfinite(t), t, 0.0)[:, None] * d
    uv = np.stack([
        np.arctan2(p[:, 1], p[:, 0]) / (2.0 * np.pi) + 0.5,
        np.arccos(np.clip(p[:, 2], -1.0, 1.0)) / np.pi,
    ], axis=-1)
    return t, p, uv


def _box_hits(o: np.ndarray, d: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    safe = np.where(d == 0.0, 1e-300, d)
    with np.errstate(over="ignore"):
        ta = (-1.0 - o) / safe
        tb = (1.0 - o) / safe
    t_near = np.minimum(ta, tb)
    t_far = np.maximum(ta, tb)
    t_enter = t_near.max(axis=-1)
    t_exit = t_far.min(axis=-1)
    hit = t_exit >= np.maximum(t_enter, HIT_EPS)
    entering = t_enter >= HIT_EPS
    t = np.where(hit, np.where(entering, t_enter, t_exit), np.inf)
    axis = np.where(entering, t_near.argmax(axis=-1), t_far.argmin(axis=-1))
    rows = np.arange(o.shape[0])
    sign = np.sign(d[rows, axis]) * np.where(entering, -1.0, 1.0)
    normal = np.zeros_like(o)
    normal[rows, axis] = sign
    p = o + np.where(np.isfinite(t), t, 0.0)[:, None] * d
    faces = np.asarray(_UNIT_BOX_FACES)[axis]
    uv = (np.stack([p[rows, faces[:, 0]], p[rows, faces[:, 1]]], axis=-1) + 1.0) / 2.0
    return t, p, uv, normal


def intersect_rays(origins: np.ndarray, directions: np.ndarray, prim: Primitive) -> Hit:
    """Nearest hit with t >= 1e-6 for every ray; normals face the incoming ray on hollow shells and planes."""
    o = prim.to_local(np.asarray(origins, dtype=np.float64))
    d = prim.direction_to_local(np.asarray(directions, dtype=np.float64))
    if prim.kind == "sphere":
        t, p, uv = _sphere_hits(o, d)
        normal_local = p
    elif prim.kind == "box":
        t, p, uv, normal_local = _box_hits(o, d)
    else:
        dz = d[:, 2]
        with np.errstate(divide="ignore", invalid="ignore"):
            t = np.where(dz != 0.0, -o[:, 2] / np.where(dz != 0.0, dz, 1.0), np.inf)
        t = np.where(t >= HIT_EPS, t, np.inf)
        p = o + np.where(np.isfinite(t), t, 0.0)[:, None] * d
        uv = p[:, :2] * prim.scale[:2]
        normal_local = np.broadcast_to([0.0, 0.0, 1.0], o.shape)

    normal = np.zeros_like(o)
    found = np.isfinite(t)
    if np.any(found):
        normal[found] = prim.normal_to_world(normal_local[found])
        if prim.hollow or prim.kind == "plane":
            facing = np.sum(normal * directions, axis=-1) > 0.0
            normal[facing] = -normal[facing]
    return Hit(t, normal, uv, p)


def intersect(ray: Ray, prim: Primitive) -> tuple[float, np.ndarray, np.ndarray] | None:
    hit = intersect_rays(ray.origin[None], ray.direction[None], prim)
    if not np.isfinite(hit.t[0]):
        return None
    return float(hit.t[0]), hit.normal[0], hit.uv[0]


# ------------------------------------------------------------
# Scene description
# ------------------------------------------------------------

@dataclass
class PoseSampler:
    kind: str = "hemisphere"        # hemisphere | sphere | circle
    radius: float = 4.0
    center: Any = (0.0, 0.0, 0.0)
    elevation_min: float = 10.0     # degrees; the ring elevation for "circle"
    elevation_max: float = 80.0

    def __post_init__(self) -> None:
        self.center = tuple(float(v) for v in self.center)
        if self.kind not in ("hemisphere", "sphere", "circle"):
            raise SceneError(f"PoseSampler: unknown kind '{self.kind}'")
        if not self.radius > 0:
            raise SceneError(f"PoseSampler: radius must be > 0, got {self.radius}")
        if not -90.0 <= self.elevation_min <= self.elevation_max <= 90.0:
            raise SceneError("PoseSampler: need -90 <= elevation_min <= elevation_max <= 90")
        if self.kind == "hemisphere" and self.elevation_min < 0:
            raise SceneError("PoseSampler: a hemisphere needs elevation_min >= 0")


@dataclass
class LevelSpec:
    primitives: list[Primitive]
    sampler: PoseSampler
    counts: tuple[int, int, int] = (30, 15, 15)
    background: tuple[float, float, float] = (1.0, 1.0, 1.0)

    def __post_init__(self) -> None:
        self.counts = tuple(int(c) for c in self.counts)
        if len(self.counts) != 3 or any(c < 0 for c in self.counts):
            raise SceneError(f"LevelSpec: counts must be three non-negative integers, got {self.counts}")
        self.background = _color(self.background, "LevelSpec.background")

    @property
    def enclosure(self) -> Primitive | None:
        return next((p for p in self.primitives if p.hollow and p.kind != "plane"), None)

    def to_dict(self) -> dict[str, Any]:
        return {
            "primitives": [p.to_dict() for p in self.primitives],
            "sampler": asdict(self.sampler),
            "counts": list(self.counts),
            "background": list(self.background),
        }

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> "LevelSpec":
        return cls(
            primitives=[Primitive.from_dict(p) for p in data["primitives"]],
            sampler=PoseSampler(**data["sampler"]),
            counts=tuple(data["counts"]),
            background=tuple(data["background"]),
        )


def focal_from_fov(width: int, fov_degrees: float) -> float:
    return 0.5 * width / math.tan(math.radians(fov_degrees) / 2.0)


@dataclass
class SceneSpec:
    name: str
    levels: list[LevelSpec]
    width: int = 200
    height: int = 200
    focal: float = focal_from_fov(200, 60.0)
    light_dir: tuple[float, float, float] = (0.4, 0.3, 0.866)
    ambient: float = 0.2
    diffuse: float = 0.8

    def __post_init__(self) -> None:
        self.light_dir = tuple(float(v) for v in self.light_dir)
        if len(self.light_dir) != 3 or not np.any(self.light_dir):
            raise SceneError(f"SceneSpec: light_dir must be a non-zero 3-vector, got {self.light_dir}")

    @property
    def light(self) -> np.ndarray:
        """Unit vector from a surface towards the light."""
        light = np.asarray(self.light_dir)
        return light / np.linalg.norm(light)

    @property
    def primitives(self) -> list[Primitive]:
        return [p for level in self.levels for p in level.primitives]

    @property
    def num_levels(self) -> int:
        return len(self.levels)

    def validate(self) -> None:
        """Check that every inner camera shell fits strictly inside the enclosure above it."""
        if not self.levels:
            raise SceneError(f"scene '{self.name}' has no levels")
        for index in range(1, len(self.levels)):
            enclosure = self.levels[index - 1].enclosure
            if enclosure is None:
                raise SceneError(f"level {index - 1} of '{self.name}' has no hollow enclosing primitive")
            sampler = self.levels[index].sampler
            offset = (np.asarray(sampler.center) - enclosure.center) @ enclosure.rotation
            if enclosure.kind == "sphere":
                inside = np.linalg.norm(offset) + sampler.radius < enclosure.scale.min()
            else:
                inside = bool(np.all(np.abs(offset) + sampler.radius < enclosure.scale))
            if not inside:
                raise SceneError(
                    f"camera shell of level {index} (radius {sampler.radius}) is not strictly inside "
                    f"the enclosure of level {index - 1}"
                )

    def with_resolution(self, size: int) -> "SceneSpec":
        """Same field of view at a square ``size`` x ``size`` resolution."""
        focal = self.focal * size / self.width
        return SceneSpec(self.name, self.levels, size, size, focal,
                         self.light_dir, self.ambient, self.diffuse)

    def with_counts(self, counts: tuple[int, int, int]) -> "SceneSpec":
        levels = [LevelSpec(lv.primitives, lv.sampler, counts, lv.background) for lv in self.levels]
        return SceneSpec(self.name, levels, self.width, self.height, self.focal,
                         self.light_dir, self.ambient, self.diffuse)

    def to_dict(self) -> dict[str, Any]:
        return {
            "name": self.name,
            "levels": [level.to_dict() for level in self.levels],
            "width": self.width,
            "height": self.height,
            "focal": self.focal,
            "light_dir": list(self.light_dir),
            "ambient": self.ambient,
            "diffuse": self.diffuse,
        }

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> "SceneSpec":
        return cls(**{**data, "levels": [LevelSpec.from_dict(lv) for lv in data["levels"]],
                      "light_dir": tuple(data["light_dir"])})


def level_bounds(scene: SceneSpec, index: int) -> tuple[float, float]:
    """Near/far planes from the level's content and its enclosure, with 10% margins."""
    level = scene.levels[index]
    center = level.sampler.center
    content = max((p.bounding_radius(center) for p in level.primitives if p.kind != "plane"), default=0.0)
    if index == 0:
        outer = content
    else:
        outer = scene.levels[index - 1].enclosure.bounding_radius(center)
    radius = level.sampler.radius
    near = max(0.9 * (radius - content), 1e-3)
    far = 1.1 * (radius + outer)
    return near, far


# ------------------------------------------------------------
# Ground-truth rendering
# ------------------------------------------------------------

def shade(albedo: np.ndarray, normal: np.ndarray, scene: SceneSpec) -> np.ndarray:
    lambert = np.maximum(normal @ scene.light, 0.0)
    return np.clip(albedo * (scene.ambient + scene.diffuse * lambert)[:, None], 0.0, 1.0)


def render_ground_truth(camera: Camera, scene: SceneSpec) -> tuple[np.ndarray, np.ndarray]:
    """Nearest-hit Lambert render; returns (H, W, 3) colour and (H, W) depth with inf on a miss."""
    for prim in scene.primitives:
        if not prim.hollow and prim.contains(camera.position)[0]:
            raise SceneError(
                f"camera at {np.round(camera.position, 4).tolist()} is embedded in a solid {prim.kind}"
            )
    rays = image_rays(camera)
    background = scene.levels[camera.level].background if camera.level < scene.num_levels else (1.0, 1.0, 1.0)
    colors = np.broadcast_to(np.asarray(background), (len(rays), 3)).copy()
    depth = np.full(len(rays), np.inf)
    for prim in scene.primitives:
        hit = intersect_rays(rays.origins, rays.directions, prim)
        closer = hit.t < depth
        if not np.any(closer):
            continue
        albedo = prim.material.albedo(hit.local[closer], hit.uv[closer])
        colors[closer] = shade(albedo, hit.normal[closer], scene)
        depth[closer] = hit.t[closer]
    return colors.reshape(camera.height, camera.width, 3), depth.reshape(camera.height, camera.width)


# ------------------------------------------------------------
# Camera poses
# ------------------------------------------------------------

def sample_positions(sampler: PoseSampler, count: int, rng: np.random.Generator) -> np.ndarray:
    """Area-uniform points on the sampler's shell (uniform longitude, uniform height)."""
    if count < 0:
        raise SceneError(f"sample_poses: count must be >= 0, got {count}")
    phi = rng.uniform(0.0, 2.0 * np.pi, size=count)
    if sampler.kind == "circle":
        z = np.full(count, math.sin(math.radians(sampler.elevation_min)))
    else:
        z = rng.uniform(math.sin(math.radians(sampler.elevation_min)),
                        math.sin(math.radians(sampler.elevation_max)), size=count)
    ring = np.sqrt(np.maximum(1.0 - z * z, 0.0))
    unit = np.stack([ring * np.cos(phi), ring * np.sin(phi), z], axis=-1)
    return np.asarray(sampler.center) + sampler.radius * unit


def cameras_at(scene: SceneSpec, index: int, positions: np.ndarray) -> list[Camera]:
    near, far = level_bounds(scene, index)
    center = scene.levels[index].sampler.center
    return [
        Camera(scene.width, scene.height, scene.focal, look_at(p, center), near, far, index)
        for p in positions
    ]


def sample_poses(scene: SceneSpec, index: int, rng: np.random.Generator, count: int | None = None) -> list[Camera]:
    """Cameras on level ``index``'s shell, each looking at the shell centre."""
    level = scene.levels[index]
    count = sum(level.counts) if count is None else count
    return cameras_at(scene, index, sample_positions(level.sampler, count, rng))


def orbit_cameras(scene: SceneSpec, index: int, count: int = 60, elevation: float | None = None) -> list[Camera]:
    """Evenly spaced cameras on the level's shell at one elevation."""
    sampler = scene.levels[index].sampler
    if elevation is None:
        elevation = 0.5 * (sampler.elevation_min + sampler.elevation_max)
    z = math.sin(math.radians(elevation))
    ring = math.sqrt(1.0 - z * z)
    phi = 2.0 * np.pi * np.arange(count) / max(count, 1)
    unit = np.stack([ring * np.cos(phi), ring * np.sin(phi), np.full(count, z)], axis=-1)
    return cameras_at(scene, index, np.asarray(sampler.center) + sampler.radius * unit)


# ------------------------------------------------------------
# Dataset files
# ------------------------------------------------------------

@dataclass
class FrameRecord:
    frame_id: str
    image: str
    depth: str
    pose: list[list[float]]
    level: int
    split: str
    near: float
    far: float


@dataclass
class DatasetManifest:
    scene: SceneSpec
    seed: int
    frames: list[FrameRecord]
    root: Path
    format_version: int = FORMAT_VERSION

    @property
    def num_levels(self) -> int:
        return self.scene.num_levels

    @property
    def intrinsics(self) -> dict[str, float]:
        return {"width": self.scene.width, "height": self.scene.height, "focal": self.scene.focal}

    def frames_for(self, split: str, level: int | None = None) -> list[FrameRecord]:
        return [f for f in self.frames if f.split == split and (level is None or f.level == level)]

    def camera(self, frame: FrameRecord) -> Camera:
        return Camera(self.scene.width, self.scene.height, self.scene.focal,
                      np.asarray(frame.pose), frame.near, frame.far, frame.level)

    def background(self, level: int) -> np.ndarray:
        return np.asarray(self.scene.levels[level].background)

    def to_dict(self) -> dict[str, Any]:
        return {
            "format_version": self.format_version,
            "scene_name": self.scene.name,
            "seed": self.seed,
            "intrinsics": self.intrinsics,
            "scene": self.scene.to_dict(),
            "frames": [asdict(f) for f in self.frames],
        }

    def save(self, path: Path | None = None) -> Path:
        path = Path(path) if path is not None else self.root / MANIFEST_NAME
        path.write_text(json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n")
        return path


def load_manifest(path: Path) -> DatasetManifest:
    path = Path(path)
    if path.is_dir():
        path = path / MANIFEST_NAME
    if not path.exists():
        raise DatasetError(f"manifest not found: {path}")
    try:
        data = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise DatasetError(f"manifest is not valid JSON: {path} ({exc})") from None
    if data.get("format_version") != FORMAT_VERSION:
        raise DatasetError(f"unsupported manifest format_version {data.get('format_version')} in {path}")
    return DatasetManifest(
        scene=SceneSpec.from_dict(data["scene"]),
        seed=int(data["seed"]),
        frames=[FrameRecord(**f) for f in data["frames"]],
        root=path.parent,
        format_version=data["format_version"],
    )


def write_dataset(scene: SceneSpec, out_dir: Path, seed: int) -> DatasetManifest:
    """Render every level and split of ``scene`` into ``out_dir``; identical inputs give identical bytes."""
    scene.validate()
    out_dir = Path(out_dir)
    try:
        out_dir.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise DatasetError(f"cannot write dataset to {out_dir}: {exc}") from None

    rng = np.random.default_rng(seed)
    jobs: list[tuple[str, str, Camera]] = []
    for index, level in enumerate(scene.levels):
        for split, count in zip(SPLITS, level.counts):
            cameras = sample_poses(scene, index, rng, count)
            for k, camera in enumerate(cameras):
                jobs.append((f"L{index}_{split}_{k:03d}", split, camera))
            if index > 0 and cameras:
                enclosure = scene.levels[index - 1].enclosure
                if not np.all(enclosure.contains(np.stack([c.position for c in cameras]))):
                    raise SceneError(f"level {index} cameras escaped the enclosure of level {index - 1}")

    if jobs:
        (out_dir / "images").mkdir(exist_ok=True)
        (out_dir / "depth").mkdir(exist_ok=True)

    def render_frame(job: tuple[str, str, Camera]) -> FrameRecord:
        frame_id, split, camera = job
        image, depth = render_ground_truth(camera, scene)
        image_path = f"images/{frame_id}.ppm"
        depth_path = f"depth/{frame_id}.pfm"
        write_ppm(out_dir / image_path, image)
        write_pfm(out_dir / depth_path, depth)
        return FrameRecord(frame_id, image_path, depth_path, camera.pose.tolist(),
                           camera.level, split, camera.near, camera.far)

    frames = map_ordered(render_frame, jobs)
    manifest = DatasetManifest(scene, int(seed), frames, out_dir)
    manifest.save()
    logger.info("wrote %d frames of '%s' (%d levels) to %s", len(frames), scene.name, scene.num_levels, out_dir)
    return manifest


def regenerate(manifest: DatasetManifest, out_dir: Path) -> DatasetManifest:
    """Re-render a dataset from the scene and seed its manifest recorded."""
    return write_dataset(manifest.scene, out_dir, manifest.seed)


def verify_dataset(manifest: DatasetManifest) -> dict[str, int]:
    """Check files, split disjointness and per-level counts; returns frame counts keyed ``L{level}_{split}``."""
    seen: dict[str, str] = {}
    counts: dict[str, int] = {}
    for frame in manifest.frames:
        for rel in (frame.image, frame.depth):
            if not (manifest.root / rel).exists():
                raise DatasetError(f"missing dataset file: {manifest.root / rel}")
        if frame.frame_id in seen and seen[frame.frame_id] != frame.split:
            raise DatasetError(f"frame {frame.frame_id} appears in splits {seen[frame.frame_id]} and {frame.split}")
        if frame.frame_id in seen:
            raise DatasetError(f"duplicate frame id {frame.frame_id}")
        seen[frame.frame_id] = frame.split
        key = f"L{frame.level}_{frame.split}"
        counts[key] = counts.get(key, 0) + 1
    for index, level in enumerate(manifest.scene.levels):
        for split, expected in zip(SPLITS, level.counts):
            found = counts.get(f"L{index}_{split}", 0)
            if found != expected:
                raise DatasetError(f"level {index} split {split}: expected {expected} frames, found {found}")
    return counts


# ------------------------------------------------------------
# Presets
# ------------------------------------------------------------

def _cube_sphere_monkey_lite() -> SceneSpec:
    checker = Material("checker", (0.9, 0.9, 0.85), (0.25, 0.35, 0.6), checker_scale=0.25)
    gradient = Material("gradient", (0.9, 0.3, 0.2), (0.2, 0.7, 0.9), axis=2)
    return SceneSpec(
        name="cube-sphere-monkey-lite",
        levels=[
            LevelSpec([Primitive("box", scale=1.0, material=checker, hollow=True)],
                      PoseSampler("hemisphere", 4.0)),
            LevelSpec([Primitive("sphere", scale=0.3, material=gradient, hollow=True)],
                      PoseSampler("sphere", 0.8, elevation_min=-90.0, elevation_max=90.0),
                      background=(0.0, 0.0, 0.0)),
            LevelSpec([Primitive("sphere", scale=0.08, material=Material("flat", (0.85, 0.65, 0.1)))],
                      PoseSampler("sphere", 0.2, elevation_min=-90.0, elevation_max=90.0),
                      background=(0.0, 0.0, 0.0)),
        ],
    )


def _two_level() -> SceneSpec:
    checker = Material("checker", (0.95, 0.85, 0.6), (0.55, 0.35, 0.2), checker_scale=0.25)
    gradient = Material("gradient", (0.1, 0.6, 0.3), (0.9, 0.9, 0.2), axis=2)
    return SceneSpec(
        name="two-level",
        levels=[
            LevelSpec([Primitive("box", scale=1.0, material=checker, hollow=True)],
                      PoseSampler("hemisphere", 4.0)),
            LevelSpec([Primitive("sphere", scale=0.3, material=gradient)],
                      PoseSampler("sphere", 0.75, elevation_min=-90.0, elevation_max=90.0),
                      background=(0.0, 0.0, 0.0)),
        ],
    )


def _six_level() -> SceneSpec:
    radii = (2.4, 1.6, 1.05, 0.7, 0.45, 0.28)
    palette = [
        Material("checker", (0.9, 0.9, 0.9), (0.3, 0.3, 0.7), checker_scale=0.125),
        Material("gradient", (0.8, 0.2, 0.2), (0.2, 0.2, 0.8)),
        Material("checker", (0.2, 0.7, 0.3), (0.9, 0.8, 0.3), checker_scale=0.1),
        Material("gradient", (0.9, 0.6, 0.1), (0.1, 0.5, 0.6), axis=0),
        Material("checker", (0.7, 0.2, 0.6), (0.95, 0.95, 0.95), checker_scale=0.0625),
        Material("flat", (0.85, 0.75, 0.2)),
    ]
    levels = []
    for index, radius in enumerate(radii):
        innermost = index == len(radii) - 1
        prim = Primitive("sphere", scale=radius, material=palette[index], hollow=not innermost)
        if index == 0:
            sampler = PoseSampler("hemisphere", 5.0)
        else:
            sampler = PoseSampler("sphere", 0.5 * (radii[index - 1] + radius),
                                  elevation_min=-90.0, elevation_max=90.0)
        background = (1.0, 1.0, 1.0) if index == 0 else (0.0, 0.0, 0.0)
        levels.append(LevelSpec([prim], sampler, background=background))
    return SceneSpec(name="six-level", levels=levels)


PRESETS = {
    "cube-sphere-monkey-lite": _cube_sphere_monkey_lite,
    "two-level": _two_level,
    "six-level": _six_level,
}


def make_preset(name: str, resolution: int | None = None,
                counts: tuple[int, int, int] | None = None) -> SceneSpec:
    if name not in PRESETS:
        raise SceneError(f"unknown scene preset '{name}'; choose one of {', '.join(PRESETS)}")
    scene = PRESETS[name]()
    if resolution is not None:
        scene = scene.with_resolution(resolution)
    if counts is not None:
        scene = scene.with_counts(counts)
    scene.validate()
    return scene
