"""
Strata-NeRF - Run Configuration
===============================

Flat JSON config files merged over typed defaults.

Every key belongs to exactly one section:

- ``ModelConfig`` (field.py): variant, codebook_size, latent_dim, ...
- ``TrainConfig`` (training.py): iterations, rays_per_batch, lr_init, seed, ...
- ``SceneOptions``: preset, resolution and per-split view counts for ``gen``
- ``EvalOptions``: split/level filters, SSIM mode, orbit and ablation settings

Precedence is defaults <- file <- flags. The resolved config is written as
``run_config.json`` next to every run's outputs; feeding that file back with
``--config`` reproduces the run.
"""

from __future__ import annotations

import difflib
import json
import logging
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path
from typing import Any

from .errors import ConfigError
from .field import VARIANTS, ModelConfig
from .scenegen import PRESETS
from .training import TrainConfig

logger = logging.getLogger(__name__)

RUN_CONFIG_NAME = "run_config.json"
DEFAULT_VIEWS = (30, 15, 15)


@dataclass
class SceneOptions:
    preset: str = "two-level"
    resolution: int = 200
    train_views: int | None = None
    val_views: int | None = None
    test_views: int | None = None

    def __post_init__(self) -> None:
        if self.preset not in PRESETS:
            raise ConfigError(f"preset must be one of {', '.join(PRESETS)}; got '{self.preset}'")
        if self.resolution < 1:
            raise ConfigError(f"resolution must be >= 1, got {self.resolution}")
        for name in ("train_views", "val_views", "test_views"):
            value = getattr(self, name)
            if value is not None and value < 0:
                raise ConfigError(f"{name} must be >= 0, got {value}")

    @property
    def counts(self) -> tuple[int, int, int] | None:
        views = (self.train_views, self.val_views, self.test_views)
        if all(v is None for v in views):
            return None
        return tuple(d if v is None else v for v, d in zip(views, DEFAULT_VIEWS))


@dataclass
class EvalOptions:
    split: str = "test"
    level: int | None = None
    ssim_grayscale: bool = True
    orbit_views: int = 60
    orbit_elevation: float | None = None
    ablate_variants: list[str] = field(default_factory=lambda: ["baseline", "full", "D1", "D2", "D3", "D4_vae"])
    ablate_codebook_sizes: list[int] = field(default_factory=lambda: [512, 1024, 4096])

    def __post_init__(self) -> None:
        if self.split not in ("train", "val", "test"):
            raise ConfigError(f"split must be train, val or test; got '{self.split}'")
        if self.level is not None and self.level < 0:
            raise ConfigError(f"level must be >= 0, got {self.level}")
        unknown = [v for v in self.ablate_variants if v not in VARIANTS]
        if unknown:
            raise ConfigError(f"unknown ablation variants {unknown}; expected a subset of {list(VARIANTS)}")
        if any(size < 1 for size in self.ablate_codebook_sizes):
            raise ConfigError("ablate_codebook_sizes must be positive")
        self.ablate_variants = list(self.ablate_variants)
        self.ablate_codebook_sizes = [int(s) for s in self.ablate_codebook_sizes]


_SECTIONS = {
    "model": ModelConfig,
    "train": TrainConfig,
    "scene": SceneOptions,
    "eval": EvalOptions,
}


def _section_keys() -> dict[str, str]:
    """Map every flat key to its section name."""
    owners: dict[str, str] = {}
    for section, cls in _SECTIONS.items():
        for f in fields(cls):
            if section == "train" and f.name == "model":
                continue
            owners[f.name] = section
    return owners


VALID_KEYS = _section_keys()


@dataclass
class RunConfig:
    model: ModelConfig = field(default_factory=ModelConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    scene: SceneOptions = field(default_factory=SceneOptions)
    eval: EvalOptions = field(default_factory=EvalOptions)

    def __post_init__(self) -> None:
        self.train = replace(self.train, model=self.model)

    @property
    def seed(self) -> int:
        return self.train.seed

    def to_dict(self) -> dict[str, Any]:
        flat: dict[str, Any] = {}
        for section in _SECTIONS:
            values = asdict(getattr(self, section))
            values.pop("model", None)
            flat.update(values)
        return flat

    def with_overrides(self, overrides: dict[str, Any]) -> "RunConfig":
        return build_run_config({**self.to_dict(), **_drop_none(overrides)})

    def write(self, out_dir: Path) -> Path:
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        path = out_dir / RUN_CONFIG_NAME
        path.write_text(json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n")
        return path


def _drop_none(overrides: dict[str, Any] | None) -> dict[str, Any]:
    return {k: v for k, v in (overrides or {}).items() if v is not None}


def check_keys(keys: Any, source: str) -> None:
    for key in keys:
        if key in VALID_KEYS:
            continue
        close = difflib.get_close_matches(key, list(VALID_KEYS), n=1)
        hint = f"; did you mean '{close[0]}'?" if close else ""
        raise ConfigError(f"unknown config key '{key}' in {source}{hint}")


def build_run_config(flat: dict[str, Any]) -> RunConfig:
    """Construct every section from a flat key/value mapping."""
    check_keys(flat, "config")
    grouped: dict[str, dict[str, Any]] = {name: {} for name in _SECTIONS}
    for key, value in flat.items():
        grouped[VALID_KEYS[key]][key] = value
    try:
        model = ModelConfig(**grouped["model"])
        return RunConfig(
            model=model,
            train=TrainConfig(**grouped["train"], model=model),
            scene=SceneOptions(**grouped["scene"]),
            eval=EvalOptions(**grouped["eval"]),
        )
    except TypeError as exc:
        raise ConfigError(f"invalid config value: {exc}") from None


def load_config_file(path: Path) -> dict[str, Any]:
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"config file not found: {path}")
    text = path.read_text().strip()
    if not text:
        return {}
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config file {path} is not valid JSON: {exc}") from None
    if not isinstance(data, dict):
        raise ConfigError(f"config file {path} must hold a JSON object")
    check_keys(data, str(path))
    return data


def parse_config(path: Path | None = None, overrides: dict[str, Any] | None = None) -> RunConfig:
    """Resolve defaults <- file <- overrides; ``None`` override values are ignored."""
    overrides = _drop_none(overrides)
    check_keys(overrides, "flags")
    flat = load_config_file(path) if path is not None else {}
    flat.update(overrides)
    config = build_run_config(flat)
    logger.info("resolved config: %s", json.dumps(config.to_dict(), sort_keys=True))
    return config
