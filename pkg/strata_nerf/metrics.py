"""
Strata-NeRF - Evaluation Metrics
================================

PSNR, SSIM, level-wise evaluation reports and worst-case histograms.

Report files written by ``EvalReport.write``:

- ``frames.csv``: one row per frame (frame_id, level, psnr, ssim)
- ``summary.md``: per-level table, ``Level 0 .. Level n-1`` rows plus ``Total``
- ``hist_{metric}_L{level}.csv``: 16 uniform bins over the observed range
- ``hist_{metric}.png``: the same histograms, one panel per level
- ``codebook_usage_by_level.csv``: per-level code counts (codebook variants)
"""

from __future__ import annotations

import logging
import math
from collections.abc import Callable
from dataclasses import dataclass, field
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np
import pandas as pd
from scipy.signal import convolve2d

from .checkpoint import Checkpoint, load_checkpoint
from .errors import ShapeError, StrataError
from .field import make_field
from .image_io import read_ppm
from .parallel import map_ordered
from .rendering import RenderOptions, render_image
from .scenegen import DatasetManifest, FrameRecord
from .training import usage_histogram

logger = logging.getLogger(__name__)

PSNR_CAP = 99.0
HISTOGRAM_BINS = 16
METRICS = ("psnr", "ssim")


def _check_shapes(a: np.ndarray, b: np.ndarray, name: str) -> tuple[np.ndarray, np.ndarray]:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ShapeError(f"{name}: image shapes {list(a.shape)} and {list(b.shape)} differ")
    return a, b


def psnr(a: np.ndarray, b: np.ndarray) -> float:
    """Peak signal-to-noise ratio for images in [0, 1]; identical images give 99 dB."""
    a, b = _check_shapes(a, b, "psnr")
    mse = float(np.mean((a - b) ** 2))
    if mse == 0.0:
        return PSNR_CAP
    return min(PSNR_CAP, -10.0 * math.log10(mse))


def gaussian_window(size: int = 11, sigma: float = 1.5) -> np.ndarray:
    half = (size - 1) / 2.0
    y, x = np.mgrid[-half:half + 1, -half:half + 1]
    window = np.exp(-(x * x + y * y) / (2.0 * sigma * sigma))
    return window / window.sum()


def _ssim_gray(a: np.ndarray, b: np.ndarray, window: np.ndarray, c1: float, c2: float) -> float:
    if a.shape[0] < window.shape[0] or a.shape[1] < window.shape[1]:
        mu_a, mu_b = a.mean(), b.mean()
        var_a = np.mean((a - mu_a) ** 2)
        var_b = np.mean((b - mu_b) ** 2)
        cov = np.mean((a - mu_a) * (b - mu_b))
    else:
        def filt(x: np.ndarray) -> np.ndarray:
            return convolve2d(x, window, mode="valid")

        mu_a, mu_b = filt(a), filt(b)
        var_a = filt(a * a) - mu_a * mu_a
        var_b = filt(b * b) - mu_b * mu_b
        cov = filt(a * b) - mu_a * mu_b
    numerator = (2.0 * mu_a * mu_b + c1) * (2.0 * cov + c2)
    denominator = (mu_a * mu_a + mu_b * mu_b + c1) * (var_a + var_b + c2)
    return float(np.mean(numerator / denominator))


def ssim(a: np.ndarray, b: np.ndarray, window_size: int = 11, sigma: float = 1.5,
         k1: float = 0.01, k2: float = 0.03, data_range: float = 1.0, grayscale: bool = True) -> float:
    """Windowed SSIM with a Gaussian window.

    Colour images are reduced to the channel mean when ``grayscale`` is set,
    otherwise SSIM is averaged over channels. Images smaller than the window
    use global statistics.
    """
    a, b = _check_shapes(a, b, "ssim")
    window = gaussian_window(window_size, sigma)
    c1 = (k1 * data_range) ** 2
    c2 = (k2 * data_range) ** 2
    if a.ndim == 2:
        return _ssim_gray(a, b, window, c1, c2)
    if grayscale:
        return _ssim_gray(a.mean(axis=-1), b.mean(axis=-1), window, c1, c2)
    return float(np.mean([_ssim_gray(a[..., c], b[..., c], window, c1, c2) for c in range(a.shape[-1])]))


@dataclass
class EvalReport:
    frames: pd.DataFrame
    num_levels: int
    histograms: dict[tuple[str, int], tuple[np.ndarray, np.ndarray]] = field(default_factory=dict)
    codebook_usage: dict[int, np.ndarray] = field(default_factory=dict)

    @classmethod
    def from_records(cls, records: list[dict], num_levels: int,
                     codebook_usage: dict[int, np.ndarray] | None = None) -> "EvalReport":
        frames = pd.DataFrame(records, columns=["frame_id", "level", *METRICS])
        report = cls(frames, num_levels, codebook_usage=codebook_usage or {})
        for metric in METRICS:
            for level, group in frames.groupby("level"):
                counts, edges = np.histogram(group[metric].to_numpy(), bins=HISTOGRAM_BINS)
                report.histograms[(metric, int(level))] = (counts, edges)
        return report

    @property
    def per_level(self) -> pd.DataFrame:
        """``Level i`` rows for every level present plus a ``Total`` row."""
        rows = []
        for level in sorted(self.frames["level"].unique()):
            group = self.frames[self.frames["level"] == level]
            rows.append({"level": f"Level {int(level)}", "frames": len(group),
                         "psnr": group["psnr"].mean(), "ssim": group["ssim"].mean()})
        rows.append({"level": "Total", "frames": len(self.frames),
                     "psnr": self.frames["psnr"].mean(), "ssim": self.frames["ssim"].mean()})
        return pd.DataFrame(rows, columns=["level", "frames", *METRICS])

    @property
    def totals(self) -> dict[str, float]:
        total = self.per_level.iloc[-1]
        return {"frames": int(total["frames"]), "psnr": float(total["psnr"]), "ssim": float(total["ssim"])}

    def check_consistency(self) -> None:
        """Recompute level means and histogram counts from the per-frame records."""
        table = self.per_level
        for row in table.itertuples():
            group = self.frames if row.level == "Total" else \
                self.frames[self.frames["level"] == int(row.level.split()[1])]
            for metric in METRICS:
                if abs(getattr(row, metric) - float(np.mean(group[metric]))) > 1e-12:
                    raise StrataError(f"report mismatch for {row.level} {metric}")
        for (metric, level), (counts, _) in self.histograms.items():
            if counts.sum() != int((self.frames["level"] == level).sum()):
                raise StrataError(f"histogram {metric} level {level} does not cover every frame")

    def summary_markdown(self) -> str:
        return self.per_level.to_markdown(index=False, floatfmt=".4f")

    def write(self, out_dir: Path) -> None:
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        self.frames.to_csv(out_dir / "frames.csv", index=False)
        (out_dir / "summary.md").write_text(self.summary_markdown() + "\n")
        for (metric, level), (counts, edges) in sorted(self.histograms.items()):
            pd.DataFrame({"bin_lo": edges[:-1], "bin_hi": edges[1:], "count": counts}).to_csv(
                out_dir / f"hist_{metric}_L{level}.csv", index=False
            )
        for metric in METRICS:
            self._plot_histograms(metric, out_dir / f"hist_{metric}.png")
        if self.codebook_usage:
            rows = [
                {"level": level, "code": int(code), "count": int(usage[code])}
                for level, usage in sorted(self.codebook_usage.items())
                for code in np.nonzero(usage)[0]
            ]
            pd.DataFrame(rows, columns=["level", "code", "count"]).to_csv(
                out_dir / "codebook_usage_by_level.csv", index=False
            )

    def _plot_histograms(self, metric: str, path: Path) -> None:
        levels = sorted(level for (m, level) in self.histograms if m == metric)
        if not levels:
            return
        fig, axes = plt.subplots(1, len(levels), figsize=(4 * len(levels), 3), squeeze=False)
        for ax, level in zip(axes[0], levels):
            counts, edges = self.histograms[(metric, level)]
            ax.bar(edges[:-1], counts, width=np.diff(edges), align="edge", edgecolor="black")
            ax.set_title(f"Level {level}")
            ax.set_xlabel(metric.upper())
            ax.set_ylabel("frames")
        fig.tight_layout()
        fig.savefig(path, dpi=100)
        plt.close(fig)


RenderFn = Callable[[FrameRecord], np.ndarray]


def evaluate(checkpoint: Checkpoint | Path, manifest: DatasetManifest, split: str = "test",
             level: int | None = None, options: RenderOptions | None = None,
             render_fn: RenderFn | None = None, ssim_grayscale: bool = True) -> EvalReport:
    """Render every frame of ``split`` and score it against ground truth.

    ``render_fn`` replaces the model renderer (used for self-comparison).
    """
    if not isinstance(checkpoint, Checkpoint):
        checkpoint = load_checkpoint(checkpoint)
    checkpoint.check_levels(manifest.num_levels)
    frames = manifest.frames_for(split, level)
    field_fn = make_field(checkpoint.params, checkpoint.config)
    config = checkpoint.config

    def score(frame: FrameRecord) -> tuple[dict, np.ndarray | None]:
        truth = read_ppm(manifest.root / frame.image)
        usage = None
        if render_fn is not None:
            image = render_fn(frame)
        else:
            collected: list = []
            image, _ = render_image(manifest.camera(frame), field_fn, manifest.background(frame.level),
                                    options, collect=collected)
            usage = usage_histogram(collected, config)
        image = np.round(np.clip(image, 0.0, 1.0) * 255.0) / 255.0
        record = {"frame_id": frame.frame_id, "level": frame.level,
                  "psnr": psnr(image, truth), "ssim": ssim(image, truth, grayscale=ssim_grayscale)}
        return record, usage

    results = map_ordered(score, frames)
    usage_by_level: dict[int, np.ndarray] = {}
    for frame, (_, usage) in zip(frames, results):
        if usage is not None:
            usage_by_level[frame.level] = usage_by_level.get(frame.level, 0) + usage
    report = EvalReport.from_records([r for r, _ in results], manifest.num_levels, usage_by_level)
    report.check_consistency()
    logger.info("evaluated %d %s frames: psnr %.3f ssim %.4f", len(frames), split,
                report.totals["psnr"], report.totals["ssim"])
    return report
