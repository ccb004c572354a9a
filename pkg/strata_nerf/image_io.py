"""
Strata-NeRF - Image Files
=========================

Binary PPM (P6, maxval 255) colour images through Pillow and single-channel
PFM depth maps (little-endian, scale -1.0, rows stored bottom to top).
Missing depth (no hit) is stored as 0.
"""

from __future__ import annotations

from pathlib import Path

import numpy as np
from PIL import Image

from .errors import DatasetError


def to_uint8(image: np.ndarray) -> np.ndarray:
    return np.round(np.clip(np.asarray(image, dtype=np.float64), 0.0, 1.0) * 255.0).astype(np.uint8)


def write_ppm(path: Path, image: np.ndarray) -> None:
    Image.fromarray(to_uint8(image)).save(Path(path), format="PPM")


def read_ppm(path: Path) -> np.ndarray:
    path = Path(path)
    if not path.exists():
        raise DatasetError(f"image not found: {path}")
    with Image.open(path) as img:
        return np.asarray(img.convert("RGB"), dtype=np.float64) / 255.0


def write_pfm(path: Path, depth: np.ndarray) -> None:
    depth = np.asarray(depth, dtype=np.float64)
    depth = np.where(np.isfinite(depth), depth, 0.0)
    height, width = depth.shape
    header = f"Pf\n{width} {height}\n-1.0\n".encode("ascii")
    payload = np.flipud(depth).astype("<f4").tobytes()
    Path(path).write_bytes(header + payload)


def read_pfm(path: Path) -> np.ndarray:
    path = Path(path)
    if not path.exists():
        raise DatasetError(f"depth map not found: {path}")
    raw = path.read_bytes()
    parts = raw.split(b"\n", 3)
    if len(parts) < 4 or parts[0] != b"Pf":
        raise DatasetError(f"not a single-channel PFM file: {path}")
    width, height = (int(v) for v in parts[1].split())
    scale = float(parts[2])
    dtype = "<f4" if scale < 0 else ">f4"
    data = np.frombuffer(parts[3], dtype=dtype, count=width * height)
    return np.flipud(data.reshape(height, width)).astype(np.float64)
