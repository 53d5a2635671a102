"""Disparity map files: 16-bit PNG, flat binary, and colormapped previews."""

from __future__ import annotations

from pathlib import Path

import numpy as np
from PIL import Image

from .checkpoint import load_tensors, save_tensors

PNG_SCALE = 256.0   # stored value = round(disparity * 256); 0 marks invalid


def save_disparity_png16(path, disparity: np.ndarray,
                         valid: np.ndarray | None = None) -> None:
    disparity = np.asarray(disparity, dtype=np.float64)
    encoded = np.round(disparity * PNG_SCALE)
    encoded = np.clip(encoded, 0, 65535).astype(np.uint16)
    if valid is not None:
        encoded = np.where(np.asarray(valid, dtype=bool), encoded, 0)
    Image.fromarray(encoded, mode="I;16").save(Path(path))


def load_disparity_png16(path) -> tuple[np.ndarray, np.ndarray]:
    """Returns (disparity, valid); stored zeros decode as invalid pixels."""
    encoded = np.asarray(Image.open(Path(path)), dtype=np.uint16)
    valid = encoded != 0
    return encoded.astype(np.float64) / PNG_SCALE, valid


def save_disparity_binary(path, disparity: np.ndarray) -> None:
    save_tensors(path, {"disparity": np.asarray(disparity, dtype=np.float32)})


def load_disparity_binary(path) -> np.ndarray:
    return load_tensors(path)["disparity"].astype(np.float64)


def save_colormapped_png(path, disparity: np.ndarray, max_value: float,
                         cmap_name: str = "magma") -> None:
    """8-bit color preview of a disparity map, normalized by ``max_value``."""
    import matplotlib
    cmap = matplotlib.colormaps[cmap_name]
    norm = np.clip(np.asarray(disparity, dtype=np.float64) / max(max_value, 1e-9),
                   0.0, 1.0)
    rgb = (cmap(norm)[..., :3] * 255.0).round().astype(np.uint8)
    Image.fromarray(rgb, mode="RGB").save(Path(path))
