"""Input preprocessing: shorter-edge resize, center crop, channel normalization."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, ShapeMismatchError
from .saliency import resize_bilinear


@dataclass(frozen=True)
class PreprocessConfig:
    """Target input size, per-channel statistics, and the shorter-edge resize size."""

    target: tuple[int, int] = (64, 64)
    mean: tuple[float, float, float] = (0.5, 0.5, 0.5)
    std: tuple[float, float, float] = (0.25, 0.25, 0.25)
    resize_shorter: int = 64

    def __post_init__(self):
        if any(s <= 0 for s in self.std):
            raise ConfigError(f"std components must be > 0, got {self.std}")
        if self.resize_shorter < max(self.target):
            raise ConfigError(
                f"resize_shorter {self.resize_shorter} smaller than target {self.target}"
            )


def crop_to_input(image: np.ndarray, cfg: PreprocessConfig) -> np.ndarray:
    """Resize so the shorter edge matches, then center-crop to the target size."""
    if image.ndim != 3 or image.shape[0] != 3:
        raise ShapeMismatchError(f"expected a (3,H,W) image, got {image.shape}")
    _, h, w = image.shape
    s = cfg.resize_shorter
    if h <= w:
        nh, nw = s, max(1, round(w * s / h))
    else:
        nh, nw = max(1, round(h * s / w)), s
    if (nh, nw) != (h, w):
        image = np.stack([resize_bilinear(c, (nh, nw)) for c in image])
    th, tw = cfg.target
    top = (nh - th) // 2
    left = (nw - tw) // 2
    return np.ascontiguousarray(image[:, top : top + th, left : left + tw]).astype(
        np.float32
    )


def normalize_channels(image: np.ndarray, cfg: PreprocessConfig) -> np.ndarray:
    """Subtract the per-channel mean and divide by the per-channel std."""
    mean = np.asarray(cfg.mean, dtype=np.float32)[:, None, None]
    std = np.asarray(cfg.std, dtype=np.float32)[:, None, None]
    return ((image - mean) / std).astype(np.float32)


def preprocess(image: np.ndarray, cfg: PreprocessConfig) -> np.ndarray:
    """Full input pipeline: spatial crop plus channel normalization."""
    return normalize_channels(crop_to_input(image, cfg), cfg)
