"""Image decoding/encoding: 8-bit RGB PNG and PPM only.

PNG is the canonical raster format (lossless, so blur experiments are not
confounded by compression).  Saliency maps render to grayscale PNGs mapping
[0, max] to [0, 255]; the raw CSV is always the canonical artifact.
"""

from __future__ import annotations

import numpy as np
from PIL import Image, UnidentifiedImageError

from .errors import ImageFormatError

_SUPPORTED = ("PNG", "PPM")


def load_image(path) -> np.ndarray:
    """Decode an 8-bit RGB PNG/PPM into a (3,H,W) float32 tensor in [0, 1]."""
    try:
        with Image.open(path) as img:
            if img.format not in _SUPPORTED:
                raise ImageFormatError(
                    f"{path}: unsupported format {img.format!r}, expected PNG or PPM"
                )
            if img.mode != "RGB":
                raise ImageFormatError(
                    f"{path}: unsupported mode {img.mode!r}, expected 8-bit RGB"
                )
            arr = np.asarray(img, dtype=np.uint8)
    except UnidentifiedImageError as exc:
        raise ImageFormatError(f"{path}: not a decodable image") from exc
    except OSError as exc:
        raise ImageFormatError(f"{path}: cannot read image: {exc}") from exc
    return (arr.astype(np.float32) / 255.0).transpose(2, 0, 1)


def save_image(path, image: np.ndarray) -> None:
    """Encode a (3,H,W) float tensor in [0, 1] as an 8-bit RGB PNG."""
    if image.ndim != 3 or image.shape[0] != 3:
        raise ImageFormatError(f"expected a (3,H,W) tensor, got {image.shape}")
    arr = np.clip(np.rint(np.asarray(image, dtype=np.float64) * 255.0), 0, 255)
    Image.fromarray(arr.astype(np.uint8).transpose(1, 2, 0), mode="RGB").save(
        path, format="PNG"
    )


def save_map_png(path, map2d: np.ndarray) -> None:
    """Render a non-negative map to a grayscale PNG scaled by its maximum."""
    m = np.asarray(map2d, dtype=np.float64)
    top = m.max()
    scaled = m / top if top > 0 else m
    gray = np.clip(np.rint(scaled * 255.0), 0, 255).astype(np.uint8)
    Image.fromarray(gray, mode="L").save(path, format="PNG")


def save_map_csv(path, map2d: np.ndarray) -> None:
    """Write a map as H rows of W comma-separated floats (the canonical artifact)."""
    np.savetxt(path, np.asarray(map2d), delimiter=",", fmt="%.8g")


def load_map_csv(path) -> np.ndarray:
    return np.loadtxt(path, delimiter=",", dtype=np.float64)
