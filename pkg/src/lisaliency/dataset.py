"""Shapes-on-scenes corpus: synthetic labeled images with ground-truth boxes.

Eight object classes (geometric sprites, each with its own color/texture)
composited onto four background families at 64x64.  Every class has a "home"
background family (class index mod 4): the train and test splits draw the
home family 70% of the time, while the adversarial split always uses a
mismatched family, standing in for natural images whose background conflicts
with training-time statistics.

Dataset directory layout per split::

    <root>/<split>/images/*.png
    <root>/<split>/labels.csv      # filename,label,box_x,box_y,box_w,box_h

Generation is fully seeded; the same seed writes a byte-identical corpus.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import DatasetError
from .imageio import load_image, save_image
from .preprocess import PreprocessConfig, preprocess

IMAGE_SIZE = 64
CLASS_NAMES = ("circle", "square", "triangle", "ring", "plus", "diamond",
               "bars", "cross")
N_BACKGROUNDS = 4
HOME_BACKGROUND_PROB = 0.7
DEFAULT_COUNTS = {"train": 512, "test": 256, "adversarial": 256}


@dataclass
class LabeledSample:
    image_id: str
    image: np.ndarray          # (3,H,W) float32 in [0,1]
    label: int
    box: tuple[int, int, int, int]  # x, y, w, h


# ------------------------------------------------------------ sprite shapes

def _shape_mask(cls: int, s: int) -> np.ndarray:
    yy, xx = np.mgrid[0:s, 0:s].astype(np.float64)
    c = (s - 1) / 2.0
    if cls == 0:      # circle
        return (yy - c) ** 2 + (xx - c) ** 2 <= (0.48 * s) ** 2
    if cls == 1:      # square
        return np.ones((s, s), dtype=bool)
    if cls == 2:      # triangle, apex up
        return np.abs(xx - c) <= (yy / max(s - 1, 1)) * c
    if cls == 3:      # ring
        d2 = (yy - c) ** 2 + (xx - c) ** 2
        return (d2 <= (0.48 * s) ** 2) & (d2 >= (0.26 * s) ** 2)
    if cls == 4:      # plus
        t = 0.18 * s
        return (np.abs(xx - c) <= t) | (np.abs(yy - c) <= t)
    if cls == 5:      # diamond
        return np.abs(xx - c) + np.abs(yy - c) <= c
    if cls == 6:      # two vertical bars
        return ((xx >= 0.08 * s) & (xx <= 0.36 * s)) | ((xx >= 0.64 * s) & (xx <= 0.92 * s))
    if cls == 7:      # diagonal cross
        t = 0.16 * s
        return (np.abs(xx - yy) <= t) | (np.abs(xx + yy - (s - 1)) <= t)
    raise DatasetError(f"unknown class {cls}")


_BASE_COLORS = np.array([
    (0.85, 0.15, 0.15),   # circle: red
    (0.90, 0.55, 0.10),   # square: orange checker
    (0.15, 0.75, 0.20),   # triangle: green
    (0.15, 0.30, 0.90),   # ring: blue
    (0.95, 0.90, 0.20),   # plus: yellow stripes
    (0.60, 0.20, 0.80),   # diamond: purple dots
    (0.10, 0.80, 0.85),   # bars: cyan
    (0.90, 0.15, 0.70),   # cross: magenta
])


def _sprite_texture(cls: int, s: int, rng: np.random.Generator) -> np.ndarray:
    base = np.clip(_BASE_COLORS[cls] + rng.uniform(-0.08, 0.08, 3), 0.05, 1.0)
    tex = np.ones((s, s, 3)) * base
    yy, xx = np.mgrid[0:s, 0:s]
    if cls == 1:      # 4px checker
        alt = np.clip(base + 0.35, 0.0, 1.0)
        tex[((yy // 4) + (xx // 4)) % 2 == 1] = alt
    elif cls == 4:    # 3px horizontal stripes
        dark = np.clip(base - 0.5, 0.0, 1.0)
        tex[(yy // 3) % 2 == 1] = dark
    elif cls == 5:    # dot grid
        dots = ((yy % 6 < 2) & (xx % 6 < 2))
        tex[dots] = (0.95, 0.95, 0.95)
    return tex


# ------------------------------------------------------------- backgrounds

def _background(family: int, size: int, rng: np.random.Generator) -> np.ndarray:
    def muted():
        return rng.uniform(0.25, 0.55, 3)

    c1, c2 = muted(), muted()
    if family == 0:   # vertical gradient
        t = np.linspace(0, 1, size)[:, None, None]
        return np.broadcast_to((1 - t) * c1 + t * c2, (size, size, 3)).copy()
    if family == 1:   # horizontal stripes, width 8
        rows = (np.arange(size) // 8) % 2
        return np.broadcast_to(
            np.where(rows[:, None, None] == 0, c1, c2), (size, size, 3)
        ).copy()
    if family == 2:   # 8px checkerboard
        yy, xx = np.mgrid[0:size, 0:size]
        cells = ((yy // 8) + (xx // 8)) % 2
        return np.where(cells[:, :, None] == 0, c1, c2)
    if family == 3:   # smooth blobs from an upsampled coarse grid
        coarse = rng.uniform(0.25, 0.55, (4, 4, 3))
        from .saliency import resize_bilinear
        return np.stack(
            [resize_bilinear(coarse[:, :, ch], (size, size)) for ch in range(3)],
            axis=-1,
        )
    raise DatasetError(f"unknown background family {family}")


def _pick_family(label: int, split: str, rng: np.random.Generator) -> int:
    home = label % N_BACKGROUNDS
    others = [f for f in range(N_BACKGROUNDS) if f != home]
    if split == "adversarial":
        return int(rng.choice(others))
    if rng.random() < HOME_BACKGROUND_PROB:
        return home
    return int(rng.choice(others))


def render_sample(label: int, split: str, rng: np.random.Generator):
    """One composited image plus the sprite's tight bounding box."""
    size = IMAGE_SIZE
    canvas = _background(_pick_family(label, split, rng), size, rng)
    s = int(rng.integers(24, 41))
    mask = _shape_mask(label, s)
    tex = _sprite_texture(label, s, rng)
    y0 = int(rng.integers(2, size - s - 1))
    x0 = int(rng.integers(2, size - s - 1))
    region = canvas[y0 : y0 + s, x0 : x0 + s]
    canvas[y0 : y0 + s, x0 : x0 + s] = np.where(mask[:, :, None], tex, region)

    rows = np.flatnonzero(mask.any(axis=1))
    cols = np.flatnonzero(mask.any(axis=0))
    box = (x0 + int(cols[0]), y0 + int(rows[0]),
           int(cols[-1] - cols[0] + 1), int(rows[-1] - rows[0] + 1))

    canvas = np.clip(canvas + rng.normal(0.0, 0.015, canvas.shape), 0.0, 1.0)
    return canvas.transpose(2, 0, 1).astype(np.float32), box


def generate_dataset(out_dir, seed: int, counts: dict[str, int] | None = None) -> dict:
    """Write the corpus to disk; returns per-split image counts.

    Class assignment cycles through the eight classes, so per-split class
    balance is within one image.
    """
    counts = dict(DEFAULT_COUNTS if counts is None else counts)
    root = Path(out_dir)
    rng = np.random.default_rng(seed)
    written = {}
    for split in ("train", "test", "adversarial"):
        n = counts.get(split, 0)
        if n <= 0:
            continue
        img_dir = root / split / "images"
        img_dir.mkdir(parents=True, exist_ok=True)
        rows = []
        for i in range(n):
            label = i % len(CLASS_NAMES)
            image, box = render_sample(label, split, rng)
            name = f"{split}_{i:05d}.png"
            save_image(img_dir / name, image)
            rows.append((name, label, *box))
        with open(root / split / "labels.csv", "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["filename", "label", "box_x", "box_y", "box_w", "box_h"])
            writer.writerows(rows)
        written[split] = n
    return written


def load_labeled_dir(split_dir) -> list[LabeledSample]:
    """Load one split (images plus labels.csv) into memory."""
    split_dir = Path(split_dir)
    labels_path = split_dir / "labels.csv"
    if not labels_path.exists():
        raise DatasetError(f"{split_dir} has no labels.csv")
    samples = []
    with open(labels_path, newline="") as fh:
        for row in csv.DictReader(fh):
            try:
                label = int(row["label"])
                box = (int(row["box_x"]), int(row["box_y"]),
                       int(row["box_w"]), int(row["box_h"]))
                name = row["filename"]
            except (KeyError, TypeError, ValueError) as exc:
                raise DatasetError(f"{labels_path}: malformed row {row}") from exc
            samples.append(LabeledSample(
                name, load_image(split_dir / "images" / name), label, box
            ))
    if not samples:
        raise DatasetError(f"{labels_path} lists no images")
    return samples


def load_arrays(split_dir, cfg: PreprocessConfig):
    """Preprocessed (N,3,H,W) images plus label vector for one split."""
    samples = load_labeled_dir(split_dir)
    images = np.stack([preprocess(s.image, cfg) for s in samples])
    labels = np.array([s.label for s in samples], dtype=np.int64)
    return images, labels
