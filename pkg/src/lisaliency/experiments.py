"""Background-influence experiments: masked Gaussian blur plus accuracy deltas.

For every image the saliency mask is computed once, from the unblurred
image, and reused across all blur radii.  Variants are the original plus
background-blurred and foreground-blurred images at each radius; each variant
is classified and top-1/top-5 accuracies aggregated.  The report also lists
the per-image "flips": images the classifier got wrong originally but right
once the background was blurred, which is the raw material for analyzing by
hand how backgrounds mislead the model.

Gaussian semantics are pinned here: sigma equals the radius, kernel half
width ceil(3*sigma), clamp-to-edge borders, separable implementation.
"""

from __future__ import annotations

import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, DatasetError, ShapeMismatchError
from .dataset import LabeledSample
from .inhibition import LIParams
from .network import NetworkSpec, NetworkWeights, TAP_AFTER, forward, top_k_indices
from .preprocess import PreprocessConfig, crop_to_input, normalize_channels
from .saliency import SaliencyMap, saliency_map

REGIONS = ("background", "foreground")
THREADS_ENV = "LISALIENCY_THREADS"


@dataclass(frozen=True)
class BlurConfig:
    """Blur radii and the relative mask threshold t (mask = map >= t * max)."""

    radii: tuple[float, ...] = (2.0, 5.0, 10.0)
    threshold: float = 0.1

    def __post_init__(self):
        if any(r < 0 for r in self.radii):
            raise ConfigError(f"radii must be >= 0, got {self.radii}")
        if not 0.0 < self.threshold < 1.0:
            raise ConfigError(f"threshold must be in (0,1), got {self.threshold}")


@dataclass(frozen=True)
class VariantAccuracy:
    variant: str
    region: str          # "none" for the original
    radius: float
    top1: float
    top5: float
    count: int


@dataclass(frozen=True)
class PredictionRecord:
    image_id: str
    variant: str
    top5_classes: tuple[int, ...]
    top5_probs: tuple[float, ...]


@dataclass(frozen=True)
class FlipRecord:
    image_id: str
    radius: float
    original_top1: int
    blurred_top1: int
    label: int


@dataclass
class AccuracyReport:
    variants: list[VariantAccuracy]
    per_image: list[PredictionRecord]
    flips: list[FlipRecord]
    mask_area_fractions: list[float] = field(default_factory=list)


def gaussian_kernel(radius: float) -> np.ndarray:
    """Normalized 1-D Gaussian taps with sigma=radius, half width ceil(3*sigma)."""
    sigma = float(radius)
    half = math.ceil(3.0 * sigma)
    xs = np.arange(-half, half + 1, dtype=np.float64)
    kern = np.exp(-(xs ** 2) / (2.0 * sigma * sigma))
    return kern / kern.sum()


def gaussian_blur(image: np.ndarray, radius: float) -> np.ndarray:
    """Per-channel separable Gaussian blur; radius 0 returns the image unchanged."""
    if image.ndim != 3:
        raise ShapeMismatchError(f"expected a (C,H,W) image, got {image.shape}")
    if radius < 0:
        raise ConfigError(f"blur radius must be >= 0, got {radius}")
    if radius == 0:
        return image.copy()
    kern = gaussian_kernel(radius)
    half = (len(kern) - 1) // 2
    c, h, w = image.shape
    work = np.asarray(image, dtype=np.float64)

    padded = np.pad(work, ((0, 0), (0, 0), (half, half)), mode="edge")
    horiz = np.zeros_like(work)
    for i, kv in enumerate(kern):
        horiz += kv * padded[:, :, i : i + w]
    padded = np.pad(horiz, ((0, 0), (half, half), (0, 0)), mode="edge")
    out = np.zeros_like(work)
    for i, kv in enumerate(kern):
        out += kv * padded[:, i : i + h, :]
    return out.astype(image.dtype, copy=False)


def saliency_to_mask(smap, threshold: float):
    """Binarize a saliency map at threshold * max.

    Accepts a SaliencyMap or a raw 2-D array; returns ``(mask, degenerate)``.
    Degenerate (all ~zero) maps give an all-zero mask.
    """
    if not 0.0 < threshold < 1.0:
        raise ConfigError(f"threshold must be in (0,1), got {threshold}")
    values = smap.values if isinstance(smap, SaliencyMap) else np.asarray(smap)
    flagged = isinstance(smap, SaliencyMap) and smap.degenerate
    top = float(values.max()) if values.size else 0.0
    if flagged or top < 1e-12:
        return np.zeros_like(values, dtype=np.float32), True
    return (values >= threshold * top).astype(np.float32), False


def blend_blur(image: np.ndarray, mask: np.ndarray, radius: float,
               region: str = "background") -> np.ndarray:
    """Blur one region of the image, hard boundary, composed in image space.

    ``background`` keeps mask==1 pixels sharp and blurs the rest;
    ``foreground`` swaps the roles.
    """
    if region not in REGIONS:
        raise ConfigError(f"region must be one of {REGIONS}, got {region!r}")
    if image.ndim != 3 or mask.shape != image.shape[1:]:
        raise ShapeMismatchError(
            f"mask shape {mask.shape} does not match image {image.shape}"
        )
    blurred = gaussian_blur(image, radius)
    keep_sharp = mask[None] >= 0.5
    if region == "foreground":
        keep_sharp = ~keep_sharp
    return np.where(keep_sharp, image, blurred)


def resolve_threads(requested: int | None = None) -> int:
    """Worker count: explicit argument, else LISALIENCY_THREADS (0 = auto)."""
    if requested is None:
        raw = os.environ.get(THREADS_ENV, "0")
        try:
            requested = int(raw)
        except ValueError:
            raise ConfigError(f"{THREADS_ENV} must be an integer, got {raw!r}")
    if requested < 0:
        raise ConfigError("thread count must be >= 0")
    if requested == 0:
        return min(os.cpu_count() or 1, 8)
    return requested


def variant_name(region: str, radius: float) -> str:
    return f"{region}_r{radius:g}"


def run_blur_experiment(spec: NetworkSpec, weights: NetworkWeights,
                        samples: list[LabeledSample], blur: BlurConfig,
                        pre: PreprocessConfig, params: LIParams = LIParams(),
                        tap: str = TAP_AFTER, li_source: str = "gradient",
                        spatial_layers_only: bool = True,
                        classifier=None, saliency_fn=None,
                        threads: int | None = None) -> AccuracyReport:
    """Classify every image under original/background-blur/foreground-blur variants.

    The saliency map never sees ground truth.  ``classifier`` and
    ``saliency_fn`` exist so tests can substitute stubs; both default to the
    real network.
    """
    if not samples:
        raise DatasetError("blur experiment needs a nonempty dataset")
    if classifier is None:
        classifier = lambda net_input: forward(spec, weights, net_input)
    if saliency_fn is None:
        saliency_fn = lambda net_input: saliency_map(
            spec, weights, net_input, params, tap, li_source, spatial_layers_only
        )
    variants = [("original", None, 0.0)] + [
        (variant_name(region, r), region, float(r))
        for r in blur.radii for region in REGIONS
    ]

    def work(sample: LabeledSample):
        cropped = crop_to_input(sample.image, pre)
        smap = saliency_fn(normalize_channels(cropped, pre))
        mask, _ = saliency_to_mask(smap, blur.threshold)
        preds = {}
        for name, region, radius in variants:
            img = cropped if region is None else blend_blur(cropped, mask,
                                                            radius, region)
            probs = classifier(normalize_channels(img, pre))
            top5 = top_k_indices(probs, min(5, len(probs)))
            preds[name] = (top5, tuple(float(probs[i]) for i in top5))
        return preds, float(mask.mean())

    n_workers = resolve_threads(threads)
    if n_workers > 1 and len(samples) > 1:
        with ThreadPoolExecutor(max_workers=n_workers) as pool:
            results = list(pool.map(work, samples))
    else:
        results = [work(s) for s in samples]

    per_image = []
    flips = []
    hits1 = {name: 0 for name, _, _ in variants}
    hits5 = {name: 0 for name, _, _ in variants}
    for sample, (preds, _) in zip(samples, results):
        original_top1 = preds["original"][0][0]
        for name, _, _ in variants:
            top5, probs = preds[name]
            per_image.append(PredictionRecord(sample.image_id, name, top5, probs))
            hits1[name] += top5[0] == sample.label
            hits5[name] += sample.label in top5
        for r in blur.radii:
            bg_top1 = preds[variant_name("background", r)][0][0]
            if original_top1 != sample.label and bg_top1 == sample.label:
                flips.append(FlipRecord(sample.image_id, r, original_top1,
                                        bg_top1, sample.label))

    n = len(samples)
    rows = [VariantAccuracy("original", "none", 0.0,
                            hits1["original"] / n, hits5["original"] / n, n)]
    for r in blur.radii:
        for region in REGIONS:
            name = variant_name(region, r)
            rows.append(VariantAccuracy(name, region, float(r),
                                        hits1[name] / n, hits5[name] / n, n))
    return AccuracyReport(rows, per_image, flips,
                          [frac for _, frac in results])
