"""Model-parameter randomization tests with HOG and rank-correlation metrics.

A saliency method that actually depends on learned weights must produce
increasingly different maps as more layers are re-randomized.  Layers are
randomized from the classifier head down to the first convolution, either
cumulatively (cascading) or one at a time (independent).  Each stage's
saliency map is compared against the trained model's map with two metrics:
Pearson correlation of HOG descriptors, and Spearman rank correlation of the
raw flattened maps.

HOG parameters are the classical defaults: 8x8-pixel cells, 9 unsigned
orientation bins over [0, 180), central-difference gradients, 2x2-cell
blocks at 1-cell stride, per-block L2 normalization with eps=1e-6.  Absolute
metric values depend on this choice.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, ShapeMismatchError
from .inhibition import LIParams
from .network import NetworkSpec, NetworkWeights, TAP_AFTER, init_bound
from .saliency import saliency_map

MODES = ("cascading", "independent")

HOG_CELL = 8
HOG_BINS = 9
HOG_BLOCK = 2
HOG_EPS = 1e-6


@dataclass(frozen=True)
class RandomizationPlan:
    """Mode, top-to-bottom layer order (head first), and base seed."""

    mode: str
    layers: tuple[str, ...]
    seed: int

    def __post_init__(self):
        if self.mode not in MODES:
            raise ConfigError(f"mode must be one of {MODES}, got {self.mode!r}")

    @classmethod
    def for_spec(cls, spec: NetworkSpec, mode: str, seed: int) -> "RandomizationPlan":
        return cls(mode, tuple(reversed(spec.learnable_names)), seed)


@dataclass(frozen=True)
class SimilarityRecord:
    stage: int
    layer_name: str
    seed: int
    hog_pearson: float
    spearman: float


def hog_descriptor(map2d: np.ndarray, cell: int = HOG_CELL, bins: int = HOG_BINS,
                   block: int = HOG_BLOCK, eps: float = HOG_EPS) -> np.ndarray:
    """Histogram-of-oriented-gradients descriptor of a 2-D map.

    Gradient orientation is atan2(d/drow, d/dcol) folded into [0, 180);
    votes are magnitude-weighted with hard bin assignment.  Cells that do
    not fill an 8x8 square are dropped.
    """
    if map2d.ndim != 2:
        raise ShapeMismatchError(f"hog_descriptor expects a 2-D map, got {map2d.shape}")
    h, w = map2d.shape
    if h < cell or w < cell:
        raise ShapeMismatchError(f"map {h}x{w} smaller than one {cell}x{cell} cell")
    m = np.asarray(map2d, dtype=np.float64)
    gy, gx = np.gradient(m)
    mag = np.hypot(gy, gx)
    ang = np.degrees(np.arctan2(gy, gx)) % 180.0
    bin_idx = np.minimum((ang // (180.0 / bins)).astype(np.int64), bins - 1)

    cy, cx = h // cell, w // cell
    hists = np.zeros((cy, cx, bins), dtype=np.float64)
    for i in range(cy):
        for j in range(cx):
            sl = (slice(i * cell, (i + 1) * cell), slice(j * cell, (j + 1) * cell))
            hists[i, j] = np.bincount(
                bin_idx[sl].ravel(), weights=mag[sl].ravel(), minlength=bins
            )

    # Maps with fewer than block x block cells fall back to one block spanning
    # the whole cell grid, so any map of at least one cell is accepted.
    by = min(block, cy)
    bx = min(block, cx)
    blocks = []
    for i in range(cy - by + 1):
        for j in range(cx - bx + 1):
            v = hists[i : i + by, j : j + bx].ravel()
            blocks.append(v / np.sqrt(np.sum(v * v) + eps * eps))
    return np.concatenate(blocks)


def pearson(x, y) -> float:
    """Sample Pearson correlation.

    Convention for degenerate input: if either vector has zero variance the
    correlation is undefined and 0.0 is returned instead of NaN (randomized
    networks can emit near-constant maps; the test harness must not crash).
    """
    x = np.asarray(x, dtype=np.float64).ravel()
    y = np.asarray(y, dtype=np.float64).ravel()
    if x.shape != y.shape:
        raise ShapeMismatchError(f"length mismatch: {x.shape} vs {y.shape}")
    if x.size < 2:
        raise ShapeMismatchError("need at least two samples")
    dx = x - x.mean()
    dy = y - y.mean()
    sxx = float(dx @ dx)
    syy = float(dy @ dy)
    if sxx <= 0.0 or syy <= 0.0:
        return 0.0
    if np.array_equal(x, y):
        return 1.0
    r = float(dx @ dy) / (np.sqrt(sxx) * np.sqrt(syy))
    return float(min(1.0, max(-1.0, r)))


def _average_ranks(v: np.ndarray) -> np.ndarray:
    order = np.argsort(v, kind="stable")
    ranks = np.empty(v.size, dtype=np.float64)
    sv = v[order]
    i = 0
    while i < v.size:
        j = i
        while j + 1 < v.size and sv[j + 1] == sv[i]:
            j += 1
        ranks[order[i : j + 1]] = 0.5 * (i + j) + 1.0
        i = j + 1
    return ranks


def spearman(x, y) -> float:
    """Spearman rank correlation: Pearson of average-ranked values (ties averaged)."""
    x = np.asarray(x, dtype=np.float64).ravel()
    y = np.asarray(y, dtype=np.float64).ravel()
    if x.shape != y.shape:
        raise ShapeMismatchError(f"length mismatch: {x.shape} vs {y.shape}")
    if x.size < 2:
        raise ShapeMismatchError("need at least two samples")
    return pearson(_average_ranks(x), _average_ranks(y))


def randomize_layer(weights: NetworkWeights, layer: str, seed: int) -> NetworkWeights:
    """Re-draw one layer's parameters from the initialization distribution.

    Returns a new weights object; the input is never mutated.  Weights are
    re-drawn Kaiming-uniform from the layer's own fan-in, biases reset to the
    init value (zero).
    """
    w_key, b_key = f"{layer}.weight", f"{layer}.bias"
    if w_key not in weights.tensors:
        raise ConfigError(f"unknown learnable layer {layer!r}")
    rng = np.random.default_rng(seed)
    out = weights.copy()
    shape = weights.tensors[w_key].shape
    bound = init_bound(shape)
    out.tensors[w_key] = rng.uniform(-bound, bound, shape).astype(np.float32)
    out.tensors[b_key] = np.zeros_like(weights.tensors[b_key])
    return out


def run_randomization_test(spec: NetworkSpec, weights: NetworkWeights,
                           image: np.ndarray, plan: RandomizationPlan,
                           params: LIParams = LIParams(), tap: str = TAP_AFTER,
                           li_source: str = "gradient",
                           spatial_layers_only: bool = True) -> list[SimilarityRecord]:
    """Stage-by-stage similarity of randomized-model saliency maps to the trained map.

    Stage 0 is the trained model compared to itself (both metrics 1.0).  In
    cascading mode stage i has the top i layers randomized cumulatively; in
    independent mode exactly one layer is randomized per stage.
    """
    expected = tuple(reversed(spec.learnable_names))
    if plan.layers != expected:
        raise ConfigError(
            f"plan layers must be top-to-bottom {expected}, got {plan.layers}"
        )

    def fused(w: NetworkWeights) -> np.ndarray:
        return saliency_map(spec, w, image, params, tap, li_source,
                            spatial_layers_only).values

    base = fused(weights)
    base_hog = hog_descriptor(base)
    records = [SimilarityRecord(0, "trained", plan.seed,
                                pearson(base_hog, base_hog),
                                spearman(base.ravel(), base.ravel()))]
    current = weights
    for stage, layer in enumerate(plan.layers, start=1):
        # Mix run seed and stage index so stages are decorrelated across runs.
        stage_seed = int(np.random.SeedSequence([plan.seed, stage]).generate_state(1)[0])
        if plan.mode == "cascading":
            current = randomize_layer(current, layer, stage_seed)
            staged = current
        else:
            staged = randomize_layer(weights, layer, stage_seed)
        m = fused(staged)
        records.append(SimilarityRecord(
            stage, layer, plan.seed,
            pearson(base_hog, hog_descriptor(m)),
            spearman(base.ravel(), m.ravel()),
        ))
    return records
