"""Category-specific attention maps and top-5 fused saliency maps.

The attention-map procedure for one category:

1. traced forward pass, saving every ReLU output,
2. back-propagate the selected class score (probability by default),
3. build one suppression mask per ReLU from the lateral-inhibition model,
4. second forward pass that erases masked-out locations across all channels
   after each ReLU,
5. Sum-C map of each masked ReLU output, L2-normalized per layer,
6. resize every map to the input resolution, sum, L2-normalize.

A saliency map fuses the attention maps of the top-5 predicted categories
(plain sum, then L2 normalization); the network receives no information
about any ground-truth class.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ShapeMismatchError
from .inhibition import LIParams, SuppressionMaskSet, as_chw, build_suppression_masks
from .network import (NetworkSpec, NetworkWeights, TAP_AFTER, backprop_category,
                      forward, forward_traced, run_layers, top_k_indices)
from .tensor_ops import normalize_l2

__all__ = [
    "AttentionMap", "SaliencyMap", "sum_c", "normalize_l2", "masked_forward",
    "resize_bilinear", "attention_map", "saliency_map", "fuse_maps",
]


@dataclass
class AttentionMap:
    """Single-category relevance map at input resolution, unit L2 norm unless degenerate."""

    values: np.ndarray
    category: int
    tap: str
    li_source: str
    degenerate: bool = False


@dataclass
class SaliencyMap:
    """Category-agnostic map fused from the top predicted categories."""

    values: np.ndarray
    categories: tuple[int, ...]
    tap: str
    li_source: str
    degenerate: bool = False


def sum_c(tensor: np.ndarray) -> np.ndarray:
    """Channel-wise sum: out[h, w] = sum over c of in[c, h, w]."""
    return as_chw(tensor).sum(axis=0)


def resize_bilinear(map2d: np.ndarray, target: tuple[int, int]) -> np.ndarray:
    """Corner-aligned bilinear resampling of a 2-D map."""
    if map2d.ndim != 2:
        raise ShapeMismatchError(f"resize_bilinear expects a 2-D map, got {map2d.shape}")
    th, tw = target
    if th < 1 or tw < 1:
        raise ShapeMismatchError(f"target dims must be >= 1, got {target}")
    sh, sw = map2d.shape

    def axis_coords(src, dst):
        if dst == 1 or src == 1:
            return np.zeros(dst, dtype=np.float64)
        return np.arange(dst, dtype=np.float64) * (src - 1) / (dst - 1)

    ys = axis_coords(sh, th)
    xs = axis_coords(sw, tw)
    y0 = np.minimum(ys.astype(np.int64), sh - 1)
    x0 = np.minimum(xs.astype(np.int64), sw - 1)
    y1 = np.minimum(y0 + 1, sh - 1)
    x1 = np.minimum(x0 + 1, sw - 1)
    wy = (ys - y0)[:, None]
    wx = (xs - x0)[None, :]
    m = np.asarray(map2d, dtype=np.float64)
    out = (
        m[np.ix_(y0, x0)] * (1 - wy) * (1 - wx)
        + m[np.ix_(y0, x1)] * (1 - wy) * wx
        + m[np.ix_(y1, x0)] * wy * (1 - wx)
        + m[np.ix_(y1, x1)] * wy * wx
    )
    return out.astype(map2d.dtype, copy=False)


def masked_forward(spec: NetworkSpec, weights: NetworkWeights, image: np.ndarray,
                   masks: SuppressionMaskSet) -> list[np.ndarray]:
    """Second forward pass: zero masked-out (h, w) locations across all channels.

    Returns the masked ReLU outputs in layer order; the zeroed tensors are
    what feed each following layer.
    """

    def hook(name: str, x: np.ndarray) -> np.ndarray:
        mask = masks[name]
        chw = as_chw(x)
        if mask.shape != chw.shape[1:]:
            raise ShapeMismatchError(
                f"mask for {name} has shape {mask.shape}, layer is {chw.shape[1:]}"
            )
        out = np.where(mask[None, :, :] == 0, np.float32(0), chw)
        return out.reshape(x.shape)

    _, _, relu_outs = run_layers(spec, weights, image, relu_hook=hook)
    return relu_outs


def fuse_maps(maps: list[np.ndarray]):
    """Sum maps of identical shape and L2-normalize; returns (values, degenerate)."""
    if not maps:
        raise ShapeMismatchError("fuse_maps needs at least one map")
    total = np.zeros_like(maps[0])
    for m in maps:
        total = total + m
    return normalize_l2(total)


def _is_spatial(tensor: np.ndarray) -> bool:
    chw = as_chw(tensor)
    return chw.shape[1] > 1 or chw.shape[2] > 1


def attention_map(spec: NetworkSpec, weights: NetworkWeights, image: np.ndarray,
                  category: int, params: LIParams = LIParams(),
                  tap: str = TAP_AFTER, li_source: str = "gradient",
                  spatial_layers_only: bool = True) -> AttentionMap:
    """Attention map for one category via gradient feedback plus lateral inhibition.

    ``spatial_layers_only`` (default on) keeps fully-connected ReLUs out of
    the fused map; their 1x1 Sum-C maps only add a constant offset after
    resizing.
    """
    trace = forward_traced(spec, weights, image)
    backprop_category(trace, category, tap)
    masks = build_suppression_masks(trace, params, li_source)
    relu_outs = masked_forward(spec, weights, image, masks)
    h_in, w_in = spec.input_shape[1], spec.input_shape[2]
    total = np.zeros((h_in, w_in), dtype=np.float32)
    for out in relu_outs:
        if spatial_layers_only and not _is_spatial(out):
            continue
        layer_map, degenerate = normalize_l2(sum_c(out))
        if degenerate:
            continue
        total += resize_bilinear(layer_map, (h_in, w_in))
    values, degenerate = normalize_l2(total)
    return AttentionMap(values, category, tap, li_source, degenerate)


def saliency_map(spec: NetworkSpec, weights: NetworkWeights, image: np.ndarray,
                 params: LIParams = LIParams(), tap: str = TAP_AFTER,
                 li_source: str = "gradient",
                 spatial_layers_only: bool = True) -> SaliencyMap:
    """Fuse the attention maps of the top-5 predicted categories.

    Networks with fewer than five classes fuse the top-min(5, classes).
    Probability ties are broken toward the lower class index.
    """
    probs = forward(spec, weights, image)
    categories = top_k_indices(probs, min(5, spec.num_classes))
    maps = [
        attention_map(spec, weights, image, c, params, tap, li_source,
                      spatial_layers_only).values
        for c in categories
    ]
    values, degenerate = fuse_maps(maps)
    return SaliencyMap(values, categories, tap, li_source, degenerate)
