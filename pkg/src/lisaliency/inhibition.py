"""Lateral-inhibition model: Max-C reduction, inhibition field, and gating.

For a map value x at (i, j), the inhibition strength over the k x k zone
centered there (zero-padded by k//2) is

    a * exp(-mean(zone)) + b * sum_uv d_uv * exp(-d_uv) * max(0, x_uv - x_ij)

where d_uv is the Euclidean distance from (i, j) to the neighbor divided by
k.  The mean always divides by k*k, padding included, so boundary behavior is
deterministic.  The field is globally L2-normalized per layer and a map cell
survives gating iff its value strictly exceeds the normalized field there.

Which tensor feeds the map is configurable: the gradient read back from each
ReLU (default, the category-contribution signal this filter is meant to
denoise) or the forward activation.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, ShapeMismatchError, TraceError
from .network import ActivationTrace, NetworkSpec
from .tensor_ops import check_finite, normalize_l2

LI_SOURCES = ("gradient", "activation")


@dataclass(frozen=True)
class LIParams:
    """Balance coefficients and zone size; defaults a=0.1, b=0.9, k=7."""

    a: float = 0.1
    b: float = 0.9
    k: int = 7

    def __post_init__(self):
        if self.k < 1 or self.k % 2 == 0:
            raise ConfigError(f"zone side k must be odd and positive, got {self.k}")


@dataclass
class SuppressionMaskSet:
    """One binary (H,W) mask per ReLU layer, keyed by layer name."""

    masks: dict[str, np.ndarray]

    def __getitem__(self, name: str) -> np.ndarray:
        if name not in self.masks:
            raise TraceError(f"no suppression mask for layer {name}")
        return self.masks[name]

    def __contains__(self, name) -> bool:
        return name in self.masks

    def __len__(self) -> int:
        return len(self.masks)


def as_chw(tensor: np.ndarray) -> np.ndarray:
    """View a ReLU output as (C,H,W); flat fully-connected outputs become (N,1,1)."""
    if tensor.ndim == 3:
        return tensor
    if tensor.ndim == 1:
        return tensor.reshape(-1, 1, 1)
    raise ShapeMismatchError(f"expected rank 1 or 3 tensor, got shape {tensor.shape}")


def max_c(tensor: np.ndarray) -> np.ndarray:
    """Channel-wise max: out[h, w] = max over c of in[c, h, w]."""
    t = as_chw(tensor)
    return t.max(axis=0)


def inhibition_field(map2d: np.ndarray, params: LIParams) -> np.ndarray:
    """Inhibition strength at every map location.

    Computed and returned in float64: the exponential/distance reduction is
    where rounding hurts, and the field only feeds normalization and gating.
    """
    if map2d.ndim != 2:
        raise ShapeMismatchError(f"inhibition_field expects a 2-D map, got {map2d.shape}")
    m = np.asarray(map2d, dtype=np.float64)
    h, w = m.shape
    k = params.k
    r = k // 2
    padded = np.pad(m, r)
    zone_sum = np.zeros_like(m)
    diff = np.zeros_like(m)
    for du in range(-r, r + 1):
        for dv in range(-r, r + 1):
            nb = padded[r + du : r + du + h, r + dv : r + dv + w]
            zone_sum += nb
            if du or dv:
                d = math.hypot(du, dv) / k
                diff += (d * math.exp(-d)) * np.maximum(nb - m, 0.0)
    field = params.a * np.exp(-zone_sum / (k * k)) + params.b * diff
    return check_finite("inhibition_field", field)


def gate(map2d: np.ndarray, field: np.ndarray) -> np.ndarray:
    """Binary mask: 1 where the map strictly exceeds the (normalized) field."""
    if map2d.shape != field.shape:
        raise ShapeMismatchError(
            f"map shape {map2d.shape} does not match field shape {field.shape}"
        )
    return (map2d - field > 0).astype(np.float32)


def build_suppression_masks(trace: ActivationTrace, params: LIParams,
                            li_source: str = "gradient") -> SuppressionMaskSet:
    """Per-ReLU masks: Max-C map -> inhibition field -> L2 normalize -> gate."""
    if li_source not in LI_SOURCES:
        raise ConfigError(f"li_source must be one of {LI_SOURCES}, got {li_source!r}")
    masks: dict[str, np.ndarray] = {}
    for name, activation in trace.activations.items():
        if li_source == "gradient":
            if name not in trace.gradients:
                raise TraceError(f"missing gradients for layer {name}; back-propagate first")
            source = trace.gradients[name]
        else:
            source = activation
        m = max_c(source)
        field = inhibition_field(m, params)
        normalized, _ = normalize_l2(field)
        masks[name] = gate(m, normalized)
    return SuppressionMaskSet(masks)


def expected_mask_count(spec: NetworkSpec) -> int:
    return len(spec.relu_names)
