"""Dense tensor operators: convolution, ReLU, max-pool, fully-connected, softmax.

Tensors are plain numpy arrays in channel-major (C, H, W) layout, float32 for
storage and compute.  Reductions that are sensitive to rounding (convolution
sums in the direct path, the softmax denominator, L2 norms) accumulate in
float64.  Convolution ships two paths: a direct summation over kernel offsets
(the referee) and an im2col fast path; both must agree within 1e-4 and the
fast path is the default everywhere.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import NumericsError, ShapeMismatchError

DEGENERATE_NORM_EPS = 1e-12


def check_finite(name: str, arr: np.ndarray) -> np.ndarray:
    """Raise NumericsError if *arr* contains NaN or Inf; returns *arr*."""
    if not np.all(np.isfinite(arr)):
        raise NumericsError(f"{name} produced non-finite values")
    return arr


def _require_rank(arr: np.ndarray, rank: int, what: str) -> None:
    if arr.ndim != rank:
        raise ShapeMismatchError(f"{what}: expected rank {rank}, got shape {arr.shape}")


@dataclass(frozen=True)
class ConvKernel:
    """Convolution weights (out_channels, in_channels, kh, kw) plus bias (out_channels,).

    Kernel height and width must be odd so every output value has a
    well-defined center location in the input.
    """

    weights: np.ndarray
    bias: np.ndarray

    def __post_init__(self):
        if self.weights.ndim != 4:
            raise ShapeMismatchError(
                f"kernel weights must be rank 4, got shape {self.weights.shape}"
            )
        kh, kw = self.weights.shape[2], self.weights.shape[3]
        if kh % 2 == 0 or kw % 2 == 0:
            raise ShapeMismatchError(f"kernel spatial dims must be odd, got {kh}x{kw}")
        if self.bias.shape != (self.weights.shape[0],):
            raise ShapeMismatchError(
                f"bias shape {self.bias.shape} does not match out_channels "
                f"{self.weights.shape[0]}"
            )


def conv_output_hw(h: int, w: int, kh: int, kw: int, stride: int, padding: int):
    """Output spatial dims for a convolution; errors unless they are positive integers."""
    num_h = h + 2 * padding - kh
    num_w = w + 2 * padding - kw
    if num_h < 0 or num_w < 0 or num_h % stride or num_w % stride:
        raise ShapeMismatchError(
            f"conv geometry invalid: input {h}x{w}, kernel {kh}x{kw}, "
            f"stride {stride}, padding {padding}"
        )
    return num_h // stride + 1, num_w // stride + 1


def _im2col(x: np.ndarray, kh: int, kw: int, stride: int, padding: int):
    """(N,C,H,W) -> (N, Ho*Wo, C*kh*kw) patch matrix plus output dims."""
    n, c, h, w = x.shape
    ho, wo = conv_output_hw(h, w, kh, kw, stride, padding)
    xp = np.pad(x, ((0, 0), (0, 0), (padding, padding), (padding, padding)))
    s = xp.strides
    windows = np.lib.stride_tricks.as_strided(
        xp,
        shape=(n, c, ho, wo, kh, kw),
        strides=(s[0], s[1], s[2] * stride, s[3] * stride, s[2], s[3]),
        writeable=False,
    )
    cols = np.ascontiguousarray(windows.transpose(0, 2, 3, 1, 4, 5)).reshape(
        n, ho * wo, c * kh * kw
    )
    return cols, ho, wo


def _col2im(dcols: np.ndarray, x_shape, kh: int, kw: int, stride: int, padding: int):
    """Adjoint of _im2col: scatter-add patch gradients back to the input layout."""
    n, c, h, w = x_shape
    ho = (h + 2 * padding - kh) // stride + 1
    wo = (w + 2 * padding - kw) // stride + 1
    dpatches = dcols.reshape(n, ho, wo, c, kh, kw)
    dxp = np.zeros((n, c, h + 2 * padding, w + 2 * padding), dtype=dcols.dtype)
    for i in range(kh):
        for j in range(kw):
            dxp[:, :, i : i + ho * stride : stride, j : j + wo * stride : stride] += (
                dpatches[:, :, :, :, i, j].transpose(0, 3, 1, 2)
            )
    if padding:
        return dxp[:, :, padding:-padding, padding:-padding]
    return dxp


def conv2d_batch(x: np.ndarray, weights: np.ndarray, bias: np.ndarray,
                 stride: int, padding: int):
    """Batched im2col convolution; returns (output, cols) so backward can reuse cols."""
    cout, cin, kh, kw = weights.shape
    if x.shape[1] != cin:
        raise ShapeMismatchError(
            f"input has {x.shape[1]} channels, kernel expects {cin}"
        )
    cols, ho, wo = _im2col(x, kh, kw, stride, padding)
    w2d = weights.reshape(cout, cin * kh * kw)
    out = cols @ w2d.T + bias
    return out.transpose(0, 2, 1).reshape(x.shape[0], cout, ho, wo), cols


def conv2d_batch_direct(x: np.ndarray, weights: np.ndarray, bias: np.ndarray,
                        stride: int, padding: int) -> np.ndarray:
    """Direct convolution summed over kernel offsets with float64 accumulators."""
    cout, cin, kh, kw = weights.shape
    if x.shape[1] != cin:
        raise ShapeMismatchError(
            f"input has {x.shape[1]} channels, kernel expects {cin}"
        )
    n, _, h, w = x.shape
    ho, wo = conv_output_hw(h, w, kh, kw, stride, padding)
    xp = np.pad(x, ((0, 0), (0, 0), (padding, padding), (padding, padding))).astype(
        np.float64
    )
    w64 = weights.astype(np.float64)
    acc = np.zeros((n, cout, ho, wo), dtype=np.float64)
    for i in range(kh):
        for j in range(kw):
            patch = xp[:, :, i : i + ho * stride : stride, j : j + wo * stride : stride]
            acc += np.einsum("nchw,oc->nohw", patch, w64[:, :, i, j])
    acc += bias.astype(np.float64)[None, :, None, None]
    return acc.astype(x.dtype)


def conv2d(x: np.ndarray, kernel: ConvKernel, stride: int = 1, padding: int = 0,
           method: str = "fast") -> np.ndarray:
    """2-D convolution of a (C,H,W) tensor.

    Each output value is the elementwise product of the kernel slice with the
    input patch centered at that location, summed, plus the bias.
    """
    _require_rank(x, 3, "conv2d input")
    if method == "direct":
        out = conv2d_batch_direct(x[None], kernel.weights, kernel.bias, stride, padding)[0]
    elif method == "fast":
        out, _ = conv2d_batch(x[None], kernel.weights, kernel.bias, stride, padding)
        out = out[0]
    else:
        raise ValueError(f"unknown conv2d method {method!r}")
    return check_finite("conv2d", out)


def relu(x: np.ndarray) -> np.ndarray:
    """Elementwise max(0, x); keeps only positive values."""
    return np.maximum(x, 0)


def maxpool2d_batch(x: np.ndarray, window: int, stride: int):
    """Batched non-overlapping max pooling; returns (output, argmax per window)."""
    if window != stride:
        raise ShapeMismatchError(
            f"maxpool2d supports window == stride only, got {window}/{stride}"
        )
    n, c, h, w = x.shape
    if h % stride or w % stride:
        raise ShapeMismatchError(
            f"spatial dims {h}x{w} not divisible by pooling stride {stride}"
        )
    k = window
    v = x.reshape(n, c, h // k, k, w // k, k).transpose(0, 1, 2, 4, 3, 5)
    v = np.ascontiguousarray(v).reshape(n, c, h // k, w // k, k * k)
    idx = v.argmax(axis=-1)
    out = np.take_along_axis(v, idx[..., None], axis=-1)[..., 0]
    return out, idx


def maxpool2d(x: np.ndarray, window: int = 2, stride: int = 2) -> np.ndarray:
    """Max pooling over non-overlapping window x window blocks of a (C,H,W) tensor."""
    _require_rank(x, 3, "maxpool2d input")
    out, _ = maxpool2d_batch(x[None], window, stride)
    return out[0]


def fully_connected(x: np.ndarray, weights: np.ndarray, bias: np.ndarray) -> np.ndarray:
    """weights @ x + bias for a 1-D input."""
    _require_rank(x, 1, "fully_connected input")
    _require_rank(weights, 2, "fully_connected weights")
    if weights.shape[1] != x.shape[0]:
        raise ShapeMismatchError(
            f"weights {weights.shape} do not match input length {x.shape[0]}"
        )
    if bias.shape != (weights.shape[0],):
        raise ShapeMismatchError(
            f"bias shape {bias.shape} does not match output length {weights.shape[0]}"
        )
    return check_finite("fully_connected", weights @ x + bias)


def softmax(x: np.ndarray) -> np.ndarray:
    """Stable softmax along the last axis: max-subtraction, float64 denominator."""
    if x.shape[-1] < 1:
        raise ShapeMismatchError("softmax input must have at least one entry")
    shifted = (x - x.max(axis=-1, keepdims=True)).astype(np.float64)
    e = np.exp(shifted)
    out = e / e.sum(axis=-1, keepdims=True)
    return check_finite("softmax", out.astype(x.dtype))


def normalize_l2(t: np.ndarray):
    """Divide by the global L2 norm.

    Returns ``(normalized, degenerate)``.  Maps with norm below 1e-12 are
    returned unchanged with ``degenerate=True`` instead of dividing by ~0.
    """
    norm = float(np.linalg.norm(t.astype(np.float64)))
    if norm < DEGENERATE_NORM_EPS:
        return t, True
    return (t / norm).astype(t.dtype, copy=False), False
