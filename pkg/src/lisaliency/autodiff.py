"""Reverse-mode differentiation over a recorded operation tape.

A :class:`GradientTape` records one inference (or one training batch) as a
flat list of nodes in execution order.  ``backward`` replays the tape in
reverse from a scalar seed node and returns the gradient of the seed with
respect to every recorded tensor, which is how the saliency pipeline reads
per-ReLU gradients and how the trainer reads parameter gradients.

Tape ops accept either single-sample tensors ((C,H,W) images, (N,) vectors)
or the same with a leading batch axis; a tape is confined to one logical
thread.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import tensor_ops as T
from .errors import NumericsError, ShapeMismatchError, TraceError


@dataclass
class _Node:
    op: str
    inputs: tuple
    value: np.ndarray
    ctx: dict = field(default_factory=dict)


class GradientTape:
    """Execution-order record of operations plus saved backward context."""

    def __init__(self):
        self._nodes: list[_Node] = []

    def __len__(self) -> int:
        return len(self._nodes)

    def value(self, nid: int) -> np.ndarray:
        return self._nodes[nid].value

    def _add(self, op, inputs, value, **ctx) -> int:
        self._nodes.append(_Node(op, tuple(inputs), value, ctx))
        return len(self._nodes) - 1

    # ------------------------------------------------------------------ ops

    def leaf(self, value: np.ndarray) -> int:
        """Record an input tensor (image, weight, or bias)."""
        return self._add("leaf", (), np.asarray(value))

    def conv2d(self, x: int, w: int, b: int, stride: int = 1, padding: int = 0) -> int:
        xv = self.value(x)
        squeeze = xv.ndim == 3
        xb = xv[None] if squeeze else xv
        if xb.ndim != 4:
            raise ShapeMismatchError(f"conv2d input rank {xv.ndim} unsupported")
        out, cols = T.conv2d_batch(xb, self.value(w), self.value(b), stride, padding)
        return self._add(
            "conv2d", (x, w, b), out[0] if squeeze else out,
            cols=cols, x_shape=xb.shape, stride=stride, padding=padding, squeeze=squeeze,
        )

    def relu(self, x: int) -> int:
        return self._add("relu", (x,), T.relu(self.value(x)))

    def maxpool2d(self, x: int, window: int = 2, stride: int = 2) -> int:
        xv = self.value(x)
        squeeze = xv.ndim == 3
        xb = xv[None] if squeeze else xv
        out, idx = T.maxpool2d_batch(xb, window, stride)
        return self._add(
            "maxpool2d", (x,), out[0] if squeeze else out,
            idx=idx, x_shape=xb.shape, window=window, squeeze=squeeze,
        )

    def flatten(self, x: int) -> int:
        xv = self.value(x)
        out = xv.reshape(-1) if xv.ndim == 3 else xv.reshape(xv.shape[0], -1)
        return self._add("flatten", (x,), out, x_shape=xv.shape)

    def fully_connected(self, x: int, w: int, b: int) -> int:
        xv, wv, bv = self.value(x), self.value(w), self.value(b)
        if xv.ndim == 1:
            out = T.fully_connected(xv, wv, bv)
        elif xv.ndim == 2:
            if wv.shape[1] != xv.shape[1]:
                raise ShapeMismatchError(
                    f"weights {wv.shape} do not match batched input {xv.shape}"
                )
            out = xv @ wv.T + bv
        else:
            raise ShapeMismatchError(f"fully_connected input rank {xv.ndim} unsupported")
        return self._add("fully_connected", (x, w, b), out)

    def softmax(self, x: int) -> int:
        return self._add("softmax", (x,), T.softmax(self.value(x)))

    def pick(self, x: int, index: int) -> int:
        """Select one entry of a vector as a scalar node (the backward seed)."""
        xv = self.value(x)
        if xv.ndim != 1:
            raise ShapeMismatchError("pick expects a 1-D node")
        if not 0 <= index < xv.shape[0]:
            raise ShapeMismatchError(f"pick index {index} out of range {xv.shape[0]}")
        return self._add("pick", (x,), xv[index : index + 1].copy(), index=index)

    def cross_entropy(self, logits: int, labels: np.ndarray) -> int:
        """Mean cross-entropy of (B,C) logits against integer labels (B,)."""
        lv = self.value(logits)
        if lv.ndim != 2:
            raise ShapeMismatchError("cross_entropy expects batched (B,C) logits")
        labels = np.asarray(labels)
        shifted = (lv - lv.max(axis=1, keepdims=True)).astype(np.float64)
        logz = np.log(np.exp(shifted).sum(axis=1))
        nll = logz - shifted[np.arange(lv.shape[0]), labels]
        probs = np.exp(shifted - logz[:, None])
        value = np.asarray(nll.mean(), dtype=lv.dtype)
        return self._add("cross_entropy", (logits,), value, probs=probs, labels=labels)


# ------------------------------------------------------------------ backward

def _acc(grads, nid, g, nodes):
    # First write stores g as-is (op backwards allocate fresh arrays); a second
    # write allocates a new sum rather than mutating, so no aliasing leaks out.
    if grads[nid] is None:
        grads[nid] = g
    else:
        grads[nid] = grads[nid] + g


def _bw_conv2d(node, g, grads, nodes):
    ctx = node.ctx
    gb = g[None] if ctx["squeeze"] else g
    n, cout = gb.shape[0], gb.shape[1]
    gmat = np.ascontiguousarray(gb.reshape(n, cout, -1).transpose(0, 2, 1))
    wv = nodes[node.inputs[1]].value
    w2d = wv.reshape(cout, -1)
    cols = ctx["cols"]
    k = cols.shape[2]
    dw = (
        gmat.reshape(-1, cout).T @ cols.reshape(-1, k)
    ).reshape(wv.shape)
    db = gmat.sum(axis=(0, 1))
    dcols = gmat @ w2d
    dx = T._col2im(dcols, ctx["x_shape"], wv.shape[2], wv.shape[3],
                   ctx["stride"], ctx["padding"])
    _acc(grads, node.inputs[0], dx[0] if ctx["squeeze"] else dx, nodes)
    _acc(grads, node.inputs[1], dw, nodes)
    _acc(grads, node.inputs[2], db, nodes)


def _bw_relu(node, g, grads, nodes):
    _acc(grads, node.inputs[0], g * (node.value > 0), nodes)


def _bw_maxpool(node, g, grads, nodes):
    ctx = node.ctx
    gb = g[None] if ctx["squeeze"] else g
    n, c, h, w = ctx["x_shape"]
    k = ctx["window"]
    dv = np.zeros((n, c, h // k, w // k, k * k), dtype=g.dtype)
    np.put_along_axis(dv, ctx["idx"][..., None], gb[..., None], axis=-1)
    dx = dv.reshape(n, c, h // k, w // k, k, k).transpose(0, 1, 2, 4, 3, 5).reshape(
        n, c, h, w
    )
    _acc(grads, node.inputs[0], dx[0] if ctx["squeeze"] else dx, nodes)


def _bw_flatten(node, g, grads, nodes):
    _acc(grads, node.inputs[0], g.reshape(node.ctx["x_shape"]), nodes)


def _bw_fully_connected(node, g, grads, nodes):
    xv = nodes[node.inputs[0]].value
    wv = nodes[node.inputs[1]].value
    if xv.ndim == 1:
        _acc(grads, node.inputs[0], wv.T @ g, nodes)
        _acc(grads, node.inputs[1], np.outer(g, xv), nodes)
        _acc(grads, node.inputs[2], g, nodes)
    else:
        _acc(grads, node.inputs[0], g @ wv, nodes)
        _acc(grads, node.inputs[1], g.T @ xv, nodes)
        _acc(grads, node.inputs[2], g.sum(axis=0), nodes)


def _bw_softmax(node, g, grads, nodes):
    y = node.value
    dot = (g * y).sum(axis=-1, keepdims=True)
    _acc(grads, node.inputs[0], y * (g - dot), nodes)


def _bw_pick(node, g, grads, nodes):
    dx = np.zeros_like(nodes[node.inputs[0]].value)
    dx[node.ctx["index"]] = g[0]
    _acc(grads, node.inputs[0], dx, nodes)


def _bw_cross_entropy(node, g, grads, nodes):
    probs, labels = node.ctx["probs"], node.ctx["labels"]
    b = probs.shape[0]
    dlogits = probs.copy()
    dlogits[np.arange(b), labels] -= 1.0
    dlogits *= float(g) / b
    _acc(grads, node.inputs[0], dlogits.astype(nodes[node.inputs[0]].value.dtype), nodes)


_BACKWARD = {
    "conv2d": _bw_conv2d,
    "relu": _bw_relu,
    "maxpool2d": _bw_maxpool,
    "flatten": _bw_flatten,
    "fully_connected": _bw_fully_connected,
    "softmax": _bw_softmax,
    "pick": _bw_pick,
    "cross_entropy": _bw_cross_entropy,
}


def backward(tape: GradientTape, seed: int) -> list[np.ndarray]:
    """Gradient of the scalar node *seed* with respect to every recorded tensor.

    Visits every recorded operation at most once, in reverse execution order.
    Tensors the seed does not depend on get zero gradients.
    """
    nodes = tape._nodes
    if not 0 <= seed < len(nodes):
        raise TraceError(f"seed node {seed} is not on the tape")
    if nodes[seed].value.size != 1:
        raise TraceError("backward seed must be a scalar node")
    grads: list[np.ndarray | None] = [None] * len(nodes)
    grads[seed] = np.ones_like(nodes[seed].value)
    for nid in range(seed, -1, -1):
        g = grads[nid]
        node = nodes[nid]
        if g is None or node.op == "leaf":
            continue
        _BACKWARD[node.op](node, g, grads, nodes)
    out = []
    for nid, g in enumerate(grads):
        if g is None:
            g = np.zeros_like(nodes[nid].value)
        elif not np.all(np.isfinite(g)):
            raise NumericsError(f"backward produced non-finite gradient at node {nid}")
        out.append(g)
    return out
