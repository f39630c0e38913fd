"""Reverse-mode automatic differentiation over dense 2-D tensors.

Every differentiable operation builds a ``DiffNode`` holding the forward
value plus pullback closures toward its parents.  Calling ``backward`` on
a 1x1 scalar node accumulates gradients through the DAG; shared
subexpressions receive summed contributions.  The computation graph is
rebuilt per step, so nodes are cheap and never mutated after creation
(apart from gradient accumulation during a backward pass).
"""

from __future__ import annotations

import math
from typing import Callable, Optional, Sequence

import numpy as np

from tscl.errors import DegenerateInputError, DimensionError, ParameterError
from tscl.tensor import Tensor2D, as_array, softmax_row

Pullback = Callable[[np.ndarray], np.ndarray]


class DiffNode:
    """A node of the differentiable computation graph.

    ``parents`` pairs each upstream node with the local pullback mapping
    the gradient at this node to the gradient contribution at the parent.
    """

    __slots__ = ("value", "parents", "op", "requires_grad", "grad")

    def __init__(
        self,
        value: Tensor2D,
        parents: Sequence[tuple["DiffNode", Pullback]] = (),
        op: str = "leaf",
        requires_grad: Optional[bool] = None,
    ):
        self.value = value
        self.parents = tuple(parents)
        self.op = op
        if requires_grad is None:
            requires_grad = any(p.requires_grad for p, _ in self.parents)
        self.requires_grad = requires_grad
        self.grad: Optional[np.ndarray] = None

    @property
    def shape(self) -> tuple[int, int]:
        return self.value.shape

    @property
    def array(self) -> np.ndarray:
        return self.value.array

    def gradient(self) -> Tensor2D:
        """Accumulated gradient after a backward pass (zeros if unreached)."""
        if self.grad is None:
            return Tensor2D.zeros(*self.shape)
        return Tensor2D(self.grad)

    def __repr__(self) -> str:
        r, c = self.shape
        return f"DiffNode(op={self.op!r}, {r}x{c})"


def leaf(value, requires_grad: bool = True) -> DiffNode:
    v = value if isinstance(value, Tensor2D) else Tensor2D(as_array(value))
    return DiffNode(v, op="leaf", requires_grad=requires_grad)


def constant(value) -> DiffNode:
    return leaf(value, requires_grad=False)


def _topo_order(root: DiffNode) -> list[DiffNode]:
    """Iterative post-order over the DAG reachable from ``root``."""
    order: list[DiffNode] = []
    seen: set[int] = set()
    stack: list[tuple[DiffNode, bool]] = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for parent, _ in node.parents:
            if id(parent) not in seen and parent.requires_grad:
                stack.append((parent, False))
    return order


def backward(node: DiffNode) -> None:
    """Accumulate gradients of a scalar (1x1) node into the reachable graph."""
    if node.shape != (1, 1):
        raise DimensionError(f"backward requires a 1x1 scalar node, got {node.shape}")
    order = _topo_order(node)
    for n in order:
        n.grad = None
    node.grad = np.ones((1, 1))
    for n in reversed(order):
        if n.grad is None:
            continue
        g = n.grad
        for parent, pull in n.parents:
            if not parent.requires_grad:
                continue
            contrib = pull(g)
            if parent.grad is None:
                parent.grad = contrib.copy()
            else:
                parent.grad = parent.grad + contrib


# ---------------------------------------------------------------------------
# Primitives


def matmul(a: DiffNode, b: DiffNode) -> DiffNode:
    if a.shape[1] != b.shape[0]:
        raise DimensionError(f"matmul shape mismatch: {a.shape} x {b.shape}")
    av, bv = a.array, b.array
    out = av @ bv
    return DiffNode(
        Tensor2D(out),
        parents=[(a, lambda g: g @ bv.T), (b, lambda g: av.T @ g)],
        op="matmul",
    )


def add(a: DiffNode, b: DiffNode) -> DiffNode:
    """Elementwise sum; ``b`` may be a 1xM row vector broadcast over rows."""
    if a.shape == b.shape:
        return DiffNode(
            Tensor2D(a.array + b.array),
            parents=[(a, lambda g: g), (b, lambda g: g)],
            op="add",
        )
    if b.shape == (1, a.shape[1]):
        return DiffNode(
            Tensor2D(a.array + b.array),
            parents=[(a, lambda g: g), (b, lambda g: g.sum(axis=0, keepdims=True))],
            op="add",
        )
    raise DimensionError(f"add shape mismatch: {a.shape} + {b.shape}")


def scale(a: DiffNode, c: float) -> DiffNode:
    c = float(c)
    return DiffNode(
        Tensor2D(a.array * c), parents=[(a, lambda g: g * c)], op="scale"
    )


def sub(a: DiffNode, b: DiffNode) -> DiffNode:
    return add(a, scale(b, -1.0))


def mul_elem(a: DiffNode, c) -> DiffNode:
    """Elementwise product with a constant matrix (no gradient through c)."""
    cv = as_array(c)
    if cv.shape != a.shape:
        raise DimensionError(f"mul_elem shape mismatch: {a.shape} * {cv.shape}")
    return DiffNode(
        Tensor2D(a.array * cv), parents=[(a, lambda g: g * cv)], op="mul_elem"
    )


def relu(a: DiffNode) -> DiffNode:
    mask = a.array > 0
    return DiffNode(
        Tensor2D(np.where(mask, a.array, 0.0)),
        parents=[(a, lambda g: g * mask)],
        op="relu",
    )


def exp(a: DiffNode) -> DiffNode:
    out = np.exp(a.array)
    if not np.isfinite(out).all():
        raise DegenerateInputError("exp overflowed to a non-finite value")
    return DiffNode(Tensor2D(out), parents=[(a, lambda g: g * out)], op="exp")


def log(a: DiffNode) -> DiffNode:
    av = a.array
    with np.errstate(divide="raise", invalid="raise"):
        try:
            out = np.log(av)
        except FloatingPointError:
            raise DegenerateInputError("log of a non-positive entry") from None
    return DiffNode(Tensor2D(out), parents=[(a, lambda g: g / av)], op="log")


def clamp_min(a: DiffNode, floor: float) -> DiffNode:
    """max(a, floor) elementwise; gradient is blocked where the clamp binds."""
    mask = a.array > floor
    return DiffNode(
        Tensor2D(np.where(mask, a.array, floor)),
        parents=[(a, lambda g: g * mask)],
        op="clamp_min",
    )


def transpose(a: DiffNode) -> DiffNode:
    return DiffNode(
        Tensor2D(a.array.T.copy()), parents=[(a, lambda g: g.T)], op="transpose"
    )


def mean(a: DiffNode) -> DiffNode:
    n = a.array.size
    out = np.array([[a.array.mean()]])
    shape = a.shape
    return DiffNode(
        Tensor2D(out),
        parents=[(a, lambda g: np.full(shape, g[0, 0] / n))],
        op="mean",
    )


def sum_all(a: DiffNode) -> DiffNode:
    out = np.array([[a.array.sum()]])
    shape = a.shape
    return DiffNode(
        Tensor2D(out),
        parents=[(a, lambda g: np.full(shape, g[0, 0]))],
        op="sum_all",
    )


def row_sum(a: DiffNode) -> DiffNode:
    """Sum each row into an Nx1 column."""
    cols = a.shape[1]
    return DiffNode(
        Tensor2D(a.array.sum(axis=1, keepdims=True)),
        parents=[(a, lambda g: np.repeat(g, cols, axis=1))],
        op="row_sum",
    )


def take_rows(a: DiffNode, indices) -> DiffNode:
    idx = np.asarray(indices, dtype=np.intp)
    shape = a.shape

    def pull(g: np.ndarray) -> np.ndarray:
        out = np.zeros(shape)
        np.add.at(out, idx, g)
        return out

    return DiffNode(Tensor2D(a.array[idx]), parents=[(a, pull)], op="take_rows")


def take_pairs(a: DiffNode, partner) -> DiffNode:
    """Gather a[i, partner[i]] into an Nx1 column."""
    idx = np.asarray(partner, dtype=np.intp)
    n = a.shape[0]
    if idx.shape != (n,):
        raise DimensionError(f"partner index must have shape ({n},), got {idx.shape}")
    rows = np.arange(n)
    shape = a.shape

    def pull(g: np.ndarray) -> np.ndarray:
        out = np.zeros(shape)
        out[rows, idx] = g[:, 0]
        return out

    return DiffNode(
        Tensor2D(a.array[rows, idx].reshape(n, 1)), parents=[(a, pull)], op="take_pairs"
    )


def row_l2_normalize(a: DiffNode) -> DiffNode:
    """Scale every row to unit L2 norm."""
    av = a.array
    norms = np.linalg.norm(av, axis=1, keepdims=True)
    small = np.nonzero(norms[:, 0] < 1e-12)[0]
    if small.size:
        raise DegenerateInputError(f"zero-norm row at index {int(small[0])}")
    out = av / norms

    def pull(g: np.ndarray) -> np.ndarray:
        dot = np.sum(g * out, axis=1, keepdims=True)
        return (g - out * dot) / norms

    return DiffNode(Tensor2D(out), parents=[(a, pull)], op="row_l2_normalize")


def _keep_mask(n: int, m: int, excluded: Optional[np.ndarray]) -> np.ndarray:
    keep = np.ones((n, m), dtype=bool)
    if excluded is not None:
        idx = np.asarray(excluded, dtype=np.intp)
        if idx.shape != (n,):
            raise DimensionError(
                f"excluded-index mask must have shape ({n},), got {idx.shape}"
            )
        keep[np.arange(n), idx] = False
    return keep


def masked_softmax_rows(
    a: DiffNode,
    excluded: Optional[np.ndarray] = None,
    temperature: float = 1.0,
) -> DiffNode:
    """Differentiable row softmax of a/temperature with one optional
    excluded column per row (exact zeros there)."""
    if temperature <= 0:
        raise ParameterError(f"temperature must be positive, got {temperature}")
    out = softmax_row(a.value, mask=excluded, temperature=temperature).array
    inv_t = 1.0 / float(temperature)

    def pull(g: np.ndarray) -> np.ndarray:
        dot = np.sum(g * out, axis=1, keepdims=True)
        return (g - dot) * out * inv_t

    return DiffNode(Tensor2D(out), parents=[(a, pull)], op="masked_softmax_rows")


def logsumexp_row(a: DiffNode, excluded: Optional[np.ndarray] = None) -> DiffNode:
    """Stabilized log-sum-exp of each row (Nx1), skipping excluded entries."""
    av = a.array
    n, m = av.shape
    keep = _keep_mask(n, m, excluded)
    masked = np.where(keep, av, -np.inf)
    mx = masked.max(axis=1, keepdims=True)
    e = np.where(keep, np.exp(av - mx), 0.0)
    s = e.sum(axis=1, keepdims=True)
    out = mx + np.log(s)
    soft = e / s

    def pull(g: np.ndarray) -> np.ndarray:
        return g * soft

    return DiffNode(Tensor2D(out), parents=[(a, pull)], op="logsumexp_row")


def cross_entropy_with_logits(logits: DiffNode, labels) -> DiffNode:
    """Per-row softmax cross-entropy against integer labels (Nx1 output)."""
    y = np.asarray(labels, dtype=np.intp)
    n, c = logits.shape
    if y.shape != (n,):
        raise DimensionError(f"labels must have shape ({n},), got {y.shape}")
    if y.size and (y.min() < 0 or y.max() >= c):
        raise ParameterError(f"label out of range [0,{c}) in cross entropy")
    lv = logits.array
    mx = lv.max(axis=1, keepdims=True)
    e = np.exp(lv - mx)
    s = e.sum(axis=1, keepdims=True)
    lse = mx + np.log(s)
    picked = lv[np.arange(n), y].reshape(n, 1)
    soft = e / s
    onehot = np.zeros((n, c))
    onehot[np.arange(n), y] = 1.0

    def pull(g: np.ndarray) -> np.ndarray:
        return g * (soft - onehot)

    return DiffNode(
        Tensor2D(lse - picked), parents=[(logits, pull)], op="cross_entropy"
    )


# ---------------------------------------------------------------------------
# 1-D convolution / pooling over channel-major flattened series
#
# A batch of n series with c channels of length L is a (n, c*L) matrix whose
# row layout is channel-major: entry [i, ch*L + t].


def conv1d(
    x: DiffNode,
    w: DiffNode,
    b: Optional[DiffNode],
    channels: int,
    length: int,
) -> DiffNode:
    """Stride-1, same-padded 1-D convolution.

    ``x`` is (n, channels*length); ``w`` is (c_out, channels*k) with the same
    channel-major layout; ``b`` is an optional (1, c_out) bias added to every
    timestep of the matching output channel.  Output is (n, c_out*length).
    """
    n, width = x.shape
    if width != channels * length:
        raise DimensionError(
            f"conv1d input width {width} != channels*length = {channels}*{length}"
        )
    c_out, wcols = w.shape
    if wcols % channels != 0:
        raise DimensionError(
            f"conv1d weight width {wcols} not a multiple of channels {channels}"
        )
    k = wcols // channels
    if b is not None and b.shape != (1, c_out):
        raise DimensionError(f"conv1d bias must be (1, {c_out}), got {b.shape}")

    pad_left = (k - 1) // 2
    wv = w.array
    x3 = x.array.reshape(n, channels, length)
    padded = np.zeros((n, channels, length + k - 1))
    padded[:, :, pad_left : pad_left + length] = x3
    pos = np.arange(length)[:, None] + np.arange(k)[None, :]  # (L, k)
    # (n, channels, L, k) -> (n, L, channels, k) -> (n*L, channels*k)
    patches = padded[:, :, pos].transpose(0, 2, 1, 3).reshape(n * length, channels * k)
    out2 = patches @ wv.T  # (n*L, c_out)
    out = out2.reshape(n, length, c_out).transpose(0, 2, 1).reshape(n, c_out * length)
    if b is not None:
        out = out + np.repeat(b.array[0], length)[None, :]

    def reshape_grad(g: np.ndarray) -> np.ndarray:
        return g.reshape(n, c_out, length).transpose(0, 2, 1).reshape(n * length, c_out)

    def pull_x(g: np.ndarray) -> np.ndarray:
        dpatches = reshape_grad(g) @ wv  # (n*L, channels*k)
        d4 = dpatches.reshape(n, length, channels, k).transpose(0, 2, 1, 3)
        dpadded = np.zeros_like(padded)
        np.add.at(dpadded, (slice(None), slice(None), pos), d4)
        return dpadded[:, :, pad_left : pad_left + length].reshape(n, channels * length)

    def pull_w(g: np.ndarray) -> np.ndarray:
        return reshape_grad(g).T @ patches

    parents: list[tuple[DiffNode, Pullback]] = [(x, pull_x), (w, pull_w)]
    if b is not None:
        parents.append((b, lambda g: reshape_grad(g).sum(axis=0, keepdims=True)))
    return DiffNode(Tensor2D(out), parents=parents, op="conv1d")


def max_pool1d(x: DiffNode, channels: int, length: int, width: int) -> DiffNode:
    """Non-overlapping max pooling along time; the last window may be short.

    Ties resolve to the earliest timestep, so the backward scatter is
    deterministic.
    """
    if width < 1:
        raise ParameterError(f"pool width must be >= 1, got {width}")
    n, total = x.shape
    if total != channels * length:
        raise DimensionError(
            f"max_pool1d input width {total} != channels*length = {channels}*{length}"
        )
    out_len = math.ceil(length / width)
    x3 = x.array.reshape(n, channels, length)
    out3 = np.empty((n, channels, out_len))
    argpos = np.empty((n, channels, out_len), dtype=np.intp)
    for t in range(out_len):
        s, e = t * width, min((t + 1) * width, length)
        seg = x3[:, :, s:e]
        arg = seg.argmax(axis=2)
        argpos[:, :, t] = s + arg
        out3[:, :, t] = np.take_along_axis(seg, arg[:, :, None], axis=2)[:, :, 0]

    def pull(g: np.ndarray) -> np.ndarray:
        g3 = g.reshape(n, channels, out_len)
        dx3 = np.zeros((n, channels, length))
        ii, cc = np.meshgrid(np.arange(n), np.arange(channels), indexing="ij")
        for t in range(out_len):
            dx3[ii, cc, argpos[:, :, t]] += g3[:, :, t]
        return dx3.reshape(n, channels * length)

    return DiffNode(
        Tensor2D(out3.reshape(n, channels * out_len)), parents=[(x, pull)], op="max_pool1d"
    )
