"""
A small reverse-mode differentiation engine over float64 numpy arrays.

Tensors are unbatched ``(C, H, W)`` feature maps (or arbitrary arrays for the
elementwise ops). Every operator records a closure that maps the output gradient
to one gradient per input; ``backward`` walks the graph in reverse topological order.
"""

from collections.abc import Callable, Sequence

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .geometry import Box
from .roialign import sampling_matrix


class ShapeError(ValueError):
    """Raised when operator inputs have incompatible shapes."""

    def __init__(self, op: str, first: tuple, second: tuple):
        super().__init__(f"{op}: incompatible shapes {tuple(first)} and {tuple(second)}")
        self.first = tuple(first)
        self.second = tuple(second)


BackwardFn = Callable[[np.ndarray], Sequence[np.ndarray | None]]


class Tensor:
    """A value in the graph; leaves with ``requires_grad`` receive ``.grad`` after backward."""

    __slots__ = ("data", "grad", "requires_grad", "parents", "backward_fn", "name")

    def __init__(
        self,
        data,
        requires_grad: bool = False,
        parents: tuple["Tensor", ...] = (),
        backward_fn: BackwardFn | None = None,
        name: str = "",
    ):
        self.data = np.asarray(data, dtype=np.float64)
        if self.data.ndim > 4:
            raise ValueError(f"Tensor rank must be <= 4, got shape {self.data.shape}")
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad
        self.parents = parents
        self.backward_fn = backward_fn
        self.name = name

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def tracked(self) -> bool:
        return self.requires_grad or self.backward_fn is not None

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:
        label = f" '{self.name}'" if self.name else ""
        return f"Tensor{label}(shape={self.shape}, requires_grad={self.requires_grad})"


def _node(data: np.ndarray, inputs: tuple[Tensor, ...], backward_fn: BackwardFn) -> Tensor:
    if any(t.tracked for t in inputs):
        return Tensor(data, parents=inputs, backward_fn=backward_fn)
    return Tensor(data)


def _topological(roots: Sequence[Tensor]) -> list[Tensor]:
    order: list[Tensor] = []
    seen: set[int] = set()
    for root in roots:
        stack = [(root, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                order.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            stack.extend((p, False) for p in node.parents if p.tracked and id(p) not in seen)
    return order


def backward(seeds: Sequence[tuple[Tensor, np.ndarray]]) -> None:
    """
    Propagate seed gradients (d loss / d output) to every leaf that requires grad.

    Leaf gradients accumulate into ``.grad`` so several backward passes (a batch)
    sum up; call ``zero_grad`` between optimizer steps.
    """
    grads: dict[int, np.ndarray] = {}
    for tensor, seed in seeds:
        seed = np.asarray(seed, dtype=np.float64)
        if seed.shape != tensor.shape:
            raise ShapeError("backward seed", tensor.shape, seed.shape)
        grads[id(tensor)] = grads[id(tensor)] + seed if id(tensor) in grads else seed

    for node in reversed(_topological([t for t, _ in seeds])):
        g = grads.pop(id(node), None)
        if g is None:
            continue
        if node.backward_fn is None:
            if node.requires_grad:
                node.grad = g.copy() if node.grad is None else node.grad + g
            continue
        for parent, pg in zip(node.parents, node.backward_fn(g)):
            if pg is None or not parent.tracked:
                continue
            grads[id(parent)] = grads[id(parent)] + pg if id(parent) in grads else pg


def _check_map(op: str, x: Tensor) -> None:
    if x.data.ndim != 3:
        raise ShapeError(op, x.shape, ("C", "H", "W"))


def conv2d(x: Tensor, weight: Tensor, bias: Tensor | None = None) -> Tensor:
    """Stride-1 'same' convolution of a (C, H, W) map with an (O, C, k, k) kernel, k odd."""
    _check_map("conv2d", x)
    if weight.data.ndim != 4 or weight.shape[1] != x.shape[0]:
        raise ShapeError("conv2d", x.shape, weight.shape)
    out_ch, _, k, k2 = weight.shape
    if k != k2 or k % 2 == 0:
        raise ShapeError("conv2d kernel", weight.shape, (out_ch, x.shape[0], "odd", "odd"))
    if bias is not None and bias.shape != (out_ch,):
        raise ShapeError("conv2d bias", weight.shape, bias.shape)
    pad = k // 2
    _, h, w = x.shape
    xp = np.pad(x.data, ((0, 0), (pad, pad), (pad, pad)))
    windows = sliding_window_view(xp, (k, k), axis=(1, 2))  # (C, H, W, k, k)
    out = np.einsum("chwij,ocij->ohw", windows, weight.data, optimize=True)
    if bias is not None:
        out = out + bias.data[:, None, None]

    def grad_fn(g):
        gw = np.einsum("ohw,chwij->ocij", g, windows, optimize=True)
        gxp = np.zeros_like(xp)
        for i in range(k):
            for j in range(k):
                gxp[:, i : i + h, j : j + w] += np.einsum("ohw,oc->chw", g, weight.data[:, :, i, j])
        gx = gxp[:, pad : pad + h, pad : pad + w]
        return (gx, gw) if bias is None else (gx, gw, g.sum(axis=(1, 2)))

    inputs = (x, weight) if bias is None else (x, weight, bias)
    return _node(out, inputs, grad_fn)


def conv_transpose2d(x: Tensor, weight: Tensor, bias: Tensor | None = None, stride: int = 2, padding: int = 1) -> Tensor:
    """Transposed convolution with a (C, O, k, k) kernel; 4x4/stride 2/pad 1 doubles H and W."""
    _check_map("conv_transpose2d", x)
    if weight.data.ndim != 4 or weight.shape[0] != x.shape[0]:
        raise ShapeError("conv_transpose2d", x.shape, weight.shape)
    _, out_ch, k, _ = weight.shape
    if bias is not None and bias.shape != (out_ch,):
        raise ShapeError("conv_transpose2d bias", weight.shape, bias.shape)
    _, h, w = x.shape
    s = stride
    full_h, full_w = (h - 1) * s + k, (w - 1) * s + k
    out_h, out_w = full_h - 2 * padding, full_w - 2 * padding
    full = np.zeros((out_ch, full_h, full_w))
    for i in range(k):
        for j in range(k):
            full[:, i : i + s * h : s, j : j + s * w : s] += np.einsum("chw,co->ohw", x.data, weight.data[:, :, i, j])
    out = full[:, padding : padding + out_h, padding : padding + out_w]
    if bias is not None:
        out = out + bias.data[:, None, None]

    def grad_fn(g):
        gfull = np.zeros((out_ch, full_h, full_w))
        gfull[:, padding : padding + out_h, padding : padding + out_w] = g
        gx = np.zeros_like(x.data)
        gw = np.zeros_like(weight.data)
        for i in range(k):
            for j in range(k):
                tap = gfull[:, i : i + s * h : s, j : j + s * w : s]
                gx += np.einsum("ohw,co->chw", tap, weight.data[:, :, i, j])
                gw[:, :, i, j] = np.einsum("chw,ohw->co", x.data, tap)
        return (gx, gw) if bias is None else (gx, gw, g.sum(axis=(1, 2)))

    inputs = (x, weight) if bias is None else (x, weight, bias)
    return _node(out, inputs, grad_fn)


def relu(x: Tensor) -> Tensor:
    mask = x.data > 0
    return _node(np.where(mask, x.data, 0.0), (x,), lambda g: (g * mask,))


def sigmoid(x: Tensor) -> Tensor:
    y = np.exp(-np.logaddexp(0.0, -x.data))
    return _node(y, (x,), lambda g: (g * y * (1.0 - y),))


def add(a: Tensor, b: Tensor) -> Tensor:
    if a.shape != b.shape:
        raise ShapeError("add", a.shape, b.shape)
    return _node(a.data + b.data, (a, b), lambda g: (g, g))


def concat(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    """Concatenate along ``axis`` (channels for feature maps)."""
    tensors = tuple(tensors)
    first = tensors[0]
    for t in tensors[1:]:
        other = [d for i, d in enumerate(t.shape) if i != axis % t.data.ndim]
        ref = [d for i, d in enumerate(first.shape) if i != axis % first.data.ndim]
        if t.data.ndim != first.data.ndim or other != ref:
            raise ShapeError("concat", first.shape, t.shape)
    sizes = np.cumsum([t.shape[axis] for t in tensors])[:-1]
    out = np.concatenate([t.data for t in tensors], axis=axis)
    return _node(out, tensors, lambda g: tuple(np.split(g, sizes, axis=axis)))


def max_pool2d(x: Tensor) -> Tensor:
    """2x2 max-pool with stride 2, ceil mode (odd borders pool over the cells present)."""
    _check_map("max_pool2d", x)
    c, h, w = x.shape
    oh, ow = -(-h // 2), -(-w // 2)
    xp = np.full((c, 2 * oh, 2 * ow), -np.inf)
    xp[:, :h, :w] = x.data
    blocks = xp.reshape(c, oh, 2, ow, 2).transpose(0, 1, 3, 2, 4).reshape(c, oh, ow, 4)
    winner = blocks.argmax(axis=-1)[..., None]
    out = np.take_along_axis(blocks, winner, axis=-1)[..., 0]

    def grad_fn(g):
        gb = np.zeros((c, oh, ow, 4))
        np.put_along_axis(gb, winner, g[..., None], axis=-1)
        full = gb.reshape(c, oh, ow, 2, 2).transpose(0, 1, 3, 2, 4).reshape(c, 2 * oh, 2 * ow)
        return (full[:, :h, :w],)

    return _node(out, (x,), grad_fn)


def nearest_matrix(src: int, dst: int) -> np.ndarray:
    """(dst, src) one-hot rows selecting floor(i * src / dst)."""
    idx = np.minimum((np.arange(dst) * src) // dst, src - 1)
    m = np.zeros((dst, src))
    m[np.arange(dst), idx] = 1.0
    return m


def bilinear_matrix(src: int, dst: int) -> np.ndarray:
    """(dst, src) linear-interpolation rows, half-pixel centres, edge-clamped."""
    pos = np.clip((np.arange(dst) + 0.5) * src / dst - 0.5, 0.0, src - 1)
    lo = np.floor(pos).astype(np.int64)
    hi = np.minimum(lo + 1, src - 1)
    frac = pos - lo
    m = np.zeros((dst, src))
    rows = np.arange(dst)
    np.add.at(m, (rows, lo), 1.0 - frac)
    np.add.at(m, (rows, hi), frac)
    return m


def _resample(x: Tensor, rows: np.ndarray, cols: np.ndarray) -> Tensor:
    out = np.einsum("ph,chw,qw->cpq", rows, x.data, cols, optimize=True)
    return _node(out, (x,), lambda g: (np.einsum("ph,cpq,qw->chw", rows, g, cols, optimize=True),))


def upsample_nearest(x: Tensor, size: tuple[int, int]) -> Tensor:
    """Nearest-neighbour resize to ``size`` = (H, W); FPN top-down path."""
    _check_map("upsample_nearest", x)
    return _resample(x, nearest_matrix(x.shape[1], size[0]), nearest_matrix(x.shape[2], size[1]))


def upsample_bilinear(x: Tensor, size: tuple[int, int]) -> Tensor:
    _check_map("upsample_bilinear", x)
    return _resample(x, bilinear_matrix(x.shape[1], size[0]), bilinear_matrix(x.shape[2], size[1]))


def roi_align(fmap: Tensor, roi: Box, stride: int, out_size: int = 14, sampling_ratio: int = 2) -> Tensor:
    """Differentiable RoIAlign of one RoI from a (C, H, W) map."""
    _check_map("roi_align", fmap)
    _, h, w = fmap.shape
    a_y, a_x = sampling_matrix(roi, h, w, stride, out_size, sampling_ratio)
    return _resample(fmap, a_y, a_x)
