"""Minimal dense-tensor engine with reverse-mode gradients.

Double precision everywhere, NHWC layout, no fusion, no reduction
reordering: every run of the same graph is bit-identical. Each operator
records its parents and a backward closure; ``backward`` on a scalar loss
topologically sorts the recorded tape and accumulates into ``grad`` buffers
of every tensor with ``requires_grad``.

Any NaN/Inf produced by a forward op raises NumericalError immediately.
"""
from __future__ import annotations

import json
from typing import Callable, Iterable, Optional, Sequence, Union

import numpy as np

from .errors import ContractError, IOFormatError, NumericalError

ArrayLike = Union[float, int, Sequence, np.ndarray, "Tensor"]


def _check_finite(data: np.ndarray, op: str) -> None:
    if not np.all(np.isfinite(data)):
        raise NumericalError(f"non-finite values produced by {op}")


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward")

    def __init__(self, data: ArrayLike, requires_grad: bool = False):
        arr = np.asarray(data, dtype=np.float64)
        _check_finite(arr, "tensor construction")
        self.data = arr
        self.grad: Optional[np.ndarray] = None
        self.requires_grad = bool(requires_grad)
        self._parents: tuple[Tensor, ...] = ()
        self._backward: Optional[Callable[[np.ndarray], tuple]] = None

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    def item(self) -> float:
        return float(self.data)

    def zero_grad(self) -> None:
        self.grad = None

    def detach(self) -> "Tensor":
        return Tensor(self.data.copy())

    def backward(self) -> None:
        backward(self)

    # operator sugar ------------------------------------------------------
    def __add__(self, other: ArrayLike) -> "Tensor":
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other: ArrayLike) -> "Tensor":
        return sub(self, other)

    def __rsub__(self, other: ArrayLike) -> "Tensor":
        return sub(as_tensor(other), self)

    def __mul__(self, other: ArrayLike) -> "Tensor":
        return mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other: Union[float, int]) -> "Tensor":
        return mul(self, 1.0 / float(other))

    def __neg__(self) -> "Tensor":
        return mul(self, -1.0)

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"


def as_tensor(x: ArrayLike) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _from_op(data: np.ndarray, parents: tuple[Tensor, ...],
             bw: Callable[[np.ndarray], tuple], op: str) -> Tensor:
    _check_finite(data, op)
    out = Tensor.__new__(Tensor)
    out.data = data
    out.grad = None
    out.requires_grad = any(p.requires_grad for p in parents)
    out._parents = parents if out.requires_grad else ()
    out._backward = bw if out.requires_grad else None
    return out


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum a broadcasted gradient back down to ``shape``."""
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for ax, size in enumerate(shape):
        if size == 1 and grad.shape[ax] != 1:
            grad = grad.sum(axis=ax, keepdims=True)
    return grad.reshape(shape)


def backward(loss: Tensor) -> None:
    """Accumulate d(loss)/d(t) into ``t.grad`` for every reachable tensor
    with requires_grad. Repeated calls accumulate until grads are zeroed."""
    if loss.shape != ():
        raise ContractError(f"backward requires a scalar, got shape {loss.shape}")
    # iterative post-order topological sort over the recorded tape
    order: list[Tensor] = []
    visited: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(loss, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in visited:
            continue
        visited.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if p.requires_grad and id(p) not in visited:
                stack.append((p, False))
    flows: dict[int, np.ndarray] = {id(loss): np.ones((), dtype=np.float64)}
    for node in reversed(order):
        g = flows.pop(id(node), None)
        if g is None:
            continue
        if node.requires_grad:
            if node.grad is None:
                node.grad = np.zeros_like(node.data)
            node.grad += g
        if node._backward is None:
            continue
        parent_grads = node._backward(g)
        for p, pg in zip(node._parents, parent_grads):
            if pg is None or not p.requires_grad:
                continue
            acc = flows.get(id(p))
            flows[id(p)] = pg if acc is None else acc + pg


def zero_grads(params: Iterable[Tensor]) -> None:
    for p in params:
        p.zero_grad()


# ---------------------------------------------------------------------------
# elementwise and structural ops
# ---------------------------------------------------------------------------

def add(a: ArrayLike, b: ArrayLike) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    data = a.data + b.data
    return _from_op(data, (a, b), lambda g: (
        _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)), "add")


def sub(a: ArrayLike, b: ArrayLike) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    data = a.data - b.data
    return _from_op(data, (a, b), lambda g: (
        _unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)), "sub")


def mul(a: ArrayLike, b: ArrayLike) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    data = a.data * b.data
    return _from_op(data, (a, b), lambda g: (
        _unbroadcast(g * b.data, a.shape),
        _unbroadcast(g * a.data, b.shape)), "mul")


def maximum(a: ArrayLike, b: ArrayLike) -> Tensor:
    """Elementwise max; on ties the gradient goes to the first argument."""
    a, b = as_tensor(a), as_tensor(b)
    if a.shape != b.shape:
        raise ContractError(f"maximum needs equal shapes, got {a.shape} vs {b.shape}")
    take_a = a.data >= b.data
    data = np.where(take_a, a.data, b.data)
    return _from_op(data, (a, b), lambda g: (
        np.where(take_a, g, 0.0), np.where(take_a, 0.0, g)), "maximum")


def sigmoid(x: ArrayLike) -> Tensor:
    x = as_tensor(x)
    data = np.empty_like(x.data)
    pos = x.data >= 0
    data[pos] = 1.0 / (1.0 + np.exp(-x.data[pos]))
    e = np.exp(x.data[~pos])
    data[~pos] = e / (1.0 + e)
    return _from_op(data, (x,), lambda g: (g * data * (1.0 - data),), "sigmoid")


def softplus(x: ArrayLike) -> Tensor:
    x = as_tensor(x)
    data = np.maximum(x.data, 0.0) + np.log1p(np.exp(-np.abs(x.data)))
    sig = np.empty_like(x.data)
    pos = x.data >= 0
    sig[pos] = 1.0 / (1.0 + np.exp(-x.data[pos]))
    e = np.exp(x.data[~pos])
    sig[~pos] = e / (1.0 + e)
    return _from_op(data, (x,), lambda g: (g * sig,), "softplus")


def exp(x: ArrayLike) -> Tensor:
    x = as_tensor(x)
    data = np.exp(x.data)
    return _from_op(data, (x,), lambda g: (g * data,), "exp")


def log(x: ArrayLike) -> Tensor:
    x = as_tensor(x)
    with np.errstate(divide="ignore", invalid="ignore"):
        data = np.log(x.data)
    return _from_op(data, (x,), lambda g: (g / x.data,), "log")


def absolute(x: ArrayLike) -> Tensor:
    x = as_tensor(x)
    data = np.abs(x.data)
    return _from_op(data, (x,), lambda g: (g * np.sign(x.data),), "abs")


def pow_const(x: ArrayLike, p: float) -> Tensor:
    x = as_tensor(x)
    data = x.data ** p
    return _from_op(data, (x,), lambda g: (g * p * x.data ** (p - 1.0),), "pow")


def clamp(x: ArrayLike, lo: float, hi: float) -> Tensor:
    x = as_tensor(x)
    data = np.clip(x.data, lo, hi)
    mask = (x.data >= lo) & (x.data <= hi)
    return _from_op(data, (x,), lambda g: (np.where(mask, g, 0.0),), "clamp")


def softmax(x: ArrayLike, axis: int = -1) -> Tensor:
    x = as_tensor(x)
    shifted = x.data - np.max(x.data, axis=axis, keepdims=True)
    e = np.exp(shifted)
    data = e / np.sum(e, axis=axis, keepdims=True)

    def bw(g):
        dot = np.sum(g * data, axis=axis, keepdims=True)
        return (data * (g - dot),)

    return _from_op(data, (x,), bw, "softmax")


def reshape(x: ArrayLike, shape: Sequence[int]) -> Tensor:
    x = as_tensor(x)
    shape = tuple(shape)
    data = x.data.reshape(shape)
    return _from_op(data, (x,), lambda g: (g.reshape(x.shape),), "reshape")


def transpose2d(x: ArrayLike) -> Tensor:
    x = as_tensor(x)
    if x.data.ndim != 2:
        raise ContractError(f"transpose2d expects rank 2, got {x.shape}")
    return _from_op(x.data.T.copy(), (x,), lambda g: (g.T,), "transpose2d")


def concat(a: ArrayLike, b: ArrayLike, axis: int) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if not (-a.data.ndim <= axis < a.data.ndim):
        raise ContractError(f"concat axis {axis} out of bounds for rank {a.data.ndim}")
    data = np.concatenate([a.data, b.data], axis=axis)
    split = a.shape[axis]

    def bw(g):
        ga, gb = np.split(g, [split], axis=axis)
        return ga, gb

    return _from_op(data, (a, b), bw, "concat")


def take_axis0(x: ArrayLike, index) -> Tensor:
    """x[index] along axis 0 for an int or an int array; backward scatters."""
    x = as_tensor(x)
    idx = np.asarray(index)
    data = x.data[idx]

    def bw(g):
        dz = np.zeros_like(x.data)
        np.add.at(dz, idx, g)
        return (dz,)

    return _from_op(data.copy(), (x,), bw, "take_axis0")


def repeat_rows(x: ArrayLike, k: int) -> Tensor:
    """Repeat each axis-0 slice k times consecutively: [M, ...] -> [M*k, ...]."""
    x = as_tensor(x)
    data = np.repeat(x.data, k, axis=0)
    m = x.shape[0]

    def bw(g):
        return (g.reshape((m, k) + x.shape[1:]).sum(axis=1),)

    return _from_op(data, (x,), bw, "repeat_rows")


def tile_vector(x: ArrayLike, m: int) -> Tensor:
    """Broadcast a vector [C] to rows [m, C]; backward sums over rows."""
    x = as_tensor(x)
    if x.data.ndim != 1:
        raise ContractError(f"tile_vector expects rank 1, got {x.shape}")
    data = np.tile(x.data, (m, 1))
    return _from_op(data, (x,), lambda g: (g.sum(axis=0),), "tile_vector")


# ---------------------------------------------------------------------------
# reductions
# ---------------------------------------------------------------------------

def tsum(x: ArrayLike) -> Tensor:
    x = as_tensor(x)
    data = np.asarray(x.data.sum())
    return _from_op(data, (x,), lambda g: (np.broadcast_to(g, x.shape).copy(),),
                    "sum")


def tmean(x: ArrayLike) -> Tensor:
    x = as_tensor(x)
    n = x.data.size
    data = np.asarray(x.data.sum() / n)
    return _from_op(data, (x,),
                    lambda g: (np.broadcast_to(g / n, x.shape).copy(),), "mean")


def mean_axis(x: ArrayLike, axis: int) -> Tensor:
    x = as_tensor(x)
    n = x.shape[axis]
    data = x.data.mean(axis=axis)

    def bw(g):
        return (np.broadcast_to(np.expand_dims(g / n, axis), x.shape).copy(),)

    return _from_op(data, (x,), bw, "mean_axis")


def mean_pool_spatial(x: ArrayLike) -> Tensor:
    """[N, H, W, C] -> [N, C] mean over the spatial axes."""
    x = as_tensor(x)
    if x.data.ndim != 4:
        raise ContractError(f"mean_pool_spatial expects rank 4, got {x.shape}")
    n_sp = x.shape[1] * x.shape[2]
    data = x.data.mean(axis=(1, 2))

    def bw(g):
        return (np.broadcast_to(g[:, None, None, :] / n_sp, x.shape).copy(),)

    return _from_op(data, (x,), bw, "mean_pool_spatial")


# ---------------------------------------------------------------------------
# contractions and structured ops
# ---------------------------------------------------------------------------

def matmul(a: ArrayLike, b: ArrayLike) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.data.ndim != 2 or b.data.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ContractError(f"matmul shapes incompatible: {a.shape} x {b.shape}")
    data = a.data @ b.data
    return _from_op(data, (a, b), lambda g: (g @ b.data.T, a.data.T @ g),
                    "matmul")


def linear(x: ArrayLike, w: ArrayLike, b: ArrayLike) -> Tensor:
    """x[..., Cin] @ w[Cin, Cout] + b[Cout]."""
    x, w, b = as_tensor(x), as_tensor(w), as_tensor(b)
    cin, cout = w.shape
    if x.shape[-1] != cin or b.shape != (cout,):
        raise ContractError(
            f"linear shapes incompatible: x{x.shape} w{w.shape} b{b.shape}")
    flat = x.data.reshape(-1, cin)
    data = (flat @ w.data + b.data).reshape(x.shape[:-1] + (cout,))

    def bw(g):
        gf = g.reshape(-1, cout)
        return ((gf @ w.data.T).reshape(x.shape), flat.T @ gf, gf.sum(axis=0))

    return _from_op(data, (x, w, b), bw, "linear")


def conv2d(x: ArrayLike, w: ArrayLike, b: ArrayLike, stride: int = 1,
           padding: int = 0) -> Tensor:
    """Cross-correlation on NHWC input with zero padding.

    x: [N, H, W, Cin], w: [k, k, Cin, Cout], b: [Cout].
    Output spatial size is floor((H + 2*padding - k) / stride) + 1.
    """
    x, w, b = as_tensor(x), as_tensor(w), as_tensor(b)
    if x.data.ndim != 4 or w.data.ndim != 4:
        raise ContractError(f"conv2d expects NHWC input and [k,k,Cin,Cout] "
                            f"weight, got {x.shape} and {w.shape}")
    k = w.shape[0]
    if k not in (1, 3) or w.shape[1] != k:
        raise ContractError(f"conv2d kernel must be square 1x1 or 3x3, got {w.shape}")
    n, h, wd, cin = x.shape
    cout = w.shape[3]
    if w.shape[2] != cin or b.shape != (cout,):
        raise ContractError(
            f"conv2d channel mismatch: x{x.shape} w{w.shape} b{b.shape}")
    if stride < 1:
        raise ContractError(f"conv2d stride must be >= 1, got {stride}")
    if h + 2 * padding < k or wd + 2 * padding < k:
        raise ContractError("conv2d input smaller than kernel")

    xp = np.pad(x.data, ((0, 0), (padding, padding), (padding, padding), (0, 0)))
    cols = np.lib.stride_tricks.sliding_window_view(xp, (k, k), axis=(1, 2))
    cols = cols[:, ::stride, ::stride]  # [N, Ho, Wo, Cin, k, k]
    ho, wo = cols.shape[1], cols.shape[2]
    data = np.einsum("nhwcij,ijcd->nhwd", cols, w.data, optimize=True) + b.data

    def bw(g):
        dw = np.einsum("nhwcij,nhwd->ijcd", cols, g, optimize=True)
        db = g.sum(axis=(0, 1, 2))
        dcols = np.einsum("nhwd,ijcd->nhwcij", g, w.data, optimize=True)
        dxp = np.zeros_like(xp)
        for i in range(k):
            for j in range(k):
                dxp[:, i:i + stride * ho:stride, j:j + stride * wo:stride, :] += \
                    dcols[:, :, :, :, i, j]
        if padding:
            dx = dxp[:, padding:padding + h, padding:padding + wd, :]
        else:
            dx = dxp
        return dx, dw, db

    return _from_op(data, (x, w, b), bw, "conv2d")


def upsample_nearest(x: ArrayLike, factor: int) -> Tensor:
    """Replicate each spatial cell factor x factor. Accepts [H, W, C] or
    [N, H, W, C]."""
    x = as_tensor(x)
    if factor < 1:
        raise ContractError(f"upsample factor must be >= 1, got {factor}")
    nd = x.data.ndim
    if nd == 3:
        hx, wx = 0, 1
    elif nd == 4:
        hx, wx = 1, 2
    else:
        raise ContractError(f"upsample_nearest expects rank 3 or 4, got {x.shape}")
    data = np.repeat(np.repeat(x.data, factor, axis=hx), factor, axis=wx)

    def bw(g):
        shape = list(x.shape)
        shape.insert(wx + 1, factor)
        shape.insert(hx + 1, factor)
        return (g.reshape(shape).sum(axis=(hx + 1, wx + 2)),)

    return _from_op(data, (x,), bw, "upsample_nearest")


def scatter_max_project(src: ArrayLike, view_idx: np.ndarray,
                        pix_row: np.ndarray, pix_col: np.ndarray,
                        src_row: np.ndarray, src_col: np.ndarray,
                        n_views: int, out_hw: tuple[int, int]) -> Tensor:
    """Scatter per-cell feature vectors onto per-view pixel canvases.

    src is [Hs, Ws, C]; entry t writes src[src_row[t], src_col[t], :] to
    canvas pixel (view_idx[t], pix_row[t], pix_col[t]). The first writer of
    a pixel assigns; later writers combine per channel by max (ties keep the
    earlier writer). Pixels never written stay exactly zero. Gradient flows
    to the winning source cell of each (pixel, channel).
    """
    src = as_tensor(src)
    hs, ws, c = src.shape
    oh, ow = out_hw
    data = np.zeros((n_views, oh, ow, c), dtype=np.float64)
    winner = np.full((n_views, oh, ow, c), -1, dtype=np.int64)
    for t in range(len(view_idx)):
        v, r, q = view_idx[t], pix_row[t], pix_col[t]
        i, j = src_row[t], src_col[t]
        vals = src.data[i, j, :]
        w = winner[v, r, q, :]
        sel = (w < 0) | (vals > data[v, r, q, :])
        if sel.any():
            data[v, r, q, sel] = vals[sel]
            winner[v, r, q, sel] = i * ws + j

    def bw(g):
        dsrc = np.zeros_like(src.data)
        mask = winner >= 0
        if mask.any():
            chan = np.broadcast_to(np.arange(c), winner.shape)
            np.add.at(dsrc.reshape(-1, c), (winner[mask], chan[mask]), g[mask])
        return (dsrc,)

    return _from_op(data, (src,), bw, "scatter_max_project")


# ---------------------------------------------------------------------------
# parameter checkpoint format: one JSON manifest line, then the raw
# little-endian float64 payload of each tensor in manifest order.
# ---------------------------------------------------------------------------

CHECKPOINT_FORMAT = "vecmap-tensors-v1"


def save_tensors(path, named: dict[str, np.ndarray]) -> None:
    manifest = {
        "format": CHECKPOINT_FORMAT,
        "tensors": [{"name": k, "shape": list(v.shape)} for k, v in named.items()],
    }
    header = json.dumps(manifest, sort_keys=True).encode("utf-8")
    # pad so the float64 payload starts 8-byte aligned (zero-copy consumers)
    header += b" " * (-(len(header) + 1) % 8)
    with open(path, "wb") as f:
        f.write(header)
        f.write(b"\n")
        for v in named.values():
            f.write(np.ascontiguousarray(v, dtype="<f8").tobytes())


def load_tensors(path) -> dict[str, np.ndarray]:
    with open(path, "rb") as f:
        header = f.readline()
        try:
            manifest = json.loads(header.decode("utf-8"))
        except (UnicodeDecodeError, json.JSONDecodeError) as e:
            raise IOFormatError(f"bad checkpoint header in {path}: {e}") from e
        if manifest.get("format") != CHECKPOINT_FORMAT:
            raise IOFormatError(f"unknown checkpoint format in {path}")
        out: dict[str, np.ndarray] = {}
        for entry in manifest["tensors"]:
            shape = tuple(int(s) for s in entry["shape"])
            count = int(np.prod(shape)) if shape else 1
            buf = f.read(count * 8)
            if len(buf) != count * 8:
                raise IOFormatError(f"truncated checkpoint payload in {path}")
            out[entry["name"]] = np.frombuffer(buf, dtype="<f8").reshape(shape).copy()
        if f.read(1):
            raise IOFormatError(f"trailing bytes in checkpoint {path}")
    return out
