"""Dense tensors with a recording tape for reverse-mode differentiation.

Only the operations the rest of the package needs are provided. Every op
computes its result eagerly with numpy; when a :class:`Tape` is active and
at least one input requires a gradient, the op also appends a node holding
a closure that maps the output gradient to input gradients.

    >>> x = Tensor([1.0, 2.0], requires_grad=True, dtype=np.float64)
    >>> with Tape() as tape:
    ...     loss = sum_all(mul(x, x))
    >>> tape.backward(loss)[x]
    array([2., 4.])
"""
from __future__ import annotations

import math
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

_DTYPES = (np.dtype(np.float32), np.dtype(np.float64))


class NonFiniteError(FloatingPointError):
    """Raised when an operation produces NaN or Inf."""


class TapeError(RuntimeError):
    pass


class Tensor:
    """Immutable dense array of float32 or float64 values.

    ``name`` is optional and only used in diagnostics and checkpoints.
    Tensors hash by identity, so they can key gradient dictionaries.
    """

    __slots__ = ("data", "requires_grad", "name", "_node")

    def __init__(self, data, requires_grad=False, name=None, dtype=None):
        arr = np.array(data, dtype=dtype if dtype is not None else None, copy=True)
        if arr.dtype not in _DTYPES:
            arr = arr.astype(np.float32)
        self._init(arr, requires_grad, name)

    def _init(self, arr, requires_grad, name):
        arr.setflags(write=False)
        self.data = arr
        self.requires_grad = bool(requires_grad)
        self.name = name
        self._node = None

    @classmethod
    def _wrap(cls, arr, requires_grad=False, name=None):
        t = cls.__new__(cls)
        t._init(arr, requires_grad, name)
        return t

    @property
    def shape(self):
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def size(self):
        return self.data.size

    def numpy(self):
        return self.data

    def item(self):
        if self.size != 1:
            raise ValueError(f"tensor of shape {self.shape} is not a scalar")
        return float(self.data.reshape(-1)[0])

    def detach(self, requires_grad=False, name=None):
        return Tensor._wrap(self.data, requires_grad, name or self.name)

    def astype(self, dtype):
        return Tensor(self.data, self.requires_grad, self.name, dtype=dtype)

    def __repr__(self):
        label = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}, dtype={self.dtype}{label})"

    def __add__(self, other):
        return add(self, other) if isinstance(other, Tensor) else add_scalar(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other) if isinstance(other, Tensor) else add_scalar(self, -other)

    def __mul__(self, other):
        return mul(self, other) if isinstance(other, Tensor) else scale(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        return scale(self, -1.0)


def zeros(shape, dtype=np.float32, requires_grad=False, name=None):
    return Tensor._wrap(np.zeros(shape, dtype=dtype), requires_grad, name)


def ones(shape, dtype=np.float32, requires_grad=False, name=None):
    return Tensor._wrap(np.ones(shape, dtype=dtype), requires_grad, name)


def constant(value, like: Tensor):
    return Tensor(np.broadcast_to(np.asarray(value, dtype=like.dtype), like.shape))


# ---------------------------------------------------------------------------
# Tape


@dataclass(eq=False)
class _Node:
    op: str
    inputs: tuple
    output: Tensor
    backward_fn: Callable
    tape: "Tape"


@dataclass(eq=False)
class Tape:
    """Ordered record of differentiable operations.

    Nodes are appended in execution order, which is already topological.
    A tape can be differentiated exactly once.
    """

    nodes: list = field(default_factory=list)
    consumed: bool = False

    def __enter__(self):
        _ACTIVE.append(self)
        return self

    def __exit__(self, *exc):
        _ACTIVE.remove(self)
        return False

    def backward(self, loss: Tensor) -> dict:
        """Return ``{leaf tensor: gradient array}`` for every requires_grad leaf."""
        if loss.size != 1:
            raise ValueError(f"backward needs a scalar loss, got shape {loss.shape}")
        if self.consumed:
            raise TapeError("tape already consumed; record the computation again")
        if loss._node is None or loss._node.tape is not self:
            raise TapeError("loss was not recorded on this tape")
        self.consumed = True

        grads = {id(loss): np.ones(loss.shape, dtype=loss.dtype)}
        leaves = {}
        for node in reversed(self.nodes):
            g = grads.pop(id(node.output), None)
            if g is None:
                continue
            in_grads = node.backward_fn(g)
            for t, gi in zip(node.inputs, in_grads):
                if gi is None or not t.requires_grad:
                    continue
                if t._node is None:
                    leaves.setdefault(id(t), [t, None])
                    slot = leaves[id(t)]
                    slot[1] = gi if slot[1] is None else slot[1] + gi
                else:
                    prev = grads.get(id(t))
                    grads[id(t)] = gi if prev is None else prev + gi
        self.release()
        return {t: g.astype(t.dtype, copy=False) for t, g in leaves.values()}

    def release(self):
        """Drop recorded nodes; recorded outputs become plain (leaf) tensors.

        Output tensors and their nodes reference each other, so without this
        a graph would linger until the cyclic garbage collector runs.
        """
        for node in self.nodes:
            node.output._node = None
        self.nodes.clear()


_ACTIVE: list = []


def backward(loss: Tensor) -> dict:
    """Differentiate ``loss`` on the tape that recorded it."""
    if loss.size != 1:
        raise ValueError(f"backward needs a scalar loss, got shape {loss.shape}")
    if loss._node is None:
        raise TapeError("loss was not produced under a recording tape")
    return loss._node.tape.backward(loss)


def _check_finite(arr, op, inputs):
    if not np.isfinite(arr).all():
        names = [t.name for t in inputs if isinstance(t, Tensor) and t.name]
        where = f" (inputs: {', '.join(names)})" if names else ""
        raise NonFiniteError(f"non-finite values produced by {op}{where}")


def record(op: str, out: np.ndarray, inputs: Sequence[Tensor], backward_fn: Callable) -> Tensor:
    """Wrap ``out`` as a Tensor and record it on the active tape if needed.

    ``backward_fn(grad_out)`` must return one gradient (or None) per input.
    """
    _check_finite(out, op, inputs)
    needs_grad = bool(_ACTIVE) and any(t.requires_grad for t in inputs)
    result = Tensor._wrap(out, requires_grad=needs_grad)
    if needs_grad:
        tape = _ACTIVE[-1]
        node = _Node(op, tuple(inputs), result, backward_fn, tape)
        result._node = node
        tape.nodes.append(node)
    return result


def _same_shape(a, b, op):
    if a.shape != b.shape:
        raise ValueError(f"{op}: shape mismatch {a.shape} vs {b.shape}")
    if a.dtype != b.dtype:
        raise TypeError(f"{op}: dtype mismatch {a.dtype} vs {b.dtype}")


# ---------------------------------------------------------------------------
# Elementwise


def add(a: Tensor, b: Tensor) -> Tensor:
    _same_shape(a, b, "add")
    return record("add", a.data + b.data, (a, b), lambda g: (g, g))


def sub(a: Tensor, b: Tensor) -> Tensor:
    _same_shape(a, b, "sub")
    return record("sub", a.data - b.data, (a, b), lambda g: (g, -g))


def mul(a: Tensor, b: Tensor) -> Tensor:
    _same_shape(a, b, "mul")
    return record("mul", a.data * b.data, (a, b), lambda g: (g * b.data, g * a.data))


def scale(a: Tensor, s: float) -> Tensor:
    s = a.dtype.type(s)
    return record("scale", a.data * s, (a,), lambda g: (g * s,))


def add_scalar(a: Tensor, c: float) -> Tensor:
    return record("add_scalar", a.data + a.dtype.type(c), (a,), lambda g: (g,))


def square(a: Tensor) -> Tensor:
    return record("square", a.data * a.data, (a,), lambda g: (2 * g * a.data,))


def log10(a: Tensor) -> Tensor:
    if np.any(a.data <= 0):
        raise NonFiniteError("log10 of a non-positive value")
    out = np.log10(a.data.astype(np.float64)).astype(a.dtype)
    k = a.dtype.type(1.0 / math.log(10.0))
    return record("log10", out, (a,), lambda g: (g * k / a.data,))


def sum_all(a: Tensor) -> Tensor:
    out = np.asarray(a.data.sum(dtype=np.float64), dtype=a.dtype)
    shape = a.shape
    return record("sum", out, (a,), lambda g: (np.full(shape, g, dtype=a.dtype),))


def mean_all(a: Tensor) -> Tensor:
    n = a.size
    out = np.asarray(a.data.sum(dtype=np.float64) / n, dtype=a.dtype)
    shape = a.shape
    return record("mean", out, (a,), lambda g: (np.full(shape, g / n, dtype=a.dtype),))


def add_n(tensors: Sequence[Tensor]) -> Tensor:
    """Sum of same-shape tensors (used for loss aggregation and joins)."""
    tensors = list(tensors)
    if not tensors:
        raise ValueError("add_n needs at least one tensor")
    for t in tensors[1:]:
        _same_shape(tensors[0], t, "add_n")
    out = tensors[0].data.copy()
    for t in tensors[1:]:
        out = out + t.data
    return record("add_n", out, tensors, lambda g: tuple(g for _ in tensors))


# ---------------------------------------------------------------------------
# Shape manipulation


def reshape(a: Tensor, shape) -> Tensor:
    old = a.shape
    return record("reshape", a.data.reshape(shape), (a,), lambda g: (g.reshape(old),))


def channel_slice(a: Tensor, start: int, stop: int) -> Tensor:
    """Channels ``start:stop`` of a (B, C, H, W) tensor."""
    shape = a.shape

    def bwd(g):
        full = np.zeros(shape, dtype=a.dtype)
        full[:, start:stop] = g
        return (full,)

    return record("channel_slice", np.ascontiguousarray(a.data[:, start:stop]), (a,), bwd)


def stack(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    tensors = list(tensors)
    out = np.stack([t.data for t in tensors], axis=axis)
    return record(
        "stack", out, tensors,
        lambda g: tuple(np.take(g, i, axis=axis) for i in range(len(tensors))),
    )


def outer(u: Tensor, v: Tensor) -> Tensor:
    """``u vᵀ`` for two vectors."""
    if u.ndim != 1 or v.ndim != 1:
        raise ValueError("outer expects vectors")
    return record("outer", np.outer(u.data, v.data), (u, v), lambda g: (g @ v.data, g.T @ u.data))


def tile_leading(a: Tensor, reps: int) -> Tensor:
    """Repeat ``a`` ``reps`` times along axis 0 (block order preserved)."""
    n = a.shape[0]
    out = np.concatenate([a.data] * reps, axis=0)
    return record(
        "tile", out, (a,),
        lambda g: (g.reshape((reps, n) + a.shape[1:]).sum(axis=0),),
    )


def flip_spatial(a: Tensor) -> Tensor:
    """Reverse the last two axes."""
    out = np.ascontiguousarray(a.data[..., ::-1, ::-1])
    return record("flip", out, (a,), lambda g: (np.ascontiguousarray(g[..., ::-1, ::-1]),))


def alternate_sign(a: Tensor) -> Tensor:
    """``a[n] * (-1)**n`` for a vector (the z -> -z substitution)."""
    signs = np.where(np.arange(a.shape[0]) % 2 == 0, 1, -1).astype(a.dtype)
    return record("alternate_sign", a.data * signs, (a,), lambda g: (g * signs,))


# ---------------------------------------------------------------------------
# Resampling and normalization


def _sum_2x2(a):
    # sums of non-overlapping 2x2 blocks; strided adds beat a reduction over tiny axes
    return (a[:, :, 0::2, 0::2] + a[:, :, 0::2, 1::2]) + (a[:, :, 1::2, 0::2] + a[:, :, 1::2, 1::2])


def resample_down2(x: Tensor) -> Tensor:
    """2x2 average pooling."""
    b, c, h, w = x.shape
    if h % 2 or w % 2:
        raise ValueError(f"resample_down2 needs even spatial dims, got {h}x{w}")
    out = _sum_2x2(x.data) * x.dtype.type(0.25)

    def bwd(g):
        g4 = (g * x.dtype.type(0.25))[:, :, :, None, :, None]
        return (np.broadcast_to(g4, (b, c, h // 2, 2, w // 2, 2)).reshape(b, c, h, w),)

    return record("resample_down2", out, (x,), bwd)


def resample_up2(x: Tensor) -> Tensor:
    """Nearest-neighbour 2x upsampling."""
    b, c, h, w = x.shape
    out = np.empty((b, c, 2 * h, 2 * w), dtype=x.dtype)
    for p in (0, 1):
        for q in (0, 1):
            out[:, :, p::2, q::2] = x.data

    def bwd(g):
        return (_sum_2x2(g),)

    return record("resample_up2", out, (x,), bwd)


LAYERNORM_EPS = 1e-6


def channel_layernorm(x: Tensor, gain: Tensor, bias: Tensor) -> Tensor:
    """Normalize across channels at every pixel, then apply a per-channel affine map."""
    c = x.shape[1]
    if gain.shape != (c,) or bias.shape != (c,):
        raise ValueError(f"layernorm affine params must have shape ({c},)")
    mu = x.data.mean(axis=1, keepdims=True)
    xc = x.data - mu
    var = (xc * xc).mean(axis=1, keepdims=True)
    inv = 1.0 / np.sqrt(var + x.dtype.type(LAYERNORM_EPS))
    xhat = xc * inv
    gv = gain.data[None, :, None, None]
    out = xhat * gv + bias.data[None, :, None, None]

    def bwd(g):
        dxhat = g * gv
        dx = inv * (dxhat - dxhat.mean(axis=1, keepdims=True)
                    - xhat * (dxhat * xhat).mean(axis=1, keepdims=True))
        return dx, (g * xhat).sum(axis=(0, 2, 3)), g.sum(axis=(0, 2, 3))

    return record("channel_layernorm", out, (x, gain, bias), bwd)


# ---------------------------------------------------------------------------
# Binary tensor files

MAGIC = b"MLWT"
VERSION = 1
_DTYPE_CODES = {np.dtype("<f4"): 0, np.dtype("<f8"): 1}
_CODE_DTYPES = {0: np.dtype("<f4"), 1: np.dtype("<f8")}


class TensorFormatError(ValueError):
    pass


def encode_tensor(t: Tensor | np.ndarray) -> bytes:
    arr = t.data if isinstance(t, Tensor) else np.asarray(t)
    arr = arr.astype(arr.dtype.newbyteorder("<"), copy=False)
    code = _DTYPE_CODES.get(arr.dtype)
    if code is None:
        raise TensorFormatError(f"unsupported dtype {arr.dtype}")
    header = MAGIC + struct.pack("<BBB", VERSION, code, arr.ndim)
    header += struct.pack(f"<{arr.ndim}I", *arr.shape)
    return header + np.ascontiguousarray(arr).tobytes()


def decode_tensor(raw: bytes) -> Tensor:
    if len(raw) < 7 or raw[:4] != MAGIC:
        raise TensorFormatError("not a tensor file (bad magic)")
    version, code, rank = struct.unpack("<BBB", raw[4:7])
    if version != VERSION:
        raise TensorFormatError(f"unsupported tensor file version {version}")
    if code not in _CODE_DTYPES:
        raise TensorFormatError(f"unknown dtype code {code}")
    off = 7 + 4 * rank
    if len(raw) < off:
        raise TensorFormatError("truncated header")
    dims = struct.unpack(f"<{rank}I", raw[7:off])
    dtype = _CODE_DTYPES[code]
    count = int(np.prod(dims, dtype=np.int64))
    if len(raw) - off != count * dtype.itemsize:
        raise TensorFormatError("payload length does not match the declared shape")
    arr = np.frombuffer(raw, dtype=dtype, count=count, offset=off).reshape(dims)
    return Tensor(arr.astype(dtype.newbyteorder("="), copy=True))


def save_tensor(path, t) -> None:
    Path(path).write_bytes(encode_tensor(t))


def load_tensor(path) -> Tensor:
    return decode_tensor(Path(path).read_bytes())
