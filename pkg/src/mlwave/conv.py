"""Grouped strided 2D cross-correlation and its adjoint.

Kernels follow the (out_ch, in_ch // groups, kh, kw) layout and are applied
without flipping. ``conv2d_transpose`` is defined as the exact adjoint of
``conv2d`` for the same kernel, stride, groups and padding, so it maps a
tensor of conv2d's output shape back to conv2d's input shape.

Loops run in numba; 1x1 dense convolutions go through BLAS matmul.
"""
from __future__ import annotations

from dataclasses import dataclass

import numba
import numpy as np

from .tensor import Tensor, record


@dataclass(frozen=True)
class Pad:
    """Spatial padding: ``mode`` is "zero" or "circular"."""

    mode: str = "zero"
    top: int = 0
    bottom: int = 0
    left: int = 0
    right: int = 0

    def __post_init__(self):
        if self.mode not in ("zero", "circular"):
            raise ValueError(f"unknown padding mode {self.mode!r}")
        if min(self.top, self.bottom, self.left, self.right) < 0:
            raise ValueError("padding amounts must be nonnegative")

    @classmethod
    def zero(cls, p: int) -> "Pad":
        return cls("zero", p, p, p, p)

    @classmethod
    def circular(cls, p: int) -> "Pad":
        return cls("circular", p, p, p, p)

    @classmethod
    def circular_leading(cls, p: int) -> "Pad":
        return cls("circular", p, 0, p, 0)

    @property
    def is_empty(self):
        return not (self.top or self.bottom or self.left or self.right)


NO_PAD = Pad()


def pad_array(x: np.ndarray, pad: Pad) -> np.ndarray:
    if pad.is_empty:
        return x
    nb, c, h, w = x.shape
    if pad.mode == "zero":
        out = np.zeros((nb, c, h + pad.top + pad.bottom, w + pad.left + pad.right), dtype=x.dtype)
        out[:, :, pad.top:pad.top + h, pad.left:pad.left + w] = x
        return out
    rows = np.arange(-pad.top, h + pad.bottom) % h
    cols = np.arange(-pad.left, w + pad.right) % w
    return x.take(rows, axis=2).take(cols, axis=3)


def _fold_axis(buf: np.ndarray, axis: int, lead: int, size: int) -> np.ndarray:
    # adjoint of wrap padding along one axis: padded index m lands on (m - lead) mod size
    shape = list(buf.shape)
    total = shape[axis]
    shape[axis] = size
    out = np.zeros(shape, dtype=buf.dtype)
    m = 0
    while m < total:
        t = (m - lead) % size
        n = min(size - t, total - m)
        dst = [slice(None)] * buf.ndim
        src = [slice(None)] * buf.ndim
        dst[axis] = slice(t, t + n)
        src[axis] = slice(m, m + n)
        out[tuple(dst)] += buf[tuple(src)]
        m += n
    return out


def unpad_adjoint(buf: np.ndarray, pad: Pad, h: int, w: int) -> np.ndarray:
    """Adjoint of :func:`pad_array` (crop for zero padding, fold for circular)."""
    if pad.is_empty:
        return buf
    if pad.mode == "zero":
        return np.ascontiguousarray(buf[:, :, pad.top:pad.top + h, pad.left:pad.left + w])
    return _fold_axis(_fold_axis(buf, 2, pad.top, h), 3, pad.left, w)


# ---------------------------------------------------------------------------
# numba kernels. The stride-1 kernels flatten spatial planes with the padded
# row width wp, so output column t of row r sits at r * wp + t and every tap
# becomes one long contiguous loop over 1D slices (slices rather than offset
# indexing let LLVM vectorize the loops). Columns past the true output width are
# scratch (forward) or zero (gradients). Strided kernels first gather each
# polyphase component of an input plane into a contiguous scratch plane of
# row width ws and then run the same flat loops on it.

_FAST = {"reassoc", "contract"}


@numba.njit(cache=True, fastmath=_FAST)
def _corr1_fwd(xp, w, groups, wp, n, out):
    nb, cout = out.shape[0], out.shape[1]
    cin_g, kh, kw = w.shape[1], w.shape[2], w.shape[3]
    cout_g = cout // groups
    for b in range(nb):
        for co in range(cout):
            base = (co // cout_g) * cin_g
            dst = out[b, co, :n]
            for ci in range(cin_g):
                plane = xp[b, base + ci]
                for i in range(kh):
                    for j in range(kw):
                        wv = w[co, ci, i, j]
                        src = plane[i * wp + j:i * wp + j + n]
                        for t in range(n):
                            dst[t] += wv * src[t]


@numba.njit(cache=True, fastmath=_FAST)
def _corr1_scatter(g, w, groups, wp, n, gxp):
    nb, cout = g.shape[0], g.shape[1]
    cin_g, kh, kw = w.shape[1], w.shape[2], w.shape[3]
    cout_g = cout // groups
    for b in range(nb):
        for co in range(cout):
            base = (co // cout_g) * cin_g
            src = g[b, co, :n]
            for ci in range(cin_g):
                plane = gxp[b, base + ci]
                for i in range(kh):
                    for j in range(kw):
                        wv = w[co, ci, i, j]
                        dst = plane[i * wp + j:i * wp + j + n]
                        for t in range(n):
                            dst[t] += wv * src[t]


@numba.njit(cache=True, fastmath=_FAST)
def _corr1_weight_grad(xp, g, groups, wp, n, gw):
    nb, cout = g.shape[0], g.shape[1]
    cin_g, kh, kw = gw.shape[1], gw.shape[2], gw.shape[3]
    cout_g = cout // groups
    for co in range(cout):
        base = (co // cout_g) * cin_g
        for ci in range(cin_g):
            for i in range(kh):
                for j in range(kw):
                    off = i * wp + j
                    acc = gw[co, ci, i, j]
                    for b in range(nb):
                        gr = g[b, co, :n]
                        xr = xp[b, base + ci, off:off + n]
                        for t in range(n):
                            acc += gr[t] * xr[t]
                    gw[co, ci, i, j] = acc


@numba.njit(cache=True)
def _gather_phase(plane, p, q, stride, hs, ws, scratch):
    # scratch[r * ws + t] = plane[r * stride + p, t * stride + q], zero where out of range
    hp, wp = plane.shape
    scratch[:] = 0
    for r in range(hs):
        y = r * stride + p
        if y >= hp:
            break
        for t in range(ws):
            x = t * stride + q
            if x >= wp:
                break
            scratch[r * ws + t] = plane[y, x]


@numba.njit(cache=True)
def _scatter_phase(scratch, p, q, stride, hs, ws, plane):
    hp, wp = plane.shape
    for r in range(hs):
        y = r * stride + p
        if y >= hp:
            break
        for t in range(ws):
            x = t * stride + q
            if x >= wp:
                break
            plane[y, x] += scratch[r * ws + t]


@numba.njit(cache=True, fastmath=_FAST)
def _corrs_fwd(xp, w, groups, stride, hs, ws, n, out):
    # strided correlation; out is (B, Cout, ho * ws), the phase planes use row width ws
    nb, cin = xp.shape[0], xp.shape[1]
    cout = out.shape[1]
    cin_g, kh, kw = w.shape[1], w.shape[2], w.shape[3]
    cout_g = cout // groups
    scratch = np.empty(hs * ws, dtype=xp.dtype)
    for b in range(nb):
        for c in range(cin):
            grp, ci = c // cin_g, c % cin_g
            for p in range(min(stride, kh)):
                for q in range(min(stride, kw)):
                    _gather_phase(xp[b, c], p, q, stride, hs, ws, scratch)
                    for co in range(grp * cout_g, (grp + 1) * cout_g):
                        dst = out[b, co, :n]
                        for i in range(p, kh, stride):
                            for j in range(q, kw, stride):
                                wv = w[co, ci, i, j]
                                off = (i // stride) * ws + j // stride
                                src = scratch[off:off + n]
                                for t in range(n):
                                    dst[t] += wv * src[t]


@numba.njit(cache=True, fastmath=_FAST)
def _corrs_scatter(g, w, groups, stride, hs, ws, n, gxp):
    nb, cout = g.shape[0], g.shape[1]
    cin = gxp.shape[1]
    cin_g, kh, kw = w.shape[1], w.shape[2], w.shape[3]
    cout_g = cout // groups
    scratch = np.empty(hs * ws, dtype=g.dtype)
    for b in range(nb):
        for c in range(cin):
            grp, ci = c // cin_g, c % cin_g
            for p in range(min(stride, kh)):
                for q in range(min(stride, kw)):
                    scratch[:] = 0
                    for co in range(grp * cout_g, (grp + 1) * cout_g):
                        src = g[b, co, :n]
                        for i in range(p, kh, stride):
                            for j in range(q, kw, stride):
                                wv = w[co, ci, i, j]
                                off = (i // stride) * ws + j // stride
                                dst = scratch[off:off + n]
                                for t in range(n):
                                    dst[t] += wv * src[t]
                    _scatter_phase(scratch, p, q, stride, hs, ws, gxp[b, c])


@numba.njit(cache=True, fastmath=_FAST)
def _corrs_weight_grad(xp, g, groups, stride, hs, ws, n, gw):
    nb, cin = xp.shape[0], xp.shape[1]
    cout = g.shape[1]
    cin_g, kh, kw = gw.shape[1], gw.shape[2], gw.shape[3]
    cout_g = cout // groups
    scratch = np.empty(hs * ws, dtype=xp.dtype)
    for b in range(nb):
        for c in range(cin):
            grp, ci = c // cin_g, c % cin_g
            for p in range(min(stride, kh)):
                for q in range(min(stride, kw)):
                    _gather_phase(xp[b, c], p, q, stride, hs, ws, scratch)
                    for co in range(grp * cout_g, (grp + 1) * cout_g):
                        gr = g[b, co, :n]
                        for i in range(p, kh, stride):
                            for j in range(q, kw, stride):
                                off = (i // stride) * ws + j // stride
                                xr = scratch[off:off + n]
                                acc = gw[co, ci, i, j]
                                for t in range(n):
                                    acc += gr[t] * xr[t]
                                gw[co, ci, i, j] = acc


def _ro(a):
    # contiguous read-only view; numba specializes on the writeable flag, so kernel
    # inputs are always passed read-only to keep one compiled signature per dtype
    a = np.ascontiguousarray(a).view()
    a.flags.writeable = False
    return a


def _flat(a):
    return _ro(a).reshape(a.shape[0], a.shape[1], -1)


def _widen(g, wp):
    # (B, C, ho, wo) -> (B, C, ho * wp) with zeros past column wo
    nb, c, ho, wo = g.shape
    out = np.zeros((nb, c, ho, wp), dtype=g.dtype)
    out[..., :wo] = g
    return out.reshape(nb, c, ho * wp)


def _corr1(xp, w, groups, cout, ho, wo):
    # stride-1 correlation of padded xp; returns a (B, Cout, ho, wo) view
    nb = xp.shape[0]
    wp = xp.shape[3]
    buf = np.zeros((nb, cout, ho * wp), dtype=xp.dtype)
    _corr1_fwd(_flat(xp), _ro(w), groups, wp, (ho - 1) * wp + wo, buf)
    return buf.reshape(nb, cout, ho, wp)[..., :wo]


def _corr1_t(g, w, groups, shape):
    nb, cout, ho, wo = g.shape
    wp = shape[3]
    gxp = np.zeros((nb, shape[1], shape[2] * wp), dtype=g.dtype)
    _corr1_scatter(_widen(g, wp), _ro(w), groups, wp, (ho - 1) * wp + wo, gxp)
    return gxp.reshape(shape)


def _corr1_w(xp, g, groups, wshape):
    nb, cout, ho, wo = g.shape
    wp = xp.shape[3]
    gw = np.zeros(wshape, dtype=g.dtype)
    _corr1_weight_grad(_flat(xp), _widen(g, wp), groups, wp, (ho - 1) * wp + wo, gw)
    return gw


def _is_pointwise(w, stride, groups):
    return groups == 1 and stride == 1 and w.shape[2] == 1 and w.shape[3] == 1


def _forward(xp, w, stride, groups, ho, wo):
    nb = xp.shape[0]
    cout = w.shape[0]
    if _is_pointwise(w, stride, groups):
        out = np.matmul(w[:, :, 0, 0], xp.reshape(nb, xp.shape[1], -1))
        return out.reshape(nb, cout, ho, wo)
    if stride == 1:
        return _corr1(xp, w, groups, cout, ho, wo)
    hs, ws = -(-xp.shape[2] // stride), -(-xp.shape[3] // stride)
    buf = np.zeros((nb, cout, ho * ws), dtype=xp.dtype)
    _corrs_fwd(_ro(xp), _ro(w), groups, stride, hs, ws,
               (ho - 1) * ws + wo, buf)
    return buf.reshape(nb, cout, ho, ws)[..., :wo]


def _scatter(g, w, stride, groups, hp, wp):
    nb = g.shape[0]
    cin = w.shape[1] * groups
    if _is_pointwise(w, stride, groups):
        out = np.matmul(w[:, :, 0, 0].T, g.reshape(nb, g.shape[1], -1))
        return out.reshape(nb, cin, hp, wp)
    if stride == 1:
        return _corr1_t(g, w, groups, (nb, cin, hp, wp))
    ho, wo = g.shape[2:]
    hs, ws = -(-hp // stride), -(-wp // stride)
    gxp = np.zeros((nb, cin, hp, wp), dtype=g.dtype)
    _corrs_scatter(_widen(g, ws), _ro(w), groups, stride, hs, ws, (ho - 1) * ws + wo, gxp)
    return gxp


def _weight_grad(xp, g, stride, groups, wshape):
    if groups == 1 and stride == 1 and tuple(wshape[2:]) == (1, 1):
        nb, cout = g.shape[:2]
        g3 = g.reshape(nb, cout, -1)
        x3 = xp.reshape(nb, xp.shape[1], -1)
        gw = g3[0] @ x3[0].T
        for b in range(1, nb):
            gw += g3[b] @ x3[b].T
        return gw.reshape(wshape)
    if stride == 1:
        return _corr1_w(xp, g, groups, wshape)
    ho, wo = g.shape[2:]
    hs, ws = -(-xp.shape[2] // stride), -(-xp.shape[3] // stride)
    gw = np.zeros(wshape, dtype=g.dtype)
    _corrs_weight_grad(_ro(xp), _widen(g, ws), groups, stride, hs, ws, (ho - 1) * ws + wo, gw)
    return gw


def _check_common(x, kernel, stride, groups, name):
    if x.ndim != 4 or kernel.ndim != 4:
        raise ValueError(f"{name}: expected rank-4 input and kernel, got {x.shape} and {kernel.shape}")
    if x.dtype != kernel.dtype:
        raise TypeError(f"{name}: dtype mismatch {x.dtype} vs {kernel.dtype}")
    if stride < 1 or groups < 1:
        raise ValueError(f"{name}: stride and groups must be positive")


def conv_output_size(size: int, lead: int, trail: int, k: int, stride: int) -> int:
    span = size + lead + trail - k
    if span < 0 or span % stride:
        raise ValueError(
            f"padded size {size + lead + trail} minus kernel {k} is not a nonnegative multiple of stride {stride}")
    return span // stride + 1


def conv2d(x: Tensor, kernel: Tensor, bias: Tensor | None = None, stride: int = 1,
           groups: int = 1, padding: Pad = NO_PAD) -> Tensor:
    """Grouped strided cross-correlation of a (B, C, H, W) tensor."""
    _check_common(x, kernel, stride, groups, "conv2d")
    nb, cin, h, w = x.shape
    cout, cin_g, kh, kw = kernel.shape
    if cin % groups or cout % groups:
        raise ValueError(f"conv2d: channels ({cin} in, {cout} out) not divisible by groups={groups}")
    if cin_g != cin // groups:
        raise ValueError(f"conv2d: kernel expects {cin_g * groups} input channels, input has {cin}")
    if bias is not None and bias.shape != (cout,):
        raise ValueError(f"conv2d: bias must have shape ({cout},)")
    ho = conv_output_size(h, padding.top, padding.bottom, kh, stride)
    wo = conv_output_size(w, padding.left, padding.right, kw, stride)

    xp = pad_array(x.data, padding)
    out = _forward(xp, kernel.data, stride, groups, ho, wo)
    out = np.ascontiguousarray(out) if bias is None else out + bias.data[None, :, None, None]
    hp, wp = xp.shape[2:]

    def bwd(g):
        gx = gw = gb = None
        if x.requires_grad:
            gx = unpad_adjoint(_scatter(g, kernel.data, stride, groups, hp, wp), padding, h, w)
        if kernel.requires_grad:
            gw = _weight_grad(xp, g, stride, groups, kernel.shape)
        if bias is not None and bias.requires_grad:
            gb = g.reshape(g.shape[0], g.shape[1], -1).sum(axis=2).sum(axis=0)
        return gx, gw, gb

    inputs = (x, kernel) if bias is None else (x, kernel, bias)
    return record("conv2d", out, inputs, lambda g: bwd(g)[:len(inputs)])


def conv2d_transpose(y: Tensor, kernel: Tensor, stride: int = 1, groups: int = 1,
                     padding: Pad = NO_PAD) -> Tensor:
    """Adjoint of :func:`conv2d` with the same kernel, stride, groups and padding."""
    _check_common(y, kernel, stride, groups, "conv2d_transpose")
    nb, cy, h, w = y.shape
    cout_k, cin_g, kh, kw = kernel.shape
    if cy != cout_k:
        raise ValueError(f"conv2d_transpose: kernel has {cout_k} input planes, tensor has {cy}")
    if cy % groups:
        raise ValueError(f"conv2d_transpose: {cy} channels not divisible by groups={groups}")
    hp, wp = (h - 1) * stride + kh, (w - 1) * stride + kw
    hx = hp - padding.top - padding.bottom
    wx = wp - padding.left - padding.right
    if hx <= 0 or wx <= 0:
        raise ValueError("conv2d_transpose: padding exceeds the reconstructed size")

    out = unpad_adjoint(_scatter(y.data, kernel.data, stride, groups, hp, wp), padding, hx, wx)

    def bwd(g):
        gp = pad_array(g, padding)
        gy = np.ascontiguousarray(_forward(gp, kernel.data, stride, groups, h, w)) if y.requires_grad else None
        gw = _weight_grad(gp, y.data, stride, groups, kernel.shape) if kernel.requires_grad else None
        return gy, gw

    return record("conv2d_transpose", out, (y, kernel), bwd)


def conv_macs(in_ch: int, out_ch: int, kh: int, kw: int, h_out: int, w_out: int, groups: int = 1) -> int:
    """Multiply-accumulate count of one convolution."""
    return out_ch * (in_ch // groups) * kh * kw * h_out * w_out
