"""Learnable two-channel filter banks and the 2D transforms built from them.

A bank holds analysis filters ``a0`` (low-pass) and ``a1`` (high-pass) and
synthesis filters ``s0``, ``s1``, all of even length N. The 2D analysis
kernels are outer products of the analysis filters; ``dwt2`` applies them
as one grouped stride-2 correlation with groups = channels, producing four
subbands per input channel laid out as ``c * 4 + b`` with b in
(LL, LH, HL, HH). Boundaries are periodic with N - 2 samples of padding on
the leading side of each axis.

``idwt2`` is the matching grouped transposed convolution. The synthesis
filters act as convolutions (not correlations), which is what makes a bank
with ``A0(z)S0(z) + A1(z)S1(z) = 2 z^-(N-1)`` and the alias term zero
invert ``dwt2`` exactly.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import tensor as T
from .conv import Pad, conv2d, conv2d_transpose
from .tensor import Tensor, record

SUBBANDS = ("LL", "LH", "HL", "HH")


@dataclass(frozen=True, eq=False)
class FilterBank:
    a0: Tensor
    a1: Tensor
    s0: Tensor
    s1: Tensor
    learnable: bool = True

    def __post_init__(self):
        filters = self.filters
        n = filters[0].shape
        for f in filters:
            if f.ndim != 1 or f.shape != n:
                raise ValueError("all four filters must be vectors of a common length")
        if n[0] < 2 or n[0] % 2:
            raise ValueError(f"filter length must be even and >= 2, got {n[0]}")

    @property
    def filters(self) -> tuple:
        return (self.a0, self.a1, self.s0, self.s1)

    @property
    def length(self) -> int:
        return self.a0.shape[0]

    @property
    def dtype(self):
        return self.a0.dtype

    @classmethod
    def from_arrays(cls, a0, a1, s0, s1, dtype=np.float32, learnable=True, name=None):
        def mk(v, tag):
            return Tensor(np.asarray(v, dtype=dtype), requires_grad=learnable,
                          name=f"{name}.{tag}" if name else tag)
        return cls(mk(a0, "a0"), mk(a1, "a1"), mk(s0, "s0"), mk(s1, "s1"), learnable)

    def arrays(self) -> tuple:
        return tuple(np.array(f.data) for f in self.filters)

    def astype(self, dtype) -> "FilterBank":
        return FilterBank.from_arrays(*self.arrays(), dtype=dtype, learnable=self.learnable)

    def padded(self, n: int) -> "FilterBank":
        """Zero-pad every filter symmetrically to length ``n``."""
        extra = n - self.length
        if extra < 0 or extra % 2:
            raise ValueError(f"cannot pad length {self.length} to {n}")
        side = extra // 2
        return FilterBank.from_arrays(*(np.pad(f, side) for f in self.arrays()),
                                      dtype=self.dtype, learnable=self.learnable)


def haar(dtype=np.float32) -> FilterBank:
    h = 1.0 / math.sqrt(2.0)
    a0, a1 = [h, h], [h, -h]
    return FilterBank.from_arrays(a0, a1, a0[::-1], a1[::-1], dtype=dtype)


def db2(dtype=np.float32) -> FilterBank:
    """Length-4 Daubechies bank (orthogonal, so s_i = reverse(a_i))."""
    r3 = math.sqrt(3.0)
    a0 = np.array([1 + r3, 3 + r3, 3 - r3, 1 - r3]) / (4 * math.sqrt(2.0))
    a1 = np.array([(-1) ** n * a0[3 - n] for n in range(4)])
    return FilterBank.from_arrays(a0, a1, a0[::-1], a1[::-1], dtype=dtype)


NAMED_BANKS = {"haar": haar, "db2": db2}


# ---------------------------------------------------------------------------
# Kernels


@dataclass(frozen=True, eq=False)
class WaveletKernel2D:
    ll: Tensor
    lh: Tensor
    hl: Tensor
    hh: Tensor
    direction: str

    @property
    def stacked(self) -> Tensor:
        """K_w with shape (4, 1, N, N) in LL, LH, HL, HH order."""
        k = T.stack([self.ll, self.lh, self.hl, self.hh])
        n = self.ll.shape[0]
        return T.reshape(k, (4, 1, n, n))


def _kernel(lo, hi, direction):
    return WaveletKernel2D(T.outer(lo, lo), T.outer(lo, hi), T.outer(hi, lo), T.outer(hi, hi), direction)


def build_analysis_kernel(bank: FilterBank) -> WaveletKernel2D:
    return _kernel(bank.a0, bank.a1, "analysis")


def build_synthesis_kernel(bank: FilterBank) -> WaveletKernel2D:
    return _kernel(bank.s0, bank.s1, "synthesis")


def _padding(bank):
    return Pad.circular_leading(bank.length - 2)


def dwt2(x: Tensor, bank: FilterBank) -> Tensor:
    """(B, C, H, W) -> (B, 4C, H/2, W/2)."""
    if x.ndim != 4:
        raise ValueError(f"dwt2 expects a (B, C, H, W) tensor, got {x.shape}")
    _, c, h, w = x.shape
    if h % 2 or w % 2:
        raise ValueError(f"dwt2 needs even spatial dims, got {h}x{w}")
    k = T.tile_leading(build_analysis_kernel(bank).stacked, c)
    return conv2d(x, k, stride=2, groups=c, padding=_padding(bank))


def idwt2(y: Tensor, bank: FilterBank) -> Tensor:
    """(B, 4C, h, w) -> (B, C, 2h, 2w)."""
    if y.ndim != 4:
        raise ValueError(f"idwt2 expects a (B, 4C, h, w) tensor, got {y.shape}")
    c4 = y.shape[1]
    if c4 % 4:
        raise ValueError(f"idwt2 needs a channel count divisible by 4, got {c4}")
    k = T.flip_spatial(build_synthesis_kernel(bank).stacked)
    k = T.tile_leading(k, c4 // 4)
    return conv2d_transpose(y, k, stride=2, groups=c4 // 4, padding=_padding(bank))


def dwt1(signal, bank: FilterBank) -> tuple[np.ndarray, np.ndarray]:
    """Periodic 1D analysis step; returns (approximation, detail)."""
    x = np.asarray(signal, dtype=np.float64)
    n_sig = x.shape[0]
    if n_sig % 2:
        raise ValueError(f"dwt1 needs an even-length signal, got {n_sig}")
    a0, a1 = (np.asarray(f.data, dtype=np.float64) for f in (bank.a0, bank.a1))
    lead = bank.length - 2
    idx = (2 * np.arange(n_sig // 2)[:, None] + np.arange(bank.length)[None, :] - lead) % n_sig
    windows = x[idx]
    return windows @ a0, windows @ a1


# ---------------------------------------------------------------------------
# Polynomial products


def poly_product(u: Tensor, v: Tensor) -> Tensor:
    """Full linear convolution: w[m] = sum_n u[n] v[m - n]."""
    if u.ndim != 1 or v.ndim != 1 or u.size == 0 or v.size == 0:
        raise ValueError("poly_product expects nonempty vectors")

    def bwd(g):
        return np.correlate(g, v.data, "valid"), np.correlate(g, u.data, "valid")

    return record("poly_product", np.convolve(u.data, v.data), (u, v), bwd)


def reconstruction_terms(bank: FilterBank) -> tuple[Tensor, Tensor]:
    """``(A0 S0 + A1 S1, A0(-z) S0 + A1(-z) S1)`` as coefficient vectors."""
    pr = T.add(poly_product(bank.a0, bank.s0), poly_product(bank.a1, bank.s1))
    alias = T.add(poly_product(T.alternate_sign(bank.a0), bank.s0),
                  poly_product(T.alternate_sign(bank.a1), bank.s1))
    return pr, alias


# ---------------------------------------------------------------------------
# Text format


class BankFormatError(ValueError):
    pass


def format_bank(bank: FilterBank) -> str:
    lines = [str(bank.length)]
    for tag, f in zip(("a0", "a1", "s0", "s1"), bank.arrays()):
        lines.append(f"{tag}: " + " ".join(f"{float(v):.17g}" for v in f))
    return "\n".join(lines) + "\n"


def parse_bank(text: str, dtype=np.float32) -> FilterBank:
    rows = [ln.strip() for ln in text.strip().splitlines() if ln.strip()]
    if len(rows) != 5:
        raise BankFormatError("a bank file has exactly five lines")
    try:
        n = int(rows[0])
    except ValueError as exc:
        raise BankFormatError(f"bad filter length {rows[0]!r}") from exc
    filters = {}
    for row, tag in zip(rows[1:], ("a0", "a1", "s0", "s1")):
        head, _, body = row.partition(":")
        if head.strip() != tag:
            raise BankFormatError(f"expected '{tag}:' line, got {row!r}")
        try:
            vals = [float(v) for v in body.split()]
        except ValueError as exc:
            raise BankFormatError(f"bad value in {tag} line") from exc
        if len(vals) != n:
            raise BankFormatError(f"{tag} has {len(vals)} values, expected {n}")
        filters[tag] = vals
    try:
        return FilterBank.from_arrays(filters["a0"], filters["a1"], filters["s0"], filters["s1"], dtype=dtype)
    except ValueError as exc:
        raise BankFormatError(str(exc)) from exc


def save_bank(path, bank: FilterBank) -> None:
    Path(path).write_text(format_bank(bank))


def load_bank(path, dtype=np.float32) -> FilterBank:
    return parse_bank(Path(path).read_text(), dtype=dtype)
