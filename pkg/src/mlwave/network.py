"""Single-input multi-output coarse-to-fine restoration network.

Scale 1 is full resolution; scale s works at 1/2^(s-1) of it with
``base_width * 2^(s-1)`` channels. The encoder runs fine to coarse with
SEB stages, the fusion stage runs coarse to fine with WFB stages, and the
decoder runs coarse to fine with WHB stages, each followed by a 3x3 head
that predicts a residual on the pooled input. Every resolution or width
change goes through a resample plus a 1x1 convolution.
"""
from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Iterator

import numpy as np

from . import tensor as T
from .conv import Pad, conv2d
from .tensor import Tensor
from .wavelet import FilterBank, dwt2, haar, idwt2


@dataclass(frozen=True)
class NetworkConfig:
    base_width: int = 16
    scales: int = 3
    blocks_per_stage: tuple = 2
    r: int = 2
    filter_len: int = 4
    train_mode: bool = True

    def __post_init__(self):
        bps = self.blocks_per_stage
        if isinstance(bps, int):
            object.__setattr__(self, "blocks_per_stage", (bps,) * self.scales)
        else:
            object.__setattr__(self, "blocks_per_stage", tuple(int(b) for b in bps))
        if self.scales < 2:
            raise ValueError("scales must be >= 2")
        if len(self.blocks_per_stage) != self.scales or min(self.blocks_per_stage) < 1:
            raise ValueError("blocks_per_stage needs one positive count per scale")
        if self.base_width < 2 or self.base_width % 2:
            raise ValueError("base_width must be even")
        if self.r < 1:
            raise ValueError("r must be a positive integer")
        if self.filter_len < 2 or self.filter_len % 2:
            raise ValueError("filter_len must be even and >= 2")

    def width(self, s: int) -> int:
        return self.base_width * 2 ** (s - 1)

    @property
    def divisor(self) -> int:
        return 2 ** self.scales

    def with_mode(self, train_mode: bool) -> "NetworkConfig":
        return replace(self, train_mode=train_mode)


@dataclass
class NetworkParams:
    """Named parameter tensors. Filter banks live under ``<prefix>.bank.{a0,a1,s0,s1}``."""

    tensors: dict = field(default_factory=dict)

    def __getitem__(self, name) -> Tensor:
        return self.tensors[name]

    def __iter__(self) -> Iterator[str]:
        return iter(self.tensors)

    def __len__(self):
        return len(self.tensors)

    def bank(self, prefix: str) -> FilterBank:
        t = self.tensors
        return FilterBank(t[f"{prefix}.a0"], t[f"{prefix}.a1"], t[f"{prefix}.s0"], t[f"{prefix}.s1"])

    def bank_prefixes(self) -> list[str]:
        return sorted({n[: -len(".a0")] for n in self.tensors if n.endswith(".bank.a0")})

    def banks(self) -> list[FilterBank]:
        return [self.bank(p) for p in self.bank_prefixes()]

    def replace(self, tensors: dict) -> "NetworkParams":
        return NetworkParams(dict(tensors))


# ---------------------------------------------------------------------------
# Blocks. ``p`` is a NetworkParams (or plain dict) and ``pre`` a name prefix.


def _conv1x1(x, p, pre):
    return conv2d(x, p[f"{pre}.w"], p[f"{pre}.b"])


def _dwconv3(x, p, pre):
    return conv2d(x, p[f"{pre}.w"], p[f"{pre}.b"], groups=x.shape[1], padding=Pad.zero(1))


def simple_gate(x: Tensor) -> Tensor:
    c = x.shape[1]
    if c % 2:
        raise ValueError(f"SimpleGate needs an even channel count, got {c}")
    return T.mul(T.channel_slice(x, 0, c // 2), T.channel_slice(x, c // 2, c))


def lwn_forward(x: Tensor, p, pre: str, bank: FilterBank | None = None) -> Tensor:
    """Wavelet-domain depthwise filtering between a learnable DWT and its inverse."""
    if bank is None:
        bank = _bank(p, f"{pre}.bank")
    y = dwt2(x, bank)
    y = _conv1x1(y, p, f"{pre}.pw1")
    y = _dwconv3(y, p, f"{pre}.dw")
    y = _conv1x1(y, p, f"{pre}.pw2")
    return idwt2(y, bank)


def _bank(p, prefix):
    if isinstance(p, NetworkParams):
        return p.bank(prefix)
    return FilterBank(p[f"{prefix}.a0"], p[f"{prefix}.a1"], p[f"{prefix}.s0"], p[f"{prefix}.s1"])


def seb_forward(x: Tensor, p, pre: str) -> Tensor:
    y = T.channel_layernorm(x, p[f"{pre}.ln.g"], p[f"{pre}.ln.b"])
    y = _conv1x1(y, p, f"{pre}.pw_in")
    y = simple_gate(_dwconv3(y, p, f"{pre}.dw"))
    return T.add(x, _conv1x1(y, p, f"{pre}.pw_out"))


def wfb_forward(x: Tensor, p, pre: str) -> Tensor:
    y = T.channel_layernorm(x, p[f"{pre}.ln.g"], p[f"{pre}.ln.b"])
    y = _conv1x1(y, p, f"{pre}.pw_in")
    y = simple_gate(lwn_forward(y, p, f"{pre}.lwn"))
    return T.add(x, _conv1x1(y, p, f"{pre}.pw_out"))


def whb_forward(x: Tensor, p, pre: str) -> tuple[Tensor, Tensor]:
    """Same body as WFB; the returned features also feed the scale's output head."""
    out = wfb_forward(x, p, pre)
    return out, out


def head_forward(features: Tensor, p, pre: str) -> Tensor:
    return conv2d(features, p[f"{pre}.w"], p[f"{pre}.b"], padding=Pad.zero(1))


def _down(x, p, pre):
    return _conv1x1(T.resample_down2(x), p, pre)


def _up(x, p, pre):
    return _conv1x1(T.resample_up2(x), p, pre)


def mlwnet_forward(x: Tensor, params: NetworkParams, config: NetworkConfig) -> list[Tensor]:
    """Restored images, fine to coarse (all scales in train mode, scale 1 only otherwise)."""
    if x.ndim != 4 or x.shape[1] != 3:
        raise ValueError(f"expected a (B, 3, H, W) image batch, got {x.shape}")
    h, w = x.shape[2:]
    S = config.scales
    if h % config.divisor or w % config.divisor:
        raise ValueError(f"input {h}x{w} is not divisible by 2^{S}")
    p = params
    nb = config.blocks_per_stage

    def stage(block, y, name, s):
        for i in range(nb[s - 1]):
            y = block(y, p, f"{name}{s}.{i}")
        return y

    enc = {}
    y = conv2d(x, p["embed.w"], p["embed.b"], padding=Pad.zero(1))
    enc[1] = stage(seb_forward, y, "enc", 1)
    for s in range(2, S + 1):
        enc[s] = stage(seb_forward, _down(enc[s - 1], p, f"down{s}"), "enc", s)

    fus = {S: stage(wfb_forward, T.add(enc[S], _down(enc[S - 1], p, "fuse_down")), "fus", S)}
    for s in range(S - 1, 1, -1):
        fus[s] = stage(wfb_forward, T.add(_up(fus[s + 1], p, f"fus_up{s}"), enc[s]), "fus", s)

    def whb(y, p, pre):
        return whb_forward(y, p, pre)[0]

    dec = {S: stage(whb, enc[S], "dec", S)}
    for s in range(S - 1, 1, -1):
        dec[s] = stage(whb, T.add(_up(dec[s + 1], p, f"dec_up{s}"), fus[s]), "dec", s)
    joined = T.add_n([_up(dec[2], p, "dec_up1"), _up(fus[2], p, "dec_fup1"), enc[1]])
    dec[1] = stage(whb, joined, "dec", 1)

    pooled = [x]
    for _ in range(S - 1):
        pooled.append(T.resample_down2(pooled[-1]))
    n_out = S if config.train_mode else 1
    return [T.add(head_forward(dec[s], p, f"head{s}"), pooled[s - 1]) for s in range(1, n_out + 1)]


# ---------------------------------------------------------------------------
# Parameter layout and initialization


def _conv_spec(cout, cin_g, k, zero=False):
    return {"w": ((cout, cin_g, k, k), "zero" if zero else "uniform"), "b": ((cout,), "zero")}


def _seb_specs(c):
    return {
        "ln.g": ((c,), "one"), "ln.b": ((c,), "zero"),
        **{f"pw_in.{k}": v for k, v in _conv_spec(2 * c, c, 1).items()},
        **{f"dw.{k}": v for k, v in _conv_spec(2 * c, 1, 3).items()},
        **{f"pw_out.{k}": v for k, v in _conv_spec(c, c, 1, zero=True).items()},
    }


def _wavelet_block_specs(c, r, n):
    inner = c              # LWN width; SimpleGate then halves it to c // 2
    sub = 4 * inner
    specs = {
        "ln.g": ((c,), "one"), "ln.b": ((c,), "zero"),
        **{f"pw_in.{k}": v for k, v in _conv_spec(inner, c, 1).items()},
        **{f"lwn.pw1.{k}": v for k, v in _conv_spec(sub * r, sub, 1).items()},
        **{f"lwn.dw.{k}": v for k, v in _conv_spec(sub * r, 1, 3).items()},
        **{f"lwn.pw2.{k}": v for k, v in _conv_spec(sub, sub * r, 1).items()},
        **{f"pw_out.{k}": v for k, v in _conv_spec(c, c // 2, 1, zero=True).items()},
    }
    for tag in ("a0", "a1", "s0", "s1"):
        specs[f"lwn.bank.{tag}"] = ((n,), "bank")
    return specs


def param_specs(config: NetworkConfig) -> dict:
    """``{name: (shape, init kind)}`` in a fixed order."""
    S = config.scales
    W = config.width
    specs = {}

    def put(prefix, block):
        for k, v in block.items():
            specs[f"{prefix}.{k}"] = v

    put("embed", _conv_spec(W(1), 3, 3))
    for s in range(1, S + 1):
        if s > 1:
            put(f"down{s}", _conv_spec(W(s), W(s - 1), 1))
        for i in range(config.blocks_per_stage[s - 1]):
            put(f"enc{s}.{i}", _seb_specs(W(s)))
    put("fuse_down", _conv_spec(W(S), W(S - 1), 1))
    for s in range(S, 1, -1):
        if s < S:
            put(f"fus_up{s}", _conv_spec(W(s), W(s + 1), 1))
        for i in range(config.blocks_per_stage[s - 1]):
            put(f"fus{s}.{i}", _wavelet_block_specs(W(s), config.r, config.filter_len))
    for s in range(S, 0, -1):
        if s < S:
            put(f"dec_up{s}", _conv_spec(W(s), W(s + 1), 1))
        if s == 1:
            put("dec_fup1", _conv_spec(W(1), W(2), 1))
        for i in range(config.blocks_per_stage[s - 1]):
            put(f"dec{s}.{i}", _wavelet_block_specs(W(s), config.r, config.filter_len))
    for s in range(1, S + 1):
        put(f"head{s}", _conv_spec(3, W(s), 3, zero=True))
    return specs


def init_params(config: NetworkConfig, seed: int = 0, dtype=np.float32) -> NetworkParams:
    """Fan-in scaled uniform convs, zero residual outputs and heads, Haar banks."""
    rng = np.random.default_rng(seed)
    base = [np.asarray(f, dtype=np.float64) for f in haar(np.float64).padded(config.filter_len).arrays()]
    bank_vals = dict(zip(("a0", "a1", "s0", "s1"), base))
    tensors = {}
    for name, (shape, kind) in param_specs(config).items():
        if kind == "uniform":
            bound = 1.0 / np.sqrt(np.prod(shape[1:]))
            arr = rng.uniform(-bound, bound, size=shape)
        elif kind == "one":
            arr = np.ones(shape)
        elif kind == "bank":
            arr = bank_vals[name.rsplit(".", 1)[1]]
        else:
            arr = np.zeros(shape)
        tensors[name] = Tensor(arr, requires_grad=True, name=name, dtype=dtype)
    return NetworkParams(tensors)
