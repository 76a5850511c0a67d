"""Analytic multiply-accumulate count of the restoration network.

Mirrors the wiring of :func:`mlwave.network.mlwnet_forward` without running
it. A transposed convolution costs the same as the convolution it is the
adjoint of. Pooling, upsampling, normalization and gating are not counted.
"""
from __future__ import annotations

from dataclasses import dataclass, field

from .conv import conv_macs
from .network import NetworkConfig


@dataclass
class MacReport:
    total: int = 0
    stages: dict = field(default_factory=dict)

    def add(self, stage: str, macs: int) -> None:
        self.stages[stage] = self.stages.get(stage, 0) + macs
        self.total += macs


def _seb(c, h, w):
    return (conv_macs(c, 2 * c, 1, 1, h, w)
            + conv_macs(2 * c, 2 * c, 3, 3, h, w, groups=2 * c)
            + conv_macs(c, c, 1, 1, h, w))


def _lwn(c, h, w, r, n):
    sub, hs, ws = 4 * c, h // 2, w // 2
    dwt = conv_macs(c, sub, n, n, hs, ws, groups=c)
    return (2 * dwt
            + conv_macs(sub, sub * r, 1, 1, hs, ws)
            + conv_macs(sub * r, sub * r, 3, 3, hs, ws, groups=sub * r)
            + conv_macs(sub * r, sub, 1, 1, hs, ws))


def _wavelet_block(c, h, w, r, n):
    return conv_macs(c, c, 1, 1, h, w) + _lwn(c, h, w, r, n) + conv_macs(c // 2, c, 1, 1, h, w)


def count_macs(config: NetworkConfig, height: int, width: int) -> MacReport:
    """Total and per-stage MACs for one (3, height, width) input."""
    S = config.scales
    if height % config.divisor or width % config.divisor:
        raise ValueError(f"input {height}x{width} is not divisible by 2^{S}")
    W = config.width
    nb = config.blocks_per_stage
    r, n = config.r, config.filter_len

    def hw(s):
        return height >> (s - 1), width >> (s - 1)

    rep = MacReport()
    rep.add("embed", conv_macs(3, W(1), 3, 3, height, width))
    for s in range(1, S + 1):
        h, w = hw(s)
        if s > 1:
            rep.add(f"encoder{s}", conv_macs(W(s - 1), W(s), 1, 1, h, w))
        rep.add(f"encoder{s}", nb[s - 1] * _seb(W(s), h, w))
    for s in range(S, 1, -1):
        h, w = hw(s)
        if s == S:
            rep.add(f"fusion{s}", conv_macs(W(s - 1), W(s), 1, 1, h, w))
        else:
            rep.add(f"fusion{s}", conv_macs(W(s + 1), W(s), 1, 1, h, w))
        rep.add(f"fusion{s}", nb[s - 1] * _wavelet_block(W(s), h, w, r, n))
    for s in range(S, 0, -1):
        h, w = hw(s)
        if s < S:
            rep.add(f"decoder{s}", conv_macs(W(s + 1), W(s), 1, 1, h, w))
        if s == 1:
            rep.add("decoder1", conv_macs(W(2), W(1), 1, 1, h, w))
        rep.add(f"decoder{s}", nb[s - 1] * _wavelet_block(W(s), h, w, r, n))
    for s in range(1, (S if config.train_mode else 1) + 1):
        h, w = hw(s)
        rep.add(f"head{s}", conv_macs(W(s), 3, 3, 3, h, w))
    return rep
