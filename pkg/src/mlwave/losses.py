"""Training objectives: PSNR loss over a scale pyramid plus filter-bank self-supervision."""
from __future__ import annotations

from typing import Sequence

import numpy as np

from . import tensor as T
from .tensor import Tensor
from .wavelet import FilterBank, reconstruction_terms

PSNR_LOSS_EPS = 1e-8


def psnr_loss(x: Tensor, y: Tensor) -> Tensor:
    """``10 * log10(MSE(x, y) + 1e-8)``, i.e. negative PSNR for unit peak."""
    if x.shape != y.shape:
        raise ValueError(f"psnr_loss: shape mismatch {x.shape} vs {y.shape}")
    d = T.sub(x, y)
    mse = T.mean_all(T.mul(d, d))
    return T.scale(T.log10(T.add_scalar(mse, PSNR_LOSS_EPS)), 10.0)


def scale_weights(k: int) -> list[float]:
    return [1.0 / (i + 1) for i in range(k)]


def make_target_pyramid(y: Tensor, k: int) -> list[Tensor]:
    """Sharp targets at ``k`` scales, each a 2x2 average pool of the previous."""
    h, w = y.shape[2:]
    if h % 2 ** (k - 1) or w % 2 ** (k - 1):
        raise ValueError(f"{h}x{w} is not divisible by 2^{k - 1}")
    out = [y]
    for _ in range(k - 1):
        out.append(T.resample_down2(out[-1]))
    return out


def multi_scale_loss(outputs: Sequence[Tensor], targets: Sequence[Tensor],
                     weights: Sequence[float] | None = None) -> Tensor:
    """Weighted sum of per-scale PSNR losses, fine to coarse, default weights 1/k."""
    if len(outputs) != len(targets):
        raise ValueError(f"{len(outputs)} outputs but {len(targets)} targets")
    if weights is None:
        weights = scale_weights(len(outputs))
    if len(weights) != len(outputs):
        raise ValueError("one weight per scale is required")
    terms = [T.scale(psnr_loss(x, y), w) for x, y, w in zip(outputs, targets, weights)]
    return terms[0] if len(terms) == 1 else T.add_n(terms)


def wavelet_loss(bank: FilterBank) -> Tensor:
    """Squared residual of the perfect-reconstruction and alias-cancellation conditions.

    The reconstruction product is compared with 2 at index N - 1, the
    centre of a length 2N - 1 product.
    """
    pr, alias = reconstruction_terms(bank)
    target = np.zeros(pr.shape, dtype=pr.dtype)
    target[bank.length - 1] = 2.0
    resid = T.sub(pr, Tensor(target))
    return T.add(T.sum_all(T.square(resid)), T.sum_all(T.square(alias)))


def total_wavelet_loss(banks: Sequence[FilterBank]) -> Tensor:
    terms = [wavelet_loss(b) for b in banks]
    return terms[0] if len(terms) == 1 else T.add_n(terms)


def total_loss(outputs, targets, banks, wavelet_weight: float = 1.0) -> Tensor:
    """Multi-scale loss plus the summed wavelet loss of every bank.

    ``banks`` may be a single bank or a sequence. ``wavelet_weight = 1``
    gives the plain unweighted sum; 0 drops the bank term entirely.
    """
    multi = multi_scale_loss(outputs, targets)
    if isinstance(banks, FilterBank):
        banks = [banks]
    if not banks or wavelet_weight == 0:
        return multi
    wl = total_wavelet_loss(banks)
    if wavelet_weight != 1.0:
        wl = T.scale(wl, wavelet_weight)
    return T.add(multi, wl)
