"""Finite-difference suites over ops, wavelet pieces and network blocks (float64).

Each suite returns ``{check name: max relative error}``. Non-scalar outputs
are reduced with a fixed random projection so every output element matters.
"""
from __future__ import annotations

import numpy as np

from . import tensor as T
from .conv import Pad, conv2d, conv2d_transpose
from .gradcheck import grad_check
from .losses import psnr_loss, total_loss, wavelet_loss
from .network import (NetworkConfig, NetworkParams, _seb_specs, _wavelet_block_specs, init_params,
                      lwn_forward, mlwnet_forward, seb_forward, wfb_forward, whb_forward)
from .tensor import Tensor
from .wavelet import FilterBank, db2, dwt2, idwt2, poly_product

OPS_TOL = 1e-4
WAVELET_TOL = 1e-6
NETWORK_TOL = 1e-3
TOLERANCES = {"ops": OPS_TOL, "wavelet": WAVELET_TOL, "network": NETWORK_TOL}


def _leaf(rng, *shape, lo=-1.0, hi=1.0):
    return Tensor(rng.uniform(lo, hi, shape), requires_grad=True, dtype=np.float64)


def _project(out: Tensor, seed: int) -> Tensor:
    r = np.random.default_rng(seed).normal(size=out.shape)
    return T.sum_all(T.mul(out, Tensor(r, dtype=np.float64)))


def _check(fn, params, seed, samples=None):
    return grad_check(lambda ps: _project(fn(ps), seed + 101), params, samples=samples, seed=seed)


def ops_suite(seed: int = 0) -> dict:
    rng = np.random.default_rng(seed)
    a, b = _leaf(rng, 2, 3), _leaf(rng, 2, 3)
    pos = _leaf(rng, 2, 3, lo=0.5, hi=2.0)
    x4 = _leaf(rng, 2, 4, 6, 6)
    g, bi = _leaf(rng, 4, lo=0.5, hi=1.5), _leaf(rng, 4)
    u, v = _leaf(rng, 4), _leaf(rng, 3)
    k = _leaf(rng, 1, 1, 3, 3)
    out = {
        "add": _check(lambda p: T.add(*p), [a, b], seed),
        "sub": _check(lambda p: T.sub(*p), [a, b], seed),
        "mul": _check(lambda p: T.mul(*p), [a, b], seed),
        "scale": _check(lambda p: T.scale(p[0], -2.5), [a], seed),
        "add_scalar": _check(lambda p: T.add_scalar(p[0], 0.75), [a], seed),
        "square": _check(lambda p: T.square(p[0]), [a], seed),
        "log10": _check(lambda p: T.log10(p[0]), [pos], seed),
        "sum_all": _check(lambda p: T.sum_all(p[0]), [a], seed),
        "mean_all": _check(lambda p: T.mean_all(p[0]), [a], seed),
        "add_n": _check(lambda p: T.add_n(p), [a, b, pos], seed),
        "reshape": _check(lambda p: T.reshape(p[0], (3, 2)), [a], seed),
        "channel_slice": _check(lambda p: T.channel_slice(p[0], 1, 3), [x4], seed, 40),
        "stack": _check(lambda p: T.stack(p), [a, b], seed),
        "outer": _check(lambda p: T.outer(*p), [u, v], seed),
        "tile_leading": _check(lambda p: T.tile_leading(p[0], 3), [k], seed),
        "flip_spatial": _check(lambda p: T.flip_spatial(p[0]), [k], seed),
        "alternate_sign": _check(lambda p: T.alternate_sign(p[0]), [u], seed),
        "resample_down2": _check(lambda p: T.resample_down2(p[0]), [x4], seed, 40),
        "resample_up2": _check(lambda p: T.resample_up2(p[0]), [x4], seed, 40),
        "channel_layernorm": _check(lambda p: T.channel_layernorm(*p), [x4, g, bi], seed, 60),
        "poly_product": _check(lambda p: poly_product(*p), [u, v], seed),
        "psnr_loss": grad_check(lambda p: psnr_loss(*p), [a, b], seed=seed),
    }
    x = _leaf(rng, 2, 4, 6, 6)
    for stride in (1, 2):
        for groups in (1, 4):
            for pad in (Pad.zero(1), Pad.circular(1), Pad.circular_leading(1)):
                kh = 3 if pad.top == pad.bottom else 2
                if (6 + pad.top + pad.bottom - kh) % stride:
                    continue
                w = _leaf(rng, 4, 4 // groups, kh, kh)
                bias = _leaf(rng, 4)
                tag = f"s{stride}_g{groups}_{pad.mode}{pad.top}{pad.bottom}"
                out[f"conv2d_{tag}"] = _check(
                    lambda p, s=stride, gr=groups, pd=pad: conv2d(p[0], p[1], p[2], s, gr, pd),
                    [x, w, bias], seed, 60)
                y = _leaf(rng, 2, 4, 3 if stride == 2 else 6, 3 if stride == 2 else 6)
                out[f"conv2d_transpose_{tag}"] = _check(
                    lambda p, s=stride, gr=groups, pd=pad: conv2d_transpose(p[0], p[1], s, gr, pd),
                    [y, w], seed, 60)
    return out


def _bank_leaves(bank: FilterBank):
    return [Tensor(f.data, requires_grad=True, dtype=np.float64) for f in bank.filters]


def wavelet_suite(seed: int = 0) -> dict:
    rng = np.random.default_rng(seed)
    rand = FilterBank.from_arrays(*rng.normal(0, 0.5, (4, 4)), dtype=np.float64)
    x = _leaf(rng, 1, 2, 8, 8)
    y = _leaf(rng, 1, 8, 4, 4)
    return {
        "wavelet_loss_random": grad_check(lambda p: wavelet_loss(FilterBank(*p)), _bank_leaves(rand), seed=seed),
        "wavelet_loss_db2": grad_check(lambda p: wavelet_loss(FilterBank(*p)),
                                       _bank_leaves(db2(np.float64)), seed=seed),
        "dwt2": _check(lambda p: dwt2(p[0], FilterBank(*p[1:])), [x, *_bank_leaves(rand)], seed, 60),
        "idwt2": _check(lambda p: idwt2(p[0], FilterBank(*p[1:])), [y, *_bank_leaves(rand)], seed, 60),
    }


def _block_params(specs, rng):
    out = {}
    for name, (shape, kind) in specs.items():
        if kind == "bank":
            arr = rng.normal(0, 0.5, shape)
        elif kind == "one":
            arr = 1.0 + rng.uniform(-0.2, 0.2, shape)
        else:
            arr = rng.uniform(-0.5, 0.5, shape)
        out[name] = Tensor(arr, requires_grad=True, name=name, dtype=np.float64)
    return out


def _dict_check(fn, tensors, x, seed, samples):
    names = list(tensors)

    def f(ps):
        return _project(fn(ps[0], dict(zip(names, ps[1:]))), seed + 7)

    return grad_check(f, [x, *tensors.values()], samples=samples, seed=seed)


def block_suite(seed: int = 0, samples: int = 40) -> dict:
    rng = np.random.default_rng(seed)
    x = _leaf(rng, 1, 4, 8, 8)
    seb = _block_params(_seb_specs(4), rng)
    wav = _block_params(_wavelet_block_specs(4, 2, 4), rng)
    lwn = {k[len("lwn."):]: v for k, v in wav.items() if k.startswith("lwn.")}
    return {
        "lwn": _dict_check(lambda x, p: lwn_forward(x, p, "_"), {f"_.{k}": v for k, v in lwn.items()},
                           x, seed, samples),
        "seb": _dict_check(lambda x, p: seb_forward(x, p, "_"), {f"_.{k}": v for k, v in seb.items()},
                           x, seed, samples),
        "wfb": _dict_check(lambda x, p: wfb_forward(x, p, "_"), {f"_.{k}": v for k, v in wav.items()},
                           x, seed, samples),
        "whb": _dict_check(lambda x, p: whb_forward(x, p, "_")[0], {f"_.{k}": v for k, v in wav.items()},
                           x, seed, samples),
    }


MICRO_CONFIG = NetworkConfig(base_width=8, scales=2, blocks_per_stage=1, r=2, filter_len=4)


def network_suite(seed: int = 0, samples: int = 10) -> dict:
    """End-to-end check of the total loss on a micro network with a 16x16 input."""
    cfg = MICRO_CONFIG
    rng = np.random.default_rng(seed)
    base = init_params(cfg, seed=seed, dtype=np.float64)
    # perturb the zero-initialized tensors so every path carries gradient
    tensors = {}
    for name, t in base.tensors.items():
        arr = t.data if ".bank." in name else t.data + rng.normal(0, 0.1, t.shape)
        tensors[name] = Tensor(arr, requires_grad=True, name=name, dtype=np.float64)
    names = list(tensors)
    x = Tensor(rng.uniform(0, 1, (1, 3, 16, 16)), dtype=np.float64)
    targets = [Tensor(rng.uniform(0, 1, (1, 3, 16 >> k, 16 >> k)), dtype=np.float64) for k in range(cfg.scales)]

    def f(ps):
        params = NetworkParams(dict(zip(names, ps)))
        return total_loss(mlwnet_forward(x, params, cfg), targets, params.banks())

    return {"network_total_loss": grad_check(f, list(tensors.values()), samples=samples, seed=seed)}


SUITES = {"ops": lambda s: {**ops_suite(s), **block_suite(s)},
          "wavelet": wavelet_suite,
          "network": network_suite}
