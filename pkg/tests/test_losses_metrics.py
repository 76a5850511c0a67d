import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from mlwave import tensor as T
from mlwave.losses import (make_target_pyramid, multi_scale_loss, psnr_loss, scale_weights, total_loss,
                           wavelet_loss)
from mlwave.metrics import psnr_metric, ssim_metric
from mlwave.tensor import Tape, Tensor
from mlwave.wavelet import FilterBank, haar


def img(seed, shape=(1, 3, 16, 16)):
    return Tensor(np.random.default_rng(seed).uniform(0, 1, shape), dtype=np.float64)


def test_psnr_loss_floor_and_analytic_value():
    x = img(0)
    assert psnr_loss(x, x).item() == -80.0
    y = Tensor(x.data + 0.1, dtype=np.float64)
    assert abs(psnr_loss(x, y).item() + 20.0) < 1e-5


def test_psnr_loss_shape_mismatch():
    with pytest.raises(ValueError):
        psnr_loss(img(0), img(1, (1, 3, 8, 8)))


def test_target_pyramid():
    board = np.indices((8, 8)).sum(axis=0) % 2
    pyr = make_target_pyramid(Tensor(board[None, None], dtype=np.float64), 3)
    assert [p.shape[-1] for p in pyr] == [8, 4, 2]
    np.testing.assert_array_equal(pyr[1].data, 0.5)
    assert make_target_pyramid(img(0), 1)[0] is not None
    with pytest.raises(ValueError):
        make_target_pyramid(img(0, (1, 3, 6, 6)), 3)


def test_multi_scale_weights_and_floor():
    assert scale_weights(3) == [1.0, 0.5, 1.0 / 3.0]
    pyr = make_target_pyramid(img(2), 3)
    assert math.isclose(multi_scale_loss(pyr, pyr).item(), -80.0 * (11.0 / 6.0), rel_tol=1e-12)
    x, y = img(3), img(4)
    assert multi_scale_loss([x], [y]).item() == psnr_loss(x, y).item()


@given(st.floats(0.01, 1.0), st.integers(0, 2))
def test_multi_scale_monotone(bump, k):
    outs = make_target_pyramid(img(5), 3)
    targets = make_target_pyramid(img(6), 3)
    base = multi_scale_loss(outs, targets).item()
    worse = list(outs)
    worse[k] = Tensor(np.clip(outs[k].data - targets[k].data, -1, 1) * (1 + bump) + targets[k].data, dtype=np.float64)
    assert multi_scale_loss(worse, targets).item() > base


def test_total_loss_composition_and_gradients():
    pyr = make_target_pyramid(img(7), 3)
    assert math.isclose(total_loss(pyr, pyr, haar(np.float64)).item(), -80.0 * 11 / 6, rel_tol=1e-12)
    z = np.zeros(4)
    zero = FilterBank.from_arrays(z, z, z, z, dtype=np.float64)
    assert math.isclose(total_loss(pyr, pyr, [zero, zero]).item(), -80.0 * 11 / 6 + 8.0, rel_tol=1e-12)
    assert total_loss(pyr, pyr, [zero], wavelet_weight=0).item() == multi_scale_loss(pyr, pyr).item()

    x = img(8, (1, 3, 8, 8)).detach(requires_grad=True)
    bank = FilterBank.from_arrays(*np.random.default_rng(0).normal(size=(4, 4)), dtype=np.float64)
    with Tape() as tape:
        loss = total_loss([x], [img(9, (1, 3, 8, 8))], bank)
    g = tape.backward(loss)
    assert np.abs(g[x]).sum() > 0 and np.abs(g[bank.a0]).sum() > 0


def test_psnr_metric():
    x = np.zeros((3, 8, 8))
    assert psnr_metric(x, x) == math.inf
    assert abs(psnr_metric(x, x + 0.1) - 20.0) < 1e-9
    with pytest.raises(ValueError):
        psnr_metric(x, np.zeros((3, 4, 4)))


@given(st.integers(0, 2 ** 32 - 1))
def test_metrics_symmetric(seed):
    rng = np.random.default_rng(seed)
    x, y = rng.uniform(0, 1, (3, 16, 16)), rng.uniform(0, 1, (3, 16, 16))
    assert psnr_metric(x, y) == psnr_metric(y, x)
    assert abs(ssim_metric(x, y) - ssim_metric(y, x)) < 1e-12
    assert -1.0 <= ssim_metric(x, y) <= 1.0


def test_ssim_identity_and_inversion():
    b = (np.random.default_rng(0).uniform(size=(32, 32)) > 0.5).astype(float)
    assert abs(ssim_metric(b, b) - 1.0) < 1e-12
    assert ssim_metric(b, 1 - b) < 0
    with pytest.raises(ValueError):
        ssim_metric(np.zeros((8, 8)), np.zeros((8, 8)))
