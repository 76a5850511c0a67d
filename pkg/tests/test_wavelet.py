import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from mlwave import tensor as T
from mlwave.losses import wavelet_loss
from mlwave.tensor import Tape, Tensor
from mlwave.wavelet import (BankFormatError, FilterBank, build_analysis_kernel, db2, dwt1, dwt2, format_bank,
                            haar, idwt2, parse_bank, poly_product, reconstruction_terms)


def rand(shape, seed, dtype=np.float64):
    return Tensor(np.random.default_rng(seed).normal(size=shape), dtype=dtype)


@pytest.mark.parametrize("make", [haar, db2])
@pytest.mark.parametrize("dtype,tol", [(np.float32, 1e-6), (np.float64, 1e-12)])
def test_round_trip(make, dtype, tol):
    x = rand((2, 3, 16, 16), 0, dtype)
    back = idwt2(dwt2(x, make(dtype)), make(dtype))
    assert back.dtype == dtype
    assert np.abs(back.data - x.data).max() < tol


def test_haar_subbands_of_constant_image():
    y = dwt2(Tensor(np.full((1, 1, 4, 4), 0.5), dtype=np.float64), haar(np.float64)).data
    np.testing.assert_allclose(y[0, 0], 1.0)
    np.testing.assert_allclose(y[0, 1:], 0.0, atol=1e-15)


def test_subband_layout_and_shape():
    x = rand((2, 3, 8, 8), 1)
    y = dwt2(x, db2(np.float64))
    assert y.shape == (2, 12, 4, 4)
    # channel c owns subbands 4c .. 4c+3; transforming it alone gives the same block
    single = dwt2(Tensor(x.data[:, 1:2]), db2(np.float64)).data
    np.testing.assert_allclose(y.data[:, 4:8], single, atol=1e-14)


def test_analysis_kernel_is_outer_product():
    bank = db2(np.float64)
    k = build_analysis_kernel(bank).stacked.data
    a0, a1 = bank.a0.data, bank.a1.data
    np.testing.assert_allclose(k[1, 0], np.outer(a0, a1))
    np.testing.assert_allclose(k[2, 0], np.outer(a1, a0))


@pytest.mark.parametrize("make", [haar, db2])
def test_separable_against_dwt1(make):
    bank = make(np.float64)
    img = np.random.default_rng(3).normal(size=(8, 8))
    lo, hi = zip(*(dwt1(row, bank) for row in img))
    lo, hi = np.array(lo), np.array(hi)
    expect = {}
    for tag, rows in (("L", lo), ("H", hi)):
        cl, ch = zip(*(dwt1(col, bank) for col in rows.T))
        expect["L" + tag], expect["H" + tag] = np.array(cl).T, np.array(ch).T
    y = dwt2(Tensor(img[None, None]), bank).data[0]
    for b, tag in enumerate(("LL", "LH", "HL", "HH")):
        np.testing.assert_allclose(y[b], expect[tag], atol=1e-12)


def test_odd_dims_rejected():
    with pytest.raises(ValueError):
        dwt2(Tensor(np.zeros((1, 1, 5, 4))), haar())
    with pytest.raises(ValueError):
        idwt2(Tensor(np.zeros((1, 6, 2, 2))), haar())


@pytest.mark.parametrize("make", [haar, db2])
def test_classical_banks_satisfy_conditions(make):
    bank = make(np.float64)
    assert wavelet_loss(bank).item() < 1e-10
    pr, alias = reconstruction_terms(bank)
    target = np.zeros(pr.shape)
    target[bank.length - 1] = 2.0
    np.testing.assert_allclose(pr.data, target, atol=1e-12)
    np.testing.assert_allclose(alias.data, 0.0, atol=1e-12)


def test_zero_bank_loss_is_four():
    z = np.zeros(4)
    assert wavelet_loss(FilterBank.from_arrays(z, z, z, z, dtype=np.float64)).item() == 4.0


def test_padded_haar_stays_perfect():
    bank = haar(np.float64).padded(6)
    assert bank.length == 6
    assert wavelet_loss(bank).item() < 1e-20
    x = rand((1, 2, 12, 12), 4)
    np.testing.assert_allclose(idwt2(dwt2(x, bank), bank).data, x.data, atol=1e-12)


@given(st.floats(0.2, 5.0) | st.floats(-5.0, -0.2), st.integers(0, 2 ** 32 - 1))
def test_loss_invariant_under_joint_rescaling(c, seed):
    a0, a1, s0, s1 = np.random.default_rng(seed).normal(size=(4, 4))
    base = wavelet_loss(FilterBank.from_arrays(a0, a1, s0, s1, dtype=np.float64)).item()
    scaled = wavelet_loss(FilterBank.from_arrays(c * a0, c * a1, s0 / c, s1 / c, dtype=np.float64)).item()
    assert math.isclose(base, scaled, rel_tol=1e-9, abs_tol=1e-12)


@given(st.integers(1, 6), st.integers(1, 6), st.integers(0, 2 ** 32 - 1))
def test_poly_product_is_convolution(n, m, seed):
    rng = np.random.default_rng(seed)
    u, v = rng.normal(size=n), rng.normal(size=m)
    w = poly_product(Tensor(u, dtype=np.float64), Tensor(v, dtype=np.float64)).data
    # polynomial multiplication evaluated at a point
    z = 0.7
    assert math.isclose(np.polyval(w[::-1], z), np.polyval(u[::-1], z) * np.polyval(v[::-1], z), rel_tol=1e-9,
                        abs_tol=1e-9)


def test_gradient_reaches_bank_through_transform():
    bank = FilterBank.from_arrays(*db2(np.float64).arrays(), dtype=np.float64)
    x = rand((1, 1, 8, 8), 5)
    with Tape() as tape:
        loss = T.sum_all(T.square(dwt2(x, bank)))
    grads = tape.backward(loss)
    assert np.abs(grads[bank.a0]).sum() > 0


@given(st.integers(0, 2 ** 32 - 1), st.sampled_from([2, 4, 6]))
def test_bank_text_round_trip(seed, n):
    f = np.random.default_rng(seed).normal(size=(4, n))
    bank = FilterBank.from_arrays(*f, dtype=np.float64)
    back = parse_bank(format_bank(bank), dtype=np.float64)
    for a, b in zip(bank.arrays(), back.arrays()):
        np.testing.assert_array_equal(a, b)


@pytest.mark.parametrize("text", ["", "4\na0: 1 2 3 4\n", "3\na0: 1 2 3\na1: 1 2 3\ns0: 1 2 3\ns1: 1 2 3\n",
                                  "2\na0: 1 2\na1: 1 2\ns0: 1 x\ns1: 1 2\n", "2\na0: 1 2\nb1: 1 2\ns0: 1 2\ns1: 1 2\n",
                                  "2\na0: 1\na1: 1 2\ns0: 1 2\ns1: 1 2\n"])
def test_bank_text_rejects_garbage(text):
    with pytest.raises(BankFormatError):
        parse_bank(text)
