import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from mlwave import tensor as T
from mlwave.tensor import NonFiniteError, Tape, TapeError, Tensor, TensorFormatError


def f64(a, grad=True):
    return Tensor(np.asarray(a, dtype=np.float64), requires_grad=grad)


def test_backward_of_product():
    x = f64([1.0, 2.0, 3.0])
    with Tape() as tape:
        loss = T.sum_all(T.mul(x, x))
    g = tape.backward(loss)
    np.testing.assert_allclose(g[x], [2.0, 4.0, 6.0])


def test_gradient_accumulates_over_reuse():
    x = f64([0.5, -1.0])
    with Tape() as tape:
        y = T.add(T.mul(x, x), T.scale(x, 3.0))
        loss = T.sum_all(y)
    np.testing.assert_allclose(tape.backward(loss)[x], 2 * x.data + 3.0)


def test_second_backward_raises():
    x = f64([1.0])
    with Tape() as tape:
        loss = T.sum_all(T.square(x))
    tape.backward(loss)
    with pytest.raises(TapeError):
        tape.backward(loss)


def test_backward_needs_scalar():
    x = f64([1.0, 2.0])
    with Tape() as tape:
        y = T.square(x)
    with pytest.raises(ValueError):
        tape.backward(y)


def test_no_recording_outside_tape():
    x = f64([1.0])
    y = T.square(x)
    assert not y.requires_grad
    with pytest.raises(TapeError):
        T.backward(T.sum_all(y))


def test_constants_get_no_gradient():
    x, c = f64([1.0, 2.0]), f64([3.0, 4.0], grad=False)
    with Tape() as tape:
        loss = T.sum_all(T.mul(x, c))
    g = tape.backward(loss)
    assert c not in g
    np.testing.assert_allclose(g[x], c.data)


def test_tensors_are_immutable():
    x = Tensor([1.0, 2.0])
    with pytest.raises(ValueError):
        x.data[0] = 5.0


def test_non_finite_output_raises_with_op_name():
    x = Tensor(np.array([1e38, 1e38], dtype=np.float32), name="big")
    with np.errstate(over="ignore"), pytest.raises(NonFiniteError, match="mul.*big"):
        T.mul(x, x)


def test_log10_of_nonpositive_raises():
    with pytest.raises(NonFiniteError):
        T.log10(Tensor([0.0]))


def test_shape_and_dtype_mismatch():
    with pytest.raises(ValueError):
        T.add(Tensor(np.zeros(2)), Tensor(np.zeros(3)))
    with pytest.raises(TypeError):
        T.add(Tensor(np.zeros(2), dtype=np.float32), Tensor(np.zeros(2), dtype=np.float64))


def test_resample_pair_values():
    x = Tensor(np.arange(16, dtype=np.float64).reshape(1, 1, 4, 4))
    down = T.resample_down2(x).data
    np.testing.assert_allclose(down[0, 0], [[2.5, 4.5], [10.5, 12.5]])
    up = T.resample_up2(Tensor(down)).data
    assert up.shape == (1, 1, 4, 4)
    np.testing.assert_allclose(T.resample_down2(Tensor(up)).data, down)


def test_layernorm_normalizes_channels():
    x = Tensor(np.random.default_rng(0).normal(3.0, 2.0, (2, 8, 4, 4)), dtype=np.float64)
    y = T.channel_layernorm(x, Tensor(np.ones(8), dtype=np.float64), Tensor(np.zeros(8), dtype=np.float64)).data
    np.testing.assert_allclose(y.mean(axis=1), 0.0, atol=1e-12)
    np.testing.assert_allclose(y.var(axis=1), 1.0, atol=1e-5)


@given(arrays(np.float64, st.integers(1, 6), elements=st.floats(-10, 10)))
def test_sum_gradient_is_ones(a):
    x = f64(a)
    with Tape() as tape:
        loss = T.sum_all(x)
    np.testing.assert_array_equal(tape.backward(loss)[x], np.ones_like(a))


@given(arrays(np.float64, (2, 3), elements=st.floats(-5, 5)), arrays(np.float64, (2, 3), elements=st.floats(-5, 5)))
def test_outer_product_rule(a, b):
    x, y = f64(a), f64(b)
    with Tape() as tape:
        loss = T.sum_all(T.mul(x, y))
    g = tape.backward(loss)
    np.testing.assert_array_equal(g[x], b)
    np.testing.assert_array_equal(g[y], a)


@given(st.sampled_from([np.float32, np.float64]),
       st.lists(st.integers(1, 4), min_size=0, max_size=4),
       st.integers(0, 2 ** 32 - 1))
def test_tensor_file_round_trip(dtype, shape, seed):
    arr = np.random.default_rng(seed).normal(size=shape).astype(dtype)
    back = T.decode_tensor(T.encode_tensor(arr))
    assert back.dtype == dtype and back.shape == tuple(shape)
    np.testing.assert_array_equal(back.data, arr)


def test_tensor_file_layout():
    raw = T.encode_tensor(np.array([[1.0, 2.0]], dtype=np.float32))
    assert raw[:4] == b"MLWT"
    assert raw[4:7] == bytes([1, 0, 2])
    assert raw[7:15] == (1).to_bytes(4, "little") + (2).to_bytes(4, "little")
    assert np.frombuffer(raw[15:], "<f4").tolist() == [1.0, 2.0]


@pytest.mark.parametrize("raw", [b"", b"XXXX\x01\x00\x00", b"MLWT\x02\x00\x00", b"MLWT\x01\x07\x00",
                                 b"MLWT\x01\x00\x01\x02\x00\x00\x00\x00"])
def test_tensor_file_rejects_garbage(raw):
    with pytest.raises(TensorFormatError):
        T.decode_tensor(raw)


def test_tensor_file_rejects_unsupported_dtype():
    with pytest.raises(TensorFormatError):
        T.encode_tensor(np.zeros(2, dtype=np.int32))
