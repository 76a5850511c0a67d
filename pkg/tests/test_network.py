import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mlwave import tensor as T
from mlwave.checkpoint import CheckpointError, load_checkpoint, save_checkpoint
from mlwave.gradsuite import OPS_TOL, block_suite
from mlwave.losses import total_wavelet_loss
from mlwave.macs import count_macs
from mlwave.network import (NetworkConfig, NetworkParams, init_params, lwn_forward, mlwnet_forward, param_specs,
                            seb_forward, wfb_forward, whb_forward)
from mlwave.tensor import Tape, Tensor
from mlwave.training.loop import learn_filters
from mlwave.wavelet import FilterBank, db2, haar

SMALL = NetworkConfig(base_width=8, scales=2)


def lwn_identity_params(c, r, bank, dtype=np.float64):
    sub = 4 * c
    pw1 = np.zeros((sub * r, sub, 1, 1))
    pw1[np.arange(sub), np.arange(sub)] = 1.0
    dw = np.zeros((sub * r, 1, 3, 3))
    dw[:, 0, 1, 1] = 1.0
    pw2 = np.zeros((sub, sub * r, 1, 1))
    pw2[np.arange(sub), np.arange(sub)] = 1.0
    arrays = {"pw1.w": pw1, "pw1.b": np.zeros(sub * r), "dw.w": dw, "dw.b": np.zeros(sub * r),
              "pw2.w": pw2, "pw2.b": np.zeros(sub)}
    p = {f"l.{k}": Tensor(v, dtype=dtype) for k, v in arrays.items()}
    for tag, f in zip(("a0", "a1", "s0", "s1"), bank.filters):
        p[f"l.bank.{tag}"] = f
    return p


def x_batch(seed, shape=(2, 3, 16, 16), dtype=np.float32):
    return Tensor(np.random.default_rng(seed).uniform(0, 1, shape), dtype=dtype)


@pytest.mark.parametrize("make", [haar, db2])
def test_lwn_identity_with_identity_weights(make):
    x = x_batch(0, (1, 4, 8, 8), np.float64)
    p = lwn_identity_params(4, 2, make(np.float64))
    np.testing.assert_allclose(lwn_forward(x, p, "l").data, x.data, atol=1e-5)


def test_lwn_identity_holds_for_learned_bank():
    res = learn_filters(4, 5000, 1e-2, seed=0)
    assert res.losses[-1] < 1e-8
    x = x_batch(1, (1, 2, 8, 8), np.float64)
    p = lwn_identity_params(2, 2, res.bank)
    np.testing.assert_allclose(lwn_forward(x, p, "l").data, x.data, atol=1e-4)


def test_lwn_zero_weights_give_zero():
    x = x_batch(0, (1, 4, 8, 8), np.float64)
    p = {k: Tensor(np.zeros(v.shape), dtype=np.float64) if "bank" not in k else v
         for k, v in lwn_identity_params(4, 2, haar(np.float64)).items()}
    assert np.abs(lwn_forward(x, p, "l").data).max() == 0.0


def test_lwn_gradient_reaches_bank():
    x = x_batch(2, (1, 4, 8, 8), np.float64)
    p = lwn_identity_params(4, 2, FilterBank.from_arrays(*db2(np.float64).arrays(), dtype=np.float64))
    with Tape() as tape:
        loss = T.sum_all(T.square(lwn_forward(x, p, "l")))
    g = tape.backward(loss)
    assert np.abs(g[p["l.bank.a0"]]).sum() > 0


def _block(params, prefix):
    return {k: v for k, v in params.tensors.items() if k.startswith(prefix)}


def test_blocks_are_identity_at_init():
    params = init_params(SMALL, seed=3, dtype=np.float64)
    x = x_batch(3, (1, 8, 8, 8), np.float64)
    assert np.array_equal(seb_forward(x, params, "enc1.0").data, x.data)
    assert np.array_equal(wfb_forward(x, params, "dec1.0").data, x.data)
    out, feats = whb_forward(x, params, "dec1.0")
    assert out is feats
    assert np.array_equal(out.data, wfb_forward(x, params, "dec1.0").data)


def test_simple_gate_needs_even_channels():
    from mlwave.network import simple_gate
    with pytest.raises(ValueError):
        simple_gate(Tensor(np.zeros((1, 3, 2, 2))))


def test_block_gradients():
    errors = block_suite(seed=0)
    assert max(errors.values()) < OPS_TOL, errors


def test_output_shapes_and_modes():
    cfg = NetworkConfig()
    params = init_params(cfg, seed=0)
    x = x_batch(0, (1, 3, 32, 32))
    outs = mlwnet_forward(x, params, cfg)
    assert [o.shape for o in outs] == [(1, 3, 32, 32), (1, 3, 16, 16), (1, 3, 8, 8)]
    assert len(mlwnet_forward(x, params, cfg.with_mode(False))) == 1


def test_input_validation():
    params = init_params(SMALL)
    with pytest.raises(ValueError, match="divisible"):
        mlwnet_forward(x_batch(0, (1, 3, 18, 18)), params, SMALL)
    with pytest.raises(ValueError):
        mlwnet_forward(x_batch(0, (1, 1, 16, 16)), params, SMALL)


@settings(max_examples=8)
@given(st.sampled_from([2, 4]), st.integers(2, 3), st.integers(1, 2), st.sampled_from([2, 4]), st.integers(0, 99))
def test_identity_at_init_any_config(half_width, scales, r, n, seed):
    cfg = NetworkConfig(base_width=2 * half_width, scales=scales, r=r, filter_len=n)
    params = init_params(cfg, seed=seed)
    x = x_batch(seed, (1, 3, 16, 16))
    pooled = x
    for o in mlwnet_forward(x, params, cfg):
        assert np.abs(o.data - pooled.data).max() == 0.0
        pooled = T.resample_down2(pooled)


def test_train_and_inference_scale1_bitwise_equal():
    cfg = NetworkConfig(base_width=8, scales=3)
    params = init_params(cfg, seed=1)
    rng = np.random.default_rng(1)
    params = NetworkParams({k: Tensor(v.data + rng.normal(0, 0.05, v.shape).astype(np.float32), name=k)
                            if ".bank." not in k else v for k, v in params.tensors.items()})
    x = x_batch(5, (2, 3, 16, 16))
    a = mlwnet_forward(x, params, cfg)[0].data
    b = mlwnet_forward(x, params, cfg.with_mode(False))[0].data
    assert np.array_equal(a, b)


def test_init_is_deterministic_and_haar():
    cfg = NetworkConfig()
    a, b = init_params(cfg, seed=7), init_params(cfg, seed=7)
    assert list(a.tensors) == list(param_specs(cfg))
    for k in a.tensors:
        assert np.array_equal(a[k].data, b[k].data)
    assert not np.array_equal(a["embed.w"].data, init_params(cfg, seed=8)["embed.w"].data)
    banks = a.banks()
    # one bank per WFB (fusion scales 3..2) and per WHB (decoder scales 3..1), two blocks each
    assert len(banks) == 2 * (2 + 3)
    assert total_wavelet_loss([bk.astype(np.float64) for bk in banks]).item() < 1e-10
    np.testing.assert_allclose(banks[0].a0.data, [0, 2 ** -0.5, 2 ** -0.5, 0], atol=1e-7)
    for name, t in a.tensors.items():
        if "pw_out" in name or name.startswith("head"):
            assert not t.data.any(), name


def test_config_validation():
    for bad in (dict(base_width=7), dict(scales=1), dict(r=0), dict(filter_len=3), dict(blocks_per_stage=(1, 1))):
        with pytest.raises(ValueError):
            NetworkConfig(**bad)
    assert NetworkConfig(blocks_per_stage=2).blocks_per_stage == (2, 2, 2)


def test_mac_counter_properties():
    cfg = NetworkConfig()
    r64 = count_macs(cfg, 64, 64)
    assert r64.total == 237_715_456
    assert sum(r64.stages.values()) == r64.total
    assert count_macs(cfg, 128, 128).total == 4 * r64.total
    assert count_macs(cfg.with_mode(False), 64, 64).total < r64.total
    wide = count_macs(NetworkConfig(base_width=32), 64, 64).total
    # below 4x: the wavelet transforms, embed and heads grow linearly with width
    assert wide == 900_104_192
    assert 3.7 < wide / r64.total < 4.0
    with pytest.raises(ValueError):
        count_macs(cfg, 60, 64)


def test_mac_counter_matches_instrumented_forward(monkeypatch):
    import mlwave.conv as C
    import mlwave.network as N
    import mlwave.wavelet as W
    seen = []
    conv, convt = C.conv2d, C.conv2d_transpose

    def counting_conv(x, k, bias=None, stride=1, groups=1, padding=C.NO_PAD):
        out = conv(x, k, bias, stride, groups, padding)
        seen.append(C.conv_macs(x.shape[1], k.shape[0], k.shape[2], k.shape[3], out.shape[2], out.shape[3], groups))
        return out

    def counting_convt(y, k, stride=1, groups=1, padding=C.NO_PAD):
        seen.append(C.conv_macs(k.shape[1] * groups, k.shape[0], k.shape[2], k.shape[3], y.shape[2], y.shape[3],
                                groups))
        return convt(y, k, stride, groups, padding)

    monkeypatch.setattr(N, "conv2d", counting_conv)
    monkeypatch.setattr(W, "conv2d", counting_conv)
    monkeypatch.setattr(W, "conv2d_transpose", counting_convt)
    for cfg in (NetworkConfig(), NetworkConfig(base_width=8, scales=2, r=1, filter_len=6).with_mode(False)):
        seen.clear()
        mlwnet_forward(x_batch(0, (1, 3, 32, 32)), init_params(cfg), cfg)
        assert sum(seen) == count_macs(cfg, 32, 32).total


def test_checkpoint_round_trip(tmp_path):
    cfg = NetworkConfig(base_width=8, scales=2, blocks_per_stage=(1, 2), r=1, filter_len=6)
    params = init_params(cfg, seed=4)
    save_checkpoint(tmp_path / "ck", params, cfg)
    back, cfg2 = load_checkpoint(tmp_path / "ck")
    assert cfg2 == cfg
    assert list(back.tensors) == list(params.tensors)
    for k in params.tensors:
        assert np.array_equal(back[k].data, params[k].data) and back[k].dtype == params[k].dtype
    manifest = (tmp_path / "ck" / "manifest.txt").read_text().splitlines()
    assert "embed.w 8x3x3x3 float32" in manifest
    assert len(list((tmp_path / "ck" / "banks").iterdir())) == len(params.bank_prefixes())


def test_checkpoint_rejects_damage(tmp_path):
    cfg = SMALL
    save_checkpoint(tmp_path / "ck", init_params(cfg), cfg)
    (tmp_path / "ck" / "tensors" / "embed.w.mlwt").write_bytes(b"junk")
    with pytest.raises(CheckpointError):
        load_checkpoint(tmp_path / "ck")
    with pytest.raises(CheckpointError):
        load_checkpoint(tmp_path / "missing")
