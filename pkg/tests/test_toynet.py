from __future__ import annotations

import dataclasses

import numpy as np
import pytest

from oracles import central_difference
from tailquant.compensation import Adapter
from tailquant.errors import ParameterError, ShapeError
from tailquant.numerics import RngState
from tailquant.quantizer import BitWidthSpec, QuantParams
from tailquant.toynet import (
    QuantState,
    ToyNet,
    ToyNetConfig,
    UnitQuant,
    backward_wrt_activations,
    forward,
    gen_calibration_pool,
    gen_probe,
    init_toynet,
    layer_norm,
    layer_tokens,
)


def _x(net, n=2, seed=0):
    return gen_probe(net.config, n, RngState(seed))


# ---------------------------------------------------------------------------
# Construction
# ---------------------------------------------------------------------------

def test_config_validation():
    with pytest.raises(ParameterError):
        ToyNetConfig(d_model=10, n_heads=4)
    with pytest.raises(ParameterError):
        ToyNetConfig(d_model=8, d_ff=16, outlier_channels=9, n_heads=2)


def test_init_is_deterministic():
    a, b = init_toynet(ToyNetConfig(seed=4)), init_toynet(ToyNetConfig(seed=4))
    assert a.params.keys() == b.params.keys()
    assert all(np.array_equal(a.params[k], b.params[k]) for k in a.params)
    c = init_toynet(ToyNetConfig(seed=5))
    assert not np.array_equal(a.params["blocks.0.attn.qkv.weight"], c.params["blocks.0.attn.qkv.weight"])


def test_outlier_rows_are_scaled():
    net = init_toynet(ToyNetConfig(seed=1))
    w = net.block(0, "mlp.fc1.weight")
    norms = np.linalg.norm(w, axis=1)
    normal = np.delete(norms, list(net.outlier_idx))
    assert len(net.outlier_idx) == 4
    assert norms[list(net.outlier_idx)].min() > 3 * normal.max()


def test_module_and_unit_names():
    net = init_toynet(ToyNetConfig(depth=2))
    assert net.module_names() == ["blocks.0.attn", "blocks.0.mlp", "blocks.1.attn", "blocks.1.mlp"]
    assert len(net.unit_names()) == 10


# ---------------------------------------------------------------------------
# Forward
# ---------------------------------------------------------------------------

def test_zero_net_zero_input():
    net = init_toynet(ToyNetConfig(depth=2, d_model=8, n_heads=2, d_ff=16, seq_len=4, outlier_channels=1))
    zero = ToyNet(net.config, {k: np.zeros_like(v) for k, v in net.params.items()})
    out = forward(zero, np.zeros((1, 4, 8))).output
    np.testing.assert_array_equal(out, 0.0)


def test_softmax_rows_and_layer_norm(small_net):
    t = forward(small_net, _x(small_net), taps=True).taps
    for i in range(2):
        np.testing.assert_allclose(t[f"blocks.{i}.attn.probs"].sum(-1), 1.0, atol=1e-10)
    x = np.random.default_rng(0).normal(size=(5, 16)) * 3 + 1
    y = layer_norm(x, np.ones(16), np.zeros(16))
    assert np.abs(y.mean(-1)).max() < 1e-10
    np.testing.assert_allclose(y.var(-1), 1.0, atol=1e-8)


def test_permutation_equivariance(small_net):
    x = _x(small_net, 1)
    p = np.random.default_rng(1).permutation(small_net.config.seq_len)
    np.testing.assert_allclose(forward(small_net, x[:, p]).output, forward(small_net, x).output[:, p],
                               atol=1e-12)


def test_forward_determinism_and_batching(small_net):
    x = _x(small_net, 3)
    a, b = forward(small_net, x).output, forward(small_net, x).output
    np.testing.assert_array_equal(a, b)
    np.testing.assert_allclose(forward(small_net, x[1]).output, a[1], atol=1e-12)


def test_forward_shape_error(small_net):
    with pytest.raises(ShapeError):
        forward(small_net, np.zeros((2, 5, 16)))


def test_taps_cover_every_submodule(small_net):
    t = forward(small_net, _x(small_net), taps=True).taps
    for m in small_net.module_names():
        for k in ("in", "out", "res"):
            assert f"{m}.{k}" in t
    np.testing.assert_allclose(t["blocks.0.attn.res"], t["blocks.0.attn.in"] + t["blocks.0.attn.out"])


def test_quant_state_and_adapter_change_output(small_net):
    x = _x(small_net)
    fp = forward(small_net, x).output
    st = QuantState({"blocks.0.mlp.fc1": UnitQuant(QuantParams(0.2, BitWidthSpec(4)), None)})
    assert not np.allclose(forward(small_net, x, state=st).output, fp)
    d = small_net.config.d_model
    bias = Adapter(np.zeros((d, 1)), np.zeros((1, d)), np.full(d, 0.5), 1, True, 1.0)
    t = forward(small_net, x, state=QuantState({}, {"blocks.1.mlp": bias}), taps=True).taps
    np.testing.assert_allclose(t["blocks.1.mlp.res"], t["blocks.1.mlp.in"] + t["blocks.1.mlp.out"] + 0.5)


def test_override_replaces_operands(small_net):
    x = _x(small_net)
    t = forward(small_net, x, taps=True).taps
    w = small_net.block(0, "attn.proj.weight")
    same = forward(small_net, x, override={"blocks.0.attn.proj": (t["blocks.0.attn.ctx"], w)}).output
    np.testing.assert_array_equal(same, forward(small_net, x).output)


def test_heavy_tail_realization():
    for seed in range(5):
        net = init_toynet(ToyNetConfig(seed=seed, outlier_scale=8.0))
        t = forward(net, _x(net, 8, seed), taps=True).taps
        for i in range(net.config.depth):
            e = np.sort(t[f"blocks.{i}.mlp.act"].ravel() ** 2)[::-1]
            k = max(1, int(0.01 * e.size))
            assert e[:k].sum() / e.sum() >= 0.20


# ---------------------------------------------------------------------------
# Backward
# ---------------------------------------------------------------------------

def _fd_check(net, x, names, seed=0):
    grads = backward_wrt_activations(net, x)
    base = forward(net, x, taps=True).taps
    for name in names:
        def loss(e, name=name):
            return 0.5 * float(np.sum(forward(net, x, perturb={name: e - base[name]}).output ** 2))
        fd = central_difference(loss, base[name], 1e-4)
        g = grads[name]
        rel = np.linalg.norm(fd - g) / max(np.linalg.norm(fd), 1e-30)
        assert rel < 1e-4, (name, rel)


def test_gradients_match_finite_differences_depth1():
    net = init_toynet(ToyNetConfig(depth=1, d_model=8, n_heads=2, d_ff=16, seq_len=4, outlier_channels=1, seed=2))
    x = gen_probe(net.config, 1, RngState(0))
    _fd_check(net, x, ["input", "blocks.0.attn.ln", "blocks.0.attn.qkv", "blocks.0.attn.probs",
                       "blocks.0.attn.ctx", "blocks.0.mlp.in", "blocks.0.mlp.fc1", "blocks.0.mlp.act"])


def test_linear_base_case(small_net):
    x = _x(small_net, 1)
    up = np.random.default_rng(0).normal(size=(1, 8, 16))
    g = backward_wrt_activations(small_net, x, up)
    # output = mlp.res of the last block; act -> out is the fc2 linear map
    np.testing.assert_allclose(g["blocks.1.mlp.act"], up @ small_net.block(1, "mlp.fc2.weight"), atol=1e-12)


def test_zero_upstream(small_net):
    x = _x(small_net, 1)
    g = backward_wrt_activations(small_net, x, np.zeros((1, 8, 16)))
    assert all(not np.any(v) for v in g.values())
    with pytest.raises(ShapeError):
        backward_wrt_activations(small_net, x, np.zeros((1, 8, 15)))


# ---------------------------------------------------------------------------
# Synthetic data
# ---------------------------------------------------------------------------

def test_pool_generation():
    cfg = ToyNetConfig()
    pool = gen_calibration_pool(cfg, 20, 0.25, RngState(0))
    assert len(pool) == 20 and len(pool.planted_ids) == 5
    assert pool.samples[0].payload.shape == (32, 64)
    assert not gen_calibration_pool(cfg, 20, 0.0, RngState(0)).planted_ids
    again = gen_calibration_pool(cfg, 20, 0.25, RngState(0))
    assert again.planted_ids == pool.planted_ids
    assert all(np.array_equal(a.payload, b.payload) for a, b in zip(pool.samples, again.samples))
    planted = pool.stack(sorted(pool.planted_ids))
    clean = pool.stack(sorted(set(pool.ids()) - pool.planted_ids))
    assert np.abs(planted).max() > np.abs(clean).max()


@pytest.mark.parametrize("m,frac", [(1, 0.0), (10, -0.1), (10, 1.5)])
def test_pool_invalid(m, frac):
    with pytest.raises(ParameterError):
        gen_calibration_pool(ToyNetConfig(), m, frac, RngState(0))


def test_layer_tokens(small_net):
    model = layer_tokens(small_net)
    layers = model(_x(small_net, 1)[0])
    assert len(layers) == 2 and layers[0].shape == (8, 16)
