import math
from dataclasses import replace

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from hybrid_risk import autograd as ag
from hybrid_risk.autograd import Tensor
from hybrid_risk.exceptions import ConfigurationError, DimensionError
from hybrid_risk.gradsuite import TINY_MODEL, check_model
from hybrid_risk.model import (Model, ModelConfig, attention, classify, cnn_encode, forward,
                               glorot_bound, init_params, multi_head_attention, param_shapes,
                               pool_sequence, transformer_block)


def T(a):
    return Tensor(np.asarray(a, dtype=float))


def zero_block(config, block=0):
    params = init_params(config)
    for name, p in params.items():
        if name.startswith(f"attn.block{block}") and not name.endswith(".gain"):
            p.data = np.zeros_like(p.data)
    return params


class TestConfig:
    def test_padding_keeps_length(self):
        assert ModelConfig(seq_len=12, conv_layers=((16, 3, 1),), conv_padding=1).encoded_length() == 12

    def test_encoded_length_example(self):
        cfg = ModelConfig(seq_len=8, n_features=2, conv_layers=((4, 3, 2),), conv_padding=0)
        assert cfg.encoded_length() == 3

    def test_cnn_output_shape(self):
        cfg = ModelConfig(seq_len=8, n_features=2, conv_layers=((4, 3, 2),), conv_padding=0,
                          d_model=5)
        out = cnn_encode(T(np.ones((2, 8))), init_params(cfg), cfg)
        assert out.shape == (3, 5)

    @pytest.mark.parametrize("bad", [
        dict(variant="no_attention"), dict(n_heads=0), dict(dropout_rate=1.0),
        dict(conv_layers=((4, 20, 1),)), dict(conv_layers=((4, 3, 13),)),
        dict(positional_encoding="learned"), dict(conv_layers=()),
    ])
    def test_invalid(self, bad):
        with pytest.raises(ConfigurationError):
            ModelConfig(**bad)

    def test_dict_round_trip(self):
        cfg = ModelConfig(conv_layers=((8, 3, 2), (4, 2, 1)), variant="without_cnn")
        assert ModelConfig.from_dict(cfg.to_dict()) == cfg

    def test_unknown_key(self):
        with pytest.raises(ConfigurationError, match="unknown"):
            ModelConfig.from_dict({"depth": 3})

    def test_fingerprint_ignores_seed(self):
        cfg = ModelConfig()
        assert cfg.fingerprint() == replace(cfg, seed=9).fingerprint()
        assert cfg.fingerprint() != cfg.with_variant("without_cnn").fingerprint()


class TestCnnEncode:
    def test_identity_pipeline(self):
        cfg = ModelConfig(seq_len=5, n_features=3, conv_layers=((3, 1, 1),), conv_padding=0,
                          d_model=3)
        params = init_params(cfg)
        params["cnn.layer0.kernels"].data = np.eye(3)[:, :, None]
        params["cnn.proj.W"].data = np.eye(3)
        x = np.abs(np.random.default_rng(0).normal(size=(3, 5)))  # relu-invariant
        np.testing.assert_array_equal(cnn_encode(T(x), params, cfg).data, x.T)

    def test_zero_input(self):
        cfg = ModelConfig(seq_len=6, n_features=2, conv_layers=((4, 2, 1), (3, 2, 2)))
        out = cnn_encode(T(np.zeros((2, 6))), init_params(cfg), cfg)
        np.testing.assert_array_equal(out.data, 0.0)

    def test_shape_mismatch(self):
        cfg = ModelConfig(seq_len=6, n_features=2)
        with pytest.raises(ConfigurationError):
            cnn_encode(T(np.zeros((3, 6))), init_params(cfg), cfg)


def softmax(row):
    m = max(row)
    e = [math.exp(v - m) for v in row]
    s = sum(e)
    return [v / s for v in e]


class TestAttention:
    def test_single_step_returns_v(self):
        rng = np.random.default_rng(0)
        v = rng.normal(size=(1, 3))
        out = attention(T(rng.normal(size=(1, 2))), T(rng.normal(size=(1, 2))), T(v))
        np.testing.assert_array_equal(out.data, v)

    def test_uniform_scores_average_v(self):
        v = np.random.default_rng(1).normal(size=(4, 3))
        out = attention(T(np.zeros((4, 2))), T(np.ones((4, 2))), T(v))
        np.testing.assert_allclose(out.data, np.tile(v.mean(axis=0), (4, 1)), atol=1e-15)

    def test_identity_example(self):
        eye = np.eye(2)
        w = softmax([1 / math.sqrt(2), 0.0])
        expected = [[w[0], w[1]], [w[1], w[0]]]
        np.testing.assert_allclose(attention(T(eye), T(eye), T(eye)).data, expected,
                                   rtol=0, atol=1e-15)

    @pytest.mark.parametrize("c", [-50.0, -1.0, 0.0, 0.3, 7.0, 1e3])
    def test_scale_keeps_constant_rows_uniform(self, c):
        q = np.full((3, 4), c)
        weights = []
        attention(T(q), T(q), T(np.eye(3)), weights)
        np.testing.assert_allclose(weights[0], 1 / 3, rtol=0, atol=1e-15)

    def test_width_mismatch(self):
        with pytest.raises(DimensionError):
            attention(T(np.ones((2, 2))), T(np.ones((2, 3))), T(np.ones((2, 2))))


class TestMultiHead:
    def test_matches_loop_oracle(self):
        cfg = ModelConfig(seq_len=2, n_features=2, variant="without_cnn", d_model=3,
                          n_heads=2, d_k=1, d_v=1)
        params = init_params(cfg, 7)
        f = np.random.default_rng(7).normal(size=(2, 3))
        got = multi_head_attention(T(f), params, cfg).data

        heads = []
        for j in range(2):
            wq, wk, wv = (params[f"attn.block0.head{j}.{n}"].data.tolist()
                          for n in ("W_Q", "W_K", "W_V"))
            q = [sum(f[t][i] * wq[i][0] for i in range(3)) for t in range(2)]
            k = [sum(f[t][i] * wk[i][0] for i in range(3)) for t in range(2)]
            v = [sum(f[t][i] * wv[i][0] for i in range(3)) for t in range(2)]
            z = []
            for t in range(2):
                w = softmax([q[t] * k[s] for s in range(2)])  # sqrt(d_k) = 1
                z.append(w[0] * v[0] + w[1] * v[1])
            heads.append(z)
        wo = params["attn.block0.W_o"].data.tolist()
        want = [[heads[0][t] * wo[0][c] + heads[1][t] * wo[1][c] for c in range(3)]
                for t in range(2)]
        np.testing.assert_allclose(got, want, rtol=0, atol=1e-12)

    def test_single_head_identity_projection(self):
        cfg = ModelConfig(seq_len=3, n_features=2, variant="without_cnn", d_model=4,
                          n_heads=1, d_k=2, d_v=4)
        params = init_params(cfg, 3)
        params["attn.block0.W_o"].data = np.eye(4)
        f = T(np.random.default_rng(3).normal(size=(3, 4)))
        p = {n: params[f"attn.block0.head0.{n}"] for n in ("W_Q", "W_K", "W_V")}
        want = attention(f @ p["W_Q"], f @ p["W_K"], f @ p["W_V"]).data
        np.testing.assert_array_equal(multi_head_attention(f, params, cfg).data, want)

    def test_zero_values(self):
        cfg = ModelConfig()
        params = init_params(cfg)
        for j in range(cfg.n_heads):
            params[f"attn.block0.head{j}.W_V"].data[:] = 0
        f = T(np.random.default_rng(0).normal(size=(5, cfg.d_model)))
        np.testing.assert_array_equal(multi_head_attention(f, params, cfg).data, 0.0)


class TestTransformerBlock:
    def test_zero_weights_is_double_layer_norm(self):
        cfg = ModelConfig()
        params = zero_block(cfg)
        f = T(np.random.default_rng(2).normal(size=(6, cfg.d_model)))
        ones, zeros = T(np.ones(cfg.d_model)), T(np.zeros(cfg.d_model))
        want = ag.layer_norm(ag.layer_norm(f, ones, zeros), ones, zeros).data
        np.testing.assert_allclose(transformer_block(f, params, cfg).data, want, atol=1e-15)

    @settings(max_examples=20, deadline=None)
    @given(st.integers(1, 6), st.integers(1, 3), st.integers(0, 2**32 - 1))
    def test_shape_preserved(self, t, heads, seed):
        cfg = ModelConfig(seq_len=t, n_features=2, variant="without_cnn", d_model=6,
                          n_heads=heads, d_k=2, d_v=3)
        f = T(np.random.default_rng(seed).normal(size=(t, 6)))
        assert transformer_block(f, init_params(cfg, seed), cfg).shape == (t, 6)

    def test_second_block_matters(self):
        cfg = ModelConfig(n_blocks=2)
        params = init_params(cfg, 4)
        x = np.random.default_rng(4).normal(size=(3, cfg.seq_len, cfg.n_features))
        before = forward(x, params, cfg).data
        one = replace(cfg, n_blocks=1)
        trimmed = {k: v for k, v in params.items() if not k.startswith("attn.block1")}
        assert not np.allclose(before, forward(x, trimmed, one).data)


class TestPoolAndClassify:
    def test_pool_single_row(self):
        np.testing.assert_array_equal(pool_sequence(T([[1.0, 2.0]])).data, [1, 2])

    def test_pool_two_rows(self):
        np.testing.assert_array_equal(pool_sequence(T([[1, 1], [3, 3]])).data, [2, 2])

    def test_pool_permutation(self):
        z = np.random.default_rng(0).normal(size=(5, 3))
        perm = [3, 0, 4, 1, 2]
        np.testing.assert_allclose(pool_sequence(T(z[perm])).data, pool_sequence(T(z)).data,
                                   atol=1e-15)

    def _head(self, b):
        return {"head.W_y": T(np.zeros((3, 1))), "head.b": T([b])}

    def test_zero_logit(self):
        assert classify(T(np.ones(3)), self._head(0.0)).data == 0.5

    def test_bias_ln3(self):
        assert abs(float(classify(T(np.ones(3)), self._head(math.log(3))).data) - 0.75) < 1e-12

    @given(st.lists(st.floats(-1e3, 1e3), min_size=3, max_size=3))
    def test_range(self, z):
        params = {"head.W_y": T(np.ones((3, 1))), "head.b": T([0.0])}
        p = float(classify(T(z), params).data)
        assert 0.0 <= p <= 1.0 and np.isfinite(p)


VARIANT_CONFIGS = [ModelConfig(variant=v) for v in ("full", "without_cnn", "without_transformer")]


class TestForward:
    @pytest.mark.parametrize("cfg", VARIANT_CONFIGS, ids=lambda c: c.variant)
    def test_one_probability_per_sample(self, cfg):
        x = np.random.default_rng(0).normal(size=(7, cfg.seq_len, cfg.n_features))
        p = forward(x, init_params(cfg), cfg).data
        assert p.shape == (7,)
        assert np.all((p > 0) & (p < 1))

    def test_single_sample_scalar(self):
        cfg = ModelConfig()
        p = forward(np.zeros((cfg.seq_len, cfg.n_features)), init_params(cfg), cfg)
        assert p.shape == ()

    def test_param_audit(self):
        names = param_shapes(ModelConfig(variant="without_transformer"))
        assert not [n for n in names if n.startswith("attn.")]
        names = param_shapes(ModelConfig(variant="without_cnn"))
        assert not [n for n in names if n.startswith("cnn.")]
        assert "head.W_y" in names and "head.b" in names

    def test_batch_order(self):
        cfg = ModelConfig()
        x = np.random.default_rng(5).normal(size=(6, cfg.seq_len, cfg.n_features))
        params = init_params(cfg, 5)
        perm = np.random.default_rng(6).permutation(6)
        np.testing.assert_array_equal(forward(x[perm], params, cfg).data,
                                      forward(x, params, cfg).data[perm])

    def test_time_permutation_without_order_signal(self):
        cfg = ModelConfig(variant="without_cnn", positional_encoding="none")
        params = init_params(cfg, 8)
        x = np.random.default_rng(8).normal(size=(cfg.seq_len, cfg.n_features))
        perm = np.random.default_rng(9).permutation(cfg.seq_len)
        a, b = forward(x, params, cfg).data, forward(x[perm], params, cfg).data
        assert abs(float(a) - float(b)) < 1e-9

    def test_positional_encoding_breaks_time_symmetry(self):
        cfg = ModelConfig(variant="without_cnn")
        params = init_params(cfg, 8)
        x = np.random.default_rng(8).normal(size=(cfg.seq_len, cfg.n_features))
        assert forward(x, params, cfg).data != forward(x[::-1], params, cfg).data

    def test_attention_rows_normalized(self):
        cfg = ModelConfig(n_blocks=2, n_heads=3)
        rng = np.random.default_rng(11)
        weights = []
        forward(rng.normal(size=(4, cfg.seq_len, cfg.n_features)), init_params(cfg), cfg,
                weights_out=weights)
        assert len(weights) == 6
        for w in weights:
            np.testing.assert_allclose(w.sum(axis=-1), 1.0, rtol=0, atol=1e-12)

    def test_input_mismatch(self):
        cfg = ModelConfig()
        with pytest.raises(ConfigurationError):
            forward(np.zeros((cfg.seq_len + 1, cfg.n_features)), init_params(cfg), cfg)

    def test_params_mismatch(self):
        params = init_params(ModelConfig(d_model=8, d_k=4, d_v=4))
        with pytest.raises(ConfigurationError):
            forward(np.zeros((12, 4)), params, ModelConfig())

    def test_dropout_only_in_training(self):
        cfg = ModelConfig(dropout_rate=0.5)
        params = init_params(cfg)
        x = np.random.default_rng(0).normal(size=(3, cfg.seq_len, cfg.n_features))
        eval_out = forward(x, params, cfg).data
        same = forward(x, params, cfg, rng=np.random.default_rng(1)).data
        np.testing.assert_array_equal(eval_out, same)
        train_out = forward(x, params, cfg, training=True, rng=np.random.default_rng(1)).data
        assert not np.array_equal(eval_out, train_out)


class TestInit:
    def test_deterministic(self):
        a, b = init_params(ModelConfig(), 3), init_params(ModelConfig(), 3)
        for name in a:
            np.testing.assert_array_equal(a[name].data, b[name].data)

    def test_seed_changes_something(self):
        a, b = init_params(ModelConfig(), 3), init_params(ModelConfig(), 4)
        assert any(not np.array_equal(a[n].data, b[n].data) for n in a)

    def test_bounds_over_100_seeds(self):
        cfg = ModelConfig(conv_layers=((8, 3, 2), (6, 2, 1)), n_blocks=2)
        for seed in range(100):
            for name, p in init_params(cfg, seed).items():
                leaf = name.rsplit(".", 1)[-1]
                if leaf == "gain":
                    assert np.all(p.data == 1.0)
                elif leaf in ("bias", "b", "b1", "b2", "shift"):
                    assert np.all(p.data == 0.0)
                else:
                    assert np.abs(p.data).max() <= glorot_bound(p.shape), name

    def test_every_param_requires_grad(self):
        assert all(p.requires_grad for p in init_params(ModelConfig()).values())

    def test_model_predict(self):
        model = Model.initialize(ModelConfig(), 0)
        x = np.random.default_rng(0).normal(size=(4, 12, 4))
        p = model.predict_proba(x)
        np.testing.assert_array_equal(model.predict(x), (p >= 0.5).astype(int))
        assert list(model.parameter_names()) == list(model.params)


@pytest.mark.parametrize("variant", ["full", "without_cnn", "without_transformer"])
def test_composed_gradient(variant):
    result = check_model(replace(TINY_MODEL, variant=variant))
    assert result.max_rel_error <= 1e-4
