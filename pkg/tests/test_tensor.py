import math

import numpy as np
import pytest

from emevlab.errors import ConfigurationError, DimensionError, UsageError
from emevlab.tensor import ops
from emevlab.tensor.autograd import Parameter, Tensor, no_grad
from emevlab.tensor.layers import (AttentionResidualBlock, Conv, ConvResidualBlock, Dense,
                                   MultiHeadAttention)
from emevlab.tensor.optim import Adam, AdamState, adam_step

from oracles import (attention_loop, central_difference, conv2d_loop, conv3d_loop, dense_loop,
                     relative_error)

F64 = np.float64


def params64(rng, *shapes, scale=0.5):
    return [Parameter(rng.standard_normal(s) * scale, dtype=F64) for s in shapes]


def grad_check(loss_fn, params, tol=1e-3):
    """Compare backprop gradients with central differences (h = 1e-3) in float64."""
    for p in params:
        p.zero_grad()
    loss_fn().backward()
    analytic = [p.grad.copy() for p in params]
    with no_grad():
        numeric = central_difference(lambda: float(loss_fn().item()), [p.data for p in params])
    errors = [relative_error(a, n) for a, n in zip(analytic, numeric)]
    assert max(errors) <= tol, errors
    return errors


def projected(out, rng):
    """Scalar sum(out * r) with a fixed random r so every output entry matters."""
    r = rng.standard_normal(out.shape)
    return ops.sum(ops.mul(out, r))


# dense ----------------------------------------------------------------------

class TestDense:
    def test_identity_linear(self):
        w = Tensor(np.eye(3))
        out = ops.dense(Tensor([1.0, 2.0, 3.0]), w, Tensor(np.zeros(3)))
        np.testing.assert_array_equal(out.data, [1, 2, 3])

    def test_identity_relu_clips(self):
        out = ops.dense(Tensor([-1.0, 2.0]), Tensor(np.eye(2)), Tensor(np.zeros(2)), "relu")
        np.testing.assert_array_equal(out.data, [0, 2])

    def test_matches_loop_oracle(self, rng):
        x, w, b = rng.standard_normal(5), rng.standard_normal((5, 4)), rng.standard_normal(4)
        out = ops.dense(Tensor(x, dtype=F64), Tensor(w, dtype=F64), Tensor(b, dtype=F64))
        np.testing.assert_allclose(out.data, dense_loop(x, w, b), atol=1e-6)

    def test_shape_mismatch(self):
        with pytest.raises(DimensionError):
            ops.dense(Tensor(np.ones(3)), Tensor(np.ones((4, 2))), Tensor(np.zeros(2)))

    def test_bad_activation(self):
        with pytest.raises(ConfigurationError):
            ops.dense(Tensor(np.ones(2)), Tensor(np.eye(2)), Tensor(np.zeros(2)), "swish")

    @pytest.mark.parametrize("activation", ["linear", "relu", "leaky_relu", "tanh"])
    def test_gradient(self, rng, activation):
        x, w, b = params64(rng, (3, 4), (4, 5), (5,))
        grad_check(lambda: projected(ops.dense(x, w, b, activation), np.random.default_rng(0)),
                   [x, w, b])

    def test_single_vector_gradient(self, rng):
        x, w, b = params64(rng, (4,), (4, 3), (3,))
        grad_check(lambda: projected(ops.dense(x, w, b), np.random.default_rng(1)), [x, w, b])


# convolution ------------------------------------------------------------------

class TestConv:
    def test_conv2d_delta_kernel(self, backend):
        w = np.zeros((3, 3, 1, 1))
        w[1, 1] = 1.0
        out = ops.conv2d(Tensor(np.full((1, 1, 1), 5.0)), Tensor(w), Tensor(np.zeros(1)))
        np.testing.assert_array_equal(out.data.reshape(-1), [5.0])

    def test_conv2d_ones_hand_sum(self, backend):
        out = ops.conv2d(Tensor(np.ones((3, 3, 1))), Tensor(np.ones((3, 3, 1, 1))),
                         Tensor(np.zeros(1)))
        assert out.data[1, 1, 0] == 9.0
        assert out.data[0, 0, 0] == 4.0

    def test_conv3d_delta_kernel(self, backend):
        w = np.zeros((3, 3, 3, 1, 1))
        w[1, 1, 1] = 1.0
        out = ops.conv3d(Tensor(np.full((1, 1, 1, 1), 7.0)), Tensor(w), Tensor(np.zeros(1)))
        np.testing.assert_array_equal(out.data.reshape(-1), [7.0])

    def test_conv3d_ones_center(self, backend):
        out = ops.conv3d(Tensor(np.ones((3, 3, 3, 1))), Tensor(np.ones((3, 3, 3, 1, 1))),
                         Tensor(np.zeros(1)))
        assert out.data[1, 1, 1, 0] == 27.0

    def test_conv2d_loop_oracle(self, rng, backend):
        x, w, b = rng.standard_normal((4, 4, 2)), rng.standard_normal((3, 3, 2, 2)), rng.standard_normal(2)
        out = ops.conv2d(Tensor(x, dtype=F64), Tensor(w, dtype=F64), Tensor(b, dtype=F64))
        np.testing.assert_allclose(out.data, conv2d_loop(x, w, b), atol=1e-6)

    def test_conv3d_loop_oracle(self, rng, backend):
        x, w, b = rng.standard_normal((3, 4, 5, 2)), rng.standard_normal((3, 3, 3, 2, 3)), rng.standard_normal(3)
        out = ops.conv3d(Tensor(x, dtype=F64), Tensor(w, dtype=F64), Tensor(b, dtype=F64))
        np.testing.assert_allclose(out.data, conv3d_loop(x, w, b), atol=1e-6)

    def test_batched_equals_unbatched(self, rng, backend):
        x = rng.standard_normal((3, 4, 4, 2)).astype(np.float32)
        w, b = Tensor(rng.standard_normal((3, 3, 2, 2))), Tensor(np.zeros(2))
        batched = ops.conv2d(Tensor(x), w, b).data
        for i in range(3):
            np.testing.assert_array_equal(batched[i], ops.conv2d(Tensor(x[i]), w, b).data)

    def test_even_kernel_rejected(self):
        with pytest.raises(ConfigurationError):
            ops.conv2d(Tensor(np.ones((3, 3, 1))), Tensor(np.ones((2, 2, 1, 1))), Tensor(np.zeros(1)))

    def test_channel_mismatch(self):
        with pytest.raises(DimensionError):
            ops.conv2d(Tensor(np.ones((3, 3, 2))), Tensor(np.ones((3, 3, 1, 1))), Tensor(np.zeros(1)))

    def test_conv2d_gradient(self, rng, backend):
        x, w, b = params64(rng, (2, 3, 3, 2), (3, 3, 2, 2), (2,))
        grad_check(lambda: projected(ops.conv2d(x, w, b, "tanh"), np.random.default_rng(2)),
                   [x, w, b])

    def test_conv3d_gradient(self, rng, backend):
        x, w, b = params64(rng, (2, 2, 2, 2), (3, 3, 3, 2, 2), (2,))
        grad_check(lambda: projected(ops.conv3d(x, w, b, "leaky_relu"), np.random.default_rng(3)),
                   [x, w, b])


# attention ------------------------------------------------------------------------

def attention_params(rng, d_model, heads, key_dim, dtype=F64):
    width = heads * key_dim
    shapes = {"wq": (d_model, width), "bq": (width,), "wk": (d_model, width), "bk": (width,),
              "wv": (d_model, width), "bv": (width,), "wo": (width, d_model), "bo": (d_model,)}
    return {k: Parameter(rng.standard_normal(s) * 0.5, dtype=dtype) for k, s in shapes.items()}


def raw(params):
    return {k: p.data for k, p in params.items()}


class TestAttention:
    def test_single_key_returns_projected_value(self, rng):
        p = attention_params(rng, 4, 1, 4)
        q = rng.standard_normal((3, 4))
        kv = rng.standard_normal((1, 4))
        out = ops.multi_head_attention(Tensor(q, dtype=F64), Tensor(kv, dtype=F64),
                                       Tensor(kv, dtype=F64), 1, 4, p)
        expected = (kv @ p["wv"].data + p["bv"].data) @ p["wo"].data + p["bo"].data
        np.testing.assert_allclose(out.data, np.repeat(expected, 3, axis=0), atol=1e-12)

    def test_identical_keys_give_uniform_weights(self, rng):
        d = 3
        eye = {"wq": np.eye(d), "wk": np.eye(d), "wv": np.eye(d), "wo": np.eye(d),
               "bq": np.zeros(d), "bk": np.zeros(d), "bv": np.zeros(d), "bo": np.zeros(d)}
        p = {k: Tensor(v, dtype=F64) for k, v in eye.items()}
        key = np.tile(rng.standard_normal(d), (4, 1))
        value = rng.standard_normal((4, d))
        out, weights = ops.multi_head_attention(Tensor(rng.standard_normal((2, d)), dtype=F64),
                                                Tensor(key, dtype=F64), Tensor(value, dtype=F64),
                                                1, d, p, return_weights=True)
        np.testing.assert_allclose(weights.data, 0.25, atol=1e-12)
        np.testing.assert_allclose(out.data, np.tile(value.mean(axis=0), (2, 1)), atol=1e-12)

    def test_brute_force_oracle(self, rng):
        p = attention_params(rng, 6, 2, 3)
        q, k, v = (rng.standard_normal((4, 6)) for _ in range(3))
        out, weights = ops.multi_head_attention(Tensor(q, dtype=F64), Tensor(k, dtype=F64),
                                                Tensor(v, dtype=F64), 2, 3, p, return_weights=True)
        ref, ref_w = attention_loop(q, k, v, 2, 3, raw(p))
        np.testing.assert_allclose(out.data, ref, atol=1e-5)
        np.testing.assert_allclose(weights.data, ref_w, atol=1e-5)

    def test_weights_are_distributions(self, rng):
        p = attention_params(rng, 6, 2, 3)
        x = Tensor(rng.standard_normal((5, 6)) * 4, dtype=F64)
        _, w = ops.multi_head_attention(x, x, x, 2, 3, p, return_weights=True)
        np.testing.assert_allclose(w.data.sum(axis=-1), 1.0, atol=1e-6)
        assert w.data.min() >= 0 and w.data.max() <= 1

    def test_key_value_length_mismatch(self, rng):
        p = attention_params(rng, 4, 1, 2)
        with pytest.raises(DimensionError):
            ops.multi_head_attention(Tensor(np.ones((2, 4))), Tensor(np.ones((3, 4))),
                                     Tensor(np.ones((2, 4))), 1, 2, p)

    def test_nonpositive_heads(self, rng):
        with pytest.raises(ConfigurationError):
            ops.multi_head_attention(Tensor(np.ones((2, 4))), Tensor(np.ones((2, 4))),
                                     Tensor(np.ones((2, 4))), 0, 2, attention_params(rng, 4, 1, 2))

    def test_gradient(self, rng):
        p = attention_params(rng, 4, 2, 2)
        q, kv = params64(rng, (3, 4), (2, 4), scale=1.0)
        grad_check(lambda: projected(ops.multi_head_attention(q, kv, kv, 2, 2, p),
                                     np.random.default_rng(4)),
                   [q, kv] + list(p.values()))

    def test_residual_identity_with_zero_output_projection(self, rng):
        block = AttentionResidualBlock(6, 2, 3, rng)
        block.mha.wo.data[...] = 0
        x = Tensor(rng.standard_normal((2, 4, 6)).astype(np.float32))
        np.testing.assert_array_equal(block(x).data, x.data)


# losses and activations --------------------------------------------------------------------

class TestLosses:
    def test_joint_perfect(self):
        v, s = np.ones((2, 3)), np.ones((2, 2))
        assert ops.mse_joint_loss(v, Tensor(v), s, Tensor(s)).item() == 0.0

    def test_joint_reduces_to_mse(self):
        loss = ops.mse_joint_loss(np.ones(2), Tensor(np.zeros(2)), np.ones(3), Tensor(np.zeros(3)),
                                  w_v=1.0, w_s=0.0)
        assert loss.item() == pytest.approx(1.0)

    def test_joint_weighted_average(self):
        v_hat = Tensor(np.full(5, math.sqrt(0.2)), dtype=F64)
        s_hat = Tensor(np.full(5, math.sqrt(0.4)), dtype=F64)
        loss = ops.mse_joint_loss(np.zeros(5), v_hat, np.zeros(5), s_hat)
        assert loss.item() == pytest.approx(0.3, abs=1e-12)

    def test_joint_bad_weights(self):
        with pytest.raises(ConfigurationError):
            ops.mse_joint_loss(np.ones(2), Tensor(np.ones(2)), np.ones(2), Tensor(np.ones(2)), 0.7, 0.7)

    def test_joint_shape_mismatch(self):
        with pytest.raises(DimensionError):
            ops.mse_joint_loss(np.ones(2), Tensor(np.ones(3)), np.ones(2), Tensor(np.ones(2)))

    def test_mse_gradient(self, rng):
        (x,) = params64(rng, (4, 3))
        target = rng.standard_normal((4, 3))
        grad_check(lambda: ops.mse(x, target), [x])

    def test_joint_gradient(self, rng):
        v_hat, s_hat = params64(rng, (2, 3), (2, 2))
        v, s = rng.standard_normal((2, 3)), rng.standard_normal((2, 2))
        grad_check(lambda: ops.mse_joint_loss(v, v_hat, s, s_hat, 0.3, 0.7), [v_hat, s_hat])

    def test_cross_entropy_value(self):
        logits = Tensor(np.log(np.array([[0.5, 0.25, 0.25]])), dtype=F64)
        assert ops.cross_entropy(logits, [0]).item() == pytest.approx(math.log(2))

    def test_cross_entropy_gradient(self, rng):
        (logits,) = params64(rng, (4, 5), scale=2.0)
        labels = np.array([0, 3, 4, 1])
        grad_check(lambda: ops.cross_entropy(logits, labels), [logits])

    def test_softmax_gradient(self, rng):
        (x,) = params64(rng, (3, 4), scale=2.0)
        grad_check(lambda: projected(ops.softmax(x), np.random.default_rng(5)), [x])

    def test_leaky_relu_identity_on_positive(self):
        x = np.array([0.0, 0.5, 3.0, -2.0])
        out = ops.leaky_relu(Tensor(x, dtype=F64)).data
        np.testing.assert_array_equal(out[:3], x[:3])
        assert out[3] == pytest.approx(-2.0 * ops.LEAKY_SLOPE)


# autograd -------------------------------------------------------------------------------

class TestAutograd:
    def test_linear_map_gradient(self, rng):
        w = Parameter(rng.standard_normal((2, 3)), dtype=F64)
        x = rng.standard_normal(3)
        ops.sum(ops.matmul(w, Tensor(x, dtype=F64))).backward()
        np.testing.assert_allclose(w.grad, np.tile(x, (2, 1)))

    def test_tanh_mse_gradient(self, rng):
        w = Parameter(rng.standard_normal((3, 4)) * 0.5, dtype=F64)
        x, y = Tensor(rng.standard_normal(4), dtype=F64), rng.standard_normal(3)
        grad_check(lambda: ops.mse(ops.tanh(ops.matmul(w, x)), y), [w])

    def test_sequential_losses_with_zeroing_are_isolated(self, rng):
        w = Parameter(rng.standard_normal((3, 3)), dtype=F64)
        a, b = (Tensor(rng.standard_normal(3), dtype=F64) for _ in range(2))
        ops.sum(ops.tanh(ops.matmul(w, a))).backward()
        g_a = w.grad.copy()
        w.zero_grad()
        ops.sum(ops.relu(ops.matmul(w, b))).backward()
        g_b = w.grad.copy()
        fresh = Parameter(w.data.copy(), dtype=F64)
        ops.sum(ops.relu(ops.matmul(fresh, b))).backward()
        np.testing.assert_array_equal(g_b, fresh.grad)
        fresh.zero_grad()
        ops.sum(ops.tanh(ops.matmul(fresh, a))).backward()
        np.testing.assert_array_equal(g_a, fresh.grad)

    def test_shared_node_accumulates(self):
        x = Parameter(np.array([2.0]), dtype=F64)
        ops.sum(ops.mul(x, x)).backward()
        np.testing.assert_allclose(x.grad, [4.0])

    def test_backward_needs_graph(self):
        with pytest.raises(UsageError):
            Tensor(np.ones(1)).backward()

    def test_backward_needs_scalar(self):
        x = Parameter(np.ones(3))
        with pytest.raises(UsageError):
            ops.mul(x, 2.0).backward()

    def test_no_grad_records_nothing(self):
        x = Parameter(np.ones(3))
        with no_grad():
            y = ops.mul(x, 2.0)
        assert not y.requires_grad

    def test_forward_and_gradients_deterministic(self, rng):
        layer = Dense(6, 4, "tanh", np.random.default_rng(0))
        x = rng.standard_normal((5, 6)).astype(np.float32)
        runs = []
        for _ in range(2):
            layer.zero_grad()
            out = layer(Tensor(x))
            ops.sum(out).backward()
            runs.append((out.data.copy(), layer.w.grad.copy()))
        np.testing.assert_array_equal(runs[0][0], runs[1][0])
        np.testing.assert_array_equal(runs[0][1], runs[1][1])

    def test_matmul_rejects_scalars(self):
        with pytest.raises(DimensionError):
            ops.matmul(Tensor(np.float32(2.0)), Tensor(np.ones(2)))


# layers --------------------------------------------------------------------------------

class TestLayers:
    def test_named_parameters_walk_lists(self):
        block = ConvResidualBlock(2, 1, (2, 1), rng=np.random.default_rng(0))
        names = [n for n, _ in block.named_parameters()]
        assert names == ["convs.0.w", "convs.0.b", "convs.1.w", "convs.1.b"]

    def test_conv_residual_zero_weights_is_identity(self, rng):
        block = ConvResidualBlock(3, 2, (2, 8, 2), rng=rng)
        for p in block.parameters().values():
            p.data[...] = 0
        x = Tensor(rng.standard_normal((1, 2, 3, 3, 2)).astype(np.float32))
        np.testing.assert_array_equal(block(x).data, x.data)

    def test_residual_widths_must_close(self):
        with pytest.raises(ConfigurationError):
            ConvResidualBlock(2, 1, (2, 8, 2))

    def test_state_dict_round_trip(self, rng):
        a, b = Dense(3, 2, rng=np.random.default_rng(0)), Dense(3, 2, rng=np.random.default_rng(1))
        b.load_state_dict(a.state_dict())
        x = Tensor(rng.standard_normal((4, 3)).astype(np.float32))
        np.testing.assert_array_equal(a(x).data, b(x).data)

    def test_load_state_dict_strict(self):
        with pytest.raises(ConfigurationError):
            Dense(3, 2).load_state_dict({"w": np.zeros((3, 2))})

    def test_load_state_dict_shape(self):
        with pytest.raises(ConfigurationError):
            Dense(3, 2).load_state_dict({"w": np.zeros((2, 2)), "b": np.zeros(2)})

    def test_conv_layer_rejects_bad_spatial(self):
        with pytest.raises(ConfigurationError):
            Conv(1, 1, 1)

    def test_mha_layer_gradient(self, rng):
        layer = MultiHeadAttention(4, 2, 2, rng, dtype=F64)
        (x,) = params64(rng, (3, 4))
        params = [x] + list(layer.parameters().values())
        grad_check(lambda: projected(layer(x, x, x), np.random.default_rng(6)), params)


# Adam ------------------------------------------------------------------------------------

class TestAdam:
    def test_zero_gradient_fixed_point(self):
        p = Parameter(np.array([1.5]), dtype=F64)
        state = AdamState.for_parameters({"p": p})
        adam_step({"p": p}, state)
        assert p.data[0] == 1.5
        assert state.step == 1

    def test_constant_gradient_descends(self):
        p = Parameter(np.array([0.0, 0.0]), dtype=F64)
        opt = Adam({"p": p}, lr=1e-2)
        for _ in range(50):
            p.grad = np.array([3.0, -0.5])
            opt.step()
        assert p.data[0] < 0 < p.data[1]

    def test_first_step_closed_form(self):
        p = Parameter(np.array([0.0]), dtype=F64)
        state = AdamState.for_parameters({"p": p}, lr=1e-3)
        p.grad = np.array([1.0])
        adam_step({"p": p}, state)
        assert p.data[0] == pytest.approx(-1e-3 / (1 + 1e-8), rel=1e-12)

    def test_step_zeroes_gradients(self):
        p = Parameter(np.array([0.0]), dtype=F64)
        opt = Adam({"p": p})
        p.grad = np.array([1.0])
        opt.step()
        assert p.grad[0] == 0.0

    def test_missing_moments(self):
        p = Parameter(np.zeros(2))
        with pytest.raises(ConfigurationError):
            adam_step({"p": p}, AdamState())
