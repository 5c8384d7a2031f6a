import numpy as np
import pytest

from cstafnet import layers, selfcheck
from cstafnet.errors import ConfigError, ShapeError
from cstafnet.layers import (BatchNormParams, ChannelAttentionParams,
                             ConvParams, DenseParams, GruParams,
                             TemporalAttentionParams)
from cstafnet.numerics import RngState, relative_error


def _conv(k, weights, bias=0.0):
    return ConvParams(w=np.array(weights, dtype=float).reshape(k, 1, 1),
                      b=np.array([bias]))


def _zero_gru(c_in, units):
    return GruParams(*[np.zeros(s) for s in
                       [(c_in, units), (units, units), (units,)] * 3])


class TestConv1dSame:
    def test_identity_kernel(self):
        x = np.array([[1.0], [2.0], [3.0]])
        y = layers.conv1d_same(x, _conv(3, [0, 1, 0]))
        np.testing.assert_array_equal(y, x)

    def test_hand_convolution_with_zero_edges(self):
        y = layers.conv1d_same(np.array([[1.0], [2.0], [3.0]]), _conv(3, [1, 1, 1]))
        np.testing.assert_array_equal(y.ravel(), [3.0, 6.0, 5.0])

    def test_relu_clips(self):
        y = layers.conv1d_same(np.array([[-1.0], [0.0], [2.0]]),
                               _conv(3, [0, 1, 0]), act="relu")
        np.testing.assert_array_equal(y.ravel(), [0.0, 0.0, 2.0])

    def test_channel_mismatch(self):
        p = ConvParams(w=np.zeros((3, 2, 4)), b=np.zeros(4))
        with pytest.raises(ShapeError):
            layers.conv1d_same(np.zeros((5, 1)), p)

    def test_even_kernel_rejected(self):
        with pytest.raises(ConfigError):
            layers.conv1d_same(np.zeros((5, 1)), ConvParams(np.zeros((4, 1, 1)), np.zeros(1)))

    @pytest.mark.parametrize("k", [3, 5, 7])
    @pytest.mark.parametrize("t", [1, 2, 5, 11])
    def test_output_length_equals_input_length(self, k, t):
        rng = RngState(k * 100 + t)
        p = ConvParams(w=rng.uniform(-1, 1, (k, 2, 3)), b=rng.uniform(-1, 1, (3,)))
        y = layers.conv1d_same(rng.uniform(-1, 1, (t, 2)), p)
        assert y.shape == (t, 3)


class TestMultiScaleBlock:
    def test_three_scales_concatenate_to_192_channels(self):
        rng = RngState(40)
        convs = [ConvParams(w=rng.uniform(-1, 1, (k, 1, 64)), b=np.zeros(64))
                 for k in (3, 5, 7)]
        y = layers.multi_scale_block(rng.uniform(-1, 1, (8, 1)), convs)
        assert y.shape == (8, 192)

    def test_zero_input_zero_bias_gives_zero(self):
        convs = [_conv(k, [1.0] * k) for k in (3, 5)]
        y = layers.multi_scale_block(np.zeros((6, 1)), convs)
        np.testing.assert_array_equal(y, np.zeros((6, 2)))

    def test_conv_order_only_permutes_channels(self):
        rng = RngState(41)
        x = rng.uniform(-1, 1, (7, 1))
        a = ConvParams(w=rng.uniform(-1, 1, (3, 1, 2)), b=rng.uniform(-1, 1, (2,)))
        b = ConvParams(w=rng.uniform(-1, 1, (5, 1, 2)), b=rng.uniform(-1, 1, (2,)))
        y_ab = layers.multi_scale_block(x, [a, b])
        y_ba = layers.multi_scale_block(x, [b, a])
        np.testing.assert_array_equal(y_ab[:, :2], y_ba[:, 2:])
        np.testing.assert_array_equal(y_ab[:, 2:], y_ba[:, :2])

    def test_filter_count_mismatch(self):
        convs = [ConvParams(np.zeros((3, 1, 2)), np.zeros(2)),
                 ConvParams(np.zeros((5, 1, 3)), np.zeros(3))]
        with pytest.raises(ShapeError):
            layers.multi_scale_block(np.zeros((6, 1)), convs)


def _bn(c, gamma=1.0, beta=0.0):
    return BatchNormParams(gamma=np.full(c, gamma), beta=np.full(c, beta),
                           running_mean=np.zeros(c), running_var=np.ones(c))


class TestBatchNorm:
    def test_two_values_normalize(self):
        # values {1, 3}: mean 2, population var 1
        x = np.array([1.0, 3.0]).reshape(2, 1, 1)
        y = layers.batch_norm(x, _bn(1), "train")
        expected = (np.array([1.0, 3.0]) - 2.0) / np.sqrt(1.0 + 1e-5)
        np.testing.assert_allclose(y.ravel(), expected, rtol=1e-12)

    def test_affine_scale_shift(self):
        x = np.array([1.0, 3.0]).reshape(2, 1, 1)
        y = layers.batch_norm(x, _bn(1, gamma=2.0, beta=1.0), "train")
        expected = 2.0 * (np.array([1.0, 3.0]) - 2.0) / np.sqrt(1.0 + 1e-5) + 1.0
        np.testing.assert_allclose(y.ravel(), expected, rtol=1e-12)

    def test_infer_with_unit_stats_is_near_identity(self):
        x = RngState(42).uniform(-1, 1, (3, 4, 2))
        y = layers.batch_norm(x, _bn(2), "infer")
        np.testing.assert_allclose(y, x, atol=1e-5)

    def test_train_with_batch_of_one_rejected(self):
        with pytest.raises(ConfigError):
            layers.batch_norm(np.zeros((1, 4, 2)), _bn(2), "train")

    def test_running_stats_update(self):
        p = _bn(1)
        x = np.array([1.0, 3.0]).reshape(2, 1, 1)
        layers.batch_norm(x, p, "train")
        np.testing.assert_allclose(p.running_mean, [0.2])   # 0.9*0 + 0.1*2
        np.testing.assert_allclose(p.running_var, [1.0])    # 0.9*1 + 0.1*1


class TestDropout:
    def test_rate_zero_identity(self):
        x = RngState(8).uniform(-1, 1, (4, 3))
        np.testing.assert_array_equal(layers.dropout(x, 0.0, "train", RngState(1)), x)

    def test_infer_identity(self):
        x = RngState(9).uniform(-1, 1, (4, 3))
        np.testing.assert_array_equal(layers.dropout(x, 0.4, "infer"), x)

    def test_kept_element_scaled(self):
        x = np.ones((2, 2))
        mask = np.array([[True, False], [False, True]])
        y, _ = layers.dropout_fwd(x, 0.5, "train", mask=mask)
        np.testing.assert_array_equal(y, np.array([[2.0, 0.0], [0.0, 2.0]]))

    def test_bad_rates_rejected(self):
        for rate in (1.0, 1.5, -0.1):
            with pytest.raises(ConfigError):
                layers.dropout(np.zeros((2, 2)), rate, "train", RngState(0))


class TestGruStep:
    def test_all_zero_parameters_zero_state(self):
        p = _zero_gru(2, 3)
        h = layers.gru_step(np.zeros(2), np.zeros(3), p)
        np.testing.assert_array_equal(h, np.zeros(3))

    def test_all_zero_parameters_unit_state(self):
        # z = r = 0.5, candidate 0 -> h = 0.5 * 1 + 0.5 * 0
        p = _zero_gru(2, 3)
        h = layers.gru_step(np.zeros(2), np.ones(3), p)
        np.testing.assert_allclose(h, np.full(3, 0.5))

    def test_update_gate_saturation(self):
        rng = RngState(50)
        p = GruParams(*[rng.uniform(-0.5, 0.5, s) for s in
                        [(2, 3), (3, 3), (3,)] * 3])
        p.b_z = np.full(3, 1e3)  # z -> 1, so h -> candidate
        x, h_prev = rng.uniform(-1, 1, (2,)), rng.uniform(-1, 1, (3,))
        h = layers.gru_step(x, h_prev, p)
        r = 1.0 / (1.0 + np.exp(-(x @ p.u_r + h_prev @ p.r_r + p.b_r)))
        hc = np.tanh(x @ p.u_h + (r * h_prev) @ p.r_h + p.b_h)
        np.testing.assert_allclose(h, hc, atol=1e-12)

    def test_shape_mismatch(self):
        with pytest.raises(ShapeError):
            layers.gru_step(np.zeros(4), np.zeros(3), _zero_gru(2, 3))


class TestBigru:
    def test_single_step_sequence(self):
        rng = RngState(51)
        fwd = GruParams(*[rng.uniform(-0.5, 0.5, s) for s in
                          [(2, 3), (3, 3), (3,)] * 3])
        bwd = GruParams(*[rng.uniform(-0.5, 0.5, s) for s in
                          [(2, 3), (3, 3), (3,)] * 3])
        x = rng.uniform(-1, 1, (1, 2))
        y = layers.bigru(x, fwd, bwd)
        np.testing.assert_array_equal(y[0, :3], layers.gru_step(x[0], np.zeros(3), fwd))
        np.testing.assert_array_equal(y[0, 3:], layers.gru_step(x[0], np.zeros(3), bwd))

    def test_zero_parameters_zero_output(self):
        y = layers.bigru(RngState(1).uniform(-1, 1, (5, 2)),
                         _zero_gru(2, 3), _zero_gru(2, 3))
        np.testing.assert_array_equal(y, np.zeros((5, 6)))

    def test_output_width_is_twice_units(self):
        rng = RngState(52)
        fwd = GruParams(*[rng.uniform(-0.1, 0.1, s) for s in
                          [(192, 64), (64, 64), (64,)] * 3])
        bwd = GruParams(*[rng.uniform(-0.1, 0.1, s) for s in
                          [(192, 64), (64, 64), (64,)] * 3])
        y = layers.bigru(rng.uniform(-1, 1, (4, 192)), fwd, bwd)
        assert y.shape == (4, 128)

    def test_time_reversal_symmetry_exact(self):
        rng = RngState(53)
        fwd = GruParams(*[rng.uniform(-0.7, 0.7, s) for s in
                          [(3, 4), (4, 4), (4,)] * 3])
        bwd = GruParams(*[rng.uniform(-0.7, 0.7, s) for s in
                          [(3, 4), (4, 4), (4,)] * 3])
        x = rng.uniform(-1, 1, (6, 3))
        y = layers.bigru(x, fwd, bwd)
        y_rev = layers.bigru(x[::-1], bwd, fwd)
        swapped = np.concatenate([y[::-1, 4:], y[::-1, :4]], axis=1)
        np.testing.assert_array_equal(y_rev, swapped)


class TestTemporalAttention:
    def test_zero_logits_uniform_attention(self):
        p = TemporalAttentionParams(w=np.zeros((2, 2)), b=np.zeros(2))
        y = layers.temporal_attention(np.array([[4.0], [4.0]]), p)
        np.testing.assert_allclose(y.ravel(), [2.0, 2.0])

    def test_length_one_identity(self):
        p = TemporalAttentionParams(w=np.zeros((1, 1)), b=np.zeros(1))
        h = np.array([[3.0, -2.0]])
        np.testing.assert_allclose(layers.temporal_attention(h, p), h)

    def test_zero_weights_scale_by_inverse_length(self):
        p = TemporalAttentionParams(w=np.zeros((4, 4)), b=np.zeros(4))
        h = RngState(54).uniform(-2, 2, (4, 3))
        np.testing.assert_allclose(layers.temporal_attention(h, p), h / 4.0, atol=1e-15)

    def test_weights_sum_to_one_per_channel(self):
        rng = RngState(55)
        p = TemporalAttentionParams(w=rng.uniform(-1, 1, (5, 5)),
                                    b=rng.uniform(-1, 1, (5,)))
        a = layers.attention_weights(rng.uniform(-3, 3, (2, 5, 4)), p)
        np.testing.assert_allclose(a.sum(axis=1), 1.0, atol=1e-12)

    def test_sequence_length_mismatch(self):
        p = TemporalAttentionParams(w=np.zeros((4, 4)), b=np.zeros(4))
        with pytest.raises(ShapeError):
            layers.temporal_attention(np.zeros((5, 3)), p)


class TestChannelAttention:
    def test_zero_parameters_halve_input(self):
        p = ChannelAttentionParams(w1=np.zeros((4, 2)), b1=np.zeros(2),
                                   w2=np.zeros((2, 4)), b2=np.zeros(4))
        h = RngState(56).uniform(-2, 2, (3, 4))
        np.testing.assert_allclose(layers.channel_attention(h, p), h / 2.0)

    def test_zero_input_zero_output(self):
        rng = RngState(57)
        p = ChannelAttentionParams(w1=rng.uniform(-1, 1, (4, 2)), b1=rng.uniform(-1, 1, (2,)),
                                   w2=rng.uniform(-1, 1, (2, 4)), b2=rng.uniform(-1, 1, (4,)))
        np.testing.assert_array_equal(layers.channel_attention(np.zeros((3, 4)), p),
                                      np.zeros((3, 4)))

    def test_saturated_sigmoid_identity(self):
        p = ChannelAttentionParams(w1=np.zeros((4, 2)), b1=np.zeros(2),
                                   w2=np.zeros((2, 4)), b2=np.full(4, 1e3))
        h = RngState(58).uniform(-2, 2, (3, 4))
        np.testing.assert_allclose(layers.channel_attention(h, p), h)

    def test_scales_strictly_inside_unit_interval(self):
        rng = RngState(59)
        p = ChannelAttentionParams(w1=rng.uniform(-2, 2, (4, 2)), b1=rng.uniform(-1, 1, (2,)),
                                   w2=rng.uniform(-2, 2, (2, 4)), b2=rng.uniform(-1, 1, (4,)))
        s = layers.channel_scales(rng.uniform(-3, 3, (2, 5, 4)), p)
        assert ((s > 0) & (s < 1)).all()

    def test_channel_mismatch(self):
        p = ChannelAttentionParams(w1=np.zeros((4, 2)), b1=np.zeros(2),
                                   w2=np.zeros((2, 4)), b2=np.zeros(4))
        with pytest.raises(ShapeError):
            layers.channel_attention(np.zeros((3, 6)), p)


class TestGlobalMaxPool:
    def test_columnwise_max(self):
        np.testing.assert_array_equal(
            layers.global_max_pool(np.array([[1.0, 5.0], [3.0, 2.0]])), [3.0, 5.0])

    def test_single_row(self):
        np.testing.assert_array_equal(
            layers.global_max_pool(np.array([[7.0, -1.0]])), [7.0, -1.0])

    def test_max_of_negatives(self):
        np.testing.assert_array_equal(
            layers.global_max_pool(np.array([[-3.0, -1.0], [-2.0, -5.0]])), [-2.0, -1.0])

    def test_permutation_invariant_over_time(self):
        rng = RngState(60)
        h = rng.uniform(-5, 5, (6, 3))
        perm = rng.permutation(6)
        np.testing.assert_array_equal(layers.global_max_pool(h),
                                      layers.global_max_pool(h[perm]))


class TestDense:
    def test_identity(self):
        p = DenseParams(w=np.eye(3), b=np.zeros(3))
        x = np.array([1.0, -2.0, 0.5])
        np.testing.assert_array_equal(layers.dense(x, p), x)

    def test_zero_weights_softmax_uniform(self):
        p = DenseParams(w=np.zeros((3, 2)), b=np.zeros(2))
        np.testing.assert_allclose(layers.dense(np.ones(3), p, act="softmax"), [0.5, 0.5])

    def test_hand_product(self):
        p = DenseParams(w=np.array([[1.0], [1.0]]), b=np.zeros(1))
        np.testing.assert_array_equal(layers.dense(np.array([2.0, 3.0]), p), [5.0])

    def test_width_mismatch(self):
        with pytest.raises(ShapeError):
            layers.dense(np.zeros(4), DenseParams(w=np.zeros((3, 2)), b=np.zeros(2)))


GRADIENT_SUITES = [
    selfcheck.check_conv_gradients,
    selfcheck.check_multi_scale_gradients,
    selfcheck.check_batch_norm_gradients,
    selfcheck.check_dropout_gradients,
    selfcheck.check_bigru_gradients,
    selfcheck.check_temporal_attention_gradients,
    selfcheck.check_channel_attention_gradients,
    selfcheck.check_pool_dense_gradients,
]


@pytest.mark.parametrize("suite", GRADIENT_SUITES, ids=lambda f: f.__name__)
def test_gradients_match_finite_differences(suite):
    for label, analytic, fd in suite():
        err = relative_error(analytic, fd)
        assert err <= 1e-4, f"{label}: relative error {err:.3e}"
