import numpy as np
import pytest

from spekt import Rng
from spekt.errors import ConfigError
from spekt.nn import (
    BatchNorm,
    Conv1dUpsample,
    Conv2d,
    Dense,
    Dropout,
    Flatten,
    LeakyRelu,
    MergeFibers,
    Network,
    SplitFibers,
    Workspace,
    build_cnn_large,
    build_cnn_small,
    build_multifiber,
    gradient_check,
    infer_preallocated,
)


class TestShapeAlgebra:
    def test_small_net_spatial_shrink(self):
        net = build_cnn_small(input_shape=(5, 5, 1))
        # two valid 2x2 convolutions: 5 -> 4 -> 3
        spatial = sorted({s[0] for s in net.shapes if len(s) == 3}, reverse=True)
        assert spatial == [5, 4, 3]
        assert net.output_dim == 43

    def test_large_net_spatial_shrink(self):
        net = build_cnn_large(input_shape=(20, 20, 1))
        # three valid 3x3 convolutions: 20 -> 18 -> 16 -> 14
        spatial = [s[0] for s in net.shapes if len(s) == 3]
        assert spatial[0] == 20 and spatial[-1] == 14
        assert net.output_dim == 43

    def test_large_net_has_no_pooling(self):
        net = build_cnn_large()
        assert all("pool" not in layer.kind for layer in net.layers)

    def test_dense_widths(self):
        net = build_cnn_large()
        units = [l.units for l in net.layers if isinstance(l, Dense)]
        assert units == [512, 256, 43]

    def test_dropout_keep_probability(self):
        net = build_cnn_small()
        keeps = {l.keep_prob for l in net.layers if isinstance(l, Dropout)}
        assert keeps == {0.7}

    def test_conv_too_large_rejected(self):
        with pytest.raises(ConfigError):
            Network((3, 3, 1), [Conv2d((5, 5), 4)])

    def test_multifiber_output_shape(self):
        for n in (1, 4, 20):
            net = build_multifiber(n, roi_shape=(5, 5))
            assert net.output_dim == n * 43
            assert net.input_shape == (5, 5, n)

    def test_multifiber_single_reduces_to_single_fiber(self):
        net = build_multifiber(1, roi_shape=(5, 5))
        x = Rng(0).generator.random((2, 5, 5, 1)).astype(np.float32)
        net.initialize(Rng(1))
        out, _ = net.forward(x, train=False)
        assert out.shape == (2, 43)


class TestConvOracle:
    def test_hand_computed_valid_correlation(self):
        # 3x3 input, 2x2 kernel, all entries chosen by hand.
        conv = Conv2d((2, 2), 1)
        conv._cin = 1
        conv.weight = np.asarray([[[[1.0]], [[2.0]]], [[[3.0]], [[4.0]]]])  # (2,2,1,1)
        conv.bias = np.asarray([0.5])
        x = np.arange(9, dtype=np.float64).reshape(1, 3, 3, 1)
        out, _ = conv.forward(x, train=False, gen=None)
        # out[0,0] = 0*1 + 1*2 + 3*3 + 4*4 + 0.5
        expected = np.asarray([[27.5, 37.5], [57.5, 67.5]])
        np.testing.assert_allclose(out[0, :, :, 0], expected)

    def test_all_zero_weights_give_bias(self):
        dense = Dense(4)
        dense._fan_in = 3
        dense.weight = np.zeros((3, 4))
        dense.bias = np.asarray([1.0, 2.0, 3.0, 4.0])
        out, _ = dense.forward(np.ones((2, 3)), train=False, gen=None)
        np.testing.assert_array_equal(out, np.tile(dense.bias, (2, 1)))


class TestDropout:
    def test_inverted_scaling_preserves_expectation(self):
        # Expected train-mode activation equals infer-mode activation
        # within 2% over 10^4 mask draws (ensemble mean; per-cell noise
        # is wider, bounded at 5 sigma).
        layer = Dropout(0.7)
        gen = Rng(3).generator
        x = np.full((20, 20), 2.0)
        total = np.zeros_like(x)
        n = 10_000
        for _ in range(n):
            y, _ = layer.forward(x, train=True, gen=gen)
            total += y
        mean_map = total / n
        assert abs(mean_map.mean() - 2.0) / 2.0 < 0.02
        cell_sigma = 2.0 * np.sqrt((1 - 0.7) / 0.7 / n)
        assert np.abs(mean_map - 2.0).max() < 5 * cell_sigma

    def test_infer_mode_identity(self):
        layer = Dropout(0.5)
        x = Rng(4).generator.random((5, 5))
        y, _ = layer.forward(x, train=False, gen=None)
        np.testing.assert_array_equal(y, x)

    def test_keep_one_is_identity_in_train(self):
        layer = Dropout(1.0)
        x = Rng(5).generator.random((5, 5))
        y, _ = layer.forward(x, train=True, gen=Rng(6).generator)
        np.testing.assert_array_equal(y, x)


class TestBatchNorm:
    def test_train_mode_normalizes_batch(self):
        bn = BatchNorm()
        bn.out_shape((6,))
        bn.init_params(Rng(7).generator, np.float64)
        x = Rng(8).generator.normal(3.0, 2.5, size=(256, 6))
        y, _ = bn.forward(x, train=True, gen=None)
        np.testing.assert_allclose(y.mean(axis=0), 0.0, atol=1e-6)
        np.testing.assert_allclose(y.var(axis=0), 1.0, atol=1e-4)

    def test_infer_uses_running_stats(self):
        bn = BatchNorm()
        bn.out_shape((4,))
        bn.init_params(Rng(9).generator, np.float64)
        gen = Rng(10).generator
        for _ in range(200):
            bn.forward(gen.normal(1.0, 2.0, size=(64, 4)), train=True, gen=None)
        x = gen.normal(1.0, 2.0, size=(1000, 4))
        y, _ = bn.forward(x, train=False, gen=None)
        assert abs(y.mean()) < 0.1
        assert abs(y.std() - 1.0) < 0.1


class TestGradients:
    """Central-difference checks for every layer kind (float64)."""

    def _check(self, net, in_shape, batch=4, seed=11):
        gen = Rng(seed).generator
        x = gen.random((batch,) + in_shape)
        net.initialize(Rng(seed + 1))
        y = gen.random((batch, net.output_dim))
        err = gradient_check(net, x, y, samples_per_tensor=60)
        assert err < 1e-4, f"max relative gradient error {err}"

    def test_conv_bn_lrelu_stack(self):
        net = Network((6, 6, 2), [
            Conv2d((3, 3), 3), BatchNorm(), LeakyRelu(0.2),
            Conv2d((2, 2), 2), BatchNorm(), LeakyRelu(0.2),
            Flatten(), Dense(5),
        ], dtype=np.float64)
        self._check(net, (6, 6, 2))

    def test_dense_dropout_head(self):
        net = Network((12,), [
            Dense(16), LeakyRelu(0.2), Dropout(0.7), Dense(8), Dropout(0.7), Dense(4),
        ], dtype=np.float64)
        self._check(net, (12,))

    def test_upsampling_head(self):
        net = Network((24,), [
            Dense(2 * 5 * 3),
            SplitFibers(2, 5, 3),
            Conv1dUpsample(3, 4, 2), LeakyRelu(0.2),
            Conv1dUpsample(3, 2, 2), LeakyRelu(0.2),
            Flatten(), Dense(7), MergeFibers(2),
        ], dtype=np.float64)
        self._check(net, (24,))

    def test_full_multifiber_architecture(self):
        net = build_multifiber(2, roi_shape=(5, 5), n_channels=9, trunk_filters=4,
                               dense_units=12, head_length=3, head_channels=2,
                               head_filters=(3, 2), dtype=np.float64)
        self._check(net, (5, 5, 2), batch=3)

    def test_linear_network_near_exact(self):
        net = Network((6,), [Dense(5), Dense(3)], dtype=np.float64)
        gen = Rng(12).generator
        x = gen.random((4, 6))
        net.initialize(Rng(13))
        y = gen.random((4, 3))
        err = gradient_check(net, x, y, samples_per_tensor=200)
        assert err < 1e-7

    def test_requires_float64(self):
        net = build_cnn_small(dtype=np.float32)
        with pytest.raises(ConfigError):
            gradient_check(net, np.zeros((1, 5, 5, 1), np.float32), np.zeros((1, 43), np.float32))


class TestInference:
    def test_infer_deterministic(self):
        net = build_cnn_small()
        net.initialize(Rng(14))
        x = Rng(15).generator.random((3, 5, 5, 1)).astype(np.float32)
        a, _ = net.forward(x, train=False)
        b, _ = net.forward(x, train=False)
        np.testing.assert_array_equal(a, b)

    def test_workspace_matches_forward(self):
        for build in (lambda: build_cnn_small(), lambda: build_cnn_large(),
                      lambda: build_multifiber(3, roi_shape=(5, 5))):
            net = build()
            net.initialize(Rng(16))
            batch_in = Rng(17).generator.random((1,) + net.input_shape).astype(np.float32)
            expected, _ = net.forward(batch_in, train=False)
            ws = Workspace(net, batch=1)
            np.copyto(ws.input, batch_in)
            got = infer_preallocated(net, ws)
            np.testing.assert_allclose(got.reshape(-1), expected.reshape(-1), rtol=2e-5, atol=2e-6)

    def test_workspace_reusable_across_same_arch_nets(self):
        net1 = build_cnn_small()
        net1.initialize(Rng(18))
        net2 = build_cnn_small()
        net2.initialize(Rng(19))
        ws = Workspace(net1, batch=1)
        x = Rng(20).generator.random((1, 5, 5, 1)).astype(np.float32)
        np.copyto(ws.input, x)
        out1 = infer_preallocated(net1, ws).copy()
        np.copyto(ws.input, x)
        out2 = infer_preallocated(net2, ws).copy()
        assert not np.allclose(out1, out2)
        expected2, _ = net2.forward(x, train=False)
        np.testing.assert_allclose(out2.reshape(-1), expected2.reshape(-1), rtol=2e-5, atol=2e-6)
