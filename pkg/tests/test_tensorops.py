import numpy as np
import pytest

from hiresnn import tensorops as K
from hiresnn.errors import ConfigurationError

from helpers import central_difference


def naive_conv(x, W, stride=1, padding=0):
    """Nested-loop reference for a single channels-last sample."""
    k = W.shape[0]
    xp = np.pad(x, ((padding, padding), (padding, padding), (0, 0)))
    ho = (xp.shape[0] - k) // stride + 1
    wo = (xp.shape[1] - k) // stride + 1
    y = np.zeros((ho, wo, W.shape[3]))
    for i in range(ho):
        for j in range(wo):
            patch = xp[i * stride:i * stride + k, j * stride:j * stride + k, :]
            for o in range(W.shape[3]):
                y[i, j, o] = np.sum(patch * W[..., o])
    return y


class TestConv:
    def test_scalar_product(self):
        spec = K.ConvSpec(1, 1, 1)
        y = K.conv2d_forward(np.array([[[2.0]]]), np.array([[[[3.0]]]]), spec)
        assert y.shape == (1, 1, 1) and y[0, 0, 0] == 6.0

    def test_zero_kernel(self):
        spec = K.ConvSpec(3, 2, 4, padding=1)
        x = np.random.default_rng(0).random((5, 5, 2))
        assert not K.conv2d_forward(x, np.zeros(spec.weight_shape), spec).any()

    def test_ramp_local_sums(self):
        x = np.arange(9.0).reshape(3, 3, 1)
        y = K.conv2d_forward(x, np.ones((2, 2, 1, 1)), K.ConvSpec(2, 1, 1))
        expected = [[0 + 1 + 3 + 4, 1 + 2 + 4 + 5], [3 + 4 + 6 + 7, 4 + 5 + 7 + 8]]
        np.testing.assert_array_equal(y[..., 0], expected)

    @pytest.mark.parametrize("stride,padding", [(1, 0), (1, 1), (2, 1), (2, 0)])
    def test_matches_nested_loops(self, stride, padding):
        rng = np.random.default_rng(stride * 10 + padding)
        spec = K.ConvSpec(3, 2, 3, stride=stride, padding=padding)
        x = rng.standard_normal((2, 7, 6, 2))
        W = rng.standard_normal(spec.weight_shape)
        y = K.conv2d_forward(x, W, spec)
        for n in range(2):
            np.testing.assert_allclose(y[n], naive_conv(x[n], W, stride, padding), atol=1e-12)
        assert y.shape[1:3] == spec.output_size(7, 6)

    def test_channel_mismatch(self):
        spec = K.ConvSpec(3, 2, 3)
        with pytest.raises(ConfigurationError):
            K.conv2d_forward(np.zeros((5, 5, 3)), np.zeros(spec.weight_shape), spec)

    def test_backward_zero_grad(self):
        spec = K.ConvSpec(3, 2, 2, padding=1)
        x = np.ones((4, 4, 2))
        gx, gw = K.conv2d_backward(np.zeros((4, 4, 2)), x, np.ones(spec.weight_shape), spec)
        assert not gx.any() and not gw.any()

    def test_backward_scalar(self):
        spec = K.ConvSpec(1, 1, 1)
        gx, gw = K.conv2d_backward(np.ones((1, 1, 1)), np.full((1, 1, 1), 2.0),
                                   np.full((1, 1, 1, 1), 3.0), spec)
        assert gx.item() == 3.0 and gw.item() == 2.0

    @pytest.mark.parametrize("stride,padding", [(1, 0), (1, 1), (2, 1)])
    def test_backward_finite_difference(self, stride, padding):
        rng = np.random.default_rng(3)
        spec = K.ConvSpec(3, 2, 3, stride=stride, padding=padding)
        x = rng.standard_normal((4, 4, 2))
        W = rng.standard_normal(spec.weight_shape)
        gy = rng.standard_normal(K.conv2d_forward(x, W, spec).shape)
        gx, gw = K.conv2d_backward(gy, x, W, spec)
        fx = central_difference(lambda v: np.sum(K.conv2d_forward(v, W, spec) * gy), x)
        fw = central_difference(lambda v: np.sum(K.conv2d_forward(x, v, spec) * gy), W)
        assert np.max(np.abs(fx - gx)) <= 1e-4
        assert np.max(np.abs(fw - gw)) <= 1e-4

    def test_linear_in_input(self):
        rng = np.random.default_rng(4)
        spec = K.ConvSpec(3, 1, 2, padding=1)
        W = rng.standard_normal(spec.weight_shape)
        a, b = rng.random((2, 5, 5, 1))
        lhs = K.conv2d_forward(2.0 * a - 0.5 * b, W, spec)
        rhs = 2.0 * K.conv2d_forward(a, W, spec) - 0.5 * K.conv2d_forward(b, W, spec)
        np.testing.assert_allclose(lhs, rhs, atol=1e-12)

    def test_flops(self):
        assert K.ConvSpec(3, 4, 16, padding=1).flops(8, 8) == 36864


class TestLinear:
    def test_identity(self):
        x = np.array([1.0, 2.0])
        np.testing.assert_array_equal(K.linear_forward(x, np.eye(2)), [1.0, 2.0])

    def test_scalar_chain(self):
        x = np.array([[1.0, 2.0]])
        W = np.array([[1.0, 0.0], [0.0, 1.0]])
        gx, gw = K.linear_backward(np.array([[1.0, -1.0]]), x, W)
        np.testing.assert_array_equal(gx, [[1.0, -1.0]])
        np.testing.assert_array_equal(gw, [[1.0, -1.0], [2.0, -2.0]])

    def test_finite_difference(self):
        rng = np.random.default_rng(5)
        x = rng.standard_normal((3, 8))
        W = rng.standard_normal((8, 4))
        gy = rng.standard_normal((3, 4))
        gx, gw = K.linear_backward(gy, x, W)
        fx = central_difference(lambda v: np.sum(K.linear_forward(v, W) * gy), x)
        fw = central_difference(lambda v: np.sum(K.linear_forward(x, v) * gy), W)
        assert np.max(np.abs(fx - gx)) <= 1e-4
        assert np.max(np.abs(fw - gw)) <= 1e-4

    def test_flattens_feature_maps(self):
        x = np.arange(8.0).reshape(1, 2, 2, 2)
        W = np.ones((8, 1))
        assert K.linear_forward(x, W)[0, 0] == 28.0
        gx, _ = K.linear_backward(np.ones((1, 1)), x, W)
        assert gx.shape == x.shape


class TestPool:
    def test_mean(self):
        x = np.array([1.0, 2.0, 3.0, 4.0]).reshape(2, 2, 1)
        assert K.avgpool_forward(x, 2).item() == 2.5

    def test_constant(self):
        x = np.full((4, 6, 3), 0.7)
        np.testing.assert_allclose(K.avgpool_forward(x, 2), 0.7)

    def test_backward_spreads_evenly(self):
        g = K.avgpool_backward(np.ones((1, 1, 1)), 2)
        np.testing.assert_array_equal(g[..., 0], np.full((2, 2), 0.25))

    def test_finite_difference(self):
        rng = np.random.default_rng(6)
        x = rng.standard_normal((2, 4, 6, 3))
        gy = rng.standard_normal((2, 2, 3, 3))
        gx = K.avgpool_backward(gy, 2)
        fx = central_difference(lambda v: np.sum(K.avgpool_forward(v, 2) * gy), x)
        assert np.max(np.abs(fx - gx)) <= 1e-4


class TestDropout:
    def test_rate_zero(self):
        assert np.all(K.dropout_mask((10, 10), 0.0, 0) == 1.0)

    def test_preserves_mean(self):
        m = K.dropout_mask((100000,), 0.2, 0)
        assert abs(m.mean() - 1.0) <= 0.02
        assert set(np.unique(m)) == {0.0, 1.25}

    def test_deterministic(self):
        np.testing.assert_array_equal(K.dropout_mask((50,), 0.2, 7), K.dropout_mask((50,), 0.2, 7))
