import numpy as np
import pytest

from gsgn import autodiff as ad
from gsgn import layers
from gsgn.autodiff import ShapeError, Tensor
from gsgn.gradcheck import finite_difference_check


def rnd(shape, seed=0, dtype=np.float32):
    return np.random.default_rng(seed).normal(size=shape).astype(dtype)


class TestShuffle:
    def test_declared_channel_order(self):
        x = Tensor(np.array([[[[1.0, 2.0], [3.0, 4.0]]]], dtype=np.float32))
        y = layers.shuffle(x)
        assert y.shape == (1, 4, 1, 1)
        assert y.data.reshape(-1).tolist() == [1.0, 2.0, 3.0, 4.0]

    def test_shape_law(self):
        y = layers.shuffle(Tensor(rnd((2, 3, 8, 8))))
        assert y.shape == (2, 12, 4, 4)
        back = layers.unshuffle(y)
        assert back.shape == (2, 3, 8, 8)

    def test_roundtrip_bit_exact(self):
        for seed in range(10):
            x = rnd((2, 3, 8, 6), seed)
            rt = layers.unshuffle(layers.shuffle(Tensor(x))).data
            assert np.array_equal(rt, x)
            y = rnd((1, 8, 3, 5), seed + 100)
            rt2 = layers.shuffle(layers.unshuffle(Tensor(y))).data
            assert np.array_equal(rt2, y)

    def test_unshuffle_inverse_example(self):
        y = Tensor(np.array([1.0, 2.0, 3.0, 4.0],
                            dtype=np.float32).reshape(1, 4, 1, 1))
        x = layers.unshuffle(y)
        assert x.data.reshape(2, 2).tolist() == [[1.0, 2.0], [3.0, 4.0]]

    def test_odd_spatial_is_error(self):
        with pytest.raises(ShapeError):
            layers.shuffle(Tensor(rnd((1, 1, 3, 4))))

    def test_channels_not_divisible_is_error(self):
        with pytest.raises(ShapeError):
            layers.unshuffle(Tensor(rnd((1, 6, 2, 2))))


class TestConv:
    def test_identity_1x1(self):
        x = rnd((2, 3, 5, 5), 1)
        w = np.zeros((3, 3, 1, 1), dtype=np.float32)
        for c in range(3):
            w[c, c, 0, 0] = 1.0
        y = layers.conv2d(Tensor(x), Tensor(w), None)
        assert np.allclose(y.data, x, atol=1e-6)

    def test_ones_kernel_interior(self):
        x = Tensor(np.ones((1, 1, 5, 5), dtype=np.float32))
        w = Tensor(np.ones((1, 1, 3, 3), dtype=np.float32))
        y = layers.conv2d(x, w, None)
        assert y.data[0, 0, 2, 2] == pytest.approx(9.0)
        assert y.data[0, 0, 0, 0] == pytest.approx(4.0)   # zero padding

    def test_channel_mismatch(self):
        with pytest.raises(ShapeError):
            layers.conv2d(Tensor(rnd((1, 2, 4, 4))),
                          Tensor(rnd((4, 3, 3, 3))), None)

    def test_gradient_certified(self):
        x = Tensor(rnd((2, 2, 4, 4), 2, np.float64), dtype=np.float64)
        w = rnd((3, 2, 3, 3), 3, np.float64)
        b = rnd((3,), 4, np.float64)

        def f(v):
            return ad.sum_(ad.mul(layers.conv2d(
                v, Tensor(w, dtype=np.float64),
                Tensor(b, dtype=np.float64)), 0.1))

        assert finite_difference_check(f, x) < 1e-6

    def test_weight_gradient_certified(self):
        x = rnd((2, 2, 4, 4), 5, np.float64)

        def f(wv):
            return ad.mean_(layers.conv2d(Tensor(x, dtype=np.float64),
                                          wv, None))

        w0 = Tensor(rnd((3, 2, 3, 3), 6, np.float64), dtype=np.float64)
        assert finite_difference_check(f, w0) < 1e-6

    def test_strided(self):
        y = layers.conv2d(Tensor(rnd((1, 3, 8, 8))),
                          Tensor(rnd((4, 3, 3, 3))), None, stride=2)
        assert y.shape == (1, 4, 4, 4)


class TestFullyConnected:
    def test_identity(self):
        x = rnd((3, 4), 1)
        out = layers.fully_connected(Tensor(x),
                                     Tensor(np.eye(4, dtype=np.float32)),
                                     Tensor(np.zeros(4, dtype=np.float32)))
        assert np.allclose(out.data, x)

    def test_zero_weights_bias_broadcast(self):
        b = np.array([1.0, 2.0], dtype=np.float32)
        out = layers.fully_connected(
            Tensor(rnd((3, 4))), Tensor(np.zeros((4, 2), dtype=np.float32)),
            Tensor(b))
        assert np.allclose(out.data, np.tile(b, (3, 1)))

    def test_dim_mismatch(self):
        with pytest.raises(ShapeError):
            layers.fully_connected(Tensor(rnd((2, 3))),
                                   Tensor(rnd((4, 2))), Tensor(rnd((2,))))


class TestLeakyRelu:
    def test_values(self):
        out = layers.leaky_relu(Tensor(np.array([2.0, -1.0, 0.0],
                                                dtype=np.float32)))
        assert out.data.tolist() == [2.0, pytest.approx(-0.2), 0.0]

    def test_slope_range(self):
        with pytest.raises(ad.TensorError):
            layers.leaky_relu(Tensor(np.zeros(1, np.float32)), slope=1.5)


class TestInstanceNorm:
    def test_constant_channel_collapses_to_beta(self):
        x = Tensor(np.full((1, 1, 3, 3), 7.0, dtype=np.float32))
        out = layers.instance_norm(x, Tensor(np.ones(1, np.float32)), Tensor(np.zeros(1, np.float32)))
        assert np.allclose(out.data, 0.0, atol=1e-4)

    def test_two_values(self):
        x = Tensor(np.array([1.0, 3.0],
                            dtype=np.float32).reshape(1, 1, 1, 2))
        out = layers.instance_norm(x, Tensor(np.ones(1, np.float32)), Tensor(np.zeros(1, np.float32)),
                                   eps=1e-12)
        assert np.allclose(out.data.reshape(-1), [-1.0, 1.0], atol=1e-4)

    def test_affine_collapse(self):
        out = layers.instance_norm(Tensor(rnd((2, 3, 4, 4))),
                                   Tensor(np.zeros(3, np.float32)),
                                   Tensor(np.full(3, 5.0, np.float32)))
        assert np.allclose(out.data, 5.0, atol=1e-6)

    def test_output_statistics(self):
        x = Tensor(rnd((2, 3, 8, 8), 7))
        gamma = np.array([0.5, 1.5, 2.0], dtype=np.float32)
        beta = np.array([-1.0, 0.0, 3.0], dtype=np.float32)
        out = layers.instance_norm(x, Tensor(gamma), Tensor(beta)).data
        mean = out.mean(axis=(2, 3))
        std = out.std(axis=(2, 3))
        assert np.allclose(mean, np.tile(beta, (2, 1)), atol=1e-5)
        assert np.allclose(std, np.tile(np.abs(gamma), (2, 1)), atol=1e-3)


class TestAdaptiveInstanceNorm:
    def test_unit_scale_zero_shift(self):
        x = Tensor(rnd((2, 3, 5, 5), 9))
        out = layers.adaptive_instance_norm(x, Tensor(np.ones(3, np.float32)),
                                            Tensor(np.zeros(3, np.float32))).data
        assert np.allclose(out.mean(axis=(2, 3)), 0.0, atol=1e-5)
        assert np.allclose(out.std(axis=(2, 3)), 1.0, atol=1e-3)

    def test_requested_statistics(self):
        x = Tensor(rnd((1, 2, 6, 6), 3))
        out = layers.adaptive_instance_norm(
            x, Tensor(np.full(2, 2.0, np.float32)),
            Tensor(np.full(2, 3.0, np.float32))).data
        assert np.allclose(out.mean(axis=(2, 3)), 3.0, atol=1e-3)
        assert np.allclose(out.std(axis=(2, 3)), 2.0, atol=1e-3)

    def test_constant_input_gives_shift(self):
        x = Tensor(np.full((1, 2, 4, 4), 0.7, dtype=np.float32))
        out = layers.adaptive_instance_norm(
            x, Tensor(np.full(2, 2.0, np.float32)),
            Tensor(np.full(2, 3.0, np.float32))).data
        assert np.allclose(out, 3.0, atol=1e-2)

    def test_matches_instance_norm_exactly(self):
        x = Tensor(rnd((2, 4, 5, 5), 11))
        a = layers.adaptive_instance_norm(x, Tensor(np.ones(4, np.float32)),
                                          Tensor(np.zeros(4, np.float32)))
        b = layers.instance_norm(x, Tensor(np.ones(4, np.float32)), Tensor(np.zeros(4, np.float32)))
        assert np.array_equal(a.data, b.data)

    def test_channel_mismatch(self):
        with pytest.raises(ShapeError):
            layers.adaptive_instance_norm(Tensor(rnd((1, 3, 4, 4))),
                                          Tensor(np.ones(2, np.float32)),
                                          Tensor(np.zeros(2, np.float32)))

    def test_per_sample_conditioning(self):
        x = Tensor(rnd((2, 2, 4, 4), 13))
        scale = Tensor(np.array([[1.0, 1.0], [2.0, 2.0]], dtype=np.float32))
        shift = Tensor(np.zeros((2, 2), dtype=np.float32))
        out = layers.adaptive_instance_norm(x, scale, shift).data
        assert np.allclose(out[1].std(axis=(1, 2)), 2.0, atol=1e-2)


class TestGlobalFeatureGate:
    def test_pooling_of_constant(self):
        gate = layers.GlobalFeatureGate(3, np.random.default_rng(0))
        x = Tensor(np.full((1, 3, 4, 4), 0.3, dtype=np.float32))
        pooled = ad.mean_(x, (2, 3))
        assert np.allclose(pooled.data, 0.3)

    def test_forced_unit_gate(self):
        gate = layers.GlobalFeatureGate(3, np.random.default_rng(0))
        gate.fc2.weight.data[:] = 0.0
        gate.fc2.bias.data[:] = 50.0          # sigmoid saturates at 1
        x = Tensor(rnd((2, 3, 4, 4), 1))
        assert np.allclose(gate(x).data, x.data, atol=1e-6)

    def test_spatial_size_invariance_on_constant_input(self):
        gate = layers.GlobalFeatureGate(2, np.random.default_rng(5))
        small = Tensor(np.full((1, 2, 4, 4), 0.6, dtype=np.float32))
        large = Tensor(np.full((1, 2, 16, 16), 0.6, dtype=np.float32))
        g_small = gate.gate_values(small).data
        g_large = gate.gate_values(large).data
        assert np.allclose(g_small, g_large, atol=1e-6)


class TestResidualBlock:
    def test_zero_residual_is_identity(self):
        block = layers.ResidualBlock(4, "none", np.random.default_rng(0))
        block.conv1.weight.data[:] = 0.0
        block.conv2.weight.data[:] = 0.0
        x = rnd((1, 4, 6, 6), 2)
        assert np.array_equal(block(Tensor(x)).data, x)

    def test_shape_preserved(self):
        block = layers.ResidualBlock(4, "instance", np.random.default_rng(1))
        assert block(Tensor(rnd((2, 4, 8, 8)))).shape == (2, 4, 8, 8)

    def test_gradient_certified(self):
        block = layers.ResidualBlock(2, "instance", np.random.default_rng(3))
        for p in block.parameters():
            p.data = p.data.astype(np.float64)

        def f(v):
            return ad.mean_(ad.mul(block(v), block(v)))

        x = Tensor(rnd((1, 2, 4, 4), 4, np.float64), dtype=np.float64)
        assert finite_difference_check(f, x) < 1e-6


class TestModuleSystem:
    def test_named_parameters_hierarchical(self):
        block = layers.ResidualBlock(2, "instance", np.random.default_rng(0))
        names = [n for n, _ in block.named_parameters()]
        assert "conv1.weight" in names and "norm2.affine.beta" in names
        assert len(names) == len(set(names))

    def test_state_dict_roundtrip(self):
        a = layers.ResidualBlock(3, "instance", np.random.default_rng(1))
        b = layers.ResidualBlock(3, "instance", np.random.default_rng(2))
        b.load_state_dict(a.state_dict())
        x = Tensor(rnd((1, 3, 4, 4)))
        assert np.array_equal(a(x).data, b(x).data)

    def test_state_dict_mismatch(self):
        a = layers.ResidualBlock(3, "instance", np.random.default_rng(1))
        state = a.state_dict()
        state.pop("conv1.weight")
        with pytest.raises(KeyError):
            a.load_state_dict(state)
