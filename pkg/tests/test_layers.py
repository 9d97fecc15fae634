import numpy as np
import pytest

from voltavision.errors import DataError, ShapeError
from voltavision.layers import (BatchNorm2d, Conv2d, Flatten, Linear,
                                MaxPool2d, ReLU)
from voltavision.rng import make_rng
from voltavision.tensor import Tensor


def t(arr, dtype=np.float32):
    return Tensor(np.asarray(arr, dtype=dtype))


def direct_conv(x, weight, bias, stride, padding):
    """Six-nested-loop reference convolution."""
    n, c, h, w = x.shape
    out_c, _, k, _ = weight.shape
    xp = np.pad(x, ((0, 0), (0, 0), (padding, padding), (padding, padding)))
    out_h = (h + 2 * padding - k) // stride + 1
    out_w = (w + 2 * padding - k) // stride + 1
    out = np.zeros((n, out_c, out_h, out_w), dtype=np.float64)
    for b in range(n):
        for o in range(out_c):
            for i in range(out_h):
                for j in range(out_w):
                    acc = bias[o]
                    for ci in range(c):
                        for u in range(k):
                            for v in range(k):
                                acc += weight[o, ci, u, v] * xp[b, ci, i * stride + u, j * stride + v]
                    out[b, o, i, j] = acc
    return out


class TestConv:
    def test_first_stage_output_shape(self):
        conv = Conv2d(3, 12, 3, stride=1, padding=2, rng=make_rng(0))
        out = conv.forward(t(make_rng(1).uniform(-1, 1, (1, 3, 32, 32))))
        assert tuple(out.shape) == (1, 12, 34, 34)

    def test_hand_summation_ones(self):
        conv = Conv2d(1, 1, 3, stride=1, padding=2)
        conv.weight = np.ones_like(conv.weight)
        out = conv.forward(t(np.ones((1, 1, 3, 3)))).data[0, 0]
        assert out.shape == (5, 5)
        assert out[0, 0] == pytest.approx(1.0)
        assert out[2, 2] == pytest.approx(9.0)
        assert out[0, 2] == pytest.approx(3.0)

    @pytest.mark.parametrize("stride,padding", [(1, 0), (1, 2), (2, 1)])
    def test_matches_direct_convolution_oracle(self, stride, padding):
        rng = make_rng(42 + stride + padding)
        x = rng.uniform(-1, 1, (2, 3, 8, 8)).astype(np.float32)
        conv = Conv2d(3, 5, 3, stride=stride, padding=padding, rng=rng)
        got = conv.forward(t(x)).data
        want = direct_conv(x.astype(np.float64), conv.weight.astype(np.float64),
                           conv.bias.astype(np.float64), stride, padding)
        assert np.max(np.abs(got - want)) < 1e-5

    def test_channel_mismatch_names_shapes(self):
        conv = Conv2d(3, 4, 3, padding=1)
        with pytest.raises(ShapeError, match=r"3 input channels"):
            conv.forward(t(np.zeros((1, 2, 8, 8))))

    def test_too_small_output_rejected(self):
        conv = Conv2d(1, 1, 5)
        with pytest.raises(ShapeError, match="output"):
            conv.forward(t(np.zeros((1, 1, 3, 3))))

    def test_zero_weights_output_bias(self):
        conv = Conv2d(2, 3, 3, padding=1)
        conv.bias = np.array([1.5, -2.0, 0.25], dtype=np.float32)
        out = conv.forward(t(make_rng(3).uniform(-1, 1, (2, 2, 6, 6)))).data
        for o, b in enumerate(conv.bias):
            assert np.all(out[:, o] == b)

    def test_backward_zero_grad_gives_zero(self):
        conv = Conv2d(2, 3, 3, padding=1, rng=make_rng(4))
        out = conv.forward(t(make_rng(5).uniform(-1, 1, (1, 2, 5, 5))))
        dx = conv.backward(Tensor(np.zeros_like(out.data)))
        assert not dx.data.any()
        assert not conv.grad_weight.any()
        assert not conv.grad_bias.any()

    def test_scalar_chain_rule(self):
        conv = Conv2d(1, 1, 1)
        conv.weight = np.array([[[[2.0]]]], dtype=np.float32)
        x = t([[[[7.0]]]])
        conv.forward(x)
        dx = conv.backward(t([[[[3.0]]]]))
        assert dx.data.item() == pytest.approx(6.0)
        assert conv.grad_weight.item() == pytest.approx(21.0)
        assert conv.grad_bias.item() == pytest.approx(3.0)

    def test_backward_shape_mismatch(self):
        conv = Conv2d(1, 1, 3, padding=1)
        conv.forward(t(np.zeros((1, 1, 4, 4))))
        with pytest.raises(ShapeError):
            conv.backward(t(np.zeros((1, 1, 3, 3))))


class TestBatchNorm:
    def test_two_value_channel(self):
        bn = BatchNorm2d(1)
        x = t(np.array([1.0, 3.0]).reshape(2, 1, 1, 1))
        out = bn.forward(x, train=True).data.reshape(-1)
        assert out[0] == pytest.approx(-0.99999, abs=1e-4)
        assert out[1] == pytest.approx(0.99999, abs=1e-4)

    def test_constant_input_maps_to_zero(self):
        bn = BatchNorm2d(2)
        out = bn.forward(t(np.full((3, 2, 4, 4), 0.7)), train=True).data
        assert np.max(np.abs(out)) < 1e-3

    def test_eval_mode_formula(self):
        bn = BatchNorm2d(1)
        bn.gamma = np.array([2.0], dtype=np.float32)
        bn.beta = np.array([1.0], dtype=np.float32)
        out = bn.forward(t(np.full((1, 1, 1, 1), 3.0)), train=False).data.item()
        assert out == pytest.approx(2 * 3 / np.sqrt(1 + 1e-5) + 1, abs=1e-4)

    def test_train_mode_normalizes(self):
        bn = BatchNorm2d(4)
        x = t(make_rng(6).uniform(-2, 3, (3, 4, 5, 5)))
        out = bn.forward(x, train=True).data
        mean = out.mean(axis=(0, 2, 3))
        var = out.var(axis=(0, 2, 3))
        assert np.max(np.abs(mean)) < 1e-5
        assert np.max(np.abs(var - 1)) < 1e-3

    def test_running_stats_update(self):
        bn = BatchNorm2d(1)
        x = np.full((2, 1, 1, 1), 4.0, dtype=np.float32)
        bn.forward(t(x), train=True)
        # running <- 0.9 * init + 0.1 * batch
        assert bn.running_mean[0] == pytest.approx(0.4, abs=1e-6)
        assert bn.running_var[0] == pytest.approx(0.9, abs=1e-6)

    def test_degenerate_batch_rejected(self):
        bn = BatchNorm2d(2)
        with pytest.raises(DataError, match="train mode"):
            bn.forward(t(np.zeros((1, 2, 1, 1))), train=True)

    def test_eval_is_pure(self):
        bn = BatchNorm2d(3)
        x = t(make_rng(7).uniform(-1, 1, (2, 3, 4, 4)))
        before = (bn.running_mean.copy(), bn.running_var.copy())
        out1 = bn.forward(x, train=False).data
        out2 = bn.forward(x, train=False).data
        assert np.array_equal(out1, out2)
        assert np.array_equal(bn.running_mean, before[0])
        assert np.array_equal(bn.running_var, before[1])

    def test_frozen_layer_ignores_train_flag(self):
        bn = BatchNorm2d(2)
        bn.trainable = False
        x = t(make_rng(8).uniform(-1, 1, (2, 2, 3, 3)))
        eval_out = bn.forward(x, train=False).data
        train_out = bn.forward(x, train=True).data
        assert np.array_equal(eval_out, train_out)
        assert np.array_equal(bn.running_mean, np.zeros(2, dtype=np.float32))


class TestReLU:
    def test_definition(self):
        out = ReLU().forward(t(np.array([-1.0, 0.0, 2.0]).reshape(1, 1, 1, 3)))
        assert np.array_equal(out.data.reshape(-1), [0.0, 0.0, 2.0])

    def test_positive_identity(self):
        x = t(make_rng(9).uniform(0.1, 2, (1, 2, 3, 3)))
        assert np.array_equal(ReLU().forward(x).data, x.data)

    def test_backward_gate(self):
        relu = ReLU()
        relu.forward(t(np.array([-1.0, 2.0]).reshape(1, 1, 1, 2)))
        dx = relu.backward(t(np.array([5.0, 5.0]).reshape(1, 1, 1, 2)))
        assert np.array_equal(dx.data.reshape(-1), [0.0, 5.0])

    def test_zero_input_gets_zero_grad(self):
        relu = ReLU()
        relu.forward(t(np.zeros((1, 1, 1, 2))))
        dx = relu.backward(t(np.full((1, 1, 1, 2), 3.0)))
        assert not dx.data.any()


class TestMaxPool:
    def test_pool_shape_after_first_conv(self):
        pool = MaxPool2d(3, 3)
        out = pool.forward(t(make_rng(10).uniform(-1, 1, (1, 12, 34, 34))))
        assert tuple(out.shape) == (1, 12, 11, 11)

    def test_single_window_forward_backward(self):
        pool = MaxPool2d(2, 2)
        out = pool.forward(t(np.array([[1.0, 2.0], [3.0, 4.0]]).reshape(1, 1, 2, 2)))
        assert out.data.reshape(-1).tolist() == [4.0]
        dx = pool.backward(t(np.array([[[[7.0]]]])))
        assert np.array_equal(dx.data[0, 0], [[0.0, 0.0], [0.0, 7.0]])

    def test_tie_breaks_to_first_in_scan_order(self):
        pool = MaxPool2d(2, 2)
        pool.forward(t(np.full((1, 1, 2, 2), 5.0)))
        dx = pool.backward(t(np.array([[[[1.0]]]])))
        assert np.array_equal(dx.data[0, 0], [[1.0, 0.0], [0.0, 0.0]])

    @pytest.mark.parametrize("kernel,stride", [(2, 2), (3, 3), (3, 2), (2, 1)])
    def test_matches_window_scan_oracle(self, kernel, stride):
        x = make_rng(11 + kernel + stride).uniform(-1, 1, (2, 3, 7, 9))
        pool = MaxPool2d(kernel, stride)
        got = pool.forward(t(x)).data
        n, c, h, w = x.shape
        out_h = (h - kernel) // stride + 1
        out_w = (w - kernel) // stride + 1
        for b in range(n):
            for ci in range(c):
                for i in range(out_h):
                    for j in range(out_w):
                        window = x[b, ci, i * stride:i * stride + kernel,
                                   j * stride:j * stride + kernel]
                        assert got[b, ci, i, j] == np.float32(window.max())

    def test_gradient_mass_conserved_disjoint_windows(self):
        pool = MaxPool2d(3, 3)
        x = t(make_rng(12).uniform(-1, 1, (2, 2, 9, 9)))
        out = pool.forward(x)
        g = make_rng(13).uniform(-1, 1, tuple(out.shape))
        dx = pool.backward(Tensor(g))
        assert dx.data.sum() == pytest.approx(g.sum(), rel=1e-6)

    def test_kernel_larger_than_input_rejected(self):
        with pytest.raises(ShapeError, match="exceeds"):
            MaxPool2d(3, 3).forward(t(np.zeros((1, 1, 2, 2))))


class TestFlattenLinear:
    def test_flatten_roundtrip(self):
        flat = Flatten()
        x = t(make_rng(14).uniform(-1, 1, (2, 3, 4, 5)))
        out = flat.forward(x)
        assert tuple(out.shape) == (2, 60, 1, 1)
        back = flat.backward(out)
        assert np.array_equal(back.data, x.data)

    def test_hand_arithmetic(self):
        lin = Linear(2, 2)
        lin.weight = np.array([[1.0, 2.0], [3.0, 4.0]], dtype=np.float32)
        out = lin.forward(t(np.array([1.0, 1.0]).reshape(1, 2, 1, 1)))
        assert out.data.reshape(-1).tolist() == [3.0, 7.0]

    def test_identity_weights(self):
        lin = Linear(3, 3)
        lin.weight = np.eye(3, dtype=np.float32)
        x = t(make_rng(15).uniform(-1, 1, (2, 3, 1, 1)))
        assert np.allclose(lin.forward(x).data, x.data)

    def test_feature_mismatch(self):
        with pytest.raises(ShapeError, match="linear expects"):
            Linear(4, 2).forward(t(np.zeros((1, 3, 1, 1))))

    def test_backward_values(self):
        lin = Linear(2, 1)
        lin.weight = np.array([[2.0, -1.0]], dtype=np.float32)
        lin.forward(t(np.array([3.0, 4.0]).reshape(1, 2, 1, 1)))
        dx = lin.backward(t(np.array([5.0]).reshape(1, 1, 1, 1)))
        assert np.array_equal(dx.data.reshape(-1), [10.0, -5.0])
        assert np.array_equal(lin.grad_weight, [[15.0, 20.0]])
        assert np.array_equal(lin.grad_bias, [5.0])


class TestPurity:
    def test_forward_twice_bit_identical(self):
        rng = make_rng(16)
        x = t(rng.uniform(-1, 1, (2, 3, 8, 8)))
        layers = [Conv2d(3, 4, 3, padding=1, rng=make_rng(17)),
                  ReLU(), MaxPool2d(2, 2)]
        for layer in layers:
            out1 = layer.forward(x).data
            out2 = layer.forward(x).data
            assert np.array_equal(out1, out2)
