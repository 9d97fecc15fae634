import numpy as np
import pytest

from voltavision.errors import NumericError
from voltavision.gradcheck import check_layer, check_network, max_rel_error
from voltavision.layers import (BatchNorm2d, Conv2d, Flatten, Linear,
                                MaxPool2d, ReLU)
from voltavision.model import build_voltavision
from voltavision.rng import make_rng


def test_conv_gradients():
    conv = Conv2d(3, 4, 3, stride=1, padding=2, rng=make_rng(50))
    assert check_layer(conv, (2, 3, 8, 8)) < 1e-4


def test_conv_strided_gradients():
    conv = Conv2d(2, 3, 3, stride=2, padding=1, rng=make_rng(51))
    assert check_layer(conv, (2, 2, 7, 7)) < 1e-4


def test_batchnorm_train_gradients():
    assert check_layer(BatchNorm2d(4), (2, 4, 8, 8), train=True) < 1e-4


def test_batchnorm_eval_gradients():
    bn = BatchNorm2d(3)
    bn.running_mean = np.array([0.1, -0.2, 0.3], dtype=np.float32)
    bn.running_var = np.array([0.5, 1.5, 1.0], dtype=np.float32)
    assert check_layer(bn, (2, 3, 4, 4), train=False) < 1e-4


def test_relu_gradients_away_from_kink():
    assert check_layer(ReLU(), (2, 4, 8, 8), avoid_zero=1e-3) < 1e-6


def test_maxpool_gradients():
    assert check_layer(MaxPool2d(3, 3), (2, 4, 8, 8), distinct_values=True) < 1e-4


def test_maxpool_overlapping_gradients():
    assert check_layer(MaxPool2d(3, 2), (2, 2, 7, 7), distinct_values=True) < 1e-4


def test_flatten_gradients():
    assert check_layer(Flatten(), (2, 3, 4, 4)) < 1e-6


def test_linear_gradients():
    assert check_layer(Linear(10, 5, rng=make_rng(52)), (4, 10, 1, 1)) < 1e-6


def test_network_loss_wrt_head():
    model = build_voltavision(3, seed=53)
    x = make_rng(54).uniform(-1, 1, (4, 3, 32, 32))
    y = np.array([0, 1, 2, 1])
    assert check_network(model, x, y, layer_index=-1, max_coords=48) < 1e-4


def test_non_finite_input_raises():
    conv = Conv2d(1, 1, 3, padding=1, rng=make_rng(55))
    conv.weight[0, 0, 0, 0] = np.nan
    with pytest.raises(NumericError):
        check_layer(conv, (1, 1, 4, 4))


def test_max_rel_error_definition():
    assert max_rel_error(np.array([1.0]), np.array([1.0])) == 0.0
    assert max_rel_error(np.array([2.0]), np.array([1.0])) == pytest.approx(0.5)
    # tiny denominators are floored at 1e-8
    assert max_rel_error(np.array([0.0]), np.array([1e-12])) == pytest.approx(1e-4)
