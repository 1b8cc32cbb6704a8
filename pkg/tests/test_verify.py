import time

import numpy as np
import pytest

from hexresnet.config import ShortcutMode
from hexresnet.layers import HexConv2d
from hexresnet.tensor import make_rng
from hexresnet.verify import (
    LAYER_TOLERANCE,
    MODEL_TOLERANCE,
    check_layer_gradients,
    gradcheck_layers,
    gradcheck_model,
    numerical_gradient,
    relative_error,
    verify_hexconv,
)


def test_numerical_gradient_of_quadratic():
    x = np.array([1.0, -2.0, 3.0])
    grad = numerical_gradient(lambda: float(np.sum(x**2)), x)
    np.testing.assert_allclose(grad, 2 * x, rtol=1e-8)
    np.testing.assert_array_equal(x, [1.0, -2.0, 3.0])


def test_numerical_gradient_needs_contiguous_array():
    x = np.ones((3, 4)).T
    with pytest.raises(ValueError):
        numerical_gradient(lambda: 0.0, x)


def test_relative_error():
    assert relative_error(np.ones(3), np.ones(3)) == 0.0
    assert relative_error(np.zeros(3), np.zeros(3)) == 0.0
    assert relative_error(np.array([1.0]), np.array([-1.0])) == pytest.approx(1.0)


def test_oracle_sweep_passes_quickly():
    start = time.perf_counter()
    report = verify_hexconv(cases=200, seed=7)
    assert time.perf_counter() - start < 10
    assert report.cases == 200
    assert report.passed
    assert report.max_deviation < 1e-5


def test_oracle_sweep_is_seeded():
    assert verify_hexconv(cases=10, seed=3).worst_case == verify_hexconv(cases=10, seed=3).worst_case


def test_oracle_rejects_zero_cases():
    with pytest.raises(ValueError):
        verify_hexconv(cases=0)


def test_every_layer_passes_gradcheck():
    errors = gradcheck_layers(seed=0)
    assert {"conv3x3", "hexconv_odd_width", "hexconv_stride2", "batchnorm", "linear", "softmax_cross_entropy"} <= set(errors)
    failing = {name: err for name, err in errors.items() if not err < LAYER_TOLERANCE}
    assert not failing


@pytest.mark.parametrize("mode", list(ShortcutMode))
def test_small_model_passes_gradcheck(mode):
    assert gradcheck_model(seed=0, shortcut_mode=mode) < MODEL_TOLERANCE


def test_hexconv_gradcheck_per_parameter():
    rng = make_rng(5)
    layer = HexConv2d(3, 2, rng, dtype=np.float64)
    errors = check_layer_gradients(layer, rng.normal(size=(2, 3, 5, 5)), rng, max_coords=None)
    assert set(errors) == {"input", "k1r1", "k1r2"}
    assert max(errors.values()) < LAYER_TOLERANCE
