import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from fedleak.models import (
    ModelSpec,
    check_gradients,
    grad_theta,
    grad_x,
    init_params,
    load_params_csv,
    loss,
    mixed_jacobian,
    save_params_csv,
)

from conftest import central_diff, random_label

LIN2 = ModelSpec("linear-regression", 2, bias=False)


def test_param_counts():
    assert ModelSpec("mlp1", 2, hidden_dim=4, output_dim=1).param_dim == 17
    assert ModelSpec("logistic-regression", 5).param_dim == 6
    assert ModelSpec("linear-regression", 3, bias=False).param_dim == 3


def test_init_is_deterministic_and_bounded():
    spec = ModelSpec("linear-regression", 3)
    assert np.array_equal(init_params(spec, 7), init_params(spec, 7))
    spec = ModelSpec("logistic-regression", 5)
    th = init_params(spec, 3)
    assert np.all(np.abs(th) <= 1 / math.sqrt(5))
    assert init_params(ModelSpec("mlp1", 2, hidden_dim=4), 1).shape == (17,)


def test_spec_roundtrip_and_validation():
    spec = ModelSpec("mlp1", 3, hidden_dim=5, output_dim=3)
    assert ModelSpec.from_dict(spec.to_dict()) == spec
    with pytest.raises(ValueError):
        ModelSpec.from_dict({**spec.to_dict(), "param_dim": 3})
    with pytest.raises(ValueError):
        ModelSpec("mlp1", 2, hidden_dim=0)
    with pytest.raises(ValueError):
        ModelSpec("linear-regression", 0)


def test_linear_closed_forms():
    th, x, y = np.array([1.0, 0.0]), np.array([2.0, 1.0]), 1.0
    assert loss(LIN2, th, x, y) == pytest.approx(0.5)
    assert np.allclose(grad_theta(LIN2, th, x, y), [2.0, 1.0])
    assert np.allclose(grad_x(LIN2, th, x, y), [1.0, 0.0])
    assert np.allclose(mixed_jacobian(LIN2, th, x, y), [[3.0, 0.0], [1.0, 1.0]])


def test_zero_residual_is_stationary():
    th, x = np.array([1.0, 2.0]), np.array([3.0, 4.0])
    assert loss(LIN2, th, x, 11.0) == 0.0
    assert np.all(grad_theta(LIN2, th, x, 11.0) == 0)
    assert np.all(grad_x(LIN2, th, x, 11.0) == 0)
    assert np.all(mixed_jacobian(LIN2, np.zeros(2), np.zeros(2), 0.0) == 0)


def test_logistic_at_zero_params_is_ln2():
    spec = ModelSpec("logistic-regression", 4)
    for y in (0.0, 1.0):
        assert loss(spec, np.zeros(5), np.arange(4.0), y) == pytest.approx(math.log(2), abs=1e-15)


def test_invalid_labels_and_shapes():
    spec = ModelSpec("logistic-regression", 2)
    with pytest.raises(ValueError):
        loss(spec, np.zeros(3), np.zeros(2), 0.5)
    with pytest.raises(ValueError):
        loss(spec, np.zeros(4), np.zeros(2), 1.0)
    cls = ModelSpec("mlp1", 2, hidden_dim=2, output_dim=3)
    with pytest.raises(ValueError):
        loss(cls, init_params(cls, 0), np.zeros(2), 3.0)


@pytest.mark.parametrize("seed", range(5))
def test_gradients_match_independent_fd(spec, seed):
    rng = np.random.default_rng(seed)
    th = rng.standard_normal(spec.param_dim) * 0.5
    x = rng.uniform(size=spec.input_dim)
    y = random_label(spec, rng)
    gt = central_diff(lambda t: loss(spec, t, x, y), th)
    gx = central_diff(lambda v: loss(spec, th, v, y), x)
    assert np.max(np.abs(grad_theta(spec, th, x, y) - gt)) <= 1e-5 * max(1.0, np.max(np.abs(gt)))
    assert np.max(np.abs(grad_x(spec, th, x, y) - gx)) <= 1e-5 * max(1.0, np.max(np.abs(gx)))
    M = central_diff(lambda v: grad_theta(spec, th, v, y), x)
    assert M.shape == (spec.param_dim, spec.input_dim)
    assert np.max(np.abs(mixed_jacobian(spec, th, x, y) - M)) <= 1e-4


def test_check_gradients_reports():
    rng = np.random.default_rng(0)
    spec = ModelSpec("linear-regression", 4)
    rep = check_gradients(spec, rng.standard_normal(5), rng.uniform(size=4), 0.3)
    assert rep.ok and rep.max_rel_error_theta <= 1e-7 and rep.max_rel_error_x <= 1e-7
    mlp = ModelSpec("mlp1", 3, hidden_dim=6)
    rep = check_gradients(mlp, init_params(mlp, 2), rng.uniform(size=3), 0.7)
    assert rep.ok and max(rep.max_rel_error_theta, rep.max_rel_error_x) <= 1e-5
    bad = np.full(5, np.nan)
    assert not check_gradients(spec, bad, np.zeros(4), 0.0).ok
    with pytest.raises(ValueError):
        check_gradients(spec, np.zeros(5), np.zeros(4), 0.0, h=0.0)


def test_params_csv_roundtrip(tmp_path):
    th = np.random.default_rng(1).standard_normal(17)
    save_params_csv(tmp_path / "t.csv", th)
    assert np.array_equal(load_params_csv(tmp_path / "t.csv"), th)


@settings(max_examples=60, deadline=None)
@given(
    kind=st.sampled_from(["linear-regression", "logistic-regression", "mlp1"]),
    seed=st.integers(0, 2**31),
)
def test_loss_nonnegative_and_pure(kind, seed):
    spec = ModelSpec(kind, 3, hidden_dim=3 if kind == "mlp1" else 0)
    rng = np.random.default_rng(seed)
    th = rng.standard_normal(spec.param_dim) * 3
    x = rng.uniform(-2, 2, size=3)
    y = random_label(spec, rng)
    a = loss(spec, th, x, y)
    assert a >= 0
    assert a == loss(spec, th, x, y)
    assert np.array_equal(grad_theta(spec, th, x, y), grad_theta(spec, th, x, y))


@settings(max_examples=40, deadline=None)
@given(st.lists(st.floats(-5, 5), min_size=3, max_size=3), st.floats(-5, 5))
def test_linear_loss_zero_iff_exact_fit(w, b):
    spec = ModelSpec("linear-regression", 2)
    th = np.array(w)
    x = np.array([0.3, -0.7])
    y_fit = th[0] * x[0] + th[1] * x[1] + th[2]
    assert loss(spec, th, x, y_fit) == pytest.approx(0.0, abs=1e-20)
    if abs(b) > 1e-6:
        assert loss(spec, th, x, y_fit + b) > 0
