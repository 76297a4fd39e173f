import numpy as np
import pytest

from meritopt.opt_steps import (
    AdagradNormStep,
    AdamStep,
    RmspropStep,
    SgdStep,
    make_opt_step,
)


def test_sgd_contracts_quadratic():
    # minimizing x^2/2 with gradient x: x_{t+1} = (1 - gamma) x_t
    opt = SgdStep()
    x = np.array([1.0])
    for _ in range(2):
        x = opt.step(x, x.copy(), 0.1)
    assert abs(x[0] - 0.81) < 1e-15


def test_sgd_is_stateless_shift():
    opt = SgdStep()
    x = np.array([3.0, -1.0])
    g = np.array([0.5, 2.0])
    out = opt.step(x, g, 0.2)
    np.testing.assert_array_equal(out, x - 0.2 * g)
    np.testing.assert_array_equal(x, [3.0, -1.0])


def test_rmsprop_single_step_by_hand():
    # b0=0, beta2=0.5, g=(2,0): accumulator (2,0), divisor (sqrt(2)+0.1, 0.1)
    opt = RmspropStep(beta2=0.5, eps=0.1, b0=0.0)
    x = np.array([1.0, 1.0])
    out = opt.step(x, np.array([2.0, 0.0]), 1.0)
    np.testing.assert_array_equal(opt.sq_avg, [2.0, 0.0])
    np.testing.assert_array_equal(opt.divisor(), [np.sqrt(2.0) + 0.1, 0.1])
    np.testing.assert_allclose(out, [1.0 - 2.0 / (np.sqrt(2.0) + 0.1), 1.0], rtol=0, atol=0)


def test_rmsprop_accumulator_excludes_eps():
    opt = RmspropStep(beta2=0.5, eps=0.1, b0=0.0)
    x = np.zeros(1)
    x = opt.step(x, np.array([2.0]), 1.0)
    x = opt.step(x, np.array([0.0]), 1.0)
    # with eps folded into the recursion this would be 0.5*(sqrt(2)+0.1)^2
    assert opt.sq_avg[0] == 1.0


def test_rmsprop_divisor_floor():
    opt = RmspropStep(beta2=0.98, eps=1e-8)
    x = np.zeros(4)
    for _ in range(20):
        x = opt.step(x, np.zeros(4), 0.1)
    assert np.all(opt.divisor() >= 1e-8)
    np.testing.assert_array_equal(x, np.zeros(4))


def test_adagrad_norm_single_step_by_hand():
    # b0=1, g=(3,4): accumulator 1 + 25 = 26 before the division
    opt = AdagradNormStep(b0=1.0)
    x = np.array([1.0, 1.0])
    out = opt.step(x, np.array([3.0, 4.0]), 0.1)
    assert opt.b_sq == 26.0
    assert opt.b == np.sqrt(26.0)
    np.testing.assert_allclose(
        out, [1.0 - 0.3 / np.sqrt(26.0), 1.0 - 0.4 / np.sqrt(26.0)], rtol=0, atol=0
    )


def test_adagrad_norm_unit_stream_closed_form():
    opt = AdagradNormStep(b0=1.0)
    x = np.zeros(3)
    for t in range(1, 1001):
        g = np.zeros(3)
        g[t % 3] = 1.0
        x = opt.step(x, g, 0.1)
        assert opt.b_sq == 1.0 + t
        assert opt.b == np.sqrt(1.0 + t)


def test_adagrad_norm_b_monotone():
    rng = np.random.default_rng(5)
    opt = AdagradNormStep(b0=1.0)
    x = rng.standard_normal(6)
    prev = opt.b
    for _ in range(300):
        x = opt.step(x, rng.standard_normal(6), 0.05)
        assert opt.b >= prev
        prev = opt.b


def test_adagrad_norm_rejects_nonpositive_b0():
    with pytest.raises(ValueError):
        AdagradNormStep(b0=0.0)


def test_adam_first_step_betas_zero():
    opt = AdamStep(beta1=0.0, beta2=0.0, eps=1e-8)
    x = np.array([1.0, -2.0])
    g = np.array([3.0, -0.5])
    out = opt.step(x, g, 0.2)
    expected = x - 0.2 * g / (np.abs(g) + 1e-8)
    np.testing.assert_allclose(out, expected, rtol=0, atol=0)


def test_adam_first_step_bias_correction():
    # the very first update has m_hat = g and v_hat = g^2 after correction
    opt = AdamStep(beta1=0.9, beta2=0.98, eps=1e-8)
    x = np.zeros(2)
    g = np.array([4.0, -1.0])
    out = opt.step(x, g, 0.5)
    expected = -0.5 * g / (np.abs(g) + 1e-8)
    np.testing.assert_allclose(out, expected, rtol=1e-15, atol=0)


def test_adam_zero_gradient_is_fixed_point():
    opt = AdamStep()
    x = np.array([0.3, -0.7, 2.0])
    for _ in range(25):
        out = opt.step(x, np.zeros(3), 0.1)
        np.testing.assert_array_equal(out, x)
        x = out


def test_clone_runs_identical_trajectories():
    rng = np.random.default_rng(11)
    for kind, kw in [
        ("sgd", {}),
        ("adam", {"beta1": 0.9, "beta2": 0.98}),
        ("rmsprop", {"beta2": 0.9}),
        ("adagrad-norm", {"b0": 1.0}),
    ]:
        opt = make_opt_step(kind, **kw)
        x = rng.standard_normal(5)
        for _ in range(7):
            x = opt.step(x, rng.standard_normal(5), 0.05)
        twin = opt.clone()
        xa, xb = x.copy(), x.copy()
        tail = [rng.standard_normal(5) for _ in range(7)]
        for g in tail:
            xa = opt.step(xa, g, 0.05)
        for g in tail:
            xb = twin.step(xb, g, 0.05)
        np.testing.assert_array_equal(xa, xb)


def test_clone_isolates_state():
    opt = AdamStep()
    opt.step(np.zeros(2), np.ones(2), 0.1)
    twin = opt.clone()
    twin.step(np.zeros(2), 5.0 * np.ones(2), 0.1)
    assert opt.step_count == 1
    np.testing.assert_array_equal(opt.m, (1.0 - 0.9) * np.ones(2))


def test_dimension_mismatch_rejected():
    opt = SgdStep()
    with pytest.raises(ValueError, match="same shape"):
        opt.step(np.zeros(3), np.zeros(4), 0.1)
    with pytest.raises(ValueError, match="1-d"):
        opt.step(np.zeros((2, 2)), np.zeros((2, 2)), 0.1)


def test_weight_sensitivity_shapes():
    g = np.array([1.0, 2.0])
    sgd = SgdStep()
    sgd.step(np.zeros(2), g, 0.1)
    assert sgd.weight_sensitivity() == (1.0, 1.0)

    rms = RmspropStep(beta2=0.5, eps=0.1)
    rms.step(np.zeros(2), g, 0.1)
    scale, denom = rms.weight_sensitivity()
    assert scale == 1.0
    np.testing.assert_array_equal(denom, rms.divisor())

    adam = AdamStep(beta1=0.9, beta2=0.98)
    adam.step(np.zeros(2), g, 0.1)
    scale, denom = adam.weight_sensitivity()
    # after one step the bias-corrected first moment is exactly g
    assert abs(scale - 1.0) < 1e-12
    np.testing.assert_allclose(denom, np.abs(g) + adam.eps, rtol=1e-15)

    ada = AdagradNormStep(b0=1.0)
    ada.step(np.zeros(2), g, 0.1)
    scale, denom = ada.weight_sensitivity()
    assert scale == 1.0 and denom == np.sqrt(6.0)


def test_weight_sensitivity_requires_a_step():
    with pytest.raises(RuntimeError):
        AdamStep().weight_sensitivity()


def test_make_opt_step_unknown_kind():
    with pytest.raises(ValueError, match="unknown optimizer kind"):
        make_opt_step("adamw")


def test_invalid_hyperparameters():
    with pytest.raises(ValueError):
        AdamStep(beta1=1.0)
    with pytest.raises(ValueError):
        RmspropStep(beta2=-0.1)
