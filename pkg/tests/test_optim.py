import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from pesgrad import ConfigError, NonFiniteGradientError, OptimizerState, adam_update, optimizer_step, sgd_update
from pesgrad.optim import clip_coordinates


def listing_adam(params, grads, m, v, t, lr=1e-2, b1=0.99, b2=0.999, eps=1e-8):
    """Line-for-line transcription of the reference outer optimizer step."""
    m = (1 - b1) * grads + b1 * m
    v = (1 - b2) * (grads**2) + b2 * v
    mhat = m / (1 - b1 ** (t + 1))
    vhat = v / (1 - b2 ** (t + 1))
    return params - lr * mhat / (np.sqrt(vhat) + eps), m, v


class TestSgd:
    def test_zero_grad(self):
        assert np.array_equal(sgd_update(np.array([0.3, -1.0]), np.zeros(2), 0.1), [0.3, -1.0])

    def test_arithmetic(self):
        assert sgd_update(np.array([0.5]), np.array([2.0]), 1e-4)[0] == pytest.approx(0.4998, abs=1e-15)

    def test_non_finite(self):
        with pytest.raises(NonFiniteGradientError):
            sgd_update(np.zeros(2), np.array([1.0, np.inf]), 0.1)


class TestAdam:
    def test_defaults(self):
        s = OptimizerState()
        assert (s.kind, s.lr, s.b1, s.b2, s.eps, s.t) == ("adam", 1e-2, 0.99, 0.999, 1e-8, 0)

    def test_zero_grad_keeps_theta(self):
        _, th = adam_update(OptimizerState(), np.array([1.0, 2.0]), np.zeros(2))
        assert np.array_equal(th, [1.0, 2.0])

    @pytest.mark.parametrize("g", [3.0, -0.02, 1e-3])
    def test_first_step_is_signed_lr(self, g):
        state, th = adam_update(OptimizerState(), np.array([0.0]), np.array([g]))
        assert th[0] == pytest.approx(-1e-2 * g / (abs(g) + 1e-8), rel=1e-12)
        assert state.t == 1

    def test_matches_listing(self):
        rng = np.random.default_rng(0)
        grads = rng.standard_normal((25, 3))
        state, th = OptimizerState(), np.array([0.1, 0.2, 0.3])
        ref, m, v = th.copy(), np.zeros(3), np.zeros(3)
        for t, g in enumerate(grads):
            state, th = adam_update(state, th, g)
            ref, m, v = listing_adam(ref, g, m, v, t)
        assert np.array_equal(th, ref)

    def test_does_not_mutate_state(self):
        s0 = OptimizerState()
        adam_update(s0, np.zeros(2), np.ones(2))
        assert s0.m is None and s0.t == 0

    @settings(max_examples=40, deadline=None)
    @given(g=st.lists(st.floats(-1e3, 1e3), min_size=1, max_size=4))
    def test_odd_symmetry(self, g):
        g = np.array(g)
        _, a = adam_update(OptimizerState(), np.zeros_like(g), g)
        _, b = adam_update(OptimizerState(), np.zeros_like(g), -g)
        assert np.array_equal(a, -b)

    def test_non_finite(self):
        with pytest.raises(NonFiniteGradientError):
            adam_update(OptimizerState(), np.zeros(1), np.array([np.nan]))


class TestClipping:
    def test_clip_each_coordinate(self):
        np.testing.assert_array_equal(clip_coordinates(np.array([5.0, -4.0, 1.0]), 3.0), [3.0, -3.0, 1.0])

    def test_clip_applied_before_update(self):
        s = OptimizerState(kind="sgd", lr=1.0, clip=3.0)
        _, th = optimizer_step(s, np.zeros(2), np.array([10.0, -0.5]))
        np.testing.assert_array_equal(th, [-3.0, 0.5])

    def test_invalid(self):
        with pytest.raises(ConfigError):
            OptimizerState(clip=-1.0)
        with pytest.raises(ConfigError):
            OptimizerState(kind="rmsprop")
        with pytest.raises(ConfigError):
            OptimizerState(lr=0.0)


def test_influence_rtrl_sgd_reduces_loss():
    from pesgrad import OnlineEstimator, full_loss
    from pesgrad.tasks import InfluenceBalancingTask

    task = InfluenceBalancingTask(horizon=100)
    est = OnlineEstimator("rtrl", task, 1)
    theta = task.default_theta()
    initial = full_loss(task, theta)
    for i in range(5000):
        if est.inner_t >= task.horizon:
            est.reset()
        theta = sgd_update(theta, est.step(theta, i).grad, 1e-4)
    assert full_loss(task, theta) < initial
