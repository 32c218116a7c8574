import numpy as np
import pytest

from unigan.autodiff import Parameter
from unigan.optim import AdamState, MomentumState, adam_step, nesterov_step


def _params(**values):
    return {k: Parameter(k, np.array(v, dtype=np.float64)) for k, v in values.items()}


def test_adam_first_step_hand_value():
    p = _params(w=[0.0])
    adam_step(p, {"w": np.array([1.0])}, AdamState(lr=1e-3, beta1=0.9, beta2=0.999, eps=1e-8))
    # m_hat = 1, v_hat = 1, so the step is lr / (1 + eps)
    assert p["w"].data[0] == pytest.approx(-1e-3 / (1 + 1e-8), rel=1e-14, abs=0)
    assert p["w"].data[0] == pytest.approx(-9.99999995e-4, rel=1e-7)


def test_adam_second_step_hand_value():
    p = _params(w=[0.0])
    st = AdamState(lr=1e-2, beta1=0.9, beta2=0.999, eps=0.0)
    adam_step(p, {"w": np.array([1.0])}, st)
    adam_step(p, {"w": np.array([-2.0])}, st)
    m = 0.9 * 0.1 + 0.1 * -2.0
    v = 0.999 * 0.001 + 0.001 * 4.0
    step2 = 1e-2 * (m / (1 - 0.81)) / np.sqrt(v / (1 - 0.999**2))
    assert st.t == 2
    assert p["w"].data[0] == pytest.approx(-1e-2 - step2, rel=1e-12)


def test_adam_zero_gradient():
    p = _params(w=[0.7, -0.2])
    adam_step(p, {"w": np.zeros(2)}, AdamState())
    assert np.array_equal(p["w"].data, [0.7, -0.2])


def test_adam_symmetry():
    p = _params(a=[1.0, 2.0], b=[1.0, 2.0])
    g = np.array([0.3, -5.0])
    adam_step(p, {"a": g, "b": g.copy()}, AdamState())
    assert np.array_equal(p["a"].data, p["b"].data)


def test_adam_key_mismatch():
    p = _params(a=[1.0])
    with pytest.raises(KeyError):
        adam_step(p, {"b": np.ones(1)}, AdamState())


def test_adam_step_bounded():
    rng = np.random.default_rng(0)
    p = _params(w=rng.normal(size=50))
    st = AdamState()
    for _ in range(100):
        before = p["w"].data.copy()
        adam_step(p, {"w": rng.standard_cauchy(50)}, st)
        assert np.abs(p["w"].data - before).max() <= 10 * st.lr


def test_nesterov_without_momentum_is_gradient_descent():
    p = _params(w=[1.0, -2.0])
    nesterov_step(p, lambda point: {"w": np.array([0.5, 3.0])}, MomentumState(lr=0.1, mu=0.0))
    assert np.allclose(p["w"].data, [1.0 - 0.05, -2.0 - 0.3], rtol=0, atol=1e-15)


def test_nesterov_zero_gradient():
    p = _params(w=[0.4])
    nesterov_step(p, lambda point: {"w": np.zeros(1)}, MomentumState())
    assert p["w"].data[0] == 0.4


def test_nesterov_quadratic_iterates():
    # f = theta^2 / 2: v1 = -0.1, theta1 = 0.9; lookahead 0.81, v2 = -0.09 - 0.081 = -0.171, theta2 = 0.729
    p = _params(w=[1.0])
    st = MomentumState(lr=0.1, mu=0.9)
    grad_fn = lambda point: {"w": point["w"].copy()}
    nesterov_step(p, grad_fn, st)
    assert p["w"].data[0] == pytest.approx(0.9, abs=1e-15)
    assert st.velocity["w"][0] == pytest.approx(-0.1, abs=1e-15)
    nesterov_step(p, grad_fn, st)
    assert st.velocity["w"][0] == pytest.approx(-0.171, abs=1e-15)
    assert p["w"].data[0] == pytest.approx(0.729, abs=1e-15)


def test_optimizer_states_are_disjoint():
    g_params, d_params, c_params = _params(w=[1.0]), _params(w=[2.0]), _params(w=[3.0])
    g_state, d_state, c_state = AdamState(), AdamState(), MomentumState()
    adam_step(d_params, {"w": np.ones(1)}, d_state)
    d_snapshot = (d_params["w"].data.tobytes(), d_state.m["w"].tobytes(), d_state.v["w"].tobytes())
    nesterov_step(c_params, lambda point: {"w": np.ones(1)}, c_state)
    assert g_params["w"].data[0] == 1.0
    assert g_state.t == 0 and not g_state.m and not g_state.v
    assert d_state.t == 1
    assert d_snapshot == (d_params["w"].data.tobytes(), d_state.m["w"].tobytes(), d_state.v["w"].tobytes())
    assert c_params["w"].data[0] != 3.0
