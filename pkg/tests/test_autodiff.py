import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from unigan import autodiff as ad
from unigan.autodiff import Parameter, Tensor, backward, finite_difference_check, grad, xavier_uniform_init


def test_matmul_ones():
    out = ad.matmul(Tensor(np.ones((2, 3))), Tensor(np.ones((3, 1))))
    assert out.shape == (2, 1)
    assert np.array_equal(out.data, [[3.0], [3.0]])


def test_leaky_relu_values():
    assert np.array_equal(ad.leaky_relu(Tensor([-1.0, 2.0]), 0.2).data, [-0.2, 2.0])


def test_softmax_symmetric():
    assert np.array_equal(ad.softmax(Tensor([0.0, 0.0])).data, [0.5, 0.5])


def test_shape_mismatch_names_op():
    with pytest.raises(ad.ShapeError, match=r"matmul.*\(2, 3\).*\(2, 1\)"):
        ad.matmul(Tensor(np.ones((2, 3))), Tensor(np.ones((2, 1))))
    with pytest.raises(ad.ShapeError, match="add"):
        ad.add(Tensor(np.ones(3)), Tensor(np.ones(4)))
    with pytest.raises(ad.ShapeError, match="concat"):
        ad.concat([Tensor(np.ones((2, 3))), Tensor(np.ones((3, 3)))], axis=1)


def test_log_domain_error():
    with pytest.raises(ad.DomainError):
        ad.log(Tensor([1.0, 0.0]))


def test_backward_sum():
    w = Parameter("w", np.array([0.3, -1.0, 2.0]))
    g = backward(ad.tensor_sum(w), {"w": w})
    assert np.array_equal(g["w"], [1.0, 1.0, 1.0])


def test_backward_mean_square():
    w = Parameter("w", np.array([1.0, 2.0]))
    g = backward(ad.mean(w * w), {"w": w})
    assert np.allclose(g["w"], [1.0, 2.0], rtol=0, atol=1e-15)


def test_backward_rejects_non_scalar():
    w = Parameter("w", np.ones(3))
    with pytest.raises(ad.ShapeError):
        backward(w * 2.0, {"w": w})


def test_unreachable_parameter_gets_zero():
    a = Parameter("a", np.ones(2))
    b = Parameter("b", np.ones((3, 3)))
    g = backward(ad.tensor_sum(a), {"a": a, "b": b})
    assert np.array_equal(g["b"], np.zeros((3, 3)))


def test_fd_check_sum_of_squares():
    w = Parameter("w", np.random.default_rng(0).normal(size=5))
    err = finite_difference_check(lambda p: ad.tensor_sum(p["w"] * p["w"]), {"w": w}, 1e-5)
    assert err < 1e-6


def test_fd_check_constant():
    w = Parameter("w", np.ones(3))
    assert finite_difference_check(lambda p: Tensor(4.0), {"w": w}, 1e-5) == 0.0


def test_fd_check_reports_nan_as_failure():
    w = Parameter("w", np.ones(2))
    assert finite_difference_check(lambda p: ad.tensor_sum(p["w"]) * float("nan"), {"w": w}) == float("inf")


def test_fd_check_detects_wrong_gradient():
    w = Parameter("w", np.array([1.5, -0.5]))

    def broken(p):
        # forward is x^2 but the recorded gradient is that of 3x
        x = p["w"]
        return ad.tensor_sum(ad.add(ad.scale(x, 3.0), Tensor(x.data * x.data - 3.0 * x.data)))

    assert finite_difference_check(broken, {"w": w}) > 0.1


# one randomized composite per op kind, reduced to a scalar
def _op_cases():
    return {
        "matmul": lambda p: ad.tensor_sum(ad.matmul(p["a"], p["b"])),
        "add": lambda p: ad.tensor_sum((p["a"] + p["c"]) * (p["a"] + p["c"])),
        "broadcast_add": lambda p: ad.tensor_sum(ad.tanh(p["a"] + p["v"])),
        "scale": lambda p: ad.tensor_sum(ad.scale(p["a"], -1.7) * p["a"]),
        "concat": lambda p: ad.tensor_sum(ad.tanh(ad.concat([p["a"], p["c"]], axis=1))),
        "leaky_relu": lambda p: ad.tensor_sum(ad.leaky_relu(p["a"], 0.2) * p["c"]),
        "relu": lambda p: ad.tensor_sum(ad.relu(p["a"]) * p["c"]),
        "tanh": lambda p: ad.tensor_sum(ad.tanh(p["a"])),
        "exp": lambda p: ad.mean(ad.exp(p["a"])),
        "log": lambda p: ad.tensor_sum(ad.log(ad.exp(p["a"]) + 1.0)),
        "mean": lambda p: ad.tensor_sum(ad.tanh(ad.mean(p["a"] * p["c"], axis=0))),
        "sum_axis": lambda p: ad.tensor_sum(ad.tanh(ad.tensor_sum(p["a"], axis=1))),
        "mul": lambda p: ad.tensor_sum(p["a"] * p["c"] * p["a"]),
        "max_const": lambda p: ad.tensor_sum(ad.maximum(p["a"], 0.1) * p["c"]),
        "softmax": lambda p: ad.tensor_sum(ad.softmax(p["a"], axis=1) * p["c"]),
        "gather": lambda p: ad.tensor_sum(ad.tanh(ad.gather_rows(p["a"], [0, 2, 1, 3]))),
        "div": lambda p: ad.tensor_sum(p["a"] / (p["c"] * p["c"] + 1.0)),
        "logsumexp": lambda p: ad.tensor_sum(ad.logsumexp(p["a"], axis=1)),
    }


@pytest.mark.parametrize("kind", sorted(_op_cases()))
def test_op_gradients_match_finite_differences(kind):
    rng = np.random.default_rng(sorted(_op_cases()).index(kind))
    params = {
        "a": Parameter("a", rng.normal(size=(4, 4))),
        "b": Parameter("b", rng.normal(size=(4, 3))),
        "c": Parameter("c", rng.normal(size=(4, 4))),
        "v": Parameter("v", rng.normal(size=(4,))),
    }
    assert finite_difference_check(_op_cases()[kind], params, 1e-5) < 1e-4


def test_second_order_gradient():
    # d/dw of ||d/dx (w . tanh(x))||^2, checked against finite differences of the inner gradient
    rng = np.random.default_rng(3)
    x0 = rng.normal(size=(3,))
    w = Parameter("w", rng.normal(size=(3,)))

    def penalty(p):
        x = Tensor(x0, requires_grad=True)
        (gx,) = grad(ad.tensor_sum(p["w"] * ad.tanh(x)), [x], create_graph=True)
        return ad.tensor_sum(gx * gx)

    assert finite_difference_check(penalty, {"w": w}) < 1e-6
    # closed form: gx = w * (1 - tanh^2 x); d/dw sum gx^2 = 2 w (1 - tanh^2 x)^2
    analytic = backward(penalty({"w": w}), {"w": w})["w"]
    assert np.allclose(analytic, 2 * w.data * (1 - np.tanh(x0) ** 2) ** 2, rtol=1e-12)


def test_linearity_of_backward():
    rng = np.random.default_rng(5)
    w = Parameter("w", rng.normal(size=(3, 2)))
    x = Tensor(rng.normal(size=(4, 3)))
    f1 = lambda: ad.tensor_sum(ad.tanh(x @ w))
    f2 = lambda: ad.mean(ad.exp(x @ w))
    g1 = backward(f1(), [w])["w"]
    g2 = backward(f2(), [w])["w"]
    g12 = backward(f1() + f2(), [w])["w"]
    assert np.allclose(g12, g1 + g2, rtol=1e-14, atol=1e-14)


def test_determinism_bit_identical():
    def run():
        rng = np.random.default_rng(11)
        w = Parameter("w", xavier_uniform_init(5, 4, rng))
        x = Tensor(rng.normal(size=(6, 5)))
        loss = ad.mean(ad.leaky_relu(x @ w) * ad.leaky_relu(x @ w))
        return loss.data.copy(), backward(loss, [w])["w"]

    (l1, g1), (l2, g2) = run(), run()
    assert l1.tobytes() == l2.tobytes() and g1.tobytes() == g2.tobytes()


def test_no_grad_records_nothing():
    w = Parameter("w", np.ones(2))
    with ad.no_grad():
        out = ad.tensor_sum(w * 2.0)
    assert not out.requires_grad


class TestXavier:
    def test_bound_three_by_three(self):
        w = xavier_uniform_init(3, 3, np.random.default_rng(0))
        assert np.all(np.abs(w) <= 1.0)

    def test_same_seed_same_tensor(self):
        a = xavier_uniform_init(4, 7, np.random.default_rng(42))
        b = xavier_uniform_init(4, 7, np.random.default_rng(42))
        assert np.array_equal(a, b)

    def test_empirical_mean(self):
        rng = np.random.default_rng(1)
        draws = np.concatenate([xavier_uniform_init(6, 6, rng).ravel() for _ in range(278)])[:10_000]
        assert draws.size == 10_000
        assert abs(draws.mean()) < 0.02
        assert np.abs(draws).max() <= 1.0

    @pytest.mark.parametrize("fans", [(0, 3), (3, 0)])
    def test_zero_fan_rejected(self, fans):
        with pytest.raises(ValueError):
            xavier_uniform_init(*fans, np.random.default_rng(0))


@settings(max_examples=40, deadline=None)
@given(st.lists(st.floats(-5, 5), min_size=2, max_size=6))
def test_softmax_is_a_distribution(xs):
    p = ad.softmax(Tensor(xs)).data
    assert np.isclose(p.sum(), 1.0, atol=1e-12)
    assert np.all(p > 0)
