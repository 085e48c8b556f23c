import numpy as np
import pytest

from topomil import autodiff as ad
from topomil.autodiff import Node, Parameter

from oracles import numeric_grad, rel_error


def grad_of(fn, x):
    p = Parameter(x, "x")
    out = fn(p)
    out.backward()
    return p.grad


def check_fd(fn, x, tol):
    analytic = grad_of(fn, x)
    numeric = numeric_grad(lambda a: fn(Node(a)).item(), x)
    assert rel_error(analytic, numeric) < tol


class TestMatmul:
    def test_identity(self):
        out = ad.matmul(Node([[1.0, 0.0], [0.0, 1.0]]), Node([[3.0], [4.0]]))
        np.testing.assert_array_equal(out.data, [[3.0], [4.0]])

    def test_row_times_column(self):
        assert ad.matmul(Node([[1.0, 2.0]]), Node([[3.0], [4.0]])).data.tolist() == [[11.0]]

    def test_shape_error_reports_both_shapes(self):
        with pytest.raises(ad.DimensionError, match=r"\(2, 3\).*\(2, 3\)"):
            ad.matmul(Node(np.ones((2, 3))), Node(np.ones((2, 3))))

    @pytest.mark.parametrize("seed", range(5))
    def test_gradient_wrt_left(self, seed):
        rng = np.random.default_rng(seed)
        a, b = rng.standard_normal((3, 3)), rng.standard_normal((3, 3))
        check_fd(lambda x: ad.reduce_sum(ad.matmul(x, Node(b))), a, 1e-6)

    def test_gradient_wrt_right(self):
        rng = np.random.default_rng(7)
        a, b = rng.standard_normal((4, 3)), rng.standard_normal((3, 2))
        check_fd(lambda x: ad.reduce_sum(ad.square(ad.matmul(Node(a), x))), b, 1e-6)


class TestElementwise:
    def test_relu_values_and_zero_gradient_at_zero(self):
        x = Parameter([-1.0, 0.0, 2.0], "x")
        y = ad.relu(x)
        np.testing.assert_array_equal(y.data, [0.0, 0.0, 2.0])
        ad.reduce_sum(y).backward()
        np.testing.assert_array_equal(x.grad, [0.0, 0.0, 1.0])

    def test_tanh_zero(self):
        assert ad.tanh(Node(0.0)).item() == 0.0

    def test_square_derivative(self):
        assert grad_of(ad.square, 3.0) == 6.0

    @pytest.mark.parametrize("op", [ad.log, ad.sqrt])
    def test_domain_errors(self, op):
        with pytest.raises(ad.DomainError):
            op(Node([1.0, -0.5]))

    def test_binary_shape_mismatch(self):
        with pytest.raises(ad.DimensionError):
            ad.add(Node(np.ones(3)), Node(np.ones(2)))

    def test_scalar_broadcast_gradient(self):
        s = Parameter(2.0, "s")
        v = Parameter([1.0, 2.0, 3.0], "v")
        ad.reduce_sum(ad.mul(s, v)).backward()
        assert s.grad == 6.0
        np.testing.assert_array_equal(v.grad, [2.0, 2.0, 2.0])

    @pytest.mark.parametrize(
        "fn",
        [
            lambda x: ad.reduce_sum(ad.tanh(x)),
            lambda x: ad.reduce_sum(ad.exp(ad.scale(x, 0.3))),
            lambda x: ad.reduce_sum(ad.log(ad.add(ad.square(x), Node(1.0)))),
            lambda x: ad.reduce_sum(ad.sqrt(ad.add(ad.square(x), Node(0.5)))),
            lambda x: ad.reduce_sum(ad.div(ad.neg(x), ad.add(ad.square(x), Node(2.0)))),
            lambda x: ad.reduce_sum(ad.sub(ad.mul(x, x), ad.relu(x))),
        ],
    )
    def test_fd_agreement(self, fn):
        x = np.random.default_rng(3).standard_normal(6) + 0.1
        check_fd(fn, x, 1e-6)

    def test_sqrt_grad_eps_only_changes_derivative(self):
        x = Parameter([0.0, 4.0], "x")
        y = ad.sqrt(x, grad_eps=1e-12)
        np.testing.assert_array_equal(y.data, [0.0, 2.0])
        ad.reduce_sum(y).backward()
        assert np.isfinite(x.grad).all()


class TestReduce:
    def test_mean(self):
        assert ad.reduce_mean(Node([2.0, 4.0, 6.0])).item() == 4.0

    def test_max_tie_goes_to_lowest_index(self):
        x = Parameter([1.0, 5.0, 5.0], "x")
        out, idx = ad.reduce_max(x)
        assert out.item() == 5.0 and int(idx) == 1
        out.backward()
        np.testing.assert_array_equal(x.grad, [0.0, 1.0, 0.0])

    def test_mean_gradient(self):
        np.testing.assert_allclose(grad_of(ad.reduce_mean, np.ones(4)), np.full(4, 0.25))

    def test_axis_max_routes_to_argmax_rows(self):
        x = Parameter([[1.0, 3.0], [2.0, 3.0]], "x")
        out, idx = ad.reduce_max(x, axis=0)
        assert idx.tolist() == [1, 0]
        ad.reduce_sum(out).backward()
        np.testing.assert_array_equal(x.grad, [[0.0, 1.0], [1.0, 0.0]])

    def test_empty_axis(self):
        with pytest.raises(ValueError):
            ad.reduce_mean(Node(np.zeros((0, 3))), axis=0)

    def test_bad_axis(self):
        with pytest.raises(ad.DimensionError):
            ad.reduce_sum(Node(np.zeros(3)), axis=2)


class TestSoftmax:
    def test_symmetric(self):
        np.testing.assert_array_equal(ad.softmax(Node([0.0, 0.0])).data, [0.5, 0.5])

    def test_no_overflow(self):
        out = ad.softmax(Node([1000.0, 0.0])).data
        assert np.isfinite(out).all() and out[0] == pytest.approx(1.0) and out[1] < 1e-300

    @pytest.mark.parametrize("seed", range(5))
    def test_jacobian(self, seed):
        rng = np.random.default_rng(seed)
        x, w = rng.standard_normal(5), rng.standard_normal(5)
        check_fd(lambda v: ad.reduce_sum(ad.mul(ad.softmax(v), Node(w))), x, 1e-5)
        assert abs(ad.softmax(Node(x)).data.sum() - 1.0) < 1e-12


class TestCrossEntropy:
    def test_uniform(self):
        assert ad.cross_entropy(Node([0.0, 0.0]), 0).item() == pytest.approx(np.log(2), abs=1e-12)

    def test_confident(self):
        assert ad.cross_entropy(Node([10.0, -10.0]), 0).item() < 1e-8

    def test_bad_class(self):
        with pytest.raises(IndexError):
            ad.cross_entropy(Node([0.0, 0.0]), 2)

    @pytest.mark.parametrize("seed", range(5))
    def test_gradient(self, seed):
        x = np.random.default_rng(seed).standard_normal(4) * 2
        check_fd(lambda v: ad.cross_entropy(v, 2), x, 1e-5)
        analytic = grad_of(lambda v: ad.cross_entropy(v, 2), x)
        p = np.exp(x - x.max())
        p /= p.sum()
        p[2] -= 1
        np.testing.assert_allclose(analytic, p, atol=1e-14)

    def test_batched_is_mean_of_rows(self):
        x = np.random.default_rng(1).standard_normal((3, 2))
        batched = ad.cross_entropy(Node(x), [0, 1, 1]).item()
        rows = np.mean([ad.cross_entropy(Node(x[i]), t).item() for i, t in enumerate([0, 1, 1])])
        assert batched == pytest.approx(rows, abs=1e-14)
        check_fd(lambda v: ad.cross_entropy(v, [0, 1, 1]), x, 1e-5)


class TestDistances:
    def test_single_point(self):
        assert ad.pairwise_sq_dist(Node([[1.0, 2.0]])).data.tolist() == [[0.0]]

    def test_three_four_five(self):
        d = ad.pairwise_sq_dist(Node([[0.0, 0.0], [3.0, 4.0]])).data
        assert d[0, 1] == d[1, 0] == 25.0 and d[0, 0] == d[1, 1] == 0.0

    def test_gradient(self):
        x = np.random.default_rng(0).standard_normal((4, 3))
        check_fd(lambda v: ad.reduce_sum(ad.pairwise_sq_dist(v)), x, 1e-5)

    def test_gradient_weighted(self):
        rng = np.random.default_rng(1)
        x, w = rng.standard_normal((5, 2)), rng.standard_normal((5, 5))
        check_fd(lambda v: ad.reduce_sum(ad.mul(ad.pairwise_sq_dist(v), Node(w))), x, 1e-5)


class TestGather:
    def test_select(self):
        m = Node(np.eye(3) + np.arange(9).reshape(3, 3))
        assert ad.gather_entries(m, [(0, 1)]).data.tolist() == [m.data[0, 1]]

    def test_empty(self):
        out = ad.gather_entries(Parameter(np.ones((3, 3)), "m"), [])
        assert out.shape == (0,)
        assert ad.reduce_sum(out).item() == 0.0

    def test_scatter(self):
        m = Parameter(np.random.default_rng(0).standard_normal((4, 4)), "m")
        ad.reduce_sum(ad.gather_entries(m, [(0, 1), (2, 3), (3, 0)])).backward()
        expected = np.zeros((4, 4))
        expected[0, 1] = expected[2, 3] = expected[3, 0] = 1.0
        np.testing.assert_array_equal(m.grad, expected)

    def test_out_of_range(self):
        with pytest.raises(IndexError):
            ad.gather_entries(Node(np.zeros((2, 2))), [(0, 2)])


class TestGraph:
    def test_root_grad_is_one(self):
        x = Parameter([1.0, 2.0], "x")
        y = ad.reduce_sum(ad.square(x))
        y.backward()
        assert y.grad == 1.0

    def test_shared_subexpression_accumulates(self):
        # f = (x*y) + (x*y)^2 with u = x*y shared; df/dx = y(1 + 2u)
        x, y = Parameter(2.0, "x"), Parameter(3.0, "y")
        u = ad.mul(x, y)
        f = ad.add(u, ad.square(u))
        f.backward()
        assert x.grad == 3.0 * (1 + 2 * 6.0)
        assert y.grad == 2.0 * (1 + 2 * 6.0)

    def test_constant_never_accumulates(self):
        c = Node([1.0, 2.0])
        x = Parameter([3.0, 4.0], "x")
        ad.reduce_sum(ad.mul(c, x)).backward()
        np.testing.assert_array_equal(c.grad, [0.0, 0.0])
        assert not c.requires_grad

    def test_graph_released_after_backward(self):
        x = Parameter([1.0], "x")
        y = ad.square(x)
        z = ad.reduce_sum(y)
        z.backward()
        assert z._parents == () and y._parents == ()

    def test_backward_needs_scalar(self):
        with pytest.raises(ad.DimensionError):
            ad.square(Parameter([1.0, 2.0], "x")).backward()

    def test_forward_deterministic(self):
        rng = np.random.default_rng(0)
        x, w = rng.standard_normal((6, 5)), rng.standard_normal((5, 3))

        def run():
            return ad.softmax(ad.reshape(ad.reduce_sum(ad.tanh(ad.matmul(Node(x), Node(w))), axis=0), (3,))).data

        assert run().tobytes() == run().tobytes()


@pytest.mark.parametrize("seed", range(20))
def test_random_composition_matches_fd(seed):
    """A chain touching most ops, checked at 1e-4 over 20 seeds."""
    rng = np.random.default_rng(seed)
    x0 = rng.standard_normal((4, 3))
    w = Node(rng.standard_normal((3, 2)))
    b = Node(rng.standard_normal(2))
    pairs = [(0, 1), (2, 3), (1, 3)]

    def f(x):
        h = ad.tanh(ad.add(ad.matmul(x, w), ad.broadcast_rows(b, 4)))
        s = ad.softmax(ad.reshape(ad.reduce_mean(h, axis=1), (4,)))
        d = ad.gather_entries(ad.pairwise_sq_dist(x), pairs)
        m, _ = ad.reduce_max(ad.transpose(h), axis=1)
        return ad.add(
            ad.add(ad.reduce_sum(ad.mul(s, ad.exp(ad.scale(ad.reduce_sum(h, axis=1), 0.5)))), ad.reduce_sum(ad.sqrt(d))),
            ad.add(ad.cross_entropy(m, 1), ad.reduce_sum(ad.relu(ad.neg(x)))),
        )

    check_fd(f, x0, 1e-4)
