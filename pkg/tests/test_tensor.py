"""Unit tests for the autodiff engine.

Gradient correctness is established against central finite differences
(finite_difference_check), which evaluates only forward passes and is
therefore independent of the backward implementation.
"""

import numpy as np
import pytest

from emag.tensor import (
    Module,
    Parameter,
    ShapeError,
    Tensor,
    concat,
    dropout,
    finite_difference_check,
    layer_norm,
    where,
)


def rand_param(rng, *shape):
    return Parameter(rng.standard_normal(shape))


class TestForward:
    def test_matmul_identity(self):
        a = Tensor([[1.0, 2.0], [3.0, 4.0]])
        out = a @ Tensor(np.eye(2))
        np.testing.assert_array_equal(out.data, [[1.0, 2.0], [3.0, 4.0]])

    def test_matmul_hand_computed(self):
        out = Tensor([[1.0, 2.0]]) @ Tensor([[3.0], [4.0]])
        np.testing.assert_array_equal(out.data, [[11.0]])

    def test_matmul_shape_mismatch_names_shapes(self):
        with pytest.raises(ShapeError, match=r"\(2, 3\).*\(2, 3\)"):
            Tensor(np.zeros((2, 3))) @ Tensor(np.zeros((2, 3)))

    def test_softmax_uniform(self):
        out = Tensor([0.0, 0.0, 0.0]).softmax()
        np.testing.assert_allclose(out.data, [1 / 3] * 3, atol=1e-15)

    def test_softmax_shift_invariance(self):
        x = np.array([0.3, 1.7, -2.0])
        a = Tensor(x).softmax().data
        b = Tensor(x + 123.456).softmax().data
        np.testing.assert_allclose(a, b, atol=1e-12)

    def test_softmax_analytic(self):
        x = np.array([1.0, 2.0, 3.0])
        expected = np.exp(x) / np.exp(x).sum()
        np.testing.assert_allclose(Tensor(x).softmax().data, expected, atol=1e-12)

    def test_softmax_rows_sum_to_one(self):
        rng = np.random.default_rng(0)
        out = Tensor(rng.standard_normal((4, 5, 6))).softmax()
        np.testing.assert_allclose(out.data.sum(axis=-1), np.ones((4, 5)), atol=1e-9)
        assert (out.data > 0).all()

    def test_layer_norm_constant_slice(self):
        out = layer_norm(Tensor([5.0, 5.0, 5.0]), np.ones(3), np.zeros(3))
        np.testing.assert_allclose(out.data, np.zeros(3), atol=1e-12)

    def test_layer_norm_already_normalized(self):
        out = layer_norm(Tensor([-1.0, 1.0]), np.ones(2), np.zeros(2), eps=1e-12)
        np.testing.assert_allclose(out.data, [-1.0, 1.0], atol=1e-6)

    def test_layer_norm_zero_mean(self):
        rng = np.random.default_rng(1)
        out = layer_norm(Tensor(rng.standard_normal((7, 9))), np.ones(9), np.zeros(9))
        assert np.abs(out.data.mean(axis=-1)).max() < 1e-9

    def test_backward_requires_scalar(self):
        x = Tensor(np.zeros(3), requires_grad=True)
        with pytest.raises(ShapeError):
            x.backward()

    def test_backward_sum(self):
        x = Tensor([1.0, 2.0, 3.0], requires_grad=True)
        x.sum().backward()
        np.testing.assert_array_equal(x.grad, [1.0, 1.0, 1.0])

    def test_backward_quadratic(self):
        x = Tensor([1.0, 2.0], requires_grad=True)
        (x * x).sum().backward()
        np.testing.assert_array_equal(x.grad, [2.0, 4.0])

    def test_grad_accumulates_across_backward_calls(self):
        x = Tensor([1.0, 2.0], requires_grad=True)
        x.sum().backward()
        x.sum().backward()
        np.testing.assert_array_equal(x.grad, [2.0, 2.0])
        x.zero_grad()
        assert x.grad is None

    def test_dropout_eval_identity(self):
        rng = np.random.default_rng(3)
        x = Tensor(rng.standard_normal(10))
        out = dropout(x, 0.5, rng, train=False)
        assert out is x

    def test_dropout_train_scaling(self):
        x = Tensor(np.ones(10000))
        out = dropout(x, 0.25, np.random.default_rng(4), train=True)
        kept = out.data[out.data > 0]
        np.testing.assert_allclose(kept, 1.0 / 0.75)
        assert abs(out.data.mean() - 1.0) < 0.05

    def test_dropout_deterministic_given_seed(self):
        x = Tensor(np.ones(50))
        a = dropout(x, 0.3, np.random.default_rng(9), train=True).data
        b = dropout(x, 0.3, np.random.default_rng(9), train=True).data
        np.testing.assert_array_equal(a, b)

    def test_where_selects(self):
        cond = np.array([True, False, True])
        out = where(cond, Tensor([1.0, 1.0, 1.0]), Tensor([2.0, 2.0, 2.0]))
        np.testing.assert_array_equal(out.data, [1.0, 2.0, 1.0])

    def test_concat_and_slice_round_trip(self):
        a = Tensor(np.arange(6.0).reshape(2, 3))
        b = Tensor(np.arange(6.0, 12.0).reshape(2, 3))
        cat = concat([a, b], axis=0)
        np.testing.assert_array_equal(cat[0:2].data, a.data)
        np.testing.assert_array_equal(cat[2:4].data, b.data)


class TestGradients:
    """Finite-difference checks: relative error < 1e-4 over >= 10 seeds."""

    @pytest.mark.parametrize("seed", range(10))
    def test_matmul(self, seed):
        rng = np.random.default_rng(seed)
        a = rand_param(rng, 3, 4)
        b = rand_param(rng, 4, 2)
        err = finite_difference_check(lambda: (a @ b).sum(), [a, b])
        assert err < 1e-6

    @pytest.mark.parametrize("seed", range(10))
    def test_batched_matmul_broadcast(self, seed):
        rng = np.random.default_rng(seed)
        a = rand_param(rng, 2, 3, 4)
        b = rand_param(rng, 4, 5)
        err = finite_difference_check(lambda: ((a @ b) * (a @ b)).sum(), [a, b])
        assert err < 1e-4

    @pytest.mark.parametrize("seed", range(10))
    def test_elementwise_chain(self, seed):
        rng = np.random.default_rng(seed)
        a = rand_param(rng, 5)
        b = rand_param(rng, 5)

        def f():
            return ((a * b + a - b) * 0.5 + (a / 2.0) ** 2).sum()

        assert finite_difference_check(f, [a, b]) < 1e-6

    @pytest.mark.parametrize("seed", range(10))
    def test_softmax(self, seed):
        rng = np.random.default_rng(seed)
        x = rand_param(rng, 4, 5)
        w = rng.standard_normal((4, 5))
        err = finite_difference_check(lambda: (x.softmax() * w).sum(), [x])
        assert err < 1e-5

    @pytest.mark.parametrize("seed", range(10))
    def test_layer_norm(self, seed):
        rng = np.random.default_rng(seed)
        x = rand_param(rng, 3, 6)
        gain = rand_param(rng, 6)
        bias = rand_param(rng, 6)
        w = rng.standard_normal((3, 6))

        def f():
            return (layer_norm(x, gain, bias) * w).sum()

        assert finite_difference_check(f, [x, gain, bias]) < 1e-5

    @pytest.mark.parametrize("seed", range(10))
    def test_composite_graph(self, seed):
        # Weighted sum after softmax: a plain sum would be constant (rows of
        # softmax sum to 1) and could not exercise the chain at all.
        rng = np.random.default_rng(seed)
        a = rand_param(rng, 3, 4)
        b = rand_param(rng, 4, 4)
        w = rng.standard_normal((3, 4))

        def f():
            return ((a @ b).relu().softmax() * w).sum()

        assert finite_difference_check(f, [a, b]) < 1e-4

    @pytest.mark.parametrize("seed", range(10))
    def test_activations_and_reductions(self, seed):
        rng = np.random.default_rng(seed)
        x = rand_param(rng, 4, 3)

        def f():
            y = x.sigmoid() + x.tanh() + x.abs() * 0.1
            return y.mean(axis=0).sum() + y.sum(axis=1).mean()

        assert finite_difference_check(f, [x]) < 1e-5

    @pytest.mark.parametrize("seed", range(10))
    def test_shape_ops(self, seed):
        rng = np.random.default_rng(seed)
        x = rand_param(rng, 2, 3, 4)
        w = rng.standard_normal((4, 3, 2))

        def f():
            return (x.transpose(2, 1, 0) * w).sum() + (x.reshape(6, 4)[1:4, :2] ** 2).sum()

        assert finite_difference_check(f, [x]) < 1e-5

    @pytest.mark.parametrize("seed", range(10))
    def test_concat_where(self, seed):
        rng = np.random.default_rng(seed)
        a = rand_param(rng, 2, 3)
        b = rand_param(rng, 2, 3)
        cond = rng.random((4, 3)) > 0.5

        def f():
            cat = concat([a, b], axis=0)
            return where(cond, cat, cat * 2.0).sum()

        assert finite_difference_check(f, [a, b]) < 1e-6

    def test_linear_function_is_exact(self):
        rng = np.random.default_rng(0)
        x = rand_param(rng, 4)
        w = rng.standard_normal(4)
        assert finite_difference_check(lambda: (x * w).sum(), [x]) < 1e-9

    def test_quadratic_function(self):
        rng = np.random.default_rng(1)
        x = rand_param(rng, 4)
        assert finite_difference_check(lambda: (x * x).sum(), [x], step=1e-5) < 1e-7

    def test_masked_where_grad_exactly_zero(self):
        x = Parameter(np.array([1.0, 2.0, 3.0]))
        cond = np.array([True, False, True])
        where(cond, x, Tensor(np.zeros(3))).sum().backward()
        assert x.grad[1] == 0.0


class TestModule:
    def test_named_parameters_unique_paths(self):
        class Inner(Module):
            def __init__(self):
                super().__init__()
                self.w = Parameter(np.zeros((2, 2)))
                self.b = Parameter(np.zeros(2), decay=False)

        class Outer(Module):
            def __init__(self):
                super().__init__()
                self.layers = [Inner(), Inner()]
                self.head = Inner()

        names = [n for n, _ in Outer().named_parameters()]
        assert len(names) == len(set(names)) == 6
        assert "layers.0.w" in names and "head.b" in names

    def test_train_eval_propagates(self):
        class Leaf(Module):
            pass

        class Root(Module):
            def __init__(self):
                super().__init__()
                self.leaf = Leaf()

        root = Root().eval()
        assert not root.leaf.training
        root.train()
        assert root.leaf.training

    def test_forward_determinism_with_seeded_dropout(self):
        x = Tensor(np.arange(12.0).reshape(3, 4), requires_grad=True)

        def run(seed):
            rng = np.random.default_rng(seed)
            return dropout((x @ np.eye(4)).relu(), 0.5, rng, train=True).data

        np.testing.assert_array_equal(run(7), run(7))
