import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from alignembed import tensor as T


def naive_matmul(a, b):
    m, k = len(a), len(a[0])
    n = len(b[0])
    out = [[0.0] * n for _ in range(m)]
    for i in range(m):
        for j in range(n):
            acc = 0.0
            for t in range(k):
                acc += a[i][t] * b[t][j]
            out[i][j] = acc
    return out


def naive_pool(h, mask):
    out = []
    for b in range(len(h)):
        total = [0.0] * len(h[b][0])
        count = 0.0
        for t in range(len(h[b])):
            if mask[b][t]:
                count += 1.0
                for j in range(len(total)):
                    total[j] += h[b][t][j]
        out.append([v / count for v in total])
    return out


def naive_ce(s, targets):
    total = 0.0
    for row, tgt in zip(s, targets):
        exps = [math.exp(v) for v in row]
        total += -math.log(exps[tgt] / sum(exps))
    return total / len(s)


def run(op, *arrays):
    g = T.Graph()
    return op(*(g.param(a) for a in arrays)).values


class TestMatmul:
    def test_identity(self):
        out = run(T.matmul, np.eye(2), np.array([[3.0, 4], [5, 6]]))
        np.testing.assert_array_equal(out, [[3, 4], [5, 6]])

    def test_zeros(self):
        out = run(T.matmul, np.zeros((2, 3)), np.random.default_rng(0).normal(size=(3, 2)))
        np.testing.assert_array_equal(out, np.zeros((2, 2)))

    def test_against_triple_loop(self):
        a = [[1.0, 2.0], [3.0, 4.0]]
        b = [[5.0, 6.0], [7.0, 8.0]]
        np.testing.assert_array_equal(run(T.matmul, np.array(a), np.array(b)), naive_matmul(a, b))

    def test_random_against_triple_loop(self):
        rng = np.random.default_rng(1)
        for _ in range(10):
            a = rng.uniform(-1, 1, size=(4, 5))
            b = rng.uniform(-1, 1, size=(5, 3))
            want = np.array(naive_matmul(a.tolist(), b.tolist()))
            got = run(T.matmul, a, b)
            assert np.max(np.abs(got - want) / np.maximum(1e-300, np.abs(want))) < 1e-12

    def test_shape_error_names_shapes(self):
        with pytest.raises(T.ShapeError, match=r"\(2, 3\).*\(2, 2\)"):
            run(T.matmul, np.zeros((2, 3)), np.zeros((2, 2)))


class TestMeanPool:
    def test_all_ones_is_mean(self):
        h = np.arange(9, dtype=float).reshape(1, 3, 3)
        out = run(lambda x: T.mean_pool_masked(x, np.ones((1, 3))), h)
        np.testing.assert_allclose(out, h.mean(axis=1))

    def test_single_token(self):
        h = np.random.default_rng(0).normal(size=(1, 3, 4))
        out = run(lambda x: T.mean_pool_masked(x, np.array([[1, 0, 0]])), h)
        np.testing.assert_array_equal(out[0], h[0, 0])

    def test_mixed_mask_against_loops(self):
        rng = np.random.default_rng(2)
        h = rng.normal(size=(2, 4, 3))
        mask = np.array([[1, 1, 0, 0], [1, 0, 1, 1]])
        out = run(lambda x: T.mean_pool_masked(x, mask), h)
        np.testing.assert_allclose(out, naive_pool(h.tolist(), mask.tolist()), rtol=0, atol=1e-15)

    def test_degenerate_row(self):
        with pytest.raises(T.DegenerateMaskError):
            run(lambda x: T.mean_pool_masked(x, np.array([[1, 1], [0, 0]])), np.ones((2, 2, 3)))


class TestNormalize:
    def test_345(self):
        np.testing.assert_allclose(run(T.l2_normalize_rows, np.array([[3.0, 4.0]])), [[0.6, 0.8]])

    def test_unit_row_unchanged(self):
        row = np.array([[0.0, 1.0, 0.0]])
        np.testing.assert_array_equal(run(T.l2_normalize_rows, row), row)

    def test_zero_row(self):
        np.testing.assert_array_equal(run(T.l2_normalize_rows, np.zeros((1, 3))), np.zeros((1, 3)))

    def test_zero_row_gradient_finite(self):
        g = T.Graph()
        x = g.param(np.zeros((2, 3)))
        T.backward(g, T.sum_all(T.l2_normalize_rows(x)))
        assert np.all(np.isfinite(x.grad))


class TestCrossEntropy:
    def test_uniform_is_log_b(self):
        out = run(lambda s: T.softmax_cross_entropy_rows(s, range(4)), np.full((4, 4), 3.7))
        assert abs(float(out) - math.log(4)) < 1e-12

    def test_single_class(self):
        assert float(run(lambda s: T.softmax_cross_entropy_rows(s, [0]), np.array([[5.0]]))) == 0.0

    def test_against_naive(self):
        s = [[2.0, 0.0], [0.0, 2.0]]
        got = float(run(lambda x: T.softmax_cross_entropy_rows(x, [0, 1]), np.array(s)))
        assert abs(got - naive_ce(s, [0, 1])) < 1e-14

    def test_large_magnitude_finite(self):
        s = np.array([[1e4, -1e4, 0.0], [-1e4, 1e4, 5.0], [0.0, 0.0, -1e4]])
        out = float(run(lambda x: T.softmax_cross_entropy_rows(x, [0, 1, 2]), s))
        assert math.isfinite(out)

    def test_bad_target(self):
        with pytest.raises(IndexError):
            run(lambda s: T.softmax_cross_entropy_rows(s, [0, 2]), np.zeros((2, 2)))


class TestSoftmax:
    @settings(max_examples=50, deadline=None)
    @given(st.lists(st.floats(-1e4, 1e4), min_size=1, max_size=8))
    def test_rows_sum_to_one(self, row):
        y = run(lambda x: T.softmax(x), np.array([row]))
        assert np.all(np.isfinite(y))
        assert abs(y.sum() - 1.0) < 1e-12


class TestBackward:
    def test_sum_gives_ones(self):
        g = T.Graph()
        x = g.param(np.random.default_rng(0).normal(size=(2, 3, 4)))
        T.backward(g, T.sum_all(x))
        np.testing.assert_array_equal(x.grad, np.ones((2, 3, 4)))

    def test_product_rule(self):
        rng = np.random.default_rng(1)
        g = T.Graph()
        x, y = g.param(rng.normal(size=5)), g.param(rng.normal(size=5))
        T.backward(g, T.sum_all(x * y))
        np.testing.assert_array_equal(x.grad, y.values)
        np.testing.assert_array_equal(y.grad, x.values)

    def test_non_scalar_loss(self):
        g = T.Graph()
        x = g.param(np.ones(3))
        with pytest.raises(T.GraphError):
            T.backward(g, x)

    def test_foreign_loss(self):
        g1, g2 = T.Graph(), T.Graph()
        loss = T.sum_all(g2.param(np.ones(3)))
        with pytest.raises(T.GraphError):
            T.backward(g1, loss)

    def test_records_topological(self):
        g = T.Graph()
        x = g.param(np.ones((2, 2)))
        T.sum_all(T.matmul(x, x) + x)
        for rec in g.records:
            assert all(i < rec.output for i in rec.inputs)

    def test_shared_input_accumulates(self):
        g = T.Graph()
        x = g.param(np.array([1.0, 2.0]))
        T.backward(g, T.sum_all(x * x))
        np.testing.assert_array_equal(x.grad, [2.0, 4.0])

    def test_deterministic_forward(self):
        rng = np.random.default_rng(3)
        a, b = rng.normal(size=(6, 5)), rng.normal(size=(5, 4))
        first = run(lambda x, y: T.softmax(T.matmul(x, y)), a, b)
        second = run(lambda x, y: T.softmax(T.matmul(x, y)), a, b)
        assert first.tobytes() == second.tobytes()


class TestGradCheck:
    def test_quadratic(self):
        err = T.grad_check(lambda g, x: T.sum_all(x * x), [1.0, 2.0])
        assert err < 1e-8

    def test_quadratic_analytic(self):
        g = T.Graph()
        x = g.param([1.0, 2.0])
        T.backward(g, T.sum_all(x * x))
        np.testing.assert_allclose(x.grad, [2.0, 4.0])

    def test_cross_entropy(self):
        s = np.random.default_rng(4).normal(size=(3, 3))
        assert T.grad_check(lambda g, x: T.softmax_cross_entropy_rows(x, [0, 1, 2]), s) < 1e-4

    def test_non_finite_probe(self):
        def f(g, x):
            return T.sum_all(T.mul(x, g.constant(np.inf)))
        with pytest.raises(T.NonFiniteError):
            T.grad_check(f, [1.0])

    def test_bad_step(self):
        with pytest.raises(ValueError):
            T.grad_check(lambda g, x: T.sum_all(x), [1.0], h=0.0)


def _rand(rng, *shape):
    return rng.uniform(-1, 1, size=shape)


def _weighted(build, weight):
    """Scalar = sum(build(x) * weight): exercises every output element."""
    return lambda g, x: T.sum_all(build(g, x) * g.constant(weight))


def _cases(rng):
    c = {name: _rand(rng, *shape) for name, shape in
         dict(a=(3, 4), b=(2, 3), m=(3, 2), w=(4, 2), bm=(2, 4, 3), bw=(2, 4, 2), bb=(2, 3, 2),
              bo=(2, 2, 2), t=(3, 2, 2), e=(2, 3, 3), v5=(5,), v4=(4,), v4b=(4,), x34=(3, 4),
              ln=(2, 3, 4), p=(2, 4)).items()}
    mask = np.array([[1, 1, 0], [1, 0, 1]])
    ids = np.array([[0, 2, 2], [1, 0, 3]])
    return {
        "add_broadcast": (_weighted(lambda g, x: T.add(g.constant(c["a"]), x), c["a"]), (4,)),
        "sub": (_weighted(lambda g, x: T.sub(g.constant(c["b"]), x), c["b"]), (2, 3)),
        "mul": (_weighted(lambda g, x: x * g.constant(c["b"]), c["b"]), (2, 3)),
        "scale": (lambda g, x: T.sum_all(T.scale(x, 2.5) * x), (3,)),
        "mean": (lambda g, x: T.mean_all(x * x), (2, 3)),
        "matmul_left": (_weighted(lambda g, x: T.matmul(x, g.constant(c["m"])), c["w"]), (4, 3)),
        "matmul_right": (_weighted(lambda g, x: T.matmul(g.constant(c["bm"]), x), c["bw"]), (3, 2)),
        "matmul_batched": (_weighted(lambda g, x: T.matmul(x, g.constant(c["bb"])), c["bo"]),
                           (2, 2, 3)),
        "reshape_transpose": (_weighted(
            lambda g, x: T.transpose(T.reshape(x, (2, 3, 2)), (1, 0, 2)), c["t"]), (4, 3)),
        "embedding": (_weighted(lambda g, x: T.embedding(x, ids), c["e"]), (4, 3)),
        "softmax": (_weighted(lambda g, x: T.softmax(x), c["a"]), (3, 4)),
        "gelu": (_weighted(lambda g, x: T.gelu(x), c["v5"]), (5,)),
        "layer_norm_x": (_weighted(lambda g, x: T.layer_norm(
            x, g.constant(c["v4"] + 1.5), g.constant(c["v4b"])), c["ln"]), (2, 3, 4)),
        "layer_norm_gain": (_weighted(lambda g, x: T.layer_norm(
            g.constant(c["x34"]), x, g.constant(c["v4b"])), c["a"]), (4,)),
        "layer_norm_bias": (_weighted(lambda g, x: T.layer_norm(
            g.constant(c["x34"]), g.constant(c["v4"]), x), c["a"]), (4,)),
        "mean_pool": (_weighted(lambda g, x: T.mean_pool_masked(x, mask), c["p"]), (2, 3, 4)),
        "l2_normalize": (_weighted(lambda g, x: T.l2_normalize_rows(x), c["a"]), (3, 4)),
        "cross_entropy": (lambda g, x: T.softmax_cross_entropy_rows(x, [2, 0, 1]), (3, 3)),
    }


OP_NAMES = sorted(_cases(np.random.default_rng(0)))


@pytest.mark.parametrize("case", OP_NAMES)
def test_op_gradients_at_random_points(case):
    rng = np.random.default_rng(OP_NAMES.index(case))
    f, shape = _cases(rng)[case]
    for _ in range(10):
        assert T.grad_check(f, rng.uniform(-1, 1, size=shape), h=1e-5) < 1e-4
