import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from birvo import tensor as T
from birvo.errors import NumericError, ShapeError
from birvo.tensor import Tensor, backward, finite_difference_check


def conv2d_reference(x, w, stride, padding):
    """Direct-summation convolution oracle, deliberately loop-based and
    independent of the im2col implementation."""
    t, c, h, wid = x.shape
    oc, _, kh, kw = w.shape
    oh = (h + 2 * padding - kh) // stride + 1
    ow = (wid + 2 * padding - kw) // stride + 1
    xp = np.pad(x, ((0, 0), (0, 0), (padding, padding), (padding, padding)))
    out = np.zeros((t, oc, oh, ow))
    for n in range(t):
        for o in range(oc):
            for i in range(oh):
                for j in range(ow):
                    patch = xp[n, :, i * stride : i * stride + kh, j * stride : j * stride + kw]
                    out[n, o, i, j] = np.sum(patch * w[o])
    return out


class TestForwardValues:
    def test_matmul_1x2_2x1(self):
        out = T.matmul(Tensor([[1.0, 2.0]]), Tensor([[3.0], [4.0]]))
        np.testing.assert_allclose(out.data, [[11.0]])

    def test_leaky_relu_definition(self):
        out = T.leaky_relu(Tensor([-1.0, 0.0, 2.0]), slope=0.1)
        np.testing.assert_allclose(out.data, [-0.1, 0.0, 2.0])

    def test_conv2d_all_ones(self):
        # 5x5 ones image, 3x3 ones kernel, stride 1, pad 0 -> 3x3 of 9s
        x = Tensor(np.ones((1, 1, 5, 5)))
        w = Tensor(np.ones((1, 1, 3, 3)))
        out = T.conv2d(x, w, stride=1, padding=0)
        assert out.data.shape == (1, 1, 3, 3)
        np.testing.assert_allclose(out.data, 9.0)

    def test_conv2d_matches_reference(self):
        rng = np.random.default_rng(3)
        x = rng.normal(size=(2, 3, 7, 9))
        w = rng.normal(size=(4, 3, 3, 3))
        got = T.conv2d(Tensor(x), Tensor(w), stride=2, padding=1).data
        want = conv2d_reference(x, w, stride=2, padding=1)
        np.testing.assert_allclose(got, want, rtol=1e-12)

    def test_sigmoid_tanh_values(self):
        np.testing.assert_allclose(T.sigmoid(Tensor([0.0])).data, [0.5])
        np.testing.assert_allclose(T.tanh(Tensor([0.0])).data, [0.0])

    def test_concat_and_slice(self):
        a = Tensor([[1.0, 2.0], [3.0, 4.0]])
        b = Tensor([[5.0], [6.0]])
        cat = T.concat_channels([a, b])
        np.testing.assert_allclose(cat.data, [[1, 2, 5], [3, 4, 6]])
        row = T.slice_time(cat, 1)
        np.testing.assert_allclose(row.data, [[3, 4, 6]])

    def test_add_bias_broadcast(self):
        x = Tensor(np.ones((2, 3)))
        b = Tensor([1.0, 2.0, 3.0])
        np.testing.assert_allclose((x + b).data, [[2, 3, 4], [2, 3, 4]])


class TestShapeErrors:
    def test_matmul_inner_mismatch(self):
        with pytest.raises(ShapeError, match="matmul"):
            T.matmul(Tensor(np.ones((2, 3))), Tensor(np.ones((2, 3))))

    def test_conv2d_channel_mismatch(self):
        with pytest.raises(ShapeError, match="channels"):
            T.conv2d(Tensor(np.ones((1, 2, 5, 5))), Tensor(np.ones((1, 3, 3, 3))))

    def test_conv2d_collapse(self):
        with pytest.raises(ShapeError, match="collapses"):
            T.conv2d(Tensor(np.ones((1, 1, 2, 2))), Tensor(np.ones((1, 1, 3, 3))))

    def test_mul_requires_same_shape(self):
        with pytest.raises(ShapeError, match="mul"):
            T.mul(Tensor(np.ones((2, 3))), Tensor(np.ones(3)))

    def test_concat_off_axis_mismatch(self):
        with pytest.raises(ShapeError, match="concat"):
            T.concat([Tensor(np.ones((2, 2))), Tensor(np.ones((3, 2)))], axis=1)

    def test_backward_needs_scalar(self):
        x = Tensor(np.ones(3), requires_grad=True)
        with pytest.raises(ShapeError, match="scalar"):
            backward(T.square(x))

    def test_checked_mode_flags_nonfinite(self):
        T.set_checked(True)
        try:
            with np.errstate(over="ignore"):
                with pytest.raises(NumericError, match="scalar_mul"):
                    T.scalar_mul(Tensor([1e308]), 1e308)
        finally:
            T.set_checked(False)


class TestBackward:
    def test_sum_of_squares(self):
        x = Tensor([1.0, 2.0, 3.0], requires_grad=True)
        backward(T.tsum(T.square(x)))
        np.testing.assert_allclose(x.grad, [2.0, 4.0, 6.0])

    def test_mean_gradient(self):
        x = Tensor(np.arange(4.0), requires_grad=True)
        backward(T.tmean(x))
        np.testing.assert_allclose(x.grad, [0.25] * 4)

    def test_accumulation_until_zeroed(self):
        x = Tensor([1.0, 2.0], requires_grad=True)
        for _ in range(2):
            backward(T.tsum(T.square(x)))
        np.testing.assert_allclose(x.grad, [4.0, 8.0])
        x.zero_grad()
        backward(T.tsum(T.square(x)))
        np.testing.assert_allclose(x.grad, [2.0, 4.0])

    def test_zero_then_backward_idempotent(self):
        rng = np.random.default_rng(0)
        x = Tensor(rng.normal(size=(3, 4)), requires_grad=True)

        def run():
            x.zero_grad()
            backward(T.tsum(T.sigmoid(T.square(x))))
            return x.grad.copy()

        np.testing.assert_array_equal(run(), run())

    def test_detached_leaf_gets_no_grad(self):
        x = Tensor([1.0], requires_grad=True)
        d = Tensor([2.0])  # no grad requested
        backward(T.tsum(x * d))
        assert d.grad is None
        np.testing.assert_allclose(x.grad, [2.0])

    def test_topo_order_parents_first(self):
        x = Tensor([1.0], requires_grad=True)
        y = T.square(x)
        z = y + y
        loss = T.tsum(z * y)
        order = T.topo_order(loss)
        seen = set()
        for node in order:
            for parent in node._parents:
                if parent.requires_grad:
                    assert id(parent) in seen
            seen.add(id(node))
        # every node appears exactly once
        assert len({id(n) for n in order}) == len(order)


def _fd(f, x, **kw):
    return finite_difference_check(f, x, step=1e-5, **kw)


class TestGradientOracle:
    """Every primitive's backward rule against central finite differences."""

    def setup_method(self):
        self.rng = np.random.default_rng(42)

    def leaf(self, *shape):
        return Tensor(self.rng.uniform(-1, 1, size=shape), requires_grad=True)

    def test_add_sub_mul(self):
        a, b = self.leaf(3, 4), self.leaf(3, 4)
        assert _fd(lambda: T.tsum(T.square(a + b)), [a, b]) < 1e-6
        assert _fd(lambda: T.tsum(T.square(a - b)), [a, b]) < 1e-6
        assert _fd(lambda: T.tsum(T.square(a * b)), [a, b]) < 1e-6

    def test_bias_broadcast_add(self):
        x, b = self.leaf(4, 3), self.leaf(3)
        assert _fd(lambda: T.tsum(T.square(x + b)), [x, b]) < 1e-6

    def test_conv_bias_broadcast(self):
        x, b = self.leaf(2, 3, 4, 4), self.leaf(3)
        assert _fd(lambda: T.tsum(T.square(x + T.reshape(b, (3, 1, 1)))), [x, b]) < 1e-6

    def test_scalar_mul(self):
        x = self.leaf(5)
        assert _fd(lambda: T.tsum(T.square(T.scalar_mul(x, -2.5))), x) < 1e-6

    def test_matmul(self):
        a, b = self.leaf(3, 4), self.leaf(4, 2)
        assert _fd(lambda: T.tsum(T.square(T.matmul(a, b))), [a, b]) < 1e-6

    def test_transpose_reshape(self):
        x = self.leaf(3, 4)
        assert _fd(lambda: T.tsum(T.square(T.transpose(x))), x) < 1e-6
        assert _fd(lambda: T.tsum(T.square(T.reshape(x, (2, 6)))), x) < 1e-6

    def test_concat_slice(self):
        a, b = self.leaf(2, 3), self.leaf(2, 2)
        assert _fd(lambda: T.tsum(T.square(T.concat_channels([a, b]))), [a, b]) < 1e-6
        x = self.leaf(5, 3)
        assert _fd(lambda: T.tsum(T.square(T.slice_time(x, 1, 4))), x) < 1e-6

    def test_activations(self):
        x = self.leaf(3, 3)
        assert _fd(lambda: T.tsum(T.sigmoid(x)), x) < 1e-6
        assert _fd(lambda: T.tsum(T.tanh(x)), x) < 1e-6
        assert _fd(lambda: T.tsum(T.square(T.leaky_relu(x, 0.1))), x) < 1e-6

    def test_dropout_mask_apply(self):
        x = self.leaf(4, 4)
        mask = (self.rng.random((4, 4)) > 0.4) * 2.0
        assert _fd(lambda: T.tsum(T.square(T.dropout_mask_apply(x, mask))), x) < 1e-6

    def test_sum_mean_square(self):
        x = self.leaf(6)
        assert _fd(lambda: T.square(T.tsum(x)), x) < 1e-6
        assert _fd(lambda: T.square(T.tmean(x)), x) < 1e-6

    def test_conv2d(self):
        x, w = self.leaf(2, 2, 5, 6), self.leaf(3, 2, 3, 3)
        assert _fd(lambda: T.tsum(T.square(T.conv2d(x, w, stride=2, padding=1))), [x, w]) < 1e-6

    def test_sigmoid_at_zero_quarter(self):
        x = Tensor(np.zeros(4), requires_grad=True)
        backward(T.tsum(T.sigmoid(x)))
        np.testing.assert_allclose(x.grad, 0.25)
        assert _fd(lambda: T.tsum(T.sigmoid(x)), x) < 1e-6

    def test_composite_graph(self):
        a, b = self.leaf(3, 3), self.leaf(3, 3)
        c = self.leaf(3)

        def f():
            z = T.matmul(T.tanh(a * b), T.transpose(b)) + c
            return T.tmean(T.square(T.sigmoid(z)))

        assert _fd(f, [a, b, c]) < 1e-4


class TestProperties:
    @settings(max_examples=40, deadline=None)
    @given(
        h=st.integers(3, 12), w=st.integers(3, 12), k=st.integers(1, 4),
        stride=st.integers(1, 3), pad=st.integers(0, 2),
        cin=st.integers(1, 3), cout=st.integers(1, 3), data=st.data(),
    )
    def test_conv_output_size_and_values(self, h, w, k, stride, pad, cin, cout, data):
        oh = (h + 2 * pad - k) // stride + 1
        ow = (w + 2 * pad - k) // stride + 1
        if oh < 1 or ow < 1:
            return
        seed = data.draw(st.integers(0, 2**31))
        rng = np.random.default_rng(seed)
        x = rng.normal(size=(1, cin, h, w))
        wk = rng.normal(size=(cout, cin, k, k))
        out = T.conv2d(Tensor(x), Tensor(wk), stride=stride, padding=pad).data
        assert out.shape == (1, cout, oh, ow)
        np.testing.assert_allclose(out, conv2d_reference(x, wk, stride, pad), rtol=1e-12, atol=1e-12)

    @settings(max_examples=25, deadline=None)
    @given(seed=st.integers(0, 2**31), scale=st.floats(-3.0, 3.0))
    def test_linear_primitives_scale(self, seed, scale):
        rng = np.random.default_rng(seed)
        x = rng.normal(size=(1, 2, 6, 6))
        w = rng.normal(size=(3, 2, 3, 3))
        m = rng.normal(size=(6, 4))
        conv_scaled = T.conv2d(Tensor(x * scale), Tensor(w), 1, 1).data
        np.testing.assert_allclose(conv_scaled, scale * T.conv2d(Tensor(x), Tensor(w), 1, 1).data,
                                   rtol=1e-12, atol=1e-12)
        mat = rng.normal(size=(4, 6))
        np.testing.assert_allclose(
            T.matmul(Tensor(mat * scale), Tensor(m)).data,
            scale * T.matmul(Tensor(mat), Tensor(m)).data,
            rtol=1e-12, atol=1e-12,
        )


class TestFiniteDifferenceCheck:
    def test_sum_of_squares_discrepancy(self):
        rng = np.random.default_rng(7)
        x = Tensor(rng.uniform(-1, 1, size=3), requires_grad=True)
        assert finite_difference_check(lambda: T.tsum(T.square(x)), x) < 1e-6

    def test_sampled_subset(self):
        rng = np.random.default_rng(9)
        x = Tensor(rng.uniform(-1, 1, size=(10, 10)), requires_grad=True)
        d = finite_difference_check(lambda: T.tmean(T.square(x)), x, sample=7)
        assert d < 1e-6
