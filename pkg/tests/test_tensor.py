import numpy as np
import pytest

from segprobe import tensor
from segprobe.errors import InvalidArgumentError, NumericsError


# Oracle: per-pixel gather-and-blend evaluation of endpoint-aligned bilinear
# interpolation. Written against the documented convention, independently of
# the matrix-product implementation under test. Frozen; do not "fix" this to
# match the implementation.
def naive_resize(grid, out_h, out_w):
    in_h, in_w, channels = grid.shape
    out = np.zeros((out_h, out_w, channels), dtype=np.float64)
    for i in range(out_h):
        sy = 0.0 if out_h == 1 else i * (in_h - 1) / (out_h - 1)
        y0 = int(np.floor(sy))
        y1 = min(y0 + 1, in_h - 1)
        fy = sy - y0
        for j in range(out_w):
            sx = 0.0 if out_w == 1 else j * (in_w - 1) / (out_w - 1)
            x0 = int(np.floor(sx))
            x1 = min(x0 + 1, in_w - 1)
            fx = sx - x0
            out[i, j] = (
                (1 - fy) * (1 - fx) * grid[y0, x0]
                + (1 - fy) * fx * grid[y0, x1]
                + fy * (1 - fx) * grid[y1, x0]
                + fy * fx * grid[y1, x1]
            )
    return out


class TestBilinearResize:
    def test_constant_1x1_to_4x4(self):
        out = tensor.bilinear_resize(np.full((1, 1, 1), 5.0), 4, 4)
        assert out.shape == (4, 4, 1)
        np.testing.assert_array_equal(out, np.full((4, 4, 1), 5.0))

    def test_2x2_to_3x3_hand_values(self):
        grid = np.array([[0.0, 1.0], [2.0, 3.0]]).reshape(2, 2, 1)
        expected = np.array([[0.0, 0.5, 1.0], [1.0, 1.5, 2.0], [2.0, 2.5, 3.0]])
        out = tensor.bilinear_resize(grid, 3, 3)
        np.testing.assert_allclose(out[..., 0], expected, rtol=0, atol=1e-12)

    def test_identity_resize_bitwise(self):
        rng = np.random.default_rng(0)
        grid = rng.normal(size=(5, 7, 3)).astype(np.float32)
        out = tensor.bilinear_resize(grid, 5, 7)
        assert out.tobytes() == grid.tobytes()

    @pytest.mark.parametrize("in_shape,out_shape", [
        ((1, 1), (4, 4)), ((2, 2), (3, 3)), ((2, 3), (7, 5)),
        ((4, 4), (448, 448)), ((5, 7), (1, 1)), ((3, 1), (6, 9)),
        ((16, 16), (224, 224)),
    ])
    def test_matches_naive_oracle(self, in_shape, out_shape):
        rng = np.random.default_rng(42)
        grid = rng.normal(size=(*in_shape, 2))
        out = tensor.bilinear_resize(grid, *out_shape)
        np.testing.assert_allclose(out, naive_resize(grid, *out_shape), rtol=1e-12, atol=1e-12)

    def test_linearity(self):
        rng = np.random.default_rng(1)
        t1 = rng.normal(size=(3, 4, 2))
        t2 = rng.normal(size=(3, 4, 2))
        a, b = 2.5, -0.75
        lhs = tensor.bilinear_resize(a * t1 + b * t2, 10, 9)
        rhs = a * tensor.bilinear_resize(t1, 10, 9) + b * tensor.bilinear_resize(t2, 10, 9)
        np.testing.assert_allclose(lhs, rhs, rtol=1e-10, atol=1e-12)

    def test_output_within_input_range(self):
        rng = np.random.default_rng(2)
        grid = rng.normal(size=(4, 5, 1))
        out = tensor.bilinear_resize(grid, 33, 17)
        assert out.min() >= grid.min() - 1e-12
        assert out.max() <= grid.max() + 1e-12

    def test_exact_at_corners(self):
        rng = np.random.default_rng(3)
        grid = rng.normal(size=(3, 3, 1))
        out = tensor.bilinear_resize(grid, 9, 11)
        for oy, iy in ((0, 0), (8, 2)):
            for ox, ix in ((0, 0), (10, 2)):
                assert out[oy, ox, 0] == pytest.approx(grid[iy, ix, 0], abs=1e-12)

    def test_rejects_bad_sizes(self):
        grid = np.zeros((2, 2, 1))
        with pytest.raises(InvalidArgumentError):
            tensor.bilinear_resize(grid, 0, 3)
        with pytest.raises(InvalidArgumentError):
            tensor.bilinear_resize(grid, 3, -1)
        with pytest.raises(InvalidArgumentError):
            tensor.bilinear_resize(np.zeros((2, 2)), 3, 3)

    def test_rejects_nonfinite(self):
        grid = np.zeros((2, 2, 1))
        grid[0, 0, 0] = np.nan
        with pytest.raises(NumericsError):
            tensor.bilinear_resize(grid, 3, 3)


class TestAdjoint:
    def test_dot_product_identity(self):
        # <g, resize(t)> == <adjoint(g), t>: the defining property of the
        # transpose, checked on random instances.
        rng = np.random.default_rng(7)
        for in_shape, out_shape in [((2, 2), (5, 5)), ((3, 5), (11, 7)), ((1, 4), (6, 6))]:
            t = rng.normal(size=(*in_shape, 3))
            g = rng.normal(size=(*out_shape, 3))
            lhs = float((g * tensor.bilinear_resize(t, *out_shape)).sum())
            rhs = float((tensor.bilinear_resize_adjoint(g, *in_shape) * t).sum())
            assert lhs == pytest.approx(rhs, rel=1e-10)

    def test_shapes(self):
        g = np.zeros((10, 12, 4))
        out = tensor.bilinear_resize_adjoint(g, 3, 5)
        assert out.shape == (3, 5, 4)


class TestSoftmax:
    def test_uniform(self):
        np.testing.assert_allclose(tensor.softmax(np.zeros(3)), np.full(3, 1 / 3), atol=1e-12)

    def test_ln2_closed_form(self):
        out = tensor.softmax(np.array([np.log(2.0), 0.0]))
        np.testing.assert_allclose(out, [2 / 3, 1 / 3], atol=1e-12)

    def test_sums_to_one_and_positive(self):
        rng = np.random.default_rng(4)
        v = rng.normal(scale=50, size=(6, 9))
        out = tensor.softmax(v, axis=-1)
        assert np.all(out > 0)
        np.testing.assert_allclose(out.sum(axis=-1), 1.0, atol=1e-6)

    def test_shift_invariance(self):
        rng = np.random.default_rng(5)
        v = rng.normal(size=7)
        np.testing.assert_allclose(tensor.softmax(v), tensor.softmax(v + 123.456), atol=1e-12)

    def test_argmax_preserved(self):
        rng = np.random.default_rng(6)
        v = rng.normal(size=(20, 5))
        assert np.array_equal(np.argmax(tensor.softmax(v, axis=-1), axis=-1),
                              np.argmax(v, axis=-1))

    def test_extreme_values_stable(self):
        out = tensor.softmax(np.array([1000.0, 0.0, -1000.0]))
        assert np.all(np.isfinite(out))
        assert out[0] == pytest.approx(1.0)

    def test_log_softmax_consistent(self):
        rng = np.random.default_rng(8)
        v = rng.normal(size=(4, 6))
        np.testing.assert_allclose(np.exp(tensor.log_softmax(v, axis=-1)),
                                   tensor.softmax(v, axis=-1), atol=1e-12)

    def test_log_sigmoid_stable(self):
        x = np.array([-800.0, 0.0, 800.0])
        out = tensor.log_sigmoid(x)
        assert np.all(np.isfinite(out))
        assert out[1] == pytest.approx(-np.log(2.0))
        assert out[2] == pytest.approx(0.0, abs=1e-12)


class TestDtypeMode:
    def test_default_is_float32(self):
        assert tensor.default_dtype() == np.float32

    def test_context_switch(self):
        with tensor.using_dtype(np.float64):
            assert tensor.default_dtype() == np.float64
            out = tensor.bilinear_resize(np.zeros((2, 2, 1), dtype=np.float64), 4, 4)
            assert out.dtype == np.float64
        assert tensor.default_dtype() == np.float32

    def test_rejects_other_dtypes(self):
        with pytest.raises(InvalidArgumentError):
            tensor.set_default_dtype(np.int32)
