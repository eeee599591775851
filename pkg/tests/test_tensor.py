import numpy as np
import pytest

from adafisher.errors import DimensionError, InputError
from adafisher.tensor import (Rng, as_tensor, im2col, im2col_batch, kron_diag,
                              matmul, rng_normal)


def naive_matmul(a, b):
    m, k = a.shape
    k2, n = b.shape
    out = np.zeros((m, n))
    for i in range(m):
        for j in range(n):
            acc = 0.0
            for p in range(k):
                acc += a[i, p] * b[p, j]
            out[i, j] = acc
    return out


class TestMatmul:
    def test_identity(self):
        b = np.array([[5.0, 6.0], [7.0, 8.0]])
        assert np.array_equal(matmul(np.eye(2), b), b)

    def test_forced_arithmetic(self):
        a = np.array([[1.0, 2.0], [3.0, 4.0]])
        b = np.array([[5.0, 6.0], [7.0, 8.0]])
        assert np.array_equal(matmul(a, b), [[19.0, 22.0], [43.0, 50.0]])

    def test_against_triple_loop(self):
        rng = Rng(11)
        a, b = rng.normal((8, 8)), rng.normal((8, 8))
        assert np.max(np.abs(matmul(a, b) - naive_matmul(a, b))) < 1e-12

    def test_shape_mismatch(self):
        with pytest.raises(DimensionError):
            matmul(np.zeros((2, 3)), np.zeros((2, 3)))

    def test_associativity(self):
        rng = Rng(7)
        for _ in range(5):
            a, b, c = rng.normal((4, 5)), rng.normal((5, 6)), rng.normal((6, 3))
            lhs = matmul(matmul(a, b), c)
            rhs = matmul(a, matmul(b, c))
            assert np.max(np.abs(lhs - rhs)) / np.max(np.abs(lhs)) < 1e-10


class TestKronDiag:
    def test_ones(self):
        assert np.array_equal(kron_diag(np.ones(2), np.ones(3)), np.ones(6))

    def test_forced_arithmetic(self):
        assert np.array_equal(kron_diag(np.array([2.0, 3.0]), np.array([5.0, 7.0])),
                              [10.0, 14.0, 15.0, 21.0])

    def test_matches_dense_kron(self):
        rng = Rng(3)
        a, b = rng.normal((3,)), rng.normal((4,))
        dense = np.diag(np.kron(np.diag(a), np.diag(b)))
        assert np.max(np.abs(kron_diag(a, b) - dense)) < 1e-15

    def test_exhaustive_small_dims(self):
        rng = Rng(5)
        for p in range(1, 9):
            for q in range(1, 9):
                a, b = rng.normal((p,)), rng.normal((q,))
                dense = np.diag(np.kron(np.diag(a), np.diag(b)))
                assert np.array_equal(kron_diag(a, b), dense)

    def test_empty_rejected(self):
        with pytest.raises(DimensionError):
            kron_diag(np.zeros(0), np.ones(2))


def direct_conv(x, w, stride, pad):
    """Sliding-window convolution oracle, one image."""
    c, h, wd = x.shape
    co, ci, kh, kw = w.shape
    ph, pw = pad
    xp = np.pad(x, ((0, 0), (ph, ph), (pw, pw)))
    oh = (h + 2 * ph - kh) // stride[0] + 1
    ow = (wd + 2 * pw - kw) // stride[1] + 1
    out = np.zeros((co, oh, ow))
    for o in range(co):
        for i in range(oh):
            for j in range(ow):
                patch = xp[:, i * stride[0]: i * stride[0] + kh,
                           j * stride[1]: j * stride[1] + kw]
                out[o, i, j] = np.sum(patch * w[o])
    return out


class TestIm2col:
    def test_1x1_kernel(self):
        x = np.array([[[1.0, 2.0], [3.0, 4.0]]])
        patches, count = im2col(x, (1, 1))
        assert count == 4
        assert np.array_equal(patches, [[1.0, 2.0, 3.0, 4.0]])

    def test_full_cover_kernel(self):
        x = np.arange(9.0).reshape(1, 3, 3)
        patches, count = im2col(x, (3, 3))
        assert count == 1
        assert np.array_equal(patches.ravel(), np.arange(9.0))

    def test_conv_via_matmul_matches_direct(self):
        rng = Rng(21)
        x = rng.normal((2, 4, 4))
        w = rng.normal((3, 2, 2, 2))
        patches, count = im2col(x, (2, 2))
        out = (w.reshape(3, -1) @ patches).reshape(3, 3, 3)
        assert np.max(np.abs(out - direct_conv(x, w, (1, 1), (0, 0)))) < 1e-12

    @pytest.mark.parametrize("kernel", [(1, 1), (2, 2), (3, 2)])
    @pytest.mark.parametrize("stride", [(1, 1), (2, 1)])
    @pytest.mark.parametrize("pad", [(0, 0), (1, 1)])
    def test_all_small_combos(self, kernel, stride, pad):
        rng = Rng(sum(kernel) * 100 + sum(stride) * 10 + sum(pad))
        for h in range(kernel[0], 6):
            for w_ in range(kernel[1], 6):
                x = rng.normal((2, h, w_))
                w = rng.normal((2, 2) + kernel)
                patches, _ = im2col(x, kernel, stride, pad)
                oh = (h + 2 * pad[0] - kernel[0]) // stride[0] + 1
                ow = (w_ + 2 * pad[1] - kernel[1]) // stride[1] + 1
                out = (w.reshape(2, -1) @ patches).reshape(2, oh, ow)
                assert np.max(np.abs(out - direct_conv(x, w, stride, pad))) < 1e-12

    def test_kernel_too_large(self):
        with pytest.raises(DimensionError):
            im2col(np.zeros((1, 2, 2)), (3, 3))

    def test_batched_consistent(self):
        rng = Rng(9)
        x = rng.normal((3, 2, 5, 5))
        batched = im2col_batch(x, (2, 2), (1, 1), (1, 1))
        for n in range(3):
            single, _ = im2col(x[n], (2, 2), (1, 1), (1, 1))
            assert np.array_equal(batched[n], single)


class TestRng:
    def test_same_seed_identical(self):
        assert np.array_equal(rng_normal(Rng(42), (4, 5)), rng_normal(Rng(42), (4, 5)))

    def test_moments(self):
        samples = rng_normal(Rng(0), (100_000,))
        assert abs(samples.mean()) < 0.02
        assert abs(samples.std() - 1.0) < 0.02

    def test_degenerate_shape_rejected(self):
        with pytest.raises(DimensionError):
            rng_normal(Rng(1), ())
        with pytest.raises(DimensionError):
            rng_normal(Rng(1), (0, 3))

    def test_spawn_independent(self):
        base = Rng(7)
        assert not np.array_equal(base.spawn(1).normal((10,)), base.spawn(2).normal((10,)))


class TestAsTensor:
    def test_rejects_nan(self):
        with pytest.raises(InputError):
            as_tensor([1.0, float("nan")])

    def test_unchecked_passes(self):
        arr = as_tensor([1.0, float("inf")], checked=False)
        assert np.isinf(arr[1])
