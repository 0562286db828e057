import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from spsn import autodiff as ad
from spsn.autodiff import DimensionError, Tensor, grad_check


def rng(seed=0):
    return np.random.default_rng(seed)


class TestConv2d:
    def test_identity_spatial_kernel(self):
        x = Tensor(np.ones((1, 1, 4, 4)))
        w = Tensor(np.full((1, 1, 1, 1), 2.0))
        out = ad.conv2d(x, w)
        assert out.shape == (1, 1, 4, 4)
        assert np.array_equal(out.data, np.full((1, 1, 4, 4), 2.0, dtype=np.float32))

    def test_averaging_kernel(self):
        # independent arithmetic oracle: mean of 1..9 is 5
        x = Tensor(np.arange(1, 10, dtype=np.float64).reshape(1, 1, 3, 3))
        w = Tensor(np.full((1, 1, 3, 3), 1.0 / 9, dtype=np.float64))
        assert ad.conv2d(x, w).item() == pytest.approx(5.0)

    def test_stride_two_shape(self):
        x = Tensor(np.zeros((1, 1, 4, 4)))
        w = Tensor(np.zeros((1, 1, 1, 1)))
        assert ad.conv2d(x, w, stride=2).shape == (1, 1, 2, 2)

    def test_channel_mismatch_names_axis(self):
        x = Tensor(np.zeros((1, 3, 4, 4)))
        w = Tensor(np.zeros((2, 4, 1, 1)))
        with pytest.raises(DimensionError, match="axis 1"):
            ad.conv2d(x, w)

    def test_versus_brute_force(self):
        r = rng(5)
        x = r.normal(size=(2, 3, 7, 6))
        w = r.normal(size=(4, 3, 3, 3))
        out = ad.conv2d(Tensor(x), Tensor(w), stride=2, dilation=1, padding=1).data
        xp = np.pad(x, ((0, 0), (0, 0), (1, 1), (1, 1)))
        expect = np.zeros_like(out)
        for n in range(2):
            for o in range(4):
                for i in range(out.shape[2]):
                    for j in range(out.shape[3]):
                        patch = xp[n, :, 2 * i:2 * i + 3, 2 * j:2 * j + 3]
                        expect[n, o, i, j] = (patch * w[o]).sum()
        np.testing.assert_allclose(out, expect, rtol=1e-5)


class TestElementwise:
    def test_softmax_symmetry(self):
        out = ad.softmax(Tensor([0.0, 0.0, 0.0])).data
        np.testing.assert_allclose(out, np.full(3, 1 / 3), rtol=1e-6)

    def test_sigmoid_zero(self):
        assert ad.sigmoid(Tensor(0.0)).item() == 0.5

    def test_bilinear_upsample_constant(self):
        x = Tensor(np.full((1, 2, 3, 3), 4.25))
        out = ad.bilinear_upsample(x, 9, 7).data
        np.testing.assert_allclose(out, 4.25, rtol=1e-6)

    def test_softmax_rows_sum_to_one(self):
        x = Tensor(rng(1).normal(size=(5, 7)) * 10)
        out = ad.softmax(x, axis=1).data
        assert (out >= 0).all()
        np.testing.assert_allclose(out.sum(axis=1), 1.0, atol=1e-6)

    def test_axis_out_of_range(self):
        with pytest.raises(DimensionError):
            ad.max_over_axis(Tensor(np.zeros((2, 2))), 5)


class TestBackward:
    def test_sum_of_squares_gradient(self):
        w = Tensor(np.array([1.0, 2.0]), requires_grad=True)
        (w * w).sum().backward()
        np.testing.assert_allclose(w.grad, [2.0, 4.0], rtol=1e-6)

    def test_sigmoid_gradient_at_zero(self):
        w = Tensor(0.0, requires_grad=True)
        ad.sigmoid(w).backward()
        assert w.grad == pytest.approx(0.25)

    def test_backward_twice_raises(self):
        w = Tensor(np.array([1.0]), requires_grad=True)
        loss = (w * w).sum()
        loss.backward()
        with pytest.raises(RuntimeError, match="twice"):
            loss.backward()

    def test_backward_requires_scalar(self):
        w = Tensor(np.ones(3), requires_grad=True)
        with pytest.raises(ValueError, match="scalar"):
            (w * w).backward()

    def test_composed_graph_matches_finite_differences(self):
        a = Tensor(rng(2).normal(size=(3, 4)))
        b = Tensor(rng(3).normal(size=(4, 2)))

        def f(t):
            y = ad.softmax(t @ b, axis=1)
            return (ad.sigmoid(y) * ad.relu(t).sum()).sum()

        assert grad_check(f, a) < 1e-3


class TestGradCheck:
    def test_sum_of_squares(self):
        err = grad_check(lambda t: (t * t).sum(), Tensor(np.array([1.0, 2.0, 3.0])), eps=1e-5)
        assert err < 1e-6

    def test_constant_function(self):
        err = grad_check(lambda t: Tensor(0.0) + 0.0 * t.sum(), Tensor(np.ones(4)))
        assert err == 0.0

    def test_rejects_nonscalar(self):
        with pytest.raises(ValueError):
            grad_check(lambda t: t * 2, Tensor(np.ones(3)))

    def test_rejects_bad_eps(self):
        with pytest.raises(ValueError):
            grad_check(lambda t: t.sum(), Tensor(np.ones(2)), eps=0.0)


PRIMITIVES = [
    ("relu", lambda t: ad.relu(t).sum(), (3, 4)),
    ("leaky_relu", lambda t: ad.leaky_relu(t).sum(), (3, 4)),
    ("sigmoid", lambda t: ad.sigmoid(t).sum(), (3, 4)),
    ("softmax", lambda t: (ad.softmax(t, axis=1) ** 2).sum(), (3, 4)),
    ("exp", lambda t: ad.exp(t).sum(), (5,)),
    ("abs", lambda t: ad.tabs(t).sum(), (5,)),
    ("matmul", lambda t: (t @ t.T).sum(), (3, 4)),
    ("max_over_axis", lambda t: ad.max_over_axis(t, 1).sum(), (3, 4)),
    ("concat", lambda t: ad.concat([t, t * 2], axis=0).sum(), (2, 3)),
    ("take_rows", lambda t: ad.take_rows(t, np.array([0, 0, 2])).sum(), (3, 2)),
    ("minimum", lambda t: ad.minimum(t, Tensor(np.ones((3, 3)) * 0.3)).sum(), (3, 3)),
    ("narrow", lambda t: (ad.narrow(t, 1, 1, 3) ** 2).sum(), (3, 4)),
    ("upsample", lambda t: (ad.bilinear_upsample(t, 5, 7) ** 2).sum(), (1, 2, 3, 3)),
    ("avg_pool", lambda t: (ad.adaptive_avg_pool(t, 2, 3) ** 2).sum(), (1, 2, 5, 6)),
    ("pad_replicate", lambda t: (ad.pad2d(t, 2, "replicate") ** 2).sum(), (1, 1, 3, 4)),
    ("mean", lambda t: (t.mean(axis=0, keepdims=True) ** 2).sum(), (4, 3)),
]


@pytest.mark.parametrize("name,f,shape", PRIMITIVES, ids=[p[0] for p in PRIMITIVES])
def test_primitive_gradients(name, f, shape):
    # random 64-bit points away from kinks (0.1 offset keeps relu/min/max clean)
    point = Tensor(rng(hash(name) % 2 ** 31).normal(size=shape) + 0.1)
    assert grad_check(f, point) < 1e-3


@settings(max_examples=25, deadline=None)
@given(st.lists(st.floats(-30, 30), min_size=2, max_size=8))
def test_softmax_is_a_distribution(values):
    out = ad.softmax(Tensor(np.array(values, dtype=np.float64))).data
    assert (out >= 0).all()
    assert out.sum() == pytest.approx(1.0, abs=1e-6)


def test_forward_determinism():
    x = rng(7).normal(size=(1, 3, 8, 8))
    w = rng(8).normal(size=(4, 3, 3, 3))
    a = ad.softmax(ad.conv2d(Tensor(x), Tensor(w), padding=1).reshape(4, -1), axis=1).data
    b = ad.softmax(ad.conv2d(Tensor(x), Tensor(w), padding=1).reshape(4, -1), axis=1).data
    assert np.array_equal(a, b)
