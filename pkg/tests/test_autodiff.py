import numpy as np
import pytest

from tasaux import autodiff as ad
from tasaux.gradcheck import finite_difference_check


def grad_of(build, *arrays):
    """Value and gradients of ``build(*leaves)`` with respect to every input."""
    tape = ad.Tape()
    leaves = [tape.leaf(a) for a in arrays]
    out = build(*leaves)
    grads = ad.backward(tape, out)
    return float(out.values), [grads[t.node_id] for t in leaves]


def check(build, *arrays, tol=1e-7):
    arrays = [np.array(a, dtype=float) for a in arrays]
    for i in range(len(arrays)):
        def fn(x, i=i):
            args = list(arrays)
            args[i] = x
            value, grads = grad_of(build, *args)
            return value, grads[i]

        rep = finite_difference_check(fn, arrays[i], h=1e-6, tolerance=tol, coords=500)
        assert rep.passed


def weighted(t, rng):
    # a random linear read-out keeps gradients away from the trivial all-ones case
    w = rng.normal(size=t.shape)
    return ad.attach_loss(t, float((w * t.values).sum()), w)


def test_pointwise_conv_gradients():
    rng = np.random.default_rng(0)
    check(lambda x, W, b: weighted(ad.pointwise_conv(x, W, b), np.random.default_rng(1)),
          rng.normal(size=(3, 7)), rng.normal(size=(4, 3)), rng.normal(size=4))


@pytest.mark.parametrize("dilation", [1, 2, 4, 16])
def test_conv1d_dilated_gradients(dilation):
    rng = np.random.default_rng(dilation)
    check(lambda x, k, b: weighted(ad.conv1d_dilated(x, k, dilation, b), np.random.default_rng(2)),
          rng.normal(size=(2, 11)), rng.normal(size=(3, 2, 3)), rng.normal(size=3))


def test_conv1d_dilated_matches_direct_sum():
    rng = np.random.default_rng(3)
    x, k = rng.normal(size=(2, 9)), rng.normal(size=(3, 2, 3))
    out = ad.conv1d_dilated(ad.Tensor(x), ad.Tensor(k), 2).values
    ref = np.zeros((3, 9))
    for o in range(3):
        for t in range(9):
            for tap in range(3):
                src = t + (tap - 1) * 2
                if 0 <= src < 9:
                    ref[o, t] += k[o, :, tap] @ x[:, src]
    np.testing.assert_allclose(out, ref, atol=1e-12)


def test_conv1d_preserves_length_when_dilation_exceeds_length():
    out = ad.conv1d_dilated(ad.Tensor(np.ones((1, 3))), ad.Tensor(np.ones((1, 1, 3))), 8)
    np.testing.assert_array_equal(out.values, np.ones((1, 3)))


def test_elementwise_gradients():
    rng = np.random.default_rng(4)
    x = rng.normal(size=(3, 6))
    x[np.abs(x) < 1e-3] = 0.5  # stay off the ReLU kink
    check(lambda a: weighted(ad.relu(a), np.random.default_rng(5)), x)
    check(lambda a: weighted(ad.sigmoid(a), np.random.default_rng(5)), x)
    check(lambda a: weighted(ad.softmax_columns(a), np.random.default_rng(5)), x)
    check(lambda a: weighted(ad.scale(a, -2.5), np.random.default_rng(5)), x)
    check(lambda a: weighted(ad.gather_rows(a, [2, 0, 2]), np.random.default_rng(5)), x)
    check(lambda a: weighted(ad.multiply_mask(a, (x > 0) * 2.0), np.random.default_rng(5)), x)
    check(lambda a, b: ad.total(ad.add(a, b)), x, rng.normal(size=(3, 6)))


def test_reused_node_accumulates():
    x = np.array([1.0, -2.0, 3.0])
    value, (g,) = grad_of(lambda a: ad.total(ad.add(a, a)), x)
    assert value == pytest.approx(4.0)
    np.testing.assert_array_equal(g, [2.0, 2.0, 2.0])


def test_unused_leaf_gets_zero_gradient():
    tape = ad.Tape()
    a, b = tape.leaf(np.ones(3)), tape.leaf(np.ones(2))
    grads = ad.backward(tape, ad.total(a))
    np.testing.assert_array_equal(grads[b.node_id], np.zeros(2))


def test_shape_errors():
    with pytest.raises(ad.ShapeMismatch):
        ad.add(ad.Tensor(np.ones(2)), ad.Tensor(np.ones(3)))
    with pytest.raises(ad.ShapeMismatch):
        ad.pointwise_conv(ad.Tensor(np.ones((3, 4))), ad.Tensor(np.ones((2, 2))))
    with pytest.raises(ad.ShapeMismatch):
        ad.conv1d_dilated(ad.Tensor(np.ones((1, 4))), ad.Tensor(np.ones((1, 1, 2))), 1)
    with pytest.raises(ad.ShapeMismatch):
        ad.gather_rows(ad.Tensor(np.ones((2, 4))), [2])


def test_backward_requires_scalar():
    tape = ad.Tape()
    x = tape.leaf(np.ones(3))
    with pytest.raises(ad.NotScalarLoss):
        ad.backward(tape, ad.relu(x))


def test_untaped_forward_records_nothing():
    before = len(ad._DETACHED.nodes)
    ad.relu(ad.Tensor(np.ones((2, 2))))
    assert len(ad._DETACHED.nodes) == before


def test_softmax_is_stable_for_large_logits():
    p = ad.softmax_columns(ad.Tensor(np.array([[1000.0], [0.0]]))).values
    assert np.all(np.isfinite(p)) and p[0, 0] == pytest.approx(1.0)
    s = ad.sigmoid(ad.Tensor(np.array([-800.0, 800.0]))).values
    assert np.all(np.isfinite(s))
