import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from afcn.attention import (AttentionParams, FeatureGrid, attend, attention_backward,
                            attention_forward, attention_scores, scaled_softmax)
from afcn.errors import ShapeError
from afcn.gradcheck import check_attention, grad_check

TANH_HALF = 0.46211715726000975850
SOFT_03_10 = 0.95257412682243321912


def random_setup(rng, f=2, t=3, c=5, d=4, lam=0.3):
    grid = FeatureGrid(rng.standard_normal((f, t, c)))
    p = AttentionParams(rng.standard_normal((d, c)), rng.standard_normal(d),
                        rng.standard_normal(d), lam)
    return grid, p


def test_flat_is_row_major():
    ann = np.arange(2 * 3 * 4, dtype=float).reshape(2, 3, 4)
    flat = FeatureGrid(ann).flat()
    assert flat.shape == (6, 4)
    assert np.array_equal(flat[4], ann[1, 1])
    assert np.array_equal(flat.reshape(ann.shape), ann)


def test_from_channels_first(rng):
    fmap = rng.standard_normal((7, 2, 3))
    g = FeatureGrid.from_channels_first(fmap)
    assert (g.freq, g.time, g.channels, g.length) == (2, 3, 7, 6)
    assert np.array_equal(g.annotations[1, 2], fmap[:, 1, 2])


def test_empty_grid_rejected():
    with pytest.raises(ShapeError):
        FeatureGrid(np.zeros((0, 3, 4)))


def test_scores_zero_weights(rng):
    grid = FeatureGrid(rng.standard_normal((2, 2, 3)))
    p = AttentionParams(np.zeros((3, 3)), np.zeros(3), np.ones(3))
    assert not attention_scores(grid, p).any()


def test_scores_tanh_half():
    c = 4
    grid = FeatureGrid(np.full((1, 3, c), 0.5))
    u = np.zeros(c)
    u[0] = 1.0
    e = attention_scores(grid, AttentionParams(np.eye(c), np.zeros(c), u))
    assert np.allclose(e, TANH_HALF, rtol=1e-15)


def test_scores_permutation(rng):
    grid, p = random_setup(rng)
    e = attention_scores(grid, p)
    perm = rng.permutation(grid.length)
    permuted = FeatureGrid(grid.flat()[perm].reshape(1, grid.length, -1))
    assert np.allclose(attention_scores(permuted, p), e[perm], rtol=1e-14)


def test_scores_dim_mismatch(rng):
    grid = FeatureGrid(rng.standard_normal((1, 2, 3)))
    with pytest.raises(ShapeError):
        attention_scores(grid, AttentionParams(np.zeros((2, 4)), np.zeros(2), np.zeros(2)))


def test_softmax_examples(rng):
    assert np.all(scaled_softmax(rng.standard_normal(7), 0.0) == 1 / 7)
    assert np.allclose(scaled_softmax(np.array([np.log(4.0), 0.0]), 1.0), [0.8, 0.2],
                       rtol=0, atol=1e-15)
    a = scaled_softmax(np.array([10.0, 0.0]), 0.3)
    assert a[0] == pytest.approx(SOFT_03_10, rel=1e-15)


@pytest.mark.parametrize("lam", [-0.1, 1.5])
def test_lambda_range(lam):
    with pytest.raises(ValueError):
        scaled_softmax(np.zeros(3), lam)


def test_attend_examples(rng):
    grid = FeatureGrid(rng.standard_normal((2, 3, 4)))
    assert np.allclose(attend(grid, np.full(6, 1 / 6)), grid.flat().mean(axis=0))
    one = np.zeros(6)
    one[4] = 1.0
    assert np.array_equal(attend(grid, one), grid.flat()[4])
    two = FeatureGrid(np.array([[[4.0, 0.0], [0.0, 4.0]]]))
    assert attend(two, np.array([0.75, 0.25])).tolist() == [3.0, 1.0]
    with pytest.raises(ShapeError):
        attend(grid, np.ones(5) / 5)


def test_lambda_zero_param_grads_exactly_zero(rng):
    grid, p = random_setup(rng, lam=0.0)
    grads, _ = attention_backward(grid, p, rng.standard_normal(5))
    for g in grads.values():
        assert not g.any()


def test_backward_grad_check():
    assert check_attention(0, freq=2, time=3, channels=5, hidden=4).max_rel_error < 1e-5
    for lam in (0.0, 1.0):
        assert check_attention(1, lam=lam).max_rel_error < 1e-4


def test_grid_grad_onehot_upstream(rng):
    grid, p = random_setup(rng, f=1, t=6)
    for k in range(grid.channels):
        r = np.zeros(grid.channels)
        r[k] = 1.0
        _, d_grid = attention_backward(grid, p, r)
        res = grad_check(lambda: float(attention_forward(grid, p)[0][k]),
                         {"grid": grid.annotations}, {"grid": d_grid})
        assert res.max_rel_error < 1e-5


def test_backward_shape_error(rng):
    grid, p = random_setup(rng)
    with pytest.raises(ShapeError):
        attention_backward(grid, p, np.zeros(3))


# -- properties ---------------------------------------------------------------

scores = arrays(np.float64, st.integers(1, 40), elements=st.floats(-50, 50))
lams = st.floats(0.0, 1.0)


@given(scores, lams)
def test_normalized(e, lam):
    a = scaled_softmax(e, lam)
    assert np.all(a >= 0)
    assert abs(a.sum() - 1) < 1e-6


@given(scores, lams, st.floats(-100, 100))
def test_shift_invariance(e, lam, shift):
    assert np.allclose(scaled_softmax(e + shift, lam), scaled_softmax(e, lam),
                       rtol=1e-9, atol=1e-12)


@given(arrays(np.float64, st.integers(2, 10), elements=st.floats(-5, 5)),
       st.floats(0.05, 1.0), st.integers(0, 9), st.floats(0.01, 3))
def test_monotone(e, lam, i, bump):
    i %= e.shape[0]
    up = e.copy()
    up[i] += bump
    assert scaled_softmax(up, lam)[i] > scaled_softmax(e, lam)[i]


@settings(max_examples=30)
@given(st.integers(0, 2**32 - 1))
def test_permutation_equivariance(seed):
    rng = np.random.default_rng(seed)
    grid, p = random_setup(rng, f=1, t=7)
    c, w = attention_forward(grid, p)
    perm = rng.permutation(7)
    c2, w2 = attention_forward(FeatureGrid(grid.annotations[:, perm]), p)
    assert np.allclose(w2.alpha, w.alpha[perm], rtol=1e-12)
    assert np.allclose(c2, c, rtol=1e-12, atol=1e-14)


@settings(max_examples=30)
@given(arrays(np.float64, st.integers(2, 20), elements=st.floats(-10, 10)))
def test_entropy_non_increasing_in_lambda(e):
    def entropy(a):
        a = a[a > 0]
        return -np.sum(a * np.log(a))

    hs = [entropy(scaled_softmax(e, lam)) for lam in np.linspace(0, 1, 21)]
    assert all(b <= a + 1e-12 for a, b in zip(hs, hs[1:]))
    # small lambda approaches uniform
    assert abs(scaled_softmax(e, 1e-9).max() - 1 / e.shape[0]) < 1e-6
