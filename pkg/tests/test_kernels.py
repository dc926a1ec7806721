import math

import mpmath
import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from factfuse.errors import (
    AllMasked,
    ConfigError,
    EmptyInput,
    IndexOutOfRange,
    NotADistribution,
    ShapeMismatch,
)
from factfuse.nn import kernels as K

finite = st.floats(-50, 50, allow_nan=False, allow_infinity=False)


# -- linear ------------------------------------------------------------------

def test_linear_identity():
    np.testing.assert_array_equal(K.linear([[1, 2]], np.eye(2), [0, 0]), [[1, 2]])


def test_linear_zero_weights():
    np.testing.assert_array_equal(K.linear([[1, 2]], np.zeros((2, 2)), [3, 4]), [[3, 4]])


def test_linear_hand_product():
    # rows: 1+2, 1+2+1 / 3+4, 3+4+1
    out = K.linear([[1, 2], [3, 4]], [[1, 1], [1, 1]], [0, 1])
    np.testing.assert_array_equal(out, [[3, 4], [7, 8]])


@pytest.mark.parametrize(
    "x, W, b",
    [
        (np.ones((1, 3)), np.ones((2, 2)), np.zeros(2)),
        (np.ones((1, 2)), np.ones((2, 2)), np.zeros(3)),
        (np.ones((1, 2)), np.ones(2), np.zeros(2)),
    ],
)
def test_linear_shape_errors(x, W, b):
    with pytest.raises(ShapeMismatch):
        K.linear(x, W, b)


# -- softmax -------------------------------------------------------------------

def test_softmax_uniform():
    np.testing.assert_allclose(K.softmax([0.0, 0.0, 0.0]), [1 / 3] * 3, atol=1e-15)


def test_softmax_ln2():
    np.testing.assert_allclose(K.softmax([math.log(2), 0.0, 0.0]), [0.5, 0.25, 0.25], atol=1e-15)


def test_softmax_large_logit_matches_extended_precision():
    mpmath.mp.dps = 50
    den = mpmath.exp(1000) + 1
    oracle = [float(mpmath.exp(1000) / den), float(1 / den)]
    out = K.softmax([1000.0, 0.0])
    assert np.isfinite(out).all()
    np.testing.assert_allclose(out, oracle, rtol=1e-15, atol=1e-300)


def test_softmax_empty():
    with pytest.raises(EmptyInput):
        K.softmax([])


@settings(max_examples=200, deadline=None)
@given(arrays(np.float64, st.integers(1, 12), elements=finite), finite)
def test_softmax_properties(v, c):
    p = K.softmax(v)
    assert (p >= 0).all()
    assert abs(p.sum() - 1) <= 1e-6
    np.testing.assert_allclose(K.softmax(v + c), p, atol=1e-6)


def test_masked_softmax_masked_weight_is_exact_zero():
    p = K.masked_softmax(np.array([3.0, 1e300, -2.0]), np.array([True, False, True]))
    assert p[1] == 0.0
    np.testing.assert_allclose(p[[0, 2]], K.softmax([3.0, -2.0]))


def test_masked_softmax_all_masked():
    with pytest.raises(AllMasked):
        K.masked_softmax(np.zeros((2, 3)), np.array([[True, False, False], [False] * 3]))


# -- attention ------------------------------------------------------------------

def test_attention_single_unmasked_key():
    rng = np.random.default_rng(0)
    Q, Kk = rng.normal(size=(1, 2)), rng.normal(size=(3, 2))
    V = np.array([[5.0, 6.0], [1.0, 1.0], [7.0, 7.0]])
    out = K.scaled_dot_attention(Q, Kk, V, np.array([True, False, False]))
    np.testing.assert_array_equal(out, [[5.0, 6.0]])


def test_attention_equal_logits_gives_mean():
    Q = np.array([[0.0, 0.0]])
    Kk = np.random.default_rng(1).normal(size=(4, 2))
    V = np.arange(12.0).reshape(4, 3)
    np.testing.assert_allclose(K.scaled_dot_attention(Q, Kk, V), V.mean(0, keepdims=True), atol=1e-12)


def test_attention_hand_case():
    a = math.exp(1 / math.sqrt(2))
    w = [a / (a + 1), 1 / (a + 1)]
    out, weights = K.scaled_dot_attention(
        [[1.0, 0.0]], [[1.0, 0.0], [0.0, 1.0]], [[1.0, 0.0], [0.0, 1.0]], return_weights=True
    )
    np.testing.assert_allclose(weights, [w], atol=1e-15)
    np.testing.assert_allclose(out, [w], atol=1e-15)


def test_attention_errors():
    with pytest.raises(AllMasked):
        K.scaled_dot_attention(np.ones((1, 2)), np.ones((2, 2)), np.ones((2, 2)), np.array([False, False]))
    with pytest.raises(ShapeMismatch):
        K.scaled_dot_attention(np.ones((1, 3)), np.ones((2, 2)), np.ones((2, 2)))
    with pytest.raises(ShapeMismatch):
        K.scaled_dot_attention(np.ones((1, 2)), np.ones((2, 2)), np.ones((3, 2)))
    with pytest.raises(ShapeMismatch):
        K.scaled_dot_attention(np.ones((1, 2)), np.ones((2, 2)), np.ones((2, 2)), np.array([True]))


@settings(max_examples=100, deadline=None)
@given(st.integers(0, 10_000), st.integers(1, 6), st.integers(1, 4))
def test_attention_convex_hull(seed, n, d):
    rng = np.random.default_rng(seed)
    mask = rng.random(n) < 0.7
    mask[rng.integers(n)] = True
    V = rng.normal(size=(n, d))
    out = K.scaled_dot_attention(rng.normal(size=(2, d)), rng.normal(size=(n, d)), V, mask)
    lo, hi = V[mask].min(0), V[mask].max(0)
    assert (out >= lo - 1e-12).all() and (out <= hi + 1e-12).all()


def _random_params(rng, hidden, heads):
    def w():
        return rng.normal(size=(hidden, hidden)) / math.sqrt(hidden)

    def b():
        return rng.normal(size=hidden) * 0.1

    return K.AttentionParams(w(), b(), w(), b(), w(), b(), w(), b(), heads)


def test_mha_identity_one_head_reduces_to_attention():
    rng = np.random.default_rng(2)
    Q, Kk, V = rng.normal(size=(2, 4)), rng.normal(size=(5, 4)), rng.normal(size=(5, 4))
    mask = np.array([True, True, False, True, False])
    out = K.multi_head_attention(Q, Kk, V, mask, K.AttentionParams.identity(4, 1))
    np.testing.assert_allclose(out, K.scaled_dot_attention(Q, Kk, V, mask), atol=1e-14)


def test_mha_masked_row_appended():
    rng = np.random.default_rng(3)
    params = _random_params(rng, 8, 2)
    Q, Kk = rng.normal(size=(1, 8)), rng.normal(size=(3, 8))
    base = K.multi_head_attention(Q, Kk, Kk, np.ones(3, bool), params)
    K2 = np.vstack([Kk, rng.normal(size=(1, 8)) * 100])
    out = K.multi_head_attention(Q, K2, K2, np.array([True, True, True, False]), params)
    assert np.abs(out - base).max() <= 1e-6


def test_mha_matches_straight_line_reference():
    rng = np.random.default_rng(4)
    p = _random_params(rng, 4, 2)
    Q, Kk, V = rng.normal(size=(2, 4)), rng.normal(size=(3, 4)), rng.normal(size=(3, 4))
    mask = [True, False, True]

    # explicit loops over heads, queries and keys
    q, k, v = Q @ p.wq + p.bq, Kk @ p.wk + p.bk, V @ p.wv + p.bv
    concat = np.zeros((2, 4))
    for h in range(2):
        cols = slice(2 * h, 2 * h + 2)
        for i in range(2):
            scores = [float(q[i, cols] @ k[j, cols]) / math.sqrt(2) if mask[j] else None for j in range(3)]
            live = [s for s in scores if s is not None]
            top = max(live)
            ex = [math.exp(s - top) if s is not None else 0.0 for s in scores]
            total = sum(ex)
            for j in range(3):
                concat[i, cols] += ex[j] / total * v[j, cols]
    ref = concat @ p.wo + p.bo
    np.testing.assert_allclose(K.multi_head_attention(Q, Kk, V, np.array(mask), p), ref, atol=1e-12)


def test_mha_head_divisibility():
    rng = np.random.default_rng(5)
    with pytest.raises(ConfigError):
        K.multi_head_attention(np.ones((1, 6)), np.ones((2, 6)), np.ones((2, 6)), None, _random_params(rng, 6, 4))


# -- layer norm / cross entropy ----------------------------------------------------

def test_layer_norm_hand_case():
    x = np.array([1.0, 2.0, 3.0])
    # mean 2, variance 2/3
    expected = (x - 2) / math.sqrt(2 / 3 + K.LN_EPS)
    np.testing.assert_allclose(K.layer_norm(x, np.ones(3), np.zeros(3)), expected, atol=1e-15)


def test_cross_entropy_uniform():
    for y in range(3):
        assert abs(K.cross_entropy([1 / 3] * 3, y) - math.log(3)) <= 1e-12


def test_cross_entropy_perfect():
    assert K.cross_entropy([1.0, 0.0, 0.0], 0) == 0.0


def test_cross_entropy_hand_value():
    assert abs(K.cross_entropy([0.7, 0.2, 0.1], 1) + math.log(0.2)) <= 1e-15


def test_cross_entropy_clamped():
    assert K.cross_entropy([1.0, 0.0, 0.0], 2) == pytest.approx(-math.log(1e-12))


def test_cross_entropy_errors():
    with pytest.raises(IndexOutOfRange):
        K.cross_entropy([0.5, 0.5], 2)
    with pytest.raises(IndexOutOfRange):
        K.cross_entropy([0.5, 0.5], -1)
    with pytest.raises(NotADistribution):
        K.cross_entropy([0.5, 0.6], 0)
    with pytest.raises(NotADistribution):
        K.cross_entropy([1.5, -0.5], 0)


@settings(max_examples=200, deadline=None)
@given(arrays(np.float64, 3, elements=finite), st.integers(0, 2))
def test_cross_entropy_nonnegative(logits, y):
    assert K.cross_entropy(K.softmax(logits), y) >= 0.0
