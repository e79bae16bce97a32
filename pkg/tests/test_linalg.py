import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from oracles import cosine_loop
from weightprint import BlockRotation, ValidationError, apply_block_rotation, apply_perm_sign_columns, cosine_matrix, gram_linear


def test_cosine_identity():
    np.testing.assert_array_equal(cosine_matrix(np.eye(2), np.eye(2)), np.eye(2))


def test_cosine_orthogonal_columns():
    assert cosine_matrix(np.array([[1.0], [0.0]]), np.array([[0.0], [1.0]]))[0, 0] == 0.0


def test_cosine_matches_scalar_loop(rng):
    a, b = rng.normal(size=(5, 3)), rng.normal(size=(5, 4))
    got = cosine_matrix(a, b)
    want = np.array(cosine_loop(a.tolist(), b.tolist()))
    assert np.max(np.abs(got - want)) < 1e-12


def test_cosine_zero_column_gives_zero(rng):
    a = rng.normal(size=(6, 3))
    a[:, 1] = 0.0
    c = cosine_matrix(a, a)
    assert np.all(c[1] == 0) and np.all(c[:, 1] == 0)
    np.testing.assert_allclose(np.diag(c)[[0, 2]], 1.0, atol=1e-15)


def test_cosine_row_mismatch():
    with pytest.raises(ValidationError):
        cosine_matrix(np.ones((3, 2)), np.ones((4, 2)))


def test_gram_small_cases():
    np.testing.assert_array_equal(gram_linear(np.eye(3)), np.eye(3))
    assert gram_linear(np.array([[3.0, 4.0]]))[0, 0] == 25.0


def test_gram_symmetric_psd(rng):
    k = gram_linear(rng.normal(size=(6, 4)))
    np.testing.assert_array_equal(k, k.T)
    assert np.linalg.eigvalsh(k).min() >= -1e-10


@given(st.integers(1, 8), st.floats(-10, 10).filter(lambda c: abs(c) > 1e-3), st.integers(0, 2**31))
@settings(max_examples=50, deadline=None)
def test_gram_rotation_invariance(half, c, seed):
    r = np.random.default_rng(seed)
    x = r.normal(size=(7, 2 * half))
    u = BlockRotation.random(2 * half, r).matrix()
    assert np.max(np.abs(gram_linear(c * x @ u) - c * c * gram_linear(x))) < 1e-10 * max(1, c * c)


def test_rotation_identity_and_quarter_turn(rng):
    w = rng.normal(size=(4, 3))
    np.testing.assert_array_equal(apply_block_rotation(w, BlockRotation([0.0, 0.0])), w)
    got = apply_block_rotation(np.eye(2), BlockRotation([math.pi / 2]))
    np.testing.assert_allclose(got, [[0, -1], [1, 0]], atol=1e-15)


def test_rotation_preserves_norms_and_inverts(rng):
    w = rng.normal(size=(8, 5))
    rot = BlockRotation.random(8, rng)
    out = apply_block_rotation(w, rot)
    assert np.max(np.abs(np.linalg.norm(out, axis=0) - np.linalg.norm(w, axis=0))) < 1e-12
    back = apply_block_rotation(out, BlockRotation(-rot.angles))
    assert np.max(np.abs(back - w)) < 1e-12
    assert np.max(np.abs(apply_block_rotation(out, rot.inverse()) - w)) < 1e-12


@given(st.integers(1, 16), st.integers(0, 2**31))
@settings(max_examples=50, deadline=None)
def test_rotation_matrix_orthogonal(half, seed):
    r = BlockRotation.random(2 * half, np.random.default_rng(seed)).matrix()
    assert np.max(np.abs(r @ r.T - np.eye(2 * half))) < 1e-14


def test_rotation_errors(rng):
    with pytest.raises(ValidationError):
        apply_block_rotation(rng.normal(size=(3, 2)), BlockRotation([0.1]))
    with pytest.raises(ValidationError):
        apply_block_rotation(rng.normal(size=(4, 2)), BlockRotation([0.1]))


def test_perm_sign_identity_and_swap(rng):
    w = rng.normal(size=(3, 4))
    np.testing.assert_array_equal(apply_perm_sign_columns(w, np.arange(4), np.ones(4)), w)
    np.testing.assert_array_equal(apply_perm_sign_columns(np.eye(2), [1, 0], [1, 1]), [[0, 1], [1, 0]])


def test_perm_sign_inverse_composition(rng):
    w = rng.normal(size=(4, 6))
    perm = rng.permutation(6)
    signs = rng.choice([-1.0, 1.0], size=6)
    out = apply_perm_sign_columns(w, perm, signs)
    inv = np.argsort(perm)
    back = apply_perm_sign_columns(out, inv, signs[inv])
    np.testing.assert_array_equal(back, w)


def test_perm_sign_partial_zero_fills():
    w = np.arange(6.0).reshape(2, 3)
    out = apply_perm_sign_columns(w, [2, -1, 0], [1, 1, -1], width=4)
    np.testing.assert_array_equal(out, [[-2, 0, 0, 0], [-5, 0, 3, 0]])


@pytest.mark.parametrize(
    "perm, signs",
    [([0, 0, 1], [1, 1, 1]), ([0, 1, 2], [1, 1]), ([0, 1, 2], [1, 2, 1])],
)
def test_perm_sign_errors(perm, signs):
    with pytest.raises(ValidationError):
        apply_perm_sign_columns(np.ones((2, 3)), perm, signs)
