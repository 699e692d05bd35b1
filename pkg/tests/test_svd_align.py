"""Alignment scoring vs an independent Jacobi eigenvalue oracle."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from oracles import (
    cross_block_loops,
    jacobi_eigenvalues,
    singular_values_oracle,
    top_k_sum_oracle,
)
from xmas.svd_align import (
    AlignmentScore,
    alignment_score,
    extract_cross_modal_block,
    sum_layers,
    top_k_singular_values,
)


def test_oracle_self_check_hand_eigenvalues():
    # the oracle itself must be right before anything is pinned against it
    np.testing.assert_allclose(
        jacobi_eigenvalues([[2.0, 1.0], [1.0, 2.0]]), [3.0, 1.0], atol=1e-12
    )
    np.testing.assert_allclose(
        singular_values_oracle([[3.0, 0.0], [0.0, 4.0]]), [4.0, 3.0], atol=1e-12
    )


def test_diagonal_example():
    m = np.array([[3.0, 0.0], [0.0, 4.0]])
    np.testing.assert_allclose(top_k_singular_values(m, 2), [4.0, 3.0], atol=1e-12)
    assert alignment_score(m, 2) == AlignmentScore(score=pytest.approx(7.0), k_used=2)
    assert alignment_score(m, 1).score == pytest.approx(4.0)


def test_rank_one_example():
    m = np.ones((2, 2))
    np.testing.assert_allclose(top_k_singular_values(m, 2), [2.0, 0.0], atol=1e-12)
    s = alignment_score(m, 5)
    assert s.k_used == 2
    assert s.score == pytest.approx(2.0)


def test_zero_matrix_scores_zero():
    s = alignment_score(np.zeros((4, 6)), 5)
    assert s.score == 0.0
    assert s.k_used == 4


def test_random_matrix_matches_oracle_rel_1e9():
    rng = np.random.default_rng(7)
    m = rng.normal(size=(10, 8))
    got = alignment_score(m, 5).score
    want = top_k_sum_oracle(m, 5)
    assert got == pytest.approx(want, rel=1e-9)


@pytest.mark.parametrize("shape", [(1, 1), (1, 9), (9, 1), (6, 6), (30, 40), (64, 25)])
def test_shapes_match_oracle(shape):
    rng = np.random.default_rng(sum(shape))
    m = rng.normal(size=shape)
    for k in (1, 3, 5, 50):
        got = top_k_singular_values(m, k)
        want = singular_values_oracle(m)[: min(k, min(shape))]
        np.testing.assert_allclose(got, want, rtol=1e-9, atol=1e-9)


def test_subspace_path_matches_dense_on_large_matrices():
    # Gram side > dense cutoff exercises the iterative branch
    rng = np.random.default_rng(11)
    for _ in range(10):
        m = rng.normal(size=(40, 64))
        got = alignment_score(m, 5).score
        want = top_k_sum_oracle(m, 5)
        assert got == pytest.approx(want, rel=1e-9)


def test_clustered_spectrum_still_accurate():
    # repeated singular values stress subspace iteration's stopping rule
    rng = np.random.default_rng(13)
    d = np.concatenate([np.full(6, 5.0), np.full(6, 4.999999), rng.uniform(0, 1, 20)])
    q1, _ = np.linalg.qr(rng.normal(size=(32, 32)))
    q2, _ = np.linalg.qr(rng.normal(size=(40, 40)))
    m = q1 @ np.diag(np.sort(d)[::-1]) @ q2[:32]
    got = top_k_singular_values(m, 5)
    want = singular_values_oracle(m)[:5]
    np.testing.assert_allclose(got, want, rtol=1e-9)


def test_orthogonal_invariance():
    rng = np.random.default_rng(17)
    m = rng.normal(size=(12, 9))
    u, _ = np.linalg.qr(rng.normal(size=(12, 12)))
    v, _ = np.linalg.qr(rng.normal(size=(9, 9)))
    a = alignment_score(m, 5).score
    b = alignment_score(u @ m @ v.T, 5).score
    assert b == pytest.approx(a, rel=1e-9)


@pytest.mark.parametrize("alpha", [2.5, -3.0, 0.0, 1e-6])
def test_scaling_by_alpha(alpha):
    rng = np.random.default_rng(19)
    m = rng.normal(size=(7, 5))
    base = alignment_score(m, 5).score
    scaled = alignment_score(alpha * m, 5).score
    assert scaled == pytest.approx(abs(alpha) * base, rel=1e-9, abs=1e-12)


def test_monotone_in_k():
    rng = np.random.default_rng(23)
    m = rng.normal(size=(9, 9))
    scores = [alignment_score(m, k).score for k in range(1, 10)]
    assert all(b >= a - 1e-12 for a, b in zip(scores, scores[1:]))


def test_score_bounds():
    rng = np.random.default_rng(29)
    for _ in range(20):
        r, c = rng.integers(1, 15, size=2)
        m = rng.normal(size=(r, c))
        s = alignment_score(m, 5)
        top = singular_values_oracle(m)[0]
        fro = np.linalg.norm(m)
        assert s.score >= top - 1e-9 * max(top, 1)  # >= spectral norm
        assert s.score <= np.sqrt(min(r, c)) * fro + 1e-9


@settings(max_examples=60, deadline=None)
@given(
    st.integers(1, 16),
    st.integers(1, 16),
    st.integers(1, 8),
    st.integers(0, 2**32 - 1),
)
def test_property_matches_oracle(rows, cols, k, seed):
    m = np.random.default_rng(seed).normal(size=(rows, cols))
    got = alignment_score(m, k)
    assert got.k_used == min(k, rows, cols)
    assert got.score == pytest.approx(top_k_sum_oracle(m, k), rel=1e-9, abs=1e-9)


def test_rejects_bad_inputs():
    with pytest.raises(ValueError):
        top_k_singular_values(np.zeros((2, 2)), 0)
    with pytest.raises(ValueError):
        top_k_singular_values(np.zeros((0, 3)), 1)
    with pytest.raises(ValueError):
        top_k_singular_values(np.array([[np.nan, 0.0]]), 1)
    with pytest.raises(ValueError):
        top_k_singular_values(np.zeros(4), 1)


# ------------------------------------------------------------ block slicing


def test_extract_block_matches_loop_oracle():
    rng = np.random.default_rng(31)
    attn = rng.uniform(size=(7, 7))
    got = extract_cross_modal_block(attn, n_img=3, n_txt=4)
    np.testing.assert_array_equal(got, cross_block_loops(attn, 3))


def test_extract_block_returns_copy():
    attn = np.zeros((4, 4))
    block = extract_cross_modal_block(attn, 2, 2)
    block[0, 0] = 9.0
    assert attn[2, 0] == 0.0


def test_extract_block_validates_geometry():
    with pytest.raises(ValueError):
        extract_cross_modal_block(np.zeros((4, 5)), 2, 2)
    with pytest.raises(ValueError):
        extract_cross_modal_block(np.zeros((4, 4)), 3, 2)
    with pytest.raises(ValueError):
        extract_cross_modal_block(np.zeros((4, 4)), 0, 4)


def test_sum_layers_elementwise():
    rng = np.random.default_rng(37)
    layers = [rng.uniform(size=(3, 2)) for _ in range(4)]
    want = layers[0] + layers[1] + layers[2] + layers[3]
    np.testing.assert_allclose(sum_layers(layers), want, atol=1e-15)
    with pytest.raises(ValueError):
        sum_layers([])
    with pytest.raises(ValueError):
        sum_layers([np.zeros((2, 2)), np.zeros((3, 2))])
