from __future__ import annotations

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from softshift.numkit import (
    DimensionMismatch,
    NonConvergence,
    OverflowRisk,
    RngStream,
    as_matrix,
    as_vector,
    exp_elementwise,
    hadamard,
    l2_norm,
    linf_norm,
    matTvec,
    matvec,
    safe_log,
    spectral_norm,
)

# Magnitudes stay clear of the subnormal range, where squaring underflows.
finite = st.one_of(
    st.just(0.0),
    st.floats(min_value=1e-6, max_value=20.0),
    st.floats(min_value=-20.0, max_value=-1e-6),
)


def vectors(min_size: int = 1, max_size: int = 16) -> st.SearchStrategy[np.ndarray]:
    return st.integers(min_size, max_size).flatmap(
        lambda n: arrays(dtype=np.float64, shape=(n,), elements=finite)
    )


class TestNorms:
    """Vector norms."""

    def test_l2_examples(self) -> None:
        assert l2_norm(np.array([3.0, 4.0])) == 5.0
        assert l2_norm(np.zeros(7)) == 0.0
        assert l2_norm(np.ones(4)) == 2.0

    def test_linf_examples(self) -> None:
        assert linf_norm(np.array([-3.0, 2.0])) == 3.0
        assert linf_norm(np.zeros(3)) == 0.0
        assert linf_norm(np.array([0.5, -0.9, 0.1])) == 0.9

    def test_safe_log_of_zero(self) -> None:
        assert safe_log(0.0) == -math.inf
        assert safe_log(math.e) == pytest.approx(1.0)


class TestSpectralNorm:
    """Power iteration and the small closed form."""

    def test_identity(self) -> None:
        assert spectral_norm(np.eye(2)) == 1.0

    def test_diagonal(self) -> None:
        assert spectral_norm(np.diag([3.0, 1.0])) == pytest.approx(3.0, abs=1e-15)

    def test_rank_one(self) -> None:
        assert spectral_norm(np.array([[0.0, 2.0], [0.0, 0.0]])) == 2.0

    def test_zero_matrix(self) -> None:
        assert spectral_norm(np.zeros((4, 5))) == 0.0

    def test_ones_start_is_an_eigenvector(self) -> None:
        m = 2.0 * np.eye(3) - np.ones((3, 3)) / 3.0
        assert spectral_norm(m) == pytest.approx(2.0, rel=1e-9)

    def test_ones_start_in_null_space(self) -> None:
        m = np.array([[1.0, -1.0, 0.0], [0.0, 0.0, 0.0], [0.0, 0.0, 0.0]])
        assert spectral_norm(m) == pytest.approx(math.sqrt(2.0), rel=1e-9)

    @pytest.mark.parametrize("scale", [1e-3, 1.0, 7.5])
    def test_structured_matrices_match_svd(self, scale: float) -> None:
        for m in (
            scale * (np.eye(4) - np.ones((4, 4)) / 4.0),
            scale * np.array([[1.0, 1.0, -2.0], [2.0, -1.0, -1.0], [0.0, 0.0, 0.0]]),
        ):
            expected = np.linalg.svd(m, compute_uv=False)[0]
            assert spectral_norm(m) == pytest.approx(expected, rel=1e-9)

    def test_closed_form_matches_svd_on_2x2(self) -> None:
        rng = np.random.default_rng(3)
        for _ in range(50):
            m = rng.standard_normal((2, 2))
            expected = np.linalg.svd(m, compute_uv=False)[0]
            assert spectral_norm(m) == pytest.approx(expected, rel=1e-12)

    @pytest.mark.parametrize("shape", [(5, 4), (8, 3), (3, 9), (16, 8)])
    def test_power_iteration_matches_svd(self, shape: tuple[int, int]) -> None:
        rng = np.random.default_rng(sum(shape))
        m = rng.standard_normal(shape)
        expected = np.linalg.svd(m, compute_uv=False)[0]
        assert spectral_norm(m) == pytest.approx(expected, rel=1e-6)

    def test_dominates_random_unit_vectors(self) -> None:
        rng = np.random.default_rng(5)
        m = rng.standard_normal((6, 4))
        v = rng.standard_normal((10_000, 4))
        v /= np.linalg.norm(v, axis=1, keepdims=True)
        brute = float(np.max(np.linalg.norm(v @ m.T, axis=1)))
        estimate = spectral_norm(m)
        assert brute <= estimate * (1 + 1e-9)
        assert estimate == pytest.approx(brute, rel=1e-2)

    def test_non_convergence(self) -> None:
        m = np.diag([1.0, 0.999999, 0.5])
        with pytest.raises(NonConvergence):
            spectral_norm(m, tol=1e-15, max_iter=2)


class TestElementwise:
    """exp, hadamard and matrix-vector products."""

    def test_exp_examples(self) -> None:
        assert np.array_equal(exp_elementwise(np.zeros(2)), np.ones(2))
        assert exp_elementwise(np.array([math.log(2.0), math.log(3.0)])) == pytest.approx([2, 3])
        assert exp_elementwise(np.array([-1.0]))[0] == pytest.approx(0.367879441, abs=1e-9)

    def test_exp_guard(self) -> None:
        with pytest.raises(OverflowRisk):
            exp_elementwise(np.array([0.0, 701.0]))

    def test_hadamard(self) -> None:
        v = np.array([1.0, 2.0])
        assert np.array_equal(hadamard(v, np.array([3.0, 4.0])), [3.0, 8.0])
        assert np.array_equal(hadamard(v, np.ones(2)), v)
        assert np.array_equal(hadamard(v, np.zeros(2)), np.zeros(2))
        with pytest.raises(DimensionMismatch):
            hadamard(v, np.ones(3))

    def test_products(self) -> None:
        assert np.array_equal(matvec(np.eye(2), np.array([5.0, 7.0])), [5.0, 7.0])
        column = np.array([[1.0], [-1.0]])
        assert np.array_equal(matvec(column, np.array([2.0])), [2.0, -2.0])
        assert np.array_equal(matTvec(column, np.array([1.0, 1.0])), [0.0])
        with pytest.raises(DimensionMismatch):
            matvec(column, np.ones(2))
        with pytest.raises(DimensionMismatch):
            matTvec(column, np.ones(3))


class TestCoercion:
    def test_as_vector_from_list(self) -> None:
        v = as_vector([1, 2, 3])
        assert v.dtype == np.float64
        assert np.array_equal(v, [1.0, 2.0, 3.0])

    def test_as_vector_rejects_matrix(self) -> None:
        with pytest.raises(DimensionMismatch):
            as_vector(np.eye(2))

    def test_as_matrix_rejects_vector_and_empty(self) -> None:
        assert as_matrix([[1, 0], [0, 1]]).shape == (2, 2)
        with pytest.raises(DimensionMismatch):
            as_matrix(np.ones(3))
        with pytest.raises(DimensionMismatch):
            as_matrix(np.zeros((0, 2)))


class TestRngStream:
    def test_same_key_same_samples(self) -> None:
        a = RngStream(42, 7).generator().standard_normal(16)
        b = RngStream(42, 7).generator().standard_normal(16)
        assert np.array_equal(a, b)

    def test_different_index_differs(self) -> None:
        a = RngStream(42, 7).generator().standard_normal(16)
        b = RngStream(42, 8).generator().standard_normal(16)
        assert not np.array_equal(a, b)


class TestVectorFacts:
    """The basic norm inequalities on arbitrary finite vectors."""

    @given(data=st.data())
    @settings(max_examples=200, deadline=None)
    def test_hadamard_bound(self, data: st.DataObject) -> None:
        x = data.draw(vectors())
        y = data.draw(arrays(dtype=np.float64, shape=x.shape, elements=finite))
        assert l2_norm(x * y) <= linf_norm(x) * l2_norm(y) * (1 + 1e-12) + 1e-300

    @given(x=vectors())
    @settings(max_examples=200, deadline=None)
    def test_norm_sandwich(self, x: np.ndarray) -> None:
        assert linf_norm(x) <= l2_norm(x) * (1 + 1e-12)
        assert l2_norm(x) <= math.sqrt(x.size) * linf_norm(x) * (1 + 1e-12)

    @given(x=vectors())
    @settings(max_examples=200, deadline=None)
    def test_exp_linf(self, x: np.ndarray) -> None:
        assert linf_norm(np.exp(x)) <= math.exp(l2_norm(x)) * (1 + 1e-12)

    @given(
        x=vectors(),
        gap=st.floats(min_value=1e-6, max_value=0.01),
        sign=st.sampled_from([-1.0, 1.0]),
    )
    @settings(max_examples=200, deadline=None)
    def test_exp_perturbation(self, x: np.ndarray, gap: float, sign: float) -> None:
        y = x + sign * gap
        lhs = l2_norm(np.exp(x) - np.exp(y))
        rhs = l2_norm(np.exp(x)) * 2 * linf_norm(x - y)
        assert lhs <= rhs * (1 + 1e-12) + 1e-300
