from __future__ import annotations

import logging
import math
from dataclasses import dataclass

import numpy as np
from numpy.typing import ArrayLike, NDArray

Vector = NDArray[np.float64]
Matrix = NDArray[np.float64]

EXP_OVERFLOW_GUARD = 700.0
DEFAULT_SPECTRAL_TOL = 1e-10
DEFAULT_SPECTRAL_MAX_ITER = 10_000
SPECTRAL_VERIFY_RTOL = 1e-9

logger = logging.getLogger(__name__)


class NumkitError(RuntimeError):
    pass


class DimensionMismatch(NumkitError):
    pass


class OverflowRisk(NumkitError):
    pass


class NonConvergence(NumkitError):
    pass


@dataclass(frozen=True)
class RngStream:
    """Deterministic random substream keyed by (master_seed, stream_index)."""

    master_seed: int
    stream_index: int

    def generator(self) -> np.random.Generator:
        seq = np.random.SeedSequence(entropy=self.master_seed, spawn_key=(self.stream_index,))
        return np.random.Generator(np.random.PCG64(seq))


def as_vector(values: ArrayLike) -> Vector:
    vec = np.array(values, dtype=np.float64)
    if vec.ndim != 1:
        raise DimensionMismatch(f"expected a vector, got shape {vec.shape}")
    return vec


def as_matrix(values: ArrayLike) -> Matrix:
    mat = np.array(values, dtype=np.float64)
    if mat.ndim != 2 or mat.shape[0] < 1 or mat.shape[1] < 1:
        raise DimensionMismatch(f"expected a non-empty matrix, got shape {mat.shape}")
    return mat


def l2_norm(v: Vector) -> float:
    return float(np.linalg.norm(v, 2)) if v.size else 0.0


def linf_norm(v: Vector) -> float:
    return float(np.max(np.abs(v))) if v.size else 0.0


def _gram_closed_form(gram: Matrix) -> float:
    if gram.shape == (1, 1):
        return math.sqrt(max(float(gram[0, 0]), 0.0))
    a, b, c = float(gram[0, 0]), float(gram[0, 1]), float(gram[1, 1])
    mid = 0.5 * (a + c)
    radius = math.hypot(0.5 * (a - c), b)
    return math.sqrt(max(mid + radius, 0.0))


def _power_iteration(gram: Matrix, v: Vector, tol: float, max_iter: int) -> float:
    estimate = float(v @ gram @ v)
    for _ in range(max_iter):
        w = gram @ v
        w_norm = float(np.linalg.norm(w))
        if w_norm == 0.0:
            # start vector lies in the null space
            return 0.0
        v = w / w_norm
        updated = float(v @ gram @ v)
        if abs(updated - estimate) <= tol * max(abs(updated), np.finfo(np.float64).tiny):
            return updated
        estimate = updated
    raise NonConvergence(f"power iteration did not reach tol={tol} in {max_iter} sweeps")


def spectral_norm(
    m: Matrix,
    tol: float = DEFAULT_SPECTRAL_TOL,
    max_iter: int = DEFAULT_SPECTRAL_MAX_ITER,
) -> float:
    """Largest singular value of ``m``.

    Uses the closed form of the 1x1 / 2x2 Gram matrix when ``min(n, d) <= 2``,
    otherwise power iteration on ``mᵀm`` from the normalized all-ones vector.
    Convergence is judged on the relative change of the Rayleigh quotient.

    The all-ones start can sit in an invariant subspace that misses the top
    eigenvector (an eigenvector of ``mᵀm`` itself, or a null vector). The
    iteration is therefore repeated from the largest Gram column, and the
    result is checked against ``eigvalsh``; a gap wider than
    ``SPECTRAL_VERIFY_RTOL`` falls back to the eigenvalue.
    """
    if not np.any(m):
        return 0.0
    rows, cols = m.shape
    if min(rows, cols) <= 2:
        gram = m.T @ m if cols <= rows else m @ m.T
        return _gram_closed_form(gram)

    gram = m.T @ m
    ones = np.ones(cols, dtype=np.float64) / math.sqrt(cols)
    column = gram[:, int(np.argmax(np.linalg.norm(gram, axis=0)))]
    top = max(
        _power_iteration(gram, ones, tol, max_iter),
        _power_iteration(gram, column / np.linalg.norm(column), tol, max_iter),
    )
    exact = float(np.linalg.eigvalsh(gram)[-1])
    if top < exact * (1.0 - SPECTRAL_VERIFY_RTOL):
        logger.debug("power iteration stalled at %.17g below %.17g; using eigvalsh", top, exact)
        top = exact
    return math.sqrt(max(top, 0.0))


def exp_elementwise(v: Vector) -> Vector:
    if linf_norm(v) > EXP_OVERFLOW_GUARD:
        raise OverflowRisk(f"exp argument exceeds {EXP_OVERFLOW_GUARD} in absolute value")
    return np.exp(v)


def hadamard(a: Vector, b: Vector) -> Vector:
    if a.shape != b.shape:
        raise DimensionMismatch(f"hadamard of shapes {a.shape} and {b.shape}")
    return a * b


def matvec(m: Matrix, v: Vector) -> Vector:
    if m.shape[1] != v.shape[0]:
        raise DimensionMismatch(f"matvec of {m.shape} with length {v.shape[0]}")
    return m @ v


def matTvec(m: Matrix, v: Vector) -> Vector:  # noqa: N802
    if m.shape[0] != v.shape[0]:
        raise DimensionMismatch(f"matTvec of {m.shape} with length {v.shape[0]}")
    return m.T @ v


def safe_log(value: float) -> float:
    """Natural log with ``log(0) = -inf``."""
    if value <= 0.0:
        return -math.inf
    return math.log(value)
