from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import logsumexp, softmax

from .numkit import (
    DimensionMismatch,
    Matrix,
    Vector,
    as_matrix,
    as_vector,
    exp_elementwise,
    hadamard,
    matTvec,
    matvec,
    spectral_norm,
)


@dataclass(frozen=True)
class Instance:
    """A softmax regression problem with document ``A``, target ``b`` and radius ``R``."""

    A: Matrix
    b: Vector
    R: float

    @property
    def n(self) -> int:
        return int(self.A.shape[0])

    @property
    def d(self) -> int:
        return int(self.A.shape[1])

    def validate(self) -> None:
        as_matrix(self.A)
        as_vector(self.b)
        if self.b.shape != (self.n,):
            raise DimensionMismatch(f"b has length {self.b.shape[0]}, expected {self.n}")
        if not (np.all(np.isfinite(self.A)) and np.all(np.isfinite(self.b))):
            raise ValueError("instance entries must be finite")
        if self.R <= 0:
            raise ValueError("R must be positive")
        if spectral_norm(self.A) > self.R:
            raise ValueError("spectral norm of A exceeds R")


def _check_target(A: Matrix, b: Vector) -> None:
    if b.shape != (A.shape[0],):
        raise DimensionMismatch(f"b has length {b.shape[0]}, expected {A.shape[0]}")


def logits(A: Matrix, x: Vector) -> Vector:
    return matvec(A, x)


def alpha(A: Matrix, x: Vector) -> float:
    return float(np.sum(exp_elementwise(logits(A, x))))


def log_alpha(A: Matrix, x: Vector) -> float:
    return float(logsumexp(logits(A, x)))


def predict(A: Matrix, x: Vector) -> Vector:
    return np.asarray(softmax(logits(A, x)), dtype=np.float64)


def residual(A: Matrix, x: Vector, b: Vector) -> Vector:
    _check_target(A, b)
    return predict(A, x) - b


def loss(A: Matrix, x: Vector, b: Vector) -> float:
    c = residual(A, x, b)
    return 0.5 * float(c @ c)


def gradient(A: Matrix, x: Vector, b: Vector) -> Vector:
    """Gradient of ``loss`` with respect to ``x``: ``Aᵀ(f∘c − f·⟨c, f⟩)``."""
    _check_target(A, b)
    f = predict(A, x)
    c = f - b
    return matTvec(A, hadamard(f, c) - f * float(c @ f))


def gradient_as_written(A: Matrix, x: Vector, b: Vector) -> Vector:
    """``Aᵀ(f·⟨c, f⟩ + f∘c)``, the closed form with both terms added.

    Agrees with :func:`gradient` only where ``⟨c, f⟩`` or ``Aᵀf`` vanishes.
    """
    _check_target(A, b)
    f = predict(A, x)
    c = f - b
    return matTvec(A, f * float(c @ f) + hadamard(f, c))


def jvp_exp(A: Matrix, x: Vector, direction: Vector) -> Vector:
    if direction.shape != (A.shape[1],):
        raise DimensionMismatch(f"direction has length {direction.shape[0]}, expected {A.shape[1]}")
    return hadamard(exp_elementwise(logits(A, x)), matvec(A, direction))


def grad_alpha(A: Matrix, x: Vector) -> Vector:
    return matTvec(A, exp_elementwise(logits(A, x)))


def grad_alpha_inv(A: Matrix, x: Vector) -> Vector:
    return -matTvec(A, predict(A, x)) / alpha(A, x)


def jacobian_predict(A: Matrix, x: Vector) -> Matrix:
    """``∂f/∂x`` as an n×d matrix: ``diag(f)A − f fᵀA``."""
    f = predict(A, x)
    return f[:, None] * A - np.outer(f, f @ A)
