"""Independent numerical oracles used to cross-check the closed forms.

Central differences stand in for the analytic derivatives, and a 40-digit
decimal evaluation stands in for the float64 shift computation.
"""

from __future__ import annotations

import logging
from decimal import Decimal, localcontext
from typing import Callable, Sequence

import numpy as np

from .numkit import Matrix, Vector
from .shift_analysis import DataShift, ShiftPair, WeightShift
from .softmax_core import loss

logger = logging.getLogger(__name__)

HIGHPREC_DIGITS = 40
HIGHPREC_MAX_ENTRIES = 64
FD_STEP_RANGE = (1e-8, 1e-3)


class HarnessError(RuntimeError):
    pass


class ScaleExceeded(HarnessError):
    pass


def central_difference(
    func: Callable[[Vector], np.ndarray | float],
    x: Vector,
    h: float,
) -> np.ndarray:
    """Central differences of ``func`` at ``x``; axis 0 indexes the coordinate of ``x``."""
    columns = []
    for i in range(x.shape[0]):
        step = np.zeros_like(x)
        step[i] = h
        plus = np.asarray(func(x + step), dtype=np.float64)
        minus = np.asarray(func(x - step), dtype=np.float64)
        columns.append((plus - minus) / (2.0 * h))
    return np.array(columns, dtype=np.float64)


def fd_gradient(A: Matrix, b: Vector, x: Vector, h: float = 1e-5) -> Vector:
    low, high = FD_STEP_RANGE
    if not low <= h <= high:
        raise ValueError(f"h must lie in [{low:g}, {high:g}]")
    return central_difference(lambda point: loss(A, point, b), x, h)


def richardson_gradient(A: Matrix, b: Vector, x: Vector, h: float = 1e-5) -> Vector:
    """Second oracle: ``(4 D(h/2) - D(h)) / 3`` cancels the O(h^2) term."""
    coarse = fd_gradient(A, b, x, h)
    fine = central_difference(lambda point: loss(A, point, b), x, 0.5 * h)
    return (4.0 * fine - coarse) / 3.0


def _decimal_softmax(logits: Sequence[Decimal]) -> list[Decimal]:
    top = max(logits)
    weights = [(value - top).exp() for value in logits]
    total = sum(weights, Decimal(0))
    return [weight / total for weight in weights]


def _decimal_logits(A: Matrix, x: Vector) -> list[Decimal]:
    xs = [Decimal(float(value)) for value in x]
    return [
        sum((Decimal(float(a)) * xv for a, xv in zip(row, xs)), Decimal(0))
        for row in A
    ]


def highprec_delta_b(pair: ShiftPair) -> Vector:
    if pair.n * pair.d > HIGHPREC_MAX_ENTRIES:
        raise ScaleExceeded(
            f"n*d = {pair.n * pair.d} exceeds {HIGHPREC_MAX_ENTRIES} for the decimal oracle"
        )
    with localcontext() as ctx:
        ctx.prec = HIGHPREC_DIGITS
        if isinstance(pair, WeightShift):
            current = _decimal_logits(pair.A, pair.x_t)
            following = _decimal_logits(pair.A, pair.x_next)
        elif isinstance(pair, DataShift):
            current = _decimal_logits(pair.A_t, pair.x)
            following = _decimal_logits(pair.A_next, pair.x)
        else:
            raise TypeError(f"unsupported pair type {type(pair).__name__}")
        f_t = _decimal_softmax(current)
        f_next = _decimal_softmax(following)
        delta = [after - before for after, before in zip(f_next, f_t)]
    logger.debug("decimal oracle evaluated n=%d d=%d", pair.n, pair.d)
    return np.array([float(value) for value in delta], dtype=np.float64)
