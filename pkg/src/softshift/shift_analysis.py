from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from enum import Enum
from typing import Union

import numpy as np
from scipy.special import logsumexp, softmax

from .numkit import (
    DimensionMismatch,
    Matrix,
    Vector,
    as_matrix,
    as_vector,
    l2_norm,
    linf_norm,
    safe_log,
    spectral_norm,
)

STEP_CAP = 0.01
THEOREM_MIN_R = 4.0
NORM_SLACK = 1e-12
LOG_TOLERANCE = 1e-12

_LN2 = math.log(2.0)
_LN4 = math.log(4.0)


class PreconditionViolation(RuntimeError):
    def __init__(self, hypothesis: str, message: str) -> None:
        super().__init__(f"{hypothesis}: {message}")
        self.hypothesis = hypothesis


class ShiftKind(str, Enum):
    WEIGHT = "weight"
    DATA = "data"


class BetaMode(str, Enum):
    FLOOR = "floor"
    EMPIRICAL = "empirical"


def _within_radius(value: float, radius: float) -> bool:
    return value <= radius * (1.0 + NORM_SLACK)


def _check_shapes(matrices: tuple[Matrix, ...], vectors: tuple[Vector, ...]) -> None:
    try:
        for m in matrices:
            as_matrix(m)
        for v in vectors:
            as_vector(v)
    except DimensionMismatch as exc:
        raise PreconditionViolation("dimensions", str(exc)) from exc


@dataclass(frozen=True)
class WeightShift:
    """Iterates ``x_t -> x_next`` on a fixed document ``A``."""

    A: Matrix
    b: Vector
    x_t: Vector
    x_next: Vector
    R: float
    kind: ShiftKind = field(default=ShiftKind.WEIGHT, init=False)

    @property
    def n(self) -> int:
        return int(self.A.shape[0])

    @property
    def d(self) -> int:
        return int(self.A.shape[1])

    def logits(self) -> tuple[Vector, Vector]:
        return self.A @ self.x_t, self.A @ self.x_next

    def logit_shift(self) -> Vector:
        return self.A @ (self.x_next - self.x_t)

    def shift_norm(self) -> float:
        return l2_norm(self.x_next - self.x_t)

    def swapped(self) -> WeightShift:
        return replace(self, x_t=self.x_next, x_next=self.x_t)

    def validate(self) -> None:
        _check_shapes((self.A,), (self.b, self.x_t, self.x_next))
        if self.b.shape != (self.n,):
            raise PreconditionViolation("dimensions", f"b has length {self.b.shape[0]}")
        if self.x_t.shape != (self.d,) or self.x_next.shape != (self.d,):
            raise PreconditionViolation("dimensions", "iterates must have length d")
        if linf_norm(self.logit_shift()) >= STEP_CAP:
            raise PreconditionViolation("step_cap", f"||A(x_next - x_t)||_inf >= {STEP_CAP}")
        if not _within_radius(spectral_norm(self.A), self.R):
            raise PreconditionViolation("norm_A", f"||A|| exceeds R={self.R}")
        if not _within_radius(l2_norm(self.x_t), self.R):
            raise PreconditionViolation("norm_x", f"||x_t||_2 exceeds R={self.R}")
        if not _within_radius(l2_norm(self.x_next), self.R):
            raise PreconditionViolation("norm_x", f"||x_next||_2 exceeds R={self.R}")


@dataclass(frozen=True)
class DataShift:
    """Documents ``A_t -> A_next`` under a fixed weight ``x``."""

    A_t: Matrix
    A_next: Matrix
    b: Vector
    x: Vector
    R: float
    kind: ShiftKind = field(default=ShiftKind.DATA, init=False)

    @property
    def n(self) -> int:
        return int(self.A_t.shape[0])

    @property
    def d(self) -> int:
        return int(self.A_t.shape[1])

    def logits(self) -> tuple[Vector, Vector]:
        return self.A_t @ self.x, self.A_next @ self.x

    def logit_shift(self) -> Vector:
        return (self.A_next - self.A_t) @ self.x

    def shift_norm(self) -> float:
        return spectral_norm(self.A_next - self.A_t)

    def swapped(self) -> DataShift:
        return replace(self, A_t=self.A_next, A_next=self.A_t)

    def validate(self) -> None:
        _check_shapes((self.A_t, self.A_next), (self.b, self.x))
        if self.A_next.shape != self.A_t.shape:
            raise PreconditionViolation("dimensions", "A_t and A_next differ in shape")
        if self.b.shape != (self.n,) or self.x.shape != (self.d,):
            raise PreconditionViolation("dimensions", "b or x has the wrong length")
        if linf_norm(self.logit_shift()) >= STEP_CAP:
            raise PreconditionViolation("step_cap", f"||(A_next - A_t)x||_inf >= {STEP_CAP}")
        if not _within_radius(spectral_norm(self.A_t), self.R):
            raise PreconditionViolation("norm_A", f"||A_t|| exceeds R={self.R}")
        if not _within_radius(spectral_norm(self.A_next), self.R):
            raise PreconditionViolation("norm_A", f"||A_next|| exceeds R={self.R}")
        if not _within_radius(l2_norm(self.x), self.R):
            raise PreconditionViolation("norm_x", f"||x||_2 exceeds R={self.R}")


ShiftPair = Union[WeightShift, DataShift]


@dataclass(frozen=True)
class ShiftQuantities:
    """Everything derived from one pair, evaluated from the logit shift ``dz``.

    With ``L = log(alpha_next / alpha_t) = log1p(<f_t, expm1(dz)>)``:

    - ``delta_b = f_t * expm1(dz - L)``
    - ``delta_b1 = -f_next * expm1(L)``
    - ``delta_b2 = f_t * expm1(dz)``
    """

    f_t: Vector
    f_next: Vector
    dz: Vector
    log_alpha_t: float
    log_alpha_next: float
    log_ratio: float
    delta_b: Vector
    delta_b1: Vector
    delta_b2: Vector

    @property
    def log_delta_exp(self) -> float:
        return self.log_alpha_t + safe_log(l2_norm(self.delta_b2))

    @property
    def log_delta_alpha(self) -> float:
        return self.log_alpha_t + safe_log(abs(math.expm1(self.log_ratio)))

    @property
    def log_delta_alpha_inv(self) -> float:
        return -self.log_alpha_t + safe_log(abs(math.expm1(-self.log_ratio)))


def _one_sided_shift(f: Vector, dz: Vector) -> tuple[float, Vector]:
    log_ratio = math.log1p(float(f @ np.expm1(dz)))
    return log_ratio, f * np.expm1(dz - log_ratio)


def shift_quantities(pair: ShiftPair) -> ShiftQuantities:
    z_t, z_next = pair.logits()
    dz = pair.logit_shift()
    f_t = np.asarray(softmax(z_t), dtype=np.float64)
    f_next = np.asarray(softmax(z_next), dtype=np.float64)
    log_ratio, forward = _one_sided_shift(f_t, dz)
    if pair.n == 1:
        delta_b = np.zeros(1)
    else:
        _, backward = _one_sided_shift(f_next, -dz)
        delta_b = 0.5 * (forward - backward)
    return ShiftQuantities(
        f_t=f_t,
        f_next=f_next,
        dz=dz,
        log_alpha_t=float(logsumexp(z_t)),
        log_alpha_next=float(logsumexp(z_next)),
        log_ratio=log_ratio,
        delta_b=delta_b,
        delta_b1=-f_next * math.expm1(log_ratio),
        delta_b2=f_t * np.expm1(dz),
    )


@dataclass(frozen=True)
class BoundContext:
    n: int
    R: float
    log_beta: float
    theorem_mode: bool = True

    @classmethod
    def for_pair(
        cls,
        pair: ShiftPair,
        *,
        beta_mode: BetaMode = BetaMode.FLOOR,
        theorem_mode: bool = True,
    ) -> BoundContext:
        """Context with the analytic floor or the measured normalizer floor.

        The measured floor is clamped to ``beta <= 1``, which the ``delta_b`` bound
        needs to absorb ``beta**-1`` into ``beta**-2``.
        """
        if beta_mode is BetaMode.FLOOR:
            log_beta = beta_floor(pair.R)
        else:
            quantities = shift_quantities(pair)
            log_beta = min(0.0, quantities.log_alpha_t, quantities.log_alpha_next)
        return cls(n=pair.n, R=pair.R, log_beta=log_beta, theorem_mode=theorem_mode)


@dataclass(frozen=True)
class Certificate:
    n: int
    R: float
    log_M: float


@dataclass(frozen=True)
class Check:
    log_actual: float
    log_bound: float
    required: bool = True

    @property
    def satisfied(self) -> bool:
        return bool(self.log_actual <= self.log_bound + LOG_TOLERANCE)

    @property
    def slack(self) -> float:
        if self.log_actual == -math.inf:
            return math.inf
        return self.log_bound - self.log_actual


@dataclass(frozen=True)
class ShiftReport:
    kind: ShiftKind
    delta_b: Vector
    delta_b1: Vector
    delta_b2: Vector
    shift_norm: float
    log_actual: float
    log_bound_exp: float
    log_bound_alpha: float
    log_bound_alpha_inv: float
    log_bound_db1: float
    log_bound_db2: float
    log_bound_db: float
    log_certificate: float
    slack_log: float
    checks: dict[str, Check]

    @property
    def satisfied(self) -> dict[str, bool]:
        return {name: check.satisfied for name, check in self.checks.items()}

    @property
    def all_required_satisfied(self) -> bool:
        return all(check.satisfied for check in self.checks.values() if check.required)


def delta_b_exact(pair: ShiftPair) -> Vector:
    pair.validate()
    return shift_quantities(pair).delta_b


def delta_b_split(pair: ShiftPair) -> tuple[Vector, Vector]:
    pair.validate()
    quantities = shift_quantities(pair)
    return quantities.delta_b1, quantities.delta_b2


def beta_floor(R: float) -> float:
    if R <= 0:
        raise ValueError("R must be positive")
    return -(R * R)


def _log_bound_exp(n: int, R: float, log_shift: float) -> float:
    return _LN2 + 0.5 * math.log(n) + math.log(R) + R * R + log_shift


def _log_bound_alpha(log_delta_exp: float, n: int) -> float:
    return log_delta_exp + 0.5 * math.log(n)


def _log_bound_alpha_inv(log_delta_alpha: float, log_beta: float) -> float:
    return -2.0 * log_beta + log_delta_alpha


def _check_context(pair: ShiftPair, ctx: BoundContext) -> None:
    if ctx.n != pair.n:
        raise PreconditionViolation("context", f"context n={ctx.n} but pair n={pair.n}")
    if not math.isfinite(ctx.log_beta):
        raise PreconditionViolation("beta", "log_beta must be finite")
    if ctx.theorem_mode and ctx.R < THEOREM_MIN_R:
        raise PreconditionViolation("radius", f"R >= {THEOREM_MIN_R:g} required in theorem mode")


def bound_exp_shift(pair: ShiftPair, ctx: BoundContext) -> float:
    pair.validate()
    return _log_bound_exp(ctx.n, ctx.R, safe_log(pair.shift_norm()))


def bound_alpha_shift(delta_exp_norm: float, n: int) -> float:
    if n < 1:
        raise ValueError("n must be >= 1")
    return _log_bound_alpha(safe_log(delta_exp_norm), n)


def bound_alpha_inv_shift(delta_alpha: float, ctx: BoundContext) -> float:
    if not math.isfinite(ctx.log_beta):
        raise ValueError("log_beta must be finite")
    return _log_bound_alpha_inv(safe_log(delta_alpha), ctx.log_beta)


def _part_bounds(
    n: int, R: float, log_beta: float, log_shift: float
) -> tuple[float, float, float, float]:
    common = _LN2 + math.log(R) + log_shift
    part1 = common - 2.0 * log_beta + 1.5 * math.log(n) + 2.0 * R * R
    part2 = common - log_beta + 0.5 * math.log(n) + 2.0 * R * R
    part1_stated = part1 - math.log(R)
    part2_stated = part2 - R * R
    return part1, part2, part1_stated, part2_stated


def bound_delta_b_parts(pair: ShiftPair, ctx: BoundContext) -> tuple[float, float]:
    pair.validate()
    _check_context(pair, ctx)
    part1, part2, _, _ = _part_bounds(ctx.n, ctx.R, ctx.log_beta, safe_log(pair.shift_norm()))
    return part1, part2


def _log_bound_delta_b(n: int, R: float, log_beta: float, log_shift: float) -> float:
    return _LN4 - 2.0 * log_beta + 1.5 * math.log(n) + math.log(R) + 2.0 * R * R + log_shift


def bound_delta_b(pair: ShiftPair, ctx: BoundContext) -> float:
    pair.validate()
    _check_context(pair, ctx)
    return _log_bound_delta_b(ctx.n, ctx.R, ctx.log_beta, safe_log(pair.shift_norm()))


def certificate_logM(n: int, R: float) -> Certificate:  # noqa: N802
    if n < 1:
        raise PreconditionViolation("dimensions", "n must be >= 1")
    if R < THEOREM_MIN_R:
        raise PreconditionViolation("radius", f"R >= {THEOREM_MIN_R:g} required in theorem mode")
    return Certificate(n=n, R=R, log_M=10.0 * R * R + 1.5 * math.log(n))


def analyze_shift(pair: ShiftPair, ctx: BoundContext) -> ShiftReport:
    """Evaluate every lemma bound for ``pair``; the certificate is included when R >= 4."""
    pair.validate()
    _check_context(pair, ctx)
    quantities = shift_quantities(pair)
    floor = min(quantities.log_alpha_t, quantities.log_alpha_next)
    if ctx.log_beta > floor + LOG_TOLERANCE:
        raise PreconditionViolation("beta", "log_beta exceeds log alpha at an iterate")

    n, R = ctx.n, ctx.R
    shift_norm = pair.shift_norm()
    log_shift = safe_log(shift_norm)
    log_actual = safe_log(l2_norm(quantities.delta_b))

    log_bound_exp = _log_bound_exp(n, R, log_shift)
    log_bound_alpha = _log_bound_alpha(quantities.log_delta_exp, n)
    log_bound_alpha_inv = _log_bound_alpha_inv(quantities.log_delta_alpha, ctx.log_beta)
    part1, part2, part1_stated, part2_stated = _part_bounds(n, R, ctx.log_beta, log_shift)
    log_bound_db = _log_bound_delta_b(n, R, ctx.log_beta, log_shift)
    log_db1 = safe_log(l2_norm(quantities.delta_b1))
    log_db2 = safe_log(l2_norm(quantities.delta_b2))

    checks = {
        "exp_shift": Check(quantities.log_delta_exp, log_bound_exp),
        "alpha_shift": Check(quantities.log_delta_alpha, log_bound_alpha),
        "alpha_inv_shift": Check(quantities.log_delta_alpha_inv, log_bound_alpha_inv),
        "delta_b1": Check(log_db1, part1),
        "delta_b2": Check(log_db2, part2),
        "delta_b1_stated": Check(log_db1, part1_stated, required=False),
        "delta_b2_stated": Check(log_db2, part2_stated, required=False),
        "delta_b": Check(log_actual, log_bound_db),
    }
    log_certificate = math.nan
    if R >= THEOREM_MIN_R:
        log_certificate = certificate_logM(n, R).log_M + log_shift
        checks["bound_vs_certificate"] = Check(log_bound_db, log_certificate)
        checks["certificate"] = Check(log_actual, log_certificate)

    return ShiftReport(
        kind=pair.kind,
        delta_b=quantities.delta_b,
        delta_b1=quantities.delta_b1,
        delta_b2=quantities.delta_b2,
        shift_norm=shift_norm,
        log_actual=log_actual,
        log_bound_exp=log_bound_exp,
        log_bound_alpha=log_bound_alpha,
        log_bound_alpha_inv=log_bound_alpha_inv,
        log_bound_db1=part1,
        log_bound_db2=part2,
        log_bound_db=log_bound_db,
        log_certificate=log_certificate,
        slack_log=checks["delta_b"].slack,
        checks=checks,
    )


def check_theorem(pair: ShiftPair, ctx: BoundContext) -> ShiftReport:
    if ctx.R < THEOREM_MIN_R:
        raise PreconditionViolation("radius", f"R >= {THEOREM_MIN_R:g} required in theorem mode")
    return analyze_shift(pair, replace(ctx, theorem_mode=True))
