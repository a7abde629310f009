"""Seeded instance sampling and the verification suites built on it."""

from __future__ import annotations

import logging
import math
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Callable, TypeVar

import numpy as np

from .config import SampleConfig
from .numkit import (
    Matrix,
    RngStream,
    Vector,
    exp_elementwise,
    hadamard,
    l2_norm,
    linf_norm,
    safe_log,
    spectral_norm,
)
from .oracles import (
    HIGHPREC_MAX_ENTRIES,
    HarnessError,
    ScaleExceeded,
    central_difference,
    fd_gradient,
    highprec_delta_b,
    richardson_gradient,
)
from .report import SuiteReport, TrialRecord
from .shift_analysis import (
    STEP_CAP,
    BoundContext,
    Check,
    DataShift,
    PreconditionViolation,
    ShiftKind,
    ShiftPair,
    WeightShift,
    analyze_shift,
    check_theorem,
    shift_quantities,
)
from .softmax_core import (
    Instance,
    alpha,
    grad_alpha,
    grad_alpha_inv,
    gradient,
    gradient_as_written,
    jacobian_predict,
    jvp_exp,
    predict,
)

__all__ = [
    "SUITES",
    "HarnessError",
    "SampleConfig",
    "SamplerExhausted",
    "ScaleExceeded",
    "fd_gradient",
    "highprec_delta_b",
    "execute_trials",
    "run_suite",
    "sample_instance",
    "sample_problem",
]

logger = logging.getLogger(__name__)

MAX_REJECTIONS = 100
X_RADIUS_FRACTION = 0.9
MIN_NORM_FRACTION = 0.2
GRADIENT_REL_TOL = 1e-6
GRADIENT_REL_FLOOR = 1e-3
PARTS_REL_TOL = 1e-5
IDENTITY_REL_TOL = 1e-12
HIGHPREC_ABS_TOL = 1e-9
FACT_PERTURBATION = 0.01

_LN2 = math.log(2.0)


class SamplerExhausted(HarnessError):
    def __init__(self, trial_index: int, message: str) -> None:
        super().__init__(f"trial {trial_index}: {message}")
        self.trial_index = trial_index


@dataclass(frozen=True)
class _Problem:
    A: Matrix
    b: Vector
    x: Vector


def _draw_dims(rng: np.random.Generator, config: SampleConfig) -> tuple[int, int]:
    n = int(rng.integers(config.n_range[0], config.n_range[1], endpoint=True))
    d = int(rng.integers(config.d_range[0], config.d_range[1], endpoint=True))
    return n, d


def _unit_direction(rng: np.random.Generator, size: int) -> Vector | None:
    v = rng.standard_normal(size)
    norm = l2_norm(v)
    return v / norm if norm > 0 else None


def _draw_target(rng: np.random.Generator, config: SampleConfig, n: int) -> Vector:
    if config.b_mode == "simplex":
        return rng.dirichlet(np.ones(n))
    if config.b_mode == "box01":
        return rng.uniform(0.0, 1.0, size=n)
    return rng.standard_normal(n)


def _draw_problem(rng: np.random.Generator, config: SampleConfig) -> _Problem | None:
    n, d = _draw_dims(rng, config)
    A = rng.standard_normal((n, d))
    norm = spectral_norm(A)
    direction = _unit_direction(rng, d)
    if norm == 0.0 or direction is None:
        return None
    # u uniform in (MIN_NORM_FRACTION, 1]
    u = 1.0 - rng.uniform(0.0, 1.0 - MIN_NORM_FRACTION)
    A = A * (u * config.R / norm)
    radius = X_RADIUS_FRACTION * config.R * rng.uniform() ** (1.0 / d)
    x = direction * radius
    return _Problem(A=A, b=_draw_target(rng, config, n), x=x)


def _project_to_ball(x: Vector, radius: float) -> Vector:
    norm = l2_norm(x)
    if norm <= radius:
        return x
    return x * (radius / norm)


def _draw_pair(rng: np.random.Generator, config: SampleConfig) -> ShiftPair | None:
    problem = _draw_problem(rng, config)
    if problem is None:
        return None
    target = config.rho * STEP_CAP
    if config.shift_kind is ShiftKind.WEIGHT:
        direction = _unit_direction(rng, problem.x.shape[0])
        if direction is None:
            return None
        reach = linf_norm(problem.A @ direction)
        if reach == 0.0:
            return None
        x_next = _project_to_ball(problem.x + direction * (target / reach), config.R)
        return WeightShift(A=problem.A, b=problem.b, x_t=problem.x, x_next=x_next, R=config.R)

    G = rng.standard_normal(problem.A.shape)
    reach = linf_norm(G @ problem.x)
    if reach == 0.0:
        return None
    return DataShift(
        A_t=problem.A,
        A_next=problem.A + G * (target / reach),
        b=problem.b,
        x=problem.x,
        R=config.R,
    )


def sample_instance(config: SampleConfig, trial_index: int) -> ShiftPair:
    """Draw the pair for ``trial_index``; identical inputs give a bit-identical pair."""
    rng = RngStream(config.master_seed, trial_index).generator()
    for attempt in range(MAX_REJECTIONS):
        pair = _draw_pair(rng, config)
        if pair is None:
            continue
        try:
            pair.validate()
        except PreconditionViolation as exc:
            logger.debug("trial %d attempt %d rejected: %s", trial_index, attempt, exc)
            continue
        return pair
    raise SamplerExhausted(trial_index, f"no valid pair after {MAX_REJECTIONS} draws")


def _sample_problem(config: SampleConfig, trial_index: int) -> _Problem:
    rng = RngStream(config.master_seed, trial_index).generator()
    for _ in range(MAX_REJECTIONS):
        problem = _draw_problem(rng, config)
        if problem is not None:
            return problem
    raise SamplerExhausted(trial_index, f"no valid instance after {MAX_REJECTIONS} draws")


def sample_problem(config: SampleConfig, trial_index: int) -> tuple[Instance, Vector]:
    """A regression instance and a starting weight inside the ``0.9 R`` ball."""
    problem = _sample_problem(config, trial_index)
    return Instance(A=problem.A, b=problem.b, R=config.R), problem.x


def _relative_error(analytic: np.ndarray, numeric: np.ndarray, floor: float) -> float:
    scale = np.maximum(np.abs(numeric), floor)
    return float(np.max(np.abs(analytic - numeric) / scale))


def _scaled_error(analytic: np.ndarray, numeric: np.ndarray) -> float:
    floor = GRADIENT_REL_FLOOR * max(1.0, float(np.max(np.abs(numeric))))
    return _relative_error(analytic, numeric, floor)


def _gradient_trial(config: SampleConfig, trial_index: int) -> TrialRecord:
    start = time.perf_counter()
    problem = _sample_problem(config, trial_index)
    A, b, x, h = problem.A, problem.b, problem.x, config.h
    d = x.shape[0]

    numeric = fd_gradient(A, b, x, h)
    max_rel_err = _relative_error(gradient(A, x, b), numeric, GRADIENT_REL_FLOOR)
    richardson_err = _relative_error(
        gradient(A, x, b), richardson_gradient(A, b, x, h), GRADIENT_REL_FLOOR
    )
    as_written_err = _relative_error(gradient_as_written(A, x, b), numeric, GRADIENT_REL_FLOOR)

    basis = np.eye(d)
    jvp = np.array([jvp_exp(A, x, basis[i]) for i in range(d)])
    parts = {
        "jvp_exp": _scaled_error(jvp, central_difference(lambda p: exp_elementwise(A @ p), x, h)),
        "grad_alpha": _scaled_error(
            grad_alpha(A, x), central_difference(lambda p: alpha(A, p), x, h)
        ),
        "grad_alpha_inv": _scaled_error(
            grad_alpha_inv(A, x), central_difference(lambda p: 1.0 / alpha(A, p), x, h)
        ),
        "jacobian_predict": _scaled_error(
            jacobian_predict(A, x).T, central_difference(lambda p: predict(A, p), x, h)
        ),
    }

    log_tol = math.log(GRADIENT_REL_TOL)
    checks = {
        "gradient": Check(safe_log(max_rel_err), log_tol),
        "gradient_richardson": Check(safe_log(richardson_err), log_tol, required=False),
        "gradient_as_written": Check(safe_log(as_written_err), log_tol, required=False),
    }
    for name, err in parts.items():
        checks[name] = Check(safe_log(err), math.log(PARTS_REL_TOL))
    metrics = {
        "max_rel_err": max_rel_err,
        "richardson_rel_err": richardson_err,
        "as_written_rel_err": as_written_err,
    }
    return TrialRecord.from_checks(
        trial_index=trial_index,
        n=A.shape[0],
        d=d,
        R=config.R,
        shift_norm=0.0,
        checks=checks,
        primary="gradient",
        metrics=metrics,
        wall_time=time.perf_counter() - start,
    )


def _facts_trial(config: SampleConfig, trial_index: int) -> TrialRecord:
    start = time.perf_counter()
    rng = RngStream(config.master_seed, trial_index).generator()
    n = int(rng.integers(config.n_range[0], config.n_range[1], endpoint=True))
    x = rng.standard_normal(n)
    y = rng.standard_normal(n)
    z = x + FACT_PERTURBATION * rng.uniform(-1.0, 1.0, size=n)
    gap = linf_norm(x - z)
    exp_x = exp_elementwise(x)

    checks = {
        "hadamard": Check(
            safe_log(l2_norm(hadamard(x, y))), safe_log(linf_norm(x)) + safe_log(l2_norm(y))
        ),
        "linf_le_l2": Check(safe_log(linf_norm(x)), safe_log(l2_norm(x))),
        "l2_le_sqrtn_linf": Check(
            safe_log(l2_norm(x)), 0.5 * math.log(n) + safe_log(linf_norm(x))
        ),
        "exp_linf": Check(safe_log(linf_norm(exp_x)), l2_norm(x)),
        "exp_perturbation": Check(
            safe_log(l2_norm(exp_x - exp_elementwise(z))),
            safe_log(l2_norm(exp_x)) + _LN2 + safe_log(gap),
        ),
    }
    return TrialRecord.from_checks(
        trial_index=trial_index,
        n=n,
        d=0,
        R=config.R,
        shift_norm=gap,
        checks=checks,
        primary="exp_perturbation",
        wall_time=time.perf_counter() - start,
    )


def _beta_check(pair: ShiftPair) -> Check:
    quantities = shift_quantities(pair)
    floor = min(quantities.log_alpha_t, quantities.log_alpha_next)
    return Check(-(pair.R * pair.R), floor)


def _beta_trial(config: SampleConfig, trial_index: int) -> TrialRecord:
    start = time.perf_counter()
    pair = sample_instance(config, trial_index)
    return TrialRecord.from_checks(
        trial_index=trial_index,
        n=pair.n,
        d=pair.d,
        R=pair.R,
        shift_norm=pair.shift_norm(),
        checks={"beta": _beta_check(pair)},
        primary="beta",
        wall_time=time.perf_counter() - start,
    )


def _identity_checks(pair: ShiftPair) -> tuple[dict[str, Check], dict[str, float]]:
    quantities = shift_quantities(pair)
    delta_b = quantities.delta_b
    split_scale = l2_norm(quantities.delta_b1) + l2_norm(quantities.delta_b2)
    split_gap = l2_norm(quantities.delta_b1 + quantities.delta_b2 - delta_b)
    split_err = split_gap / split_scale if split_scale > 0 else split_gap

    after = l2_norm(quantities.f_next - pair.b)
    induced = l2_norm(quantities.f_t - pair.b + delta_b)
    defining_scale = max(after, induced)
    defining_err = abs(after - induced) / defining_scale if defining_scale > 0 else 0.0

    mirrored = shift_quantities(pair.swapped()).delta_b
    log_tol = math.log(IDENTITY_REL_TOL)
    checks = {
        "split_identity": Check(safe_log(split_err), log_tol),
        "defining_identity": Check(safe_log(defining_err), log_tol),
        "symmetry": Check(safe_log(l2_norm(delta_b + mirrored)), -math.inf),
        "beta": _beta_check(pair),
    }
    metrics = {"split_rel_err": split_err, "defining_rel_err": defining_err}
    if pair.n * pair.d <= HIGHPREC_MAX_ENTRIES:
        highprec_err = linf_norm(delta_b - highprec_delta_b(pair))
        checks["highprec_oracle"] = Check(safe_log(highprec_err), math.log(HIGHPREC_ABS_TOL))
        metrics["highprec_abs_err"] = highprec_err
    return checks, metrics


def _shift_trial(
    config: SampleConfig, trial_index: int, *, theorem: bool
) -> tuple[TrialRecord, list[str]]:
    start = time.perf_counter()
    pair = sample_instance(config, trial_index)
    ctx = BoundContext.for_pair(pair, beta_mode=config.beta_mode, theorem_mode=theorem)
    report = check_theorem(pair, ctx) if theorem else analyze_shift(pair, ctx)
    identity_checks, metrics = _identity_checks(pair)
    checks = {**report.checks, **identity_checks}
    metrics["log_beta"] = ctx.log_beta
    advisory = [name for name, check in checks.items() if not check.required]
    record = TrialRecord.from_checks(
        trial_index=trial_index,
        n=pair.n,
        d=pair.d,
        R=pair.R,
        shift_norm=report.shift_norm,
        checks=checks,
        primary="certificate" if theorem else "delta_b",
        metrics=metrics,
        wall_time=time.perf_counter() - start,
    )
    return record, advisory


_TrialFn = Callable[[SampleConfig, int], tuple[TrialRecord, list[str]]]


def _plain(fn: Callable[[SampleConfig, int], TrialRecord], advisory: list[str]) -> _TrialFn:
    return lambda config, index: (fn(config, index), advisory)


def _shift(theorem: bool) -> _TrialFn:
    return lambda config, index: _shift_trial(config, index, theorem=theorem)


_SUITES: dict[str, tuple[str, ShiftKind | None, _TrialFn]] = {
    "gradient": (
        "gradient",
        None,
        _plain(_gradient_trial, ["gradient_as_written", "gradient_richardson"]),
    ),
    "facts": ("exp_perturbation", None, _plain(_facts_trial, [])),
    "lemmas_x": ("delta_b", ShiftKind.WEIGHT, _shift(False)),
    "lemmas_A": ("delta_b", ShiftKind.DATA, _shift(False)),
    "theorem_x": ("certificate", ShiftKind.WEIGHT, _shift(True)),
    "theorem_A": ("certificate", ShiftKind.DATA, _shift(True)),
    "beta": ("beta", None, _plain(_beta_trial, [])),
}
SUITES = tuple(_SUITES)

T = TypeVar("T")


def execute_trials(config: SampleConfig, trial_fn: Callable[[SampleConfig, int], T]) -> list[T]:
    """Run ``trial_fn`` for every trial index, in index order regardless of ``workers``."""

    def run_trial(index: int) -> T:
        return trial_fn(config, index)

    indices = range(config.trials)
    if config.workers > 1:
        with ThreadPoolExecutor(max_workers=config.workers) as executor:
            return list(executor.map(run_trial, indices))
    return [run_trial(index) for index in indices]


def run_suite(suite_name: str, config: SampleConfig) -> SuiteReport:
    """Run ``config.trials`` seeded trials of ``suite_name`` and summarize them.

    Records depend only on ``(master_seed, trial_index)``, so the report is the
    same for any number of workers.
    """
    if suite_name not in _SUITES:
        raise ValueError(f"unknown suite {suite_name!r}; expected one of {', '.join(SUITES)}")
    primary, kind, trial_fn = _SUITES[suite_name]
    if kind is not None and config.shift_kind is not kind:
        config = config.model_copy(update={"shift_kind": kind})

    logger.info(
        "suite %s: %d trials, seed %d, %d worker(s)",
        suite_name,
        config.trials,
        config.master_seed,
        config.workers,
    )

    results = execute_trials(config, trial_fn)
    advisory = sorted({name for _, names in results for name in names})
    report = SuiteReport.assemble(
        suite=suite_name,
        primary=primary,
        config=config.model_dump(mode="json"),
        records=[record for record, _ in results],
        advisory=advisory,
    )
    logger.info(
        "suite %s finished: failed=%s min_slack_log[%s]=%s",
        suite_name,
        report.summary.failed or "none",
        primary,
        report.summary.min_slack_log.get(primary),
    )
    return report
