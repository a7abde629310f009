"""Gradient-descent trajectories, induced targets and single attention-layer updates.

A token is a row ``(a_j, b_j)`` of length ``d + 1``; the target sits in the last
("b") channel and the query token's b-channel starts at zero.
"""

from __future__ import annotations

import json
import logging
import math
import time
from dataclasses import dataclass, field
from typing import Any, Sequence

import numpy as np
from scipy.special import softmax

from .config import GDConfig, SampleConfig
from .harness import execute_trials, sample_problem
from .numkit import (
    DimensionMismatch,
    Matrix,
    RngStream,
    Vector,
    l2_norm,
    linf_norm,
    safe_log,
)
from .report import SuiteReport, TrialRecord, encode_float
from .shift_analysis import (
    THEOREM_MIN_R,
    Check,
    DataShift,
    PreconditionViolation,
    ShiftPair,
    WeightShift,
    certificate_logM,
    shift_quantities,
)
from .softmax_core import Instance, gradient, loss

logger = logging.getLogger(__name__)

LOSS_TOLERANCE = 1e-12
BACKTRACK_HALVINGS = 40
EQUIVALENCE_ABS_TOL = 1e-9
IDENTITY_REL_TOL = 1e-12


def _sign(config: GDConfig) -> float:
    return -1.0 if config.sign == "descent" else 1.0


def _gd_update(instance: Instance, x: Vector, config: GDConfig) -> tuple[Vector, float]:
    """One update and the learning rate actually applied (0 when backtracking gave up)."""
    step = _sign(config) * gradient(instance.A, x, instance.b)
    eta = config.eta
    if not config.backtracking:
        return x + eta * step, eta
    base = loss(instance.A, x, instance.b)
    for _ in range(BACKTRACK_HALVINGS + 1):
        candidate = x + eta * step
        if loss(instance.A, candidate, instance.b) <= base + LOSS_TOLERANCE:
            return candidate, eta
        eta *= 0.5
    logger.debug("backtracking reached its floor; step rejected")
    return x.copy(), 0.0


def gd_step(instance: Instance, x: Vector, config: GDConfig) -> Vector:
    if not (np.all(np.isfinite(instance.A)) and np.all(np.isfinite(x))):
        raise ValueError("instance and x must be finite")
    return _gd_update(instance, x, config)[0]


def induced_target(instance: Instance, x_t: Vector, x_next: Vector) -> Vector:
    """``b - delta_b``: the target under which ``x_t`` scores what ``x_next`` scores on ``b``."""
    pair = WeightShift(A=instance.A, b=instance.b, x_t=x_t, x_next=x_next, R=instance.R)
    pair.validate()
    return instance.b - shift_quantities(pair).delta_b


@dataclass(frozen=True)
class TrajectoryStep:
    step: int
    x: Vector
    loss: float
    b_tilde: Vector
    delta_b_norm: float
    log_bound: float | None
    metrics: dict[str, float] = field(default_factory=dict)

    def to_dict(self) -> dict[str, Any]:
        return {
            "step": self.step,
            "x": [float(v) for v in self.x],
            "loss": encode_float(self.loss),
            "b_tilde": [float(v) for v in self.b_tilde],
            "delta_b_norm": encode_float(self.delta_b_norm),
            "log_bound": None if self.log_bound is None else encode_float(self.log_bound),
            "metrics": {k: encode_float(v) for k, v in sorted(self.metrics.items())},
        }


def trajectory_to_json(steps: Sequence[TrajectoryStep]) -> str:
    return json.dumps([step.to_dict() for step in steps], indent=2, sort_keys=True) + "\n"


def _certified_log_bound(pair: ShiftPair) -> float | None:
    """``log_M + ln(shift)`` when the pair meets the certificate hypotheses."""
    if pair.R < THEOREM_MIN_R:
        return None
    try:
        pair.validate()
    except PreconditionViolation:
        return None
    return certificate_logM(pair.n, pair.R).log_M + safe_log(pair.shift_norm())


def gd_trajectory(instance: Instance, x0: Vector, config: GDConfig) -> list[TrajectoryStep]:
    x = x0.copy()
    start = TrajectoryStep(
        step=0,
        x=x,
        loss=loss(instance.A, x, instance.b),
        b_tilde=instance.b.copy(),
        delta_b_norm=0.0,
        log_bound=None,
    )
    steps = [start]
    for index in range(1, config.steps + 1):
        x_next, eta_used = _gd_update(instance, x, config)
        pair = WeightShift(A=instance.A, b=instance.b, x_t=x, x_next=x_next, R=instance.R)
        delta_b = shift_quantities(pair).delta_b
        steps.append(
            TrajectoryStep(
                step=index,
                x=x_next,
                loss=loss(instance.A, x_next, instance.b),
                b_tilde=instance.b - delta_b,
                delta_b_norm=l2_norm(delta_b),
                log_bound=_certified_log_bound(pair),
                metrics={"eta": eta_used, "shift_norm": pair.shift_norm()},
            )
        )
        x = x_next
    return steps


def linear_loss(A: Matrix, x: Vector, b: Vector) -> float:
    r = A @ x - b
    return 0.5 * float(r @ r)


def linear_gradient(A: Matrix, x: Vector, b: Vector) -> Vector:
    return A.T @ (A @ x - b)


def linear_gd_induced_target(
    A: Matrix, b: Vector, x: Vector, eta: float
) -> tuple[Vector, Vector]:
    if A.shape[0] != b.shape[0] or A.shape[1] != x.shape[0]:
        raise DimensionMismatch(f"A {A.shape}, b {b.shape}, x {x.shape} do not agree")
    delta_x = -eta * linear_gradient(A, x, b)
    return x + delta_x, b - A @ delta_x


@dataclass(frozen=True)
class TokenSet:
    context: Matrix
    query: Vector

    @property
    def n(self) -> int:
        return int(self.context.shape[0])

    @property
    def d(self) -> int:
        return int(self.context.shape[1]) - 1

    def validate(self) -> None:
        if self.context.ndim != 2 or self.n < 1 or self.d < 1:
            raise DimensionMismatch(f"context must be n x (d+1), got {self.context.shape}")
        if self.query.shape != (self.d + 1,):
            raise DimensionMismatch(
                f"query has length {self.query.shape[0]}, expected {self.d + 1}"
            )

    def stacked(self) -> Matrix:
        return np.vstack([self.context, self.query])


@dataclass(frozen=True)
class AttentionWeights:
    W_Q: Matrix
    W_K: Matrix
    W_V: Matrix
    P: Matrix

    def validate(self, size: int) -> None:
        for name in ("W_Q", "W_K", "W_V", "P"):
            block = getattr(self, name)
            if block.shape != (size, size):
                raise DimensionMismatch(f"{name} is {block.shape}, expected {(size, size)}")
            if not np.all(np.isfinite(block)):
                raise ValueError(f"{name} has non-finite entries")


def _channels(tokens: TokenSet, w: AttentionWeights) -> tuple[Matrix, Matrix, Matrix]:
    tokens.validate()
    w.validate(tokens.d + 1)
    queries = tokens.stacked() @ w.W_Q.T
    keys = tokens.context @ w.W_K.T
    values = tokens.context @ w.W_V.T
    return queries, keys, values


def _apply_update(tokens: TokenSet, update: Matrix, *, all_channels: bool) -> TokenSet:
    if all_channels:
        moved = tokens.stacked() + update
    else:
        moved = tokens.stacked().copy()
        moved[:, -1] += update[:, -1]
    return TokenSet(context=moved[:-1], query=moved[-1])


def attention_scores(tokens: TokenSet, w: AttentionWeights) -> Matrix:
    """Row-normalized scores; row ``j`` is token ``j`` (query last) attending to the context."""
    queries, keys, _ = _channels(tokens, w)
    return np.asarray(softmax(queries @ keys.T, axis=1), dtype=np.float64)


def attention_step_linear(tokens: TokenSet, w: AttentionWeights) -> TokenSet:
    queries, keys, values = _channels(tokens, w)
    update = (queries @ keys.T) @ values @ w.P.T
    return _apply_update(tokens, update, all_channels=False)


def attention_step_softmax(
    tokens: TokenSet, w: AttentionWeights, *, update_all_channels: bool = False
) -> TokenSet:
    """Normalized attention; with ``update_all_channels`` the a-channels move too."""
    _, _, values = _channels(tokens, w)
    update = attention_scores(tokens, w) @ values @ w.P.T
    return _apply_update(tokens, update, all_channels=update_all_channels)


def construct_gd_weights(d: int, eta: float) -> AttentionWeights:
    """Weights whose linear attention step equals one GD step from ``x = 0``."""
    if d < 1:
        raise ValueError("d must be >= 1")
    if eta < 0:
        raise ValueError("eta must be non-negative")
    size = d + 1
    a_selector = np.diag(np.r_[np.ones(d), 0.0])
    b_selector = np.zeros((size, size))
    b_selector[d, d] = 1.0
    return AttentionWeights(
        W_Q=a_selector, W_K=a_selector.copy(), W_V=eta * b_selector, P=np.eye(size)
    )


def construct_mixing_weights(d: int, eta: float) -> AttentionWeights:
    """Residual mixing of whole tokens, ``e_j + eta * sum_k s_jk e_k``; moves the document."""
    size = d + 1
    a_selector = np.diag(np.r_[np.ones(d), 0.0])
    return AttentionWeights(
        W_Q=a_selector, W_K=a_selector.copy(), W_V=eta * np.eye(size), P=np.eye(size)
    )


def tokens_from_linear_task(A: Matrix, b: Vector, a_query: Vector) -> TokenSet:
    if A.shape[0] != b.shape[0] or a_query.shape != (A.shape[1],):
        raise DimensionMismatch(f"A {A.shape}, b {b.shape}, query {a_query.shape} do not agree")
    return TokenSet(context=np.column_stack([A, b]), query=np.r_[a_query, 0.0])


def tokens_from_instance(instance: Instance, a_query: Vector | None = None) -> TokenSet:
    query = instance.A.mean(axis=0) if a_query is None else a_query
    return tokens_from_linear_task(instance.A, instance.b, query)


def document_after_attention(tokens: TokenSet) -> Matrix:
    """The a-channels of the context, read as the next document ``A_{t+1}``."""
    return tokens.context[:, :-1].copy()


@dataclass(frozen=True)
class TransformMetrics:
    distances: list[float]
    cosines: list[float]
    norm_ratios: list[float]

    @property
    def mean_distance(self) -> float:
        return float(np.mean(self.distances)) if self.distances else math.nan

    @property
    def max_distance(self) -> float:
        return max(self.distances, default=math.nan)

    @property
    def mean_cosine(self) -> float:
        return float(np.mean(self.cosines)) if self.cosines else math.nan

    @property
    def min_cosine(self) -> float:
        return min(self.cosines, default=math.nan)


def _cosine(a: Vector, b: Vector) -> float:
    na, nb = l2_norm(a), l2_norm(b)
    if na == 0.0 or nb == 0.0:
        return 0.0
    return float(np.clip(a @ b / (na * nb), -1.0, 1.0))


def _norm_ratio(a: Vector, b: Vector) -> float:
    na, nb = l2_norm(a), l2_norm(b)
    if na == 0.0:
        return 1.0 if nb == 0.0 else math.inf
    return nb / na


def compare_transforms(run_a: Sequence[Vector], run_b: Sequence[Vector]) -> TransformMetrics:
    if len(run_a) != len(run_b):
        raise DimensionMismatch(f"runs have {len(run_a)} and {len(run_b)} steps")
    for index, (a, b) in enumerate(zip(run_a, run_b)):
        if a.shape != b.shape:
            raise DimensionMismatch(f"step {index}: shapes {a.shape} and {b.shape}")
    return TransformMetrics(
        distances=[l2_norm(a - b) for a, b in zip(run_a, run_b)],
        cosines=[_cosine(a, b) for a, b in zip(run_a, run_b)],
        norm_ratios=[_norm_ratio(a, b) for a, b in zip(run_a, run_b)],
    )


def _linear_equivalence_trial(config: SampleConfig, trial_index: int, eta: float) -> TrialRecord:
    start = time.perf_counter()
    rng = RngStream(config.master_seed, trial_index).generator()
    n = int(rng.integers(config.n_range[0], config.n_range[1], endpoint=True))
    d = int(rng.integers(config.d_range[0], config.d_range[1], endpoint=True))
    A = rng.standard_normal((n, d))
    b = rng.standard_normal(n)
    a_query = rng.standard_normal(d)
    x = rng.standard_normal(d)

    tokens = tokens_from_linear_task(A, b, a_query)
    after = attention_step_linear(tokens, construct_gd_weights(d, eta))
    attention_shift = after.stacked()[:, -1] - tokens.stacked()[:, -1]
    x_from_zero, _ = linear_gd_induced_target(A, b, np.zeros(d), eta)
    gd_shift = np.r_[A @ x_from_zero, a_query @ x_from_zero]
    comparison = compare_transforms([gd_shift], [attention_shift])

    x_next, b_tilde = linear_gd_induced_target(A, b, x, eta)
    moved = linear_loss(A, x_next, b)
    induced = linear_loss(A, x, b_tilde)
    scale = max(moved, induced)
    identity_err = abs(moved - induced) / scale if scale > 0 else 0.0

    checks = {
        "attention_vs_gd": Check(
            safe_log(linf_norm(attention_shift - gd_shift)), math.log(EQUIVALENCE_ABS_TOL)
        ),
        "linear_identity": Check(safe_log(identity_err), math.log(IDENTITY_REL_TOL)),
    }
    return TrialRecord.from_checks(
        trial_index=trial_index,
        n=n,
        d=d,
        R=config.R,
        shift_norm=l2_norm(x_from_zero),
        checks=checks,
        primary="attention_vs_gd",
        metrics={
            "max_distance": comparison.max_distance,
            "cosine": comparison.min_cosine,
            "identity_rel_err": identity_err,
        },
        wall_time=time.perf_counter() - start,
    )


def run_linear_equivalence(config: SampleConfig, eta: float) -> SuiteReport:
    """Constructed attention weights against one GD step on random linear tasks."""
    logger.info("linear equivalence: %d tasks, eta=%g", config.trials, eta)
    records = execute_trials(
        config, lambda cfg, index: _linear_equivalence_trial(cfg, index, eta)
    )
    return SuiteReport.assemble(
        suite="icl_linear",
        primary="attention_vs_gd",
        config={**config.model_dump(mode="json"), "eta": eta},
        records=records,
    )


def _attention_shifts(
    instance: Instance, x: Vector, steps: int, eta: float
) -> tuple[list[Vector], list[float | None], list[float]]:
    tokens = tokens_from_instance(instance)
    weights = construct_mixing_weights(instance.d, eta)
    document = instance.A
    deltas: list[Vector] = []
    bounds: list[float | None] = []
    actuals: list[float] = []
    for _ in range(steps):
        tokens = attention_step_softmax(tokens, weights, update_all_channels=True)
        following = document_after_attention(tokens)
        pair = DataShift(A_t=document, A_next=following, b=instance.b, x=x, R=instance.R)
        delta_b = shift_quantities(pair).delta_b
        deltas.append(delta_b)
        bounds.append(_certified_log_bound(pair))
        actuals.append(safe_log(l2_norm(delta_b)))
        document = following
    return deltas, bounds, actuals


def _certificate_excess(actuals: Sequence[float], bounds: Sequence[float | None]) -> float:
    excess = [a - b for a, b in zip(actuals, bounds) if b is not None and a != -math.inf]
    return max(excess, default=-math.inf)


def _softmax_comparison_trial(
    config: SampleConfig, trial_index: int, gd: GDConfig
) -> tuple[TrialRecord, list[TrajectoryStep]]:
    start = time.perf_counter()
    instance, x0 = sample_problem(config, trial_index)
    descent = gd_trajectory(
        instance, x0, gd.model_copy(update={"sign": "descent", "backtracking": True})
    )
    ascent = gd_trajectory(
        instance, x0, gd.model_copy(update={"sign": "paper_plus", "backtracking": False})
    )
    rises = [after.loss - before.loss for before, after in zip(descent, descent[1:])]
    ascent_rises = [after.loss - before.loss for before, after in zip(ascent, ascent[1:])]

    gd_deltas = [instance.b - step.b_tilde for step in descent[1:]]
    gd_actuals = [safe_log(step.delta_b_norm) for step in descent[1:]]
    gd_bounds = [step.log_bound for step in descent[1:]]
    att_deltas, att_bounds, att_actuals = _attention_shifts(instance, x0, gd.steps, gd.eta)
    comparison = compare_transforms(gd_deltas, att_deltas)

    max_rise = max(rises, default=0.0)
    checks = {
        "descent_monotone": Check(safe_log(max(max_rise, 0.0)), math.log(LOSS_TOLERANCE)),
        "gd_certificate": Check(_certificate_excess(gd_actuals, gd_bounds), 0.0),
        "attention_certificate": Check(_certificate_excess(att_actuals, att_bounds), 0.0),
    }
    metrics = {
        "descent_loss_drop": descent[0].loss - descent[-1].loss,
        "paper_plus_increased": 1.0 if max(ascent_rises, default=0.0) > LOSS_TOLERANCE else 0.0,
        "paper_plus_loss_increase": ascent[-1].loss - ascent[0].loss,
        "mean_distance": comparison.mean_distance,
        "max_distance": comparison.max_distance,
        "mean_cosine": comparison.mean_cosine,
        "gd_certified_steps": float(sum(b is not None for b in gd_bounds)),
        "attention_certified_steps": float(sum(b is not None for b in att_bounds)),
    }
    record = TrialRecord.from_checks(
        trial_index=trial_index,
        n=instance.n,
        d=instance.d,
        R=instance.R,
        shift_norm=l2_norm(descent[-1].x - x0),
        checks=checks,
        primary="descent_monotone",
        metrics=metrics,
        wall_time=time.perf_counter() - start,
    )
    return record, descent


def run_softmax_comparison(
    config: SampleConfig, gd: GDConfig
) -> tuple[SuiteReport, list[TrajectoryStep]]:
    """GD (descent and paper_plus) next to softmax-attention document shifts.

    Returns the suite report and the descent trajectory of trial 0.
    """
    logger.info(
        "softmax comparison: %d instances, %d steps, eta=%g", config.trials, gd.steps, gd.eta
    )
    results = execute_trials(
        config, lambda cfg, index: _softmax_comparison_trial(cfg, index, gd)
    )
    report = SuiteReport.assemble(
        suite="icl_softmax",
        primary="descent_monotone",
        config={**config.model_dump(mode="json"), **gd.model_dump(mode="json")},
        records=[record for record, _ in results],
    )
    increased = report.summary.metric_max.get("paper_plus_increased", 0.0)
    logger.info("paper_plus raised the loss on at least one instance: %s", increased > 0)
    return report, results[0][1]
