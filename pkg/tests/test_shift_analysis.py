from __future__ import annotations

import math
from typing import Any

import numpy as np
import pytest

from softshift.shift_analysis import (
    BetaMode,
    BoundContext,
    DataShift,
    PreconditionViolation,
    WeightShift,
    analyze_shift,
    beta_floor,
    bound_alpha_inv_shift,
    bound_alpha_shift,
    bound_delta_b,
    bound_delta_b_parts,
    bound_exp_shift,
    certificate_logM,
    check_theorem,
    delta_b_exact,
    delta_b_split,
    shift_quantities,
)
from softshift.softmax_core import predict

HALF_TANH = 0.5 * math.tanh(0.005)


def _scalar_pair(a: float, step: float, R: float = 4.0) -> WeightShift:
    return WeightShift(
        A=np.array([[a]]), b=np.array([1.0]), x_t=np.zeros(1), x_next=np.array([step]), R=R
    )


def _floor_context(pair: WeightShift | DataShift) -> BoundContext:
    return BoundContext.for_pair(pair)


class TestDeltaB:
    def test_worked_example(self, worked_pair: WeightShift) -> None:
        delta = delta_b_exact(worked_pair)
        assert delta == pytest.approx([HALF_TANH, -HALF_TANH], abs=1e-15)
        assert float(np.linalg.norm(delta)) == pytest.approx(0.0035355, abs=1e-7)

    def test_matches_difference_of_predictions(self, worked_pair: WeightShift) -> None:
        A = worked_pair.A
        direct = predict(A, worked_pair.x_next) - predict(A, worked_pair.x_t)
        assert np.allclose(delta_b_exact(worked_pair), direct, rtol=0, atol=1e-15)

    def test_zero_shift(self, worked_pair: WeightShift) -> None:
        still = WeightShift(
            A=worked_pair.A, b=worked_pair.b, x_t=worked_pair.x_t, x_next=worked_pair.x_t, R=4.0
        )
        assert np.array_equal(delta_b_exact(still), np.zeros(2))
        first, second = delta_b_split(still)
        assert np.array_equal(first, np.zeros(2))
        assert np.array_equal(second, np.zeros(2))

    def test_data_shift_matches_weight_shift(self, worked_pair: WeightShift) -> None:
        pair = DataShift(
            A_t=np.zeros((2, 1)),
            A_next=np.array([[0.005], [-0.005]]),
            b=np.array([1.0, 0.0]),
            x=np.array([1.0]),
            R=4.0,
        )
        assert np.allclose(delta_b_exact(pair), delta_b_exact(worked_pair), atol=1e-15)
        assert pair.shift_norm() == pytest.approx(0.005 * math.sqrt(2.0))

    def test_data_shift_without_change(self) -> None:
        A = np.array([[0.5, 1.0], [-1.0, 0.25]])
        pair = DataShift(A_t=A, A_next=A.copy(), b=np.zeros(2), x=np.ones(2), R=4.0)
        assert np.array_equal(delta_b_exact(pair), np.zeros(2))

    def test_swapping_iterates_negates_exactly(self, worked_pair: WeightShift) -> None:
        assert np.array_equal(delta_b_exact(worked_pair.swapped()), -delta_b_exact(worked_pair))

    def test_split_sums_to_delta(self, worked_pair: WeightShift) -> None:
        first, second = delta_b_split(worked_pair)
        assert first + second == pytest.approx([HALF_TANH, -HALF_TANH], abs=1e-15)

    def test_split_for_single_row(self) -> None:
        pair = _scalar_pair(1.0, 0.005)
        first, second = delta_b_split(pair)
        assert np.array_equal(delta_b_exact(pair), np.zeros(1))
        assert first[0] != 0.0 and second[0] != 0.0
        assert abs(first[0] + second[0]) <= 1e-15

    def test_defining_identity(self, worked_pair: WeightShift) -> None:
        q = shift_quantities(worked_pair)
        after = np.linalg.norm(q.f_next - worked_pair.b)
        induced = np.linalg.norm(q.f_t - worked_pair.b + q.delta_b)
        assert after == pytest.approx(induced, rel=1e-12)


class TestPreconditions:
    def test_step_cap(self) -> None:
        with pytest.raises(PreconditionViolation) as info:
            delta_b_exact(_scalar_pair(1.0, 0.02))
        assert info.value.hypothesis == "step_cap"

    def test_flat_document_rejected(self) -> None:
        pair = WeightShift(
            A=np.array([1.0, -1.0]), b=np.ones(2), x_t=np.zeros(1), x_next=np.zeros(1), R=4.0
        )
        with pytest.raises(PreconditionViolation) as info:
            delta_b_exact(pair)
        assert info.value.hypothesis == "dimensions"

    def test_matrix_weight_rejected(self) -> None:
        pair = DataShift(
            A_t=np.zeros((2, 1)), A_next=np.zeros((2, 1)), b=np.ones(2), x=np.ones((1, 1)), R=4.0
        )
        with pytest.raises(PreconditionViolation) as info:
            delta_b_exact(pair)
        assert info.value.hypothesis == "dimensions"

    def test_weight_outside_ball(self) -> None:
        pair = WeightShift(
            A=np.array([[0.001]]), b=np.ones(1), x_t=np.array([5.0]), x_next=np.array([5.1]), R=4.0
        )
        with pytest.raises(PreconditionViolation) as info:
            delta_b_exact(pair)
        assert info.value.hypothesis == "norm_x"

    def test_document_norm(self) -> None:
        with pytest.raises(PreconditionViolation) as info:
            delta_b_exact(_scalar_pair(5.0, 0.001))
        assert info.value.hypothesis == "norm_A"

    def test_next_document_norm(self) -> None:
        pair = DataShift(
            A_t=np.array([[4.0]]), A_next=np.array([[4.001]]), b=np.ones(1), x=np.ones(1), R=4.0
        )
        with pytest.raises(PreconditionViolation) as info:
            delta_b_exact(pair)
        assert info.value.hypothesis == "norm_A"

    def test_document_norm_with_ones_eigenvector(self) -> None:
        # ||A|| = 6 while A @ ones has the smaller singular value 3
        A = 3.0 * (2.0 * np.eye(3) - np.ones((3, 3)) / 3.0)
        pair = WeightShift(
            A=A, b=np.ones(3) / 3.0, x_t=np.zeros(3), x_next=np.array([0.001, 0.0, 0.0]), R=4.0
        )
        with pytest.raises(PreconditionViolation) as info:
            delta_b_exact(pair)
        assert info.value.hypothesis == "norm_A"

    def test_theorem_needs_radius_four(self) -> None:
        pair = _scalar_pair(1.0, 0.001, R=3.0)
        ctx = BoundContext(n=1, R=3.0, log_beta=-9.0, theorem_mode=False)
        with pytest.raises(PreconditionViolation) as info:
            check_theorem(pair, ctx)
        assert info.value.hypothesis == "radius"

    def test_beta_above_alpha_rejected(self, worked_pair: WeightShift) -> None:
        ctx = BoundContext(n=2, R=4.0, log_beta=1.0)
        with pytest.raises(PreconditionViolation) as info:
            analyze_shift(worked_pair, ctx)
        assert info.value.hypothesis == "beta"


class TestBounds:
    def test_beta_floor(self) -> None:
        assert beta_floor(4.0) == -16.0
        assert beta_floor(1.0) == -1.0

    def test_exp_shift_formula(self) -> None:
        pair = _scalar_pair(1.0, 0.001)
        expected = math.log(2) + math.log(4) + 16 + math.log(1e-3)
        assert bound_exp_shift(pair, _floor_context(pair)) == pytest.approx(expected, abs=1e-12)

    def test_exp_shift_zero(self) -> None:
        pair = _scalar_pair(1.0, 0.0)
        assert bound_exp_shift(pair, _floor_context(pair)) == -math.inf

    def test_alpha_shift(self) -> None:
        assert bound_alpha_shift(0.0, 3) == -math.inf
        assert bound_alpha_shift(0.25, 1) == math.log(0.25)
        assert bound_alpha_shift(0.25, 4) == pytest.approx(math.log(0.25) + math.log(2.0))

    def test_alpha_inv_shift(self) -> None:
        unit = BoundContext(n=2, R=4.0, log_beta=0.0)
        assert bound_alpha_inv_shift(0.0, unit) == -math.inf
        assert bound_alpha_inv_shift(0.5, unit) == math.log(0.5)
        floor = BoundContext(n=2, R=4.0, log_beta=beta_floor(4.0))
        assert bound_alpha_inv_shift(0.5, floor) == 32.0 + math.log(0.5)

    def test_part_bounds_formula(self) -> None:
        pair = _scalar_pair(0.001, 1.0)
        part1, part2 = bound_delta_b_parts(pair, _floor_context(pair))
        assert part1 == pytest.approx(math.log(2) + 32 + math.log(4) + 32)
        assert part2 == pytest.approx(math.log(2) + 16 + math.log(4) + 32)

    def test_part_bounds_zero_shift(self) -> None:
        pair = _scalar_pair(1.0, 0.0)
        assert bound_delta_b_parts(pair, _floor_context(pair)) == (-math.inf, -math.inf)

    def test_delta_b_formula(self) -> None:
        pair = _scalar_pair(1.0, 0.001)
        expected = math.log(4) + 32 + math.log(4) + 32 + math.log(1e-3)
        assert bound_delta_b(pair, _floor_context(pair)) == pytest.approx(expected, abs=1e-12)

    def test_certificate(self) -> None:
        assert certificate_logM(1, 4.0).log_M == 160.0
        assert certificate_logM(8, 4.0).log_M == pytest.approx(160 + 4.5 * math.log(2))
        assert certificate_logM(1, 5.0).log_M == 250.0
        assert math.isfinite(certificate_logM(10_000, 199.0).log_M)
        with pytest.raises(PreconditionViolation):
            certificate_logM(1, 3.9)


class TestAnalyzeShift:
    def test_worked_example_chain(self, worked_pair: WeightShift) -> None:
        report = check_theorem(worked_pair, _floor_context(worked_pair))
        assert report.all_required_satisfied
        assert report.slack_log > 0
        assert report.checks["certificate"].slack > 60
        assert report.log_actual <= report.log_bound_db <= report.log_certificate
        assert report.log_actual == pytest.approx(math.log(0.0035355), abs=1e-4)
        assert report.checks["delta_b1"].satisfied
        assert report.checks["delta_b2"].satisfied

    def test_worked_example_matches_golden(
        self, worked_pair: WeightShift, worked_golden: dict[str, Any]
    ) -> None:
        pinned = worked_golden["pair"]
        assert np.array_equal(worked_pair.A, pinned["A"])
        assert np.array_equal(worked_pair.x_next, pinned["x_next"])
        report = check_theorem(worked_pair, _floor_context(worked_pair))
        assert report.delta_b == pytest.approx(worked_golden["delta_b"], rel=0, abs=1e-17)
        for name in ("log_actual", "log_bound_db", "log_certificate", "slack_log"):
            assert getattr(report, name) == pytest.approx(worked_golden[name], rel=1e-12)
        assert sorted(report.checks) == sorted(worked_golden["slacks"])
        for name, slack in worked_golden["slacks"].items():
            assert report.checks[name].slack == pytest.approx(slack, rel=1e-10), name

    def test_zero_shift_satisfied_everywhere(self, worked_pair: WeightShift) -> None:
        still = WeightShift(
            A=worked_pair.A, b=worked_pair.b, x_t=worked_pair.x_t, x_next=worked_pair.x_t, R=4.0
        )
        report = check_theorem(still, _floor_context(still))
        assert report.log_actual == -math.inf
        assert all(check.log_actual == -math.inf for check in report.checks.values())
        assert all(report.satisfied.values())

    def test_stated_variants_are_advisory(self, worked_pair: WeightShift) -> None:
        report = analyze_shift(worked_pair, _floor_context(worked_pair))
        assert not report.checks["delta_b1_stated"].required
        assert not report.checks["delta_b2_stated"].required
        assert report.checks["delta_b"].required

    def test_certificate_omitted_below_radius_four(self) -> None:
        pair = WeightShift(
            A=np.array([[1.0], [-1.0]]),
            b=np.array([1.0, 0.0]),
            x_t=np.zeros(1),
            x_next=np.array([0.005]),
            R=2.0,
        )
        ctx = BoundContext.for_pair(pair, theorem_mode=False)
        report = analyze_shift(pair, ctx)
        assert "certificate" not in report.checks
        assert math.isnan(report.log_certificate)
        assert report.all_required_satisfied

    def test_empirical_beta(self, worked_pair: WeightShift) -> None:
        ctx = BoundContext.for_pair(worked_pair, beta_mode=BetaMode.EMPIRICAL)
        assert ctx.log_beta == 0.0
        floor = analyze_shift(worked_pair, _floor_context(worked_pair))
        empirical = analyze_shift(worked_pair, ctx)
        assert empirical.log_bound_db < floor.log_bound_db
        assert empirical.all_required_satisfied

    def test_empirical_beta_below_one(self) -> None:
        pair = WeightShift(
            A=np.array([[-1.0], [-1.0]]),
            b=np.array([0.5, 0.5]),
            x_t=np.array([3.0]),
            x_next=np.array([3.001]),
            R=4.0,
        )
        ctx = BoundContext.for_pair(pair, beta_mode=BetaMode.EMPIRICAL)
        assert ctx.log_beta == pytest.approx(math.log(2.0) - 3.001, rel=1e-12)
        assert analyze_shift(pair, ctx).all_required_satisfied

    def test_data_shift_report(self) -> None:
        rng = np.random.default_rng(21)
        A = rng.standard_normal((5, 3))
        A *= 3.0 / np.linalg.svd(A, compute_uv=False)[0]
        x = rng.standard_normal(3)
        x *= 2.0 / np.linalg.norm(x)
        G = rng.standard_normal((5, 3))
        G *= 0.004 / np.max(np.abs(G @ x))
        pair = DataShift(A_t=A, A_next=A + G, b=rng.dirichlet(np.ones(5)), x=x, R=4.0)
        report = check_theorem(pair, _floor_context(pair))
        assert report.all_required_satisfied
        assert report.shift_norm == pytest.approx(np.linalg.svd(G, compute_uv=False)[0], rel=1e-6)
