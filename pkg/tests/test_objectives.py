"""Tests for the three losses and the prediction-ratio transform."""

import numpy as np
import pytest

from cforecast.errors import ConstraintDataError, ContractViolationError, ShapeError
from cforecast.objectives import (
    GroupIndex,
    finetune_eval,
    prediction_ratios,
    se_eval,
    sum_constraint_eval,
)

from oracles import central_diff_grad, relative_error


def single_group(n, total):
    return GroupIndex.build(["w"] * n, {"w": total})


class TestGroupIndex:
    def test_build_counts_and_totals(self):
        gi = GroupIndex.build(["a", "b", "a", "a"], {"a": 10.0, "b": 4.0})
        assert gi.keys == ("a", "b")
        assert gi.counts.tolist() == [3, 1]
        assert gi.totals.tolist() == [10.0, 4.0]
        assert gi.row_group.tolist() == [0, 1, 0, 0]

    def test_group_sums_and_per_row(self):
        gi = GroupIndex.build(["a", "b", "a"], {"a": 1.0, "b": 1.0})
        sums = gi.group_sums(np.array([1.0, 5.0, 2.0]))
        assert sums.tolist() == [3.0, 5.0]
        assert gi.per_row(sums).tolist() == [3.0, 5.0, 3.0]

    def test_missing_total_is_reported_by_group(self):
        gi = GroupIndex.build(["a", "b"], {"a": 1.0})
        with pytest.raises(ConstraintDataError, match="'b'"):
            gi.require_totals()


class TestSquaredError:
    def test_single_row(self):
        ev = se_eval([5.0], [3.0])
        assert ev.grad.tolist() == [4.0]
        assert ev.hess.tolist() == [2.0]
        assert ev.loss_value == 4.0

    def test_perfect_fit(self):
        ev = se_eval([1.0, 2.0, 3.0], [1.0, 2.0, 3.0])
        assert np.all(ev.grad == 0.0)
        assert ev.loss_value == 0.0

    def test_length_mismatch(self):
        with pytest.raises(ShapeError):
            se_eval([1.0, 2.0], [1.0])

    def test_gradient_matches_finite_differences(self):
        rng = np.random.default_rng(11)
        for _ in range(20):
            n = int(rng.integers(1, 11))
            preds = rng.uniform(-100, 100, n)
            labels = rng.uniform(-100, 100, n)
            ev = se_eval(preds, labels)
            fd = n * central_diff_grad(lambda p: se_eval(p, labels).loss_value, preds)
            assert relative_error(ev.grad, fd).max() <= 1e-6


class TestSumConstraint:
    def test_hand_worked_single_week(self):
        gi = single_group(2, 30.0)
        ev = sum_constraint_eval([12.0, 24.0], [10.0, 20.0], gi)
        assert ev.grad.tolist() == [16.0, 20.0]
        assert ev.hess.tolist() == [4.0, 4.0]
        # value keeps the 1/n and 1/(count*n) weights: each of the 2 rows
        # contributes D^2/(count*n) = 36/4
        expected = (4.0 + 16.0) / 2 + 2 * 36.0 / (2 * 2)
        assert ev.loss_value == pytest.approx(expected)

    def test_fixed_point(self):
        gi = single_group(3, 6.0)
        ev = sum_constraint_eval([1.0, 2.0, 3.0], [1.0, 2.0, 3.0], gi)
        assert np.all(ev.grad == 0.0)

    def test_uniform_offset_contributes_2kc(self):
        labels = np.array([5.0, 7.0, 9.0, 11.0])
        c, k = 2.5, 4
        gi = single_group(k, float(labels.sum()))
        ev = sum_constraint_eval(labels + c, labels, gi)
        # SE part 2c per row, group part 2*k*c per row
        assert ev.grad == pytest.approx(np.full(k, 2 * c + 2 * k * c))

    def test_gradient_matches_finite_differences(self):
        rng = np.random.default_rng(23)
        for _ in range(20):
            n = int(rng.integers(2, 13))
            weeks = rng.integers(0, 3, n)
            keys = [f"w{w}" for w in weeks]
            totals = {f"w{w}": float(rng.uniform(-100, 100)) for w in set(weeks)}
            gi = GroupIndex.build(keys, totals)
            preds = rng.uniform(-100, 100, n)
            labels = rng.uniform(-100, 100, n)
            ev = sum_constraint_eval(preds, labels, gi)
            fd = n * central_diff_grad(
                lambda p: sum_constraint_eval(p, labels, gi).loss_value, preds
            )
            assert relative_error(ev.grad, fd).max() <= 1e-6

    def test_missing_total_names_group(self):
        gi = GroupIndex.build(["w1", "w2"], {"w1": 5.0})
        with pytest.raises(ConstraintDataError, match="'w2'"):
            sum_constraint_eval([1.0, 2.0], [1.0, 2.0], gi)

    def test_newton_step_shrinks_deviation_for_small_groups(self):
        # The diagonal-Newton step scales D by (1 - count/2); |D| strictly
        # decreases only for groups of 1..3 rows, which is what we assert.
        for count in (1, 2, 3):
            labels = np.arange(1.0, count + 1.0)
            gi = single_group(count, float(labels.sum()) + 9.0)
            preds = labels.copy()
            dev0 = abs(preds.sum() - gi.totals[0])
            ev = sum_constraint_eval(preds, labels, gi)
            stepped = preds - ev.grad / ev.hess
            dev1 = abs(stepped.sum() - gi.totals[0])
            assert dev1 < dev0


class TestFineTune:
    def test_anchor_exactly_satisfied(self):
        gi = single_group(2, 30.0)
        ev = finetune_eval([22.5, 7.5], [0.75, 0.25], gi, mode="squared")
        assert np.all(ev.grad == 0.0)
        assert ev.hess.tolist() == [4.0, 4.0]
        assert ev.loss_value == 0.0

    def test_anchor_residuals_with_zero_deviation(self):
        gi = single_group(2, 30.0)
        ev = finetune_eval([30.0, 0.0], [0.75, 0.25], gi, mode="squared")
        assert ev.grad.tolist() == [15.0, -15.0]

    def test_literal_mode_gradient(self):
        gi = single_group(2, 30.0)
        preds = np.array([11.0, 25.0])
        dev = preds.sum() - 30.0
        ev = finetune_eval(preds, [0.5, 0.5], gi, mode="literal")
        assert ev.grad == pytest.approx(np.full(2, 2 * dev + 1.0))
        assert ev.hess.tolist() == [2.0, 2.0]

    @pytest.mark.parametrize("mode", ["squared", "literal"])
    def test_gradient_matches_finite_differences(self, mode):
        rng = np.random.default_rng(37)
        for _ in range(20):
            n = int(rng.integers(2, 13))
            weeks = rng.integers(0, 3, n)
            keys = [f"w{w}" for w in weeks]
            totals = {f"w{w}": float(rng.uniform(-100, 100)) for w in set(weeks)}
            gi = GroupIndex.build(keys, totals)
            preds = rng.uniform(-100, 100, n)
            ratios = rng.uniform(0, 1, n)
            ev = finetune_eval(preds, ratios, gi, mode=mode)
            fd = n * central_diff_grad(
                lambda p: finetune_eval(p, ratios, gi, mode=mode).loss_value, preds
            )
            assert relative_error(ev.grad, fd).max() <= 1e-6

    def test_missing_ratio_rejected(self):
        gi = single_group(2, 30.0)
        with pytest.raises(ContractViolationError, match="row 1"):
            finetune_eval([1.0, 2.0], [0.5, np.nan], gi)

    def test_unknown_mode_rejected(self):
        gi = single_group(1, 1.0)
        with pytest.raises(ContractViolationError):
            finetune_eval([1.0], [1.0], gi, mode="cubic")


class TestPredictionRatios:
    def test_two_product_week(self):
        gi = single_group(2, 40.0)
        assert prediction_ratios([30.0, 10.0], gi).tolist() == [0.75, 0.25]

    def test_zero_sum_falls_back_to_uniform(self):
        gi = single_group(2, 40.0)
        assert prediction_ratios([0.0, 0.0], gi).tolist() == [0.5, 0.5]

    def test_three_product_week(self):
        gi = single_group(3, 4.0)
        assert prediction_ratios([1.0, 1.0, 2.0], gi).tolist() == [0.25, 0.25, 0.5]

    def test_per_group_normalization(self):
        rng = np.random.default_rng(5)
        for _ in range(50):
            n = int(rng.integers(1, 20))
            weeks = rng.integers(0, 4, n)
            gi = GroupIndex.build([f"w{w}" for w in weeks])
            preds = rng.uniform(0, 50, n)
            sums = gi.group_sums(prediction_ratios(preds, gi))
            assert np.all(np.abs(sums - 1.0) <= 1e-9)
