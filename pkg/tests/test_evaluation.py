import warnings

import numpy as np
import pytest
import torch
from hypothesis import given, settings
from hypothesis import strategies as st

from gmsf.errors import InvalidInputError
from gmsf.evaluation import (EmptyMaskError, Metrics, MetricsAccumulator, compute_metric_pair,
                             compute_metrics, format_metric_rows, robust_loss)


def t(a):
    return torch.as_tensor(np.asarray(a, dtype=np.float64))


def test_robust_loss_constants():
    # 0.01 ** 0.4 and 1.01 ** 0.4
    assert robust_loss(t([[0, 0, 0]]), t([[0, 0, 0]])).item() == pytest.approx(0.158489, abs=1e-6)
    assert robust_loss(t([[1, 0, 0]]), t([[0, 0, 0]])).item() == pytest.approx(1.003988, abs=1e-6)


def test_robust_loss_uses_l1_and_sums():
    pred, gt = t([[1, -1, 0.5], [0, 0, 0]]), t([[0, 0, 0], [0, 0, 0]])
    expect = (2.5 + 0.01) ** 0.4 + 0.01 ** 0.4
    assert robust_loss(pred, gt).item() == pytest.approx(expect, rel=1e-12)
    assert robust_loss(pred, gt, mean=True).item() == pytest.approx(expect / 2, rel=1e-12)
    assert robust_loss(pred, gt, [True, False]).item() == pytest.approx(2.51 ** 0.4, rel=1e-12)


def test_robust_loss_all_masked_warns():
    with pytest.warns(RuntimeWarning):
        loss = robust_loss(t([[1, 0, 0]]), t([[0, 0, 0]]), [False])
    assert loss.item() == 0.0


def test_robust_loss_nan_rejected():
    with pytest.raises(InvalidInputError):
        robust_loss(t([[np.nan, 0, 0]]), t([[0, 0, 0]]))


def test_robust_loss_subgradient_zero_at_kink():
    pred = t([[0, 0, 0]]).requires_grad_()
    robust_loss(pred, t([[0, 0, 0]])).backward()
    assert torch.all(pred.grad == 0)


@settings(max_examples=60, deadline=None)
@given(st.lists(st.floats(-3, 3), min_size=3, max_size=3), st.integers(0, 2),
       st.floats(1e-3, 1.0))
def test_robust_loss_monotone_in_abs_error(err, axis, bump):
    err = np.array(err)
    grown = err.copy()
    grown[axis] += np.sign(err[axis] or 1.0) * bump
    gt = t(np.zeros((1, 3)))
    assert robust_loss(t(grown[None]), gt).item() >= robust_loss(t(err[None]), gt).item()


def test_robust_loss_gradient_matches_finite_differences():
    from gmsf.gradcheck import finite_difference_check
    rng = np.random.default_rng(0)
    gt = t(rng.normal(size=(6, 3)))
    err = rng.uniform(1e-3, 1.0, size=(6, 3)) * rng.choice([-1, 1], size=(6, 3))
    pred = (gt + t(err)).requires_grad_()
    e, _ = finite_difference_check(lambda: robust_loss(pred, gt), {"v_pred": pred})
    assert e < 1e-5


def test_metrics_perfect():
    gt = np.random.default_rng(1).normal(size=(10, 3))
    m = compute_metrics(gt, gt)
    assert (m.epe3d, m.acc_s, m.acc_r, m.outliers, m.count) == (0.0, 100.0, 100.0, 0.0, 10)


def test_metrics_threshold_cases():
    gt = np.array([[1.0, 0, 0]])
    m = compute_metrics(gt + [[0.07, 0, 0]], gt)
    assert (m.acc_s, m.acc_r, m.outliers) == (0.0, 100.0, 0.0)
    assert m.epe3d == pytest.approx(0.07)
    m = compute_metrics(gt + [[0.2, 0, 0]], gt)
    assert (m.acc_s, m.acc_r, m.outliers) == (0.0, 0.0, 100.0)


def test_metrics_relative_branch_and_zero_gt():
    # large absolute error but small relative error
    gt = np.array([[10.0, 0, 0]])
    m = compute_metrics(gt + [[0.4, 0, 0]], gt)
    assert (m.acc_s, m.acc_r, m.outliers) == (100.0, 100.0, 100.0)
    zero = np.zeros((1, 3))
    m = compute_metrics([[0.06, 0, 0]], zero)
    assert (m.acc_s, m.acc_r, m.outliers) == (0.0, 100.0, 0.0)


def test_metrics_boundaries_are_strict():
    gt = np.zeros((1, 3))
    assert compute_metrics([[0.3, 0, 0]], gt).outliers == 0.0
    assert compute_metrics([[0.1, 0, 0]], gt).acc_r == 0.0


def test_metrics_empty_mask_is_an_error():
    with pytest.raises(EmptyMaskError):
        compute_metrics(np.zeros((2, 3)), np.zeros((2, 3)), [False, False])


@settings(max_examples=50, deadline=None)
@given(st.integers(1, 40), st.integers(0, 10**6))
def test_metrics_order_invariant_and_acc_ordering(n, seed):
    rng = np.random.default_rng(seed)
    gt = rng.normal(size=(n, 3)) * rng.uniform(0, 2)
    pred = gt + rng.normal(size=(n, 3)) * rng.uniform(0, 0.5)
    m = compute_metrics(pred, gt)
    assert m.acc_r >= m.acc_s
    assert all(0 <= v <= 100 for v in (m.acc_s, m.acc_r, m.outliers))
    perm = rng.permutation(n)
    mp = compute_metrics(pred[perm], gt[perm])
    assert (mp.acc_s, mp.acc_r, mp.outliers) == (m.acc_s, m.acc_r, m.outliers)
    assert mp.epe3d == pytest.approx(m.epe3d, rel=1e-12)


def test_metric_pair_and_records():
    gt = np.array([[1.0, 0, 0], [0, 1.0, 0]])
    pred = gt + [[0.0, 0, 0], [0.5, 0, 0]]
    pair = compute_metric_pair(pred, gt, [False, True])
    assert pair["all"].count == 2 and pair["non_occ"].count == 1
    assert pair["non_occ"].epe3d == 0.0
    rows = format_metric_rows(pair).splitlines()
    assert rows[0].startswith("split=all epe3d=")
    back = Metrics.from_record(rows[1].split(" ", 1)[1])
    assert back.count == 1 and back.acc_s == 100.0


def test_accumulator_pools_points():
    acc = MetricsAccumulator()
    acc.add(np.zeros((1, 3)), np.zeros((1, 3)))
    acc.add(np.ones((3, 3)), np.zeros((3, 3)), [True, False, False])
    res = acc.result()
    assert res["all"].count == 4
    assert res["all"].epe3d == pytest.approx(3 * np.sqrt(3) / 4)
    assert res["non_occ"].count == 3
