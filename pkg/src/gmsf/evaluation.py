"""Robust training loss and the EPE3D / ACC_S / ACC_R / Outliers metrics."""

from __future__ import annotations

import warnings
from dataclasses import asdict, dataclass

import numpy as np
import torch

from .errors import InvalidInputError

LOSS_EPS = 0.01
LOSS_Q = 0.4


class EmptyMaskError(ValueError):
    """No points were selected for evaluation."""


def robust_loss(v_pred: torch.Tensor, v_gt: torch.Tensor, mask=None,
                eps: float = LOSS_EPS, q: float = LOSS_Q, mean: bool = False):
    """``sum_i (||v_pred_i - v_gt_i||_1 + eps)^q`` over points with ``mask_i``.

    Leading batch dimensions are summed over as well. With ``mean=True`` the
    sum is divided by the number of included points.
    """
    if v_pred.shape != v_gt.shape:
        raise ValueError(f"shape mismatch {tuple(v_pred.shape)} vs {tuple(v_gt.shape)}")
    if torch.isnan(v_pred).any() or torch.isnan(v_gt).any():
        raise InvalidInputError("NaN in flow passed to robust_loss")
    per_point = ((v_pred - v_gt).abs().sum(dim=-1) + eps) ** q
    if mask is not None:
        mask = torch.as_tensor(mask, dtype=torch.bool, device=v_pred.device)
        if mask.shape != per_point.shape:
            raise ValueError("mask shape must match the point layout of the flow")
        per_point = per_point * mask.to(per_point.dtype)
        count = int(mask.sum())
    else:
        count = per_point.numel()
    if count == 0:
        warnings.warn("robust_loss: every point is masked out", RuntimeWarning)
        return per_point.sum() * 0.0
    total = per_point.sum()
    return total / count if mean else total


@dataclass
class Metrics:
    epe3d: float
    acc_s: float
    acc_r: float
    outliers: float
    count: int

    def to_record(self) -> str:
        return (f"epe3d={self.epe3d:.6f} acc_s={self.acc_s:.4f} "
                f"acc_r={self.acc_r:.4f} outliers={self.outliers:.4f} count={self.count}")

    @classmethod
    def from_record(cls, text: str) -> "Metrics":
        raw = dict(item.split("=", 1) for item in text.split())
        return cls(float(raw["epe3d"]), float(raw["acc_s"]), float(raw["acc_r"]),
                   float(raw["outliers"]), int(raw["count"]))

    def as_dict(self):
        return asdict(self)


def _to_numpy(a):
    if isinstance(a, torch.Tensor):
        a = a.detach().cpu().numpy()
    return np.asarray(a, dtype=np.float64).reshape(-1, 3)


def compute_metrics(v_pred, v_gt, mask=None) -> Metrics:
    """Scene-flow metrics over the points selected by ``mask``.

    Relative error is ``epe / ||v_gt||``; a zero-length ground truth vector
    never satisfies a relative condition. Accuracy thresholds are strict
    ``<``, outlier thresholds strict ``>``.
    """
    pred, gt = _to_numpy(v_pred), _to_numpy(v_gt)
    if pred.shape != gt.shape:
        raise ValueError("prediction and ground truth differ in shape")
    if mask is not None:
        mask = np.asarray(mask, dtype=bool).reshape(-1)
        if mask.shape[0] != pred.shape[0]:
            raise ValueError("mask length must equal the number of points")
        pred, gt = pred[mask], gt[mask]
    n = len(pred)
    if n == 0:
        raise EmptyMaskError("no points selected for evaluation")
    if not (np.all(np.isfinite(pred)) and np.all(np.isfinite(gt))):
        raise InvalidInputError("non-finite flow passed to compute_metrics")
    epe = np.linalg.norm(pred - gt, axis=1)
    gt_norm = np.linalg.norm(gt, axis=1)
    has_norm = gt_norm > 0
    rel = np.divide(epe, gt_norm, out=np.full_like(epe, np.inf), where=has_norm)

    def pct(flags):
        return 100.0 * np.count_nonzero(flags) / n

    return Metrics(
        epe3d=float(epe.mean()),
        acc_s=pct((epe < 0.05) | (has_norm & (rel < 0.05))),
        acc_r=pct((epe < 0.1) | (has_norm & (rel < 0.1))),
        outliers=pct((epe > 0.3) | (has_norm & (rel > 0.1))),
        count=n,
    )


def compute_metric_pair(v_pred, v_gt, occlusion=None) -> dict:
    """``{"all": Metrics, "non_occ": Metrics | None}`` for one or more scenes."""
    out = {"all": compute_metrics(v_pred, v_gt)}
    if occlusion is None:
        out["non_occ"] = out["all"]
        return out
    valid = ~np.asarray(occlusion, dtype=bool).reshape(-1)
    out["non_occ"] = compute_metrics(v_pred, v_gt, valid) if valid.any() else None
    return out


class MetricsAccumulator:
    """Collects per-point predictions so metrics average over all points."""

    def __init__(self):
        self._pred, self._gt, self._occ = [], [], []

    def add(self, v_pred, v_gt, occlusion=None):
        pred, gt = _to_numpy(v_pred), _to_numpy(v_gt)
        if occlusion is None:
            occlusion = np.zeros(len(pred), dtype=bool)
        self._pred.append(pred)
        self._gt.append(gt)
        self._occ.append(np.asarray(occlusion, dtype=bool).reshape(-1))

    def result(self) -> dict:
        if not self._pred:
            raise EmptyMaskError("no scenes were evaluated")
        return compute_metric_pair(np.concatenate(self._pred),
                                   np.concatenate(self._gt),
                                   np.concatenate(self._occ))


def format_metric_rows(pair: dict) -> str:
    """Two machine-readable rows: ``split=all ...`` and ``split=non_occ ...``."""
    rows = []
    for split in ("all", "non_occ"):
        m = pair.get(split)
        rows.append(f"split={split} " + (m.to_record() if m else "count=0"))
    return "\n".join(rows)
