"""Evaluation metrics for landmarks, occlusion and head pose."""

from __future__ import annotations

from typing import NamedTuple

import numpy as np
from scipy.stats import rankdata

from .errors import InvalidInputError, UndefinedMetricError

CLASSIFICATION_TOL_DEG = 7.5


def _pair(pred, truth, mask):
    pred = np.asarray(pred, dtype=float).reshape(-1, 2)
    truth = np.asarray(truth, dtype=float).reshape(-1, 2)
    if pred.shape != truth.shape:
        raise InvalidInputError("predicted and true shapes differ")
    mask = np.ones(len(pred), dtype=bool) if mask is None else np.asarray(mask).reshape(-1) > 0
    if mask.size != len(pred):
        raise InvalidInputError("mask length differs from the landmark count")
    return pred, truth, mask


def pixel_error(pred, truth, mask=None) -> float:
    """Mean Euclidean distance in pixels over annotated points."""
    pred, truth, mask = _pair(pred, truth, mask)
    if not mask.any():
        raise UndefinedMetricError("no annotated points")
    return float(np.linalg.norm(pred[mask] - truth[mask], axis=1).mean())


def normalized_error(pred, truth, mask, left_eye: int, right_eye: int) -> float:
    """Mean point error over annotated points as a percentage of the inter-ocular distance."""
    pred, truth, mask = _pair(pred, truth, mask)
    if not (mask[left_eye] and mask[right_eye]):
        raise UndefinedMetricError("both eye landmarks must be annotated")
    iod = float(np.linalg.norm(truth[left_eye] - truth[right_eye]))
    if iod <= 0:
        raise UndefinedMetricError("inter-ocular distance is zero")
    return 100.0 * pixel_error(pred, truth, mask) / iod


def recall_at_precision(scores, labels, target_precision: float = 0.8) -> float:
    """Largest recall over score thresholds whose precision is at least ``target_precision``.

    A point is called positive (occluded) when its score is ``>=`` the
    threshold; tied scores always switch together.
    """
    scores = np.asarray(scores, dtype=float).ravel()
    labels = np.asarray(labels).ravel().astype(bool)
    if scores.size != labels.size:
        raise InvalidInputError("scores and labels differ in length")
    n_pos = int(labels.sum())
    if n_pos == 0:
        raise UndefinedMetricError("recall is undefined without positive labels")
    order = np.argsort(-scores, kind="stable")
    s, lab = scores[order], labels[order]
    tp = np.cumsum(lab)
    called = np.arange(1, s.size + 1)
    # Only the last position of each run of equal scores is a reachable operating point.
    last = np.append(s[1:] != s[:-1], True)
    tp, called = tp[last], called[last]
    ok = tp >= target_precision * called - 1e-12
    return float(tp[ok].max() / n_pos) if ok.any() else 0.0


def roc_auc(scores, labels) -> float:
    """Area under the ROC curve (ties count one half)."""
    scores = np.asarray(scores, dtype=float).ravel()
    labels = np.asarray(labels).ravel().astype(bool)
    n_pos = int(labels.sum())
    n_neg = labels.size - n_pos
    if n_pos == 0 or n_neg == 0:
        raise UndefinedMetricError("AUC needs both classes")
    ranks = rankdata(scores)
    return float((ranks[labels].sum() - n_pos * (n_pos + 1) / 2.0) / (n_pos * n_neg))


def angle_error_deg(pred, truth) -> np.ndarray:
    """Absolute wrapped angular difference in degrees (inputs in radians)."""
    d = np.rad2deg(np.asarray(pred, dtype=float) - np.asarray(truth, dtype=float))
    return np.abs(np.mod(d + 180.0, 360.0) - 180.0)


class PoseMetrics(NamedTuple):
    mae_deg: np.ndarray  # pitch, yaw, roll
    accuracy_yaw: float
    accuracy_all: float


def pose_metrics(pred, truth) -> PoseMetrics:
    """Per-axis mean absolute error and the share of samples within 7.5 degrees.

    ``accuracy_yaw`` judges the yaw error alone; ``accuracy_all`` requires all
    three axes within tolerance.
    """
    pred = np.asarray(pred, dtype=float).reshape(-1, 3)
    truth = np.asarray(truth, dtype=float).reshape(-1, 3)
    if pred.shape != truth.shape:
        raise InvalidInputError("predicted and true pose lists differ in length")
    if len(pred) == 0:
        raise UndefinedMetricError("no poses to evaluate")
    err = angle_error_deg(pred, truth)
    within = err < CLASSIFICATION_TOL_DEG
    return PoseMetrics(err.mean(axis=0), float(within[:, 1].mean()), float(within.all(axis=1).mean()))
