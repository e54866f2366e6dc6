"""Attribution quality against known ground-truth saliency."""

from __future__ import annotations

import numpy as np
from scipy.stats import rankdata

THRESHOLDS = np.arange(1, 101) / 101.0
RANKING_METRICS = ("aup", "aur", "auprc", "roc_auc")
ERROR_METRICS = ("mae", "mse", "rmse")


def minmax_normalize(attr: np.ndarray) -> np.ndarray:
    """Min-max scale each instance (leading axis) to [0, 1]; constant instances map to 0."""
    attr = np.asarray(attr, dtype=np.float64)
    flat = attr.reshape(len(attr), -1)
    lo = flat.min(axis=1, keepdims=True)
    span = flat.max(axis=1, keepdims=True) - lo
    out = np.divide(flat - lo, span, out=np.zeros_like(flat), where=span > 0)
    return out.reshape(attr.shape)


def _check_binary(truth: np.ndarray, name: str) -> None:
    if not np.isin(truth, (0.0, 1.0)).all():
        raise ValueError(f"{name} needs binary truth")
    if truth.all() or not truth.any():
        raise ValueError(f"{name} is undefined when the truth is all zeros or all ones")


def average_precision(scores: np.ndarray, truth: np.ndarray) -> float:
    """Area under the precision-recall curve as a step sum over distinct thresholds."""
    scores, truth = np.ravel(scores), np.ravel(truth)
    _check_binary(truth, "auprc")
    order = np.argsort(-scores, kind="mergesort")
    s, y = scores[order], truth[order]
    last = np.r_[np.flatnonzero(np.diff(s)), len(s) - 1]
    tp = np.cumsum(y)[last]
    precision = tp / (last + 1)
    recall = tp / y.sum()
    return float(np.sum(np.diff(np.r_[0.0, recall]) * precision))


def roc_auc(scores: np.ndarray, truth: np.ndarray) -> float:
    """Probability that a salient cell outranks a non-salient one (ties count half)."""
    scores, truth = np.ravel(scores), np.ravel(truth)
    _check_binary(truth, "roc_auc")
    ranks = rankdata(scores)
    n_pos = truth.sum()
    n_neg = truth.size - n_pos
    return float((ranks[truth == 1].sum() - n_pos * (n_pos + 1) / 2) / (n_pos * n_neg))


def _threshold_curves(scores, truth):
    scores, truth = np.ravel(scores), np.ravel(truth)
    pred = scores[None, :] >= THRESHOLDS[:, None]
    tp = (pred & (truth[None, :] == 1)).sum(axis=1)
    n_pred = pred.sum(axis=1)
    precision = np.divide(tp, n_pred, out=np.zeros(len(THRESHOLDS)), where=n_pred > 0)
    recall = tp / max(truth.sum(), 1.0)
    return precision, recall


def aup(scores, truth) -> float:
    _check_binary(np.ravel(truth), "aup")
    return float(_threshold_curves(scores, truth)[0].mean())


def aur(scores, truth) -> float:
    _check_binary(np.ravel(truth), "aur")
    return float(_threshold_curves(scores, truth)[1].mean())


def white_box_metrics(attr, truth, metrics=None, kind: str | None = None) -> dict[str, float]:
    """Compare a batch of attributions with the truth after per-instance min-max scaling.

    ``attr`` and ``truth`` share a shape with a leading batch axis. Binary
    truth gets every metric; real-valued truth only the error metrics.
    """
    attr = np.asarray(attr, dtype=np.float64)
    kind = kind or getattr(truth, "kind", None)
    truth = np.asarray(getattr(truth, "values", truth), dtype=np.float64)
    if attr.shape != truth.shape:
        raise ValueError(f"attribution shape {attr.shape} does not match truth {truth.shape}")
    binary = np.isin(truth, (0.0, 1.0)).all() if kind is None else kind == "binary"
    if metrics is None:
        metrics = RANKING_METRICS + ERROR_METRICS if binary else ERROR_METRICS
    norm = minmax_normalize(attr)
    out = {}
    for name in metrics:
        if name == "auprc":
            out[name] = average_precision(norm, truth)
        elif name == "roc_auc":
            out[name] = roc_auc(norm, truth)
        elif name == "aup":
            out[name] = aup(norm, truth)
        elif name == "aur":
            out[name] = aur(norm, truth)
        elif name == "mae":
            out[name] = float(np.mean(np.abs(norm - truth)))
        elif name == "mse":
            out[name] = float(np.mean((norm - truth) ** 2))
        elif name == "rmse":
            out[name] = float(np.sqrt(np.mean((norm - truth) ** 2)))
        else:
            raise ValueError(f"unknown white-box metric {name!r}")
    return out
