"""Evaluation metrics: top-1 accuracy and AUC."""

from __future__ import annotations

import numpy as np
from sklearn.metrics import roc_auc_score

from .errors import DataError


def accuracy(probs: np.ndarray, labels: np.ndarray) -> float:
    return float((probs.argmax(axis=1) == labels).mean())


def auc(probs: np.ndarray, labels: np.ndarray) -> float:
    """Rank-based AUC; binary uses the positive-class score, multiclass is
    one-vs-rest macro averaged."""
    classes = np.unique(labels)
    if len(classes) < 2:
        raise DataError("AUC is undefined for a single-class label set")
    if probs.shape[1] == 2:
        return float(roc_auc_score(labels, probs[:, 1]))
    return float(roc_auc_score(labels, probs, multi_class="ovr", average="macro",
                               labels=np.arange(probs.shape[1])))


def score(probs: np.ndarray, labels: np.ndarray, metric: str) -> float:
    if metric == "accuracy":
        return accuracy(probs, labels)
    if metric == "auc":
        return auc(probs, labels)
    raise DataError(f"unknown metric {metric!r}")
