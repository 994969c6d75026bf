"""Few-shot splits and F1 metrics."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ContractError, SplitError


@dataclass(frozen=True)
class FewShotSplit:
    k: int
    train_ids: np.ndarray
    val_ids: np.ndarray
    test_ids: np.ndarray
    seed: int


def sample_split(labels, k: int, seed: int, num_classes: int | None = None) -> FewShotSplit:
    """``k`` training and ``k`` validation nodes per class; everything else is test."""
    labels = np.asarray(labels, dtype=np.int64)
    if k < 1:
        raise ContractError(f"k must be >= 1, got {k}")
    C = num_classes if num_classes is not None else int(labels.max()) + 1
    rng = np.random.default_rng(seed)
    train, val = [], []
    for c in range(C):
        members = np.flatnonzero(labels == c)
        if members.size < 2 * k:
            raise SplitError(f"class {c} has {members.size} labeled nodes, need at least {2 * k}")
        picked = rng.choice(members, size=2 * k, replace=False)
        train.append(picked[:k])
        val.append(picked[k:])
    train_ids = np.sort(np.concatenate(train))
    val_ids = np.sort(np.concatenate(val))
    rest = np.ones(labels.size, dtype=bool)
    rest[train_ids] = False
    rest[val_ids] = False
    return FewShotSplit(k, train_ids, val_ids, np.flatnonzero(rest), seed)


def confusion_matrix(predictions, truths, C: int) -> np.ndarray:
    predictions = np.asarray(predictions, dtype=np.int64)
    truths = np.asarray(truths, dtype=np.int64)
    m = np.zeros((C, C), dtype=np.int64)
    np.add.at(m, (truths, predictions), 1)
    return m


def f1_scores(predictions, truths, C: int) -> tuple[float, float]:
    """``(macro, micro)`` F1; classes absent from both predictions and truths score 0."""
    predictions = np.asarray(predictions, dtype=np.int64).ravel()
    truths = np.asarray(truths, dtype=np.int64).ravel()
    if predictions.shape != truths.shape:
        raise ContractError(f"{predictions.size} predictions for {truths.size} truths")
    if predictions.size == 0:
        raise ContractError("F1 of an empty prediction set")
    for arr in (predictions, truths):
        if arr.min() < 0 or arr.max() >= C:
            raise ContractError(f"label outside [0, {C})")
    cm = confusion_matrix(predictions, truths, C)
    tp = np.diag(cm).astype(np.float64)
    denom = cm.sum(axis=0) + cm.sum(axis=1)  # 2tp + fp + fn
    per_class = np.divide(2 * tp, denom, out=np.zeros(C), where=denom > 0)
    micro = tp.sum() / predictions.size
    return float(per_class.mean()), float(micro)
