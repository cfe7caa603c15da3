"""Accuracy matrices, ACC/BWT, OOD aggregation and CSV output."""

from __future__ import annotations

import csv
import os
from fractions import Fraction
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from .data import CORRUPTIONS, corrupt


class AccuracyMatrix:
    """Lower-triangular ``alpha[i, j]``: accuracy on task j after training task i.

    Undefined entries (j > i, or not yet evaluated) are NaN.
    """

    def __init__(self, T: int, condition: str = "iid"):
        if T < 1:
            raise ValueError("need at least one task")
        self.T = int(T)
        self.condition = condition
        self.alpha = np.full((self.T, self.T), np.nan)

    def set(self, i: int, j: int, value: float) -> None:
        if not 0 <= j <= i < self.T:
            raise IndexError(f"alpha[{i}][{j}] is outside the lower triangle of a {self.T}-task matrix")
        if not 0.0 <= value <= 1.0:
            raise ValueError(f"accuracy {value} outside [0, 1]")
        self.alpha[i, j] = value

    def row(self, i: int) -> np.ndarray:
        return self.alpha[i, : i + 1].copy()

    @classmethod
    def from_array(cls, alpha, condition: str = "iid") -> "AccuracyMatrix":
        a = np.asarray(alpha, dtype=np.float64)
        m = cls(a.shape[0], condition)
        for i in range(m.T):
            for j in range(i + 1):
                if not np.isnan(a[i, j]):
                    m.set(i, j, float(a[i, j]))
        return m

    def stage_accuracy(self) -> List[float]:
        """Mean accuracy over seen tasks after each stage."""
        return [float(np.mean(self.row(i))) for i in range(self.T) if not np.isnan(self.row(i)).any()]

    def to_csv(self, path) -> None:
        with open(os.fspath(path), "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["stage", *[f"task_{j}" for j in range(self.T)]])
            for i in range(self.T):
                w.writerow([i, *["" if np.isnan(v) else repr(float(v)) for v in self.alpha[i]]])


def _exact(v: float) -> Fraction:
    # shortest decimal form, so 0.6 - 0.9 is -3/10 and not the binary residue
    return Fraction(repr(float(v)))


def _exact_mean(values) -> float:
    values = [v if isinstance(v, Fraction) else _exact(v) for v in values]
    return float(sum(values, Fraction(0)) / len(values))


def acc(matrix: AccuracyMatrix) -> float:
    """Mean final-row accuracy, computed exactly and rounded once."""
    final = matrix.alpha[-1]
    if np.isnan(final).any():
        raise ValueError("ACC needs the full final row of the accuracy matrix")
    return _exact_mean(final)


def bwt(matrix: AccuracyMatrix) -> Optional[float]:
    """Mean of ``alpha[T, j] - alpha[j, j]`` over j < T; None when T == 1."""
    T = matrix.T
    if T < 2:
        return None
    final = matrix.alpha[-1, : T - 1]
    diag = np.diag(matrix.alpha)[: T - 1]
    if np.isnan(final).any() or np.isnan(diag).any():
        raise ValueError("BWT needs the diagonal and final row of the accuracy matrix")
    return _exact_mean(_exact(f) - _exact(d) for f, d in zip(final, diag))


def eval_task(model, X: np.ndarray, y: np.ndarray) -> float:
    """Class-incremental accuracy: argmax over every proxy the model knows."""
    y = np.asarray(y)
    if y.size == 0:
        raise ValueError("empty test set")
    known = set(int(c) for c in model.classes_)
    unseen = sorted(set(int(c) for c in np.unique(y)) - known)
    if unseen:
        raise ValueError(f"test set contains classes the model has no proxy for: {unseen}")
    return float(np.mean(model.predict(X) == y))


def iid_row(model, test_sets: Sequence[Tuple[np.ndarray, np.ndarray]], stage: int) -> List[float]:
    return [eval_task(model, X, y) for X, y in test_sets[: stage + 1]]


def corrupted_test_sets(test_sets, kind: str, severity: int, side: int, seed: int):
    """Corrupt every task's test set with an rng fixed by (seed, kind, severity, task)."""
    k = CORRUPTIONS.index(kind)
    out = []
    for j, (X, y) in enumerate(test_sets):
        rng = np.random.default_rng([seed, k, severity, j])
        out.append((corrupt(X, kind, severity, rng, side), y))
    return out


def ood_accuracy_matrix(snapshots: Sequence, test_sets, specs: Sequence[Tuple[str, int]], side: int,
                        seed: int = 0) -> Tuple[AccuracyMatrix, Dict[Tuple[str, int], AccuracyMatrix]]:
    """Per-corruption accuracy matrices and their uniform average.

    ``snapshots[i]`` is the model right after training task i.
    """
    if not specs:
        raise ValueError("no corruption specs given")
    T = len(snapshots)
    per_spec: Dict[Tuple[str, int], AccuracyMatrix] = {}
    for kind, sev in specs:
        shifted = corrupted_test_sets(test_sets[:T], kind, sev, side, seed)
        m = AccuracyMatrix(T, f"{kind}_{sev}")
        for i, model in enumerate(snapshots):
            for j, v in enumerate(iid_row(model, shifted, i)):
                m.set(i, j, v)
        per_spec[(kind, sev)] = m
    agg = AccuracyMatrix(T, "ood")
    agg.alpha = np.mean([m.alpha for m in per_spec.values()], axis=0)
    return agg, per_spec
