"""Per-sample target-class confidence over the first epochs of a task."""

from __future__ import annotations

import csv
import os
from typing import Dict, Iterable, List, Sequence

import numpy as np


class IncompleteRecordError(ValueError):
    """A sample does not yet have one confidence per tracked epoch."""


class ConfidenceLedger:
    """Records Γ_e(x, y) for epochs 1..E of one task.

    Parameters
    ----------
    E : int
        Number of leading epochs tracked.  Variance and mean are only
        available once a sample has exactly ``E`` records.
    task_id : int, optional
        Task the ledger belongs to; informational.
    """

    def __init__(self, E: int = 5, task_id=None):
        if E < 1:
            raise ValueError(f"E must be a positive integer, got {E}")
        self.E = int(E)
        self.task_id = task_id
        self.records: Dict[int, List[float]] = {}
        self.labels: Dict[int, int] = {}
        self._epochs: Dict[int, set] = {}

    def __len__(self) -> int:
        return len(self.records)

    def __contains__(self, sample_id) -> bool:
        return int(sample_id) in self.records

    def record_confidence(self, sample_id: int, probs: Sequence[float], target: int, epoch: int,
                          label=None) -> float:
        """Store ``probs[target]`` for ``sample_id`` at ``epoch`` (1-based).

        ``label`` is the sample's class id when ``target`` is only a column
        index into ``probs``; it is kept for the CSV dump.
        """
        probs = np.asarray(probs, dtype=np.float64)
        if probs.ndim != 1 or not 0 <= target < probs.size:
            raise IndexError(f"target {target} outside probability row of length {probs.size}")
        if abs(probs.sum() - 1.0) > 1e-6:
            raise ValueError(f"probabilities sum to {probs.sum():.8f}, not 1")
        if not 1 <= epoch <= self.E:
            raise ValueError(f"epoch {epoch} outside tracked range 1..{self.E}")
        sid = int(sample_id)
        seen = self._epochs.setdefault(sid, set())
        if epoch in seen:
            raise ValueError(f"sample {sid} already has a record for epoch {epoch}")
        gamma = float(min(max(probs[target], 0.0), 1.0))
        seen.add(epoch)
        self.records.setdefault(sid, []).append(gamma)
        self.labels[sid] = int(target if label is None else label)
        return gamma

    def record_batch(self, sample_ids, probs: np.ndarray, targets, epoch: int, labels=None) -> None:
        """Vectorised :meth:`record_confidence` for a batch of rows."""
        probs = np.asarray(probs, dtype=np.float64)
        for k, sid in enumerate(sample_ids):
            self.record_confidence(sid, probs[k], int(targets[k]), epoch,
                                   label=None if labels is None else labels[k])

    def is_complete(self, sample_id) -> bool:
        return len(self.records.get(int(sample_id), ())) == self.E

    def _complete(self, sample_id) -> np.ndarray:
        rec = self.records.get(int(sample_id))
        if rec is None or len(rec) != self.E:
            n = 0 if rec is None else len(rec)
            raise IncompleteRecordError(f"sample {sample_id} has {n} of {self.E} confidence records")
        return np.asarray(rec)

    def variance(self, sample_id) -> float:
        """Population variance (divide by E) of the recorded confidences."""
        return float(np.var(self._complete(sample_id)))

    def mean_confidence(self, sample_id) -> float:
        return float(np.mean(self._complete(sample_id)))

    def rank_class(self, class_id, sample_ids: Iterable[int]) -> List[int]:
        """``sample_ids`` sorted by descending variance, ties by ascending id."""
        ids = [int(s) for s in sample_ids]
        return sorted(ids, key=lambda s: (-self.variance(s), s))

    def to_csv(self, path, class_of=None) -> None:
        """Dump ``sample_id, class, gamma_1..gamma_E, variance`` for complete samples."""
        class_of = class_of or self.labels
        with open(os.fspath(path), "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["sample_id", "class", *[f"gamma_{e}" for e in range(1, self.E + 1)], "variance"])
            for sid in sorted(self.records):
                if not self.is_complete(sid):
                    continue
                w.writerow([sid, class_of.get(sid, ""), *[repr(g) for g in self.records[sid]],
                            repr(self.variance(sid))])
