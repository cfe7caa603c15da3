"""Task/class partitioned replay buffer and its update policies.

Balanced policies (``challenging``, ``hard``, ``random``) touch the buffer
only at task boundaries: old classes are truncated to their new quota and
the finished task's classes are filled with ``quota`` samples each.  Each
class list is kept in policy order (descending confidence variance for
``challenging``, ascending mean confidence for ``hard``, draw order for
``random``), so pruning is always a tail truncation.

``reservoir`` ignores the partitions and keeps a flat list updated sample
by sample.
"""

from __future__ import annotations

import json
import logging
import os
import warnings
from dataclasses import dataclass, field
from typing import Dict, List, Mapping, Optional, Sequence, Tuple

import numpy as np

from .confidence import ConfidenceLedger

logger = logging.getLogger(__name__)

POLICIES = ("challenging", "hard", "random", "reservoir")
POLICY_ALIASES = {"acr": "challenging", "random-balanced": "random", "balanced-random": "random", "er": "reservoir"}


def canonical_policy(name: str) -> str:
    key = name.strip().lower()
    key = POLICY_ALIASES.get(key, key)
    if key not in POLICIES:
        raise ValueError(f"unknown buffer policy {name!r}; choose from {', '.join(POLICIES)}")
    return key


@dataclass(frozen=True)
class Sample:
    sample_id: int
    x: np.ndarray = field(repr=False, compare=False)
    label: int
    task_id: int


def class_quota(capacity: int, task_classes: Sequence[Sequence[int]]) -> Dict[int, int]:
    """Slots per class after ``t = len(task_classes)`` tasks.

    Each class of task k gets ``capacity // (t * |C_k|)``; the remaining
    slots go one each to classes in (task, class) order until the
    allocation reaches ``capacity``.  If there are more classes than
    slots, the earliest classes get one slot each and the rest none.
    """
    t = len(task_classes)
    if t < 1:
        raise ValueError("need at least one task")
    if capacity < 1:
        raise ValueError(f"capacity must be positive, got {capacity}")
    ordered = [int(c) for classes in task_classes for c in classes]
    if any(len(classes) < 1 for classes in task_classes):
        raise ValueError("every task needs at least one class")
    if len(set(ordered)) != len(ordered):
        raise ValueError("class sets must be disjoint across tasks")

    if capacity < len(ordered):
        warnings.warn(
            f"buffer capacity {capacity} is smaller than the {len(ordered)} classes seen; "
            "only the earliest classes keep a sample",
            RuntimeWarning,
            stacklevel=2,
        )
        return {c: int(i < capacity) for i, c in enumerate(ordered)}

    quota = {}
    for classes in task_classes:
        per_class = capacity // (t * len(classes))
        for c in classes:
            quota[int(c)] = per_class
    leftover = capacity - sum(quota.values())
    for c in ordered:
        if leftover <= 0:
            break
        quota[c] += 1
        leftover -= 1
    return quota


def coefficient_of_variation(counts: Sequence[float]) -> float:
    """Population std / mean * 100."""
    arr = np.asarray(counts, dtype=np.float64)
    if arr.size == 0:
        raise ValueError("coefficient of variation of an empty count list")
    if np.any(arr < 0):
        raise ValueError("counts must be non-negative")
    m = arr.mean()
    if m == 0:
        raise ValueError("coefficient of variation undefined: all counts are zero")
    return float(arr.std() / m * 100.0)


class ReplayBuffer:
    """Capacity-bounded store of past samples.

    Parameters
    ----------
    capacity : int
        Maximum number of stored samples (``B_size``).
    policy : str
        One of ``challenging`` (alias ``acr``), ``hard``, ``random``
        (alias ``random-balanced``) or ``reservoir``.
    """

    def __init__(self, capacity: int, policy: str = "challenging"):
        if capacity < 1:
            raise ValueError(f"capacity must be positive, got {capacity}")
        self.capacity = int(capacity)
        self.policy = canonical_policy(policy)
        self.partitions: Dict[int, Dict[int, List[Sample]]] = {}
        self.task_classes: Dict[int, Tuple[int, ...]] = {}
        self._flat: List[Sample] = []

    # -- introspection ------------------------------------------------------

    def __len__(self) -> int:
        if self.policy == "reservoir":
            return len(self._flat)
        return sum(len(lst) for classes in self.partitions.values() for lst in classes.values())

    def samples(self) -> List[Sample]:
        """All stored samples in buffer order (task, class, rank)."""
        if self.policy == "reservoir":
            return list(self._flat)
        return [s for classes in self.partitions.values() for lst in classes.values() for s in lst]

    def note_task(self, task_id: int, classes: Sequence[int]) -> None:
        """Register a task's class set (arrival order is buffer order)."""
        if task_id not in self.task_classes:
            self.task_classes[task_id] = tuple(int(c) for c in classes)

    def class_counts(self) -> Dict[int, int]:
        counts = {c: 0 for classes in self.task_classes.values() for c in classes}
        for s in self.samples():
            counts[s.label] = counts.get(s.label, 0) + 1
        return counts

    def task_counts(self) -> Dict[int, int]:
        counts = {t: 0 for t in self.task_classes}
        for s in self.samples():
            counts[s.task_id] = counts.get(s.task_id, 0) + 1
        return counts

    def manifest(self) -> dict:
        """JSON-ready ``{task -> class -> [sample ids]}`` plus counts."""
        tasks: Dict[str, Dict[str, List[int]]] = {}
        for t, classes in self.task_classes.items():
            tasks[str(t)] = {str(c): [] for c in classes}
        for s in self.samples():
            tasks.setdefault(str(s.task_id), {}).setdefault(str(s.label), []).append(s.sample_id)
        return {
            "capacity": self.capacity,
            "policy": self.policy,
            "size": len(self),
            "tasks": tasks,
            "task_counts": {str(k): v for k, v in self.task_counts().items()},
            "class_counts": {str(k): v for k, v in self.class_counts().items()},
        }

    def export_json(self, path) -> None:
        with open(os.fspath(path), "w") as fh:
            json.dump(self.manifest(), fh, indent=1, sort_keys=False)

    # -- balanced policies --------------------------------------------------

    def quotas_with(self, task_id: int, classes: Sequence[int]) -> Dict[int, int]:
        task_classes = dict(self.task_classes)
        task_classes.setdefault(task_id, tuple(int(c) for c in classes))
        return class_quota(self.capacity, list(task_classes.values()))

    def prune_lowest_variance(self, quotas: Mapping[int, int]) -> List[Sample]:
        """Truncate every stored class to its quota; return what was dropped."""
        removed: List[Sample] = []
        for classes in self.partitions.values():
            for c, lst in classes.items():
                keep = quotas.get(c, len(lst))
                if len(lst) > keep:
                    removed.extend(lst[keep:])
                    del lst[keep:]
        return removed

    def _fill(self, task_id: int, samples: Sequence[Sample], order_key) -> None:
        self._require_balanced()
        by_class: Dict[int, List[Sample]] = {}
        for s in samples:
            by_class.setdefault(int(s.label), []).append(s)
        classes = sorted(by_class)
        self.note_task(task_id, classes)
        quotas = class_quota(self.capacity, list(self.task_classes.values()))
        self.prune_lowest_variance(quotas)
        part = {}
        for c in self.task_classes[task_id]:
            members = by_class.get(c, [])
            ranked = order_key(c, members)
            q = quotas[c]
            if len(ranked) < q:
                logger.info("class %s has %d samples for a quota of %d", c, len(ranked), q)
            part[c] = list(ranked[:q])
        self.partitions[task_id] = part

    def update_challenging(self, ledger: ConfidenceLedger, task_id: int, samples: Sequence[Sample]) -> None:
        """Keep the quota-many highest-variance samples of every class."""

        def order(c, members):
            return sorted(members, key=lambda s: (-ledger.variance(s.sample_id), s.sample_id))

        self._fill(task_id, samples, order)

    def update_hard(self, ledger: ConfidenceLedger, task_id: int, samples: Sequence[Sample]) -> None:
        """Keep the quota-many lowest mean-confidence samples of every class."""

        def order(c, members):
            return sorted(members, key=lambda s: (ledger.mean_confidence(s.sample_id), s.sample_id))

        self._fill(task_id, samples, order)

    def update_random_balanced(self, rng: np.random.Generator, task_id: int, samples: Sequence[Sample]) -> None:
        """Uniform draw without replacement, quota-many per class."""

        def order(c, members):
            members = sorted(members, key=lambda s: s.sample_id)
            return [members[i] for i in rng.permutation(len(members))]

        self._fill(task_id, samples, order)

    def _require_balanced(self) -> None:
        if self.policy == "reservoir":
            raise RuntimeError("balanced updates are not available on a reservoir buffer")

    # -- reservoir ----------------------------------------------------------

    def reservoir_insert(self, rng: np.random.Generator, sample: Sample, n: int) -> bool:
        """Algorithm R step; ``n`` counts stream items seen including this one.

        Returns True when the sample was stored.
        """
        if self.policy != "reservoir":
            raise RuntimeError("reservoir_insert requires the reservoir policy")
        if n < 1:
            raise ValueError("stream count must be >= 1")
        if len(self._flat) < self.capacity:
            self._flat.append(sample)
            return True
        j = int(rng.integers(n))
        if j < self.capacity:
            self._flat[j] = sample
            return True
        return False

    # -- retrieval ----------------------------------------------------------

    def random_retrieval(self, rng: np.random.Generator, b: int) -> List[Sample]:
        """``b`` samples drawn uniformly with replacement; empty if the buffer is."""
        stored = self.samples()
        if not stored or b <= 0:
            return []
        return [stored[i] for i in rng.integers(len(stored), size=b)]

    def cv_report(self) -> Dict[str, float]:
        out = {}
        for name, counts in (("cv_tasks", self.task_counts()), ("cv_classes", self.class_counts())):
            try:
                out[name] = coefficient_of_variation(list(counts.values()))
            except ValueError:
                out[name] = float("nan")
        return out
