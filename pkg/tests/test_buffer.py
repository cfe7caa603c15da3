import json
import warnings

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from acr.buffer import ReplayBuffer, Sample, canonical_policy, class_quota, coefficient_of_variation
from acr.confidence import ConfidenceLedger


def samples(task, classes, per_class, start=0):
    out, sid = [], start
    for c in classes:
        for _ in range(per_class):
            out.append(Sample(sid, np.full(2, float(sid)), c, task))
            sid += 1
    return out


def ledger_with(variances, E=2):
    """Ledger whose sample ``sid`` has population variance ``variances[sid]`` (<= .25)."""
    led = ConfidenceLedger(E)
    for sid, v in variances.items():
        d = np.sqrt(v)
        for e, g in enumerate([0.5 - d, 0.5 + d], start=1):
            led.record_confidence(sid, [1 - g, g], 1, e)
    return led


# ------------------------------------------------------------ quotas


def test_quota_examples():
    assert set(class_quota(1000, [list(range(10))]).values()) == {100}
    q = class_quota(1000, [list(range(10)), list(range(10, 20))])
    assert set(q.values()) == {50}
    assert set(class_quota(500, [list(range(10))]).values()) == {50}


def test_quota_remainder_goes_to_earliest_classes():
    tasks = [list(range(10)), list(range(10, 20)), list(range(20, 30))]
    q = class_quota(100, tasks)
    assert [q[c] for c in range(30)] == [4] * 10 + [3] * 20
    assert sum(q.values()) == 100


def test_quota_smaller_than_class_count_warns():
    with pytest.warns(RuntimeWarning):
        q = class_quota(3, [[0, 1], [2, 3]])
    assert q == {0: 1, 1: 1, 2: 1, 3: 0}


def test_quota_rejects_overlap_and_empty():
    with pytest.raises(ValueError):
        class_quota(10, [[0, 1], [1, 2]])
    with pytest.raises(ValueError):
        class_quota(10, [])
    with pytest.raises(ValueError):
        class_quota(0, [[0]])


@settings(max_examples=100, deadline=None)
@given(st.integers(1, 500), st.lists(st.integers(1, 6), min_size=1, max_size=6))
def test_quota_never_exceeds_capacity(capacity, sizes):
    tasks, c = [], 0
    for s in sizes:
        tasks.append(list(range(c, c + s)))
        c += s
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        q = class_quota(capacity, tasks)
    assert sum(q.values()) == capacity
    if capacity >= c:
        per_task = [capacity // (len(tasks) * len(t)) for t in tasks]
        for t, base in zip(tasks, per_task):
            assert all(q[k] in (base, base + 1) for k in t)


# -------------------------------------------------------------- CV


def test_cv_examples():
    assert coefficient_of_variation([50, 50, 50, 50]) == 0.0
    assert coefficient_of_variation([5, 15]) == pytest.approx(50.0)
    with pytest.raises(ValueError):
        coefficient_of_variation([0, 0])


# ------------------------------------------------------ challenging


def test_prune_keeps_top_variance_oracle():
    rng = np.random.default_rng(4)
    var = {sid: float(v) for sid, v in enumerate(rng.uniform(0, 0.25, 40))}
    buf = ReplayBuffer(40, "challenging")
    buf.update_challenging(ledger_with(var), 0, samples(0, [0, 1], 20))
    assert len(buf) == 40
    # second task halves every class quota
    var2 = {sid: 0.1 for sid in range(40, 80)}
    buf.update_challenging(ledger_with(var2), 1, samples(1, [2, 3], 20, start=40))
    for c, members in ((0, range(20)), (1, range(20, 40))):
        expected = sorted(members, key=lambda s: (-var[s], s))[:10]
        assert [s.sample_id for s in buf.partitions[0][c]] == expected
    assert buf.class_counts() == {0: 10, 1: 10, 2: 10, 3: 10}


def test_challenging_keeps_highest_variance_per_class():
    var = {0: 0.01, 1: 0.2, 2: 0.05, 3: 0.2, 4: 0.0, 5: 0.1}
    buf = ReplayBuffer(4, "challenging")
    buf.update_challenging(ledger_with(var), 0, samples(0, [7, 8], 3))
    # class 7 holds ids 0-2, class 8 ids 3-5; ties broken by id
    assert [s.sample_id for s in buf.samples()] == [1, 2, 3, 5]


def test_challenging_short_class_keeps_everything():
    buf = ReplayBuffer(10, "challenging")
    buf.update_challenging(ledger_with({0: 0.1, 1: 0.2}), 0, samples(0, [0], 2))
    assert len(buf) == 2


def test_hard_keeps_lowest_mean_confidence():
    led = ConfidenceLedger(1)
    for sid, g in enumerate([0.9, 0.1, 0.5, 0.3]):
        led.record_confidence(sid, [1 - g, g], 1, 1)
    buf = ReplayBuffer(2, "hard")
    buf.update_hard(led, 0, samples(0, [0, 1], 2))
    assert [s.sample_id for s in buf.samples()] == [1, 3]


def test_random_balanced_uniform():
    counts = np.zeros(40)
    rng = np.random.default_rng(0)
    for _ in range(10_000):
        buf = ReplayBuffer(10, "random")
        buf.update_random_balanced(rng, 0, samples(0, [0], 40))
        for s in buf.samples():
            counts[s.sample_id] += 1
    assert np.all(np.abs(counts - 2500) < 150)


def test_random_balanced_deterministic():
    a, b = ReplayBuffer(8, "random"), ReplayBuffer(8, "random")
    a.update_random_balanced(np.random.default_rng(3), 0, samples(0, [0, 1], 10))
    b.update_random_balanced(np.random.default_rng(3), 0, samples(0, [0, 1], 10))
    assert [s.sample_id for s in a.samples()] == [s.sample_id for s in b.samples()]


@settings(max_examples=40, deadline=None)
@given(st.integers(1, 120), st.lists(st.integers(1, 4), min_size=1, max_size=5), st.integers(0, 1000))
def test_balanced_capacity_never_exceeded(capacity, sizes, seed):
    rng = np.random.default_rng(seed)
    buf = ReplayBuffer(capacity, "random")
    c, sid = 0, 0
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        for t, s in enumerate(sizes):
            batch = samples(t, list(range(c, c + s)), 6, start=sid)
            sid += len(batch)
            c += s
            buf.update_random_balanced(rng, t, batch)
            assert len(buf) <= capacity
            ids = [x.sample_id for x in buf.samples()]
            assert len(ids) == len(set(ids))


def test_balanced_cv_zero_when_divisible():
    buf = ReplayBuffer(240, "random")
    rng = np.random.default_rng(0)
    for t in range(5):
        buf.update_random_balanced(rng, t, samples(t, list(range(4 * t, 4 * t + 4)), 100, start=1000 * t))
        assert buf.cv_report() == {"cv_tasks": 0.0, "cv_classes": 0.0}


# -------------------------------------------------------- reservoir


def test_reservoir_fills_then_replaces():
    buf = ReplayBuffer(3, "reservoir")
    rng = np.random.default_rng(0)
    stream = samples(0, [0], 10)
    for n, s in enumerate(stream, start=1):
        buf.reservoir_insert(rng, s, n)
        assert len(buf) == min(n, 3)
    assert len({s.sample_id for s in buf.samples()}) == 3


def test_reservoir_rejects_balanced_calls():
    with pytest.raises(RuntimeError):
        ReplayBuffer(3, "reservoir").update_random_balanced(np.random.default_rng(0), 0, samples(0, [0], 2))
    with pytest.raises(RuntimeError):
        ReplayBuffer(3, "random").reservoir_insert(np.random.default_rng(0), samples(0, [0], 1)[0], 1)


# --------------------------------------------------------- retrieval


def test_retrieval():
    rng = np.random.default_rng(0)
    assert ReplayBuffer(5).random_retrieval(rng, 4) == []
    buf = ReplayBuffer(4, "random")
    buf.update_random_balanced(rng, 0, samples(0, [0], 2))
    got = buf.random_retrieval(rng, 50)
    assert len(got) == 50 and {s.sample_id for s in got} == {0, 1}


def test_policy_names():
    assert canonical_policy("ACR") == "challenging"
    assert canonical_policy("random-balanced") == "random"
    with pytest.raises(ValueError):
        canonical_policy("fifo")


def test_manifest_json(tmp_path):
    buf = ReplayBuffer(4, "random")
    buf.update_random_balanced(np.random.default_rng(0), 0, samples(0, [3, 4], 5))
    buf.export_json(tmp_path / "b.json")
    doc = json.loads((tmp_path / "b.json").read_text())
    assert doc["size"] == 4
    assert doc["class_counts"] == {"3": 2, "4": 2}
    assert sorted(doc["tasks"]["0"]) == ["3", "4"]
