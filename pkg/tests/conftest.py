from __future__ import annotations

from datetime import datetime, timedelta

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from rlhgnn.event_log import Event, EventLog, Trace
from rlhgnn.preprocess import EncodedTrace

settings.register_profile("default", max_examples=60, deadline=None, suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")

ACCEPTANCE: dict[int, tuple[bool, str]] = {}


def record(criterion: int, ok: bool, detail: str) -> bool:
    ACCEPTANCE[criterion] = (bool(ok), detail)
    return bool(ok)


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(ACCEPTANCE):
        ok, detail = ACCEPTANCE[n]
        terminalreporter.write_line(f"criterion {n:2d}: {'PASS' if ok else 'FAIL'}  {detail}")


def make_trace(case_id, activities, gaps=None, resources=None, start=datetime(2021, 3, 1, 8, 0, 0)):
    gaps = gaps if gaps is not None else [60] * len(activities)
    resources = resources or ["R1"] * len(activities)
    t = start
    events = []
    for i, (a, r) in enumerate(zip(activities, resources)):
        if i > 0:
            t = t + timedelta(seconds=gaps[i])
        events.append(Event(case_id, a, t, r))
    return Trace(case_id, tuple(events))


def make_log(sequences, **kw):
    return EventLog(tuple(make_trace(f"c{i}", seq, **kw) for i, seq in enumerate(sequences)))


def encoded(activity_ids, n_features=1, rng=None, cards=None, dt_prev=None):
    """An EncodedTrace with the given activity column and random auxiliary ids."""
    acts = np.asarray(activity_ids, dtype=np.int64)
    k = len(acts)
    cols = [acts]
    names = ["activity"]
    rng = rng or np.random.default_rng(0)
    for j in range(1, n_features):
        card = cards[j] if cards else 5
        cols.append(rng.integers(0, card, size=k))
        names.append(f"f{j}")
    dt = np.zeros(k) if dt_prev is None else np.asarray(dt_prev, dtype=np.float64)
    return EncodedTrace("x", np.column_stack(cols).astype(np.int64), dt, np.cumsum(dt), tuple(names))


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
