"""Event log data model, CSV ingestion, prefixes, folds and a synthetic log generator."""

from __future__ import annotations

import csv
import math
import string
from collections import Counter
from dataclasses import dataclass, field
from datetime import datetime, timedelta
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .exceptions import (
    EmptyLogError,
    LogParseError,
    ParameterError,
    SchemaError,
    SplitError,
)

DEFAULT_TIMESTAMP_FORMAT = "%Y/%m/%d %H:%M:%S"


@dataclass(frozen=True)
class Event:
    case_id: str
    activity: str
    timestamp: datetime
    resource: str | None = None
    extra_attributes: tuple[tuple[str, str], ...] = ()

    def attribute(self, name: str) -> str | None:
        for key, value in self.extra_attributes:
            if key == name:
                return value
        return None


@dataclass(frozen=True)
class Trace:
    case_id: str
    events: tuple[Event, ...]

    def __post_init__(self):
        for ev in self.events:
            if ev.case_id != self.case_id:
                raise ParameterError(
                    f"event of case {ev.case_id!r} inside trace {self.case_id!r}"
                )
        for prev, cur in zip(self.events, self.events[1:]):
            if cur.timestamp < prev.timestamp:
                raise ParameterError(f"trace {self.case_id!r} is not time-ordered")

    def __len__(self):
        return len(self.events)

    @property
    def activities(self) -> list[str]:
        return [e.activity for e in self.events]

    def prefix(self, k: int) -> "Trace":
        return Trace(self.case_id, self.events[:k])


@dataclass(frozen=True)
class LogCounts:
    cases: int
    events: int
    activities: int


@dataclass(frozen=True)
class EventLog:
    traces: tuple[Trace, ...]
    source_name: str = ""

    def __post_init__(self):
        if len(self.traces) < 1:
            raise EmptyLogError("an event log needs at least one trace")

    def __len__(self):
        return len(self.traces)

    def __iter__(self):
        return iter(self.traces)

    @property
    def counts(self) -> LogCounts:
        acts = {e.activity for t in self.traces for e in t.events}
        return LogCounts(len(self.traces), sum(len(t) for t in self.traces), len(acts))


@dataclass(frozen=True)
class CsvSchema:
    """Column mapping for :func:`parse_csv_log`."""

    case: str = "case_id"
    activity: str = "activity"
    timestamp: str = "timestamp"
    resource: str | None = "resource"
    extra: tuple[str, ...] = ()
    timestamp_format: str = DEFAULT_TIMESTAMP_FORMAT
    delimiter: str = ","


@dataclass(frozen=True)
class PrefixSample:
    prefix: Trace
    k: int
    label: str


def parse_csv_log(path, schema: CsvSchema = CsvSchema()) -> EventLog:
    """Read a UTF-8 CSV event log and group its rows into time-ordered traces.

    Rows sharing a timestamp keep their file order. The returned log exposes
    ``counts`` (cases, events, distinct activities).
    """
    path = Path(path)
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh, delimiter=schema.delimiter)
        try:
            header = next(reader)
        except StopIteration:
            raise EmptyLogError(f"{path}: file is empty") from None
        index = {name.strip(): i for i, name in enumerate(header)}
        required = [schema.case, schema.activity, schema.timestamp]
        optional = [schema.resource] if schema.resource else []
        for col in required + optional + list(schema.extra):
            if col not in index:
                raise SchemaError(f"{path}: missing column {col!r}")

        by_case: dict[str, list[tuple[int, Event]]] = {}
        order = 0
        # header is line 1
        for line_no, row in enumerate(reader, start=2):
            if not row or all(not cell.strip() for cell in row):
                continue
            if len(row) < len(header):
                raise LogParseError(
                    f"expected {len(header)} fields, got {len(row)}", line_no
                )
            case_id = row[index[schema.case]]
            activity = row[index[schema.activity]]
            if not activity:
                raise LogParseError("empty activity", line_no)
            raw_ts = row[index[schema.timestamp]]
            try:
                ts = datetime.strptime(raw_ts.strip(), schema.timestamp_format)
            except ValueError:
                raise LogParseError(
                    f"unparsable timestamp {raw_ts!r} "
                    f"(format {schema.timestamp_format!r})",
                    line_no,
                ) from None
            resource = row[index[schema.resource]] if schema.resource else None
            extras = tuple((name, row[index[name]]) for name in schema.extra)
            by_case.setdefault(case_id, []).append(
                (order, Event(case_id, activity, ts, resource, extras))
            )
            order += 1

    if not by_case:
        raise EmptyLogError(f"{path}: no event rows")
    traces = []
    for case_id, rows in by_case.items():
        rows.sort(key=lambda item: (item[1].timestamp, item[0]))
        traces.append(Trace(case_id, tuple(ev for _, ev in rows)))
    return EventLog(tuple(traces), source_name=path.name)


def write_csv_log(log: EventLog, path, schema: CsvSchema = CsvSchema()) -> None:
    """Write ``log`` in the layout :func:`parse_csv_log` reads back."""
    header = [schema.case, schema.activity, schema.timestamp]
    if schema.resource:
        header.append(schema.resource)
    header.extend(schema.extra)
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, delimiter=schema.delimiter, lineterminator="\n")
        writer.writerow(header)
        for trace in log.traces:
            for ev in trace.events:
                row = [ev.case_id, ev.activity, ev.timestamp.strftime(schema.timestamp_format)]
                if schema.resource:
                    row.append(ev.resource or "")
                row.extend(ev.attribute(name) or "" for name in schema.extra)
                writer.writerow(row)


def enumerate_prefixes(trace: Trace, min_k: int = 1) -> list[PrefixSample]:
    if min_k < 1:
        raise ParameterError("min_k must be >= 1")
    n = len(trace)
    return [
        PrefixSample(trace.prefix(k), k, trace.events[k].activity)
        for k in range(min_k, n)
    ]


def log_statistics(log: EventLog) -> dict:
    """Dataset summary in the style of the usual benchmark tables."""
    lengths = [len(t) for t in log.traces]
    counts = log.counts
    repeated = sum(1 for t in log.traces if len(set(t.activities)) < len(t))
    return {
        "cases": counts.cases,
        "activities": counts.activities,
        "events": counts.events,
        "avg_case_length": counts.events / counts.cases,
        "max_case_length": max(lengths),
        "case_repetition_ratio": repeated / counts.cases,
    }


# ---------------------------------------------------------------------------
# cross-validation folds

ROLES = ("baseline", "rl", "validation", "test")


@dataclass(frozen=True)
class FoldAssignment:
    """Trace-level three-fold split.

    ``fold_of[i]`` is the fold whose test set holds trace ``i``;
    ``roles[f][i]`` is trace ``i``'s role when fold ``f`` is evaluated.
    """

    fold_of: tuple[int, ...]
    roles: tuple[tuple[str, ...], ...]
    n_folds: int = 3

    def indices(self, fold: int, role: str) -> list[int]:
        return [i for i, r in enumerate(self.roles[fold]) if r == role]

    def training_indices(self, fold: int) -> list[int]:
        return [i for i, r in enumerate(self.roles[fold]) if r in ("baseline", "rl")]

    def to_rows(self, log: EventLog) -> list[tuple[str, int, str]]:
        return [
            (log.traces[i].case_id, f, self.roles[f][i])
            for f in range(self.n_folds)
            for i in range(len(self.fold_of))
        ]

    def write_csv(self, log: EventLog, path) -> None:
        with Path(path).open("w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(["case_id", "fold", "role"])
            writer.writerows(self.to_rows(log))


def split_training_portion(indices: Sequence[int], rng: np.random.Generator):
    """80/20 train/validation, then train halves; remainders go to training / RL."""
    idx = list(np.asarray(indices)[rng.permutation(len(indices))])
    n_val = int(math.floor(0.2 * len(idx)))
    val, train = idx[:n_val], idx[n_val:]
    n_base = len(train) // 2
    return train[:n_base], train[n_base:], val


def split_folds(log: EventLog, seed: int, n_folds: int = 3) -> FoldAssignment:
    n = len(log.traces)
    if n < n_folds:
        raise SplitError(f"need at least {n_folds} traces to split, got {n}")
    rng = np.random.default_rng(seed)
    perm = rng.permutation(n)
    fold_of = [0] * n
    for f, chunk in enumerate(np.array_split(perm, n_folds)):
        for i in chunk:
            fold_of[int(i)] = f
    roles = []
    for f in range(n_folds):
        role = ["test"] * n
        rest = [i for i in range(n) if fold_of[i] != f]
        base, rl, val = split_training_portion(rest, rng)
        for i in base:
            role[int(i)] = "baseline"
        for i in rl:
            role[int(i)] = "rl"
        for i in val:
            role[int(i)] = "validation"
        roles.append(tuple(role))
    return FoldAssignment(tuple(fold_of), tuple(roles), n_folds)


# ---------------------------------------------------------------------------
# synthetic logs


@dataclass(frozen=True)
class GeneratorSpec:
    """Parameters of the synthetic process.

    ``kind="process"`` walks a seeded base ordering of the alphabet. A rework
    block right after the start activity is executed a second time with
    probability ``loop_prob``; after a rework the next base activity is skipped.
    Past the block, each step skips an optional activity with probability
    ``branch_prob``. Without rework no activity repeats, so the number of
    distinct activities per trace is clipped to the alphabet size.

    ``kind="cycle"`` emits the deterministic chain A, B, C, ..., A, B, ...
    """

    n_activities: int = 8
    n_traces: int = 100
    min_length: int = 3
    max_length: int = 8
    loop_prob: float = 0.0
    branch_prob: float = 0.0
    n_resources: int = 3
    kind: str = "process"
    mean_gap_seconds: float = 3600.0
    gap_sigma: float = 1.0

    def validate(self):
        if self.n_activities < 2:
            raise ParameterError("n_activities must be >= 2")
        if self.n_traces < 1:
            raise ParameterError("n_traces must be >= 1")
        if self.min_length < 1 or self.max_length < self.min_length:
            raise ParameterError("need 1 <= min_length <= max_length")
        for name in ("loop_prob", "branch_prob"):
            p = getattr(self, name)
            if not 0.0 <= p <= 1.0:
                raise ParameterError(f"{name} must lie in [0, 1]")
        if self.n_resources < 1:
            raise ParameterError("n_resources must be >= 1")
        if self.kind not in ("process", "cycle"):
            raise ParameterError(f"unknown generator kind {self.kind!r}")
        if self.mean_gap_seconds <= 0 or self.gap_sigma < 0:
            raise ParameterError("gap parameters must be positive")


def activity_names(n: int) -> list[str]:
    if n <= 26:
        return list(string.ascii_uppercase[:n])
    return [f"act{i:02d}" for i in range(n)]


def _process_walk(spec: GeneratorSpec, order: list[str], rng) -> list[str]:
    a = spec.n_activities
    block_end = 1 + min(3, a - 1)
    target = min(int(rng.integers(spec.min_length, spec.max_length + 1)), a)
    acts: list[str] = []
    pos, looped, distinct = 0, False, 0
    while pos < a and distinct < target:
        acts.append(order[pos])
        distinct += 1
        if pos == block_end - 1 and not looped and rng.random() < spec.loop_prob:
            acts.extend(order[1:block_end])
            looped = True
            pos += 2
            # the rework is always followed by at least one more activity
            target = max(target, distinct + 1)
        elif pos >= block_end and rng.random() < spec.branch_prob:
            pos += 2
        else:
            pos += 1
    return acts


def generate_synthetic_log(spec: GeneratorSpec, seed: int) -> EventLog:
    spec.validate()
    rng = np.random.default_rng(seed)
    names = activity_names(spec.n_activities)
    order = [names[i] for i in rng.permutation(spec.n_activities)]
    resources = [f"R{i + 1}" for i in range(spec.n_resources)]
    start = datetime(2020, 1, 1)
    mu = math.log(spec.mean_gap_seconds) - 0.5 * spec.gap_sigma**2
    traces = []
    for n in range(spec.n_traces):
        case_id = f"case{n:05d}"
        if spec.kind == "cycle":
            length = int(rng.integers(spec.min_length, spec.max_length + 1))
            acts = [names[j % spec.n_activities] for j in range(length)]
        else:
            acts = _process_walk(spec, order, rng)
        t = start + timedelta(seconds=int(rng.integers(0, 86400 * 30)))
        events = []
        for act in acts:
            events.append(
                Event(case_id, act, t, resources[int(rng.integers(len(resources)))])
            )
            gap = max(1, int(round(rng.lognormal(mu, spec.gap_sigma))))
            t = t + timedelta(seconds=gap)
        traces.append(Trace(case_id, tuple(events)))
    return EventLog(tuple(traces), source_name=f"synthetic-{spec.kind}-{seed}")


def has_repeats(trace: Trace) -> bool:
    counts = Counter(trace.activities)
    return any(c > 1 for c in counts.values())


def iter_prefix_pairs(traces: Iterable[Trace], min_k: int = 1):
    """Yield ``(trace_index, k)`` for every prefix with a next activity."""
    for i, trace in enumerate(traces):
        for k in range(min_k, len(trace)):
            yield i, k
