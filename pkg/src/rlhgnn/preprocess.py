"""Integer encoding of event attributes: vocabularies and quantile bins."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Iterable, Sequence

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from .event_log import EventLog, Event, Trace
from .exceptions import FitError, ParameterError

UNK = "<UNK>"
MISSING = "<MISSING>"


@dataclass
class Vocabulary:
    """Token index with 0 reserved for unknown values."""

    attribute_name: str
    token_to_index: dict[str, int] = field(default_factory=dict)

    @property
    def size(self) -> int:
        return len(self.token_to_index) + 1

    @property
    def tokens(self) -> list[str]:
        out = [UNK] * self.size
        for tok, i in self.token_to_index.items():
            out[i] = tok
        return out

    def encode(self, raw: str | None) -> int:
        return encode(self, raw)


@dataclass
class BinEdges:
    attribute_name: str
    edges: tuple[float, ...]

    @property
    def n_bins(self) -> int:
        return max(1, len(self.edges) - 1)

    def discretize(self, x):
        return discretize(self, x)


@dataclass(frozen=True)
class TemporalFeatures:
    dt_prev: np.ndarray
    dt_start: np.ndarray


@dataclass(frozen=True)
class EncodedEvent:
    activity_id: int
    resource_id: int
    dt_prev_bin: int
    dt_start_bin: int
    extra_bins: tuple[int, ...] = ()


@dataclass(frozen=True)
class EncodedTrace:
    """One trace as an integer matrix ``ids[n, n_features]`` plus raw durations.

    Column 0 always holds the activity id.
    """

    case_id: str
    ids: np.ndarray
    dt_prev: np.ndarray
    dt_start: np.ndarray
    feature_names: tuple[str, ...]

    def __len__(self):
        return self.ids.shape[0]

    @property
    def activity_ids(self) -> np.ndarray:
        return self.ids[:, 0]

    def prefix(self, k: int) -> "EncodedTrace":
        return EncodedTrace(
            self.case_id, self.ids[:k], self.dt_prev[:k], self.dt_start[:k], self.feature_names
        )

    def event(self, i: int) -> EncodedEvent:
        row = dict(zip(self.feature_names, (int(v) for v in self.ids[i])))
        extras = tuple(
            v for name, v in row.items()
            if name not in ("activity", "resource", "dt_prev", "dt_start")
        )
        return EncodedEvent(
            row["activity"], row.get("resource", 0), row["dt_prev"], row["dt_start"], extras
        )


def _selector(attribute) -> Callable[[Event], str | None]:
    if callable(attribute):
        return attribute
    if attribute == "activity":
        return lambda e: e.activity
    if attribute == "resource":
        return lambda e: e.resource
    return lambda e: e.attribute(attribute)


def build_vocabulary(traces: Iterable[Trace], attribute="activity", name=None) -> Vocabulary:
    """Index tokens by first occurrence; missing values become ``MISSING``."""
    get = _selector(attribute)
    vocab = Vocabulary(name or (attribute if isinstance(attribute, str) else "attribute"))
    for trace in traces:
        for ev in trace.events:
            raw = get(ev)
            tok = MISSING if raw is None or raw == "" else raw
            if tok not in vocab.token_to_index:
                vocab.token_to_index[tok] = len(vocab.token_to_index) + 1
    return vocab


def encode(vocab: Vocabulary, raw: str | None) -> int:
    tok = MISSING if raw is None or raw == "" else raw
    return vocab.token_to_index.get(tok, 0)


def fit_quantile_bins(values: Sequence[float], n_bins: int = 4, name: str = "") -> BinEdges:
    """Edges at the i/B quantiles (linear interpolation), duplicates collapsed."""
    if n_bins < 2:
        raise ParameterError("need at least 2 bins")
    arr = np.asarray(values, dtype=np.float64)
    if arr.size == 0:
        raise FitError(f"cannot fit bins for {name or 'attribute'} on no values")
    qs = np.quantile(arr, np.linspace(0.0, 1.0, n_bins + 1), method="linear")
    return BinEdges(name, tuple(float(q) for q in np.unique(qs)))


def discretize(bins: BinEdges, x):
    """Bin index in 1..B with q[i-1] < x <= q[i]; out-of-range values clamp."""
    edges = np.asarray(bins.edges)
    idx = np.searchsorted(edges, x, side="left")
    idx = np.clip(idx, 1, bins.n_bins)
    if np.ndim(idx) == 0:
        return int(idx)
    return idx.astype(np.int64)


def extract_temporal_features(trace: Trace) -> TemporalFeatures:
    if len(trace) == 0:
        raise ParameterError("trace is empty")
    t0 = trace.events[0].timestamp
    start = np.array([(e.timestamp - t0).total_seconds() for e in trace.events])
    prev = np.diff(start, prepend=start[0])
    return TemporalFeatures(prev, start)


def encode_log(
    log,
    vocabularies: dict[str, Vocabulary],
    bins: dict[str, BinEdges],
    categorical: Sequence[str] = (),
    numeric: Sequence[str] = (),
) -> list[EncodedTrace]:
    """Encode every event; unknown tokens map to 0, numbers clamp into range."""
    use_resource = "resource" in vocabularies
    names = ["activity"] + (["resource"] if use_resource else []) + ["dt_prev", "dt_start"]
    names += list(categorical) + list(numeric)
    out = []
    for trace in log:
        temporal = extract_temporal_features(trace)
        cols = [[encode(vocabularies["activity"], e.activity) for e in trace.events]]
        if use_resource:
            cols.append([encode(vocabularies["resource"], e.resource) for e in trace.events])
        cols.append(discretize(bins["dt_prev"], temporal.dt_prev))
        cols.append(discretize(bins["dt_start"], temporal.dt_start))
        for attr in categorical:
            cols.append([encode(vocabularies[attr], e.attribute(attr)) for e in trace.events])
        for attr in numeric:
            vals = [_to_float(e.attribute(attr)) for e in trace.events]
            # bin 0 is reserved for missing / non-numeric values
            cols.append([0 if v is None else discretize(bins[attr], v) for v in vals])
        ids = np.column_stack([np.asarray(c, dtype=np.int64) for c in cols])
        out.append(EncodedTrace(trace.case_id, ids, temporal.dt_prev, temporal.dt_start, tuple(names)))
    return out


def _to_float(raw):
    if raw is None or raw == "":
        return None
    try:
        return float(raw)
    except ValueError:
        return None


def _as_traces(X) -> list[Trace]:
    if isinstance(X, EventLog):
        return list(X.traces)
    if isinstance(X, Trace):
        return [X]
    traces = list(X)
    for t in traces:
        if not isinstance(t, Trace):
            raise ParameterError(f"expected Trace objects, got {type(t).__name__}")
    return traces


class EventLogEncoder(TransformerMixin, BaseEstimator):
    """Fit vocabularies and quantile bins on training traces; encode any traces.

    Parameters
    ----------
    n_bins : int
        Equal-frequency bins for durations and numeric attributes.
    use_resource : bool
        Encode the resource column as its own categorical feature.
    categorical_attributes, numeric_attributes : sequence of str
        Extra event attributes to encode.
    """

    def __init__(self, n_bins=4, use_resource=True, categorical_attributes=(), numeric_attributes=()):
        self.n_bins = n_bins
        self.use_resource = use_resource
        self.categorical_attributes = categorical_attributes
        self.numeric_attributes = numeric_attributes

    def fit(self, X, y=None):
        traces = _as_traces(X)
        if not traces:
            raise FitError("cannot fit the encoder on zero traces")
        vocabs = {"activity": build_vocabulary(traces, "activity")}
        if self.use_resource:
            vocabs["resource"] = build_vocabulary(traces, "resource")
        for attr in self.categorical_attributes:
            vocabs[attr] = build_vocabulary(traces, attr)
        temporal = [extract_temporal_features(t) for t in traces]
        bins = {
            "dt_prev": fit_quantile_bins(np.concatenate([f.dt_prev for f in temporal]), self.n_bins, "dt_prev"),
            "dt_start": fit_quantile_bins(np.concatenate([f.dt_start for f in temporal]), self.n_bins, "dt_start"),
        }
        for attr in self.numeric_attributes:
            vals = [_to_float(e.attribute(attr)) for t in traces for e in t.events]
            vals = [v for v in vals if v is not None]
            bins[attr] = fit_quantile_bins(vals or [0.0], self.n_bins, attr)
        self.vocabularies_ = vocabs
        self.bins_ = bins
        names = ["activity"] + (["resource"] if self.use_resource else []) + ["dt_prev", "dt_start"]
        names += list(self.categorical_attributes) + list(self.numeric_attributes)
        self.feature_names_ = tuple(names)
        self.cardinalities_ = tuple(self._cardinality(n) for n in names)
        return self

    def _cardinality(self, name):
        if name in self.vocabularies_:
            return self.vocabularies_[name].size
        return self.bins_[name].n_bins + 1

    @property
    def activity_vocabulary(self) -> Vocabulary:
        check_is_fitted(self, "vocabularies_")
        return self.vocabularies_["activity"]

    def transform(self, X) -> list[EncodedTrace]:
        check_is_fitted(self, "vocabularies_")
        return encode_log(
            _as_traces(X), self.vocabularies_, self.bins_,
            tuple(self.categorical_attributes), tuple(self.numeric_attributes),
        )
