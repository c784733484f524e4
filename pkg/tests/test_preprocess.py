import numpy as np
import pytest
from hypothesis import given, strategies as st

from rlhgnn.exceptions import FitError, ParameterError
from rlhgnn.event_log import Event, Trace
from rlhgnn.preprocess import (
    MISSING,
    UNK,
    EventLogEncoder,
    build_vocabulary,
    discretize,
    encode,
    extract_temporal_features,
    fit_quantile_bins,
)

from conftest import make_log, make_trace


def _quantile_oracle(values, n_bins):
    """Linear-interpolation quantiles written out by hand, duplicates removed."""
    xs = sorted(float(v) for v in values)
    n = len(xs)
    edges = []
    for j in range(n_bins + 1):
        pos = (j / n_bins) * (n - 1)
        lo = int(np.floor(pos))
        hi = min(lo + 1, n - 1)
        edges.append(xs[lo] + (xs[hi] - xs[lo]) * (pos - lo))
    out = []
    for e in sorted(edges):
        if not out or e != out[-1]:
            out.append(e)
    return out


def _bin_oracle(edges, x):
    b = len(edges) - 1 if len(edges) > 1 else 1
    for i in range(1, len(edges)):
        if x <= edges[i]:
            return max(1, min(i, b))
    return b


def test_vocabulary_first_occurrence_and_unk():
    log = make_log([["B", "A", "B"], ["C", "A"]])
    v = build_vocabulary(log.traces)
    assert v.token_to_index == {"B": 1, "A": 2, "C": 3}
    assert v.size == 4 and v.tokens[0] == UNK
    assert encode(v, "Z") == 0 and encode(v, "A") == 2


def test_missing_values_get_their_own_token():
    t = Trace("c", (Event("c", "A", make_trace("c", ["A"]).events[0].timestamp, None),))
    v = build_vocabulary([t], "resource")
    assert MISSING in v.token_to_index


def test_quantile_edges_of_known_sample():
    bins = fit_quantile_bins([1, 2, 3, 4, 5, 6, 7, 8, 9], 4)
    assert bins.edges == (1.0, 3.0, 5.0, 7.0, 9.0)
    assert discretize(bins, 3.0) == 1 and discretize(bins, 3.5) == 2
    assert discretize(bins, -100) == 1 and discretize(bins, 100) == 4


def test_constant_values_collapse_to_one_bin():
    bins = fit_quantile_bins([2.0] * 10, 4)
    assert bins.edges == (2.0,) and bins.n_bins == 1
    assert discretize(bins, 2.0) == 1 and discretize(bins, 7.0) == 1


def test_bin_errors():
    with pytest.raises(FitError):
        fit_quantile_bins([], 4)
    with pytest.raises(ParameterError):
        fit_quantile_bins([1.0, 2.0], 1)


@given(
    st.lists(st.floats(-1e6, 1e6, allow_nan=False), min_size=1, max_size=80),
    st.integers(2, 8),
    st.lists(st.floats(-2e6, 2e6, allow_nan=False), min_size=1, max_size=20),
)
def test_bins_match_hand_written_oracle(values, n_bins, probes):
    bins = fit_quantile_bins(values, n_bins)
    assert list(bins.edges) == pytest.approx(_quantile_oracle(values, n_bins), rel=1e-12, abs=1e-9)
    for x in probes + values:
        assert discretize(bins, x) == _bin_oracle(list(bins.edges), x)


def test_vectorized_discretize_matches_scalar(rng):
    x = rng.normal(size=200)
    bins = fit_quantile_bins(x, 5)
    assert discretize(bins, x).tolist() == [discretize(bins, v) for v in x]


def test_temporal_features():
    t = make_trace("c", ["A", "B", "C"], gaps=[0, 10, 30])
    f = extract_temporal_features(t)
    assert f.dt_prev.tolist() == [0, 10, 30]
    assert f.dt_start.tolist() == [0, 10, 40]


def test_encoder_columns_and_unknowns():
    train = make_log([["A", "B", "C"], ["A", "C"]], resources=["R1", "R2", "R1"])
    enc = EventLogEncoder(n_bins=2).fit(train)
    assert enc.feature_names_ == ("activity", "resource", "dt_prev", "dt_start")
    assert enc.cardinalities_[0] == 4 and enc.cardinalities_[1] == 3
    out = enc.transform([make_trace("z", ["A", "Q"], resources=["R9", "R1"])])[0]
    assert out.ids.shape == (2, 4)
    assert out.ids[1, 0] == 0 and out.ids[0, 1] == 0
    assert out.ids[:, 2:].min() >= 1
    assert (out.ids.max(axis=0) < np.asarray(enc.cardinalities_)).all()


def test_encoder_without_resource_and_not_fitted():
    enc = EventLogEncoder(use_resource=False)
    with pytest.raises(Exception):
        enc.transform(make_log([["A"]]))
    enc.fit(make_log([["A", "B"]]))
    assert enc.feature_names_ == ("activity", "dt_prev", "dt_start")
    assert enc.get_params()["use_resource"] is False


def test_fit_is_independent_of_other_traces():
    train = make_log([["A", "B"], ["B", "C"]])
    a = EventLogEncoder().fit(train)
    b = EventLogEncoder().fit(train)
    assert a.vocabularies_ == b.vocabularies_ and a.bins_ == b.bins_
