import zipfile
from dataclasses import replace

import numpy as np
import pytest

from rlhgnn.event_log import Event, EventLog, GeneratorSpec, Trace, generate_synthetic_log, split_folds
from rlhgnn.exceptions import ArtifactError, PipelineOrderError, StageError
from rlhgnn.nn import load_params
from rlhgnn.pipeline import (
    POLICIES,
    RLHGNN,
    ablation_run,
    benchmark_latency,
    fold_seed,
    fold_traces,
    load_artifacts,
    mean_metrics,
    run_cv,
    run_fold,
    save_artifacts,
)

FAST = dict(
    hidden_dim=32, n_layers=2, max_epochs=30, patience=5, aux_embedding_dim=4, learning_rate=3e-3,
    q_hidden=(32, 32), warmup=100, min_updates=300, q_learning_rate=1e-3,
)


@pytest.fixture(scope="module")
def chain_log():
    return generate_synthetic_log(GeneratorSpec(n_activities=5, n_traces=120, min_length=4, max_length=9, kind="cycle"), 0)


@pytest.fixture(scope="module")
def chain_fold(chain_log):
    return run_fold(chain_log, 0, FAST, seed=0)


def test_chain_fold_is_learned(chain_fold):
    m = chain_fold.metrics
    assert m.accuracy >= 0.95
    assert sum(m.action_histogram) == m.n_prefixes > 0
    assert chain_fold.model.random_state == fold_seed(0, 0) == 0
    assert fold_seed(3, 2) == 2003


def test_fold_roles_partition_the_log(chain_log):
    a = split_folds(chain_log, 0)
    parts = fold_traces(chain_log, a, 1)
    ids = [t.case_id for p in parts.values() for t in p]
    assert sorted(ids) == sorted(t.case_id for t in chain_log.traces)


def test_training_is_deterministic(chain_log, chain_fold, tmp_path):
    again = run_fold(chain_log, 0, FAST, seed=0)
    assert again.metrics.summary() == chain_fold.metrics.summary()
    save_artifacts(chain_fold.model, tmp_path / "a.zip")
    save_artifacts(again.model, tmp_path / "b.zip")
    assert (tmp_path / "a.zip").read_bytes() == (tmp_path / "b.zip").read_bytes()


def test_artifact_round_trip_is_exact(chain_log, chain_fold, tmp_path):
    model = chain_fold.model
    save_artifacts(model, tmp_path / "m.zip")
    back = load_artifacts(tmp_path / "m.zip")
    save_artifacts(back, tmp_path / "m2.zip")
    assert (tmp_path / "m.zip").read_bytes() == (tmp_path / "m2.zip").read_bytes()
    test = fold_traces(chain_log, split_folds(chain_log, 0), 0)["test"]
    prefixes, _ = model.encode_prefixes(test)
    p1, a1 = model.predict_proba_prefixes(prefixes)
    p2, a2 = back.predict_proba_prefixes(prefixes)
    assert np.array_equal(p1, p2) and np.array_equal(a1, a2)


def test_artifact_headers_describe_the_blobs(chain_fold, tmp_path):
    import json

    save_artifacts(chain_fold.model, tmp_path / "m.zip")
    with zipfile.ZipFile(tmp_path / "m.zip") as zf:
        names = set(zf.namelist())
        manifest = json.loads(zf.read("manifest.json"))
        blob = zf.read("predictor_G3.bin")
    assert names == {"manifest.json", "selector.bin", *(f"predictor_G{i}.bin" for i in range(1, 5))}
    params, header = load_params(blob)
    assert header == {"structure_id": "G3"}
    assert manifest["predictors"]["G3"]["structure_id"] == "G3"
    assert params["cls.W"].shape[1] == len(manifest["encoder"]["vocabularies"]["activity"]) + 1


def test_damaged_artifacts_are_rejected(chain_fold, tmp_path):
    path = tmp_path / "m.zip"
    save_artifacts(chain_fold.model, path)
    data = path.read_bytes()
    (tmp_path / "cut.zip").write_bytes(data[: len(data) // 2])
    with pytest.raises(ArtifactError):
        load_artifacts(tmp_path / "cut.zip")
    (tmp_path / "junk.zip").write_bytes(b"not a zip")
    with pytest.raises(ArtifactError):
        load_artifacts(tmp_path / "junk.zip")
    with zipfile.ZipFile(path) as src, zipfile.ZipFile(tmp_path / "v.zip", "w") as dst:
        for n in src.namelist():
            body = src.read(n)
            if n == "manifest.json":
                body = body.replace(b'"version": 1', b'"version": 99')
            dst.writestr(n, body)
    with pytest.raises(ArtifactError, match="version"):
        load_artifacts(tmp_path / "v.zip")


def test_test_traces_do_not_reach_training(chain_log):
    a = split_folds(chain_log, 0)
    test_idx = set(a.indices(0, "test"))
    scrambled = []
    for i, t in enumerate(chain_log.traces):
        if i in test_idx:
            t = Trace(t.case_id, tuple(replace(e, activity="ZZ", resource="RX") for e in t.events))
        scrambled.append(t)
    other = EventLog(tuple(scrambled), source_name="scrambled")
    m1 = run_fold(chain_log, 0, FAST, seed=0, assignment=a).model
    m2 = run_fold(other, 0, FAST, seed=0, assignment=a).model
    for s in m1.predictors_:
        p1, p2 = m1.predictors_[s].model_.params, m2.predictors_[s].model_.params
        assert all(np.array_equal(t.data, p2[k].data) for k, t in p1.items())
    assert m1.encoder_.vocabularies_ == m2.encoder_.vocabularies_


def test_forced_policies_and_predict(chain_fold, chain_log):
    model = chain_fold.model
    test = fold_traces(chain_log, split_folds(chain_log, 0), 0)["test"]
    for policy in POLICIES[1:]:
        m = model.evaluate(test, policy)
        assert m.action_histogram[POLICIES.index(policy) - 1] == m.n_prefixes
    pred = model.predict([t.prefix(3) for t in test[:5]])
    assert pred.tolist() == [t.events[3].activity for t in test[:5]]
    s, probs = model.predict_one(model.encoder_.transform([test[0]])[0].prefix(2), "G2")
    assert s == "G2" and abs(probs.sum() - 1) < 1e-6


def test_single_path_matches_batched_path(chain_fold, chain_log):
    model = chain_fold.model
    test = fold_traces(chain_log, split_folds(chain_log, 0), 0)["test"]
    prefixes, _ = model.encode_prefixes(test[:4])
    probs, actions = model.predict_proba_prefixes(prefixes)
    for p, row, a in zip(prefixes, probs, actions):
        s, single = model.predict_one(p)
        assert s == f"G{a + 1}"
        assert np.allclose(single, row, atol=1e-5)


def test_latency_stats(chain_fold, chain_log):
    prefixes, _ = chain_fold.model.encode_prefixes(chain_log.traces[:3])
    stats = benchmark_latency(chain_fold.model, prefixes, repetitions=3)
    total = 3 * len(prefixes)
    assert stats.n == total - int(total * 0.1)
    assert 0 < stats.mean_ms and stats.p95_ms > 0


def test_unfitted_model_refuses_prediction():
    with pytest.raises(PipelineOrderError):
        RLHGNN().predict_proba_prefixes([])


def test_fit_without_enough_data_reports_the_stage():
    log = [Trace("a", (Event("a", "X", __import__("datetime").datetime(2020, 1, 1)),))] * 5
    with pytest.raises(StageError) as info:
        RLHGNN(**FAST).fit(log)
    assert info.value.stage == "preprocess"


def test_cross_validation_and_ablation(chain_log):
    small = EventLog(chain_log.traces[:36], source_name="small")
    cv = run_cv(small, FAST, seed=1)
    assert [r.fold for r in cv.folds] == [0, 1, 2]
    manual = np.mean([r.metrics.accuracy for r in cv.folds])
    assert cv.mean["accuracy"] == pytest.approx(manual, abs=1e-15)
    assert cv.mean["n_prefixes"] == sum(r.metrics.n_prefixes for r in cv.folds)
    table = ablation_run(small, FAST, seed=1, cv=cv)
    assert list(table) == list(POLICIES)
    assert table["adaptive"] == mean_metrics([r.metrics for r in cv.folds])
    for policy in POLICIES[1:]:
        assert table[policy][f"n_{policy}"] == table[policy]["n_prefixes"]


def test_without_repeats_repeat_edges_change_nothing():
    log = generate_synthetic_log(GeneratorSpec(n_activities=6, n_traces=45, min_length=3, max_length=6), 4)
    assert not any(len(set(t.activities)) < len(t) for t in log.traces)
    fold = run_fold(log, 0, FAST, seed=2)
    test = fold_traces(log, split_folds(log, 2), 0)["test"]
    g1 = fold.model.evaluate(test, "G1").accuracy
    g3 = fold.model.evaluate(test, "G3").accuracy
    assert abs(g1 - g3) <= 0.02
