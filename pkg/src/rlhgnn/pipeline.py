"""End-to-end training, evaluation, cross-validation, ablation and artifact IO.

Training runs in two stages on disjoint trace sets: four structure-specific
predictors on the baseline half (early-stopped on validation traces), then
the structure-selection policy on the RL half using those predictors'
correctness as reward.
"""

from __future__ import annotations

import io
import json
import time
import zipfile
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from .event_log import EventLog, Trace, split_folds, split_training_portion
from .exceptions import ArtifactError, ParameterError, PipelineOrderError, RLHGNNError, StageError
from .hgnn import HGNNClassifier, HeteroGraphModel, PredictorConfig, collate, make_sample, sample_from_graph
from .metrics import ClassReport, accuracy, confusion_matrix, gmean, macro_f1, per_class_report
from .nn.autograd import no_grad
from .nn import functional as F
from .nn.serialize import dump_params, load_params
from .preprocess import BinEdges, EncodedTrace, EventLogEncoder, Vocabulary
from .procgraph import STRUCTURES, assemble_structure, structure_id
from .rl import QNetwork, Standardizer, StructureSelector, extract_state, greedy_actions, q_forward, state_matrix

ARTIFACT_FORMAT = "rlhgnn-artifacts"
ARTIFACT_VERSION = 1
POLICIES = ("adaptive", *STRUCTURES)


def _policy_action(policy) -> int | None:
    if policy is None or policy == "adaptive":
        return None
    return STRUCTURES.index(structure_id(policy))


@dataclass
class Metrics:
    accuracy: float
    macro_f1: float
    gmean: float
    confusion: np.ndarray
    labels: list
    per_class: list
    action_histogram: tuple
    n_prefixes: int
    latency_mean_ms: float | None = None
    latency_p95_ms: float | None = None

    def summary(self) -> dict:
        out = {
            "accuracy": self.accuracy,
            "macro_f1": self.macro_f1,
            "gmean": self.gmean,
            "n_prefixes": self.n_prefixes,
        }
        out.update({f"n_{s}": int(c) for s, c in zip(STRUCTURES, self.action_histogram)})
        return out


def compute_metrics(y_true, y_pred, actions, label_names=None) -> Metrics:
    cm, labels = confusion_matrix(y_true, y_pred)
    names = [label_names[int(i)] for i in labels] if label_names is not None else labels.tolist()
    hist = np.bincount(np.asarray(actions, dtype=np.int64), minlength=len(STRUCTURES))
    return Metrics(
        accuracy(cm), macro_f1(cm), gmean(cm), cm, names, per_class_report(cm, names),
        tuple(int(c) for c in hist), int(len(y_true)),
    )


def mean_metrics(metrics: Sequence[Metrics]) -> dict:
    """Arithmetic mean of each scalar metric (histogram counts are summed)."""
    if not metrics:
        raise ParameterError("no metrics to average")
    rows = [m.summary() for m in metrics]
    out = {}
    for key in rows[0]:
        vals = [r[key] for r in rows]
        out[key] = sum(vals) if key.startswith("n_") else float(np.mean(vals))
    return out


def _stage(name, fn, *args, **kwargs):
    try:
        return fn(*args, **kwargs)
    except StageError:
        raise
    except (RLHGNNError, ValueError, IndexError, FloatingPointError) as exc:
        raise StageError(name, exc) from exc


def _fit_predictor(params: dict, structure: str, train, y, val, y_val):
    est = HGNNClassifier(structure=structure, **params)
    return _stage(f"predictor {structure}", est.fit, train, y, eval_set=(val, y_val))


class RLHGNN(BaseEstimator):
    """Adaptive next-activity predictor.

    ``fit(X, validation=..., rl=...)`` takes lists of :class:`~rlhgnn.event_log.Trace`.
    When ``validation`` or ``rl`` is omitted, ``X`` is split 80/20 into
    training and validation traces and the training part halved into
    baseline and RL traces.

    ``predict`` and ``predict_proba`` treat each input trace as a prefix and
    score the activity that follows its last event.
    """

    def __init__(
        self,
        n_bins=4,
        use_resource=True,
        categorical_attributes=(),
        numeric_attributes=(),
        min_k=1,
        hidden_dim=128,
        n_layers=2,
        dropout=0.1,
        activity_embedding_dim=None,
        aux_embedding_dim=16,
        aggregators=None,
        uniform_aggregator=None,
        mlp_dim=None,
        batch_size=64,
        learning_rate=1e-3,
        max_epochs=100,
        patience=10,
        alpha=1.0,
        beta=0.1,
        gamma_eff=0.1,
        cost=(0.0, 1.0 / 3.0, 1.0 / 3.0, 1.0),
        q_hidden=(256, 128, 128),
        q_learning_rate=1e-4,
        buffer_size=50_000,
        q_batch_size=64,
        warmup=1_000,
        sync_every=2_000,
        discount=0.99,
        epsilon_start=1.0,
        epsilon_end=0.1,
        epsilon_horizon=None,
        rl_passes=1,
        min_updates=2_000,
        n_jobs=1,
        random_state=0,
    ):
        self.n_bins = n_bins
        self.use_resource = use_resource
        self.categorical_attributes = categorical_attributes
        self.numeric_attributes = numeric_attributes
        self.min_k = min_k
        self.hidden_dim = hidden_dim
        self.n_layers = n_layers
        self.dropout = dropout
        self.activity_embedding_dim = activity_embedding_dim
        self.aux_embedding_dim = aux_embedding_dim
        self.aggregators = aggregators
        self.uniform_aggregator = uniform_aggregator
        self.mlp_dim = mlp_dim
        self.batch_size = batch_size
        self.learning_rate = learning_rate
        self.max_epochs = max_epochs
        self.patience = patience
        self.alpha = alpha
        self.beta = beta
        self.gamma_eff = gamma_eff
        self.cost = cost
        self.q_hidden = q_hidden
        self.q_learning_rate = q_learning_rate
        self.buffer_size = buffer_size
        self.q_batch_size = q_batch_size
        self.warmup = warmup
        self.sync_every = sync_every
        self.discount = discount
        self.epsilon_start = epsilon_start
        self.epsilon_end = epsilon_end
        self.epsilon_horizon = epsilon_horizon
        self.rl_passes = rl_passes
        self.min_updates = min_updates
        self.n_jobs = n_jobs
        self.random_state = random_state

    # -- component factories ------------------------------------------------

    def _encoder(self):
        return EventLogEncoder(
            self.n_bins, self.use_resource, tuple(self.categorical_attributes), tuple(self.numeric_attributes)
        )

    def _predictor_params(self) -> dict:
        return dict(
            cardinalities=self.encoder_.cardinalities_,
            feature_names=self.encoder_.feature_names_,
            hidden_dim=self.hidden_dim,
            n_layers=self.n_layers,
            dropout=self.dropout,
            activity_embedding_dim=self.activity_embedding_dim,
            aux_embedding_dim=self.aux_embedding_dim,
            aggregators=self.aggregators,
            uniform_aggregator=self.uniform_aggregator,
            mlp_dim=self.mlp_dim,
            batch_size=self.batch_size,
            learning_rate=self.learning_rate,
            max_epochs=self.max_epochs,
            patience=self.patience,
            random_state=self.random_state,
        )

    def _selector(self) -> StructureSelector:
        return StructureSelector(
            alpha=self.alpha, beta=self.beta, gamma_eff=self.gamma_eff, cost=tuple(self.cost),
            hidden=tuple(self.q_hidden), learning_rate=self.q_learning_rate, buffer_size=self.buffer_size,
            batch_size=self.q_batch_size, warmup=self.warmup, sync_every=self.sync_every,
            discount=self.discount, epsilon_start=self.epsilon_start, epsilon_end=self.epsilon_end,
            epsilon_horizon=self.epsilon_horizon, passes=self.rl_passes, min_updates=self.min_updates,
            random_state=self.random_state,
        )

    # -- data ---------------------------------------------------------------

    def encode_prefixes(self, traces: Sequence[Trace]) -> tuple[list[EncodedTrace], np.ndarray]:
        """All prefixes of length >= ``min_k`` and the encoded activity that follows each."""
        check_is_fitted(self, "encoder_")
        prefixes, labels = [], []
        for enc in self.encoder_.transform(list(traces)):
            for k in range(self.min_k, len(enc)):
                prefixes.append(enc.prefix(k))
                labels.append(int(enc.ids[k, 0]))
        return prefixes, np.asarray(labels, dtype=np.int64)

    # -- fitting ------------------------------------------------------------

    def fit(self, X, y=None, validation=None, rl=None):
        traces = list(X.traces if isinstance(X, EventLog) else X)
        if validation is None or rl is None:
            rng = np.random.default_rng(self.random_state)
            base_i, rl_i, val_i = split_training_portion(range(len(traces)), rng)
            baseline = [traces[i] for i in base_i]
            rl = [traces[i] for i in rl_i]
            validation = [traces[i] for i in val_i]
        else:
            baseline = traces
        validation, rl = list(validation), list(rl)

        self.encoder_ = _stage("preprocess", self._encoder().fit, baseline + rl + validation)
        train_x, train_y = self.encode_prefixes(baseline)
        val_x, val_y = self.encode_prefixes(validation)
        rl_x, rl_y = self.encode_prefixes(rl)
        for name, part in (("baseline", train_x), ("validation", val_x), ("rl", rl_x)):
            if not part:
                raise StageError("preprocess", ParameterError(f"the {name} traces yield no prefixes"))

        params = self._predictor_params()
        if self.n_jobs == 1:
            fitted = [_fit_predictor(params, s, train_x, train_y, val_x, val_y) for s in STRUCTURES]
        else:
            from joblib import Parallel, delayed

            fitted = Parallel(n_jobs=self.n_jobs)(
                delayed(_fit_predictor)(params, s, train_x, train_y, val_x, val_y) for s in STRUCTURES
            )
        self.predictors_ = dict(zip(STRUCTURES, fitted))

        samples = [make_sample(p) for p in rl_x]
        correct = np.column_stack(
            [self.predictors_[s].predict_proba_samples(samples).argmax(axis=1) == rl_y for s in STRUCTURES]
        )
        self.selector_ = _stage("policy", self._selector().fit, rl_x, correct)
        self.rl_correct_rate_ = correct.mean(axis=0)
        return self

    # -- inference ----------------------------------------------------------

    def _check_ready(self):
        for attr in ("encoder_", "predictors_", "selector_"):
            if not hasattr(self, attr):
                raise PipelineOrderError("the model must be fitted (or loaded) before prediction")

    def select_structures(self, prefixes: Sequence[EncodedTrace], policy=None) -> np.ndarray:
        self._check_ready()
        forced = _policy_action(policy)
        if forced is not None:
            return np.full(len(prefixes), forced, dtype=np.int64)
        return self.selector_.predict(prefixes)

    def predict_proba_prefixes(self, prefixes: Sequence[EncodedTrace], policy=None) -> tuple[np.ndarray, np.ndarray]:
        """Probabilities ``[n, vocab]`` and the structure index used for each prefix."""
        self._check_ready()
        actions = self.select_structures(prefixes, policy)
        n_classes = self.encoder_.activity_vocabulary.size
        probs = np.zeros((len(prefixes), n_classes))
        for a, s in enumerate(STRUCTURES):
            rows = np.flatnonzero(actions == a)
            if rows.size:
                probs[rows] = self.predictors_[s].predict_proba_samples([make_sample(prefixes[i]) for i in rows])
        return probs, actions

    def _encode_as_prefixes(self, X) -> list[EncodedTrace]:
        self._check_ready()
        traces = [X] if isinstance(X, Trace) else list(X)
        return self.encoder_.transform(traces)

    def predict_proba(self, X, policy=None) -> np.ndarray:
        return self.predict_proba_prefixes(self._encode_as_prefixes(X), policy)[0]

    def predict(self, X, policy=None) -> np.ndarray:
        tokens = self.encoder_.activity_vocabulary.tokens
        return np.asarray([tokens[i] for i in self.predict_proba(X, policy).argmax(axis=1)], dtype=object)

    def predict_one(self, prefix: EncodedTrace, policy=None) -> tuple[str, np.ndarray]:
        """Single-prefix path: state, selection, graph build, forward pass."""
        forced = _policy_action(policy)
        a = self.selector_.select(prefix) if forced is None else forced
        s = STRUCTURES[a]
        model = self.predictors_[s].model_
        batch = collate([sample_from_graph(assemble_structure(prefix, s), prefix)], s, model.config)
        with no_grad():
            logits = model.forward(batch).data.astype(np.float64)
        return s, F.softmax(logits)[0]

    def evaluate(self, traces: Sequence[Trace], policy=None) -> Metrics:
        prefixes, labels = self.encode_prefixes(traces)
        if not prefixes:
            raise ParameterError("the evaluation traces yield no prefixes")
        probs, actions = self.predict_proba_prefixes(prefixes, policy)
        return compute_metrics(labels, probs.argmax(axis=1), actions, self.encoder_.activity_vocabulary.tokens)


# ---------------------------------------------------------------------------
# protocol


@dataclass
class FoldResult:
    fold: int
    model: RLHGNN
    metrics: Metrics
    seconds: float = 0.0


@dataclass
class CVResult:
    folds: list
    mean: dict
    assignment: object = None


def fold_seed(seed: int, fold: int) -> int:
    return int(seed) + 1000 * int(fold)


def fold_traces(log: EventLog, assignment, fold: int) -> dict:
    return {r: [log.traces[i] for i in assignment.indices(fold, r)] for r in ("baseline", "rl", "validation", "test")}


def run_fold(log: EventLog, fold: int, params: dict | None = None, seed: int = 0, assignment=None) -> FoldResult:
    assignment = assignment or split_folds(log, seed)
    parts = fold_traces(log, assignment, fold)
    start = time.perf_counter()
    model = RLHGNN(**{**(params or {}), "random_state": fold_seed(seed, fold)})
    model.fit(parts["baseline"], validation=parts["validation"], rl=parts["rl"])
    metrics = _stage("evaluate", model.evaluate, parts["test"])
    return FoldResult(fold, model, metrics, time.perf_counter() - start)


def run_cv(log: EventLog, params: dict | None = None, seed: int = 0, n_folds: int = 3, n_jobs: int = 1) -> CVResult:
    assignment = split_folds(log, seed, n_folds)
    if n_jobs == 1:
        results = [run_fold(log, f, params, seed, assignment) for f in range(n_folds)]
    else:
        from joblib import Parallel, delayed

        results = Parallel(n_jobs=n_jobs)(delayed(run_fold)(log, f, params, seed, assignment) for f in range(n_folds))
    return CVResult(results, mean_metrics([r.metrics for r in results]), assignment)


def ablation_run(log: EventLog, params: dict | None = None, seed: int = 0, n_folds: int = 3, cv: CVResult | None = None) -> dict:
    """Mean metrics per policy (four fixed structures and adaptive) over the same trained folds."""
    cv = cv or run_cv(log, params, seed, n_folds)
    out = {}
    for policy in POLICIES:
        per_fold = []
        for r in cv.folds:
            test = fold_traces(log, cv.assignment, r.fold)["test"]
            per_fold.append(r.metrics if policy == "adaptive" else r.model.evaluate(test, policy))
        out[policy] = mean_metrics(per_fold)
    return out


@dataclass(frozen=True)
class LatencyStats:
    mean_ms: float
    p95_ms: float
    n: int


def benchmark_latency(model: RLHGNN, prefixes: Sequence[EncodedTrace], repetitions: int = 1, policy=None, discard: float = 0.1) -> LatencyStats:
    """Wall time per prediction; the first ``discard`` fraction of timings is dropped as warm-up."""
    if not prefixes or repetitions < 1:
        raise ParameterError("need at least one prefix and one repetition")
    timings = []
    for _ in range(repetitions):
        for p in prefixes:
            t0 = time.perf_counter()
            model.predict_one(p, policy)
            timings.append(time.perf_counter() - t0)
    kept = np.asarray(timings[int(len(timings) * discard):] or timings) * 1000.0
    return LatencyStats(float(kept.mean()), float(np.percentile(kept, 95)), int(kept.size))


# ---------------------------------------------------------------------------
# artifacts

_FIXED_TIME = (1980, 1, 1, 0, 0, 0)


def _jsonable(value):
    if isinstance(value, (tuple, list)):
        return [_jsonable(v) for v in value]
    if isinstance(value, dict):
        return {str(k): _jsonable(v) for k, v in value.items()}
    if isinstance(value, np.generic):
        return value.item()
    return value


def _encoder_state(enc: EventLogEncoder) -> dict:
    return {
        "params": _jsonable(enc.get_params()),
        "vocabularies": {k: v.token_to_index for k, v in enc.vocabularies_.items()},
        "bins": {k: list(b.edges) for k, b in enc.bins_.items()},
        "feature_names": list(enc.feature_names_),
        "cardinalities": list(enc.cardinalities_),
    }


def _restore_encoder(state: dict) -> EventLogEncoder:
    p = state["params"]
    enc = EventLogEncoder(
        p["n_bins"], p["use_resource"], tuple(p["categorical_attributes"]), tuple(p["numeric_attributes"])
    )
    enc.vocabularies_ = {k: Vocabulary(k, dict(v)) for k, v in state["vocabularies"].items()}
    enc.bins_ = {k: BinEdges(k, tuple(float(x) for x in v)) for k, v in state["bins"].items()}
    enc.feature_names_ = tuple(state["feature_names"])
    enc.cardinalities_ = tuple(state["cardinalities"])
    return enc


_TUPLE_PARAMS = ("categorical_attributes", "numeric_attributes", "cost", "q_hidden")


def save_artifacts(model: RLHGNN, path) -> None:
    """Write the fitted model as one zip: ``manifest.json`` plus one parameter blob per network."""
    model._check_ready()
    manifest = {
        "format": ARTIFACT_FORMAT,
        "version": ARTIFACT_VERSION,
        "params": _jsonable(model.get_params()),
        "encoder": _encoder_state(model.encoder_),
        "predictors": {s: _jsonable(model.predictors_[s].header()) for s in STRUCTURES},
        "selector": _jsonable(model.selector_.header()),
    }
    blobs = {"manifest.json": json.dumps(manifest, sort_keys=True, indent=1).encode("utf-8")}
    for s in STRUCTURES:
        pm = model.predictors_[s].model_
        blobs[f"predictor_{s}.bin"] = dump_params(pm.params.snapshot(), {"structure_id": s})
    blobs["selector.bin"] = dump_params(model.selector_.qnet_.params.snapshot(), {"role": "selector"})
    buf = io.BytesIO()
    with zipfile.ZipFile(buf, "w", zipfile.ZIP_DEFLATED) as zf:
        for name, data in blobs.items():
            info = zipfile.ZipInfo(name, date_time=_FIXED_TIME)
            info.compress_type = zipfile.ZIP_DEFLATED
            info.external_attr = 0o644 << 16
            zf.writestr(info, data)
    Path(path).write_bytes(buf.getvalue())


def _load_into(store, data: bytes, what: str):
    params, _ = load_params(data)
    if set(params) != set(store.params):
        raise ArtifactError(f"{what}: parameter names do not match the recorded configuration")
    for name, t in store.params.items():
        if params[name].shape != t.data.shape:
            raise ArtifactError(f"{what}: parameter {name!r} has shape {params[name].shape}, expected {t.data.shape}")
    store.load(params)


def load_artifacts(path) -> RLHGNN:
    try:
        with zipfile.ZipFile(Path(path)) as zf:
            blobs = {n: zf.read(n) for n in zf.namelist()}
    except (zipfile.BadZipFile, OSError, EOFError, zipfile.LargeZipFile) as exc:
        raise ArtifactError(f"cannot read artifact bundle {path}: {exc}") from None
    except Exception as exc:  # zlib errors on corrupted members
        raise ArtifactError(f"corrupt artifact bundle {path}: {exc}") from None
    try:
        manifest = json.loads(blobs["manifest.json"].decode("utf-8"))
    except (KeyError, UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise ArtifactError(f"artifact bundle has no readable manifest: {exc}") from None
    if manifest.get("format") != ARTIFACT_FORMAT:
        raise ArtifactError("not an rlhgnn artifact bundle")
    if manifest.get("version") != ARTIFACT_VERSION:
        raise ArtifactError(f"unsupported artifact version {manifest.get('version')!r} (expected {ARTIFACT_VERSION})")
    try:
        params = dict(manifest["params"])
        for key in _TUPLE_PARAMS:
            params[key] = tuple(params[key])
        model = RLHGNN(**params)
        model.encoder_ = _restore_encoder(manifest["encoder"])
        vocab_size = model.encoder_.activity_vocabulary.size
        model.predictors_ = {}
        for s in STRUCTURES:
            h = manifest["predictors"][s]
            if h["cardinalities"][0] != vocab_size or tuple(h["cardinalities"]) != model.encoder_.cardinalities_:
                raise ArtifactError(f"predictor {s} disagrees with the encoder about feature cardinalities")
            config = PredictorConfig(**h["config"])
            pm = HeteroGraphModel(h["cardinalities"], h["feature_names"], s, config, dtype=np.dtype(h["dtype"]))
            _load_into(pm.params, blobs[f"predictor_{s}.bin"], f"predictor {s}")
            model.predictors_[s] = HGNNClassifier.from_model(pm, random_state=params["random_state"])
        sh = manifest["selector"]
        sizes = sh["sizes"]
        qnet = QNetwork(sizes[0], tuple(sizes[1:-1]), sizes[-1], dtype=np.dtype(sh["dtype"]))
        _load_into(qnet.params, blobs["selector.bin"], "selector")
        selector = model._selector()
        selector.qnet_ = qnet
        selector.standardizer_ = Standardizer(np.asarray(sh["mean"]), np.asarray(sh["std"]))
        model.selector_ = selector
    except ArtifactError:
        raise
    except (KeyError, TypeError, ValueError, RLHGNNError) as exc:
        raise ArtifactError(f"inconsistent artifact bundle: {exc}") from None
    return model
