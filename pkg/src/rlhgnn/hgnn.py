"""Relation-specific graph neural predictor of the next activity.

Each prefix graph goes through: per-event attribute embeddings projected to
``hidden_dim``; ``n_layers`` heterogeneous convolutions

    h' = LayerNorm(dropout(ReLU(W_self h + sum_t W_t agg_t(h))) + h)

where ``agg_t`` is an LSTM over in-neighbours (forward / backward edges) or a
mean (repeat edges); a readout of the current (last) node; a two-layer ReLU
MLP; and a softmax classifier over the activity vocabulary.

Many prefix graphs are batched as one disjoint union.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field
from typing import NamedTuple, Sequence

import numpy as np
import scipy.sparse as sp
from sklearn.base import BaseEstimator, ClassifierMixin
from sklearn.utils.validation import check_is_fitted

from .exceptions import ConsistencyError, ParameterError, TrainingError
from .nn import functional as F
from .nn.autograd import Tensor, no_grad
from .nn.optim import OptimizerConfig, ParamStore, optimizer_step
from .preprocess import EncodedTrace
from .procgraph import (
    STRUCTURE_EDGE_TYPES,
    EdgeType,
    ProcessGraph,
    build_backward_edges,
    build_forward_edges,
    connect_repeated_activities,
    structure_id,
)

AGGREGATORS = ("lstm", "mean", "pool", "gcn")
DEFAULT_AGGREGATORS = {
    EdgeType.FORWARD: "lstm",
    EdgeType.BACKWARD: "lstm",
    EdgeType.REPEAT: "mean",
}
_SHORT = {EdgeType.FORWARD: "fwd", EdgeType.BACKWARD: "bwd", EdgeType.REPEAT: "rep"}


@dataclass
class PredictorConfig:
    hidden_dim: int = 128
    n_layers: int = 2
    dropout: float = 0.1
    activity_embedding_dim: int | None = None
    aux_embedding_dim: int = 16
    aggregators: dict = field(default_factory=lambda: {t.value: a for t, a in DEFAULT_AGGREGATORS.items()})
    uniform_aggregator: str | None = None
    mlp_dim: int | None = None

    def __post_init__(self):
        if self.hidden_dim < 1 or self.n_layers < 1 or self.aux_embedding_dim < 1:
            raise ParameterError("dimensions and layer count must be >= 1")
        if not 0.0 <= self.dropout < 1.0:
            raise ParameterError("dropout must lie in [0, 1)")
        if self.uniform_aggregator is not None and self.uniform_aggregator not in AGGREGATORS:
            raise ParameterError(f"unknown aggregator {self.uniform_aggregator!r}")
        for k, v in self.aggregators.items():
            if v not in AGGREGATORS:
                raise ParameterError(f"unknown aggregator {v!r} for {k}")

    def aggregator_for(self, etype: EdgeType) -> str:
        if self.uniform_aggregator:
            return self.uniform_aggregator
        return self.aggregators.get(EdgeType(etype).value, DEFAULT_AGGREGATORS[EdgeType(etype)])


# ---------------------------------------------------------------------------
# batching


class GraphSample(NamedTuple):
    ids: np.ndarray
    edges: dict  # EdgeType -> int64 [E, 2], 0-based (src, dst)


def _to_array(edges) -> np.ndarray:
    if not edges:
        return np.zeros((0, 2), dtype=np.int64)
    return np.asarray(edges, dtype=np.int64) - 1


def make_sample(prefix: EncodedTrace) -> GraphSample:
    """All three edge lists of a prefix (structures select a subset at batching time)."""
    k = len(prefix)
    acts = [int(a) for a in prefix.activity_ids]
    return GraphSample(
        prefix.ids,
        {
            EdgeType.FORWARD: _to_array(build_forward_edges(k)),
            EdgeType.BACKWARD: _to_array(build_backward_edges(k)),
            EdgeType.REPEAT: _to_array(connect_repeated_activities(acts, k)),
        },
    )


def sample_from_graph(graph: ProcessGraph, prefix: EncodedTrace) -> GraphSample:
    if graph.num_nodes != len(prefix):
        raise ConsistencyError(
            f"graph has {graph.num_nodes} nodes but the prefix has {len(prefix)} events"
        )
    return GraphSample(prefix.ids, {t: graph.edge_array(t) for t in graph.edge_types})


class Relation(NamedTuple):
    kind: str
    groups: list  # [(targets [r], sources [r, m])] for lstm / pool
    matrix: object  # scipy csr for mean / gcn


@dataclass
class GraphBatch:
    ids: np.ndarray
    readout: np.ndarray
    relations: dict  # EdgeType -> Relation

    @property
    def n_nodes(self):
        return self.ids.shape[0]


def _relation(src, dst, n, kind) -> Relation:
    if src.size == 0:
        return Relation(kind, [], None)
    if kind in ("lstm", "pool"):
        order = np.lexsort((src, dst))
        src, dst = src[order], dst[order]
        targets, starts, counts = np.unique(dst, return_index=True, return_counts=True)
        groups = []
        for m in np.unique(counts):
            sel = counts == m
            pos = starts[sel][:, None] + np.arange(m)[None, :]
            groups.append((targets[sel], src[pos]))
        return Relation(kind, groups, None)
    deg_in = np.bincount(dst, minlength=n).astype(np.float64)
    if kind == "mean":
        w = 1.0 / deg_in[dst]
    else:
        deg_out = np.bincount(src, minlength=n).astype(np.float64)
        w = 1.0 / np.sqrt(deg_in[dst] * deg_out[src])
    mat = sp.csr_matrix((w, (dst, src)), shape=(n, n))
    return Relation(kind, [], mat)


def collate(samples: Sequence[GraphSample], structure: str, config: PredictorConfig) -> GraphBatch:
    sizes = np.array([s.ids.shape[0] for s in samples], dtype=np.int64)
    offsets = np.concatenate([[0], np.cumsum(sizes)[:-1]])
    n = int(sizes.sum())
    ids = np.concatenate([s.ids for s in samples], axis=0)
    relations = {}
    for etype in STRUCTURE_EDGE_TYPES[structure]:
        parts = [s.edges[etype] + off for s, off in zip(samples, offsets) if len(s.edges[etype])]
        e = np.concatenate(parts) if parts else np.zeros((0, 2), dtype=np.int64)
        relations[etype] = _relation(e[:, 0], e[:, 1], n, config.aggregator_for(etype))
    return GraphBatch(ids, offsets + sizes - 1, relations)


# ---------------------------------------------------------------------------
# model


class HeteroGraphModel:
    """Parameters and forward pass for one graph structure."""

    def __init__(self, cardinalities, feature_names, structure, config: PredictorConfig, seed=0, dtype=np.float32):
        self.cardinalities = tuple(int(c) for c in cardinalities)
        self.feature_names = tuple(feature_names)
        if len(self.cardinalities) != len(self.feature_names):
            raise ParameterError("one cardinality per feature is required")
        self.structure = structure_id(structure)
        self.config = config
        self.n_classes = self.cardinalities[0]
        self.params = ParamStore(seed, dtype)
        self._build()

    def _embedding_dim(self, j):
        if j == 0:
            if self.config.activity_embedding_dim is None:
                return min(self.cardinalities[0], 128)
            return self.config.activity_embedding_dim
        return self.config.aux_embedding_dim

    def _build(self):
        c, P = self.config, self.params
        d = c.hidden_dim
        total = 0
        for j, (name, card) in enumerate(zip(self.feature_names, self.cardinalities)):
            dim = self._embedding_dim(j)
            P.glorot(f"emb.{name}", card, dim)
            total += dim
        P.glorot("in.W", total, d)
        P.zeros("in.b", (d,))
        for l in range(c.n_layers):
            P.glorot(f"layer{l}.self.W", d, d)
            P.zeros(f"layer{l}.b", (d,))
            for etype in STRUCTURE_EDGE_TYPES[self.structure]:
                key = f"layer{l}.{_SHORT[etype]}"
                P.glorot(f"{key}.W", d, d)
                agg = c.aggregator_for(etype)
                if agg == "lstm":
                    P.glorot(f"{key}.lstm.W_ih", d, 4 * d)
                    P.glorot(f"{key}.lstm.W_hh", d, 4 * d)
                    b = np.zeros(4 * d)
                    b[d:2 * d] = 1.0  # forget gate
                    P.add(f"{key}.lstm.b", b)
                elif agg == "pool":
                    P.glorot(f"{key}.pool.W", d, d)
                    P.zeros(f"{key}.pool.b", (d,))
            P.full(f"layer{l}.ln.gain", (d,), 1.0)
            P.zeros(f"layer{l}.ln.bias", (d,))
        m = c.mlp_dim or d
        P.glorot("mlp1.W", d, m)
        P.zeros("mlp1.b", (m,))
        P.glorot("mlp2.W", m, m)
        P.zeros("mlp2.b", (m,))
        P.glorot("cls.W", m, self.n_classes)
        P.zeros("cls.b", (self.n_classes,))

    # -- pieces -------------------------------------------------------------

    def embed(self, ids: np.ndarray) -> Tensor:
        P = self.params
        for j, card in enumerate(self.cardinalities):
            col = ids[:, j]
            if col.size and (col.min() < 0 or col.max() >= card):
                raise IndexError(f"feature {self.feature_names[j]!r}: id out of range [0, {card})")
        embs = [F.embedding(P[f"emb.{name}"], ids[:, j]) for j, name in enumerate(self.feature_names)]
        x = F.concat(embs, axis=1) if len(embs) > 1 else embs[0]
        return F.linear(x, P["in.W"], P["in.b"])

    def aggregate(self, layer: int, etype: EdgeType, h: Tensor, relation: Relation) -> Tensor | None:
        """Per-node aggregate of in-neighbours under one edge type; ``None`` when there are none."""
        P = self.params
        key = f"layer{layer}.{_SHORT[etype]}"
        n, d = h.shape
        if relation.kind in ("mean", "gcn"):
            if relation.matrix is None:
                return None
            return F.spmm(relation.matrix, h)
        if not relation.groups:
            return None
        parts = []
        if relation.kind == "lstm":
            w_ih, w_hh, b = P[f"{key}.lstm.W_ih"], P[f"{key}.lstm.W_hh"], P[f"{key}.lstm.b"]
            for targets, sources in relation.groups:
                xs = [F.gather_rows(h, sources[:, t]) for t in range(sources.shape[1])]
                parts.append((targets, F.lstm_sequence(xs, w_ih, w_hh, b)))
        else:
            pooled = F.relu(F.linear(h, P[f"{key}.pool.W"], P[f"{key}.pool.b"]))
            for targets, sources in relation.groups:
                parts.append((targets, F.grouped_max(pooled, sources)))
        return F.scatter_rows(n, parts, d, h.dtype)

    def layer(self, l: int, h: Tensor, batch: GraphBatch, training=False, rng=None) -> Tensor:
        P = self.params
        terms = [F.linear(h, P[f"layer{l}.self.W"], P[f"layer{l}.b"])]
        for etype, relation in batch.relations.items():
            if f"layer{l}.{_SHORT[etype]}.W" not in P:
                raise ConsistencyError(f"a {self.structure} model has no weights for {etype.value} edges")
            agg = self.aggregate(l, etype, h, relation)
            if agg is not None:
                terms.append(F.matmul(agg, P[f"layer{l}.{_SHORT[etype]}.W"]))
        z = F.relu(F.add_n(terms) if len(terms) > 1 else terms[0])
        z = F.dropout(z, self.config.dropout, training, rng)
        return F.layer_norm(F.add(z, h), P[f"layer{l}.ln.gain"], P[f"layer{l}.ln.bias"])

    def forward(self, batch: GraphBatch, training=False, rng=None) -> Tensor:
        """Logits ``[n_graphs, n_classes]``."""
        P = self.params
        h = self.embed(batch.ids)
        for l in range(self.config.n_layers):
            h = self.layer(l, h, batch, training, rng)
        r = F.gather_rows(h, batch.readout)
        z = F.dropout(F.relu(F.linear(r, P["mlp1.W"], P["mlp1.b"])), self.config.dropout, training, rng)
        z = F.dropout(F.relu(F.linear(z, P["mlp2.W"], P["mlp2.b"])), self.config.dropout, training, rng)
        return F.linear(z, P["cls.W"], P["cls.b"])

    def predict_proba_samples(self, samples: Sequence[GraphSample], batch_size=512) -> np.ndarray:
        out = []
        with no_grad():
            for start in range(0, len(samples), batch_size):
                batch = collate(samples[start:start + batch_size], self.structure, self.config)
                out.append(F.softmax(self.forward(batch).data.astype(np.float64)))
        if not out:
            return np.zeros((0, self.n_classes))
        return np.concatenate(out, axis=0)


# ---------------------------------------------------------------------------
# single-graph entry points


def _single_batch(graph: ProcessGraph, prefix: EncodedTrace, model: HeteroGraphModel) -> GraphBatch:
    return collate([sample_from_graph(graph, prefix)], graph.structure_id, model.config)


def embed_nodes(prefix: EncodedTrace, model: HeteroGraphModel) -> Tensor:
    return model.embed(prefix.ids)


def aggregate_relation(graph: ProcessGraph, feats: Tensor, etype: EdgeType, model: HeteroGraphModel, layer=0) -> Tensor:
    """Aggregate for every node; nodes without in-neighbours get zeros."""
    etype = EdgeType(etype)
    if etype not in graph.edge_types:
        raise ParameterError(f"{graph.structure_id} has no {etype.value} edges")
    e = graph.edge_array(etype)
    rel = _relation(e[:, 0], e[:, 1], graph.num_nodes, model.config.aggregator_for(etype))
    out = model.aggregate(layer, etype, feats, rel)
    if out is None:
        return Tensor(np.zeros(feats.shape, dtype=feats.dtype))
    return out


def hetero_layer(graph: ProcessGraph, feats: Tensor, model: HeteroGraphModel, layer=0, training=False, rng=None) -> Tensor:
    batch = collate(
        [GraphSample(np.zeros((graph.num_nodes, 1), dtype=np.int64), {t: graph.edge_array(t) for t in graph.edge_types})],
        graph.structure_id,
        model.config,
    )
    return model.layer(layer, feats, batch, training, rng)


def predict_next(graph: ProcessGraph, prefix: EncodedTrace, model: HeteroGraphModel, mode="eval", rng=None) -> np.ndarray:
    """Probability vector over the activity vocabulary for the next event."""
    if mode not in ("train", "eval"):
        raise ParameterError("mode must be 'train' or 'eval'")
    batch = _single_batch(graph, prefix, model)
    with no_grad():
        logits = model.forward(batch, training=(mode == "train"), rng=rng)
    return F.softmax(logits.data.astype(np.float64))[0]


# ---------------------------------------------------------------------------
# training


@dataclass
class TrainingHistory:
    train_loss: list = field(default_factory=list)
    val_accuracy: list = field(default_factory=list)
    best_epoch: int = -1
    best_val_accuracy: float = -1.0


def _accuracy(model, samples, labels, batch_size):
    if not samples:
        return 0.0
    probs = model.predict_proba_samples(samples, batch_size)
    return float((probs.argmax(axis=1) == np.asarray(labels)).mean())


def train_predictor(
    model: HeteroGraphModel,
    train: Sequence[GraphSample],
    train_labels,
    val: Sequence[GraphSample],
    val_labels,
    rng: np.random.Generator,
    batch_size=64,
    learning_rate=1e-3,
    max_epochs=100,
    patience=10,
    eval_batch_size=512,
    optimizer="nadam",
) -> TrainingHistory:
    """Mini-batch cross-entropy training with early stopping on validation accuracy.

    The model is left holding the best-validation parameters.
    """
    if len(train) == 0:
        raise TrainingError("no training samples")
    if len(val) == 0:
        raise TrainingError("no validation samples")
    y = np.asarray(train_labels, dtype=np.int64)
    opt = OptimizerConfig(kind=optimizer, lr=learning_rate)
    history = TrainingHistory()
    best = None
    stale = 0
    n = len(train)
    for epoch in range(max_epochs):
        perm = rng.permutation(n)
        losses = []
        for start in range(0, n, batch_size):
            idx = perm[start:start + batch_size]
            batch = collate([train[i] for i in idx], model.structure, model.config)
            logits = model.forward(batch, training=True, rng=rng)
            loss, _ = F.softmax_cross_entropy(logits, y[idx])
            loss.backward()
            optimizer_step(model.params, opt)
            losses.append(float(loss.data) * len(idx))
        history.train_loss.append(sum(losses) / n)
        acc = _accuracy(model, val, val_labels, eval_batch_size)
        history.val_accuracy.append(acc)
        if acc > history.best_val_accuracy:
            history.best_val_accuracy = acc
            history.best_epoch = epoch
            best = model.params.snapshot()
            stale = 0
        else:
            stale += 1
            if stale >= patience:
                break
    model.params.load(best)
    return history


class HGNNClassifier(ClassifierMixin, BaseEstimator):
    """Next-activity classifier over one fixed graph structure.

    ``X`` is a sequence of :class:`~rlhgnn.preprocess.EncodedTrace` prefixes
    and ``y`` the activity id following each prefix. Pass
    ``eval_set=(X_val, y_val)`` to :meth:`fit` for early stopping; without it
    the training set is monitored instead.
    """

    def __init__(
        self,
        structure="G4",
        cardinalities=None,
        feature_names=None,
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
        dtype="float32",
        random_state=0,
    ):
        self.structure = structure
        self.cardinalities = cardinalities
        self.feature_names = feature_names
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
        self.dtype = dtype
        self.random_state = random_state

    def predictor_config(self) -> PredictorConfig:
        kwargs = {}
        if self.aggregators:
            kwargs["aggregators"] = {EdgeType(k).value: v for k, v in dict(self.aggregators).items()}
        return PredictorConfig(
            hidden_dim=self.hidden_dim,
            n_layers=self.n_layers,
            dropout=self.dropout,
            activity_embedding_dim=self.activity_embedding_dim,
            aux_embedding_dim=self.aux_embedding_dim,
            uniform_aggregator=self.uniform_aggregator,
            mlp_dim=self.mlp_dim,
            **kwargs,
        )

    def _init_model(self, X):
        cards = self.cardinalities
        names = self.feature_names
        if names is None:
            names = X[0].feature_names if X else None
        if cards is None:
            if not X:
                raise TrainingError("cannot infer cardinalities without data")
            cards = tuple(int(m) + 1 for m in np.max(np.concatenate([x.ids for x in X]), axis=0))
        return HeteroGraphModel(cards, names, self.structure, self.predictor_config(), self.random_state, np.dtype(self.dtype))

    def fit(self, X, y, eval_set=None):
        X = list(X)
        if not X:
            raise TrainingError("no training samples")
        samples = [make_sample(x) for x in X]
        if eval_set is None:
            val, val_y = samples, y
        else:
            val, val_y = [make_sample(x) for x in eval_set[0]], eval_set[1]
        self.model_ = self._init_model(X)
        rng = np.random.default_rng(self.random_state)
        self.history_ = train_predictor(
            self.model_, samples, y, val, val_y, rng,
            batch_size=self.batch_size, learning_rate=self.learning_rate,
            max_epochs=self.max_epochs, patience=self.patience,
        )
        self.best_epoch_ = self.history_.best_epoch
        self.classes_ = np.arange(self.model_.n_classes)
        return self

    @classmethod
    def from_model(cls, model: HeteroGraphModel, **params) -> "HGNNClassifier":
        c = model.config
        est = cls(
            structure=model.structure, cardinalities=model.cardinalities, feature_names=model.feature_names,
            hidden_dim=c.hidden_dim, n_layers=c.n_layers, dropout=c.dropout,
            activity_embedding_dim=c.activity_embedding_dim, aux_embedding_dim=c.aux_embedding_dim,
            aggregators=dict(c.aggregators), uniform_aggregator=c.uniform_aggregator, mlp_dim=c.mlp_dim,
            dtype=str(model.params.dtype), **params,
        )
        est.model_ = model
        est.classes_ = np.arange(model.n_classes)
        return est

    def predict_proba_samples(self, samples):
        check_is_fitted(self, "model_")
        return self.model_.predict_proba_samples(samples)

    def predict_proba(self, X):
        check_is_fitted(self, "model_")
        return self.model_.predict_proba_samples([make_sample(x) for x in X])

    def predict(self, X):
        return self.predict_proba(X).argmax(axis=1)

    def header(self) -> dict:
        check_is_fitted(self, "model_")
        m = self.model_
        return {
            "structure_id": m.structure,
            "cardinalities": list(m.cardinalities),
            "feature_names": list(m.feature_names),
            "config": asdict(m.config),
            "dtype": str(m.params.dtype),
        }
