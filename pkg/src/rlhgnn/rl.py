"""Per-prefix graph-structure selection with a deep Q-network.

Each prefix is a one-step episode: the agent sees an 8-dimensional state,
picks one of the four structures, and is rewarded for the top-1 correctness
of that structure's predictor minus a complexity cost.
"""

from __future__ import annotations

import csv
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import NamedTuple, Sequence

import numpy as np
from sklearn.base import BaseEstimator

from .exceptions import ParameterError, PipelineOrderError, ReplayBufferError, TrainingError
from .nn import functional as F
from .nn.autograd import Tensor, as_tensor, no_grad
from .nn.optim import OptimizerConfig, ParamStore, optimizer_step
from .preprocess import EncodedTrace
from .procgraph import STRUCTURES

N_ACTIONS = len(STRUCTURES)
STATE_FIELDS = (
    "length",
    "unique",
    "entropy",
    "dt_mean",
    "dt_var",
    "rhythm",
    "repeat_count",
    "loop_depth",
)


@dataclass(frozen=True)
class StateFeatures:
    length: float
    unique: float
    entropy: float
    dt_mean: float
    dt_var: float
    rhythm: float
    repeat_count: float
    loop_depth: float

    def vector(self) -> np.ndarray:
        return np.array([getattr(self, f) for f in STATE_FIELDS], dtype=np.float64)


def extract_state(prefix: EncodedTrace) -> StateFeatures:
    """Structural, temporal and repetition summary of a prefix (unstandardized)."""
    k = len(prefix)
    if k < 1:
        raise ParameterError("prefix must contain at least one event")
    _, counts = np.unique(prefix.activity_ids, return_counts=True)
    p = counts / k
    entropy = float(-(p * np.log(p)).sum())
    gaps = np.asarray(prefix.dt_prev[1:k], dtype=np.float64)
    if gaps.size:
        mean, var = float(gaps.mean()), float(gaps.var())
    else:
        mean, var = 0.0, 0.0
    rhythm = 1.0 if mean == 0 else 1.0 / (1.0 + np.sqrt(var) / mean)
    return StateFeatures(
        float(k),
        float(len(counts)),
        max(entropy, 0.0),
        mean,
        var,
        float(rhythm),
        float((counts - 1).sum()),
        float(counts.max() - 1),
    )


def state_matrix(prefixes: Sequence[EncodedTrace]) -> np.ndarray:
    if not prefixes:
        return np.zeros((0, len(STATE_FIELDS)))
    return np.stack([extract_state(p).vector() for p in prefixes])


@dataclass
class Standardizer:
    mean: np.ndarray
    std: np.ndarray

    @classmethod
    def fit(cls, states: np.ndarray) -> "Standardizer":
        states = np.asarray(states, dtype=np.float64)
        if states.ndim != 2 or states.shape[0] == 0:
            raise TrainingError("cannot fit standardization on an empty state matrix")
        std = states.std(axis=0)
        return cls(states.mean(axis=0), np.where(std > 0, std, 1.0))

    def transform(self, states: np.ndarray) -> np.ndarray:
        return (np.asarray(states, dtype=np.float64) - self.mean) / self.std


# ---------------------------------------------------------------------------
# Q-network


class QNetwork:
    """ReLU MLP mapping a state to one value per structure."""

    def __init__(self, n_features=len(STATE_FIELDS), hidden=(256, 128, 128), n_actions=N_ACTIONS, seed=0, dtype=np.float32):
        self.sizes = (int(n_features), *(int(h) for h in hidden), int(n_actions))
        self.params = ParamStore(seed, dtype)
        for i, (a, b) in enumerate(zip(self.sizes[:-1], self.sizes[1:])):
            self.params.glorot(f"q{i}.W", a, b)
            self.params.zeros(f"q{i}.b", (b,))

    @property
    def n_actions(self):
        return self.sizes[-1]

    def forward(self, states) -> Tensor:
        h = as_tensor(np.asarray(states, dtype=self.params.dtype))
        n_layers = len(self.sizes) - 1
        for i in range(n_layers):
            h = F.linear(h, self.params[f"q{i}.W"], self.params[f"q{i}.b"])
            if i < n_layers - 1:
                h = F.relu(h)
        return h

    def copy(self) -> "QNetwork":
        other = QNetwork.__new__(QNetwork)
        other.sizes = self.sizes
        other.params = ParamStore(self.params.seed, self.params.dtype)
        for name, t in self.params.items():
            other.params.add(name, t.data.copy())
        return other


def q_forward(qnet: QNetwork, states) -> np.ndarray:
    """Q-values ``[n, 4]`` (or ``[4]`` for a single state)."""
    s = np.asarray(states, dtype=np.float64)
    with no_grad():
        q = qnet.forward(np.atleast_2d(s)).data
    return q[0] if s.ndim == 1 else q


def greedy_actions(q: np.ndarray) -> np.ndarray:
    """Argmax per row; ties go to the lowest index."""
    return np.argmax(np.atleast_2d(q), axis=1)


def select_action(q_values: np.ndarray, epsilon: float, rng: np.random.Generator) -> int:
    if not 0.0 <= epsilon <= 1.0:
        raise ParameterError("epsilon must lie in [0, 1]")
    q_values = np.asarray(q_values)
    if epsilon > 0 and rng.random() < epsilon:
        return int(rng.integers(q_values.shape[-1]))
    return int(np.argmax(q_values))


@dataclass(frozen=True)
class EpsilonSchedule:
    start: float = 1.0
    end: float = 0.1
    horizon: int = 1000

    def value(self, step: int) -> float:
        if self.horizon <= 0:
            return self.end
        frac = min(step / self.horizon, 1.0)
        return self.start + (self.end - self.start) * frac


# ---------------------------------------------------------------------------
# reward


@dataclass(frozen=True)
class RewardConfig:
    alpha: float = 1.0
    beta: float = 0.1
    gamma_eff: float = 0.1
    cost: tuple = (0.0, 1.0 / 3.0, 1.0 / 3.0, 1.0)

    def __post_init__(self):
        if self.alpha <= 0:
            raise ParameterError("alpha must be positive")
        if self.beta < 0 or self.gamma_eff < 0:
            raise ParameterError("beta and gamma_eff must be non-negative")
        if len(self.cost) != N_ACTIONS:
            raise ParameterError(f"cost needs {N_ACTIONS} entries")


def compute_reward(correct, action, cfg: RewardConfig = RewardConfig()):
    """Works elementwise on arrays of correctness flags and actions."""
    acc = np.asarray(correct, dtype=np.float64)
    cost = np.asarray(cfg.cost, dtype=np.float64)[np.asarray(action)]
    r = cfg.alpha * acc - cfg.beta * cost + cfg.gamma_eff * acc * (1.0 - cost)
    return float(r) if np.ndim(r) == 0 else r


# ---------------------------------------------------------------------------
# replay


class Transition(NamedTuple):
    state: np.ndarray
    action: int
    reward: float
    terminal: bool = True
    next_state: np.ndarray | None = None


class ReplayBatch(NamedTuple):
    states: np.ndarray
    actions: np.ndarray
    rewards: np.ndarray
    terminal: np.ndarray
    next_states: np.ndarray


class ReplayBuffer:
    """Fixed-capacity ring of transitions."""

    def __init__(self, capacity=50_000, n_features=len(STATE_FIELDS)):
        if capacity < 1:
            raise ParameterError("capacity must be >= 1")
        self.capacity = capacity
        self.states = np.zeros((capacity, n_features))
        self.next_states = np.zeros((capacity, n_features))
        self.actions = np.zeros(capacity, dtype=np.int64)
        self.rewards = np.zeros(capacity)
        self.terminal = np.ones(capacity, dtype=bool)
        self.size = 0
        self.cursor = 0

    def __len__(self):
        return self.size

    def push(self, t: Transition):
        if not 0 <= t.action < N_ACTIONS:
            raise ParameterError(f"action {t.action} out of range")
        if not np.isfinite(t.reward):
            raise ParameterError("reward must be finite")
        i = self.cursor
        self.states[i] = t.state
        self.actions[i] = t.action
        self.rewards[i] = t.reward
        self.terminal[i] = t.terminal
        self.next_states[i] = t.state if t.next_state is None else t.next_state
        self.cursor = (i + 1) % self.capacity
        self.size = min(self.size + 1, self.capacity)

    def sample(self, batch_size: int, rng: np.random.Generator) -> ReplayBatch:
        if self.size == 0:
            raise ReplayBufferError("cannot sample from an empty replay buffer")
        idx = rng.integers(self.size, size=batch_size)
        return ReplayBatch(
            self.states[idx], self.actions[idx], self.rewards[idx], self.terminal[idx], self.next_states[idx]
        )


def dqn_update(qnet: QNetwork, target: QNetwork, batch: ReplayBatch, discount=0.99, optimizer=OptimizerConfig(lr=1e-4)) -> float:
    """One regression step of Q(s, a) towards r + discount * max Q_target(s') (r alone when terminal)."""
    if len(batch.actions) == 0:
        raise ReplayBufferError("empty batch")
    y = batch.rewards.astype(np.float64)
    live = ~batch.terminal
    if live.any():
        y = y.copy()
        y[live] += discount * q_forward(target, batch.next_states[live]).max(axis=1)
    loss = F.selected_mse(qnet.forward(batch.states), batch.actions, y)
    loss.backward()
    optimizer_step(qnet.params, optimizer)
    return float(loss.data)


def sync_target(qnet: QNetwork, target: QNetwork):
    target.params.copy_from(qnet.params)


# ---------------------------------------------------------------------------
# training


@dataclass(frozen=True)
class DQNConfig:
    hidden: tuple = (256, 128, 128)
    learning_rate: float = 1e-4
    buffer_size: int = 50_000
    batch_size: int = 64
    warmup: int = 1_000
    sync_every: int = 2_000
    discount: float = 0.99
    epsilon_start: float = 1.0
    epsilon_end: float = 0.1
    epsilon_horizon: int | None = None  # None: one pass over the training states
    passes: int = 1
    min_updates: int = 2_000
    log_every: int = 100

    def __post_init__(self):
        if self.batch_size < 1 or self.buffer_size < 1 or self.sync_every < 1:
            raise ParameterError("batch, buffer and sync sizes must be >= 1")
        if self.warmup < 0 or self.passes < 1 or self.min_updates < 0:
            raise ParameterError("warmup, passes and min_updates must be non-negative (passes >= 1)")
        if not (0 <= self.epsilon_end <= 1 and 0 <= self.epsilon_start <= 1):
            raise ParameterError("epsilon bounds must lie in [0, 1]")
        if not 0 <= self.discount <= 1:
            raise ParameterError("discount must lie in [0, 1]")

    def total_steps(self, n_states: int) -> int:
        return max(self.passes * n_states, max(self.warmup, 1) - 1 + self.min_updates)


LOG_COLUMNS = ("step", "epsilon", "mean_reward", "loss", *(f"n_{s}" for s in STRUCTURES))


@dataclass
class AgentLog:
    rows: list = field(default_factory=list)
    updates: int = 0
    syncs: list = field(default_factory=list)

    def write_csv(self, path):
        with Path(path).open("w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(LOG_COLUMNS)
            w.writerows(self.rows)


def train_dqn(
    states: np.ndarray,
    correct: np.ndarray,
    config: DQNConfig = DQNConfig(),
    reward: RewardConfig = RewardConfig(),
    rng: np.random.Generator | None = None,
    seed: int = 0,
) -> tuple[QNetwork, AgentLog]:
    """Train the policy on standardized ``states[n, 8]`` with per-action correctness ``correct[n, 4]``.

    States are visited in reshuffled passes until ``config.total_steps`` is reached;
    one update per step once the buffer holds ``warmup`` transitions.
    """
    states = np.asarray(states, dtype=np.float64)
    correct = np.asarray(correct, dtype=bool)
    n = states.shape[0]
    if n == 0:
        raise TrainingError("no states to train the policy on")
    if correct.shape != (n, N_ACTIONS):
        raise ParameterError(f"correct must have shape ({n}, {N_ACTIONS}), got {correct.shape}")
    rng = rng if rng is not None else np.random.default_rng(seed)
    qnet = QNetwork(states.shape[1], config.hidden, N_ACTIONS, seed=seed)
    target = qnet.copy()
    buffer = ReplayBuffer(config.buffer_size, states.shape[1])
    opt = OptimizerConfig(kind="adam", lr=config.learning_rate)
    schedule = EpsilonSchedule(config.epsilon_start, config.epsilon_end, config.epsilon_horizon or n)
    log = AgentLog()
    window_r, window_l, window_a = [], [], np.zeros(N_ACTIONS, dtype=np.int64)
    order = np.empty(0, dtype=np.int64)
    total = config.total_steps(n)
    for step in range(1, total + 1):
        if order.size == 0:
            order = rng.permutation(n)
        i, order = order[0], order[1:]
        eps = schedule.value(step - 1)
        a = select_action(q_forward(qnet, states[i]), eps, rng)
        r = compute_reward(correct[i, a], a, reward)
        buffer.push(Transition(states[i], a, r))
        window_r.append(r)
        window_a[a] += 1
        if len(buffer) >= max(config.warmup, 1):
            window_l.append(dqn_update(qnet, target, buffer.sample(config.batch_size, rng), config.discount, opt))
            log.updates += 1
            if log.updates % config.sync_every == 0:
                sync_target(qnet, target)
                log.syncs.append(log.updates)
        if step % config.log_every == 0 or step == total:
            loss = float(np.mean(window_l)) if window_l else float("nan")
            log.rows.append((step, round(eps, 6), float(np.mean(window_r)), loss, *window_a.tolist()))
            window_r, window_l, window_a = [], [], np.zeros(N_ACTIONS, dtype=np.int64)
    return qnet, log


class StructureSelector(BaseEstimator):
    """Learns which graph structure to use for a prefix.

    ``fit(X, correct)`` takes encoded prefixes and a boolean matrix whose
    column ``a`` says whether structure ``a``'s predictor got that prefix right.
    """

    def __init__(
        self,
        alpha=1.0,
        beta=0.1,
        gamma_eff=0.1,
        cost=(0.0, 1.0 / 3.0, 1.0 / 3.0, 1.0),
        hidden=(256, 128, 128),
        learning_rate=1e-4,
        buffer_size=50_000,
        batch_size=64,
        warmup=1_000,
        sync_every=2_000,
        discount=0.99,
        epsilon_start=1.0,
        epsilon_end=0.1,
        epsilon_horizon=None,
        passes=1,
        min_updates=2_000,
        random_state=0,
    ):
        self.alpha = alpha
        self.beta = beta
        self.gamma_eff = gamma_eff
        self.cost = cost
        self.hidden = hidden
        self.learning_rate = learning_rate
        self.buffer_size = buffer_size
        self.batch_size = batch_size
        self.warmup = warmup
        self.sync_every = sync_every
        self.discount = discount
        self.epsilon_start = epsilon_start
        self.epsilon_end = epsilon_end
        self.epsilon_horizon = epsilon_horizon
        self.passes = passes
        self.min_updates = min_updates
        self.random_state = random_state

    def reward_config(self) -> RewardConfig:
        return RewardConfig(self.alpha, self.beta, self.gamma_eff, tuple(self.cost))

    def dqn_config(self) -> DQNConfig:
        names = {f.name for f in fields(DQNConfig)}
        kw = {k: v for k, v in self.get_params().items() if k in names}
        kw["hidden"] = tuple(kw["hidden"])
        return DQNConfig(**kw)

    def fit_states(self, raw_states, correct):
        self.standardizer_ = Standardizer.fit(raw_states)
        self.qnet_, self.log_ = train_dqn(
            self.standardizer_.transform(raw_states), correct, self.dqn_config(), self.reward_config(),
            seed=self.random_state,
        )
        return self

    def fit(self, X, correct):
        if correct is None:
            raise PipelineOrderError("predictor correctness is required before training the selector")
        return self.fit_states(state_matrix(list(X)), correct)

    def q_values_states(self, raw_states) -> np.ndarray:
        if not hasattr(self, "qnet_"):
            raise PipelineOrderError("selector is not fitted")
        return q_forward(self.qnet_, self.standardizer_.transform(np.atleast_2d(raw_states)))

    def predict_states(self, raw_states) -> np.ndarray:
        return greedy_actions(self.q_values_states(raw_states))

    def predict(self, X) -> np.ndarray:
        X = list(X)
        if not X:
            return np.zeros(0, dtype=np.int64)
        return self.predict_states(state_matrix(X))

    def select(self, prefix: EncodedTrace) -> int:
        return int(self.predict_states(extract_state(prefix).vector()[None, :])[0])

    def header(self) -> dict:
        return {
            "sizes": list(self.qnet_.sizes),
            "mean": self.standardizer_.mean.tolist(),
            "std": self.standardizer_.std.tolist(),
            "reward": asdict(self.reward_config()),
            "dtype": str(self.qnet_.params.dtype),
        }
