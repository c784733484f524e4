"""Named parameter storage, initialisers, and the Adam / NAdam update."""

from __future__ import annotations

import zlib
from dataclasses import dataclass

import numpy as np

from ..exceptions import ParameterError
from .autograd import Tensor


@dataclass(frozen=True)
class OptimizerConfig:
    kind: str = "adam"
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    clip_norm: float | None = None

    def __post_init__(self):
        if self.kind not in ("adam", "nadam"):
            raise ParameterError(f"unknown optimizer {self.kind!r}")
        if self.lr <= 0:
            raise ParameterError("learning rate must be positive")
        if not (0 <= self.beta1 < 1 and 0 <= self.beta2 < 1):
            raise ParameterError("betas must lie in [0, 1)")


def param_rng(seed: int, name: str) -> np.random.Generator:
    """Independent stream per parameter name, so initial values do not depend on creation order."""
    return np.random.default_rng([int(seed) & 0xFFFFFFFF, zlib.crc32(name.encode())])


def glorot_uniform(rng, fan_in, fan_out, shape=None, dtype=np.float64):
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=shape or (fan_in, fan_out)).astype(dtype)


class ParamStore:
    """Ordered named parameters plus per-parameter Adam moments."""

    def __init__(self, seed: int = 0, dtype=np.float64):
        self.seed = seed
        self.dtype = np.dtype(dtype)
        self.params: dict[str, Tensor] = {}
        self.moments: dict[str, tuple[np.ndarray, np.ndarray]] = {}
        self.step_count = 0

    def __getitem__(self, name) -> Tensor:
        return self.params[name]

    def __contains__(self, name):
        return name in self.params

    def __iter__(self):
        return iter(self.params)

    def __len__(self):
        return len(self.params)

    def items(self):
        return self.params.items()

    def add(self, name: str, value) -> Tensor:
        if name in self.params:
            raise ParameterError(f"duplicate parameter {name!r}")
        t = Tensor(np.asarray(value, dtype=self.dtype), requires_grad=True)
        self.params[name] = t
        self.moments[name] = (np.zeros_like(t.data), np.zeros_like(t.data))
        return t

    def glorot(self, name, fan_in, fan_out, shape=None) -> Tensor:
        return self.add(name, glorot_uniform(param_rng(self.seed, name), fan_in, fan_out, shape, self.dtype))

    def zeros(self, name, shape) -> Tensor:
        return self.add(name, np.zeros(shape, dtype=self.dtype))

    def full(self, name, shape, value) -> Tensor:
        return self.add(name, np.full(shape, value, dtype=self.dtype))

    def zero_grad(self):
        for t in self.params.values():
            t.grad = None

    def snapshot(self) -> dict[str, np.ndarray]:
        return {k: t.data.copy() for k, t in self.params.items()}

    def load(self, values: dict[str, np.ndarray]):
        for k, t in self.params.items():
            t.data = np.asarray(values[k], dtype=self.dtype).copy()

    def copy_from(self, other: "ParamStore"):
        self.load(other.snapshot())

    def grad_norm(self) -> float:
        total = sum(float((t.grad.astype(np.float64) ** 2).sum()) for t in self.params.values() if t.grad is not None)
        return float(np.sqrt(total))


def optimizer_step(store: ParamStore, config: OptimizerConfig) -> ParamStore:
    """One bias-corrected Adam (or NAdam) update; gradients are cleared afterwards.

    Parameters that received no gradient in this step are left untouched.
    """
    scale = 1.0
    if config.clip_norm is not None:
        norm = store.grad_norm()
        if norm > config.clip_norm:
            scale = config.clip_norm / (norm + 1e-12)
    store.step_count += 1
    t = store.step_count
    b1, b2 = config.beta1, config.beta2
    bc1 = 1.0 - b1**t
    bc2 = 1.0 - b2**t
    for name, p in store.params.items():
        if p.grad is None:
            continue
        g = p.grad * scale if scale != 1.0 else p.grad
        m, v = store.moments[name]
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * (g * g)
        if config.kind == "nadam":
            # Nesterov look-ahead on the first moment
            m_hat = b1 * m / (1.0 - b1 ** (t + 1)) + (1.0 - b1) * g / bc1
        else:
            m_hat = m / bc1
        denom = np.sqrt(v / bc2) + config.eps
        p.data -= (config.lr * m_hat / denom).astype(p.data.dtype)
        p.grad = None
    return store
