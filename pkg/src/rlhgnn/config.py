"""Plain-text run configuration.

Grammar, one entry per line::

    # comment
    key = value
    include = other.conf      # path relative to the including file

Later assignments override earlier ones; an included file is read at the
point of inclusion. Lists are comma-separated. ``none`` clears optional
values. Unknown keys are rejected.
"""

from __future__ import annotations

from dataclasses import field, fields, make_dataclass, replace
from pathlib import Path

from .event_log import DEFAULT_TIMESTAMP_FORMAT, CsvSchema
from .exceptions import ConfigError
from .hgnn import AGGREGATORS
from .procgraph import STRUCTURES


def _bool(raw: str) -> bool:
    v = raw.strip().lower()
    if v in ("1", "true", "yes", "on"):
        return True
    if v in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {raw!r}")


def _opt(conv):
    def parse(raw):
        return None if raw.strip().lower() in ("", "none") else conv(raw)

    return parse


def _list(conv):
    def parse(raw):
        return tuple(conv(x.strip()) for x in raw.split(",") if x.strip())

    return parse


def _str(raw):
    return raw.strip()


_CONVERTERS = {
    int: int,
    float: float,
    bool: _bool,
    str: _str,
    "opt_int": _opt(int),
    "opt_str": _opt(_str),
    "str_list": _list(_str),
    "float_list": _list(float),
    "int_list": _list(int),
}


def _f(default, kind=None):
    return (default, kind or type(default))


# key -> (default, converter kind)
_SCHEMA = {
    # data
    "data_path": _f(""),
    "dataset_name": _f(""),
    "case_column": _f("case_id"),
    "activity_column": _f("activity"),
    "timestamp_column": _f("timestamp"),
    "resource_column": _f("resource", "opt_str"),
    "extra_columns": _f((), "str_list"),
    "timestamp_format": _f(DEFAULT_TIMESTAMP_FORMAT),
    "delimiter": _f(","),
    # preprocessing
    "n_bins": _f(4),
    "use_resource": _f(True),
    "categorical_attributes": _f((), "str_list"),
    "numeric_attributes": _f((), "str_list"),
    "min_k": _f(1),
    # predictor
    "hidden_dim": _f(128),
    "n_layers": _f(2),
    "dropout": _f(0.1),
    "activity_embedding_dim": _f(None, "opt_int"),
    "aux_embedding_dim": _f(16),
    "aggregator_forward": _f("lstm"),
    "aggregator_backward": _f("lstm"),
    "aggregator_repeat": _f("mean"),
    "uniform_aggregator": _f(None, "opt_str"),
    "mlp_dim": _f(None, "opt_int"),
    "batch_size": _f(64),
    "learning_rate": _f(1e-3),
    "max_epochs": _f(100),
    "patience": _f(10),
    # structure selection
    "alpha": _f(1.0),
    "beta": _f(0.1),
    "gamma_eff": _f(0.1),
    "cost": _f((0.0, 1.0 / 3.0, 1.0 / 3.0, 1.0), "float_list"),
    "q_hidden": _f((256, 128, 128), "int_list"),
    "q_learning_rate": _f(1e-4),
    "buffer_size": _f(50_000),
    "q_batch_size": _f(64),
    "warmup": _f(1_000),
    "sync_every": _f(2_000),
    "discount": _f(0.99),
    "epsilon_start": _f(1.0),
    "epsilon_end": _f(0.1),
    "epsilon_horizon": _f(None, "opt_int"),
    "rl_passes": _f(1),
    "min_updates": _f(2_000),
    # run
    "seed": _f(0),
    "n_folds": _f(3),
    "threads": _f(1),
    "out": _f("runs"),
    "bench_repetitions": _f(3),
    "bench_max_prefixes": _f(200),
}

RunConfig = make_dataclass(
    "RunConfig",
    [(k, object, field(default=v[0])) for k, v in _SCHEMA.items()],
    frozen=True,
    namespace={"__doc__": "Every setting of a run; defaults reproduce the reference training setup."},
)

_ESTIMATOR_KEYS = (
    "n_bins", "use_resource", "categorical_attributes", "numeric_attributes", "min_k",
    "hidden_dim", "n_layers", "dropout", "activity_embedding_dim", "aux_embedding_dim",
    "uniform_aggregator", "mlp_dim", "batch_size", "learning_rate", "max_epochs", "patience",
    "alpha", "beta", "gamma_eff", "cost", "q_hidden", "q_learning_rate", "buffer_size",
    "q_batch_size", "warmup", "sync_every", "discount", "epsilon_start", "epsilon_end",
    "epsilon_horizon", "rl_passes", "min_updates",
)

# key -> (predicate, message)
_RULES = {
    "n_bins": (lambda v: v >= 2, "must be >= 2"),
    "min_k": (lambda v: v >= 1, "must be >= 1"),
    "hidden_dim": (lambda v: v >= 1, "must be >= 1"),
    "n_layers": (lambda v: v >= 1, "must be >= 1"),
    "dropout": (lambda v: 0 <= v < 1, "must lie in [0, 1)"),
    "activity_embedding_dim": (lambda v: v is None or v >= 1, "must be >= 1"),
    "aux_embedding_dim": (lambda v: v >= 1, "must be >= 1"),
    "aggregator_forward": (lambda v: v in AGGREGATORS, f"must be one of {AGGREGATORS}"),
    "aggregator_backward": (lambda v: v in AGGREGATORS, f"must be one of {AGGREGATORS}"),
    "aggregator_repeat": (lambda v: v in AGGREGATORS, f"must be one of {AGGREGATORS}"),
    "uniform_aggregator": (lambda v: v is None or v in AGGREGATORS, f"must be one of {AGGREGATORS}"),
    "mlp_dim": (lambda v: v is None or v >= 1, "must be >= 1"),
    "batch_size": (lambda v: v >= 1, "must be >= 1"),
    "learning_rate": (lambda v: v > 0, "must be positive"),
    "max_epochs": (lambda v: v >= 1, "must be >= 1"),
    "patience": (lambda v: v >= 1, "must be >= 1"),
    "alpha": (lambda v: v > 0, "must be positive"),
    "beta": (lambda v: v >= 0, "must be non-negative"),
    "gamma_eff": (lambda v: v >= 0, "must be non-negative"),
    "cost": (lambda v: len(v) == len(STRUCTURES), f"needs {len(STRUCTURES)} values"),
    "q_hidden": (lambda v: len(v) >= 1 and min(v) >= 1, "needs positive layer widths"),
    "q_learning_rate": (lambda v: v > 0, "must be positive"),
    "buffer_size": (lambda v: v >= 1, "must be >= 1"),
    "q_batch_size": (lambda v: v >= 1, "must be >= 1"),
    "warmup": (lambda v: v >= 0, "must be non-negative"),
    "sync_every": (lambda v: v >= 1, "must be >= 1"),
    "discount": (lambda v: 0 <= v <= 1, "must lie in [0, 1]"),
    "epsilon_start": (lambda v: 0 <= v <= 1, "must lie in [0, 1]"),
    "epsilon_end": (lambda v: 0 <= v <= 1, "must lie in [0, 1]"),
    "epsilon_horizon": (lambda v: v is None or v >= 1, "must be >= 1"),
    "rl_passes": (lambda v: v >= 1, "must be >= 1"),
    "min_updates": (lambda v: v >= 0, "must be non-negative"),
    "n_folds": (lambda v: v >= 2, "must be >= 2"),
    "threads": (lambda v: v >= 1 or v == -1, "must be >= 1 (or -1 for all cores)"),
    "bench_repetitions": (lambda v: v >= 1, "must be >= 1"),
    "bench_max_prefixes": (lambda v: v >= 1, "must be >= 1"),
    "delimiter": (lambda v: len(v) == 1, "must be a single character"),
}


def _convert(key: str, raw: str, where: str):
    if key not in _SCHEMA:
        raise ConfigError(f"{where}: unknown configuration key {key!r}")
    kind = _SCHEMA[key][1]
    try:
        return _CONVERTERS[kind](raw)
    except (ValueError, TypeError) as exc:
        raise ConfigError(f"{where}: bad value for {key!r}: {exc}") from None


def _read(path: Path, values: dict, stack: tuple):
    path = path.resolve()
    if path in stack:
        raise ConfigError(f"include cycle through {path}")
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read configuration {path}: {exc.strerror}") from None
    for n, line in enumerate(text.splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        where = f"{path.name}:{n}"
        if "=" not in line:
            raise ConfigError(f"{where}: expected 'key = value'")
        key, raw = (s.strip() for s in line.split("=", 1))
        if key == "include":
            _read(path.parent / raw, values, stack + (path,))
        else:
            values[key] = _convert(key, raw, where)


def validate(cfg) -> None:
    for key, (ok, msg) in _RULES.items():
        if not ok(getattr(cfg, key)):
            raise ConfigError(f"invalid value for {key!r}: {msg}")


def load_config(path=None, **overrides) -> "RunConfig":
    values: dict = {}
    if path is not None:
        _read(Path(path), values, ())
    for key, value in overrides.items():
        if key not in _SCHEMA:
            raise ConfigError(f"unknown configuration key {key!r}")
        if value is not None:
            values[key] = value
    cfg = RunConfig(**values)
    validate(cfg)
    return cfg


def config_from_text(text: str, **overrides) -> "RunConfig":
    values: dict = {}
    for n, line in enumerate(text.splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {n}: expected 'key = value'")
        key, raw = (s.strip() for s in line.split("=", 1))
        if key == "include":
            raise ConfigError(f"line {n}: include is only allowed in configuration files")
        values[key] = _convert(key, raw, f"line {n}")
    values.update({k: v for k, v in overrides.items() if v is not None})
    cfg = RunConfig(**values)
    validate(cfg)
    return cfg


def estimator_params(cfg) -> dict:
    params = {k: getattr(cfg, k) for k in _ESTIMATOR_KEYS}
    params["aggregators"] = {
        "forward": cfg.aggregator_forward,
        "backward": cfg.aggregator_backward,
        "repeat": cfg.aggregator_repeat,
    }
    params["n_jobs"] = cfg.threads
    return params


def csv_schema(cfg) -> CsvSchema:
    return CsvSchema(
        case=cfg.case_column,
        activity=cfg.activity_column,
        timestamp=cfg.timestamp_column,
        resource=cfg.resource_column,
        extra=tuple(cfg.extra_columns),
        timestamp_format=cfg.timestamp_format,
        delimiter=cfg.delimiter,
    )


def to_text(cfg) -> str:
    """Serialize back into the file grammar (round-trips through :func:`config_from_text`)."""
    lines = []
    for f in fields(cfg):
        v = getattr(cfg, f.name)
        if v is None:
            s = "none"
        elif isinstance(v, tuple):
            s = ", ".join(repr(x) if isinstance(x, float) else str(x) for x in v)
        elif isinstance(v, float):
            s = repr(v)
        else:
            s = str(v)
        lines.append(f"{f.name} = {s}")
    return "\n".join(lines) + "\n"


def with_overrides(cfg, **kw):
    out = replace(cfg, **{k: v for k, v in kw.items() if v is not None})
    validate(out)
    return out
