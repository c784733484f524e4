"""Next-activity prediction over heterogeneous prefix graphs with learned per-prefix structure selection."""

from .event_log import (
    CsvSchema,
    Event,
    EventLog,
    GeneratorSpec,
    Trace,
    generate_synthetic_log,
    log_statistics,
    parse_csv_log,
    split_folds,
    write_csv_log,
)
from .hgnn import HGNNClassifier, PredictorConfig
from .pipeline import (
    RLHGNN,
    Metrics,
    ablation_run,
    benchmark_latency,
    load_artifacts,
    run_cv,
    run_fold,
    save_artifacts,
)
from .preprocess import EventLogEncoder
from .procgraph import STRUCTURES, EdgeType, ProcessGraph, assemble_structure, build_all_structures
from .rl import StructureSelector

__version__ = "0.1.0"

__all__ = [
    "CsvSchema",
    "Event",
    "EventLog",
    "GeneratorSpec",
    "Trace",
    "generate_synthetic_log",
    "log_statistics",
    "parse_csv_log",
    "split_folds",
    "write_csv_log",
    "HGNNClassifier",
    "PredictorConfig",
    "RLHGNN",
    "Metrics",
    "ablation_run",
    "benchmark_latency",
    "load_artifacts",
    "run_cv",
    "run_fold",
    "save_artifacts",
    "EventLogEncoder",
    "STRUCTURES",
    "EdgeType",
    "ProcessGraph",
    "assemble_structure",
    "build_all_structures",
    "StructureSelector",
]
