"""Command-line front end.

Exit codes: 0 success, 1 usage or configuration error, 2 data error,
3 internal error.
"""

from __future__ import annotations

import argparse
import csv
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__
from .config import csv_schema, estimator_params, load_config, to_text
from .event_log import (
    GeneratorSpec,
    generate_synthetic_log,
    log_statistics,
    parse_csv_log,
    write_csv_log,
)
from .exceptions import (
    ArtifactError,
    ConfigError,
    EmptyLogError,
    LogParseError,
    ParameterError,
    SchemaError,
    SplitError,
    StageError,
)
from .pipeline import (
    POLICIES,
    ablation_run,
    benchmark_latency,
    load_artifacts,
    run_cv,
    save_artifacts,
)
from .preprocess import UNK
from .procgraph import STRUCTURES

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_INTERNAL = 0, 1, 2, 3
_DATA_ERRORS = (SchemaError, LogParseError, EmptyLogError, SplitError, ArtifactError, FileNotFoundError)
_USAGE_ERRORS = (ConfigError, ParameterError)

METRIC_COLUMNS = ("dataset", "fold", "policy", "accuracy", "macro_f1", "gmean", "n_prefixes", *(f"n_{s}" for s in STRUCTURES))


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _write_csv(path: Path, header, rows):
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        w.writerows(rows)


def _fmt(v):
    return f"{v:.4f}" if isinstance(v, float) else str(v)


def _print_table(header, rows, out=None):
    cells = [list(map(str, header))] + [[_fmt(v) for v in r] for r in rows]
    widths = [max(len(r[i]) for r in cells) for i in range(len(header))]
    for r in cells:
        print("  ".join(c.ljust(w) for c, w in zip(r, widths)).rstrip(), file=out or sys.stdout)


def _metric_row(dataset, fold, policy, summary):
    return [dataset, fold, policy] + [summary[c] for c in METRIC_COLUMNS[3:]]


def _config(args, need_data=False):
    cfg = load_config(args.config, seed=args.seed, out=args.out, threads=args.threads,
                      data_path=getattr(args, "log", None))
    if need_data and not cfg.data_path:
        raise ConfigError("no event log given (set data_path in the configuration or pass --log)")
    return cfg


def _load_log(cfg, path=None):
    return parse_csv_log(path or cfg.data_path, csv_schema(cfg))


def _dataset_name(cfg):
    return cfg.dataset_name or Path(cfg.data_path).stem


# ---------------------------------------------------------------------------
# subcommands


def cmd_ingest(args) -> int:
    cfg = _config(args)
    log = _load_log(cfg, args.path)
    stats = log_statistics(log)
    _print_table(("statistic", "value"), list(stats.items()))
    if args.out:
        _write_csv(Path(cfg.out) / "ingest.csv", ("statistic", "value"), [(k, repr(v)) for k, v in stats.items()])
    return EXIT_OK


def cmd_synth(args) -> int:
    spec = GeneratorSpec(
        n_activities=args.n_activities, n_traces=args.n_traces, min_length=args.min_length,
        max_length=args.max_length, loop_prob=args.loop_prob, branch_prob=args.branch_prob,
        n_resources=args.n_resources, kind=args.kind, gap_sigma=args.gap_sigma,
    )
    log = generate_synthetic_log(spec, args.seed or 0)
    Path(args.path).parent.mkdir(parents=True, exist_ok=True)
    write_csv_log(log, args.path)
    stats = log_statistics(log)
    print(f"wrote {stats['cases']} cases, {stats['events']} events to {args.path}")
    return EXIT_OK


def cmd_train(args) -> int:
    cfg = _config(args, need_data=True)
    log = _load_log(cfg)
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    name = _dataset_name(cfg)
    cv = run_cv(log, estimator_params(cfg), cfg.seed, cfg.n_folds)
    rows = [_metric_row(name, r.fold, "adaptive", r.metrics.summary()) for r in cv.folds]
    rows.append(_metric_row(name, "mean", "adaptive", cv.mean))
    _write_csv(out / "metrics.csv", METRIC_COLUMNS, rows)
    cv.assignment.write_csv(log, out / "folds.csv")
    (out / "config.txt").write_text(to_text(cfg), encoding="utf-8")
    for r in cv.folds:
        save_artifacts(r.model, out / f"artifacts_fold{r.fold}.zip")
        r.model.selector_.log_.write_csv(out / f"policy_log_fold{r.fold}.csv")
        hist = []
        for s in STRUCTURES:
            h = r.model.predictors_[s].history_
            hist += [(s, e, loss, acc) for e, (loss, acc) in enumerate(zip(h.train_loss, h.val_accuracy))]
        _write_csv(out / f"predictor_log_fold{r.fold}.csv", ("structure", "epoch", "train_loss", "val_accuracy"), hist)
        _write_csv(
            out / f"per_class_fold{r.fold}.csv",
            ("activity", "precision", "recall", "f1", "support", "undefined"),
            [(c.label, c.precision, c.recall, c.f1, c.support, int(c.undefined)) for c in r.metrics.per_class],
        )
    # wall-clock numbers vary run to run, so they live apart from metrics.csv
    _write_csv(out / "timing.csv", ("fold", "seconds"), [(r.fold, f"{r.seconds:.3f}") for r in cv.folds])
    _print_table(METRIC_COLUMNS, rows)
    return EXIT_OK


def cmd_evaluate(args) -> int:
    cfg = _config(args, need_data=True)
    model = load_artifacts(args.artifacts)
    log = _load_log(cfg)
    policy = args.structure or "adaptive"
    m = model.evaluate(list(log.traces), policy)
    rows = [_metric_row(_dataset_name(cfg), "all", policy, m.summary())]
    if args.out:
        _write_csv(Path(cfg.out) / "evaluation.csv", METRIC_COLUMNS, rows)
    _print_table(METRIC_COLUMNS, rows)
    return EXIT_OK


def _warn_unknown(model, trace):
    enc = model.encoder_
    for attr, vocab in enc.vocabularies_.items():
        for e in trace.events:
            raw = e.activity if attr == "activity" else e.resource if attr == "resource" else e.attribute(attr)
            if raw not in vocab.token_to_index:
                print(f"warning: case {trace.case_id}: unknown {attr} {raw!r} mapped to {UNK}", file=sys.stderr)


def cmd_predict(args) -> int:
    cfg = _config(args)
    model = load_artifacts(args.artifacts)
    log = parse_csv_log(args.prefix, csv_schema(cfg))
    tokens = model.encoder_.activity_vocabulary.tokens
    for trace in log.traces:
        _warn_unknown(model, trace)
        prefix = model.encoder_.transform([trace])[0]
        t0 = time.perf_counter()
        structure, probs = model.predict_one(prefix, args.structure)
        ms = (time.perf_counter() - t0) * 1000.0
        origin = "forced" if args.structure else "policy"
        print(f"case {trace.case_id}: structure {structure} ({origin}), latency {ms:.3f} ms")
        for rank, i in enumerate(np.argsort(-probs, kind="stable")[: args.top], start=1):
            print(f"  {rank}. {tokens[i]}  {probs[i]:.6f}")
    return EXIT_OK


def cmd_ablate(args) -> int:
    cfg = _config(args, need_data=True)
    log = _load_log(cfg)
    res = ablation_run(log, estimator_params(cfg), cfg.seed, cfg.n_folds)
    rows = [_metric_row(_dataset_name(cfg), "mean", p, res[p]) for p in POLICIES]
    _write_csv(Path(cfg.out) / "ablation.csv", METRIC_COLUMNS, rows)
    _print_table(METRIC_COLUMNS, rows)
    return EXIT_OK


def cmd_bench(args) -> int:
    cfg = _config(args, need_data=True)
    model = load_artifacts(args.artifacts)
    log = _load_log(cfg)
    prefixes, _ = model.encode_prefixes(list(log.traces))
    if not prefixes:
        raise ParameterError("the log yields no prefixes to benchmark")
    prefixes = prefixes[: cfg.bench_max_prefixes]
    rows = []
    for policy in POLICIES:
        st = benchmark_latency(model, prefixes, cfg.bench_repetitions, policy)
        rows.append((policy, st.mean_ms, st.p95_ms, st.n))
    header = ("policy", "mean_ms", "p95_ms", "n")
    _write_csv(Path(cfg.out) / "bench.csv", header, rows)
    _print_table(header, rows)
    return EXIT_OK


# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    common = _Parser(add_help=False)
    common.add_argument("--config", default=argparse.SUPPRESS, help="key=value configuration file")
    common.add_argument("--seed", type=int, default=argparse.SUPPRESS)
    common.add_argument("--out", default=argparse.SUPPRESS, help="output directory")
    common.add_argument("--threads", type=int, default=argparse.SUPPRESS)
    common.add_argument("--structure", choices=STRUCTURES, default=argparse.SUPPRESS,
                        help="force one graph structure instead of the learned policy")

    parser = _Parser(prog="rlhgnn", description="Next-activity prediction with adaptive process graphs.", parents=[common])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("ingest", parents=[common], help="parse a CSV log and print its statistics")
    p.add_argument("path")
    p.set_defaults(func=cmd_ingest)

    p = sub.add_parser("synth", parents=[common], help="write a synthetic event log")
    p.add_argument("path")
    p.add_argument("--kind", choices=("process", "cycle"), default="process")
    p.add_argument("--n-traces", type=int, default=500)
    p.add_argument("--n-activities", type=int, default=6)
    p.add_argument("--min-length", type=int, default=4)
    p.add_argument("--max-length", type=int, default=6)
    p.add_argument("--loop-prob", type=float, default=0.6)
    p.add_argument("--branch-prob", type=float, default=0.0)
    p.add_argument("--n-resources", type=int, default=3)
    p.add_argument("--gap-sigma", type=float, default=2.0)
    p.set_defaults(func=cmd_synth)

    for name, func, helptext in (
        ("train", cmd_train, "cross-validated training; writes artifacts and metrics"),
        ("ablate", cmd_ablate, "compare fixed structures with the learned policy"),
    ):
        p = sub.add_parser(name, parents=[common], help=helptext)
        p.add_argument("--log", help="event log CSV (overrides data_path)")
        p.set_defaults(func=func)

    p = sub.add_parser("evaluate", parents=[common], help="score saved artifacts on a log")
    p.add_argument("--artifacts", required=True)
    p.add_argument("--log")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("predict", parents=[common], help="rank next activities for prefixes in a CSV")
    p.add_argument("--artifacts", required=True)
    p.add_argument("prefix", help="CSV with the prefix events (one or more cases)")
    p.add_argument("--top", type=int, default=5)
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("bench", parents=[common], help="per-prediction latency of saved artifacts")
    p.add_argument("--artifacts", required=True)
    p.add_argument("--log")
    p.set_defaults(func=cmd_bench)
    return parser


def _exit_code(exc) -> int:
    if isinstance(exc, StageError):
        return _exit_code(exc.cause)
    if isinstance(exc, _DATA_ERRORS):
        return EXIT_DATA
    if isinstance(exc, _USAGE_ERRORS):
        return EXIT_USAGE
    return EXIT_INTERNAL


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        print(f"rlhgnn: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    for name in ("config", "seed", "out", "threads", "structure"):
        if not hasattr(args, name):
            setattr(args, name, None)
    try:
        return args.func(args)
    except Exception as exc:  # every failure becomes a message plus a stable exit code
        code = _exit_code(exc)
        kind = {EXIT_USAGE: "error", EXIT_DATA: "data error"}.get(code, "internal error")
        print(f"rlhgnn: {kind}: {exc}", file=sys.stderr)
        return code


if __name__ == "__main__":
    sys.exit(main())
