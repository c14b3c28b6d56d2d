"""Command-line surface: ingest, synth, correlate, train, simulate, sweep,
bootstrap, report.

Every run writes its data artifacts atomically (temp file + rename) plus a
manifest JSON describing the run; artifacts reference the manifest by name.
All randomness flows from the ``--seed`` flag through labeled sub-seeds
(:mod:`banditriage.seeds`), so a repeated command line reproduces its outputs
byte for byte. Manifests are the one exception: they carry wall-clock
timestamps.

Exit codes: 0 success, 1 usage error, 2 data error, 3 internal error.
"""

from __future__ import annotations

import argparse
import contextlib
import csv
import io
import json
import logging
import os
import sys
from datetime import date, datetime, timezone
from pathlib import Path

import numpy as np

from . import __version__
from .evaluate import (
    MetricError,
    bootstrap_ci,
    model_comparison_table,
    weekly_correlations,
    weekly_recall_table,
)
from .policy import PolicyConfig, PolicyError
from .records import (
    DataError,
    ValueMapping,
    load_cohort,
    write_cohort_csv,
)
from .scoring import (
    DegenerateTrainingError,
    ModelKind,
    TrainConfig,
    load_model,
    model_metadata,
    rule_based_model,
    save_model,
    score_matrix,
    train,
)
from .seeds import derive_seed
from .simulate import OverlapError, run_replay, sweep_exploration, train_eval_split_experiment
from .synthgen import ScenarioError, generate_cohort, resolve_scenario

log = logging.getLogger("banditriage")

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_DATA = 2
EXIT_INTERNAL = 3


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    """argparse exits 2 on usage problems; the contract here is exit 1."""

    def error(self, message):  # noqa: A003 - argparse API
        self.print_usage(sys.stderr)
        raise UsageError(message)


# ---------------------------------------------------------------------------
# Small IO helpers: atomic writes, manifest bookkeeping.
# ---------------------------------------------------------------------------


@contextlib.contextmanager
def _atomic(path: Path):
    """Yield a temp path; on success rename it over the target."""
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_name(path.name + ".tmp")
    try:
        yield tmp
        os.replace(tmp, path)
    finally:
        if tmp.exists():
            tmp.unlink()


def _write_text(path: Path, text: str) -> None:
    with _atomic(path) as tmp:
        tmp.write_text(text, encoding="utf-8")


def _csv_text(header: list, rows: list[list], comment: str | None = None) -> str:
    buf = io.StringIO()
    if comment:
        buf.write(f"# {comment}\n")
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(header)
    writer.writerows(rows)
    return buf.getvalue()


class Manifest:
    """Run metadata: subcommand, inputs/outputs, seed, version, timestamps."""

    def __init__(self, subcommand: str, args: argparse.Namespace, out_dir: Path):
        self.subcommand = subcommand
        self.seed = getattr(args, "seed", None)
        self.config_path = getattr(args, "config", None)
        self.out_dir = out_dir
        self.path = out_dir / f"{subcommand}.manifest.json"
        self.inputs: list[str] = []
        self.artifacts: list[str] = []
        self.started = datetime.now(timezone.utc).isoformat()

    @property
    def name(self) -> str:
        return self.path.name

    def note_input(self, path) -> None:
        if path is not None:
            self.inputs.append(str(path))

    def note_artifact(self, path: Path) -> None:
        self.artifacts.append(str(path))

    def write(self) -> None:
        payload = {
            "subcommand": self.subcommand,
            "version": __version__,
            "seed": self.seed,
            "config": str(self.config_path) if self.config_path else None,
            "inputs": self.inputs,
            "artifacts": self.artifacts,
            "started": self.started,
            "finished": datetime.now(timezone.utc).isoformat(),
        }
        _write_text(self.path, json.dumps(payload, indent=2, sort_keys=True) + "\n")


def _out_path(args: argparse.Namespace, name: str) -> Path:
    p = Path(name)
    return p if p.is_absolute() else Path(args.out_dir) / p


def _parse_week_range(text: str) -> list[int]:
    """'10-12' -> [10, 11, 12]; '16' -> [16]; comma lists allowed."""
    weeks: list[int] = []
    for part in text.split(","):
        part = part.strip()
        lo, sep, hi = part.partition("-")
        try:
            if sep:
                a, b = int(lo), int(hi)
                if a > b:
                    raise ValueError
                weeks.extend(range(a, b + 1))
            else:
                weeks.append(int(part))
        except ValueError:
            raise UsageError(f"bad week range {text!r} (want e.g. 10-12 or 10,11,12)") from None
    return weeks


def _parse_float_list(text: str, flag: str) -> list[float]:
    try:
        return [float(x) for x in text.split(",") if x.strip()]
    except ValueError:
        raise UsageError(f"bad {flag} list {text!r}") from None


def _parse_int_list(text: str, flag: str) -> list[int]:
    try:
        return [int(x) for x in text.split(",") if x.strip()]
    except ValueError:
        raise UsageError(f"bad {flag} list {text!r}") from None


def _load_cohort_arg(args, manifest: Manifest):
    manifest.note_input(args.cohort)
    cohort, _ = load_cohort(args.cohort)
    return cohort


def _load_model_arg(args, manifest: Manifest):
    if getattr(args, "rule_based", False):
        return rule_based_model()
    if not args.model:
        raise UsageError("need --model PATH or --rule-based")
    manifest.note_input(args.model)
    return load_model(args.model)


# ---------------------------------------------------------------------------
# Subcommands.
# ---------------------------------------------------------------------------


def cmd_ingest(args) -> int:
    manifest = Manifest("ingest", args, Path(args.out_dir))
    manifest.note_input(args.input)
    mapping = ValueMapping.default()
    if args.mapping:
        manifest.note_input(args.mapping)
        mapping = ValueMapping.from_file(args.mapping)
    window = None
    if args.window_start or args.window_end:
        if not (args.window_start and args.window_end):
            raise UsageError("--window-start and --window-end go together")
        window = (date.fromisoformat(args.window_start), date.fromisoformat(args.window_end))

    cohort, report = load_cohort(
        args.input,
        mapping,
        delimiter=args.delimiter,
        keep_other_results=args.keep_other_results,
        null_policy=args.null_policy,
        study_window=window,
    )
    out_cohort = _out_path(args, args.out)
    with _atomic(out_cohort) as tmp:
        write_cohort_csv(cohort, tmp, header_comment=f"manifest: {manifest.name}")
    manifest.note_artifact(out_cohort)
    out_report = _out_path(args, args.report)
    with _atomic(out_report) as tmp:
        report.write(tmp)
    manifest.note_artifact(out_report)
    manifest.write()
    print(
        f"accepted {report.n_accepted} of {report.n_rows} rows "
        f"({report.n_rejected} rejected) -> {out_cohort}"
    )
    return EXIT_OK


def cmd_synth(args) -> int:
    manifest = Manifest("synth", args, Path(args.out_dir))
    params = resolve_scenario(args.scenario)
    if args.seed is not None:
        from dataclasses import replace

        params = replace(params, seed=args.seed)
    cohort = generate_cohort(params)
    out = _out_path(args, args.out)
    with _atomic(out) as tmp:
        write_cohort_csv(cohort, tmp, header_comment=f"manifest: {manifest.name}")
    manifest.note_artifact(out)
    manifest.write()
    positives = sum(c for c in cohort.positives_by_week().values())
    print(f"generated {len(cohort)} records over weeks {params.weeks[0]}-{params.weeks[1]} "
          f"({positives} positive) -> {out}")
    return EXIT_OK


def cmd_correlate(args) -> int:
    manifest = Manifest("correlate", args, Path(args.out_dir))
    cohort = _load_cohort_arg(args, manifest)
    table = weekly_correlations(cohort)
    out = _out_path(args, args.out)
    with _atomic(out) as tmp:
        table.write_csv(tmp, header_comment=f"manifest: {manifest.name}")
    manifest.note_artifact(out)
    manifest.write()
    medians = table.median_by_feature()
    for name, value in sorted(medians.items(), key=lambda kv: -np.nan_to_num(kv[1], nan=-2.0)):
        shown = "undefined" if np.isnan(value) else f"{value:+.3f}"
        print(f"{name:24s} {shown}")
    return EXIT_OK


def cmd_train(args) -> int:
    manifest = Manifest("train", args, Path(args.out_dir))
    cohort = _load_cohort_arg(args, manifest)
    weeks = _parse_week_range(args.weeks) if args.weeks else list(cohort.weeks)
    sub = cohort.subset_weeks(weeks)
    if len(sub) == 0:
        raise DataError(f"no records in training weeks {weeks}")
    X = np.vstack([sub.week_features(w) for w in sub.weeks])
    y = np.concatenate([sub.week_labels(w) for w in sub.weeks])
    config = TrainConfig(
        regularization=args.regularization,
        epochs=args.epochs,
        seed=derive_seed(args.seed or 0, "train"),
        class_weighting=args.class_weighting,
    )
    model = train(X, y, ModelKind(args.kind), config)
    out = _out_path(args, args.out)
    trained_weeks = ",".join(str(w) for w in sorted(set(sub.weeks)))
    with _atomic(out) as tmp:
        save_model(model, tmp, manifest=manifest.name, trained_weeks=trained_weeks)
    manifest.note_artifact(out)
    manifest.write()
    print(f"trained {args.kind} model on {len(y)} records "
          f"({int(y.sum())} positive, weeks {min(sub.weeks)}-{max(sub.weeks)}) -> {out}")
    return EXIT_OK


def cmd_simulate(args) -> int:
    manifest = Manifest("simulate", args, Path(args.out_dir))
    cohort = _load_cohort_arg(args, manifest)
    model = _load_model_arg(args, manifest)
    manifest.note_input(args.policy)
    policy = PolicyConfig.from_file(args.policy)
    weeks = _parse_week_range(args.weeks) if args.weeks else None
    if args.model and not args.allow_overlap:
        trained = model_metadata(args.model).get("trained_weeks", "-")
        if trained not in ("-", ""):
            trained_set = {int(w) for w in trained.split(",")}
            replay_set = set(weeks) if weeks else set(cohort.weeks)
            overlap = sorted(trained_set & replay_set)
            if overlap:
                raise OverlapError(
                    f"model was trained on weeks {trained} which overlap the replay "
                    f"weeks ({overlap}); restrict --weeks or pass --allow-overlap"
                )
    trace = run_replay(
        cohort,
        model,
        policy,
        retrain_every=args.retrain_every,
        retrain_kind=ModelKind(args.retrain_kind),
        weeks=weeks,
        seed=args.seed or 0,
    )

    out_trace = _out_path(args, args.out_trace)
    with _atomic(out_trace) as tmp:
        trace.to_jsonl(tmp, manifest=manifest.name)
    manifest.note_artifact(out_trace)

    rows = trace.summary_rows()
    header = list(rows[0].keys())
    out_summary = _out_path(args, args.out_summary)
    _write_text(
        out_summary,
        _csv_text(header, [[r[h] for h in header] for r in rows], f"manifest: {manifest.name}"),
    )
    manifest.note_artifact(out_summary)

    sel_rows = []
    for p in trace.periods:
        version_model = trace.lineage[p.model_version].model
        ids = cohort.week_ids(p.period)
        X = cohort.week_features(p.period)
        s = dict(zip(ids.tolist(), score_matrix(version_model, X).tolist()))
        for rid in p.selection.exploit_ids:
            sel_rows.append([rid, p.period, "exploit", "", repr(s[rid])])
        for rid in p.selection.explore_ids:
            arm = p.selection.arm_assignments.get(rid, "")
            sel_rows.append([rid, p.period, "explore", arm, repr(s[rid])])
    out_selections = _out_path(args, args.out_selections)
    _write_text(
        out_selections,
        _csv_text(
            ["record_id", "period", "channel", "arm", "score"],
            sel_rows,
            f"manifest: {manifest.name}",
        ),
    )
    manifest.note_artifact(out_selections)
    manifest.write()

    mean_recall = float(np.mean([p.recall for p in trace.periods]))
    print(
        f"replayed {len(trace.periods)} periods, revealed {trace.revealed_count()} labels, "
        f"mean recall {mean_recall:.3f} -> {out_trace}"
    )
    return EXIT_OK


def cmd_sweep(args) -> int:
    manifest = Manifest("sweep", args, Path(args.out_dir))
    cohort = _load_cohort_arg(args, manifest)
    model = _load_model_arg(args, manifest)
    rhos = _parse_float_list(args.rho_list, "--rho-list")
    capacities = _parse_int_list(args.k_list, "--k-list")
    rows = sweep_exploration(cohort, model, rhos, capacities, seed=args.seed or 0)
    out = _out_path(args, args.out)
    _write_text(
        out,
        _csv_text(
            ["exploration_fraction", "capacity", "mean_recall"],
            [[r["exploration_fraction"], r["capacity"], repr(r["mean_recall"])] for r in rows],
            f"manifest: {manifest.name}",
        ),
    )
    manifest.note_artifact(out)
    manifest.write()
    for r in rows:
        print(f"rho={r['exploration_fraction']:<5} capacity={r['capacity']:<7} "
              f"mean_recall={r['mean_recall']:.3f}")
    return EXIT_OK


def cmd_bootstrap(args) -> int:
    manifest = Manifest("bootstrap", args, Path(args.out_dir))
    cohort = _load_cohort_arg(args, manifest)
    model = _load_model_arg(args, manifest)
    weeks = _parse_week_range(args.weeks) if args.weeks else None
    result = bootstrap_ci(
        cohort,
        model,
        args.k,
        replicates=args.replicates,
        level=args.level,
        weeks=weeks,
        seed=args.seed or 0,
    )
    out = _out_path(args, args.out)
    _write_text(
        out,
        _csv_text(
            ["k", "replicates", "level", "mean", "lo", "hi", "skipped_replicates"],
            [[result.k, len(result.replicate_means), result.level,
              repr(result.mean), repr(result.lo), repr(result.hi), result.skipped_replicates]],
            f"manifest: {manifest.name}",
        ),
    )
    manifest.note_artifact(out)
    manifest.write()
    print(f"recall@{args.k}: mean {result.mean:.3f}, "
          f"{int(args.level * 100)}% CI ({result.lo:.3f}, {result.hi:.3f})")
    return EXIT_OK


def cmd_report(args) -> int:
    manifest = Manifest("report", args, Path(args.out_dir))
    wrote_any = False

    if args.trace:
        manifest.note_input(args.trace)
        periods = []
        with open(args.trace, encoding="utf-8") as fh:
            for line in fh:
                obj = json.loads(line)
                if obj.get("type") == "period":
                    periods.append(obj)
        if not periods:
            raise DataError(f"{args.trace}: no period records")
        header = ["period", "pool", "positives", "k_exploit", "k_explore",
                  "recall", "precision", "f1", "model_version"]
        rows = [
            [p["period"], p["pool_size"], p["pool_positives"],
             len(p["exploit_ids"]), len(p["explore_ids"]),
             p["recall"], p["precision"] if p["precision"] is not None else "",
             p["f1"] if p["f1"] is not None else "", p["model_version"]]
            for p in periods
        ]
        out = _out_path(args, "trace_summary.csv")
        _write_text(out, _csv_text(header, rows, f"manifest: {manifest.name}"))
        manifest.note_artifact(out)
        wrote_any = True
        print(f"trace summary ({len(rows)} periods) -> {out}")

    if args.cohort:
        cohort = _load_cohort_arg(args, manifest)
        counts = [
            [w, int(len(cohort.week_ids(w))), int(cohort.week_labels(w).sum())]
            for w in cohort.weeks
        ]
        out_counts = _out_path(args, "weekly_counts.csv")
        _write_text(
            out_counts,
            _csv_text(["week", "tests", "positives"], counts, f"manifest: {manifest.name}"),
        )
        manifest.note_artifact(out_counts)
        out_corr = _out_path(args, "weekly_correlations.csv")
        with _atomic(out_corr) as tmp:
            weekly_correlations(cohort).write_csv(tmp, header_comment=f"manifest: {manifest.name}")
        manifest.note_artifact(out_corr)
        wrote_any = True
        print(f"cohort report ({len(counts)} weeks) -> {out_counts}, {out_corr}")

        if args.recall_table and args.model:
            model = load_model(args.model)
            manifest.note_input(args.model)
            ks = _parse_int_list(args.k_list, "--k-list") if args.k_list else [1000, 2000, 3000, 4000, 5000]
            eval_weeks = _parse_week_range(args.weeks) if args.weeks else None
            rows_d = weekly_recall_table(cohort, model, ks, weeks=eval_weeks, seed=args.seed or 0)
            header = list(rows_d[0].keys())
            out = _out_path(args, "weekly_recall.csv")
            _write_text(
                out,
                _csv_text(header, [[r[h] for h in header] for r in rows_d],
                          f"manifest: {manifest.name}"),
            )
            manifest.note_artifact(out)
            print(f"weekly recall table -> {out}")

        if args.models:
            named = {}
            for entry in args.models.split(","):
                entry = entry.strip()
                if entry == "rule_based":
                    named["rule_based"] = rule_based_model()
                else:
                    named[Path(entry).stem] = load_model(entry)
                    manifest.note_input(entry)
            ks = _parse_int_list(args.k_list, "--k-list") if args.k_list else [1000, 2000, 3000, 4000, 5000]
            eval_weeks = _parse_week_range(args.weeks) if args.weeks else None
            rows_m = model_comparison_table(cohort, named, ks,
                                            weeks=eval_weeks, seed=args.seed or 0)
            header = list(rows_m[0].keys())
            out = _out_path(args, "model_comparison.csv")
            _write_text(
                out,
                _csv_text(header, [[r[h] for h in header] for r in rows_m],
                          f"manifest: {manifest.name}"),
            )
            manifest.note_artifact(out)
            print(f"model comparison ({len(rows_m)} models) -> {out}")

        if args.crossover:
            if not (args.weeks_a and args.weeks_b and args.weeks):
                raise UsageError("--crossover needs --weeks-a, --weeks-b and --weeks (evaluation)")
            ks = _parse_int_list(args.k_list, "--k-list") if args.k_list else [100, 300, 1000, 3000]
            rows_x = train_eval_split_experiment(
                cohort,
                _parse_week_range(args.weeks_a),
                _parse_week_range(args.weeks_b),
                _parse_week_range(args.weeks),
                ks,
                seed=args.seed or 0,
            )
            out = _out_path(args, "crossover.csv")
            _write_text(
                out,
                _csv_text(
                    ["k", "recall_a", "recall_b"],
                    [[r["k"], repr(r["recall_a"]), repr(r["recall_b"])] for r in rows_x],
                    f"manifest: {manifest.name}",
                ),
            )
            manifest.note_artifact(out)
            print(f"crossover table -> {out}")

    if not wrote_any:
        raise UsageError("report needs --trace and/or --cohort")
    manifest.write()
    return EXIT_OK


# ---------------------------------------------------------------------------
# Parser wiring.
# ---------------------------------------------------------------------------


def _add_common(parser: _Parser) -> None:
    parser.add_argument("--seed", type=int, default=None, metavar="U64",
                        help="master seed; every random stream derives from it")
    parser.add_argument("--config", default=None, metavar="PATH",
                        help="key = value file supplying defaults for this subcommand's flags")
    parser.add_argument("--out-dir", default=".", metavar="PATH",
                        help="directory for output files (default: current directory)")
    parser.add_argument("--quiet", action="store_true",
                        help="suppress informational logging")


def build_parser() -> _Parser:
    parser = _Parser(prog="banditriage",
                     description="Budget-constrained test prioritization with bandit exploration.")
    parser.add_argument("--version", action="version", version=f"banditriage {__version__}")
    sub = parser.add_subparsers(dest="subcommand", metavar="SUBCOMMAND", parser_class=_Parser)

    p = sub.add_parser("ingest", help="parse and validate a raw CSV into a cohort file")
    _add_common(p)
    p.add_argument("--input", default=None, help="raw delimited text file with a header row")
    p.set_defaults(required_flags=("input",))
    p.add_argument("--mapping", default=None, help="value-mapping file (overlays the defaults)")
    p.add_argument("--out", default="cohort.csv", help="cohort output file name")
    p.add_argument("--report", default="rejections.tsv",
                   help="rejection report (row<TAB>reason per rejected row)")
    p.add_argument("--delimiter", default=",", help="field delimiter (default comma)")
    p.add_argument("--keep-other-results", action="store_true",
                   help="retain result='other' rows as negatives instead of excluding them")
    p.add_argument("--null-policy", choices=["as_absent", "drop"], default="as_absent",
                   help="treat unknown symptoms as absent, or drop such rows")
    p.add_argument("--window-start", default=None, help="study window start date (ISO)")
    p.add_argument("--window-end", default=None, help="study window end date (ISO)")
    p.set_defaults(func=cmd_ingest)

    p = sub.add_parser("synth", help="generate a synthetic cohort from a scenario file")
    _add_common(p)
    p.add_argument("--scenario", default=None,
                   help="scenario file path or builtin name (default, regime_shift, oracle)")
    p.set_defaults(required_flags=("scenario",))
    p.add_argument("--out", default="synthetic.csv", help="output cohort file name")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("correlate", help="weekly feature-label correlation table")
    _add_common(p)
    p.add_argument("--cohort", default=None, help="cohort CSV (from ingest or synth)")
    p.set_defaults(required_flags=("cohort",))
    p.add_argument("--out", default="correlations.csv", help="output table file name")
    p.set_defaults(func=cmd_correlate)

    p = sub.add_parser("train", help="fit a margin ranker on selected weeks")
    _add_common(p)
    p.add_argument("--cohort", default=None, help="cohort CSV")
    p.set_defaults(required_flags=("cohort",))
    p.add_argument("--weeks", default=None, help="training weeks, e.g. 10-12 (default: all)")
    p.add_argument("--kind", choices=["linear", "poly2"], default="poly2", help="model family")
    p.add_argument("--out", default="model.txt", help="model output file name")
    p.add_argument("--regularization", type=float, default=1e-4, help="L2 strength (lambda)")
    p.add_argument("--epochs", type=int, default=20, help="training passes over the data")
    p.add_argument("--class-weighting", choices=["none", "balanced"], default="balanced",
                   help="per-class cost reweighting")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("simulate", help="replay a cohort under a policy, period by period")
    _add_common(p)
    p.add_argument("--cohort", default=None, help="cohort CSV")
    p.set_defaults(required_flags=("cohort", "policy"))
    p.add_argument("--model", default=None, help="initial model file")
    p.add_argument("--rule-based", action="store_true",
                   help="cold-start from the fixed 2/1/1 rule instead of --model")
    p.add_argument("--policy", default=None, help="policy configuration file")
    p.add_argument("--weeks", default=None, help="periods to replay, e.g. 11-19 (default: all)")
    p.add_argument("--retrain-every", type=int, default=1,
                   help="retraining cadence in periods; 0 keeps the model static")
    p.add_argument("--retrain-kind", choices=["linear", "poly2"], default="poly2",
                   help="model family used at retraining")
    p.add_argument("--allow-overlap", action="store_true",
                   help="permit replaying weeks the initial model was trained on "
                        "(off by default: that leaks evaluation labels)")
    p.add_argument("--out-trace", default="trace.jsonl", help="full trace output (JSON lines)")
    p.add_argument("--out-summary", default="summary.csv", help="per-period summary CSV")
    p.add_argument("--out-selections", default="selections.csv",
                   help="per-record selection CSV (record_id, period, channel, arm, score)")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("sweep", help="recall across exploration fractions and capacities")
    _add_common(p)
    p.add_argument("--cohort", default=None, help="cohort CSV")
    p.set_defaults(required_flags=("cohort",))
    p.add_argument("--model", default=None, help="model file (static during the sweep)")
    p.add_argument("--rule-based", action="store_true", help="sweep the fixed rule instead")
    p.add_argument("--rho-list", default="0.3,0.4,0.5,0.6,0.7",
                   help="comma-separated exploration fractions")
    p.add_argument("--k-list", default="1000", help="comma-separated capacities")
    p.add_argument("--out", default="sweep.csv", help="output table file name")
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("bootstrap", help="Student-t confidence interval on mean weekly recall")
    _add_common(p)
    p.add_argument("--cohort", default=None, help="cohort CSV")
    p.set_defaults(required_flags=("cohort", "k"))
    p.add_argument("--model", default=None, help="model file")
    p.add_argument("--rule-based", action="store_true", help="use the fixed rule")
    p.add_argument("--k", type=int, default=None, help="tests per week")
    p.add_argument("--replicates", type=int, default=10, help="bootstrap replicate count")
    p.add_argument("--level", type=float, default=0.95, help="confidence level")
    p.add_argument("--weeks", default=None, help="weeks to evaluate, e.g. 13-16 (default: all)")
    p.add_argument("--out", default="bootstrap.csv", help="output file name")
    p.set_defaults(func=cmd_bootstrap)

    p = sub.add_parser("report", help="emit plot-ready CSV tables from a trace or cohort")
    _add_common(p)
    p.add_argument("--trace", default=None, help="trace JSONL from simulate")
    p.add_argument("--cohort", default=None, help="cohort CSV")
    p.add_argument("--model", default=None, help="model file (for --recall-table)")
    p.add_argument("--recall-table", action="store_true",
                   help="with --cohort and --model: per-week recall at each capacity")
    p.add_argument("--models", default=None,
                   help="with --cohort: comma list of model files (or rule_based) for a "
                        "per-model mean recall/F1 comparison table")
    p.add_argument("--crossover", action="store_true",
                   help="train on --weeks-a and --weeks-b, compare recall on --weeks")
    p.add_argument("--weeks-a", default=None, help="first training range, e.g. 10-12")
    p.add_argument("--weeks-b", default=None, help="second training range, e.g. 21-23")
    p.add_argument("--weeks", default=None, help="evaluation weeks, e.g. 24-26")
    p.add_argument("--k-list", default=None, help="comma-separated capacities")
    p.set_defaults(func=cmd_report)

    return parser


def _apply_config_defaults(args: argparse.Namespace, parser_actions) -> None:
    """--config file entries fill flags the command line left at default."""
    if not args.config:
        return
    path = Path(args.config)
    if not path.exists():
        raise DataError(f"config file not found: {path}")
    entries = {}
    for line_number, line in enumerate(path.read_text(encoding="utf-8").splitlines(), 1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        key, sep, value = line.partition("=")
        if not sep:
            raise DataError(f"{path}:{line_number}: expected key = value")
        entries[key.strip().replace("-", "_")] = value.strip()
    known = {a.dest: a for a in parser_actions}
    for key, raw in entries.items():
        if key not in known:
            raise DataError(f"{path}: unknown option {key!r} for this subcommand")
        action = known[key]
        current = getattr(args, key)
        if current != action.default:
            continue  # explicit command line wins
        if isinstance(action, argparse._StoreTrueAction):
            setattr(args, key, raw.lower() in ("1", "true", "yes"))
        elif action.type is int:
            setattr(args, key, int(raw))
        elif action.type is float:
            setattr(args, key, float(raw))
        else:
            setattr(args, key, raw)


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if not getattr(args, "subcommand", None):
            parser.print_help()
            return EXIT_USAGE
        logging.basicConfig(
            stream=sys.stderr,
            level=logging.ERROR if args.quiet else logging.INFO,
            format="%(levelname)s %(name)s: %(message)s",
        )
        actions = parser._subparsers._group_actions[0].choices[args.subcommand]._actions  # noqa: SLF001
        _apply_config_defaults(args, actions)
        for flag in getattr(args, "required_flags", ()):
            if getattr(args, flag) is None:
                raise UsageError(
                    f"the following arguments are required: --{flag.replace('_', '-')}"
                )
        return args.func(args)
    except UsageError as exc:
        print(f"error: usage: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (DataError, ScenarioError, PolicyError, MetricError, OverlapError,
            DegenerateTrainingError) as exc:
        print(f"error: data: {exc}", file=sys.stderr)
        return EXIT_DATA
    except ValueError as exc:
        print(f"error: data: {exc}", file=sys.stderr)
        return EXIT_DATA
    except OSError as exc:
        print(f"error: data: {exc}", file=sys.stderr)
        return EXIT_DATA
    except Exception as exc:  # pragma: no cover - defensive
        log.exception("internal error")
        print(f"error: internal: {exc}", file=sys.stderr)
        return EXIT_INTERNAL


if __name__ == "__main__":
    sys.exit(main())
