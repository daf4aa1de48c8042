"""Command-line entry point: ``scaleplan <subcommand> [options]``.

Every run validates its inputs and computes all results in memory before it
writes anything. It then writes its artifacts atomically into
``--output-dir`` together with a ``manifest.json`` that records the resolved
configuration, the seed and the SHA-256 of every input. ``scaleplan replay
--manifest PATH`` re-executes a run from its manifest.

Exit status: 0 success, 1 usage error, 2 data error, 3 numeric failure. Any
failure prints a single ``error: <code>: <reason>`` line on stderr.

Options can also come from environment variables named ``SCALEPLAN_`` plus the
option name in upper case with dashes as underscores, for example
``SCALEPLAN_SEED=7`` or ``SCALEPLAN_OUTPUT_DIR=runs/a``. Command-line flags
take precedence.
"""

from __future__ import annotations

import argparse
import datetime as _dt
import json
import logging
import os
import sys
import warnings
from pathlib import Path
from typing import Callable

import numpy as np

from . import __version__
from . import actions, curation, io, metrics, planner, schedule, synth
from .errors import DataError, InvalidParams, ScalePlanError
from .estimators import EstimatorModel, Kind, evaluate
from .fitting import FitConfig, fit, select

ENV_PREFIX = "SCALEPLAN_"
DEFAULT_SEED = 42
DEFAULT_OUTPUT_DIR = "scaleplan-out"
EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3

log = logging.getLogger("scaleplan")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # argparse would exit with status 2
        raise UsageError(message)


def _env(name: str, default=None):
    return os.environ.get(ENV_PREFIX + name.upper().replace("-", "_"), default)


def _env_bool(name: str) -> bool:
    return str(_env(name, "")).strip().lower() in ("1", "true", "yes", "on")


# -- argument parsing -------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    common = _Parser(add_help=False)
    common.add_argument("--output-dir", default=_env("output-dir", DEFAULT_OUTPUT_DIR))
    common.add_argument("--seed", type=int, default=int(_env("seed", DEFAULT_SEED)))
    common.add_argument("--plot", action="store_true", default=_env_bool("plot"), help="also write SVG charts")
    common.add_argument("-v", "--verbose", action="store_true")

    def inp(p, required=True, help="input file"):
        default = _env("input")
        p.add_argument("--input", required=required and default is None, default=default, help=help)

    parser = _Parser(prog="scaleplan", description="Scaling-law data planning toolkit.")
    parser.add_argument("--version", action="version", version=f"scaleplan {__version__}")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("fit", parents=[common], help="fit an estimator to an observation CSV")
    inp(p, help="observation CSV (hours,value,action,metric,backbone)")
    p.add_argument("--estimator", default=_env("estimator", "auto"), choices=["m1", "m2", "m3", "m4", "auto"])
    p.add_argument("--train-count", type=int, default=int(_env("train-count", 6)))
    p.add_argument("--heldout-count", type=int, default=int(_env("heldout-count", 2)))
    p.add_argument("--n-starts", type=int, default=8)
    p.add_argument("--residual-space", choices=["linear", "log"], default="linear")

    p = sub.add_parser("select", parents=[common], help="rank estimators on held-out extrapolation error")
    inp(p, help="observation CSV")
    p.add_argument("--train-count", type=int, default=int(_env("train-count", 6)))
    p.add_argument("--heldout-count", type=int, default=int(_env("heldout-count", 2)))
    p.add_argument("--n-starts", type=int, default=8)
    p.add_argument("--residual-space", choices=["linear", "log"], default="linear")

    p = sub.add_parser("predict", parents=[common], help="hours needed for a target or an improvement")
    inp(p, help="model JSON (or a fit result JSON)")
    g = p.add_mutually_exclusive_group(required=True)
    g.add_argument("--target", type=float, help="metric value to reach")
    g.add_argument("--improvement-pct", type=float, help="relative improvement over --reference-hours")
    g.add_argument("--cases", help="CSV of target,actual_hours[,action] rows: predicted vs actual table")
    p.add_argument("--reference-hours", type=float)
    p.add_argument("--max-observed-hours", type=float)

    p = sub.add_parser("equivalence", parents=[common], help="hours model B needs to match model A")
    inp(p, help="model A JSON")
    p.add_argument("--model-b", required=True, help="model B JSON")
    p.add_argument("--reference-hours", type=float, required=True)

    p = sub.add_parser("metrics", parents=[common], help="ADE / FDE / miss rate over trajectory pairs")
    inp(p, help="trajectory JSONL with 'pred' and 'truth' point lists")
    p.add_argument("--threshold", type=float, default=metrics.MISS_THRESHOLD)

    p = sub.add_parser("mdbf", parents=[common], help="mean distance between failures")
    inp(p, help="run-log CSV (scenario,total_km,failures)")

    p = sub.add_parser("curate", parents=[common], help="geofenced, ODD-balanced splits and train tiers")
    inp(p, help="sessions JSONL")
    p.add_argument("--restarts", type=int, default=8)
    p.add_argument("--lookahead", type=int, default=8)
    p.add_argument("--no-tiers", action="store_true")

    p = sub.add_parser("label", parents=[common], help="auto-label actions on a lane graph")
    inp(p, help="ego path JSONL (session_id, path, offset, optional start_lanelet)")
    p.add_argument("--lane-graph", required=True, help="lane graph JSON")
    p.add_argument("--alpha", type=float, default=float(_env("alpha", 0.5)))
    p.add_argument("--buffer", type=float, default=1.0)
    p.add_argument("--tolerance", type=float, default=2.0, help="vote grouping distance (m)")

    p = sub.add_parser("schedule", parents=[common], help="epochs and cosine learning-rate trace")
    p.add_argument("--k", type=float, required=True, help="dataset size exponent (2**k hours)")
    p.add_argument("--batch-size", type=int, default=schedule.BASE_BATCH)
    p.add_argument("--m", type=int, default=schedule.BASE_EPOCHS)
    p.add_argument("--l", type=int, default=schedule.LARGEST_EXPONENT)
    p.add_argument("--samples-per-hour", type=float, default=schedule.SAMPLES_PER_HOUR)
    p.add_argument("--stride", type=int, default=0, help="LR table stride in steps (0: ~100 rows)")

    p = sub.add_parser("synth", parents=[common], help="synthetic observation series or session corpus")
    p.add_argument("--estimator", default=_env("estimator", "m2"), choices=["m1", "m2", "m3", "m4"])
    p.add_argument("--params", default="beta=2,c=-0.5,eps_inf=0.1", help="comma-separated name=value")
    p.add_argument("--hours", default="", help="comma-separated hours grid (default 16..8192 powers of two)")
    p.add_argument("--sigma", type=float, default=0.0)
    p.add_argument("--sessions", type=int, default=0, help="generate N sessions instead of a series")
    p.add_argument("--topology", default="isolated")

    p = sub.add_parser("replay", help="re-run a recorded manifest")
    p.add_argument("--manifest", required=True)
    p.add_argument("--output-dir", default=None, help="defaults to the manifest's directory")
    p.add_argument("-v", "--verbose", action="store_true")
    return parser


# -- helpers ----------------------------------------------------------------


def _fit_config(args) -> FitConfig:
    return FitConfig(n_starts=args.n_starts, residual_space=args.residual_space, seed=args.seed)


def _read_model(path) -> EstimatorModel:
    try:
        with open(path, encoding="utf-8") as fh:
            data = json.load(fh)
    except OSError as exc:
        raise DataError(f"cannot read {path}: {exc.strerror}") from None
    except json.JSONDecodeError as exc:
        raise DataError(f"{path}: invalid JSON ({exc.msg})") from None
    if isinstance(data, dict) and "model" in data:
        data = data["model"]
    try:
        return EstimatorModel.from_dict(data)
    except ScalePlanError as exc:
        raise DataError(f"{path}: {exc}") from None


def _parse_params(text: str) -> dict[str, float]:
    out = {}
    for part in filter(None, (p.strip() for p in text.split(","))):
        name, sep, value = part.partition("=")
        if not sep:
            raise InvalidParams(f"bad parameter {part!r}; expected name=value")
        try:
            out[name.strip()] = float(value)
        except ValueError:
            raise InvalidParams(f"parameter {name} is not a number: {value!r}") from None
    return out


class Outputs:
    """Artifacts collected in memory and written only after the run succeeds."""

    def __init__(self) -> None:
        self.files: dict[str, str] = {}
        self.stdout: list[str] = []

    def add(self, name: str, text: str) -> None:
        self.files[name] = text

    def say(self, line: str) -> None:
        self.stdout.append(line)


# -- subcommands ------------------------------------------------------------


def cmd_fit(args, out: Outputs) -> None:
    obs = io.read_observations(args.input)
    config = _fit_config(args)
    doc: dict = {}
    if args.estimator == "auto":
        report = select(obs, args.train_count, args.heldout_count, config=config)
        kind = report.winner
        doc["selection"] = report.to_dict()
    else:
        kind = Kind.parse(args.estimator)
    result = fit(kind, obs, config)
    doc.update(result.to_dict())
    doc["kind"] = kind.value
    out.add("fit.json", io.json_text(doc))
    out.say(f"{kind.value}: " + ", ".join(f"{k}={v:.6g}" for k, v in result.model.params.items()))
    if args.plot:
        from .plotting import fit_chart_svg

        out.add("fit.svg", fit_chart_svg([o.hours for o in obs], [o.value for o in obs], {kind.value: result.model},
                                         ylabel=obs[0].metric or "metric"))


def cmd_select(args, out: Outputs) -> None:
    obs = io.read_observations(args.input)
    report = select(obs, args.train_count, args.heldout_count, config=_fit_config(args))
    out.add("selection.json", io.json_text(report.to_dict()))
    cols = ("kind", "status", "train_mse", "heldout_mse", "winner", "beta", "c", "eps_inf", "gamma", "eps_zero", "alpha")
    out.add("selection.csv", io.csv_text(cols, ([r.get(c) for c in cols] for r in report.rows())))
    for r in report.rows():
        mark = "*" if r.get("winner") else " "
        out.say(f"{mark} {r['kind']}: " + (f"heldout_mse={r['heldout_mse']:.6g}" if r["status"] == "ok" else r["status"]))
    if args.plot:
        from .plotting import fit_chart_svg

        models = {k.value: r.model for k, r in report.results.items()}
        n = args.train_count + args.heldout_count
        out.add("selection.svg", fit_chart_svg([o.hours for o in obs[:n]], [o.value for o in obs[:n]], models,
                                               heldout_from=args.train_count))


def cmd_predict(args, out: Outputs) -> None:
    model = _read_model(args.input)
    if args.target is not None:
        res = planner.required_hours(model, args.target, args.max_observed_hours)
        doc = {"query": "required_hours", **res.to_dict()}
        out.say(f"hours: {res.hours:.6g}" + (" (extrapolated)" if res.extrapolated else ""))
        if res.caveat:
            out.say(f"note: {res.caveat}")
    elif args.cases is not None:
        rows = []
        for action, cases in io.read_prediction_cases(args.cases):
            rows.extend(planner.prediction_rows(model, action, cases))
        doc = {"query": "prediction_table", "rows": rows}
        cols = ("action", "target", "actual_hours", "predicted_hours", "direction")
        out.add("prediction.csv", io.csv_text(cols, ([r[c] for c in cols] for r in rows)))
        out.say(planner.format_prediction_table(rows))
    else:
        if args.reference_hours is None:
            raise UsageError("--improvement-pct needs --reference-hours")
        query = planner.ImprovementQuery(model, args.reference_hours, args.improvement_pct)
        extra = planner.improvement_cost(query)
        doc = {
            "query": "improvement_cost",
            "reference_hours": args.reference_hours,
            "improvement_pct": args.improvement_pct,
            "additional_hours": extra,
            "total_hours": args.reference_hours + extra,
            "max_improvement_pct": planner.max_improvement_pct(model, args.reference_hours),
        }
        out.say(f"additional hours: {extra:.6g}")
    doc["model"] = model.to_dict()
    out.add("prediction.json", io.json_text(doc))


def cmd_equivalence(args, out: Outputs) -> None:
    a, b = _read_model(args.input), _read_model(args.model_b)
    res = planner.data_equivalence(a, b, args.reference_hours)
    out.add("equivalence.json", io.json_text({**res.to_dict(), "model_a": a.to_dict(), "model_b": b.to_dict()}))
    out.say(f"equivalent hours: {res.equivalent_hours:.6g} ({res.reduction_pct:.2f}% reduction)")


def cmd_metrics(args, out: Outputs) -> None:
    pairs = io.read_trajectories(args.input)
    rows = []
    for pid, pred, truth in pairs:
        try:
            a, f = metrics.ade(pred, truth), metrics.fde(pred, truth)
        except ScalePlanError as exc:
            raise DataError(f"pair {pid}: {exc}") from None
        rows.append((pid, a, f, f > args.threshold))
    summary = {
        "count": len(rows),
        "ade": float(np.mean([r[1] for r in rows])),
        "fde": float(np.mean([r[2] for r in rows])),
        "mr": float(np.mean([r[3] for r in rows])),
        "miss_threshold_m": args.threshold,
    }
    out.add("metrics.csv", io.csv_text(("id", "ade", "fde", "miss"), rows))
    out.add("metrics_summary.json", io.json_text(summary))
    out.say(f"ADE {summary['ade']:.4f}  FDE {summary['fde']:.4f}  MR {summary['mr']:.4f}  (n={len(rows)})")


def cmd_mdbf(args, out: Outputs) -> None:
    logs = io.read_runlogs(args.input)
    res = metrics.mdbf(logs)
    out.add("mdbf.json", io.json_text(res.to_dict()))
    out.say(f"MDBF: {'>= ' if res.censored else ''}{res.km:.6g} km")


def cmd_curate(args, out: Outputs) -> None:
    sessions = io.read_sessions(args.input)
    clusters = curation.cluster_sessions(sessions)
    assignment = curation.assign_splits(clusters, seed=args.seed, n_restarts=args.restarts)
    if not args.no_tiers:
        assignment = curation.cumulative_tiers(assignment, clusters, seed=args.seed, lookahead=args.lookahead)
    audit = curation.split_audit(assignment, clusters)
    audit["clusters"] = len(clusters)
    out.add("assignment.csv", io.csv_text(io.ASSIGNMENT_COLUMNS, curation.session_rows(assignment, clusters)))
    out.add("audit.json", io.json_text(audit))
    for s, e in audit["splits"].items():
        out.say(f"{s}: {e['hours']:.1f} h ({100 * e['share']:.2f}%), {e['clusters']} clusters")
    out.say(f"shared cells across splits: {audit['shared_cells']}")


def cmd_label(args, out: Outputs) -> None:
    graph = io.read_lane_graph(args.lane_graph)
    snaps = io.read_snapshots(args.input)
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always")
        rows = actions.label_sessions(graph, snaps, alpha=args.alpha, buffer=args.buffer, tolerance=args.tolerance)
    out.add("labels.csv", io.labels_text(rows))
    ties = sum(issubclass(w.category, actions.VoteTieWarning) for w in caught)
    out.say(f"{len(rows)} labels over {len({s.session_id for s in snaps})} sessions; {ties} tied groups dropped")


def cmd_schedule(args, out: Outputs) -> None:
    n_epochs = schedule.epochs(args.k, args.m, args.l)
    spec = schedule.ScheduleSpec.for_dataset(args.k, args.batch_size, args.samples_per_hour, args.m, args.l)
    stride = args.stride or max(spec.total_steps // 100, 1)
    doc = {
        "k": args.k,
        "epochs": n_epochs,
        "batch_size": args.batch_size,
        "eta_max": spec.eta_max,
        "eta_min": spec.eta_min,
        "total_steps": spec.total_steps,
        "samples": schedule.compute_budget(args.k, args.samples_per_hour, args.m, args.l),
    }
    out.add("schedule.json", io.json_text(doc))
    out.add("lr.csv", io.csv_text(("step", "lr"), schedule.lr_table(spec, stride)))
    out.say(f"epochs: {n_epochs}")
    out.say(f"lr: {spec.eta_max:g} -> {spec.eta_min:g} over {spec.total_steps} steps")


def cmd_synth(args, out: Outputs) -> None:
    if args.sessions:
        sessions = synth.generate_sessions(args.sessions, topology=args.topology, seed=args.seed)
        out.add("sessions.jsonl", io.sessions_text(sessions))
        out.say(f"{len(sessions)} sessions")
        return
    model = EstimatorModel(Kind.parse(args.estimator), **_parse_params(args.params))
    hours = [float(h) for h in args.hours.split(",")] if args.hours else synth.POWER_OF_TWO_HOURS
    series = synth.generate_series(synth.SynthSpec(model, hours=hours, sigma=args.sigma, seed=args.seed))
    out.add("observations.csv", io.observations_text(series))
    out.add("model.json", io.json_text(model.to_dict()))
    out.say(f"{len(series)} observations from {model.kind.value}")


COMMANDS: dict[str, Callable] = {
    "fit": cmd_fit,
    "select": cmd_select,
    "predict": cmd_predict,
    "equivalence": cmd_equivalence,
    "metrics": cmd_metrics,
    "mdbf": cmd_mdbf,
    "curate": cmd_curate,
    "label": cmd_label,
    "schedule": cmd_schedule,
    "synth": cmd_synth,
}
INPUT_KEYS = ("input", "model_b", "lane_graph")


# -- running ----------------------------------------------------------------


def _config(args) -> dict:
    return {k: v for k, v in sorted(vars(args).items()) if k not in ("output_dir", "verbose", "command")}


def _execute(command: str, args, output_dir: Path) -> int:
    inputs = {}
    for key in INPUT_KEYS:
        path = getattr(args, key, None)
        if path is not None:
            if not os.path.isfile(path):
                raise DataError(f"input file not found: {path}")
            inputs[key] = {"path": str(path), "sha256": io.sha256_file(path)}
    out = Outputs()
    COMMANDS[command](args, out)
    digests = {}
    for name, text in sorted(out.files.items()):
        io.atomic_write(output_dir / name, text)
        digests[name] = io.sha256_file(output_dir / name)
    manifest = {
        "subcommand": command,
        "config": _config(args),
        "seed": args.seed,
        "inputs": inputs,
        "outputs": digests,
        "version": __version__,
        "timestamp": _dt.datetime.now(_dt.timezone.utc).isoformat(timespec="seconds"),
    }
    io.atomic_write(output_dir / "manifest.json", io.json_text(manifest))
    for line in out.stdout:
        print(line)
    return EXIT_OK


def _replay(args) -> int:
    path = Path(args.manifest)
    try:
        manifest = json.loads(path.read_text(encoding="utf-8"))
        command = manifest["subcommand"]
        config = dict(manifest["config"])
    except OSError as exc:
        raise DataError(f"cannot read manifest {path}: {exc.strerror}") from None
    except (json.JSONDecodeError, KeyError, TypeError):
        raise DataError(f"{path}: not a run manifest") from None
    if command not in COMMANDS:
        raise DataError(f"{path}: unknown subcommand {command!r}")
    for key, entry in manifest.get("inputs", {}).items():
        current = config.get(key)
        if current is None or not os.path.isfile(current):
            raise DataError(f"replay input missing: {current}")
        if io.sha256_file(current) != entry["sha256"]:
            raise DataError(f"replay input changed since the run: {current}")
    ns = argparse.Namespace(**config, command=command, verbose=args.verbose)
    output_dir = Path(args.output_dir) if args.output_dir else path.parent
    return _execute(command, ns, output_dir)


def run(argv: list[str] | None = None) -> int:
    """Parse ``argv`` and run; returns the process exit status."""
    argv = sys.argv[1:] if argv is None else list(argv)
    try:
        args = build_parser().parse_args(argv)
    except UsageError as exc:
        print(f"error: usage: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except ValueError as exc:  # malformed SCALEPLAN_* value
        print(f"error: usage: {exc}", file=sys.stderr)
        return EXIT_USAGE
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.command == "replay":
            return _replay(args)
        return _execute(args.command, args, Path(args.output_dir))
    except UsageError as exc:
        print(f"error: usage: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except ScalePlanError as exc:
        print(f"error: {exc.code}: {exc}", file=sys.stderr)
        return EXIT_NUMERIC if exc.numeric else EXIT_DATA
    except (FloatingPointError, OverflowError, np.linalg.LinAlgError) as exc:
        print(f"error: numeric-failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


def main() -> None:
    sys.exit(run())
