"""Command-line front end.

    pathletsim generate --preset exp1 --point 3 --seed 0 -o topo.txt
    pathletsim run @fig1 --trace trace.log --probe v7 d
    pathletsim experiment exp1 --seeds 5 --csv exp1.csv
    pathletsim stats exp1.csv --x edges --y avg_pathlets --partition point

Exit codes: 0 ok, 2 bad input, 3 no quiescence before the horizon,
4 invariant breach, 5 a requested probe was not delivered.
"""
from __future__ import annotations

import argparse
import csv
import io
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, replace
from typing import Dict, List, Optional, Sequence, Tuple

from . import dataplane, stats
from .engine import CSV_COLUMNS, NonConvergence, RunConfig, run
from .invariants import InvariantBreach
from .node import Rule, Timers
from .scenario import ScenarioError, fig1, format_scenario, load_scenario, parse_rule
from .topogen import GenerationError, GenParams, generate

EXIT_OK, EXIT_INPUT, EXIT_HORIZON, EXIT_BREACH, EXIT_PROBE = 0, 2, 3, 4, 5

BUILTIN = {"@fig1": fig1}


@dataclass(frozen=True)
class Preset:
    name: str
    base: GenParams
    field: str  # which knob the sweep turns
    points: Tuple[int, ...]

    def params(self, point: int, seed: int) -> GenParams:
        if self.field == "areas":
            return replace(self.base, areas=(point, point), seed=seed)
        return replace(self.base, stack_len=point, seed=seed)


PRESETS = {
    "exp1": Preset("exp1", GenParams(stack_len=2, routers=(10, 10), edge_prob=0.1, border_fraction=0.5),
                   "areas", (2, 3, 4, 5)),
    "exp2": Preset("exp2", GenParams(areas=(2, 2), routers=(10, 10), edge_prob=0.1, border_fraction=0.5),
                   "stack_len", (1, 2, 3)),
}

EXPERIMENT_COLUMNS = CSV_COLUMNS + ("point",)


class CliError(Exception):
    def __init__(self, code: int, msg: str):
        super().__init__(msg)
        self.code = code


# ---------------------------------------------------------------- helpers

def _csv_text(rows: Sequence[Dict[str, object]], columns: Sequence[str]) -> str:
    buf = io.StringIO()
    w = csv.DictWriter(buf, fieldnames=list(columns), lineterminator="\n", extrasaction="ignore")
    w.writeheader()
    w.writerows(rows)
    return buf.getvalue()


def _write(path: Optional[str], text: str) -> None:
    if path in (None, "-"):
        sys.stdout.write(text)
    else:
        with open(path, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)


def _config(args) -> RunConfig:
    timers = Timers(hello=args.hello, dead=args.dead, forward_clear=args.forward_clear,
                    pathlet=args.pathlet_timeout, history=args.history)
    rule = parse_rule(args.rule) if args.rule else None
    return RunConfig(timers, rule, args.cap, args.horizon, args.assert_invariants, trace=bool(args.trace))


def _gen_params(args) -> GenParams:
    if args.preset:
        preset = PRESETS[args.preset]
        if args.point is None:
            raise CliError(EXIT_INPUT, f"--preset {args.preset} needs --point")
        return preset.params(args.point, args.seed)
    return GenParams(args.stack_len, tuple(args.routers), tuple(args.areas), args.edge_prob,
                     args.border_fraction, args.seed, args.dest_prob, args.retry_cap)


def one_run(task: Tuple[str, int, int, RunConfig]) -> Dict[str, object]:
    """Worker for sweeps: generate, simulate, return one CSV row."""
    preset_name, point, seed, config = task
    topo = generate(PRESETS[preset_name].params(point, seed))
    result = run(topo.to_scenario(), seed, config)
    row = result.metrics.row(f"{preset_name}-{point}-s{seed}", seed)
    row["point"] = point
    return row


# ---------------------------------------------------------------- commands

def cmd_generate(args) -> int:
    try:
        params = _gen_params(args).validate()
        topo = generate(params)
    except (ValueError, GenerationError) as err:
        raise CliError(EXIT_INPUT, str(err))
    _write(args.out, f"# generated with {params}\n" + format_scenario(topo.to_scenario()))
    return EXIT_OK


def cmd_run(args) -> int:
    if args.scenario in BUILTIN:
        scenario = BUILTIN[args.scenario]()
    else:
        try:
            scenario = load_scenario(args.scenario)
        except OSError as err:
            raise CliError(EXIT_INPUT, f"cannot read {args.scenario}: {err}")
    config = _config(args)
    try:
        result = run(scenario, args.seed, config)
    except NonConvergence as err:
        raise CliError(EXIT_HORIZON, f"non-convergent: {err}")
    except InvariantBreach as err:
        raise CliError(EXIT_BREACH, f"invariant breach: {err}")
    if args.trace:
        _write(args.trace, "".join(line + "\n" for line in result.trace))
    run_id = args.run_id or args.scenario
    _write(args.csv, _csv_text([result.metrics.row(run_id, args.seed)], CSV_COLUMNS))
    code = EXIT_OK
    for src, dest in args.probe or ():
        if src not in result.nodes:
            raise CliError(EXIT_INPUT, f"probe source {src} is not in the scenario")
        header, d = dataplane.probe(result.nodes, src, dest)
        status = "delivered" if d.delivered else f"NOT delivered ({d.reason})"
        print(f"probe {src}->{dest} header={' '.join(map(str, header)) or '-'} "
              f"path={'-'.join(d.path)} {status}", file=sys.stderr)
        if not d.delivered:
            code = EXIT_PROBE
    return code


def cmd_experiment(args) -> int:
    preset = PRESETS[args.preset]
    points = tuple(args.points) if args.points else preset.points
    if not points or args.seeds < 1:
        raise CliError(EXIT_INPUT, "need at least one sweep point and one seed")
    config = RunConfig(horizon_ms=args.horizon, trace=False)
    tasks = [(preset.name, p, s, config) for p in points for s in range(args.first_seed, args.first_seed + args.seeds)]
    try:
        if args.jobs > 1:
            with ProcessPoolExecutor(args.jobs) as pool:
                rows = list(pool.map(one_run, tasks))
        else:
            rows = [one_run(t) for t in tasks]
    except NonConvergence as err:
        raise CliError(EXIT_HORIZON, f"non-convergent sweep run: {err}")
    except (ValueError, GenerationError) as err:
        raise CliError(EXIT_INPUT, str(err))
    _write(args.csv, _csv_text(rows, EXPERIMENT_COLUMNS))
    summary = []
    for y in ("max_pathlets", "avg_pathlets", "max_msgs", "avg_msgs"):
        summary += stats.summarize(rows, "edges", y)
        summary += stats.summarize(rows, "edges", y, partition="point")
    summary += stats.summarize(rows, "edges", "convergence_ms")
    text = stats.report_table(summary)
    if args.summary:
        _write(args.summary, stats.report_csv(summary))
    print(text, end="", file=sys.stderr if args.csv in (None, "-") else sys.stdout)
    return EXIT_OK


def cmd_stats(args) -> int:
    try:
        rows = stats.read_rows(args.csv)
    except OSError as err:
        raise CliError(EXIT_INPUT, f"cannot read {args.csv}: {err}")
    if not rows:
        raise CliError(EXIT_INPUT, f"{args.csv} has no rows")
    for col in [args.x, args.y] + ([args.partition] if args.partition else []):
        if col not in rows[0]:
            raise CliError(EXIT_INPUT, f"column {col!r} not in {args.csv}")
    lines = stats.summarize(rows, args.x, args.y, args.partition)
    _write(None, stats.report_csv(lines) if args.format == "csv" else stats.report_table(lines))
    return EXIT_OK


# ---------------------------------------------------------------- parser

def _probability(text: str) -> float:
    v = float(text)
    if not 0 < v <= 1:
        raise argparse.ArgumentTypeError(f"{text} is not in (0, 1]")
    return v


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="pathletsim", description="Hierarchical pathlet routing simulator")
    sub = ap.add_subparsers(dest="command", required=True)

    g = sub.add_parser("generate", help="write a random hierarchical topology as a scenario file")
    g.add_argument("--preset", choices=sorted(PRESETS))
    g.add_argument("--point", type=int, help="sweep value for the preset (areas for exp1, stack length for exp2)")
    g.add_argument("--stack-len", type=int, default=2)
    g.add_argument("--routers", type=int, nargs=2, default=(10, 10), metavar=("MIN", "MAX"))
    g.add_argument("--areas", type=int, nargs=2, default=(2, 2), metavar=("MIN", "MAX"))
    g.add_argument("--edge-prob", type=_probability, default=0.1)
    g.add_argument("--border-fraction", type=_probability, default=0.5)
    g.add_argument("--dest-prob", type=float, default=0.0)
    g.add_argument("--retry-cap", type=int, default=1000)
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("-o", "--out", default="-")
    g.set_defaults(func=cmd_generate)

    r = sub.add_parser("run", help="simulate a scenario to quiescence")
    r.add_argument("scenario", help="scenario file, or @fig1 for the built-in seven-router example")
    r.add_argument("--seed", type=int, default=0)
    r.add_argument("--run-id")
    t = Timers()
    r.add_argument("--hello", type=float, default=t.hello, help="hello period, ms")
    r.add_argument("--dead", type=float, default=t.dead, help="neighbor dead interval, ms")
    r.add_argument("--forward-clear", type=float, default=t.forward_clear, help="forwarding-entry hold after removal, ms")
    r.add_argument("--pathlet-timeout", type=float, default=t.pathlet, help="expiry of unreachable pathlets, ms")
    r.add_argument("--history", type=float, default=t.history, help="withdrawal history lifetime, ms")
    r.add_argument("--horizon", type=float, default=RunConfig().horizon_ms, help="give up after this many ms")
    r.add_argument("--rule", choices=[x.value for x in Rule])
    r.add_argument("--cap", type=int)
    r.add_argument("--assert-invariants", action="store_true")
    r.add_argument("--trace", metavar="FILE")
    r.add_argument("--csv", default="-", metavar="FILE")
    r.add_argument("--probe", nargs=2, action="append", metavar=("SRC", "DEST"))
    r.set_defaults(func=cmd_run)

    e = sub.add_parser("experiment", help="sweep a preset over points and seeds")
    e.add_argument("preset", choices=sorted(PRESETS))
    e.add_argument("--points", type=int, nargs="+")
    e.add_argument("--seeds", type=int, default=5)
    e.add_argument("--first-seed", type=int, default=0)
    e.add_argument("--jobs", type=int, default=1)
    e.add_argument("--horizon", type=float, default=RunConfig().horizon_ms)
    e.add_argument("--csv", default="-", metavar="FILE")
    e.add_argument("--summary", metavar="FILE", help="regression report as CSV")
    e.set_defaults(func=cmd_experiment)

    s = sub.add_parser("stats", help="line fit and dispersion report over a metrics CSV")
    s.add_argument("csv")
    s.add_argument("--x", default="edges")
    s.add_argument("--y", default="avg_pathlets")
    s.add_argument("--partition")
    s.add_argument("--format", choices=("table", "csv"), default="table")
    s.set_defaults(func=cmd_stats)
    return ap


def main(argv: Optional[List[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except CliError as err:
        print(f"pathletsim: {err}", file=sys.stderr)
        return err.code
    except ScenarioError as err:
        print(f"pathletsim: invalid scenario: {err}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
