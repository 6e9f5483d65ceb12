from __future__ import annotations

import argparse
import logging
import sys
from dataclasses import asdict, replace
from pathlib import Path
from typing import TYPE_CHECKING, Any

from .CompareReport import compare_report, sweep_report
from .errors import ConfigError, StrandInterleaveError
from .IterationEstimator import estimate_iteration_time, plan_sources
from .LayerDagBuilder import build_layer_dag
from .MemorySimulator import (
    MemoryConfig,
    max_model_size,
    peak_summary,
    simulate_discipline,
    slack_violations,
    timeline_rows,
)
from .Output import canonical_json, write_csv, write_json
from .PipelineSchedule import (
    block_fields,
    bubble_ratio,
    closed_form_bubble,
    pp_comm_volume,
    schedule_to_rows,
    schedule_to_trace,
    validate_schedule,
)
from .PipelineSchedulers import schedule
from .Presets import list_presets
from .Profile import archetypes, load_profile, save_profile, synth_profile, validate_profile
from .Scenario import load_scenario, sweeps
from .Schemas import json_schema
from .SIPlanSearch import SearchCaps, search_si_plan

if TYPE_CHECKING:
    from collections.abc import Sequence

    from .Scenario import Scenario

logger = logging.getLogger(__name__)

_disciplines = ("w_shape", "one_f_one_b", "bidirectional")


def parse_commandline_args(argv: Sequence[str] | None = None) -> argparse.Namespace:
    parser = argparse.ArgumentParser(
        prog="dgf_strandinterleave",
        description="Plan and simulate strand-interleaved pipeline training",
    )
    parser.add_argument("--scenario", type=Path, metavar="FILE", help="Scenario file (YAML or JSON)")
    parser.add_argument("--profile", type=Path, metavar="FILE", help="Profile file, overrides the scenario")
    parser.add_argument("--out", type=Path, default=Path("out"), metavar="DIR", help="Output directory (Default: out)")
    parser.add_argument("--seed", type=int, help="Seed of the synthetic profile jitter")
    parser.add_argument("--caps", type=SearchCaps.parse, metavar="seq=,segs=,cands=", help="Search caps")
    parser.add_argument("--trace", action="store_true", help="Also write Chrome trace files")
    parser.add_argument("--workers", type=int, help="Parallel search workers")
    verbosity = parser.add_mutually_exclusive_group()
    verbosity.add_argument("-v", "--verbose", action="store_true", help="Debug logging")
    verbosity.add_argument("-q", "--quiet", action="store_true", help="Warnings and errors only")

    commands = parser.add_subparsers(dest="command", required=True)
    commands.add_parser("presets", help="List model and cluster presets")

    profile = commands.add_parser("profile", help="Synthesize or validate a profile")
    profile_commands = profile.add_subparsers(dest="profile_command", required=True)
    synth = profile_commands.add_parser("synth", help="Synthesize the profile of a hardware archetype")
    synth.add_argument("archetype", choices=archetypes)
    profile_commands.add_parser("validate", help="Check the invariants of --profile")

    commands.add_parser("search", help="Search the best SI plan of one layer")

    pipeline = commands.add_parser("pipeline", help="Build and check one pipeline schedule")
    pipeline.add_argument("discipline", choices=_disciplines)
    pipeline.add_argument("-m", "--microbatches", type=int, help="Micro-batches (Default: from the scenario)")
    pipeline.add_argument("-p", "--stages", type=int, help="Pipeline devices (Default: from the scenario)")
    pipeline.add_argument(
        "--durations",
        default="F=1,B=2,SI=3",
        metavar="F=,B=,SI=",
        help="Block durations of one device share in microseconds (Default: F=1,B=2,SI=3)",
    )

    commands.add_parser("memory", help="Simulate memory and find the maximum model size of every discipline")

    estimate = commands.add_parser("estimate", help="Estimate the iteration time of one plan source")
    estimate.add_argument("plan_source", choices=plan_sources)

    compare = commands.add_parser("compare", help="Compare every plan source of the scenario")
    compare.add_argument("--grid", choices=tuple(sweeps), help="Compare at every point of a named sweep instead")

    schema = commands.add_parser("schema", help="Print the JSON schema of a file format")
    schema.add_argument("kind", choices=("profile", "scenario", "template"))

    return parser.parse_args(argv)


def _parse_durations(text: str) -> dict[str, float]:
    durations = {}
    for item in filter(None, (part.strip() for part in text.split(","))):
        key, sep, value = item.partition("=")
        try:
            durations[key.strip()] = float(value)
        except ValueError as e:
            raise ConfigError(f"Invalid block duration {item!r}") from e
        if not sep:
            raise ConfigError(f"Invalid block duration {item!r}: expected kind=value")
    return durations


def _scenario(args: argparse.Namespace) -> Scenario:
    if args.scenario is None:
        raise ConfigError(f"`{args.command}` needs --scenario")
    scenario = load_scenario(args.scenario)
    overrides: dict[str, Any] = {}
    if args.profile is not None:
        overrides["profile"] = str(args.profile)
    if args.seed is not None:
        overrides["seed"] = args.seed
    if args.caps is not None:
        overrides["caps"] = args.caps
    if args.workers is not None:
        overrides["workers"] = args.workers
    return replace(scenario, **overrides) if overrides else scenario


def _emit(data: Any) -> None:
    sys.stdout.write(canonical_json(data))


def _run_profile(args: argparse.Namespace) -> int:
    match args.profile_command:
        case "synth":
            tables = synth_profile(args.archetype, args.seed)
            path = save_profile(tables, args.out / f"{args.archetype}.json", hardware=args.archetype, seed=args.seed)
            logger.info(f"Wrote {path}")
            return 0
        case "validate":
            if args.profile is None:
                raise ConfigError("`profile validate` needs --profile")
            problems = validate_profile(*load_profile(args.profile))
            for problem in problems:
                logger.warning(problem)
            _emit({"profile": str(args.profile), "problems": problems})
            return 2 if problems else 0
        case command:
            raise ConfigError(f"Invalid profile command {command!r}")


def _run_search(args: argparse.Namespace) -> int:
    scenario = _scenario(args)
    tables = scenario.tables()
    fwd, bwd = build_layer_dag(scenario.model, scenario.par, scenario.cluster, tables[0], scenario.template)
    best = search_si_plan(
        fwd, bwd, tables, scenario.caps, barrier_us=scenario.barrier_us, workers=scenario.workers
    )
    plan = best.to_dict(fwd, bwd)
    write_json(args.out / "plan.json", plan)
    _emit({"total_us": best.total_us, "sequential_us": best.sequential_us, "hidden_comm_frac": best.hidden_comm_frac})
    return 0


def _run_pipeline(args: argparse.Namespace) -> int:
    m, p = args.microbatches, args.stages
    if m is None or p is None:
        par = _scenario(args).par
        m = par.microbatches if m is None else m
        p = par.pp if p is None else p
    sched = schedule(args.discipline, m, p, _parse_durations(args.durations))
    problems = validate_schedule(sched)
    for problem in problems:
        logger.warning(problem)
    write_csv(args.out / f"schedule_{args.discipline}.csv", schedule_to_rows(sched), block_fields)
    if args.trace:
        write_json(args.out / f"trace_{args.discipline}.json", schedule_to_trace(sched))
    _emit(
        {
            "discipline": args.discipline,
            "m": m,
            "p": p,
            "makespan_us": sched.makespan_us,
            "bubble_ratio": bubble_ratio(sched),
            "closed_form_bubble": closed_form_bubble(m, p),
            "pp_transfers": pp_comm_volume(sched)["transfers"],
            "problems": problems,
        }
    )
    return 0


def _run_memory(args: argparse.Namespace) -> int:
    scenario = _scenario(args)
    model, par = scenario.model, scenario.par
    cfg = MemoryConfig.from_specs(model, par, scenario.cluster, model.layers, slack_mb=scenario.slack_mb)
    summary: dict[str, Any] = {"memory": asdict(cfg), "disciplines": {}}
    timelines = {}
    for discipline in _disciplines:
        timeline = timelines[discipline] = simulate_discipline(discipline, model.layers, par, cfg)
        write_csv(args.out / f"memory_{discipline}.csv", timeline_rows(timeline), ("device", "t_us", "bytes"))
        summary["disciplines"][discipline] = {
            **peak_summary(timeline),
            "max_model_size": max_model_size(model, par, cfg, discipline),
        }
    summary["slack_violations"] = slack_violations(timelines["w_shape"], timelines["one_f_one_b"], cfg)
    write_json(args.out / "memory.json", summary)
    _emit(summary)
    return 0


def _run_estimate(args: argparse.Namespace) -> int:
    scenario = _scenario(args)
    estimate = estimate_iteration_time(
        scenario.model,
        scenario.cluster,
        scenario.par,
        args.plan_source,
        scenario.tables(),
        scenario.caps,
        template=scenario.template,
        barrier_us=scenario.barrier_us,
        p2p_latency_us=scenario.p2p_latency_us,
        workers=scenario.workers,
        intra_batch_hidden_frac=scenario.intra_batch_hidden_frac,
        slack_mb=scenario.slack_mb,
    )
    if args.trace:
        write_json(args.out / f"trace_{args.plan_source}.json", schedule_to_trace(estimate.schedule))
    _emit(estimate.to_dict())
    return 0


def _dispatch(args: argparse.Namespace) -> int:
    match args.command:
        case "presets":
            _emit({kind: {name: asdict(spec) for name, spec in items.items()} for kind, items in list_presets().items()})
            return 0
        case "profile":
            return _run_profile(args)
        case "search":
            return _run_search(args)
        case "pipeline":
            return _run_pipeline(args)
        case "memory":
            return _run_memory(args)
        case "estimate":
            return _run_estimate(args)
        case "compare" if args.grid is not None:
            _emit(sweep_report(_scenario(args), args.grid, args.out))
            return 0
        case "compare":
            report = compare_report(_scenario(args), args.out, trace=args.trace)
            _emit({"config_hash": report["config_hash"], "rows": report["rows"]})
            return 0
        case "schema":
            _emit(json_schema(args.kind))
            return 0
        case command:
            raise ConfigError(f"Invalid command {command!r}")


def main(argv: Sequence[str] | None = None) -> int:
    args = parse_commandline_args(argv)
    level = logging.DEBUG if args.verbose else logging.WARNING if args.quiet else logging.INFO
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s")

    try:
        return _dispatch(args)
    except StrandInterleaveError as e:
        logger.error(e)
        return getattr(e, "exit_code", 1)
