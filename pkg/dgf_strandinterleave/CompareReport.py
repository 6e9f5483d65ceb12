from __future__ import annotations

from logging import getLogger
from pathlib import Path
from typing import TYPE_CHECKING, Any

from .errors import ConfigError, InfeasibleError
from .IterationEstimator import estimate_iteration_time
from .LayerDagBuilder import build_layer_dag
from .Output import config_hash, write_csv, write_json
from .PipelineSchedule import schedule_to_trace
from .Scenario import point_label, sweep_points
from .SIPlanSearch import search_si_plan

if TYPE_CHECKING:
    from .IterationEstimator import IterationEstimate
    from .Scenario import Scenario

logger = getLogger(__name__)

report_fields = (
    "plan_source",
    "discipline",
    "makespan_us",
    "speedup",
    "hidden_comm_frac",
    "peak_memory_bytes",
    "bubble_ratio",
    "tflops_per_gpu",
    "mfu",
)

_baseline = "megatron_baseline"


def estimate_all(scenario: Scenario) -> dict[str, IterationEstimate]:
    tables = scenario.tables()
    sources = scenario.plan_sources if _baseline in scenario.plan_sources else (_baseline, *scenario.plan_sources)
    return {
        source: estimate_iteration_time(
            scenario.model,
            scenario.cluster,
            scenario.par,
            source,
            tables,
            scenario.caps,
            template=scenario.template,
            barrier_us=scenario.barrier_us,
            p2p_latency_us=scenario.p2p_latency_us,
            workers=scenario.workers,
            intra_batch_hidden_frac=scenario.intra_batch_hidden_frac,
            slack_mb=scenario.slack_mb,
        )
        for source in sources
    }


def report_rows(estimates: dict[str, IterationEstimate]) -> list[dict[str, Any]]:
    """One row per plan source, speedup relative to the Megatron baseline"""
    reference = estimates[_baseline].makespan_us
    rows = []
    for source, estimate in estimates.items():
        row = {name: value for name, value in estimate.to_dict().items() if name in report_fields}
        row["speedup"] = reference / estimate.makespan_us
        rows.append({name: row[name] for name in report_fields})
    return rows


def compare_report(scenario: Scenario, out_dir: str | Path, *, trace: bool = False) -> dict[str, Any]:
    """
    Estimate every plan source of `scenario` and write `report.json` and
    `report.csv` into `out_dir`. The report carries the hash of the resolved
    scenario and nothing run-dependent, so reruns are byte-identical.
    """
    out_dir = Path(out_dir)
    resolved = scenario.to_dict()
    estimates = estimate_all(scenario)
    rows = report_rows(estimates)
    report = {
        "config_hash": config_hash(resolved),
        "scenario": resolved,
        "rows": rows,
        "plans": {source: estimate.plan for source, estimate in estimates.items() if estimate.plan is not None},
    }
    write_json(out_dir / "report.json", report)
    write_csv(out_dir / "report.csv", rows, report_fields)
    if trace:
        for source, estimate in estimates.items():
            write_json(out_dir / f"trace_{source}.json", schedule_to_trace(estimate.schedule))
    logger.info(f"Wrote the comparison of {len(rows)} plan sources into {out_dir}")
    return report


sweep_fields = ("point", *report_fields)


def interference_breakdown(scenario: Scenario) -> dict[str, float]:
    """
    Hidden share of the layer communication under the best SI plan and what
    each interference term costs of it. The kernel slowdown and the launch
    interval are switched off one at a time and the search is rerun.
    """
    solo, overlap = scenario.tables()
    fwd, bwd = build_layer_dag(scenario.model, scenario.par, scenario.cluster, solo, scenario.template)
    slowdown, launch = overlap.slowdown_factor, overlap.launch_overhead_frac

    def hidden(table) -> float:
        best = search_si_plan(
            fwd, bwd, (solo, table), scenario.caps, barrier_us=scenario.barrier_us, workers=scenario.workers
        )
        return best.hidden_comm_frac

    actual = hidden(overlap)
    return {
        "slowdown_factor": slowdown,
        "launch_overhead_frac": launch,
        "hidden_comm_frac": actual,
        "slowdown_cost_frac": hidden(overlap.with_interference(0.0, launch)) - actual,
        "launch_cost_frac": hidden(overlap.with_interference(slowdown, 0.0)) - actual,
        "ideal_hidden_comm_frac": hidden(overlap.with_interference(0.0, 0.0)),
    }


def sweep_report(scenario: Scenario, name: str, out_dir: str | Path) -> dict[str, Any]:
    """
    Compare every plan source at each point of the named sweep and write
    `sweep_{name}.json` and `sweep_{name}.csv` into `out_dir`. Points the
    cluster or the fold cannot host are skipped with their reason. The TP
    sweep also carries the interference breakdown of every point.
    """
    out_dir = Path(out_dir)
    rows: list[dict[str, Any]] = []
    skipped: list[dict[str, str]] = []
    interference: list[dict[str, Any]] = []
    for changes in sweep_points(name):
        point = point_label(changes)
        try:
            variant = scenario.variant(**changes)
            estimates = estimate_all(variant)
        except (ConfigError, InfeasibleError) as e:
            logger.warning(f"Skipping {point} of the {name} sweep: {e}")
            skipped.append({"point": point, "reason": str(e)})
            continue
        rows.extend({"point": point, **row} for row in report_rows(estimates))
        if name == "tp":
            interference.append({"point": point, **interference_breakdown(variant)})

    report: dict[str, Any] = {
        "config_hash": config_hash({"sweep": name, "scenario": scenario.to_dict()}),
        "sweep": name,
        "rows": rows,
        "skipped": skipped,
    }
    if name == "tp":
        report["interference"] = interference
    write_json(out_dir / f"sweep_{name}.json", report)
    write_csv(out_dir / f"sweep_{name}.csv", rows, sweep_fields)
    logger.info(f"Wrote the {name} sweep over {len(rows)} rows into {out_dir}")
    return report
