"""Command line front end: validate scenarios, run them, write CSV/JSON artifacts.

Exit status: 0 when the run completed (and requested compliance passed),
2 when a compliance check failed, 1 on any error.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from fractions import Fraction
from importlib import resources
from pathlib import Path

from tsnsync import __version__
from tsnsync.config import END_STATION, ConfigError, ScenarioConfig, npn_ids, parse_config
from tsnsync.metrics import (
    build_report,
    decompose_budget,
    evaluate_compliance,
    failover_continuity,
    overhead_summary,
    validity_gaps,
)
from tsnsync.simcore import EngineError, Simulation, Trace
from tsnsync.timebase import TICKS_PER_NS, format_duration, format_fraction, parse_duration, ticks_to_ns_str

log = logging.getLogger("tsnsync")

OUTPUT_ENV = "TSNSYNC_OUTPUT_DIR"
EXIT_OK = 0
EXIT_ERROR = 1
EXIT_COMPLIANCE = 2

CSV_HEADER = ("time_ns", "node_id", "domain", "offset_ticks", "offset_ns")


@dataclass
class RunResult:
    name: str
    exit_code: int
    output_dir: Path | None = None
    summary: dict = field(default_factory=dict)
    messages: list[str] = field(default_factory=list)


# -- scenario lookup ------------------------------------------------------------------------


def bundled_scenarios() -> dict[str, str]:
    """name -> description of every scenario shipped with the package."""
    out = {}
    for entry in sorted(resources.files("tsnsync.scenarios").iterdir(), key=lambda p: p.name):
        if entry.name.endswith(".json"):
            doc = json.loads(entry.read_text(encoding="utf-8"))
            out[entry.name[:-5]] = doc.get("description", "")
    return out


def read_scenario_text(ref: str) -> str:
    path = Path(ref)
    if path.exists():
        return path.read_text(encoding="utf-8")
    name = ref[:-5] if ref.endswith(".json") else ref
    entry = resources.files("tsnsync.scenarios").joinpath(f"{name}.json")
    if "/" not in ref and entry.is_file():
        return entry.read_text(encoding="utf-8")
    raise ConfigError([f"{ref}: no such file or bundled scenario (see list-scenarios)"])


def load_scenario(ref: str) -> ScenarioConfig:
    return parse_config(read_scenario_text(ref))


# -- artifacts ----------------------------------------------------------------------------------


def _ticks(v: int | Fraction) -> dict:
    v = Fraction(v)
    return {"ticks": format_fraction(v) if v.denominator != 1 else int(v), "ns": ticks_to_ns_str(v)}


def write_offsets_csv(path: Path, trace: Trace) -> None:
    with path.open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(CSV_HEADER)
        for t, node, domain, offset in trace.samples:
            writer.writerow((t // TICKS_PER_NS, node, domain, offset, ticks_to_ns_str(offset)))


def compliance_by_npn(cfg: ScenarioConfig, report, scenario_class: int) -> dict[str, dict]:
    out = {}
    for npn in npn_ids(cfg):
        members = [n.id for n in cfg.nodes if n.npn == npn and n.kind == END_STATION]
        out[npn] = evaluate_compliance(report.restricted(members), scenario_class).to_dict()
    return out


def build_summary(cfg: ScenarioConfig, trace: Trace, seed: int, scenario_class: int | None) -> dict:
    warmup = cfg.warmup
    report = build_report(trace.samples, warmup, trace.t_end)
    npn_of = {n.id: n.npn for n in cfg.nodes}
    per_node = {}
    for (node, domain), s in report.stats.items():
        per_node[f"{node}/{domain}"] = {
            "node_id": node,
            "domain": domain,
            "npn": npn_of[node],
            "max_offset_ticks": s.max_abs,
            "max_offset_ns": ticks_to_ns_str(s.max_abs),
            "mean": _ticks(s.mean),
            "p99": _ticks(s.p99),
            "samples": s.count,
        }
    summary: dict = {
        "tool_version": __version__,
        "scenario": cfg.name,
        "seed": seed,
        "duration": format_duration(trace.t_end),
        "warmup": format_duration(warmup),
        "window_ns": [warmup // TICKS_PER_NS, trace.t_end // TICKS_PER_NS],
        "max_offset_ticks": report.max_offset,
        "max_offset_ns": ticks_to_ns_str(report.max_offset),
        "nodes": per_node,
        "counters": trace.counters,
        "pdu_accounting": trace.pdu_accounting,
    }
    if scenario_class is not None:
        summary["compliance"] = compliance_by_npn(cfg, report, scenario_class)
    overhead = overhead_summary(cfg)
    if overhead is not None:
        summary["overhead_ratio"] = overhead["overhead_ratio"]
        summary["overhead"] = overhead
    if cfg.fiveg is not None:
        summary["fiveg"] = _fiveg_summary(trace, warmup)
    if trace.failovers:
        interval = min(d.sync_interval for d in cfg.domains)
        summary["failovers"] = [
            {"time_ns": t // TICKS_PER_NS, "npn": npn, "domain": d, "from": old, "to": new}
            for t, npn, d, old, new in trace.failovers
        ]
        summary["failover_continuity"] = failover_continuity(trace, interval, warmup).to_dict()
    gaps = validity_gaps(trace)
    summary["validity_gaps"] = [
        {"node_id": n, "domain": d, "start_ns": ticks_to_ns_str(s), "length_ns": ticks_to_ns_str(length)}
        for n, d, s, length in gaps
    ]
    return summary


def _fiveg_summary(trace: Trace, warmup: int) -> dict:
    by_time: dict[int, list[int]] = {}
    for t, _, err in trace.ue_samples:
        by_time.setdefault(t, []).append(err)
    worst_rel = max((max(v) - min(v) for v in by_time.values()), default=0)
    worst_abs = max((abs(e) for _, _, e in trace.ue_samples), default=0)
    residence = max((abs(e) for _, _, e in trace.residence_errors), default=0)
    return {
        "node_errors_ticks": trace.fiveg_errors,
        "ue_max_abs_error": _ticks(worst_abs),
        "ue_max_relative_error": _ticks(worst_rel),
        "residence_error_max": _ticks(residence),
        "deliveries": len(trace.deliveries),
    }


def _output_dir(cfg: ScenarioConfig, output: str | None, batch: bool) -> Path:
    base = output or os.environ.get(OUTPUT_ENV) or cfg.output.directory
    path = Path(base)
    return path / cfg.name if batch else path


def run_scenario(
    cfg: ScenarioConfig,
    *,
    seed: int | None = None,
    duration: int | None = None,
    output: str | Path | None = None,
    check_class: int | None = None,
    batch: bool = False,
) -> RunResult:
    """Run one scenario and write offsets.csv, summary.json and budget.json."""
    cfg = cfg.with_overrides(seed=seed, duration=duration)
    seed = cfg.scenario.seed
    scenario_class = check_class if check_class is not None else cfg.scenario.compliance_class
    result = RunResult(cfg.name, EXIT_OK)
    try:
        trace = Simulation(cfg).run_until(cfg.scenario.duration)
    except (EngineError, ConfigError) as exc:
        result.exit_code = EXIT_ERROR
        result.messages.append(f"{cfg.name}: run aborted: {exc}")
        return result
    summary = build_summary(cfg, trace, seed, scenario_class)
    budget = decompose_budget(cfg, trace)
    result.summary = summary
    out = _output_dir(cfg, None if output is None else str(output), batch)
    try:
        out.mkdir(parents=True, exist_ok=True)
        if "csv" in cfg.output.formats:
            write_offsets_csv(out / "offsets.csv", trace)
        if "json" in cfg.output.formats:
            (out / "summary.json").write_text(json.dumps(summary, indent=2) + "\n", encoding="utf-8")
            (out / "budget.json").write_text(json.dumps(budget.to_dict(), indent=2) + "\n", encoding="utf-8")
    except OSError as exc:
        result.exit_code = EXIT_ERROR
        result.messages.append(f"{cfg.name}: cannot write artifacts to {out}: {exc}")
        return result
    result.output_dir = out
    if trace.counters.get("isolation_violation"):
        result.exit_code = EXIT_ERROR
        result.messages.append(
            f"{cfg.name}: {trace.counters['isolation_violation']} PDU(s) crossed an NPN boundary; "
            "clock domains of different NPNs must stay isolated"
        )
        return result
    if not budget.ok:
        log.warning("%s: measured offset exceeds the configured error budget (simulator defect)", cfg.name)
    if scenario_class is not None:
        failed = [npn for npn, v in summary["compliance"].items() if v["pass"] is False]
        if failed:
            result.exit_code = EXIT_COMPLIANCE
            result.messages.append(f"{cfg.name}: class {scenario_class} compliance failed for npn {', '.join(failed)}")
    return result


def _run_one(args: tuple) -> RunResult:
    ref, seed, duration, output, check_class, batch = args
    try:
        cfg = load_scenario(ref)
    except ConfigError as exc:
        return RunResult(ref, EXIT_ERROR, messages=[f"{ref}: {exc}"])
    return run_scenario(cfg, seed=seed, duration=duration, output=output, check_class=check_class, batch=batch)


# -- argparse ------------------------------------------------------------------------------------


def _duration_arg(text: str) -> int:
    try:
        return parse_duration(text)
    except ValueError as exc:
        raise argparse.ArgumentTypeError(str(exc)) from None


class _Parser(argparse.ArgumentParser):
    """Usage errors exit 1; exit 2 is reserved for compliance failures."""

    def error(self, message: str):
        self.print_usage(sys.stderr)
        self.exit(EXIT_ERROR, f"{self.prog}: error: {message}\n")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="tsnsync", description="gPTP over TSN and 5GS time sync simulator")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("-v", "--verbose", action="count", default=0, help="more logging (repeatable)")
    sub = parser.add_subparsers(dest="command", required=True)

    sim = sub.add_parser("simulate", help="run one or more scenarios")
    sim.add_argument("--config", action="append", required=True, help="scenario file or bundled name (repeatable)")
    sim.add_argument("--seed", type=int)
    sim.add_argument("--duration", type=_duration_arg, help='e.g. "60s", "500ms"')
    sim.add_argument("--output", help=f"output directory (default: ${OUTPUT_ENV} or the scenario's output.directory)")
    sim.add_argument("--check-compliance", type=int, choices=(1, 2, 3), metavar="CLASS")
    sim.add_argument("--jobs", type=int, default=1, help="parallel processes for several --config")

    val = sub.add_parser("validate", help="check a scenario without running it")
    val.add_argument("--config", action="append", required=True)

    sub.add_parser("list-scenarios", help="show bundled scenarios")
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.WARNING - 10 * min(args.verbose, 2), format="%(levelname)s %(name)s: %(message)s"
    )
    if args.command == "list-scenarios":
        for name, desc in bundled_scenarios().items():
            print(f"{name:28s} {desc}")
        return EXIT_OK
    if args.command == "validate":
        status = EXIT_OK
        for ref in args.config:
            try:
                cfg = load_scenario(ref)
            except ConfigError as exc:
                print(f"{ref}: invalid", file=sys.stderr)
                for err in exc.errors:
                    print(f"  {err}", file=sys.stderr)
                status = EXIT_ERROR
                continue
            print(f"{ref}: ok ({len(cfg.nodes)} nodes, {len(cfg.links)} links, {len(cfg.domains)} domains)")
        return status

    batch = len(args.config) > 1
    jobs = [(ref, args.seed, args.duration, args.output, args.check_compliance, batch) for ref in args.config]
    if args.jobs > 1 and batch:
        with ProcessPoolExecutor(max_workers=args.jobs) as pool:
            results = list(pool.map(_run_one, jobs))
    else:
        results = [_run_one(j) for j in jobs]
    for r in results:
        for msg in r.messages:
            print(msg, file=sys.stderr)
        if r.output_dir is not None:
            print(f"{r.name}: max offset {r.summary['max_offset_ns']} ns -> {r.output_dir}")
    codes = {r.exit_code for r in results}
    if EXIT_ERROR in codes:
        return EXIT_ERROR
    return EXIT_COMPLIANCE if EXIT_COMPLIANCE in codes else EXIT_OK


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
