"""Post-processing of traces: synchronicity, class compliance, 5GS budget, failover continuity.

Offsets are measured against the simulator's true view of the GM clock,
so they are exact ticks rather than protocol-level estimates.
"""

from __future__ import annotations

import math
from collections import defaultdict
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Iterable, Iterator

from tsnsync.config import BRIDGE, END_STATION, PDU_SESSION, UE, UPF, ScenarioConfig
from tsnsync.fiveg import bitrate_bps, compute_overhead
from tsnsync.gptp import MSGS_PER_SYNC, SYNC_PDU_BYTES
from tsnsync.timebase import PPM, TICKS_PER_NS, format_fraction, us

Sample = tuple[int, str, int, int]  # (t, node, domain, offset ticks)


# -- synchronicity ------------------------------------------------------------------


@dataclass(frozen=True)
class OffsetStats:
    max_abs: int
    mean: Fraction
    p99: int
    count: int
    min: int
    max: int


@dataclass(frozen=True)
class SynchronicityReport:
    window: tuple[int, int]
    stats: dict[tuple[str, int], OffsetStats] = field(default_factory=dict)

    @property
    def max_offset(self) -> int:
        return max((s.max_abs for s in self.stats.values()), default=0)

    @property
    def devices(self) -> list[str]:
        return sorted({node for node, _ in self.stats})

    def device_max(self) -> dict[str, int]:
        out: dict[str, int] = {}
        for (node, _), s in self.stats.items():
            out[node] = max(out.get(node, 0), s.max_abs)
        return out

    def restricted(self, nodes: Iterable[str]) -> SynchronicityReport:
        keep = set(nodes)
        return SynchronicityReport(self.window, {k: v for k, v in self.stats.items() if k[0] in keep})


def p99_nearest_rank(values: list[int]) -> int:
    ordered = sorted(values)
    return ordered[max(math.ceil(0.99 * len(ordered)) - 1, 0)]


def build_report(samples: Iterable[Sample], t_start: int, t_end: int) -> SynchronicityReport:
    """Per-(node, domain) stats over samples with t_start <= t <= t_end."""
    grouped: dict[tuple[str, int], list[int]] = defaultdict(list)
    for t, node, domain, offset in samples:
        if t_start <= t <= t_end:
            grouped[(node, domain)].append(offset)
    stats = {}
    for key in sorted(grouped):
        xs = grouped[key]
        stats[key] = OffsetStats(
            max_abs=max(abs(x) for x in xs),
            mean=Fraction(sum(xs), len(xs)),
            p99=p99_nearest_rank([abs(x) for x in xs]),
            count=len(xs),
            min=min(xs),
            max=max(xs),
        )
    return SynchronicityReport((t_start, t_end), stats)


def report_from_trace(trace, warmup: int) -> SynchronicityReport:
    return build_report(trace.samples, warmup, trace.t_end)


def sample_offsets(sim, period: int, t_end: int) -> Iterator[Sample]:
    """Drive `sim` forward and yield true offsets every `period` ticks from its current time."""
    if period <= 0:
        raise ValueError("sampling period must be > 0")
    t = sim.queue.now
    while t <= t_end:
        sim.run_until(t)
        yield from sim.offsets_at(t)
        t += period


# -- compliance ------------------------------------------------------------------------


@dataclass(frozen=True)
class ClassRequirement:
    threshold: int
    max_devices: int
    service_area: str
    scenarios: str


CLASS_REQUIREMENTS = {
    1: ClassRequirement(us(1), 300, "<= 100 m x 100 m", "motion control; control-to-control"),
    2: ClassRequirement(us(10), 10, "<= 2500 m^2", "high data rate video streaming"),
    3: ClassRequirement(us(1), 100, "< 20 km^2", "smart grid: synchronicity between PMUs"),
}


@dataclass(frozen=True)
class ComplianceVerdict:
    scenario_class: int
    threshold: int
    device_count: int
    max_devices: int
    service_area: str
    applicable: bool
    passed: bool | None
    worst_device: str | None = None
    worst_offset: int = 0
    failing: tuple[str, ...] = ()

    def to_dict(self) -> dict:
        return {
            "class": self.scenario_class,
            "threshold_ns": self.threshold // TICKS_PER_NS,
            "device_count": self.device_count,
            "max_devices": self.max_devices,
            "service_area_note": self.service_area,
            "applicable": self.applicable,
            "pass": self.passed,
            "worst_device": self.worst_device,
            "worst_offset_ticks": self.worst_offset,
            "failing_devices": list(self.failing),
        }


def evaluate_compliance(report: SynchronicityReport, scenario_class: int) -> ComplianceVerdict:
    """Pass iff every device stays strictly under the class threshold and the group fits the class."""
    req = CLASS_REQUIREMENTS[scenario_class]
    maxima = report.device_max()
    common = dict(
        scenario_class=scenario_class,
        threshold=req.threshold,
        device_count=len(maxima),
        max_devices=req.max_devices,
        service_area=req.service_area,
    )
    if not maxima:
        return ComplianceVerdict(**common, applicable=False, passed=None)
    worst = max(sorted(maxima), key=lambda n: maxima[n])
    failing = tuple(n for n in sorted(maxima) if maxima[n] >= req.threshold)
    passed = not failing and len(maxima) <= req.max_devices
    return ComplianceVerdict(
        **common, applicable=True, passed=passed, worst_device=worst, worst_offset=maxima[worst], failing=failing
    )


# -- budget decomposition -----------------------------------------------------------------

CONTRIBUTIONS = (
    "gnb_node_error",
    "upf_node_error",
    "ref_quantization",
    "ta_residual",
    "tt_granularity",
    "wired_link_asymmetry",
    "node_granularity",
    "drift_accrual",
    "rate_extrapolation",
    "rounding",
)


@dataclass(frozen=True)
class Contribution:
    name: str
    bound: int
    measured: int | None = None


@dataclass(frozen=True)
class PathBudget:
    node: str
    domain: int
    bound: int
    measured: int
    terms: dict[str, int]

    @property
    def ok(self) -> bool:
        return self.measured <= self.bound


@dataclass(frozen=True)
class BudgetDecomposition:
    contributions: tuple[Contribution, ...]
    total_bound: int
    measured_max: int
    paths: tuple[PathBudget, ...] = ()

    @property
    def violations(self) -> list[PathBudget]:
        return [p for p in self.paths if not p.ok]

    @property
    def ok(self) -> bool:
        return not self.violations and self.measured_max <= self.total_bound

    def to_dict(self) -> dict:
        def both(v: int) -> dict:
            return {"ticks": v, "ns": format_fraction(Fraction(v, TICKS_PER_NS))}

        return {
            "contributions": {
                c.name: {"bound": both(c.bound), "measured": None if c.measured is None else both(c.measured)}
                for c in self.contributions
            },
            "total_bound": both(self.total_bound),
            "measured_max": both(self.measured_max),
            "conservative": self.ok,
            "violations": [f"{p.node}/{p.domain}" for p in self.violations],
            "paths": {
                f"{p.node}/{p.domain}": {"bound_ticks": p.bound, "measured_ticks": p.measured, "terms": p.terms}
                for p in self.paths
            },
        }


class _PathModel:
    """Per-sync error bound along one GM-to-end-station path, in exact ticks."""

    def __init__(self, cfg: ScenarioConfig, domain, root: str):
        self.cfg = cfg
        self.d = domain
        self.root = root
        self.nodes = cfg.node_map
        self.f = cfg.fiveg
        self.links = {}
        for link in cfg.links:
            self.links[(link.a, link.b)] = link
            self.links[(link.b, link.a)] = link
        self.gnb_of = {}
        for link in cfg.links:
            if link.kind == "radio":
                ue, gnb = (link.a, link.b) if self.nodes[link.a].kind == UE else (link.b, link.a)
                self.gnb_of[ue] = gnb
        self.ref = self.f.gm_drift_ppm if root == "5gs" else self.nodes[root].drift_ppm

    def rho(self, x: str) -> Fraction:
        n = self.nodes[x]
        if n.kind == UPF:
            return self.f.gm_drift_ppm
        if n.kind == UE:
            return self.f.gm_drift_ppm + n.fiveg_drift_ppm
        return n.drift_ppm

    def skew(self, x: str) -> Fraction:
        return abs(self.rho(x) - self.ref) / PPM

    def gran(self, x: str) -> int:
        n = self.nodes[x]
        return self.f.tt_granularity if n.kind in (UPF, UE) else n.granularity

    def fiveg_err(self, x: str) -> int:
        n = self.nodes[x]
        return abs(n.fiveg_error) if n.fiveg_error is not None else self.f.node_error_bound

    def ue_terms(self, c, ue: str) -> None:
        rt = self.f.ref_time
        c["gnb_node_error"] += self.fiveg_err(self.gnb_of[ue])
        c["ref_quantization"] += rt.ref_quantization - 1
        c["ta_residual"] += rt.ta_half
        c["drift_accrual"] += abs(self.nodes[ue].fiveg_drift_ppm) / PPM * rt.delivery_period

    def bound(self, es: str, parent: dict) -> dict[str, Fraction] | None:
        if es not in parent:
            return None
        path = [es]
        while parent[path[-1]] is not None:
            path.append(parent[path[-1]])
        path.reverse()
        c: dict[str, Fraction] = defaultdict(Fraction)
        spread = Fraction(0)
        first = path[1] if self.root == "5gs" else self.root
        if self.root == "5gs":
            if self.nodes[first].kind == UPF:
                c["upf_node_error"] += self.fiveg_err(first)
            else:
                self.ue_terms(c, first)
            c["tt_granularity"] += self.gran(first) - 1
        else:
            c["node_granularity"] += self.gran(first) - 1
        turnaround = self.d.pdelay_turnaround
        for u, v in zip(path[path.index(first):], path[path.index(first) + 1:]):
            link = self.links[(u, v)]
            jit = link.jitter
            span = (jit.max - jit.min) if jit else 0
            jmax = jit.max if jit else 0
            if link.kind == PDU_SESSION:
                c["upf_node_error"] += self.fiveg_err(u)
                self.ue_terms(c, v)
                c["tt_granularity"] += 2 * (self.f.tt_granularity - 1)
                skew_5g = abs(self.f.gm_drift_ppm - self.ref) / PPM
                c["drift_accrual"] += skew_5g * (link.delay + jmax)
                spread += span
                continue
            d_uv = link.delay if u == link.a else link.delay_ba
            d_vu = link.delay_ba if u == link.a else link.delay
            c["wired_link_asymmetry"] += Fraction(abs(d_uv - d_vu), 2) + span
            gran_key = "tt_granularity" if self.nodes[u].kind in (UPF, UE) or self.nodes[v].kind in (UPF, UE) else "node_granularity"
            c[gran_key] += Fraction((self.gran(u) - 1) + (self.gran(v) - 1), 2)
            c["drift_accrual"] += self.skew(v) * (max(d_uv, d_vu) + jmax) + (self.skew(u) + self.skew(v)) * turnaround / 2
            if self.nodes[u].kind == UE:
                # a reference-time delivery between t2 and t3 steps the responder's clock
                rt = self.f.ref_time
                c["ta_residual"] += rt.ta_half
                c["ref_quantization"] += Fraction(rt.ref_quantization - 1, 2)
            if self.nodes[v].kind == BRIDGE and v != es:
                res = self.nodes[v].residence
                c["node_granularity"] += self.gran(v) - 1
                c["drift_accrual"] += self.skew(v) * res.max
                spread += res.max - res.min
            spread += span
        c["node_granularity"] += self.gran(es) - 1

        per_sync = sum(c.values(), Fraction(0))
        S, M = self.d.sync_interval, self.d.rate_ratio_window
        ref_skew = abs(self.ref) / PPM
        age = S + S * ref_skew + spread + 1
        es_skew = abs(self.rho(es) - self.ref) / PPM
        if M == 0:
            c["drift_accrual"] += es_skew * age
        else:
            t_min = M * S * (1 - ref_skew) - spread
            g_es = self.gran(es) - 1
            drifting = any(self.rho(x) for x in path if x in self.nodes) or self.ref
            slack = 4 if drifting else 0  # floors in GM and slave readings are exact without drift
            c["rate_extrapolation"] += (2 * per_sync + 2 * g_es + slack) * age * (1 + es_skew) / t_min
        if any(c.values()):
            c["rounding"] += len(path) + 3
        return c


def decompose_budget(cfg: ScenarioConfig, trace) -> BudgetDecomposition:
    """Conservative per-path error bounds from the config, checked against the measured maxima.

    Bounds assume the slave's rate window has filled (the report warm-up
    covers it) and that no Sync is lost.
    """
    from tsnsync.simcore import _tree  # simcore imports config; keep metrics import-light

    report = report_from_trace(trace, cfg.warmup)
    measured = {k: s.max_abs for k, s in report.stats.items()}
    paths = []
    agg: dict[str, int] = {k: 0 for k in CONTRIBUTIONS}
    gnbs, upfs = set(), set()
    for d in cfg.domains:
        roots = ["5gs"] if d.fiveg_gm else [c.node for c in d.gm_candidates]
        cands = {c.node for c in d.gm_candidates}
        for n in cfg.nodes:
            if n.kind != END_STATION or n.npn != d.npn or n.id in cands or d.number not in cfg.subscriptions(n):
                continue
            worst: dict[str, int] | None = None
            for root in roots:
                model = _PathModel(cfg, d, root)
                parent = _tree(cfg, d, root)[0]
                terms = model.bound(n.id, parent)
                if terms is None:
                    continue
                whole = {k: math.ceil(terms.get(k, 0)) for k in CONTRIBUTIONS}
                if worst is None or sum(whole.values()) > sum(worst.values()):
                    worst = whole
                hops = _path_nodes(parent, n.id)
                gnbs |= {model.gnb_of[x] for x in hops if cfg.node(x).kind == UE}
                upfs |= {x for x in hops if cfg.node(x).kind == UPF}
            if worst is None:
                continue
            for k, v in worst.items():
                agg[k] = max(agg[k], v)
            paths.append(PathBudget(n.id, d.number, sum(worst.values()), measured.get((n.id, d.number), 0), worst))
    observed: dict[str, int | None] = {k: None for k in CONTRIBUTIONS}
    errs = trace.fiveg_errors
    if gnbs:
        observed["gnb_node_error"] = max(abs(errs.get(g, 0)) for g in gnbs)
    if upfs:
        observed["upf_node_error"] = max(abs(errs.get(u, 0)) for u in upfs)
    if trace.deliveries:
        observed["ref_quantization"] = max(abs(q) for *_, q, _ in trace.deliveries)
        observed["ta_residual"] = max(abs(ta) for *_, ta in trace.deliveries)
    contributions = tuple(Contribution(k, agg[k], observed[k]) for k in CONTRIBUTIONS)
    return BudgetDecomposition(
        contributions=contributions,
        total_bound=max((p.bound for p in paths), default=0),
        measured_max=report.max_offset,
        paths=tuple(paths),
    )


def _path_nodes(parent: dict, node: str) -> list[str]:
    out = []
    while node is not None and node in parent:
        out.append(node)
        node = parent[node]
    return out


# -- failover continuity --------------------------------------------------------------------


@dataclass(frozen=True)
class FailoverContinuity:
    applicable: bool
    failure_time: int | None = None
    window: tuple[int, int] | None = None
    window_max: int = 0
    steady_max: int = 0
    invalidations: int = 0
    max_gap: int = 0

    @property
    def no_spike(self) -> bool:
        return self.applicable and self.window_max <= self.steady_max

    def to_dict(self) -> dict:
        return {
            "applicable": self.applicable,
            "failure_time_ticks": self.failure_time,
            "window_max_ticks": self.window_max,
            "steady_max_ticks": self.steady_max,
            "invalidations": self.invalidations,
            "max_gap_ticks": self.max_gap,
        }


def validity_gaps(trace) -> list[tuple[str, int, int, int]]:
    """(node, domain, start, length) for every stretch a slave was invalid after first becoming valid."""
    seen_valid: set[tuple[str, int]] = set()
    open_since: dict[tuple[str, int], int] = {}
    gaps = []
    for t, node, dnum, valid in trace.validity:
        key = (node, dnum)
        if valid:
            if key in open_since:
                start = open_since.pop(key)
                gaps.append((node, dnum, start, t - start))
            seen_valid.add(key)
        elif key in seen_valid:
            open_since[key] = t
    for (node, dnum), start in open_since.items():
        gaps.append((node, dnum, start, trace.t_end - start))
    return sorted(gaps, key=lambda g: (g[2], g[0], g[1]))


def failover_continuity(trace, sync_interval: int, warmup: int = 0) -> FailoverContinuity:
    """Max |offset| over [failure, failure + 2 sync intervals] against the max everywhere else."""
    if not trace.failovers:
        return FailoverContinuity(applicable=False)
    failed_gm = trace.failovers[0][3]
    fail_times = [t for t, node, kind in trace.faults if node == failed_gm and kind == "fail"]
    start = fail_times[0] if fail_times else trace.failovers[0][0]
    end = start + 2 * sync_interval
    inside = [abs(s[3]) for s in trace.samples if start <= s[0] <= end]
    outside = [abs(s[3]) for s in trace.samples if s[0] >= warmup and not start <= s[0] <= end]
    gaps = [g for g in validity_gaps(trace) if g[2] >= start]
    return FailoverContinuity(
        applicable=True,
        failure_time=start,
        window=(start, end),
        window_max=max(inside, default=0),
        steady_max=max(outside, default=0),
        invalidations=len(gaps),
        max_gap=max((g[3] for g in gaps), default=0),
    )


# -- overhead ----------------------------------------------------------------------------------


def overhead_summary(cfg: ScenarioConfig) -> dict | None:
    if cfg.fiveg is None or cfg.fiveg.user_traffic is None or not cfg.domains:
        return None
    traffic = cfg.fiveg.user_traffic
    interval = min(d.sync_interval for d in cfg.domains)
    ratio = compute_overhead(traffic.payload_bytes, traffic.period, MSGS_PER_SYNC, SYNC_PDU_BYTES, interval)
    return {
        "overhead_ratio": format_fraction(ratio),
        "user_bitrate_bps": format_fraction(bitrate_bps(traffic.payload_bytes, traffic.period)),
        "gptp_bitrate_bps": format_fraction(bitrate_bps(MSGS_PER_SYNC * SYNC_PDU_BYTES, interval)),
        "per_ue": True,
    }


def ns_str(ticks: int | Fraction) -> str:
    return format_fraction(Fraction(ticks, TICKS_PER_NS))


__all__ = [
    "BudgetDecomposition",
    "CLASS_REQUIREMENTS",
    "ComplianceVerdict",
    "Contribution",
    "FailoverContinuity",
    "OffsetStats",
    "SynchronicityReport",
    "build_report",
    "decompose_budget",
    "evaluate_compliance",
    "failover_continuity",
    "overhead_summary",
    "report_from_trace",
    "sample_offsets",
    "validity_gaps",
]
