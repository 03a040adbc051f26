"""Scenario configuration: JSON parsing, validation and canonical serialization.

Durations are strings with a unit suffix ("125ms", "32ns", "1.5us",
"7tick") or bare integers meaning ticks. Drifts are ppm numbers or
strings ("-2.5", "1/3") and are kept exact.

`parse_config` fills every default, so `to_document(parse_config(doc))`
is a fully explicit document that parses back to an equal config.
"""

from __future__ import annotations

import json
from collections import defaultdict, deque
from dataclasses import dataclass, replace
from fractions import Fraction
from typing import Any

from tsnsync.fiveg import RadioRefTimeConfig
from tsnsync.gptp import MAX_DOMAIN_NUMBER, MAX_WORKING_DOMAINS, UNIVERSAL, WORKING
from tsnsync.timebase import (
    MAX_DRIFT_PPM,
    TICKS_PER_NS,
    format_duration,
    format_fraction,
    ms,
    ns,
    parse_duration,
    parse_ppm,
    seconds,
    us,
)

END_STATION = "end_station"
BRIDGE = "bridge"
UPF = "upf"
GNB = "gnb"
UE = "ue"
NODE_KINDS = (END_STATION, BRIDGE, UPF, GNB, UE)
TSN_KINDS = (END_STATION, BRIDGE)

WIRED = "wired"
RADIO = "radio"
PDU_SESSION = "pdu-session"
LINK_KINDS = (WIRED, RADIO, PDU_SESSION)

DEFAULT_NPN = "default"
DEFAULT_GRANULARITY = ns(8)


class ConfigError(ValueError):
    """Every problem found in a scenario document, not just the first."""

    def __init__(self, errors: list[str]):
        self.errors = list(errors)
        super().__init__("invalid scenario:\n  " + "\n  ".join(self.errors))


@dataclass(frozen=True)
class DelaySpec:
    """constant (min == max) or uniform over [min, max] ticks, inclusive."""

    kind: str = "constant"
    min: int = 0
    max: int = 0

    @classmethod
    def constant(cls, value: int) -> DelaySpec:
        return cls("constant", value, value)

    @classmethod
    def uniform(cls, lo: int, hi: int) -> DelaySpec:
        return cls("uniform", lo, hi)


@dataclass(frozen=True)
class NodeConfig:
    id: str
    kind: str
    drift_ppm: Fraction = Fraction(0)
    offset: int = 0
    granularity: int = DEFAULT_GRANULARITY
    npn: str = DEFAULT_NPN
    domains: tuple[int, ...] | None = None
    residence: DelaySpec = DelaySpec.constant(us(10))
    fiveg_error: int | None = None
    fiveg_drift_ppm: Fraction = Fraction(0)


@dataclass(frozen=True)
class LinkConfig:
    a: str
    b: str
    kind: str = WIRED
    delay: int = 0
    reverse_delay: int | None = None
    jitter: DelaySpec | None = None

    @property
    def id(self) -> str:
        return f"{self.a}|{self.b}|{self.kind}"

    @property
    def delay_ba(self) -> int:
        return self.delay if self.reverse_delay is None else self.reverse_delay


@dataclass(frozen=True)
class GmCandidateConfig:
    node: str
    priority1: int = 128
    clock_quality: int = 0
    priority2: int = 128
    hot_standby: bool = False


@dataclass(frozen=True)
class DomainConfig:
    number: int
    clock_class: str = WORKING
    npn: str = DEFAULT_NPN
    gm_candidates: tuple[GmCandidateConfig, ...] = ()
    sync_interval: int = ms(125)
    pdelay_interval: int = seconds(1)
    pdelay_turnaround: int = us(10)
    neighbor_rate_ratio: str = "unity"
    rate_ratio_window: int = 8
    missed_sync_limit: int = 3
    fiveg_gm: bool = False

    @property
    def key(self) -> tuple[str, int]:
        return (self.npn, self.number)


@dataclass(frozen=True)
class UserTraffic:
    payload_bytes: int = 50
    period: int = us(500)


@dataclass(frozen=True)
class FiveGConfig:
    gm_drift_ppm: Fraction = Fraction(0)
    gm_offset: int = 0
    node_error_bound: int = ns(100)
    ref_time: RadioRefTimeConfig = RadioRefTimeConfig()
    pdu_session_delay: DelaySpec = DelaySpec.uniform(ms(1), ms(10))
    tt_granularity: int = DEFAULT_GRANULARITY
    user_traffic: UserTraffic | None = None


@dataclass(frozen=True)
class FaultConfig:
    node: str
    at: int
    kind: str


@dataclass(frozen=True)
class ScenarioSettings:
    duration: int = seconds(10)
    seed: int = 0
    faults: tuple[FaultConfig, ...] = ()
    sampling_period: int = ms(25)
    warmup: int | None = None
    compliance_class: int | None = None


@dataclass(frozen=True)
class OutputConfig:
    directory: str = "out"
    formats: tuple[str, ...] = ("csv", "json")


@dataclass(frozen=True)
class ScenarioConfig:
    name: str
    nodes: tuple[NodeConfig, ...]
    links: tuple[LinkConfig, ...]
    domains: tuple[DomainConfig, ...] = ()
    fiveg: FiveGConfig | None = None
    scenario: ScenarioSettings = ScenarioSettings()
    output: OutputConfig = OutputConfig()
    description: str = ""

    # -- lookups ---------------------------------------------------------
    def node(self, node_id: str) -> NodeConfig:
        return self.node_map[node_id]

    @property
    def node_map(self) -> dict[str, NodeConfig]:
        return {n.id: n for n in self.nodes}

    @property
    def warmup(self) -> int:
        if self.scenario.warmup is not None:
            return self.scenario.warmup
        # two sync intervals, stretched until a rate-ratio window has filled
        spans = [(d.rate_ratio_window + 2 if d.rate_ratio_window else 2) * d.sync_interval for d in self.domains]
        return max(spans, default=2 * ms(125))

    def domain(self, npn: str, number: int) -> DomainConfig:
        for d in self.domains:
            if d.key == (npn, number):
                return d
        raise KeyError((npn, number))

    def subscriptions(self, node: NodeConfig) -> tuple[int, ...]:
        """Domain numbers an end station consumes (all of its NPN's by default)."""
        own = tuple(d.number for d in self.domains if d.npn == node.npn)
        if node.domains is None:
            return own
        return tuple(n for n in node.domains if n in own)

    def with_overrides(self, seed: int | None = None, duration: int | None = None) -> ScenarioConfig:
        s = self.scenario
        s = replace(s, seed=s.seed if seed is None else seed, duration=s.duration if duration is None else duration)
        return replace(self, scenario=s)


# -- parsing -------------------------------------------------------------


class _Reader:
    """Pulls typed fields out of nested dicts, collecting errors with JSON paths."""

    def __init__(self) -> None:
        self.errors: list[str] = []

    def err(self, path: str, msg: str) -> None:
        self.errors.append(f"{path}: {msg}")

    def obj(self, value: Any, path: str, allowed: set[str]) -> dict:
        if not isinstance(value, dict):
            self.err(path, f"expected an object, got {type(value).__name__}")
            return {}
        for key in sorted(set(value) - allowed):
            self.err(f"{path}.{key}", "unknown field")
        return value

    def list(self, value: Any, path: str) -> list:
        if value is None:
            return []
        if not isinstance(value, list):
            self.err(path, f"expected a list, got {type(value).__name__}")
            return []
        return value

    def duration(self, d: dict, key: str, path: str, default: int | None, *, required: bool = False):
        if key not in d or d[key] is None:
            if required:
                self.err(f"{path}.{key}", "required")
            return default
        try:
            return parse_duration(d[key])
        except ValueError as exc:
            self.err(f"{path}.{key}", str(exc))
            return default

    def ppm(self, d: dict, key: str, path: str, default: Fraction) -> Fraction:
        if key not in d:
            return default
        try:
            value = parse_ppm(d[key])
        except ValueError as exc:
            self.err(f"{path}.{key}", str(exc))
            return default
        if abs(value) > MAX_DRIFT_PPM:
            self.err(f"{path}.{key}", f"|drift| must be <= {MAX_DRIFT_PPM} ppm")
        return value

    def int(self, d: dict, key: str, path: str, default: int | None, *, required: bool = False):
        if key not in d or d[key] is None:
            if required:
                self.err(f"{path}.{key}", "required")
            return default
        v = d[key]
        if isinstance(v, bool) or not isinstance(v, int):
            self.err(f"{path}.{key}", f"expected an integer, got {v!r}")
            return default
        return v

    def str(self, d: dict, key: str, path: str, default: str | None, *, required=False, choices=None):
        if key not in d or d[key] is None:
            if required:
                self.err(f"{path}.{key}", "required")
            return default
        v = d[key]
        if not isinstance(v, str):
            self.err(f"{path}.{key}", f"expected a string, got {v!r}")
            return default
        if choices is not None and v not in choices:
            self.err(f"{path}.{key}", f"must be one of {'|'.join(choices)}, got {v!r}")
            return default
        return v

    def bool(self, d: dict, key: str, path: str, default: bool) -> bool:
        v = d.get(key, default)
        if not isinstance(v, bool):
            self.err(f"{path}.{key}", f"expected true/false, got {v!r}")
            return default
        return v

    def delay_spec(self, value: Any, path: str, default: DelaySpec | None) -> DelaySpec | None:
        if value is None:
            return default
        d = self.obj(value, path, {"kind", "value", "min", "max"})
        kind = self.str(d, "kind", path, "constant", choices=("constant", "uniform"))
        if kind == "constant":
            v = self.duration(d, "value", path, 0, required="min" not in d)
            if "min" in d:
                v = self.duration(d, "min", path, 0)
            return DelaySpec.constant(v)
        lo = self.duration(d, "min", path, 0, required=True)
        hi = self.duration(d, "max", path, 0, required=True)
        if hi < lo:
            self.err(path, f"max ({format_duration(hi)}) < min ({format_duration(lo)})")
        return DelaySpec.uniform(lo, hi)


_NODE_FIELDS = {
    "id", "kind", "drift_ppm", "offset", "granularity", "npn", "domains",
    "residence", "fiveg_error", "fiveg_drift_ppm",
}
_LINK_FIELDS = {"a", "b", "kind", "delay", "reverse_delay", "jitter"}
_DOMAIN_FIELDS = {
    "number", "class", "npn", "gm_candidates", "sync_interval", "pdelay_interval",
    "pdelay_turnaround", "neighbor_rate_ratio", "rate_ratio_window", "missed_sync_limit", "fiveg_gm",
}
_CAND_FIELDS = {"node", "priority1", "clock_quality", "priority2", "hot_standby"}
_FIVEG_FIELDS = {
    "gm_drift_ppm", "gm_offset", "node_error_bound", "ref_time", "pdu_session_delay",
    "tt_granularity", "user_traffic",
}
_REF_FIELDS = {"delivery_period", "ref_quantization", "ta_quantization", "delivery_kind", "ta_residual"}
_SCEN_FIELDS = {
    "duration", "seed", "faults", "sampling_period", "warmup", "compliance_class",
}


def load_document(text: str) -> dict:
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError([f"JSON syntax error at line {exc.lineno} column {exc.colno}: {exc.msg}"]) from None
    if not isinstance(doc, dict):
        raise ConfigError(["$: top level must be a JSON object"])
    return doc


def parse_config(document: str | dict) -> ScenarioConfig:
    """Build a fully validated ScenarioConfig or raise ConfigError listing every problem."""
    doc = load_document(document) if isinstance(document, str) else document
    r = _Reader()
    top = r.obj(doc, "$", {"name", "description", "topology", "domains", "fiveg", "scenario", "output"})
    name = r.str(top, "name", "$", "scenario")
    description = r.str(top, "description", "$", "")
    topo = r.obj(top.get("topology", {}), "$.topology", {"nodes", "links"})
    fiveg = _parse_fiveg(r, top.get("fiveg")) if top.get("fiveg") is not None else None

    nodes = []
    for i, raw in enumerate(r.list(topo.get("nodes"), "$.topology.nodes")):
        p = f"$.topology.nodes[{i}]"
        d = r.obj(raw, p, _NODE_FIELDS)
        domains = None
        if d.get("domains") is not None:
            domains = []
            for j, n in enumerate(r.list(d["domains"], f"{p}.domains")):
                if isinstance(n, bool) or not isinstance(n, int):
                    r.err(f"{p}.domains[{j}]", f"expected a domain number, got {n!r}")
                else:
                    domains.append(n)
            domains = tuple(domains)
        granularity = r.duration(d, "granularity", p, DEFAULT_GRANULARITY)
        if granularity is not None and granularity < 1:
            r.err(f"{p}.granularity", "must be >= 1 tick")
        nodes.append(
            NodeConfig(
                id=r.str(d, "id", p, f"<node{i}>", required=True),
                kind=r.str(d, "kind", p, END_STATION, required=True, choices=NODE_KINDS),
                drift_ppm=r.ppm(d, "drift_ppm", p, Fraction(0)),
                offset=r.duration(d, "offset", p, 0),
                granularity=granularity,
                npn=r.str(d, "npn", p, DEFAULT_NPN),
                domains=domains,
                residence=r.delay_spec(d.get("residence"), f"{p}.residence", NodeConfig.residence),
                fiveg_error=r.duration(d, "fiveg_error", p, None),
                fiveg_drift_ppm=r.ppm(d, "fiveg_drift_ppm", p, Fraction(0)),
            )
        )

    session_default = fiveg.pdu_session_delay if fiveg else FiveGConfig.pdu_session_delay
    links = []
    for i, raw in enumerate(r.list(topo.get("links"), "$.topology.links")):
        p = f"$.topology.links[{i}]"
        d = r.obj(raw, p, _LINK_FIELDS)
        kind = r.str(d, "kind", p, WIRED, choices=LINK_KINDS)
        jitter = r.delay_spec(d.get("jitter"), f"{p}.jitter", None)
        if kind == PDU_SESSION and "delay" not in d:
            # user-plane transit comes from the 5GS-wide default
            delay = session_default.min
            if jitter is None and session_default.max > session_default.min:
                jitter = DelaySpec.uniform(0, session_default.max - session_default.min)
        else:
            delay = r.duration(d, "delay", p, 0)
        if jitter is not None and jitter.kind == "constant":
            jitter = DelaySpec.uniform(jitter.min, jitter.max)
        if jitter is not None and jitter.min == jitter.max == 0:
            jitter = None
        links.append(
            LinkConfig(
                a=r.str(d, "a", p, "", required=True),
                b=r.str(d, "b", p, "", required=True),
                kind=kind,
                delay=delay,
                reverse_delay=r.duration(d, "reverse_delay", p, None),
                jitter=jitter,
            )
        )

    domains = []
    for i, raw in enumerate(r.list(top.get("domains"), "$.domains")):
        p = f"$.domains[{i}]"
        d = r.obj(raw, p, _DOMAIN_FIELDS)
        cands = []
        for j, c in enumerate(r.list(d.get("gm_candidates"), f"{p}.gm_candidates")):
            cp = f"{p}.gm_candidates[{j}]"
            cd = r.obj(c, cp, _CAND_FIELDS)
            cands.append(
                GmCandidateConfig(
                    node=r.str(cd, "node", cp, "", required=True),
                    priority1=r.int(cd, "priority1", cp, 128),
                    clock_quality=r.int(cd, "clock_quality", cp, 0),
                    priority2=r.int(cd, "priority2", cp, 128),
                    hot_standby=r.bool(cd, "hot_standby", cp, False),
                )
            )
        domains.append(
            DomainConfig(
                number=r.int(d, "number", p, 0, required=True),
                clock_class=r.str(d, "class", p, WORKING, choices=(WORKING, UNIVERSAL)),
                npn=r.str(d, "npn", p, DEFAULT_NPN),
                gm_candidates=tuple(cands),
                sync_interval=r.duration(d, "sync_interval", p, ms(125)),
                pdelay_interval=r.duration(d, "pdelay_interval", p, seconds(1)),
                pdelay_turnaround=r.duration(d, "pdelay_turnaround", p, us(10)),
                neighbor_rate_ratio=r.str(d, "neighbor_rate_ratio", p, "unity", choices=("unity", "estimate")),
                rate_ratio_window=r.int(d, "rate_ratio_window", p, 8),
                missed_sync_limit=r.int(d, "missed_sync_limit", p, 3),
                fiveg_gm=r.bool(d, "fiveg_gm", p, False),
            )
        )

    scenario = _parse_scenario(r, top.get("scenario", {}))
    out = r.obj(top.get("output", {}), "$.output", {"directory", "formats"})
    formats = tuple(r.list(out.get("formats", ["csv", "json"]), "$.output.formats"))
    for f in formats:
        if f not in ("csv", "json"):
            r.err("$.output.formats", f"unknown format {f!r} (csv|json)")
    output = OutputConfig(directory=r.str(out, "directory", "$.output", "out"), formats=formats)

    cfg = ScenarioConfig(
        name=name,
        nodes=tuple(nodes),
        links=tuple(links),
        domains=tuple(domains),
        fiveg=fiveg,
        scenario=scenario,
        output=output,
        description=description,
    )
    if not r.errors:
        r.errors.extend(validate(cfg))
    if r.errors:
        raise ConfigError(r.errors)
    return cfg


def _parse_fiveg(r: _Reader, raw: Any) -> FiveGConfig:
    p = "$.fiveg"
    d = r.obj(raw, p, _FIVEG_FIELDS)
    ref = r.obj(d.get("ref_time", {}), f"{p}.ref_time", _REF_FIELDS)
    rp = f"{p}.ref_time"
    defaults = RadioRefTimeConfig()
    ref_kwargs = dict(
        delivery_period=r.duration(ref, "delivery_period", rp, defaults.delivery_period),
        ref_quantization=r.duration(ref, "ref_quantization", rp, defaults.ref_quantization),
        ta_quantization=r.duration(ref, "ta_quantization", rp, defaults.ta_quantization),
        delivery_kind=r.str(ref, "delivery_kind", rp, defaults.delivery_kind),
        ta_residual=r.str(ref, "ta_residual", rp, defaults.ta_residual),
    )
    try:
        ref_time = RadioRefTimeConfig(**ref_kwargs)
    except ValueError as exc:
        msg = str(exc)
        if "ta_quantization" in msg:
            msg = "ta_quantization must be >= 32 ns (the smallest Timing Advance step in 5G NR)"
        r.err(rp, msg)
        ref_time = defaults
    traffic = None
    if d.get("user_traffic") is not None:
        up = f"{p}.user_traffic"
        t = r.obj(d["user_traffic"], up, {"payload_bytes", "period"})
        traffic = UserTraffic(r.int(t, "payload_bytes", up, 50), r.duration(t, "period", up, us(500)))
        if traffic.payload_bytes <= 0 or traffic.period <= 0:
            r.err(up, "payload_bytes and period must be positive")
    tt = r.duration(d, "tt_granularity", p, DEFAULT_GRANULARITY)
    if tt < 1:
        r.err(f"{p}.tt_granularity", "must be >= 1 tick")
    return FiveGConfig(
        gm_drift_ppm=r.ppm(d, "gm_drift_ppm", p, Fraction(0)),
        gm_offset=r.duration(d, "gm_offset", p, 0),
        node_error_bound=r.duration(d, "node_error_bound", p, ns(100)),
        ref_time=ref_time,
        pdu_session_delay=r.delay_spec(d.get("pdu_session_delay"), f"{p}.pdu_session_delay", FiveGConfig.pdu_session_delay),
        tt_granularity=tt,
        user_traffic=traffic,
    )


def _parse_scenario(r: _Reader, raw: Any) -> ScenarioSettings:
    p = "$.scenario"
    d = r.obj(raw, p, _SCEN_FIELDS)
    faults = []
    for i, f in enumerate(r.list(d.get("faults"), f"{p}.faults")):
        fp = f"{p}.faults[{i}]"
        fd = r.obj(f, fp, {"node", "at", "kind"})
        faults.append(
            FaultConfig(
                node=r.str(fd, "node", fp, "", required=True),
                at=r.duration(fd, "at", fp, 0, required=True),
                kind=r.str(fd, "kind", fp, "fail", choices=("fail", "recover")),
            )
        )
    cls = r.int(d, "compliance_class", p, None)
    if cls is not None and cls not in (1, 2, 3):
        r.err(f"{p}.compliance_class", f"must be 1, 2 or 3, got {cls}")
    return ScenarioSettings(
        duration=r.duration(d, "duration", p, seconds(10)),
        seed=r.int(d, "seed", p, 0),
        faults=tuple(faults),
        sampling_period=r.duration(d, "sampling_period", p, ms(25)),
        warmup=r.duration(d, "warmup", p, None),
        compliance_class=cls,
    )


# -- semantic validation -------------------------------------------------------


def validate(cfg: ScenarioConfig) -> list[str]:
    errors: list[str] = []
    e = errors.append
    nodes: dict[str, NodeConfig] = {}
    for n in cfg.nodes:
        if n.id in nodes:
            e(f"node {n.id!r}: duplicate id")
        nodes[n.id] = n
        if n.kind in (UPF, GNB, UE) and (n.drift_ppm or n.offset):
            e(f"node {n.id!r}: a {n.kind} keeps 5GS time; set fiveg_error or fiveg_drift_ppm instead of drift_ppm/offset")
        if n.kind != UE and n.fiveg_drift_ppm:
            e(f"node {n.id!r}: fiveg_drift_ppm only applies to UEs")
        if n.fiveg_error is not None:
            if n.kind not in (UPF, GNB):
                e(f"node {n.id!r}: fiveg_error only applies to UPF and gNB nodes")
            elif cfg.fiveg and abs(n.fiveg_error) > cfg.fiveg.node_error_bound:
                e(f"node {n.id!r}: fiveg_error exceeds node_error_bound")
        if n.residence.min < 0:
            e(f"node {n.id!r}: residence must be >= 0")
    has_5g_nodes = any(n.kind in (UPF, GNB, UE) for n in cfg.nodes)
    if has_5g_nodes and cfg.fiveg is None:
        e("fiveg: section required when the topology has UPF, gNB or UE nodes")

    sessions: dict[str, list[str]] = defaultdict(list)
    radios: dict[str, list[str]] = defaultdict(list)
    for link in cfg.links:
        where = f"link {link.a}--{link.b}"
        ka, kb = (nodes[x].kind if x in nodes else None for x in (link.a, link.b))
        for x in (link.a, link.b):
            if x not in nodes:
                e(f"{where}: unknown node {x!r}")
        if link.a == link.b:
            e(f"{where}: self loop")
        if link.delay < 0 or link.delay_ba < 0:
            e(f"{where}: delay must be >= 0")
        if link.jitter is not None and link.jitter.min < -min(link.delay, link.delay_ba):
            e(f"{where}: jitter lower bound would make the delay negative")
        if ka is None or kb is None:
            continue
        kinds = {ka, kb}
        if link.kind == PDU_SESSION:
            if kinds != {UPF, UE}:
                e(f"{where}: a pdu-session link connects a UPF and a UE")
            else:
                ue = link.a if ka == UE else link.b
                sessions[ue].append(link.b if ue == link.a else link.a)
        elif link.kind == RADIO:
            if kinds != {GNB, UE}:
                e(f"{where}: a radio link connects a gNB and a UE")
            else:
                ue = link.a if ka == UE else link.b
                radios[ue].append(link.b if ue == link.a else link.a)
        elif GNB in kinds:
            e(f"{where}: gNBs carry no wired gPTP traffic")
        elif link.kind == WIRED and kinds == {UPF, UE}:
            e(f"{where}: UPF and UE meet only through a pdu-session link")
    for n in cfg.nodes:
        if n.kind == UE:
            if len(sessions[n.id]) != 1:
                e(f"UE {n.id!r}: needs exactly one pdu-session link to a UPF, has {len(sessions[n.id])}")
            if len(radios[n.id]) != 1:
                e(f"UE {n.id!r}: needs exactly one radio link to a gNB, has {len(radios[n.id])}")

    seen: set[tuple[str, int]] = set()
    working: dict[str, int] = defaultdict(int)
    for d in cfg.domains:
        where = f"domain {d.number} (npn {d.npn!r})"
        if not 0 <= d.number <= MAX_DOMAIN_NUMBER:
            e(f"{where}: number must be in 0..{MAX_DOMAIN_NUMBER}")
        if d.key in seen:
            e(f"{where}: duplicate domain number within the NPN")
        seen.add(d.key)
        if d.clock_class == WORKING:
            working[d.npn] += 1
        for name, v in (("sync_interval", d.sync_interval), ("pdelay_interval", d.pdelay_interval)):
            if v <= 0:
                e(f"{where}: {name} must be > 0")
        if d.pdelay_turnaround < 0:
            e(f"{where}: pdelay_turnaround must be >= 0")
        if d.rate_ratio_window < 0:
            e(f"{where}: rate_ratio_window must be >= 0")
        if d.missed_sync_limit < 1:
            e(f"{where}: missed_sync_limit must be >= 1")
        names = [c.node for c in d.gm_candidates]
        if len(set(names)) != len(names):
            e(f"{where}: duplicate GM candidate")
        if d.fiveg_gm:
            if d.gm_candidates:
                e(f"{where}: fiveg_gm (5GS as grandmaster) conflicts with external GM candidates")
            if cfg.fiveg is None:
                e(f"{where}: fiveg_gm needs a fiveg section")
        elif not d.gm_candidates:
            e(f"{where}: needs at least one GM candidate (or fiveg_gm: true)")
        for c in d.gm_candidates:
            if c.node not in nodes:
                e(f"{where}: unknown GM candidate {c.node!r}")
                continue
            gm = nodes[c.node]
            if gm.npn != d.npn:
                e(f"{where}: GM candidate {c.node!r} belongs to npn {gm.npn!r}")
            if gm.kind in (UPF, GNB):
                e(f"{where}: GM candidate {c.node!r} is a {gm.kind}; use fiveg_gm for the 5GS clock")
    for npn, count in sorted(working.items()):
        if count > MAX_WORKING_DOMAINS:
            e(
                f"npn {npn!r}: {count} working clock domains; the 5G system supports "
                f"at most {MAX_WORKING_DOMAINS} working clock domains per network (3GPP Release 16)"
            )

    if not errors:
        errors.extend(_validate_gm_placement(cfg))
        errors.extend(_validate_reachability(cfg))

    for n in cfg.nodes:
        if n.kind == END_STATION and n.domains is not None:
            own = {d.number for d in cfg.domains if d.npn == n.npn}
            for num in n.domains:
                if num not in own:
                    e(f"node {n.id!r}: subscribed to domain {num}, which npn {n.npn!r} does not have")

    s = cfg.scenario
    if s.duration < 0:
        e("scenario.duration must be >= 0")
    if s.sampling_period <= 0 or s.sampling_period % TICKS_PER_NS:
        e("scenario.sampling_period must be a positive whole number of nanoseconds")
    if s.warmup is not None and (s.warmup < 0 or s.warmup % TICKS_PER_NS):
        e("scenario.warmup must be a non-negative whole number of nanoseconds")
    directives = set()
    for f in s.faults:
        if f.node not in nodes:
            e(f"fault: unknown node {f.node!r}")
        if f.at < 0:
            e(f"fault on {f.node!r}: time must be >= 0")
        key = (f.node, f.at, f.kind)
        if key in directives:
            e(f"fault: duplicate directive {f.kind} {f.node!r} at {format_duration(f.at)}")
        directives.add(key)
    return errors


def device_side(cfg: ScenarioConfig) -> dict[str, str]:
    """Nodes reachable over wired links from a UE without crossing its UPF, mapped to that UE."""
    kinds = {n.id: n.kind for n in cfg.nodes}
    wired = defaultdict(list)
    for link in cfg.links:
        if link.kind == WIRED:
            wired[link.a].append(link.b)
            wired[link.b].append(link.a)
    owner: dict[str, str] = {}
    for ue in sorted(n for n, k in kinds.items() if k == UE):
        queue = deque([ue])
        owner.setdefault(ue, ue)
        while queue:
            x = queue.popleft()
            for y in sorted(wired[x]):
                if y not in owner and kinds.get(y) != UPF:
                    owner[y] = ue
                    queue.append(y)
    return owner


def _validate_gm_placement(cfg: ScenarioConfig) -> list[str]:
    behind = device_side(cfg)
    errors = []
    for d in cfg.domains:
        for c in d.gm_candidates:
            if c.node in behind:
                errors.append(
                    f"domain {d.number}: GM candidate {c.node!r} sits behind UE {behind[c.node]!r}; "
                    "uplink time sync (GM on the UE side) is a 3GPP Release 17 feature and is not supported"
                )
    return errors


def _validate_reachability(cfg: ScenarioConfig) -> list[str]:
    from tsnsync.simcore import build_tree  # local import: simcore imports this module

    errors = []
    for d in cfg.domains:
        roots = _roots(cfg, d)
        reached = set()
        for root in roots:
            tree = build_tree(cfg, d, root)
            reached |= set(tree)
        for n in cfg.nodes:
            if n.kind == END_STATION and n.npn == d.npn and d.number in cfg.subscriptions(n):
                if n.id not in reached:
                    errors.append(f"domain {d.number}: end station {n.id!r} is unreachable from its grandmaster")
    return errors


def _roots(cfg: ScenarioConfig, d: DomainConfig) -> list[str]:
    if d.fiveg_gm:
        return ["5gs"]
    return [c.node for c in d.gm_candidates]


# -- serialization ------------------------------------------------------------


def _ppm(v: Fraction) -> str:
    return format_fraction(v)


def _delay_doc(spec: DelaySpec) -> dict:
    if spec.kind == "constant":
        return {"kind": "constant", "value": format_duration(spec.min)}
    return {"kind": "uniform", "min": format_duration(spec.min), "max": format_duration(spec.max)}


def to_document(cfg: ScenarioConfig) -> dict:
    """Explicit JSON-ready document; parse_config(to_document(c)) == c."""
    nodes = []
    for n in cfg.nodes:
        d = {
            "id": n.id,
            "kind": n.kind,
            "drift_ppm": _ppm(n.drift_ppm),
            "offset": format_duration(n.offset),
            "granularity": format_duration(n.granularity),
            "npn": n.npn,
            "residence": _delay_doc(n.residence),
            "fiveg_drift_ppm": _ppm(n.fiveg_drift_ppm),
        }
        if n.domains is not None:
            d["domains"] = list(n.domains)
        if n.fiveg_error is not None:
            d["fiveg_error"] = format_duration(n.fiveg_error)
        nodes.append(d)
    links = []
    for link in cfg.links:
        d = {"a": link.a, "b": link.b, "kind": link.kind, "delay": format_duration(link.delay)}
        if link.reverse_delay is not None:
            d["reverse_delay"] = format_duration(link.reverse_delay)
        if link.jitter is not None:
            d["jitter"] = _delay_doc(link.jitter)
        links.append(d)
    domains = [
        {
            "number": d.number,
            "class": d.clock_class,
            "npn": d.npn,
            "gm_candidates": [
                {
                    "node": c.node,
                    "priority1": c.priority1,
                    "clock_quality": c.clock_quality,
                    "priority2": c.priority2,
                    "hot_standby": c.hot_standby,
                }
                for c in d.gm_candidates
            ],
            "sync_interval": format_duration(d.sync_interval),
            "pdelay_interval": format_duration(d.pdelay_interval),
            "pdelay_turnaround": format_duration(d.pdelay_turnaround),
            "neighbor_rate_ratio": d.neighbor_rate_ratio,
            "rate_ratio_window": d.rate_ratio_window,
            "missed_sync_limit": d.missed_sync_limit,
            "fiveg_gm": d.fiveg_gm,
        }
        for d in cfg.domains
    ]
    doc: dict[str, Any] = {
        "name": cfg.name,
        "description": cfg.description,
        "topology": {"nodes": nodes, "links": links},
        "domains": domains,
    }
    if cfg.fiveg is not None:
        f = cfg.fiveg
        doc["fiveg"] = {
            "gm_drift_ppm": _ppm(f.gm_drift_ppm),
            "gm_offset": format_duration(f.gm_offset),
            "node_error_bound": format_duration(f.node_error_bound),
            "ref_time": {
                "delivery_period": format_duration(f.ref_time.delivery_period),
                "ref_quantization": format_duration(f.ref_time.ref_quantization),
                "ta_quantization": format_duration(f.ref_time.ta_quantization),
                "delivery_kind": f.ref_time.delivery_kind,
                "ta_residual": f.ref_time.ta_residual,
            },
            "pdu_session_delay": _delay_doc(f.pdu_session_delay),
            "tt_granularity": format_duration(f.tt_granularity),
        }
        if f.user_traffic is not None:
            doc["fiveg"]["user_traffic"] = {
                "payload_bytes": f.user_traffic.payload_bytes,
                "period": format_duration(f.user_traffic.period),
            }
    s = cfg.scenario
    doc["scenario"] = {
        "duration": format_duration(s.duration),
        "seed": s.seed,
        "faults": [{"node": f.node, "at": format_duration(f.at), "kind": f.kind} for f in s.faults],
        "sampling_period": format_duration(s.sampling_period),
        "warmup": None if s.warmup is None else format_duration(s.warmup),
        "compliance_class": s.compliance_class,
    }
    doc["output"] = {"directory": cfg.output.directory, "formats": list(cfg.output.formats)}
    return doc


def dumps(cfg: ScenarioConfig) -> str:
    return json.dumps(to_document(cfg), indent=2, ensure_ascii=False) + "\n"


def npn_ids(cfg: ScenarioConfig) -> list[str]:
    ids = {n.npn for n in cfg.nodes if n.kind != GNB} | {d.npn for d in cfg.domains}
    return sorted(ids)
