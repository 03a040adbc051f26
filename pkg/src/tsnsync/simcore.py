"""Deterministic discrete-event engine.

True time drives a single heap of events ordered by (at, seq). Local
clocks are read-only views of true time. Every random draw comes from a
substream keyed by the master seed and a stable entity name, so adding a
node or link never perturbs draws elsewhere.

Each (domain, GM) pair gets its own BFS spanning tree. Bridges forward
on it with residence correction, the UPF stamps TS_i and fans out over
PDU sessions, and the UE egresses immediately with TS_e - TS_i added.
"""

from __future__ import annotations

import hashlib
import heapq
import logging
import math
import random
from collections import Counter, defaultdict, deque
from dataclasses import dataclass, field, replace
from fractions import Fraction
from typing import Any, Iterator

from tsnsync.config import (
    BRIDGE,
    END_STATION,
    GNB,
    PDU_SESSION,
    RADIO,
    UE,
    UPF,
    WIRED,
    ConfigError,
    DomainConfig,
    LinkConfig,
    NodeConfig,
    ScenarioConfig,
)
from tsnsync.fiveg import (
    FiveGSystemClock,
    NpnContext,
    ProtocolViolation,
    Ue5gClockState,
    deliver_ref_time,
    ds_tt_egress,
    emit_5gs_gm_sync,
    nw_tt_ingress,
    route_pdu,
    ue_5g_clock,
)
from tsnsync.gptp import (
    SLAVE,
    DomainId,
    DomainState,
    GmCandidate,
    NodeState,
    NoGrandmaster,
    PdelayExchange,
    SyncPdu,
    build_forwarded_sync,
    compute_residence,
    failover,
    measure_link_delay,
    process_sync_ingress,
    select_domain,
)
from tsnsync.timebase import ClockModel, read_local, to_true

log = logging.getLogger(__name__)

FIVEG_GM = "5gs"

PDU_ARRIVAL = "pdu-arrival"
PDU_EGRESS = "pdu-egress"
SYNC_EMIT = "sync-emit"
PDELAY_ROUND = "pdelay-round"
REF_TIME_DELIVERY = "ref-time-delivery"
NODE_FAIL = "node-fail"
NODE_RECOVER = "node-recover"
MEASUREMENT_SAMPLE = "measurement-sample"
EVENT_KINDS = (
    PDU_ARRIVAL, PDU_EGRESS, SYNC_EMIT, PDELAY_ROUND, REF_TIME_DELIVERY,
    NODE_FAIL, NODE_RECOVER, MEASUREMENT_SAMPLE,
)


class EngineError(RuntimeError):
    """A handler failed; the message names the event kind, node and time."""


@dataclass(order=True)
class Event:
    at: int
    seq: int
    kind: str = field(compare=False)
    payload: tuple = field(compare=False, default=())


class EventQueue:
    def __init__(self) -> None:
        self._heap: list[Event] = []
        self._seq = 0
        self.now = 0

    def __len__(self) -> int:
        return len(self._heap)

    def schedule(self, at: int, kind: str, payload: tuple = ()) -> Event:
        if at < self.now:
            raise EngineError(f"{kind} scheduled at {at}, before current time {self.now}")
        ev = Event(at, self._seq, kind, payload)
        self._seq += 1
        heapq.heappush(self._heap, ev)
        return ev

    def peek(self) -> Event | None:
        return self._heap[0] if self._heap else None

    def pop(self) -> Event:
        ev = heapq.heappop(self._heap)
        self.now = ev.at
        return ev

    def pending(self) -> list[Event]:
        return sorted(self._heap)


def schedule(queue: EventQueue, event_at: int, kind: str, payload: tuple = ()) -> Event:
    return queue.schedule(event_at, kind, payload)


def substream(seed: int, *parts: Any) -> random.Random:
    key = ":".join([str(seed), *map(str, parts)]).encode()
    return random.Random(int.from_bytes(hashlib.sha256(key).digest()[:8], "big"))


@dataclass
class Link:
    """Runtime link: one delay per direction plus uniform jitter, each direction its own RNG."""

    cfg: LinkConfig
    rngs: dict[str, random.Random]

    @property
    def a(self) -> str:
        return self.cfg.a

    @property
    def b(self) -> str:
        return self.cfg.b

    @property
    def kind(self) -> str:
        return self.cfg.kind

    def other(self, node: str) -> str:
        return self.b if node == self.a else self.a

    def base_delay(self, src: str) -> int:
        return self.cfg.delay if src == self.a else self.cfg.delay_ba

    def draw_delay(self, src: str) -> int:
        delay = self.base_delay(src)
        j = self.cfg.jitter
        if j is not None:
            delay += self.rngs[src].randint(j.min, j.max)
        return max(delay, 0)


def transmit(queue: EventQueue, link: Link, src: str, now: int, payload: tuple) -> Event:
    """Arrival event at now + base delay + jitter draw from the link's own substream."""
    return queue.schedule(now + link.draw_delay(src), PDU_ARRIVAL, payload)


@dataclass
class Trace:
    """Everything a run records. Plain data; equal runs compare equal."""

    t_end: int = 0
    # (t, node, domain, offset ticks)
    samples: list[tuple[int, str, int, int]] = field(default_factory=list)
    # (t, ue, 5GS time error ticks)
    ue_samples: list[tuple[int, str, int]] = field(default_factory=list)
    # (t, ue, est_5g_offset, quantization error, TA residual)
    deliveries: list[tuple[int, str, int, int, int]] = field(default_factory=list)
    # (t, end station, domain, gm, seq, origin, correction)
    sync_log: list[tuple[int, str, int, str, int, int, int]] = field(default_factory=list)
    # (t, node, domain, valid)
    validity: list[tuple[int, str, int, bool]] = field(default_factory=list)
    # (t, npn, domain, old gm, new gm or None)
    failovers: list[tuple[int, str, int, str, str | None]] = field(default_factory=list)
    faults: list[tuple[int, str, str]] = field(default_factory=list)
    # (t, ue, measured 5GS residence minus true 5G-GM elapsed)
    residence_errors: list[tuple[int, str, int]] = field(default_factory=list)
    # per UPF/gNB deviation from the 5G GM drawn for this run
    fiveg_errors: dict[str, int] = field(default_factory=dict)
    counters: dict[str, int] = field(default_factory=dict)
    # "npn/domain" -> sent / accepted / dropped / in_flight
    pdu_accounting: dict[str, dict[str, int]] = field(default_factory=dict)


@dataclass
class NodeRuntime:
    cfg: NodeConfig
    state: NodeState
    residence_rng: random.Random
    alive: bool = True

    @property
    def id(self) -> str:
        return self.cfg.id

    @property
    def kind(self) -> str:
        return self.cfg.kind


@dataclass
class DomainRuntime:
    cfg: DomainConfig
    did: DomainId
    bmca: DomainState | None
    # gm -> node -> [(child, link)]
    children: dict[str, dict[str, list[tuple[str, Link]]]] = field(default_factory=dict)
    parents: dict[str, dict[str, str | None]] = field(default_factory=dict)
    seq: Counter = field(default_factory=Counter)
    next_local: dict[str, int] = field(default_factory=dict)
    emitting: set = field(default_factory=set)
    acct: Counter = field(default_factory=Counter)

    @property
    def key(self) -> tuple[str, int]:
        return self.cfg.key

    @property
    def label(self) -> str:
        return f"{self.cfg.npn}/{self.cfg.number}"

    @property
    def current_gm(self) -> str | None:
        return FIVEG_GM if self.bmca is None else self.bmca.gm


def build_tree(cfg: ScenarioConfig, domain: DomainConfig, root: str) -> dict[str, str | None]:
    """child -> parent map of the BFS spanning tree of one (domain, GM) stream.

    End stations only forward when they are the root. With root "5gs"
    the UPF and every UE of the NPN are roots of a wired-only forest.
    """
    return _tree(cfg, domain, root)[0]


def _tree(cfg: ScenarioConfig, domain: DomainConfig, root: str):
    nodes = cfg.node_map
    adj: dict[str, list[tuple[str, int]]] = defaultdict(list)
    for i, link in enumerate(cfg.links):
        adj[link.a].append((link.b, i))
        adj[link.b].append((link.a, i))
    for v in adj.values():
        v.sort()

    parent: dict[str, str | None] = {}
    edges: dict[str, list[tuple[str, int]]] = defaultdict(list)
    queue: deque[str] = deque()
    if root == FIVEG_GM:
        parent[FIVEG_GM] = None
        tts = sorted(n.id for n in cfg.nodes if n.kind in (UPF, UE) and n.npn == domain.npn)
        for tt in tts:
            parent[tt] = FIVEG_GM
            edges[FIVEG_GM].append((tt, -1))
            queue.append(tt)
        fiveg_merged = True
    else:
        if root not in nodes:
            return parent, edges
        parent[root] = None
        queue.append(root)
        fiveg_merged = False
    while queue:
        x = queue.popleft()
        kx = nodes[x].kind
        if kx == END_STATION and parent[x] is not None:
            continue
        for y, i in adj[x]:
            if y in parent:
                continue
            link = cfg.links[i]
            ky = nodes[y].kind
            if link.kind == WIRED:
                if nodes[y].npn != domain.npn or ky == GNB:
                    continue
            elif link.kind == PDU_SESSION:
                # downlink only; NPN membership is enforced by the UPF at runtime
                if fiveg_merged or kx != UPF:
                    continue
            else:
                continue
            parent[y] = x
            edges[x].append((y, i))
            queue.append(y)
    return parent, edges


def _stream_roots(domain: DomainConfig) -> list[str]:
    return [FIVEG_GM] if domain.fiveg_gm else [c.node for c in domain.gm_candidates]


class Simulation:
    """One scenario's engine state. Single-threaded; share nothing across instances."""

    def __init__(self, config: ScenarioConfig, seed: int | None = None):
        self.config = config
        self.seed = config.scenario.seed if seed is None else seed
        self.queue = EventQueue()
        self.trace = Trace()
        self.counters: Counter = Counter()
        self._fault_keys: set[tuple[str, int, str]] = set()
        self._valid: dict[tuple[str, int], bool] = {}
        self._pdelay_prev: dict[tuple[str, str], tuple[int, int]] = {}

        self.nodes: dict[str, NodeRuntime] = {}
        for n in config.nodes:
            clock = ClockModel(n.offset, n.drift_ppm, n.granularity)
            self.nodes[n.id] = NodeRuntime(n, NodeState(n.id, clock), substream(self.seed, "residence", n.id))
        self.links = [
            Link(l, {l.a: substream(self.seed, "link", l.id, l.a), l.b: substream(self.seed, "link", l.id, l.b)})
            for l in config.links
        ]
        self._wired_ports()
        self._pdelay_cfg = [self._pdelay_params(link) for link in self.links]
        self._setup_fiveg()
        self._setup_domains()
        self._schedule_initial()

    # -- construction ------------------------------------------------------------

    def _wired_ports(self) -> None:
        for link in self.links:
            if link.kind == WIRED:
                self.nodes[link.a].state.port_for(0, None, link.b)
                self.nodes[link.b].state.port_for(0, None, link.a)

    def _setup_fiveg(self) -> None:
        f = self.config.fiveg
        self.fg: FiveGSystemClock | None = None
        self.ue_gnb: dict[str, tuple[str, int]] = {}
        self.ue_clock: dict[str, ClockModel] = {}
        self.ue_state: dict[str, Ue5gClockState] = {}
        self.npn_ctx: dict[str, NpnContext] = {}
        self._ta_rng: dict[str, random.Random] = {}
        if f is None:
            return
        errors = {}
        for n in self.config.nodes:
            if n.kind in (UPF, GNB):
                if n.fiveg_error is not None:
                    errors[n.id] = n.fiveg_error
                else:
                    b = f.node_error_bound
                    errors[n.id] = substream(self.seed, "fiveg-error", n.id).randint(-b, b)
        self.fg = FiveGSystemClock(ClockModel(f.gm_offset, f.gm_drift_ppm), errors, f.node_error_bound)
        self.trace.fiveg_errors = dict(sorted(errors.items()))
        for link in self.links:
            if link.kind == RADIO:
                ue, gnb = (link.a, link.b) if self.nodes[link.a].kind == UE else (link.b, link.a)
                self.ue_gnb[ue] = (gnb, link.cfg.delay)
        for ue in sorted(self.ue_gnb):
            self._ta_rng[ue] = substream(self.seed, "ta", ue)
            self._apply_delivery(Ue5gClockState(ue))
        by_npn: dict[str, dict[str, set]] = defaultdict(lambda: {"ues": set(), "upfs": set(), "domains": set()})
        for n in self.config.nodes:
            if n.kind == UE:
                by_npn[n.npn]["ues"].add(n.id)
            elif n.kind == UPF:
                by_npn[n.npn]["upfs"].add(n.id)
        for d in self.config.domains:
            by_npn[d.npn]["domains"].add(d.number)
        for npn, m in by_npn.items():
            self.npn_ctx[npn] = NpnContext(npn, frozenset(m["ues"]), frozenset(m["upfs"]), frozenset(m["domains"]))

    def _apply_delivery(self, state: Ue5gClockState) -> None:
        ue = self.nodes[state.ue].cfg
        self.ue_state[ue.id] = state
        self.ue_clock[ue.id] = ue_5g_clock(state, self.fg, ue.fiveg_drift_ppm, self.config.fiveg.tt_granularity)

    def _setup_domains(self) -> None:
        self.domains: dict[tuple[str, int], DomainRuntime] = {}
        self.sampled: list[tuple[str, int]] = []
        for d in self.config.domains:
            did = DomainId(d.number, d.clock_class)
            bmca = None
            if not d.fiveg_gm:
                cands = [
                    GmCandidate(c.node, c.priority1, c.clock_quality, c.priority2, c.hot_standby)
                    for c in d.gm_candidates
                ]
                bmca = DomainState(did, cands)
            dom = DomainRuntime(d, did, bmca)
            for root in _stream_roots(d):
                parent, edges = _tree(self.config, d, root)
                dom.parents[root] = parent
                dom.children[root] = {x: [(y, self.links[i] if i >= 0 else None) for y, i in ys] for x, ys in edges.items()}
                for child, up in parent.items():
                    if up is not None and child in self.nodes:
                        self.nodes[child].state.slave_port[(d.number, root)] = up
            self.domains[d.key] = dom
            gm = dom.current_gm
            candidates = {c.node for c in d.gm_candidates}
            for n in self.config.nodes:
                if n.npn != d.npn or n.kind != END_STATION:
                    continue
                n_state = self.nodes[n.id].state
                n_state.selected[d.number] = gm
                if d.number in self.config.subscriptions(n) and n.id not in candidates:
                    n_state.rate_window[d.number] = d.rate_ratio_window
                    self.sampled.append((n.id, d.number))
                    self._valid[(n.id, d.number)] = False
        self.sampled.sort()

    def _pdelay_params(self, link: Link) -> tuple[int, int, bool]:
        npn = self.nodes[link.a].cfg.npn
        doms = [d for d in self.config.domains if d.npn == npn] or [DomainConfig(0)]
        fastest = min(doms, key=lambda d: (d.pdelay_interval, d.number))
        estimate = any(d.neighbor_rate_ratio == "estimate" for d in doms)
        return fastest.pdelay_interval, fastest.pdelay_turnaround, estimate

    def _schedule_initial(self) -> None:
        q = self.queue
        if self.fg is not None:
            period = self.config.fiveg.ref_time.delivery_period
            for gnb in sorted({g for g, _ in self.ue_gnb.values()}):
                q.schedule(0, REF_TIME_DELIVERY, (gnb, period))
        for i, link in enumerate(self.links):
            if link.kind == WIRED:
                q.schedule(0, PDELAY_ROUND, (i, link.a, "request"))
                q.schedule(0, PDELAY_ROUND, (i, link.b, "request"))
        for key in sorted(self.domains):
            dom = self.domains[key]
            if dom.bmca is None:
                self._start_stream(dom, FIVEG_GM, 0)
                continue
            for c in dom.bmca.candidates:
                if c.node == dom.bmca.gm or c.is_hot_standby:
                    self._start_stream(dom, c.node, 0)
        for f in self.config.scenario.faults:
            self.inject_fault(f.node, f.at, f.kind)
        if self.sampled or self.ue_gnb:
            q.schedule(0, MEASUREMENT_SAMPLE, (self.config.scenario.sampling_period,))

    # -- public API ----------------------------------------------------------------

    def clock(self, node: str) -> ClockModel:
        """Clock a node timestamps with: its own oscillator, or 5GS time for TTs."""
        rt = self.nodes[node]
        if rt.kind == UE and node in self.ue_clock:
            return self.ue_clock[node]
        if rt.kind == UPF and self.fg is not None:
            return self.fg.node_clock(node, self.config.fiveg.tt_granularity)
        return rt.state.clock

    def reference_time(self, gm: str, t: int) -> int:
        if gm == FIVEG_GM:
            return self.fg.gm_time(t)
        return self.nodes[gm].state.clock.floor_ticks(t)

    def inject_fault(self, node: str, at: int, kind: str) -> None:
        if node not in self.nodes:
            raise ConfigError([f"fault: unknown node {node!r}"])
        if kind not in ("fail", "recover"):
            raise ConfigError([f"fault: kind must be fail|recover, got {kind!r}"])
        key = (node, at, kind)
        if key in self._fault_keys:
            raise ConfigError([f"fault: duplicate directive {kind} {node!r} at {at}"])
        self._fault_keys.add(key)
        self.queue.schedule(at, NODE_FAIL if kind == "fail" else NODE_RECOVER, (node,))

    def run_until(self, t_end: int) -> Trace:
        q = self.queue
        while (ev := q.peek()) is not None and ev.at <= t_end:
            q.pop()
            try:
                self._dispatch(ev)
            except (EngineError, ConfigError):
                raise
            except Exception as exc:
                node = ev.payload[1] if ev.kind == PDU_ARRIVAL else (ev.payload[0] if ev.payload else "-")
                raise EngineError(f"{ev.kind} handler failed at t={ev.at} (node {node}): {exc}") from exc
        q.now = max(q.now, t_end)
        self._finish(t_end)
        return self.trace

    def run(self) -> Trace:
        return self.run_until(self.config.scenario.duration)

    def offsets_at(self, t: int) -> list[tuple[int, str, int, int]]:
        """True offsets of every valid sampled (node, domain) at the current time t."""
        out = []
        for node_id, dnum in self.sampled:
            rt = self.nodes[node_id]
            if not rt.alive:
                continue
            st = rt.state.selected_state(dnum)
            if not self._stream_fresh(node_id, dnum, t):
                continue
            est = st.gm_time_at(read_local(rt.state.clock, t))
            out.append((t, node_id, dnum, est - self.reference_time(st.gm, t)))
        return out

    # -- dispatch --------------------------------------------------------------------

    def _dispatch(self, ev: Event) -> None:
        handler = {
            PDU_ARRIVAL: self._on_arrival,
            PDU_EGRESS: self._on_egress,
            SYNC_EMIT: self._on_emit,
            PDELAY_ROUND: self._on_pdelay,
            REF_TIME_DELIVERY: self._on_delivery,
            NODE_FAIL: self._on_fail,
            NODE_RECOVER: self._on_recover,
            MEASUREMENT_SAMPLE: self._on_sample,
        }[ev.kind]
        handler(ev.at, *ev.payload)

    # -- sync emission and failover ------------------------------------------------------

    def _start_stream(self, dom: DomainRuntime, gm: str, now: int, delay: int = 0) -> None:
        """First emission `delay` after `now` on the emitter's local clock."""
        if gm in dom.emitting:
            return
        clock = self.fg.gm_clock if gm == FIVEG_GM else self.nodes[gm].state.clock
        local = math.ceil(clock.exact(now)) + delay
        dom.emitting.add(gm)
        dom.next_local[gm] = local
        self.queue.schedule(max(to_true(clock, local), now), SYNC_EMIT, (dom.key, gm))

    def _reschedule_emit(self, dom: DomainRuntime, gm: str, now: int) -> None:
        clock = self.fg.gm_clock if gm == FIVEG_GM else self.nodes[gm].state.clock
        dom.next_local[gm] += dom.cfg.sync_interval
        self.queue.schedule(max(to_true(clock, dom.next_local[gm]), now), SYNC_EMIT, (dom.key, gm))

    def _on_emit(self, now: int, dkey, gm: str) -> None:
        dom = self.domains[dkey]
        if gm == FIVEG_GM:
            dom.seq[gm] += 1
            for tt, _ in dom.children[FIVEG_GM].get(FIVEG_GM, []):
                if not self.nodes[tt].alive:
                    continue
                pdu = emit_5gs_gm_sync(
                    self.fg, dom.did, now, sequence_id=dom.seq[gm], src_node=tt, edge_clock=self.clock(tt)
                )
                self.counters["sync_emitted"] += 1
                self._send(dom, gm, tt, pdu, None)
            self._reschedule_emit(dom, gm, now)
            return
        rt = self.nodes[gm]
        cand = dom.bmca.candidate(gm)
        if not rt.alive:
            if dom.bmca.gm == gm:
                self._failover(dom, gm, now)
        elif dom.bmca.gm == gm or cand.is_hot_standby:
            dom.seq[gm] += 1
            pdu = SyncPdu(dom.did, read_local(rt.state.clock, now), 0, dom.seq[gm], gm, gm)
            self.counters["sync_emitted"] += 1
            self._send(dom, gm, gm, pdu, now)
        if dom.bmca.gm == gm or cand.is_hot_standby:
            self._reschedule_emit(dom, gm, now)
        else:
            dom.emitting.discard(gm)

    def _failover(self, dom: DomainRuntime, failed: str, now: int) -> None:
        try:
            new = failover(dom.bmca, failed, now)
        except NoGrandmaster:
            log.warning("domain %s: no grandmaster left at t=%d", dom.label, now)
            self.counters["no_grandmaster"] += 1
            self.trace.failovers.append((now, dom.cfg.npn, dom.cfg.number, failed, None))
            return
        log.info("domain %s: failover %s -> %s at t=%d", dom.label, failed, new, now)
        self.trace.failovers.append((now, dom.cfg.npn, dom.cfg.number, failed, new))
        if new not in dom.emitting:
            # cold standby starts its own Sync schedule one interval after election
            self._start_stream(dom, new, now, dom.cfg.sync_interval)
        for n in self.nodes.values():
            if n.cfg.npn == dom.cfg.npn and dom.cfg.number in n.state.selected:
                n.state.selected[dom.cfg.number] = new
        for node_id, dnum in self.sampled:
            if dnum == dom.cfg.number and self.nodes[node_id].cfg.npn == dom.cfg.npn:
                self._set_validity(node_id, dnum, self._stream_fresh(node_id, dnum, now), now)

    # -- PDU transport -------------------------------------------------------------------

    def _send(self, dom: DomainRuntime, gm: str, src: str, pdu: SyncPdu, ingress_5g: int | None) -> None:
        for child, link in dom.children[gm].get(src, []):
            self._transmit(dom, gm, src, child, link, pdu, ingress_5g)

    def _transmit(self, dom, gm, src, child, link, pdu, ingress_5g) -> None:
        dom.acct["sent"] += 1
        if not self.nodes[child].alive:
            dom.acct["dropped"] += 1
            self.counters["loss_failed_endpoint"] += 1
            link.draw_delay(src)  # keep the link's substream aligned with the no-fault run
            return
        transmit(self.queue, link, src, self.queue.now, (dom.key, child, src, gm, pdu, ingress_5g))

    def _drop(self, dom: DomainRuntime, reason: str) -> None:
        dom.acct["dropped"] += 1
        self.counters[reason] += 1

    def _on_arrival(self, now: int, dkey, node_id: str, src: str, gm: str, pdu: SyncPdu, ingress_5g) -> None:
        dom = self.domains[dkey]
        rt = self.nodes[node_id]
        if not rt.alive:
            return self._drop(dom, "loss_failed_endpoint")
        if rt.kind == UE:
            return self._ds_tt(now, dom, rt, gm, pdu, ingress_5g)
        dnum = dom.cfg.number
        if rt.kind == END_STATION and not select_domain((pdu,), dnum if dnum in self.config.subscriptions(rt.cfg) else -1):
            return self._drop(dom, "domain_filtered")
        port = rt.state.port_for(dnum, gm, src)
        if port.role != SLAVE:
            return self._drop(dom, "sync_on_master_port")
        if port.neighbor_delay is None:
            return self._drop(dom, "sync_not_ready")
        if rt.kind == UPF:
            return self._nw_tt(now, dom, rt, gm, pdu, port.neighbor_delay)
        ingress_local = read_local(self.clock(node_id), now)
        state = process_sync_ingress(rt.state, pdu, ingress_local, port, now)
        if state is None:
            return self._drop(dom, "stale_sync")
        dom.acct["accepted"] += 1
        if rt.kind == END_STATION:
            self.trace.sync_log.append((now, node_id, dnum, gm, pdu.sequence_id, pdu.origin_ts, pdu.correction))
            if rt.state.selected.get(dnum) == gm and (node_id, dnum) in self._valid:
                self._set_validity(node_id, dnum, True, now)
        elif rt.kind == BRIDGE and dom.children[gm].get(node_id):
            res = rt.cfg.residence
            dwell = res.min if res.min == res.max else rt.residence_rng.randint(res.min, res.max)
            self.queue.schedule(now + dwell, PDU_EGRESS, (dkey, node_id, gm, pdu, ingress_local, port.neighbor_delay))

    def _on_egress(self, now: int, dkey, node_id: str, gm: str, pdu: SyncPdu, ingress_local: int, up_delay: int) -> None:
        dom = self.domains[dkey]
        if not self.nodes[node_id].alive:
            self.counters["lost_in_residence"] += 1
            return
        residence = compute_residence(ingress_local, read_local(self.clock(node_id), now))
        self._send(dom, gm, node_id, build_forwarded_sync(pdu, residence, up_delay, src_node=node_id), None)

    def _nw_tt(self, now: int, dom: DomainRuntime, rt: NodeRuntime, gm: str, pdu: SyncPdu, up_delay: int) -> None:
        key = (dom.cfg.number, gm)
        last = rt.state.last_seq.get(key)
        if last is not None and pdu.sequence_id <= last:
            return self._drop(dom, "stale_sync")
        try:
            stamped = nw_tt_ingress(
                build_forwarded_sync(pdu, 0, up_delay, src_node=rt.id), read_local(self.clock(rt.id), now)
            )
        except ProtocolViolation:
            return self._drop(dom, "protocol_violation")
        rt.state.last_seq[key] = pdu.sequence_id
        dom.acct["accepted"] += 1
        ctx = self.npn_ctx.get(rt.cfg.npn, NpnContext(rt.cfg.npn))
        for child, link in dom.children[gm].get(rt.id, []):
            if link.kind == PDU_SESSION:
                if route_pdu(ctx, stamped, child, self.counters):
                    self._transmit(dom, gm, rt.id, child, link, stamped, now)
            else:
                self._transmit(dom, gm, rt.id, child, link, build_forwarded_sync(pdu, 0, up_delay, rt.id), None)

    def _ds_tt(self, now: int, dom: DomainRuntime, rt: NodeRuntime, gm: str, pdu: SyncPdu, ingress_5g) -> None:
        if rt.cfg.npn != dom.cfg.npn:
            return self._drop(dom, "isolation_violation")
        tse = read_local(self.clock(rt.id), now)
        try:
            out = ds_tt_egress(pdu, tse, self.counters)
        except ProtocolViolation:
            return self._drop(dom, "protocol_violation")
        dom.acct["accepted"] += 1
        truth = self.fg.gm_time(now) - self.fg.gm_time(ingress_5g)
        self.trace.residence_errors.append((now, rt.id, (tse - pdu.embedded_tsi) - truth))
        self._send(dom, gm, rt.id, replace(out, src_node=rt.id), None)

    # -- peer delay ------------------------------------------------------------------------

    def _on_pdelay(self, now: int, link_idx: int, requester: str, phase: str, *stamps) -> None:
        link = self.links[link_idx]
        responder = link.other(requester)
        interval, turnaround, estimate = self._pdelay_cfg[link_idx]
        req, resp = self.nodes[requester], self.nodes[responder]
        if phase == "request":
            self.queue.schedule(now + interval, PDELAY_ROUND, (link_idx, requester, "request"))
            if not req.alive:
                return
            t1 = read_local(self.clock(requester), now)
            self.queue.schedule(now + link.draw_delay(requester), PDELAY_ROUND, (link_idx, requester, "respond", t1))
        elif phase == "respond":
            if not resp.alive:
                self.counters["pdelay_lost"] += 1
                return
            t2 = read_local(self.clock(responder), now)
            self.queue.schedule(now + turnaround, PDELAY_ROUND, (link_idx, requester, "reply", *stamps, t2))
        elif phase == "reply":
            if not resp.alive:
                self.counters["pdelay_lost"] += 1
                return
            t3 = read_local(self.clock(responder), now)
            self.queue.schedule(now + link.draw_delay(responder), PDELAY_ROUND, (link_idx, requester, "complete", *stamps, t3))
        else:
            if not req.alive:
                self.counters["pdelay_lost"] += 1
                return
            t1, t2, t3 = stamps
            t4 = read_local(self.clock(requester), now)
            port = req.state.ports[responder]
            ratio = Fraction(1)
            prev = self._pdelay_prev.get((requester, responder))
            if estimate and prev is not None and t3 > prev[0]:
                ratio = Fraction(t4 - prev[1], t3 - prev[0])
                port.neighbor_rate_ratio = ratio
            self._pdelay_prev[(requester, responder)] = (t3, t4)
            try:
                x = PdelayExchange(t1, t2, t3, t4, ratio)
            except ValueError:
                # a TT clock stepped backwards mid-exchange (reference-time delivery)
                self.counters["measurement_anomaly"] += 1
                return
            port.neighbor_delay = measure_link_delay(x, self.counters)

    # -- 5GS reference time ---------------------------------------------------------------------

    def _on_delivery(self, now: int, gnb: str, period: int) -> None:
        self.queue.schedule(now + period, REF_TIME_DELIVERY, (gnb, period))
        if not self.nodes[gnb].alive:
            return
        cfg = self.config.fiveg.ref_time
        err = self.fg.per_node_error[gnb]
        for ue, (g, prop) in sorted(self.ue_gnb.items()):
            if g != gnb or not self.nodes[ue].alive:
                continue
            state = deliver_ref_time(cfg, err, prop, self._ta_rng[ue], ue=ue, at=now, gm_time=self.fg.gm_time(now))
            self._apply_delivery(state)
            self.trace.deliveries.append((now, ue, state.est_5g_offset, state.quantization_error, state.ta_residual))

    # -- faults ---------------------------------------------------------------------------------

    def _on_fail(self, now: int, node: str) -> None:
        self.nodes[node].alive = False
        self.trace.faults.append((now, node, "fail"))
        for dom in self.domains.values():
            if dom.bmca is not None and dom.bmca.candidate(node) is not None and dom.bmca.gm != node:
                dom.bmca.failed.add(node)
        for node_id, dnum in self.sampled:
            if node_id == node:
                self._set_validity(node_id, dnum, False, now)

    def _on_recover(self, now: int, node: str) -> None:
        self.nodes[node].alive = True
        self.trace.faults.append((now, node, "recover"))
        for dom in self.domains.values():
            if dom.bmca is not None:
                dom.bmca.failed.discard(node)

    # -- measurement ------------------------------------------------------------------------------

    def _stream_fresh(self, node_id: str, dnum: int, now: int) -> bool:
        st = self.nodes[node_id].state.selected_state(dnum)
        if st is None or not st.valid:
            return False
        dom = self.domains[(self.nodes[node_id].cfg.npn, dnum)]
        return now - st.last_update <= dom.cfg.missed_sync_limit * dom.cfg.sync_interval

    def _set_validity(self, node_id: str, dnum: int, valid: bool, at: int) -> None:
        key = (node_id, dnum)
        if self._valid.get(key) != valid:
            self._valid[key] = valid
            self.trace.validity.append((at, node_id, dnum, valid))

    def _on_sample(self, now: int, period: int) -> None:
        self.queue.schedule(now + period, MEASUREMENT_SAMPLE, (period,))
        for node_id, dnum in self.sampled:
            if self.nodes[node_id].alive and self._valid.get((node_id, dnum)) and not self._stream_fresh(node_id, dnum, now):
                st = self.nodes[node_id].state.selected_state(dnum)
                dom = self.domains[(self.nodes[node_id].cfg.npn, dnum)]
                expired = now if st is None else st.last_update + dom.cfg.missed_sync_limit * dom.cfg.sync_interval + 1
                self._set_validity(node_id, dnum, False, min(expired, now))
        self.trace.samples.extend(self.offsets_at(now))
        for ue in sorted(self.ue_clock):
            if self.nodes[ue].alive:
                self.trace.ue_samples.append((now, ue, self.ue_clock[ue].floor_ticks(now) - self.fg.gm_time(now)))

    def _finish(self, t_end: int) -> None:
        self.trace.t_end = t_end
        in_flight = Counter()
        for ev in self.queue.pending():
            if ev.kind == PDU_ARRIVAL:
                in_flight[ev.payload[0]] += 1
        self.trace.pdu_accounting = {
            dom.label: {
                "sent": dom.acct["sent"],
                "accepted": dom.acct["accepted"],
                "dropped": dom.acct["dropped"],
                "in_flight": in_flight[key],
            }
            for key, dom in sorted(self.domains.items())
        }
        merged = Counter(self.counters)
        for n in self.nodes.values():
            merged.update(n.state.counters)
        self.trace.counters = dict(sorted(merged.items()))


def run_until(sim: Simulation, t_end: int) -> Trace:
    return sim.run_until(t_end)


def inject_fault(sim: Simulation, node: str, at: int, kind: str) -> None:
    sim.inject_fault(node, at, kind)


def simulate(config: ScenarioConfig, seed: int | None = None, duration: int | None = None) -> Trace:
    sim = Simulation(config, seed)
    return sim.run_until(config.scenario.duration if duration is None else duration)


def iter_events(sim: Simulation) -> Iterator[Event]:
    """Pop and dispatch events one at a time (for tests that watch ordering)."""
    q = sim.queue
    while q.peek() is not None:
        ev = q.pop()
        sim._dispatch(ev)
        yield ev
