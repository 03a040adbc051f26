"""gPTP time-aware-system behaviour.

Sync and Follow_Up are collapsed into one `SyncPdu` carrying the GM origin
timestamp and the cumulative correction. A bridge that receives a Sync on
its slave port:

1. reads its local clock at ingress,
2. uses the peer-delay estimate of that port,
3. derives GM time at ingress and records its offset to the GM,
4. measures its residence time on its own clock at egress,
5. forwards the PDU with correction += upstream link delay + residence.

GM election is a lexicographic comparison of priority tuples, not the full
802.1AS announce machinery.
"""

from __future__ import annotations

import logging
from collections import Counter
from dataclasses import dataclass, field, replace
from fractions import Fraction
from typing import Hashable, Iterable, Sequence

from tsnsync.timebase import ClockModel, TickDuration, Timestamp

log = logging.getLogger(__name__)

NodeId = Hashable

MAX_DOMAIN_NUMBER = 127
MAX_WORKING_DOMAINS = 32
SYNC_PDU_BYTES = 50
MSGS_PER_SYNC = 2  # Sync + Follow_Up, kept for overhead accounting

WORKING = "working"
UNIVERSAL = "universal"

MASTER = "master"
SLAVE = "slave"
PASSIVE = "passive"
DISABLED = "disabled"


class NoGrandmaster(RuntimeError):
    """No GM-capable candidate is left in a domain."""


class SimulationOrderError(RuntimeError):
    """Egress stamped before ingress on the same clock; an engine bug."""


@dataclass(frozen=True, order=True)
class DomainId:
    number: int
    clock_class: str = WORKING

    def __post_init__(self) -> None:
        if not 0 <= self.number <= MAX_DOMAIN_NUMBER:
            raise ValueError(f"domain number must be in 0..{MAX_DOMAIN_NUMBER}, got {self.number}")
        if self.clock_class not in (WORKING, UNIVERSAL):
            raise ValueError(f"domain class must be working|universal, got {self.clock_class!r}")


@dataclass(frozen=True)
class SyncPdu:
    domain: DomainId
    origin_ts: Timestamp
    correction: TickDuration
    sequence_id: int
    gm: NodeId
    src_node: NodeId
    embedded_tsi: Timestamp | None = None
    size_bytes: int = SYNC_PDU_BYTES


@dataclass(frozen=True)
class PdelayExchange:
    """Four peer-delay timestamps; t1/t4 on the requester clock, t2/t3 on the responder."""

    t1: Timestamp
    t2: Timestamp
    t3: Timestamp
    t4: Timestamp
    neighbor_rate_ratio: Fraction = Fraction(1)

    def __post_init__(self) -> None:
        if self.t3 < self.t2:
            raise ValueError(f"responder turnaround is negative: t2={self.t2} t3={self.t3}")
        if self.t4 < self.t1:
            raise ValueError(f"requester round trip is negative: t1={self.t1} t4={self.t4}")


@dataclass
class PortState:
    peer: NodeId
    role: str = MASTER
    neighbor_delay: TickDuration | None = None
    neighbor_rate_ratio: Fraction = Fraction(1)


@dataclass(frozen=True)
class ClockSlaveState:
    """What a slave knows about one GM stream of one domain.

    `gm_offset_estimate` is local clock minus GM time at the last Sync
    ingress. When a rate ratio is available the GM time at a later local
    reading L is extrapolated as gm_time + rate_ratio * (L - ingress_local).
    """

    domain: DomainId
    gm: NodeId
    gm_offset_estimate: TickDuration = 0
    last_update: Timestamp = 0
    valid: bool = False
    ingress_local: Timestamp = 0
    gm_time: Timestamp = 0
    rate_ratio: Fraction = Fraction(1)
    history: tuple[tuple[Timestamp, Timestamp], ...] = ()

    def gm_time_at(self, local: Timestamp) -> Timestamp:
        r = self.rate_ratio
        return self.gm_time + ((local - self.ingress_local) * r.numerator) // r.denominator


@dataclass(frozen=True)
class GmCandidate:
    node: NodeId
    priority1: int = 128
    clock_quality: int = 0
    priority2: int = 128
    is_hot_standby: bool = False

    def rank(self) -> tuple:
        return (self.priority1, self.clock_quality, self.priority2, self.node)


@dataclass
class NodeState:
    """Per-node gPTP state: peer-delay ports, per-stream slave states and counters."""

    node_id: NodeId
    clock: ClockModel = field(default_factory=ClockModel)
    ports: dict[NodeId, PortState] = field(default_factory=dict)
    # (domain number, gm) -> upstream peer
    slave_port: dict[tuple[int, NodeId], NodeId] = field(default_factory=dict)
    slaves: dict[tuple[int, NodeId], ClockSlaveState] = field(default_factory=dict)
    last_seq: dict[tuple[int, NodeId], int] = field(default_factory=dict)
    selected: dict[int, NodeId] = field(default_factory=dict)
    rate_window: dict[int, int] = field(default_factory=dict)
    counters: Counter = field(default_factory=Counter)

    def port_for(self, domain: int, gm: NodeId, peer: NodeId) -> PortState:
        """Port toward `peer` with its role in the (domain, gm) spanning tree."""
        link = self.ports.setdefault(peer, PortState(peer))
        role = SLAVE if self.slave_port.get((domain, gm)) == peer else MASTER
        return PortState(peer, role, link.neighbor_delay, link.neighbor_rate_ratio)

    def selected_state(self, domain: int) -> ClockSlaveState | None:
        gm = self.selected.get(domain)
        if gm is None:
            return None
        return self.slaves.get((domain, gm))


def measure_link_delay(x: PdelayExchange, counters: Counter | None = None) -> TickDuration:
    """Mean one-way delay ((t4 - t1) - r * (t3 - t2)) / 2, floored to a tick.

    A negative estimate means asymmetry or a fault; it is clamped to 0 and
    counted as a measurement anomaly.
    """
    r = x.neighbor_rate_ratio
    num = (x.t4 - x.t1) * r.denominator - (x.t3 - x.t2) * r.numerator
    delay = num // (2 * r.denominator)
    if delay < 0:
        log.debug("negative link delay estimate %d clamped to 0", delay)
        if counters is not None:
            counters["measurement_anomaly"] += 1
        return 0
    return delay


def compute_residence(ingress_local: Timestamp, egress_local: Timestamp) -> TickDuration:
    if egress_local < ingress_local:
        raise SimulationOrderError(f"egress {egress_local} precedes ingress {ingress_local}")
    return egress_local - ingress_local


def build_forwarded_sync(
    pdu: SyncPdu,
    residence: TickDuration,
    upstream_link_delay: TickDuration,
    src_node: NodeId | None = None,
) -> SyncPdu:
    if residence < 0:
        raise ValueError(f"residence must be >= 0, got {residence}")
    return replace(
        pdu,
        correction=pdu.correction + upstream_link_delay + residence,
        src_node=pdu.src_node if src_node is None else src_node,
    )


def process_sync_ingress(
    node: NodeState,
    pdu: SyncPdu,
    ingress_local: Timestamp,
    port: PortState,
    now: Timestamp = 0,
) -> ClockSlaveState | None:
    """Update the node's estimate for the PDU's (domain, GM) stream.

    Returns the new state, or None when the PDU is stale and dropped.
    """
    if port.role != SLAVE:
        raise ValueError(f"Sync processed on a {port.role} port of {node.node_id}")
    if port.neighbor_delay is None:
        raise ValueError(f"port {node.node_id}<-{port.peer} has no link delay estimate yet")
    key = (pdu.domain.number, pdu.gm)
    last = node.last_seq.get(key)
    if last is not None and pdu.sequence_id <= last:
        node.counters["stale_sync"] += 1
        return None
    node.last_seq[key] = pdu.sequence_id

    gm_time = pdu.origin_ts + pdu.correction + port.neighbor_delay
    prev = node.slaves.get(key)
    window = node.rate_window.get(pdu.domain.number, 0)
    history: tuple[tuple[Timestamp, Timestamp], ...] = ()
    rate = Fraction(1)
    if window > 0:
        history = ((prev.history if prev else ()) + ((ingress_local, gm_time),))[-(window + 1):]
        first_local, first_gm = history[0]
        if ingress_local > first_local:
            rate = Fraction(gm_time - first_gm, ingress_local - first_local)
    state = ClockSlaveState(
        domain=pdu.domain,
        gm=pdu.gm,
        gm_offset_estimate=ingress_local - gm_time,
        last_update=now,
        valid=True,
        ingress_local=ingress_local,
        gm_time=gm_time,
        rate_ratio=rate,
        history=history,
    )
    node.slaves[key] = state
    return state


def bmca_elect(candidates: Iterable[GmCandidate]) -> NodeId:
    """Best candidate by (priority1, clock_quality, priority2, node id)."""
    best = min(candidates, key=GmCandidate.rank, default=None)
    if best is None:
        raise NoGrandmaster("no GM-capable candidate")
    return best.node


@dataclass
class DomainState:
    domain: DomainId
    candidates: list[GmCandidate]
    gm: NodeId | None = None
    failed: set = field(default_factory=set)
    history: list[tuple[Timestamp, NodeId | None, NodeId | None]] = field(default_factory=list)

    def __post_init__(self) -> None:
        if self.gm is None and self.candidates:
            self.gm = bmca_elect(self.candidates)

    def candidate(self, node: NodeId) -> GmCandidate | None:
        for c in self.candidates:
            if c.node == node:
                return c
        return None


def failover(state: DomainState, failed_gm: NodeId, at: Timestamp) -> NodeId:
    """Elect a new GM without `failed_gm`; raises NoGrandmaster when none is left."""
    if failed_gm != state.gm:
        raise ValueError(f"{failed_gm!r} is not the elected GM of domain {state.domain.number}")
    state.failed.add(failed_gm)
    remaining = [c for c in state.candidates if c.node not in state.failed]
    old = state.gm
    try:
        state.gm = bmca_elect(remaining)
    except NoGrandmaster:
        state.gm = None
        state.history.append((at, old, None))
        raise
    state.history.append((at, old, state.gm))
    return state.gm


def select_domain(received: Sequence[SyncPdu], wanted: DomainId | int) -> list[SyncPdu]:
    number = wanted.number if isinstance(wanted, DomainId) else wanted
    return [p for p in received if p.domain.number == number]
