"""The 5G System as an IEEE 802.1AS time-aware virtual bridge.

Two sync processes run side by side and never touch each other:

* 5GS-internal: a 5G GM clock reaches UPFs and gNBs with a bounded error
  (the wired telecom-profile distribution is not simulated hop by hop), and
  each gNB delivers reference time to its UEs over the radio.
* TSN domain: gPTP PDUs enter at the NW-TT (UPF side), get an ingress
  stamp TS_i on the 5GS clock, cross the user plane, and leave at the
  DS-TT (UE side), which adds TS_e - TS_i to the correction field.
"""

from __future__ import annotations

import random
from collections import Counter
from dataclasses import dataclass, field, replace
from fractions import Fraction

from tsnsync.gptp import MSGS_PER_SYNC, SYNC_PDU_BYTES, DomainId, NodeId, SyncPdu
from tsnsync.timebase import (
    TICKS_PER_S,
    ClockModel,
    TickDuration,
    Timestamp,
    ms,
    ns,
    quantize,
    read_local,
    seconds,
)

RADIO_FRAME = ms(10)
MIN_TA_QUANTIZATION = ns(32)
DEFAULT_NODE_ERROR_BOUND = ns(100)

BROADCAST = "broadcast"
UNICAST = "unicast"
TA_UNIFORM = "uniform"
TA_NONE = "none"


class ProtocolViolation(ValueError):
    """A PDU reached a TT in a state the TT must not accept."""


@dataclass(frozen=True)
class RadioRefTimeConfig:
    delivery_period: TickDuration = seconds(1)
    ref_quantization: TickDuration = ns(10)
    ta_quantization: TickDuration = MIN_TA_QUANTIZATION
    delivery_kind: str = BROADCAST
    # "none" models a Timing Advance loop that cancels propagation exactly
    ta_residual: str = TA_UNIFORM

    def __post_init__(self) -> None:
        if self.delivery_period < RADIO_FRAME or self.delivery_period % RADIO_FRAME:
            raise ValueError("delivery_period must be a positive multiple of the 10 ms radio frame")
        if self.ta_quantization < MIN_TA_QUANTIZATION:
            raise ValueError("ta_quantization must be >= 32 ns")
        if self.ref_quantization < 1:
            raise ValueError("ref_quantization must be >= 1 tick")
        if self.delivery_kind not in (BROADCAST, UNICAST):
            raise ValueError(f"delivery_kind must be broadcast|unicast, got {self.delivery_kind!r}")
        if self.ta_residual not in (TA_UNIFORM, TA_NONE):
            raise ValueError(f"ta_residual must be uniform|none, got {self.ta_residual!r}")

    @property
    def ta_half(self) -> TickDuration:
        return self.ta_quantization // 2 if self.ta_residual == TA_UNIFORM else 0


@dataclass
class FiveGSystemClock:
    """5G GM reference plus the fixed deviation of each UPF/gNB from it."""

    gm_clock: ClockModel = field(default_factory=ClockModel)
    per_node_error: dict[NodeId, TickDuration] = field(default_factory=dict)
    error_bound: TickDuration = DEFAULT_NODE_ERROR_BOUND

    def __post_init__(self) -> None:
        for node, err in self.per_node_error.items():
            if abs(err) > self.error_bound:
                raise ValueError(f"5GS error of {node} ({err} ticks) exceeds bound {self.error_bound}")

    def gm_time(self, true_time: Timestamp) -> Timestamp:
        """5G GM time at 1-tick resolution (the reference all 5GS errors are measured against)."""
        return self.gm_clock.floor_ticks(true_time)

    def node_clock(self, node: NodeId, granularity: TickDuration = 1) -> ClockModel:
        gm = self.gm_clock
        return ClockModel(
            gm.offset_at_epoch + self.per_node_error.get(node, 0),
            gm.drift_ppm,
            granularity,
            gm.epoch,
        )


@dataclass(frozen=True)
class Ue5gClockState:
    ue: NodeId
    est_5g_offset: TickDuration = 0
    last_delivery: Timestamp = 0
    prop_delay_true: TickDuration = 0
    quantization_error: TickDuration = 0
    ta_residual: TickDuration = 0


@dataclass(frozen=True)
class NpnContext:
    npn_id: str
    ues: frozenset = frozenset()
    upfs: frozenset = frozenset()
    domains: frozenset = frozenset()


def deliver_ref_time(
    cfg: RadioRefTimeConfig,
    gnb_error: TickDuration,
    prop_delay_true: TickDuration,
    rng: random.Random,
    *,
    ue: NodeId = None,
    at: Timestamp = 0,
    gm_time: Timestamp | None = None,
) -> Ue5gClockState:
    """UE 5GS-time error right after a reference-time delivery.

    The gNB signals its own time at the reference point, floored to
    `ref_quantization`; the UE adds its Timing Advance estimate of the
    propagation delay, which leaves only the TA residual.
    """
    gnb_time = (at if gm_time is None else gm_time) + gnb_error
    quant_err = quantize(gnb_time, cfg.ref_quantization) - gnb_time
    h = cfg.ta_half
    ta_res = rng.randint(-h, h) if h else 0
    return Ue5gClockState(
        ue=ue,
        est_5g_offset=gnb_error + quant_err + ta_res,
        last_delivery=at,
        prop_delay_true=prop_delay_true,
        quantization_error=quant_err,
        ta_residual=ta_res,
    )


def ue_5g_clock(
    state: Ue5gClockState,
    fg: FiveGSystemClock,
    residual_drift_ppm: Fraction = Fraction(0),
    granularity: TickDuration = 1,
) -> ClockModel:
    """UE 5GS clock free-running from the last delivery.

    The UE is syntonized to the gNB carrier, so it runs at the 5G GM rate
    plus a small residual frequency error.
    """
    t = state.last_delivery
    gm = fg.gm_clock
    return ClockModel(
        offset_at_epoch=fg.gm_time(t) + state.est_5g_offset - t,
        drift_ppm=gm.drift_ppm + Fraction(residual_drift_ppm),
        read_granularity=granularity,
        epoch=t,
    )


def nw_tt_ingress(pdu: SyncPdu, upf_5g_local: Timestamp) -> SyncPdu:
    if pdu.embedded_tsi is not None:
        raise ProtocolViolation(f"PDU seq {pdu.sequence_id} already carries TS_i")
    return replace(pdu, embedded_tsi=upf_5g_local)


def ds_tt_egress(pdu: SyncPdu, ue_5g_local: Timestamp, counters: Counter | None = None) -> SyncPdu:
    """Add the 5GS residence TS_e - TS_i to the correction and strip TS_i.

    A negative residence (5GS clock errors larger than the transit) is
    applied as computed and counted as an anomaly.
    """
    if pdu.embedded_tsi is None:
        raise ProtocolViolation(f"PDU seq {pdu.sequence_id} reached DS-TT without TS_i")
    residence = ue_5g_local - pdu.embedded_tsi
    if residence < 0 and counters is not None:
        counters["measurement_anomaly"] += 1
    return replace(pdu, correction=pdu.correction + residence, embedded_tsi=None)


def route_pdu(npn: NpnContext, pdu: SyncPdu, target_ue: NodeId, counters: Counter | None = None) -> bool:
    """True iff the UE belongs to the NPN and the NPN owns the PDU's domain."""
    if target_ue in npn.ues and pdu.domain.number in npn.domains:
        return True
    if counters is not None:
        counters["isolation_violation"] += 1
    return False


def emit_5gs_gm_sync(
    fg: FiveGSystemClock,
    domain: DomainId,
    at: Timestamp,
    *,
    sequence_id: int = 0,
    src_node: NodeId = "5gs",
    edge_clock: ClockModel | None = None,
) -> SyncPdu:
    """Sync sourced by the 5GS acting as GM of a merged domain.

    `edge_clock` is the emitting TT's 5GS clock; without it the 5G GM is
    read directly.
    """
    clock = fg.gm_clock if edge_clock is None else edge_clock
    return SyncPdu(
        domain=domain,
        origin_ts=read_local(clock, at),
        correction=0,
        sequence_id=sequence_id,
        gm="5gs",
        src_node=src_node,
    )


def bitrate_bps(payload_bytes: int, period: TickDuration) -> Fraction:
    return Fraction(8 * payload_bytes * TICKS_PER_S, period)


def compute_overhead(
    user_payload_bytes: int,
    user_period: TickDuration,
    gptp_msgs_per_interval: int = MSGS_PER_SYNC,
    gptp_payload_bytes: int = SYNC_PDU_BYTES,
    gptp_interval: TickDuration = ms(125),
) -> Fraction:
    """gPTP user-plane rate over the application rate, as an exact ratio.

    Per UE; the number of UEs does not enter.
    """
    values = (user_payload_bytes, user_period, gptp_msgs_per_interval, gptp_payload_bytes, gptp_interval)
    if any(v <= 0 for v in values):
        raise ValueError(f"overhead inputs must all be positive, got {values}")
    return bitrate_bps(gptp_msgs_per_interval * gptp_payload_bytes, gptp_interval) / bitrate_bps(
        user_payload_bytes, user_period
    )
