from __future__ import annotations

from collections import Counter
from fractions import Fraction

import pytest
from hypothesis import given
from hypothesis import strategies as st

from tsnsync.gptp import (
    MASTER,
    SLAVE,
    ClockSlaveState,
    DomainId,
    DomainState,
    GmCandidate,
    NodeState,
    NoGrandmaster,
    PdelayExchange,
    PortState,
    SimulationOrderError,
    SyncPdu,
    bmca_elect,
    build_forwarded_sync,
    compute_residence,
    failover,
    measure_link_delay,
    process_sync_ingress,
    select_domain,
)
from tsnsync.timebase import ClockModel, ms, ns, read_local, seconds, us

D0 = DomainId(0)


def pdu(**kw) -> SyncPdu:
    base = dict(domain=D0, origin_ts=0, correction=0, sequence_id=1, gm="gm", src_node="gm")
    base.update(kw)
    return SyncPdu(**base)


# -- measure_link_delay ------------------------------------------------------


def test_link_delay_symmetric():
    assert measure_link_delay(PdelayExchange(0, 1000, 5000, 6000)) == 1000


def test_link_delay_all_equal():
    assert measure_link_delay(PdelayExchange(7, 7, 7, 7)) == 0


def test_link_delay_responder_offset_cancels():
    x = 123_456_789
    assert measure_link_delay(PdelayExchange(0, 1000 + x, 5000 + x, 6000)) == 1000


def test_link_delay_asymmetric_link():
    down, up, turnaround = 800, 1200, 4000
    t1 = 0
    t2 = t1 + down
    t3 = t2 + turnaround
    t4 = t3 + up
    est = measure_link_delay(PdelayExchange(t1, t2, t3, t4))
    assert est == 1000
    # the Sync travels downstream: the estimate over-reports by 200 ticks
    assert est - down == 200


def test_link_delay_negative_is_clamped_and_counted():
    counters = Counter()
    x = PdelayExchange(0, 0, 100, 50, neighbor_rate_ratio=Fraction(1))
    assert measure_link_delay(x, counters) == 0
    assert counters["measurement_anomaly"] == 1


def test_link_delay_rate_ratio():
    # responder runs 100 ppm fast: its 1_000_100 ticks are 1_000_000 of ours
    x = PdelayExchange(0, 500, 500 + 1_000_100, 1_000_000 + 1000, neighbor_rate_ratio=Fraction(1_000_000, 1_000_100))
    assert measure_link_delay(x) == 500


def test_pdelay_invariants():
    with pytest.raises(ValueError):
        PdelayExchange(0, 10, 5, 20)
    with pytest.raises(ValueError):
        PdelayExchange(10, 0, 0, 5)


@given(
    st.integers(0, 10**6),
    st.integers(0, 10**6),
    st.integers(0, 10**6),
    st.integers(-(10**15), 10**15),
)
def test_link_delay_invariant_under_responder_shift(delay, turnaround, t1, shift):
    t2 = t1 + delay
    t3 = t2 + turnaround
    t4 = t3 + delay
    a = measure_link_delay(PdelayExchange(t1, t2, t3, t4))
    b = measure_link_delay(PdelayExchange(t1, t2 + shift, t3 + shift, t4))
    assert a == b == delay


# -- residence / forwarding ---------------------------------------------------


def test_compute_residence():
    assert compute_residence(seconds(100), seconds(100) + us(500)) == us(500)
    assert compute_residence(5, 5) == 0
    with pytest.raises(SimulationOrderError):
        compute_residence(6, 5)


def test_residence_inflated_by_bridge_drift():
    clock = ClockModel(drift_ppm=Fraction(50))
    t_in = seconds(3)
    t_out = t_in + ms(10)
    measured = compute_residence(read_local(clock, t_in), read_local(clock, t_out))
    assert measured == ms(10) + ns(500)


def test_build_forwarded_sync():
    p = pdu(correction=0)
    assert build_forwarded_sync(p, 400, 100).correction == 500
    assert build_forwarded_sync(p, 0, 0) == p
    fwd = build_forwarded_sync(pdu(origin_ts=9, sequence_id=4), 1, 1)
    assert (fwd.origin_ts, fwd.sequence_id, fwd.domain) == (9, 4, D0)
    with pytest.raises(ValueError):
        build_forwarded_sync(p, -1, 0)


@pytest.mark.parametrize("length", range(1, 7))
def test_correction_telescopes_over_chain(length):
    # delays d1..d(n+1), residences r1..rn; brute-force sum is the oracle
    delays = [100 * (i + 1) + 7 * i * i for i in range(length + 1)]
    residences = [1000 + 13 * i for i in range(length)]
    p = pdu()
    for i in range(length):
        p = build_forwarded_sync(p, residences[i], delays[i])
    expected = 0
    for d, r in zip(delays[:length], residences):
        expected += d
        expected += r
    assert p.correction == expected


# -- process_sync_ingress -------------------------------------------------------


def _slave_node() -> tuple[NodeState, PortState]:
    node = NodeState("es")
    node.ports["br"] = PortState("br", neighbor_delay=100)
    node.slave_port[(0, "gm")] = "br"
    return node, node.port_for(0, "gm", "br")


def test_sync_ingress_synchronized():
    node, port = _slave_node()
    state = process_sync_ingress(node, pdu(origin_ts=seconds(1000), correction=500), seconds(1000) + 600, port)
    assert state.gm_offset_estimate == 0
    assert state.valid


def test_sync_ingress_offset():
    node, port = _slave_node()
    state = process_sync_ingress(node, pdu(origin_ts=seconds(1000), correction=500), seconds(1000) + 1600, port)
    assert state.gm_offset_estimate == 1000


def test_sync_ingress_stale_dropped():
    node, port = _slave_node()
    assert process_sync_ingress(node, pdu(sequence_id=5), 1000, port) is not None
    assert process_sync_ingress(node, pdu(sequence_id=5), 2000, port) is None
    assert process_sync_ingress(node, pdu(sequence_id=3), 3000, port) is None
    assert node.counters["stale_sync"] == 2
    assert node.slaves[(0, "gm")].ingress_local == 1000


def test_sync_ingress_requires_slave_port():
    node, _ = _slave_node()
    with pytest.raises(ValueError):
        process_sync_ingress(node, pdu(), 0, PortState("x", role=MASTER, neighbor_delay=0))


def test_slave_state_invalid_until_first_sync():
    assert not ClockSlaveState(D0, "gm").valid


def test_rate_ratio_estimated_from_history():
    node, port = _slave_node()
    node.rate_window[0] = 2
    # slave runs 10 ppm fast relative to the GM
    for k in range(4):
        gm_t = seconds(k)
        local = gm_t + k * us(10)
        process_sync_ingress(node, pdu(origin_ts=gm_t - 100, sequence_id=k + 1), local, port)
    state = node.slaves[(0, "gm")]
    assert len(state.history) == 3
    assert state.rate_ratio == Fraction(seconds(2), seconds(2) + us(20))
    later = seconds(3) + us(30) + seconds(1) + us(10)
    assert state.gm_time_at(later) == seconds(4)


# -- bmca / failover / select_domain ------------------------------------------


def test_bmca_examples():
    assert bmca_elect([GmCandidate("a")]) == "a"
    assert bmca_elect([GmCandidate("B", 2, 0, 0), GmCandidate("A", 1, 0, 0)]) == "A"
    assert bmca_elect([GmCandidate(7, 1, 0, 0), GmCandidate(3, 1, 0, 0)]) == 3
    with pytest.raises(NoGrandmaster):
        bmca_elect([])


candidates = st.lists(
    st.builds(
        GmCandidate,
        node=st.integers(0, 50),
        priority1=st.integers(0, 3),
        clock_quality=st.integers(0, 3),
        priority2=st.integers(0, 3),
    ),
    min_size=1,
    max_size=8,
    unique_by=lambda c: c.node,
)


@given(candidates, st.randoms())
def test_bmca_permutation_invariant(cands, rnd):
    shuffled = list(cands)
    rnd.shuffle(shuffled)
    assert bmca_elect(cands) == bmca_elect(shuffled)


def test_failover_elects_backup_and_exhausts():
    state = DomainState(D0, [GmCandidate("gm1", 1), GmCandidate("gm2", 2, is_hot_standby=True)])
    assert state.gm == "gm1"
    assert failover(state, "gm1", 10) == "gm2"
    with pytest.raises(NoGrandmaster):
        failover(state, "gm2", 20)
    assert state.gm is None
    assert state.history == [(10, "gm1", "gm2"), (20, "gm2", None)]


def test_select_domain_examples():
    assert select_domain([], D0) == []
    a, b, c = pdu(domain=DomainId(1), sequence_id=1), pdu(domain=DomainId(2)), pdu(domain=DomainId(1), sequence_id=2)
    assert select_domain([a, b, c], DomainId(1)) == [a, c]


pdus = st.lists(st.builds(pdu, domain=st.builds(DomainId, st.integers(0, 5)), sequence_id=st.integers(0, 9)))


@given(pdus, pdus, st.integers(0, 5))
def test_select_domain_distributes_over_concat(a, b, w):
    assert select_domain(a + b, w) == select_domain(a, w) + select_domain(b, w)


def test_domain_id_bounds():
    with pytest.raises(ValueError):
        DomainId(128)
    with pytest.raises(ValueError):
        DomainId(1, "wall")
    assert DomainId(0) < DomainId(1)
