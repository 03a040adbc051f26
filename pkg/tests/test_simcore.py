from __future__ import annotations

import random

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from scenario_docs import bundled, chain_doc
from tsnsync.config import ConfigError, DelaySpec, LinkConfig, parse_config
from tsnsync.simcore import (
    EngineError,
    EventQueue,
    Link,
    Simulation,
    iter_events,
    schedule,
    simulate,
    substream,
    transmit,
)
from tsnsync.timebase import ms, seconds


# -- event queue ------------------------------------------------------------------


def test_single_event_runs():
    q = EventQueue()
    schedule(q, 5, "sync-emit", ("x",))
    ev = q.pop()
    assert (ev.at, ev.kind, ev.payload) == (5, "sync-emit", ("x",))
    assert q.now == 5 and q.peek() is None


def test_equal_times_run_in_scheduling_order():
    q = EventQueue()
    for tag in "abc":
        schedule(q, 10, "sync-emit", (tag,))
    assert [q.pop().payload[0] for _ in range(3)] == ["a", "b", "c"]


@settings(max_examples=5, deadline=None)
@given(st.integers(0, 2**32))
def test_random_events_pop_sorted(seed):
    rnd = random.Random(seed)
    q = EventQueue()
    for _ in range(10_000):
        schedule(q, rnd.randrange(0, 500), "sync-emit")
    popped = [q.pop() for _ in range(len(q))]
    keys = [(e.at, e.seq) for e in popped]
    assert keys == sorted(keys)


def test_scheduling_into_the_past_is_an_engine_error():
    q = EventQueue()
    schedule(q, 100, "sync-emit")
    q.pop()
    with pytest.raises(EngineError):
        schedule(q, 99, "sync-emit")


# -- links ----------------------------------------------------------------------------------


def make_link(jitter: DelaySpec | None, seed: int = 1) -> Link:
    cfg = LinkConfig("a", "b", delay=100, jitter=jitter)
    return Link(cfg, {"a": substream(seed, "link", cfg.id, "a"), "b": substream(seed, "link", cfg.id, "b")})


def test_transmit_without_jitter():
    q = EventQueue()
    ev = transmit(q, make_link(None), "a", 0, ("pdu",))
    assert ev.at == 100 and ev.kind == "pdu-arrival"


def test_transmit_jitter_range_and_replay():
    draws = []
    for _ in range(2):
        q = EventQueue()
        link = make_link(DelaySpec.uniform(0, 50))
        draws.append([transmit(q, link, "a", 0, ()).at for _ in range(200)])
    assert draws[0] == draws[1]
    assert all(100 <= at <= 150 for at in draws[0])
    assert len(set(draws[0])) > 1


def test_negative_jitter_never_makes_negative_delay():
    link = make_link(DelaySpec.uniform(-500, -200))
    assert all(link.draw_delay("a") == 0 for _ in range(50))


def test_substreams_depend_only_on_entity_id():
    a = substream(9, "link", "x--y", "x").random()
    b = substream(9, "link", "x--y", "x").random()
    c = substream(9, "link", "x--z", "x").random()
    assert a == b != c


def test_failed_endpoint_drops_pdu():
    cfg = parse_config(chain_doc([500], []))
    sim = Simulation(cfg)
    sim.inject_fault("es", 0, "fail")
    trace = sim.run_until(ms(300))
    assert trace.counters["loss_failed_endpoint"] == trace.counters["sync_emitted"] == 3
    assert not trace.sync_log


# -- runs -----------------------------------------------------------------------------------


def test_no_sources_gives_empty_trace():
    doc = chain_doc([500], [])
    doc["domains"] = []
    doc["topology"]["nodes"][0]["domains"] = []
    trace = simulate(parse_config(doc))
    assert trace.samples == [] and trace.sync_log == [] and trace.pdu_accounting == {}


def test_t_end_zero_processes_only_time_zero():
    sim = Simulation(parse_config(chain_doc([500, 700], [10_000])))
    trace = sim.run_until(0)
    assert trace.t_end == 0
    assert all(ev.at > 0 for ev in sim.queue.pending())
    assert trace.counters.get("sync_emitted") == 1
    assert trace.sync_log == []


def test_same_seed_same_trace():
    cfg = parse_config(bundled("fiveg_default_chain"))
    assert simulate(cfg, duration=seconds(2)) == simulate(cfg, duration=seconds(2))


def test_different_seed_different_trace():
    cfg = parse_config(bundled("fiveg_default_chain"))
    assert simulate(cfg, seed=1, duration=seconds(2)).samples != simulate(cfg, seed=2, duration=seconds(2)).samples


def test_handlers_never_see_the_past():
    sim = Simulation(parse_config(bundled("fiveg_default_chain")))
    last = 0
    for ev in iter_events(sim):
        assert ev.at >= last
        last = ev.at
        if ev.at > seconds(1):
            break


@pytest.mark.parametrize("name", ["fiveg_default_chain", "fig5_two_npn_shared_ran", "hot_standby_failover"])
def test_pdu_conservation(name):
    cfg = parse_config(bundled(name))
    trace = simulate(cfg, duration=seconds(6))
    for acct in trace.pdu_accounting.values():
        assert acct["sent"] == acct["accepted"] + acct["dropped"] + acct["in_flight"]
        assert acct["sent"] > 0


def test_adding_a_node_leaves_other_draws_alone():
    doc = bundled("fiveg_default_chain")
    base = simulate(parse_config(doc), duration=seconds(3))
    doc["topology"]["nodes"].append({"id": "spare", "kind": "end_station", "drift_ppm": 4})
    jitter = {"kind": "uniform", "min": "0ns", "max": "40ns"}
    doc["topology"]["links"].append({"a": "br1", "b": "spare", "delay": "90ns", "jitter": jitter})
    grown = simulate(parse_config(doc), duration=seconds(3))
    assert [s for s in grown.samples if s[1] != "spare"] == base.samples


# -- faults ---------------------------------------------------------------------------------


def test_leaf_failure_does_not_touch_other_nodes():
    cfg = parse_config(bundled("fiveg_default_chain"))
    clean = simulate(cfg, duration=seconds(6))
    sim = Simulation(cfg)
    sim.inject_fault("es2", seconds(2), "fail")
    faulty = sim.run_until(seconds(6))
    keep = lambda samples: [s for s in samples if s[1] != "es2"]
    assert keep(faulty.samples) == keep(clean.samples)
    assert faulty.ue_samples == clean.ue_samples
    assert max(s[0] for s in faulty.samples if s[1] == "es2") < seconds(2)


def test_recover_before_next_sync_is_invisible():
    cfg = parse_config(chain_doc([500, 700], [10_000], duration="3s"))
    clean = simulate(cfg)
    sim = Simulation(cfg)
    sim.inject_fault("es", ms(1010), "fail")
    sim.inject_fault("es", ms(1020), "recover")
    blip = sim.run_until(seconds(3))
    assert blip.samples == clean.samples
    assert blip.sync_log == clean.sync_log


def test_duplicate_fault_directive_rejected():
    sim = Simulation(parse_config(chain_doc([500], [])))
    sim.inject_fault("es", 10, "fail")
    with pytest.raises(ConfigError):
        sim.inject_fault("es", 10, "fail")
    with pytest.raises(ConfigError):
        sim.inject_fault("nobody", 10, "fail")


def test_handler_failure_reports_context():
    sim = Simulation(parse_config(chain_doc([500], [])))
    sim.queue.schedule(5, "node-fail", ("ghost",))
    with pytest.raises(EngineError, match=r"node-fail.*t=5.*ghost"):
        sim.run_until(10)


# -- multi-domain and NPNs --------------------------------------------------------------------


def test_each_end_station_only_follows_its_domain():
    cfg = parse_config(bundled("fig4_multidomain"))
    sim = Simulation(cfg)
    trace = sim.run_until(seconds(1))
    subs = {n.id: cfg.subscriptions(n) for n in cfg.nodes if n.kind == "end_station"}
    assert len(cfg.domains) == 32
    for _, es, dnum, *_ in trace.sync_log:
        assert dnum in subs[es]
    for node, subscribed in subs.items():
        assert {dnum for dnum, _ in sim.nodes[node].state.slaves} <= set(subscribed)
    assert trace.counters["domain_filtered"] > 0


def test_cross_npn_session_counts_isolation_violations():
    doc = bundled("fig5_two_npn_shared_ran")
    doc["topology"]["nodes"].append({"id": "ueB3", "kind": "ue", "npn": "npnB"})
    doc["topology"]["links"] += [
        {"a": "upfA", "b": "ueB3", "kind": "pdu-session"},
        {"a": "g1", "b": "ueB3", "kind": "radio", "delay": "1us"},
    ]
    trace = simulate(parse_config(doc), duration=seconds(1))
    assert trace.counters["isolation_violation"] > 0
    assert all(s[1] != "ueB3" for s in trace.sync_log)


def test_shared_ran_keeps_npns_apart():
    trace = simulate(parse_config(bundled("fig5_two_npn_shared_ran")), duration=seconds(3))
    assert trace.counters.get("isolation_violation", 0) == 0
    gm_of = {"esA1": "gmA", "esA2": "gmA", "esB1": "gmB", "esB2": "gmB"}
    assert all(gm == gm_of[es] for _, es, _, gm, *_ in trace.sync_log)


def test_merged_mode_every_tt_emits():
    doc = bundled("fiveg_default_chain")
    doc["domains"] = [{"number": 0, "fiveg_gm": True}]
    cfg = parse_config(doc)
    trace = simulate(cfg, duration=seconds(3))
    assert {entry[3] for entry in trace.sync_log} == {"5gs"}
    assert {s[1] for s in trace.samples} == {"gm", "es1", "es2"}
    assert trace.counters.get("isolation_violation", 0) == 0
