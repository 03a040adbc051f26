from __future__ import annotations

import json
from fractions import Fraction

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from tsnsync.cli import bundled_scenarios, read_scenario_text
from tsnsync.config import (
    ConfigError,
    DelaySpec,
    device_side,
    dumps,
    parse_config,
    to_document,
)
from tsnsync.timebase import ms, ns, seconds, us


def minimal(**extra) -> dict:
    doc = {
        "name": "mini",
        "topology": {
            "nodes": [{"id": "gm", "kind": "end_station"}, {"id": "es", "kind": "end_station"}],
            "links": [{"a": "gm", "b": "es", "delay": "1us"}],
        },
        "domains": [{"number": 0, "gm_candidates": [{"node": "gm"}]}],
    }
    doc.update(extra)
    return doc


def fiveg_doc() -> dict:
    return {
        "name": "fg",
        "topology": {
            "nodes": [
                {"id": "gm", "kind": "end_station"},
                {"id": "upf", "kind": "upf"},
                {"id": "gnb", "kind": "gnb"},
                {"id": "ue", "kind": "ue"},
                {"id": "dev", "kind": "end_station"},
            ],
            "links": [
                {"a": "gm", "b": "upf", "delay": "1us"},
                {"a": "upf", "b": "ue", "kind": "pdu-session"},
                {"a": "gnb", "b": "ue", "kind": "radio", "delay": "1us"},
                {"a": "ue", "b": "dev", "delay": "100ns"},
            ],
        },
        "domains": [{"number": 0, "gm_candidates": [{"node": "gm"}]}],
        "fiveg": {},
    }


def errors_of(doc) -> list[str]:
    with pytest.raises(ConfigError) as info:
        parse_config(doc)
    return info.value.errors


def test_minimal_document_gets_defaults():
    cfg = parse_config(minimal())
    d = cfg.domains[0]
    assert d.sync_interval == ms(125)
    assert d.pdelay_interval == seconds(1)
    assert d.clock_class == "working"
    assert cfg.nodes[0].granularity == ns(8)
    assert cfg.nodes[0].drift_ppm == 0
    assert cfg.scenario.sampling_period == ms(25)
    assert cfg.links[0].delay == us(1)
    assert cfg.links[0].delay_ba == us(1)


def test_fiveg_defaults():
    cfg = parse_config(fiveg_doc())
    f = cfg.fiveg
    assert f.node_error_bound == ns(100)
    assert f.ref_time.ref_quantization == ns(10)
    assert f.ref_time.ta_quantization == ns(32)
    assert f.ref_time.delivery_period == seconds(1)
    assert f.pdu_session_delay == DelaySpec.uniform(ms(1), ms(10))
    session = [l for l in cfg.links if l.kind == "pdu-session"][0]
    assert session.delay == ms(1)
    assert session.jitter == DelaySpec.uniform(0, ms(9))


def test_duration_and_ppm_forms():
    doc = minimal()
    doc["topology"]["nodes"][1].update(drift_ppm="-2.5", offset=" 3 us", granularity=65536)
    cfg = parse_config(doc)
    es = cfg.node("es")
    assert es.drift_ppm == Fraction(-5, 2)
    assert es.offset == us(3)
    assert es.granularity == ns(1)


def test_33_working_domains_rejected_with_limit_cited():
    doc = minimal()
    doc["domains"] = [{"number": n, "gm_candidates": [{"node": "gm"}]} for n in range(33)]
    errs = errors_of(doc)
    assert any("32 working clock domains" in e and "33" in e for e in errs)


def test_32_working_plus_universal_accepted():
    doc = minimal()
    doc["domains"] = [{"number": n, "gm_candidates": [{"node": "gm"}]} for n in range(32)]
    doc["domains"].append({"number": 40, "class": "universal", "gm_candidates": [{"node": "gm"}]})
    assert len(parse_config(doc).domains) == 33


def test_gm_behind_ue_rejected():
    doc = fiveg_doc()
    doc["domains"][0]["gm_candidates"] = [{"node": "dev"}]
    errs = errors_of(doc)
    assert any("Release 17" in e and "uplink" in e for e in errs)


def test_device_side_map():
    cfg = parse_config(fiveg_doc())
    assert device_side(cfg) == {"ue": "ue", "dev": "ue"}


def test_ta_quantization_below_32ns_rejected():
    doc = fiveg_doc()
    doc["fiveg"] = {"ref_time": {"ta_quantization": "16ns"}}
    assert any("32 ns" in e for e in errors_of(doc))


def test_all_errors_reported_together():
    doc = minimal()
    doc["topology"]["links"].append({"a": "gm", "b": "ghost"})
    doc["domains"].append({"number": 0, "gm_candidates": [{"node": "nobody"}]})
    doc["scenario"] = {"sampling_period": "0ns"}
    errs = errors_of(doc)
    assert any("ghost" in e for e in errs)
    assert any("duplicate domain" in e for e in errs)
    assert any("nobody" in e for e in errs)
    assert any("sampling_period" in e for e in errs)


def test_schema_errors_collected():
    doc = minimal(colour="blue")
    doc["topology"]["nodes"][0]["kind"] = "router"
    doc["domains"][0]["sync_interval"] = "12 parsecs"
    errs = errors_of(doc)
    assert len(errs) == 3
    assert any("colour" in e and "unknown field" in e for e in errs)


def test_syntax_error_reports_position():
    errs = errors_of('{"name": "x",\n  "topology": [}')
    assert "line 2" in errs[0] and "column" in errs[0]


def test_duplicate_fault_rejected():
    doc = minimal(scenario={"faults": [{"node": "gm", "at": "1s"}, {"node": "gm", "at": "1000ms"}]})
    assert any("duplicate directive" in e for e in errors_of(doc))


def test_merged_mode_conflicts_with_external_gm():
    doc = fiveg_doc()
    doc["domains"][0]["fiveg_gm"] = True
    assert any("conflicts" in e for e in errors_of(doc))


def test_unreachable_end_station_rejected():
    doc = minimal()
    doc["topology"]["nodes"].append({"id": "island", "kind": "end_station"})
    assert any("island" in e and "unreachable" in e for e in errors_of(doc))


def test_fiveg_nodes_keep_5gs_time():
    doc = fiveg_doc()
    doc["topology"]["nodes"][3]["drift_ppm"] = 3
    assert any("fiveg_drift_ppm" in e for e in errors_of(doc))


@pytest.mark.parametrize("name", sorted(bundled_scenarios()))
def test_bundled_scenarios_round_trip(name):
    cfg = parse_config(read_scenario_text(name))
    again = parse_config(json.loads(dumps(cfg)))
    assert again == cfg
    assert to_document(again) == to_document(cfg)


durations = st.integers(0, 10**6).map(lambda v: f"{v}ns")


@settings(max_examples=50, deadline=None)
@given(durations, durations, st.integers(-1000, 1000).map(lambda v: f"{v}/7"), st.integers(1, 64))
def test_round_trip_property(delay, reverse, drift, gran):
    doc = minimal()
    doc["topology"]["links"][0].update(delay=delay, reverse_delay=reverse)
    doc["topology"]["nodes"][1].update(drift_ppm=drift, granularity=f"{gran}ns")
    cfg = parse_config(doc)
    assert parse_config(to_document(cfg)) == cfg
