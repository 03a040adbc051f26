"""Regenerate the bundled scenarios that are too repetitive to write by hand.

    python3 scripts/generate_scenarios.py
"""

from __future__ import annotations

import json
from fractions import Fraction
from pathlib import Path

from tsnsync.config import parse_config
from tsnsync.timebase import format_fraction

OUT = Path(__file__).resolve().parent.parent / "src" / "tsnsync" / "scenarios"


def failover(hot: bool) -> dict:
    name = "hot_standby_failover" if hot else "cold_standby_failover"
    kind = "hot" if hot else "cold"
    # drifts are multiples of 8 ppm so every clock repeats its 8 ns floor pattern each 125 ms
    return {
        "name": name,
        "description": f"Primary GM fails at 5.01 s; the backup is a {kind} standby",
        "topology": {
            "nodes": [
                {"id": "gm1", "kind": "end_station"},
                {"id": "gm2", "kind": "end_station"},
                {"id": "br", "kind": "bridge", "drift_ppm": 8},
                {"id": "es1", "kind": "end_station", "drift_ppm": 8},
                {"id": "es2", "kind": "end_station", "drift_ppm": -8},
            ],
            "links": [
                {"a": "gm1", "b": "br", "delay": "500ns"},
                {"a": "gm2", "b": "br", "delay": "500ns"},
                {"a": "br", "b": "es1", "delay": "300ns"},
                {"a": "br", "b": "es2", "delay": "400ns"},
            ],
        },
        "domains": [
            {
                "number": 0,
                "gm_candidates": [
                    {"node": "gm1", "priority1": 1},
                    {"node": "gm2", "priority1": 2, "hot_standby": hot},
                ],
                "rate_ratio_window": 0,
            }
        ],
        "scenario": {
            "duration": "10s",
            "seed": 1,
            "sampling_period": "1ms",
            "warmup": "1s",
            "faults": [{"node": "gm1", "at": "5010ms", "kind": "fail"}],
        },
        "output": {"directory": f"out/{name}"},
    }


def multidomain() -> dict:
    nodes = [{"id": "br", "kind": "bridge", "drift_ppm": 2}, {"id": "upf", "kind": "upf"}, {"id": "gnb", "kind": "gnb"}]
    links = [{"a": "br", "b": "upf", "delay": "1us"}]
    domains = []
    for d in range(32):
        gm = f"gm{d:02d}"
        nodes.append({"id": gm, "kind": "end_station", "domains": [d], "drift_ppm": format_fraction(Fraction(d - 16, 4))})
        links.append({"a": gm, "b": "br", "delay": f"{300 + 10 * d}ns"})
        domains.append({"number": d, "gm_candidates": [{"node": gm}]})
    for u in range(8):
        ue = f"ue{u}"
        nodes.append({"id": ue, "kind": "ue"})
        links.append({"a": "upf", "b": ue, "kind": "pdu-session"})
        links.append({"a": "gnb", "b": ue, "kind": "radio", "delay": f"{500 + 250 * u}ns"})
        for k in range(4):
            d = 4 * u + k
            es = f"es{d:02d}"
            drift = format_fraction(Fraction(10 * (1 if d % 2 else -1) * (d % 5 + 1), 5))
            nodes.append({"id": es, "kind": "end_station", "domains": [d], "drift_ppm": drift})
            links.append({"a": ue, "b": es, "delay": f"{100 + 20 * k}ns"})
    return {
        "name": "fig4_multidomain",
        "description": "32 working clock domains with separate GMs sharing one 5G virtual bridge; each end station subscribes to one",
        "topology": {"nodes": nodes, "links": links},
        "domains": domains,
        "fiveg": {},
        "scenario": {"duration": "4s", "seed": 4, "sampling_period": "50ms", "compliance_class": 1},
        "output": {"directory": "out/fig4_multidomain"},
    }


def class1(n_ue: int = 100) -> dict:
    nodes = [
        {"id": "gm", "kind": "end_station"},
        {"id": "br", "kind": "bridge", "drift_ppm": 5},
        {"id": "upf", "kind": "upf"},
        {"id": "gnb", "kind": "gnb"},
    ]
    links = [
        {"a": "gm", "b": "br", "delay": "500ns"},
        {"a": "br", "b": "upf", "delay": "1us"},
    ]
    for i in range(n_ue):
        ue, es = f"ue{i:03d}", f"dev{i:03d}"
        # device drifts spread evenly over [-10, +10] ppm, both extremes included
        drift = Fraction(-10) + Fraction(20 * i, n_ue - 1)
        nodes.append({"id": ue, "kind": "ue"})
        nodes.append({"id": es, "kind": "end_station", "drift_ppm": format_fraction(drift)})
        links.append({"a": "upf", "b": ue, "kind": "pdu-session"})
        links.append({"a": "gnb", "b": ue, "kind": "radio", "delay": f"{100 + 29 * i}ns"})
        links.append({"a": ue, "b": es, "delay": f"{100 + 3 * i}ns"})
    return {
        "name": "class1_100ue",
        "description": "100 UEs behind one gNB, default 5GS error sources, devices drifting within +-10 ppm",
        "topology": {"nodes": nodes, "links": links},
        "domains": [{"number": 0, "gm_candidates": [{"node": "gm"}], "sync_interval": "125ms"}],
        "fiveg": {},
        "scenario": {"duration": "60s", "seed": 7, "sampling_period": "25ms", "compliance_class": 1},
        "output": {"directory": "out/class1_100ue"},
    }


def main() -> None:
    for doc in (failover(True), failover(False), multidomain(), class1()):
        parse_config(doc)  # refuse to write an invalid scenario
        path = OUT / f"{doc['name']}.json"
        path.write_text(json.dumps(doc, indent=1) + "\n", encoding="utf-8")
        print(f"wrote {path}")


if __name__ == "__main__":
    main()
