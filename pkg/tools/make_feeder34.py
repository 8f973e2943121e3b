"""Regenerate ``src/voltdac/data/feeder34.json``.

Branch table of the 34-node 11 kV radial feeder (Chis, Salama & Jayaram
1997). Node 1 of the table is the substation secondary; the added bus 0 is
the slack behind a short substation line. Impedances are multiplied by
IMPEDANCE_SCALE (weak rural-feeder variant; r/x ratios unchanged).
"""

import json
from pathlib import Path

IMPEDANCE_SCALE = 11.0
SUBSTATION = (0.02, 0.08)

BRANCHES = [
    (1, 2, 0.117, 0.048), (2, 3, 0.10725, 0.044), (3, 4, 0.16445, 0.04565),
    (4, 5, 0.1495, 0.0415), (5, 6, 0.1495, 0.0415), (6, 7, 0.3144, 0.054),
    (7, 8, 0.2096, 0.036), (8, 9, 0.3144, 0.054), (9, 10, 0.2096, 0.036),
    (10, 11, 0.131, 0.0225), (11, 12, 0.1048, 0.018), (3, 13, 0.1572, 0.027),
    (13, 14, 0.2096, 0.036), (14, 15, 0.1048, 0.018), (15, 16, 0.0524, 0.009),
    (6, 17, 0.1794, 0.0498), (17, 18, 0.16445, 0.04565), (18, 19, 0.2079, 0.0473),
    (19, 20, 0.189, 0.043), (20, 21, 0.189, 0.043), (21, 22, 0.262, 0.045),
    (22, 23, 0.262, 0.045), (23, 24, 0.3144, 0.054), (24, 25, 0.2096, 0.036),
    (25, 26, 0.131, 0.0225), (26, 27, 0.1048, 0.018), (7, 28, 0.1572, 0.027),
    (28, 29, 0.1572, 0.027), (29, 30, 0.1572, 0.027), (10, 31, 0.1572, 0.027),
    (31, 32, 0.2096, 0.036), (32, 33, 0.1572, 0.027), (33, 34, 0.1048, 0.018),
]

PV_SITES = [2, 3, 6, 10, 12, 13, 14, 16, 17, 19, 24, 31, 32, 34]


def main() -> None:
    lines = [(0, 1) + SUBSTATION] + BRANCHES
    doc = {
        "name": "feeder34",
        "notes": (
            "34-node 11 kV radial feeder topology and branch impedances with the "
            f"substation as bus 1 behind slack bus 0; impedances scaled by {IMPEDANCE_SCALE:g}."
        ),
        "v0_kv": 11.0,
        "buses": list(range(35)),
        "lines": [
            {"from": a, "to": b, "r_ohm": round(r * IMPEDANCE_SCALE, 6), "x_ohm": round(x * IMPEDANCE_SCALE, 6)}
            for a, b, r, x in lines
        ],
        "pv_sites": PV_SITES,
    }
    out = Path(__file__).resolve().parents[1] / "src" / "voltdac" / "data" / "feeder34.json"
    out.write_text(json.dumps(doc, indent=1) + "\n")
    print(f"wrote {out}")


if __name__ == "__main__":
    main()
