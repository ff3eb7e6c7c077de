"""Generators for the bundled roadmaps.

``grid`` is a 5x5 lattice with 200 m blocks used by the oracle tests.
``district`` is an irregular network (jittered junctions, curved roads,
missing links, cul-de-sacs and a few diagonals) used for scale tests.
Both are written to ``fleetguard/data`` by ``python -m fleetguard.maps``.
"""

from __future__ import annotations

import json
import math
from importlib import resources
from pathlib import Path

import numpy as np

from .geo import bearing, haversine, offset

SPEEDS = (8.0, 11.1, 13.9, 16.7, 19.4, 22.2, 25.0)

BUNDLED = {"grid": "grid5x5.json", "district": "district.json"}


def bundled_path(name: str) -> Path:
    return Path(str(resources.files("fleetguard") / "data" / BUNDLED[name]))


def _road(rid, a, b, poly, speed):
    return {
        "id": rid,
        "from": a,
        "to": b,
        "length_m": round(polyline_length_raw(poly), 3),
        "max_speed_mps": speed,
        "polyline": [[lat, lon] for lat, lon in poly],
    }


def polyline_length_raw(poly) -> float:
    return sum(haversine(*a, *b) for a, b in zip(poly, poly[1:]))


def make_grid(n: int = 5, spacing_m: float = 200.0, origin=(1.3000, 103.8000)) -> dict:
    """n x n junction lattice; junction ``J{row}{col}``, roads ``H..``/``V..``."""
    lat0, lon0 = origin
    loc = {}
    junctions = []
    for i in range(n):
        for j in range(n):
            jid = f"J{i}{j}"
            loc[jid] = offset(lat0, lon0, j * spacing_m, i * spacing_m)
            junctions.append({"id": jid, "lat": loc[jid][0], "lon": loc[jid][1]})
    roads = []
    k = 0
    for i in range(n):
        for j in range(n - 1):
            a, b = f"J{i}{j}", f"J{i}{j + 1}"
            roads.append(_road(f"H{i}{j}", a, b, [loc[a], loc[b]], SPEEDS[k % len(SPEEDS)]))
            k += 1
    for i in range(n - 1):
        for j in range(n):
            a, b = f"J{i}{j}", f"J{i + 1}{j}"
            roads.append(_road(f"V{i}{j}", a, b, [loc[a], loc[b]], SPEEDS[k % len(SPEEDS)]))
            k += 1
    return {"junctions": junctions, "roads": roads}


def _curve(a, b, sag_m, n_mid=4):
    """Polyline from a to b bowed sideways by ``sag_m`` at the middle."""
    lat_a, lon_a = a
    lat_b, lon_b = b
    length = haversine(lat_a, lon_a, lat_b, lon_b)
    brg = math.radians(bearing(lat_a, lon_a, lat_b, lon_b))
    pts = [a]
    for k in range(1, n_mid + 1):
        t = k / (n_mid + 1)
        along = t * length
        side = sag_m * math.sin(math.pi * t)
        east = along * math.sin(brg) + side * math.cos(brg)
        north = along * math.cos(brg) - side * math.sin(brg)
        pts.append(offset(lat_a, lon_a, east, north))
    pts.append(b)
    return pts


def _min_junction_angle(roads, jid) -> float:
    brgs = []
    for r in roads:
        poly = r["polyline"]
        if r["from"] == jid:
            brgs.append(bearing(*poly[0], *poly[1]))
        if r["to"] == jid:
            brgs.append(bearing(*poly[-1], *poly[-2]))
    best = 360.0
    for x in range(len(brgs)):
        for y in range(x + 1, len(brgs)):
            diff = abs(brgs[x] - brgs[y]) % 360.0
            best = min(best, diff, 360.0 - diff)
    return best


def make_district(seed: int = 2024, n: int = 7, origin=(1.2900, 103.8400)) -> dict:
    rng = np.random.default_rng(seed)
    lat0, lon0 = origin
    xs = np.concatenate([[0.0], np.cumsum(rng.uniform(130, 250, n - 1))])
    ys = np.concatenate([[0.0], np.cumsum(rng.uniform(130, 250, n - 1))])
    loc = {}
    for i in range(n):
        for j in range(n):
            east = xs[j] + rng.uniform(-20, 20)
            north = ys[i] + rng.uniform(-20, 20)
            loc[f"N{i}{j}"] = offset(lat0, lon0, east, north)

    edges = []
    for i in range(n):
        for j in range(n - 1):
            edges.append((f"N{i}{j}", f"N{i}{j + 1}"))
    for i in range(n - 1):
        for j in range(n):
            edges.append((f"N{i}{j}", f"N{i + 1}{j}"))
    # drop a handful of links but keep every junction at degree >= 2
    degree = {k: 0 for k in loc}
    for a, b in edges:
        degree[a] += 1
        degree[b] += 1
    kept = []
    for a, b in edges:
        if rng.random() < 0.12 and degree[a] > 2 and degree[b] > 2:
            degree[a] -= 1
            degree[b] -= 1
            continue
        kept.append((a, b))

    roads = []
    for k, (a, b) in enumerate(kept):
        sag = rng.uniform(-8, 8)
        poly = _curve(loc[a], loc[b], sag)
        roads.append(_road(f"R{k:03d}", a, b, poly, float(rng.choice(SPEEDS))))

    # diagonals across some blocks, only when the corners stay well separated
    k = len(roads)
    for i in range(n - 1):
        for j in range(n - 1):
            if rng.random() >= 0.15:
                continue
            a, b = f"N{i}{j}", f"N{i + 1}{j + 1}"
            cand = _road(f"R{k:03d}", a, b, [loc[a], loc[b]], float(rng.choice(SPEEDS)))
            trial = roads + [cand]
            if min(_min_junction_angle(trial, a), _min_junction_angle(trial, b)) >= 40.0:
                roads.append(cand)
                k += 1

    # cul-de-sacs hanging off the outer ring
    junctions = dict(loc)
    spurs = 0
    for i in range(n):
        for j in (0, n - 1):
            if rng.random() >= 0.4:
                continue
            base = f"N{i}{j}"
            east = -1.0 if j == 0 else 1.0
            length = rng.uniform(60, 110)
            end = offset(*loc[base], east * length, rng.uniform(-10, 10))
            sid = f"S{spurs}"
            junctions[sid] = end
            roads.append(_road(f"R{k:03d}", base, sid, [loc[base], end], float(rng.choice(SPEEDS[:3]))))
            k += 1
            spurs += 1

    for jid in junctions:
        touching = [r for r in roads if jid in (r["from"], r["to"])]
        if len(touching) > 1:
            assert _min_junction_angle(touching, jid) >= 40.0, jid
    return {
        "junctions": [{"id": jid, "lat": p[0], "lon": p[1]} for jid, p in junctions.items()],
        "roads": roads,
    }


def write_bundled(out_dir=None) -> None:
    out = Path(out_dir) if out_dir else Path(__file__).parent / "data"
    out.mkdir(parents=True, exist_ok=True)
    for name, doc in (("grid", make_grid()), ("district", make_district())):
        (out / BUNDLED[name]).write_text(json.dumps(doc, indent=1) + "\n", encoding="utf-8")


if __name__ == "__main__":
    write_bundled()
