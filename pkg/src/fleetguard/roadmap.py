"""Road graph loading and offline preprocessing.

A roadmap file lists junctions and roads. Loading it builds, for every road,
a list of points sampled 1 m apart along its polyline (with the local
bearing), the road's bounding box, the junction -> roads adjacency and the
road-pair -> junction dictionary used when a vehicle moves between roads.
"""

from __future__ import annotations

import bisect
import json
import math
from dataclasses import dataclass, field
from itertools import permutations
from pathlib import Path
from typing import NamedTuple

import numpy as np

from .geo import GeoPoint, bearing, haversine, haversine_many

# Roads' [min, max] boxes are grown by this much per axis before containment.
BBOX_MARGIN_DEG = 0.0001
# Relative disagreement allowed between length_m and polyline arc length.
LENGTH_TOLERANCE = 0.01
# Road endpoints must sit this close to their junctions.
ENDPOINT_TOLERANCE_M = 1.0
# Distances closer than this count as a tie (resolved by lowest index / id).
TIE_EPS_M = 1e-6
# Vectorized prefilter window; exact scalar distances decide inside it.
_PREFILTER_M = 1e-4

CACHE_FORMAT = "fleetguard-preprocessed-roadmap/1"


class RoadmapError(ValueError):
    """Base class for roadmap loading failures."""


class RoadmapParseError(RoadmapError):
    pass


class RoadmapValidationError(RoadmapError):
    pass


class SamplePoint(NamedTuple):
    lat: float
    lon: float
    bearing: float


@dataclass(frozen=True)
class Junction:
    id: str
    loc: GeoPoint


@dataclass(frozen=True)
class Road:
    id: str
    from_junction: str
    to_junction: str
    length_m: float
    max_speed_mps: float
    polyline: tuple[GeoPoint, ...]
    samples: tuple[SamplePoint, ...]
    bbox_min: GeoPoint
    bbox_max: GeoPoint
    _lats: np.ndarray = field(init=False, repr=False, compare=False)
    _lons: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        arr = np.array([(s.lat, s.lon) for s in self.samples], dtype=float).reshape(-1, 2)
        object.__setattr__(self, "_lats", arr[:, 0].copy())
        object.__setattr__(self, "_lons", arr[:, 1].copy())

    def sample_loc(self, index: int) -> GeoPoint:
        s = self.samples[index]
        return GeoPoint(s.lat, s.lon)


@dataclass(frozen=True)
class RoadGraph:
    junctions: dict[str, Junction]
    roads: dict[str, Road]
    adjacency: dict[str, frozenset[str]]
    road_pair_junction: dict[tuple[str, str], str]
    _road_ids: tuple[str, ...] = field(init=False, repr=False, compare=False)
    _boxes: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        ids = tuple(self.roads)
        boxes = np.array(
            [
                (r.bbox_min.lat, r.bbox_min.lon, r.bbox_max.lat, r.bbox_max.lon)
                for r in self.roads.values()
            ],
            dtype=float,
        ).reshape(-1, 4)
        object.__setattr__(self, "_road_ids", ids)
        object.__setattr__(self, "_boxes", boxes)

    @property
    def sample_count(self) -> int:
        return sum(len(r.samples) for r in self.roads.values())

    def is_dead_end(self, road_id: str) -> bool:
        """True if either end of the road is a junction with no other road."""
        road = self.roads[road_id]
        return any(
            len(self.adjacency[j]) == 1 for j in (road.from_junction, road.to_junction)
        )


def polyline_length(polyline) -> float:
    return sum(
        haversine(a.lat, a.lon, b.lat, b.lon) for a, b in zip(polyline, polyline[1:])
    )


def sample_road(polyline, length_m: float) -> list[SamplePoint]:
    """Sample ``floor(length_m) + 1`` points evenly along the polyline.

    The spacing is ``arc / length_m`` so that it is exactly 1 m when the
    declared length matches the geometry and stays within 1% otherwise. A
    point landing on an interior vertex takes the outgoing segment's bearing;
    the final point takes the incoming one.
    """
    if length_m <= 0:
        raise RoadmapValidationError(f"length must be positive, got {length_m!r}")
    pts = [polyline[0]]
    for p in polyline[1:]:
        if (p.lat, p.lon) != (pts[-1].lat, pts[-1].lon):
            pts.append(p)
    if len(pts) < 2:
        raise RoadmapValidationError("degenerate polyline: all points identical")

    seg_len = [haversine(a.lat, a.lon, b.lat, b.lon) for a, b in zip(pts, pts[1:])]
    seg_brg = [bearing(a.lat, a.lon, b.lat, b.lon) for a, b in zip(pts, pts[1:])]
    cum = [0.0]
    for s in seg_len:
        cum.append(cum[-1] + s)
    arc = cum[-1]
    if arc <= 0:
        raise RoadmapValidationError("degenerate polyline: zero arc length")

    n = math.floor(length_m) + 1
    spacing = arc / length_m
    last_seg = len(seg_len) - 1
    out = []
    for k in range(n):
        s = min(k * spacing, arc)
        i = min(bisect.bisect_right(cum, s + 1e-9) - 1, last_seg)
        frac = (s - cum[i]) / seg_len[i]
        frac = min(max(frac, 0.0), 1.0)
        a, b = pts[i], pts[i + 1]
        out.append(
            SamplePoint(
                a.lat + frac * (b.lat - a.lat),
                a.lon + frac * (b.lon - a.lon),
                seg_brg[i],
            )
        )
    return out


def nearest_sample(road: Road, p: GeoPoint) -> tuple[int, float]:
    """Index of the sample closest to ``p`` and its distance (lowest index on ties)."""
    d = haversine_many(p.lat, p.lon, road._lats, road._lons)
    window = np.flatnonzero(d <= d.min() + _PREFILTER_M)
    exact = [
        (i, haversine(p.lat, p.lon, road.samples[i].lat, road.samples[i].lon))
        for i in window.tolist()
    ]
    best = min(e for _, e in exact)
    for i, e in exact:
        if e <= best + TIE_EPS_M:
            return i, e
    raise AssertionError("unreachable")


def candidate_roads(graph: RoadGraph, p: GeoPoint, margin: float = BBOX_MARGIN_DEG) -> list[str]:
    """Roads whose margin-expanded bounding box contains ``p``."""
    if not graph.roads:
        return []
    b = graph._boxes
    hit = (
        (b[:, 0] - margin <= p.lat)
        & (p.lat <= b[:, 2] + margin)
        & (b[:, 1] - margin <= p.lon)
        & (p.lon <= b[:, 3] + margin)
    )
    return [graph._road_ids[i] for i in np.flatnonzero(hit).tolist()]


# ---------------------------------------------------------------------------
# building and (de)serialization


def _build(junctions: dict[str, Junction], roads: dict[str, Road]) -> RoadGraph:
    adjacency: dict[str, set[str]] = {jid: set() for jid in junctions}
    for r in roads.values():
        adjacency[r.from_junction].add(r.id)
        adjacency[r.to_junction].add(r.id)
    pair: dict[tuple[str, str], str] = {}
    for jid in junctions:
        for a, b in permutations(sorted(adjacency[jid]), 2):
            pair[(a, b)] = jid
    return RoadGraph(
        junctions=junctions,
        roads=roads,
        adjacency={j: frozenset(s) for j, s in adjacency.items()},
        road_pair_junction=pair,
    )


def _field(obj: dict, key: str, where: str):
    if not isinstance(obj, dict) or key not in obj:
        raise RoadmapValidationError(f"{where}: missing field '{key}'")
    return obj[key]


def _number(value, where: str) -> float:
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise RoadmapValidationError(f"{where}: expected a number, got {value!r}")
    value = float(value)
    if not math.isfinite(value):
        raise RoadmapValidationError(f"{where}: not finite")
    return value


def _point(lat, lon, where: str) -> GeoPoint:
    try:
        return GeoPoint(_number(lat, where + ".lat"), _number(lon, where + ".lon"))
    except RoadmapError:
        raise
    except ValueError as exc:
        raise RoadmapValidationError(f"{where}: {exc}") from None


def build_graph(doc: dict) -> RoadGraph:
    """Validate a roadmap document and preprocess it into a :class:`RoadGraph`."""
    if not isinstance(doc, dict):
        raise RoadmapValidationError("roadmap: top level must be an object")
    raw_junctions = _field(doc, "junctions", "roadmap")
    raw_roads = _field(doc, "roads", "roadmap")
    if not isinstance(raw_junctions, list) or not isinstance(raw_roads, list):
        raise RoadmapValidationError("roadmap: 'junctions' and 'roads' must be lists")

    junctions: dict[str, Junction] = {}
    for n, j in enumerate(raw_junctions):
        where = f"junctions[{n}]"
        jid = str(_field(j, "id", where))
        if jid in junctions:
            raise RoadmapValidationError(f"{where}.id: duplicate junction id {jid!r}")
        junctions[jid] = Junction(jid, _point(_field(j, "lat", where), _field(j, "lon", where), where))

    roads: dict[str, Road] = {}
    for n, r in enumerate(raw_roads):
        where = f"roads[{n}]"
        rid = str(_field(r, "id", where))
        if rid in roads:
            raise RoadmapValidationError(f"{where}.id: duplicate road id {rid!r}")
        ends = []
        for key in ("from", "to"):
            jid = str(_field(r, key, where))
            if jid not in junctions:
                raise RoadmapValidationError(f"{where}.{key}: unknown junction {jid!r}")
            ends.append(jid)
        length = _number(_field(r, "length_m", where), where + ".length_m")
        if length <= 0:
            raise RoadmapValidationError(f"{where}.length_m: must be positive")
        speed = _number(_field(r, "max_speed_mps", where), where + ".max_speed_mps")
        if speed <= 0:
            raise RoadmapValidationError(f"{where}.max_speed_mps: must be positive")
        raw_poly = _field(r, "polyline", where)
        if not isinstance(raw_poly, list) or len(raw_poly) < 2:
            raise RoadmapValidationError(f"{where}.polyline: needs at least 2 points")
        poly = []
        for k, pt in enumerate(raw_poly):
            if not isinstance(pt, (list, tuple)) or len(pt) != 2:
                raise RoadmapValidationError(f"{where}.polyline[{k}]: expected [lat, lon]")
            poly.append(_point(pt[0], pt[1], f"{where}.polyline[{k}]"))
        arc = polyline_length(poly)
        if arc <= 0:
            raise RoadmapValidationError(f"{where}.polyline: degenerate (zero length)")
        if abs(arc - length) / arc >= LENGTH_TOLERANCE:
            raise RoadmapValidationError(
                f"{where}.length_m: {length} disagrees with polyline arc {arc:.3f} by >= 1%"
            )
        for jid, end in zip(ends, (poly[0], poly[-1])):
            loc = junctions[jid].loc
            if haversine(loc.lat, loc.lon, end.lat, end.lon) > ENDPOINT_TOLERANCE_M:
                raise RoadmapValidationError(
                    f"{where}.polyline: endpoint is more than 1 m from junction {jid!r}"
                )
        samples = tuple(sample_road(poly, length))
        roads[rid] = Road(
            id=rid,
            from_junction=ends[0],
            to_junction=ends[1],
            length_m=length,
            max_speed_mps=speed,
            polyline=tuple(poly),
            samples=samples,
            bbox_min=GeoPoint(min(p.lat for p in poly), min(p.lon for p in poly)),
            bbox_max=GeoPoint(max(p.lat for p in poly), max(p.lon for p in poly)),
        )

    junctions = {k: junctions[k] for k in sorted(junctions)}
    roads = {k: roads[k] for k in sorted(roads)}
    return _build(junctions, roads)


def load_roadmap(path) -> RoadGraph:
    """Read a roadmap JSON file and return the preprocessed graph."""
    doc = _read_json(path)
    if isinstance(doc, dict) and doc.get("format") == CACHE_FORMAT:
        return graph_from_cache(doc)
    return build_graph(doc)


def _read_json(path):
    try:
        with open(path, encoding="utf-8") as fh:
            return json.load(fh)
    except json.JSONDecodeError as exc:
        raise RoadmapParseError(f"{path}: malformed JSON ({exc})") from None
    except UnicodeDecodeError as exc:
        raise RoadmapParseError(f"{path}: not UTF-8 ({exc})") from None


def graph_to_cache(graph: RoadGraph) -> dict:
    """Preprocessed form: everything needed to skip resampling on load."""
    return {
        "format": CACHE_FORMAT,
        "junctions": [
            {"id": j.id, "lat": j.loc.lat, "lon": j.loc.lon} for j in graph.junctions.values()
        ],
        "roads": [
            {
                "id": r.id,
                "from": r.from_junction,
                "to": r.to_junction,
                "length_m": r.length_m,
                "max_speed_mps": r.max_speed_mps,
                "polyline": [[p.lat, p.lon] for p in r.polyline],
                "samples": [list(s) for s in r.samples],
            }
            for r in graph.roads.values()
        ],
        "adjacency": {j: sorted(rs) for j, rs in graph.adjacency.items()},
        "road_pair_junction": [
            [a, b, j] for (a, b), j in sorted(graph.road_pair_junction.items())
        ],
    }


def graph_from_cache(doc: dict) -> RoadGraph:
    try:
        junctions = {
            str(j["id"]): Junction(str(j["id"]), GeoPoint(j["lat"], j["lon"]))
            for j in doc["junctions"]
        }
        roads = {}
        for r in doc["roads"]:
            poly = tuple(GeoPoint(a, b) for a, b in r["polyline"])
            roads[str(r["id"])] = Road(
                id=str(r["id"]),
                from_junction=str(r["from"]),
                to_junction=str(r["to"]),
                length_m=float(r["length_m"]),
                max_speed_mps=float(r["max_speed_mps"]),
                polyline=poly,
                samples=tuple(SamplePoint(*s) for s in r["samples"]),
                bbox_min=GeoPoint(min(p.lat for p in poly), min(p.lon for p in poly)),
                bbox_max=GeoPoint(max(p.lat for p in poly), max(p.lon for p in poly)),
            )
        graph = RoadGraph(
            junctions=junctions,
            roads=roads,
            adjacency={j: frozenset(rs) for j, rs in doc["adjacency"].items()},
            road_pair_junction={(a, b): j for a, b, j in doc["road_pair_junction"]},
        )
    except (KeyError, TypeError, ValueError) as exc:
        raise RoadmapValidationError(f"preprocessed roadmap: {exc!r}") from None
    return graph


def write_cache(graph: RoadGraph, path) -> None:
    Path(path).write_text(json.dumps(graph_to_cache(graph), sort_keys=True) + "\n", encoding="utf-8")
