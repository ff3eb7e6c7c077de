"""Seeded trip generation and the per-second experiment loop.

Vehicles random-walk the road graph (turning at junctions, U-turning only
at dead ends) and report their position once per second. Each packet goes
through the configured attackers, over the wire encoding, and into the
:class:`~fleetguard.detector.Detector`. Vehicles with an open
authentication window sign what they send.
"""

from __future__ import annotations

import bisect
import csv
import io
import json
import math
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .attacker import AttackScenario, Attacker, scenario_from_json
from .detector import DEFAULT_T_AUTH, Detector
from .geo import GeoPoint, bearing, haversine, offset
from .maps import BUNDLED, bundled_path
from .packets import LocationPacket, derive_keys, deserialize, serialize, sign
from .roadmap import RoadGraph, candidate_roads, load_roadmap

# 2024-05-09 11:05:24 UTC
DEFAULT_EPOCH_MS = 1_715_252_724_000
FIRST_VEHICLE_ID = 10010
# A vehicle this close (along the road) to a junction reports the junction area.
JUNCTION_REPORT_M = 2.0
SPEED_JITTER = 0.05

CSV_COLUMNS = [
    "vehicle_id",
    "timestamp",
    "case_used",
    "d",
    "max_dist",
    "e_value",
    "flagged",
    "reason",
    "auth_remaining",
    "attacked",
]


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class TripPoint:
    lat: float
    lon: float
    bearing: float
    road: str
    near_junction: str | None
    speed: float  # mean speed over the preceding second, m/s


@dataclass
class Trip:
    vehicle_id: int
    start_time: int
    route: list[str]
    points: list[TripPoint]
    truncated: bool = False

    @property
    def duration_s(self) -> int:
        return len(self.points) - 1

    def packet(self, tick: int) -> LocationPacket:
        pt = self.points[tick]
        return LocationPacket(self.vehicle_id, pt.lat, pt.lon, pt.bearing, self.start_time + 1000 * tick)


# ---------------------------------------------------------------------------
# geometry along a road


def _arc_table(road) -> list[float]:
    cum = [0.0]
    for a, b in zip(road.polyline, road.polyline[1:]):
        cum.append(cum[-1] + haversine(a.lat, a.lon, b.lat, b.lon))
    return cum


def point_on_road(road, cum: list[float], s: float) -> tuple[float, float, float]:
    """lat, lon and forward bearing at arc position ``s`` from the road's start."""
    s = min(max(s, 0.0), cum[-1])
    i = min(bisect.bisect_right(cum, s) - 1, len(cum) - 2)
    while i < len(cum) - 2 and cum[i + 1] - cum[i] <= 0:
        i += 1
    seg = cum[i + 1] - cum[i]
    frac = 0.0 if seg <= 0 else (s - cum[i]) / seg
    a, b = road.polyline[i], road.polyline[i + 1]
    return (
        a.lat + frac * (b.lat - a.lat),
        a.lon + frac * (b.lon - a.lon),
        bearing(a.lat, a.lon, b.lat, b.lon),
    )


def junction_vicinity(graph: RoadGraph, radii=(15.0, 20.0, 25.0)) -> dict[str, GeoPoint]:
    """A reporting point inside each junction's area that lies off every road box.

    Fixes reported there match no road, so the detector has to reason through
    the junction. Junctions without such a point are absent from the result.
    """
    angles = [45.0, 135.0, 225.0, 315.0, 0.0, 90.0, 180.0, 270.0]
    angles += [a + 22.5 for a in range(0, 360, 45)]
    out = {}
    for jid, j in graph.junctions.items():
        for r in radii:
            found = None
            for a in angles:
                lat, lon = offset(j.loc.lat, j.loc.lon, r * math.sin(math.radians(a)), r * math.cos(math.radians(a)))
                p = GeoPoint(lat, lon)
                if candidate_roads(graph, p):
                    continue
                nearest = min(
                    graph.junctions.values(),
                    key=lambda k: (haversine(k.loc.lat, k.loc.lon, lat, lon), k.id),
                )
                if nearest.id == jid:
                    found = p
                    break
            if found:
                out[jid] = found
                break
    return out


# ---------------------------------------------------------------------------
# trips


def generate_trip(
    graph: RoadGraph,
    seed,
    duration_s: int,
    speed_factor: float,
    vehicle_id: int = FIRST_VEHICLE_ID,
    start_time: int = DEFAULT_EPOCH_MS,
    jitter: float = SPEED_JITTER,
    vicinity: dict[str, GeoPoint] | None = None,
) -> Trip:
    """Random walk of ``duration_s`` seconds, one reported point per second.

    Each second the vehicle drives at ``speed_factor`` (plus uniform jitter of
    +-``jitter``) times the limit of whatever road it is on, clamped to the
    limit.
    """
    if not 0 < speed_factor <= 1:
        raise ValueError("speed_factor must be in (0, 1]")
    if duration_s < 0:
        raise ValueError("duration must be non-negative")
    if not graph.roads:
        raise ValueError("graph has no roads")
    if vicinity is None:
        vicinity = junction_vicinity(graph)
    rng = np.random.default_rng(seed)
    road_ids = list(graph.roads)
    cums = {}

    def cum_of(rid):
        if rid not in cums:
            cums[rid] = _arc_table(graph.roads[rid])
        return cums[rid]

    cur = road_ids[int(rng.integers(len(road_ids)))]
    length = cum_of(cur)[-1]
    s = float(rng.uniform(0.25, 0.75)) * length
    direction = 1 if rng.random() < 0.5 else -1
    route = [cur]

    def report(speed):
        road = graph.roads[cur]
        lat, lon, brg = point_on_road(road, cum_of(cur), s)
        if direction < 0:
            brg = (brg + 180.0) % 360.0
        total = cum_of(cur)[-1]
        near = None
        if s <= JUNCTION_REPORT_M:
            near = road.from_junction
        elif total - s <= JUNCTION_REPORT_M:
            near = road.to_junction
        if near is not None and near in vicinity:
            v = vicinity[near]
            lat, lon = v.lat, v.lon
        else:
            near = None
        return TripPoint(lat, lon, brg, cur, near, speed)

    points = [report(0.0)]
    for _ in range(duration_s):
        frac = min(max(speed_factor + rng.uniform(-jitter, jitter), 0.05), 1.0)
        tau = 1.0
        travelled = 0.0
        while tau > 1e-12:
            road = graph.roads[cur]
            v = frac * road.max_speed_mps
            total = cum_of(cur)[-1]
            remaining = total - s if direction > 0 else s
            if v * tau < remaining:
                s += direction * v * tau
                travelled += v * tau
                break
            travelled += remaining
            tau -= remaining / v
            junction = road.to_junction if direction > 0 else road.from_junction
            options = sorted(graph.adjacency[junction] - {cur}) or [cur]
            cur = options[int(rng.integers(len(options)))]
            nxt = graph.roads[cur]
            if nxt.from_junction == junction:
                direction, s = 1, 0.0
            else:
                direction, s = -1, cum_of(cur)[-1]
            route.append(cur)
        points.append(report(travelled))
    return Trip(vehicle_id, start_time, route, points)


# ---------------------------------------------------------------------------
# configuration


@dataclass
class SimConfig:
    map: str = "grid"
    trips: int = 10
    duration_s: int = 600
    seed: int = 0
    speed_factor: float = 0.6
    drop_probability: float = 0.0
    t_auth: int = DEFAULT_T_AUTH
    epoch_ms: int = DEFAULT_EPOCH_MS
    scenarios: list[AttackScenario] = field(default_factory=list)
    base_dir: str = "."

    def validate(self) -> None:
        if self.trips < 0:
            raise ConfigError("trips: must be non-negative")
        if self.duration_s < 0:
            raise ConfigError("duration_s: must be non-negative")
        if not 0 < self.speed_factor <= 1:
            raise ConfigError("speed_factor: must be in (0, 1]")
        if not 0 <= self.drop_probability < 1:
            raise ConfigError("drop_probability: must be in [0, 1)")
        if self.t_auth < 0:
            raise ConfigError("t_auth: must be non-negative")
        horizon = self.duration_s * 1000
        for n, sc in enumerate(self.scenarios):
            if sc.start_time > horizon:
                raise ConfigError(f"scenarios[{n}].start_time_ms: beyond the {horizon} ms horizon")

    def map_path(self) -> Path:
        if self.map in BUNDLED:
            return bundled_path(self.map)
        p = Path(self.map)
        return p if p.is_absolute() else Path(self.base_dir) / p

    def vehicle_ids(self) -> list[int]:
        return [FIRST_VEHICLE_ID + i for i in range(self.trips)]

    def to_json(self) -> dict:
        return {
            "map": self.map,
            "trips": self.trips,
            "duration_s": self.duration_s,
            "seed": self.seed,
            "speed_factor": self.speed_factor,
            "drop_probability": self.drop_probability,
            "t_auth": self.t_auth,
            "epoch_ms": self.epoch_ms,
            "scenarios": [s.to_json() for s in self.scenarios],
        }


_CONFIG_TYPES = {
    "map": str,
    "trips": int,
    "duration_s": int,
    "seed": int,
    "speed_factor": float,
    "drop_probability": float,
    "t_auth": int,
    "epoch_ms": int,
}


def config_from_json(doc: dict, base_dir=".") -> SimConfig:
    if not isinstance(doc, dict):
        raise ConfigError("config: top level must be an object")
    unknown = set(doc) - set(_CONFIG_TYPES) - {"scenarios"}
    if unknown:
        raise ConfigError(f"config: unknown field(s) {sorted(unknown)}")
    kw = {}
    for key, typ in _CONFIG_TYPES.items():
        if key not in doc:
            continue
        value = doc[key]
        if typ is int and (isinstance(value, bool) or not isinstance(value, int)):
            raise ConfigError(f"{key}: expected an integer, got {value!r}")
        if typ is float and (isinstance(value, bool) or not isinstance(value, (int, float))):
            raise ConfigError(f"{key}: expected a number, got {value!r}")
        if typ is str and not isinstance(value, str):
            raise ConfigError(f"{key}: expected a string, got {value!r}")
        kw[key] = typ(value)
    scenarios = []
    for n, sdoc in enumerate(doc.get("scenarios", [])):
        try:
            scenarios.append(scenario_from_json(sdoc))
        except ValueError as exc:
            raise ConfigError(f"scenarios[{n}]: {exc}") from None
    cfg = SimConfig(scenarios=scenarios, base_dir=str(base_dir), **kw)
    cfg.validate()
    return cfg


def load_config(path) -> SimConfig:
    path = Path(path)
    try:
        doc = json.loads(path.read_text(encoding="utf-8"))
    except FileNotFoundError:
        raise ConfigError(f"{path}: no such config file") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: malformed JSON ({exc})") from None
    return config_from_json(doc, base_dir=path.parent)


# ---------------------------------------------------------------------------
# experiment


@dataclass
class RunReport:
    config: dict
    rows: list[dict]
    trips: list[dict]
    attacks: list[dict]
    warnings: list[str]

    @property
    def summary(self) -> dict:
        return summarize(self.rows)

    def to_json(self) -> dict:
        return {
            "config": self.config,
            "summary": self.summary,
            "trips": self.trips,
            "attacks": self.attacks,
            "warnings": self.warnings,
        }


def generate_trips(graph: RoadGraph, cfg: SimConfig) -> list[Trip]:
    vicinity = junction_vicinity(graph)
    return [
        generate_trip(
            graph,
            seed=[cfg.seed, vid],
            duration_s=cfg.duration_s,
            speed_factor=cfg.speed_factor,
            vehicle_id=vid,
            start_time=cfg.epoch_ms,
            vicinity=vicinity,
        )
        for vid in cfg.vehicle_ids()
    ]


def run_experiment(graph: RoadGraph, trips: list[Trip], scenarios, cfg: SimConfig) -> RunReport:
    trips = sorted(trips, key=lambda t: t.vehicle_id)
    vids = [t.vehicle_id for t in trips]
    if len(set(vids)) != len(vids):
        raise ConfigError("trips: duplicate vehicle ids")
    for n, sc in enumerate(scenarios):
        if sc.target_vehicle not in vids:
            raise ConfigError(f"scenarios[{n}].target: unknown vehicle {sc.target_vehicle}")

    keys = derive_keys(vids, seed=cfg.seed)
    detector = Detector(graph, keys, t_auth=cfg.t_auth)
    attackers = [Attacker(sc, origin_ms=cfg.epoch_ms) for sc in scenarios]
    by_target: dict[int, list[Attacker]] = {}
    for a in attackers:
        by_target.setdefault(a.scenario.target_vehicle, []).append(a)
    drop_rng = {vid: np.random.default_rng([cfg.seed, vid, 1]) for vid in vids}

    rows: list[dict] = []
    def deliver(p: LocationPacket, attacked: bool) -> None:
        received = deserialize(serialize(p))
        outcome = detector.process_packet(received)
        row = outcome.record()
        row["attacked"] = int(attacked)
        rows.append(row)

    n_ticks = max((len(t.points) for t in trips), default=0)
    for tick in range(n_ticks):
        now = cfg.epoch_ms + 1000 * tick
        for trip in trips:
            if tick >= len(trip.points):
                continue
            vid = trip.vehicle_id
            if tick > 0 and cfg.drop_probability and drop_rng[vid].random() < cfg.drop_probability:
                continue
            pkt = trip.packet(tick)
            if detector.auth_remaining(vid) > 0:
                pkt = sign(pkt, keys[vid])
            out = [pkt]
            for atk in by_target.get(vid, ()):
                out = [q for o in out for q in atk.intercept(o, now)]
            for q in out:
                deliver(q, attacked=q is not pkt)
        for atk in attackers:
            for q in atk.release(now):
                deliver(q, attacked=True)

    trip_rows = []
    per_vehicle = _group(rows)
    for trip in trips:
        mine = per_vehicle.get(str(trip.vehicle_id), [])
        trip_rows.append(
            {
                "vehicle_id": trip.vehicle_id,
                "packets": len(mine),
                "max_e": _max_e(mine),
                "roads_visited": len(trip.route),
                "truncated": trip.truncated,
            }
        )
    attacks = []
    for n, atk in enumerate(attackers):
        attacks.append(
            {
                "scenario": n,
                **atk.scenario.to_json(),
                "injected": atk.fired,
                "skipped": atk.skipped,
                "interval_estimate_ms": atk.interval_estimate(),
                "detection_latency": _latency(
                    per_vehicle.get(str(atk.scenario.target_vehicle), []), atk.first_injection
                ),
            }
        )
    warnings = [f"vehicle {t.vehicle_id}: trip shorter than requested" for t in trips if t.truncated]
    return RunReport(cfg.to_json(), rows, trip_rows, attacks, warnings)


# ---------------------------------------------------------------------------
# summaries (shared by simulate and evaluate)


def _group(rows) -> dict[str, list[dict]]:
    out: dict[str, list[dict]] = {}
    for r in rows:
        out.setdefault(str(r["vehicle_id"]), []).append(r)
    return out


def _max_e(rows) -> float | None:
    vals = [float(r["e_value"]) for r in rows if r["e_value"] not in ("", None)]
    return max(vals) if vals else None


def _truthy(v) -> bool:
    return str(v) in ("1", "True", "true")


def _latency(rows, since_ts: int | None = None) -> int | None:
    """Packets from the first attacked one up to and including the first flag."""
    start = None
    for n, r in enumerate(rows):
        if _truthy(r["attacked"]) and (since_ts is None or int(r["timestamp"]) >= since_ts):
            start = n
            break
    if start is None:
        return None
    for n in range(start, len(rows)):
        if _truthy(rows[n]["flagged"]):
            return n - start + 1
    return None


def summarize(rows) -> dict:
    flagged = [r for r in rows if _truthy(r["flagged"])]
    attacked = [r for r in rows if _truthy(r["attacked"])]
    per_vehicle = _group(rows)
    latencies = {}
    for vid, mine in sorted(per_vehicle.items()):
        if any(_truthy(r["attacked"]) for r in mine):
            latencies[vid] = _latency(mine)
    return {
        "vehicles": len(per_vehicle),
        "packets": len(rows),
        "flags": len(flagged),
        "attack_packets": len(attacked),
        "false_positives": sum(1 for r in flagged if not _truthy(r["attacked"])),
        "max_e": _max_e(rows),
        "max_e_attack_free": _max_e([r for r in rows if not _truthy(r["attacked"])]),
        "case_counts": dict(sorted(Counter(r["case_used"] for r in rows).items())),
        "reason_counts": dict(sorted(Counter(r["reason"] for r in flagged).items())),
        "detection_latency": latencies,
    }


# ---------------------------------------------------------------------------
# report files


def rows_to_csv(rows) -> str:
    buf = io.StringIO()
    w = csv.DictWriter(buf, fieldnames=CSV_COLUMNS, lineterminator="\n")
    w.writeheader()
    for r in rows:
        w.writerow(r)
    return buf.getvalue()


def read_csv(path) -> list[dict]:
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        missing = set(CSV_COLUMNS) - set(reader.fieldnames or [])
        if missing:
            raise ValueError(f"{path}: missing column(s) {sorted(missing)}")
        return list(reader)


def write_report(report: RunReport, out_dir) -> tuple[Path, Path]:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    json_path = out / "report.json"
    csv_path = out / "outcomes.csv"
    json_path.write_text(json.dumps(report.to_json(), indent=2, sort_keys=True) + "\n", encoding="utf-8")
    csv_path.write_text(rows_to_csv(report.rows), encoding="utf-8")
    return json_path, csv_path


def simulate(cfg: SimConfig) -> RunReport:
    graph = load_roadmap(cfg.map_path())
    trips = generate_trips(graph, cfg)
    return run_experiment(graph, trips, cfg.scenarios, cfg)
