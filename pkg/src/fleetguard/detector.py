"""Backend-side spoofing detection and the authentication window.

Every location packet is compared with the vehicle's last accepted position
through the road graph. The distance ``d`` the vehicle must have covered is
measured along the matched roads (same road, two roads sharing a junction,
or via a junction on either side), and the packet is flagged when
``d / max_dist > 1`` where ``max_dist`` is the speed limit of the roads
involved times the time since the last packet. Positions that cannot be
placed on the graph at all are flagged outright. A flag opens an
authentication window: the next ``t_auth`` packets of that vehicle must
carry a valid HMAC tag.
"""

from __future__ import annotations

import threading
from dataclasses import dataclass, field
from enum import Enum

from .geo import GeoPoint, distance, haversine
from .packets import TAG_SIZE, LocationPacket, VehicleKey, verify
from .roadmap import TIE_EPS_M, RoadGraph, candidate_roads, nearest_sample

AT_JUNCTION = "@junction"
DEFAULT_T_AUTH = 10
JUNCTION_RADIUS_M = 30.0


class Case(str, Enum):
    SAME_ROAD = "SameRoad"
    ADJACENT_ROADS = "AdjacentRoads"
    FROM_JUNCTION = "FromJunction"
    TO_JUNCTION = "ToJunction"
    INVALID = "Invalid"
    SEED = "Seed"


class Reason(str, Enum):
    E_EXCEEDS = "e_exceeds"
    INVALID_LOCATION = "invalid_location"
    REPLAY = "replay"
    AUTH_FAILURE = "auth_failure"


class UnknownVehicleError(LookupError):
    pass


@dataclass
class VehicleState:
    prv: GeoPoint
    r_prv: str
    t_prv: int
    auth_remaining: int = 0


@dataclass(frozen=True)
class CheckPosResult:
    case: Case
    d: float | None = None
    matched_road: str | None = None
    # roads whose speed limits bound this transition
    involved_roads: tuple[str, ...] = ()
    junction: str | None = None

    @property
    def valid(self) -> bool:
        return self.case is not Case.INVALID


INVALID = CheckPosResult(Case.INVALID)


@dataclass(frozen=True)
class Alert:
    vehicle_id: int
    timestamp: int
    auth_window: int


@dataclass(frozen=True)
class DetectionOutcome:
    vehicle_id: int
    timestamp: int
    case: Case
    flagged: bool
    reason: Reason | None = None
    d: float | None = None
    max_dist: float | None = None
    e_value: float | None = None
    matched_road: str | None = None
    auth_remaining: int = 0
    alert: Alert | None = None

    def record(self) -> dict:
        """Row for the outcome stream (CSV / JSON lines)."""
        return {
            "vehicle_id": self.vehicle_id,
            "timestamp": self.timestamp,
            "case_used": self.case.value,
            "d": _fmt(self.d),
            "max_dist": _fmt(self.max_dist),
            "e_value": _fmt(self.e_value),
            "flagged": int(self.flagged),
            "reason": self.reason.value if self.reason else "",
            "auth_remaining": self.auth_remaining,
        }


def _fmt(x: float | None) -> str:
    return "" if x is None else f"{x:.6f}"


def match_road(graph: RoadGraph, cur: GeoPoint) -> tuple[str, int, float] | None:
    """Best road for ``cur``: nearest sample over all candidate roads, lowest id on ties."""
    best = None
    for rid in candidate_roads(graph, cur):
        idx, dist = nearest_sample(graph.roads[rid], cur)
        if best is None or dist < best[2] - TIE_EPS_M or (
            dist <= best[2] + TIE_EPS_M and rid < best[0]
        ):
            best = (rid, idx, dist)
    return best


def _nearest_junction(graph: RoadGraph, p: GeoPoint, ids, radius: float) -> str | None:
    best = None
    for jid in sorted(ids):
        loc = graph.junctions[jid].loc
        dist = haversine(loc.lat, loc.lon, p.lat, p.lon)
        if dist <= radius and (best is None or dist < best[1] - TIE_EPS_M):
            best = (jid, dist)
    return best[0] if best else None


def _ends(graph: RoadGraph, road_id: str) -> set[str]:
    road = graph.roads[road_id]
    return {road.from_junction, road.to_junction}


def check_pos(
    graph: RoadGraph,
    state: VehicleState,
    cur: GeoPoint,
    junction_radius: float = JUNCTION_RADIUS_M,
) -> CheckPosResult:
    """Distance the vehicle covered since ``state.prv``, or the Invalid verdict."""
    prv, r_prv = state.prv, state.r_prv
    hit = match_road(graph, cur)

    if hit is None:
        if r_prv == AT_JUNCTION:
            # both fixes off every road: only a stay inside one junction is plausible
            jn = _nearest_junction(graph, cur, graph.junctions, junction_radius)
            if jn is None or distance(graph.junctions[jn].loc, prv) > junction_radius:
                return INVALID
            return CheckPosResult(
                Case.TO_JUNCTION,
                d=distance(prv, cur),
                matched_road=AT_JUNCTION,
                involved_roads=tuple(sorted(graph.adjacency[jn])),
                junction=jn,
            )
        m1 = graph.roads[r_prv].sample_loc(nearest_sample(graph.roads[r_prv], prv)[0])
        jn = _nearest_junction(graph, cur, _ends(graph, r_prv), junction_radius)
        if jn is None:
            return INVALID
        return CheckPosResult(
            Case.TO_JUNCTION,
            d=distance(m1, graph.junctions[jn].loc),
            matched_road=AT_JUNCTION,
            involved_roads=(r_prv,),
            junction=jn,
        )

    r_cur, idx, _ = hit
    m1 = graph.roads[r_cur].sample_loc(idx)
    if r_cur == r_prv:
        m2 = graph.roads[r_prv].sample_loc(nearest_sample(graph.roads[r_prv], prv)[0])
        return CheckPosResult(
            Case.SAME_ROAD, d=distance(m1, m2), matched_road=r_cur, involved_roads=(r_cur,)
        )
    if r_prv != AT_JUNCTION:
        jn = graph.road_pair_junction.get((r_cur, r_prv))
        if jn is None:
            return INVALID
        m2 = graph.roads[r_prv].sample_loc(nearest_sample(graph.roads[r_prv], prv)[0])
        j = graph.junctions[jn].loc
        return CheckPosResult(
            Case.ADJACENT_ROADS,
            d=distance(m2, j) + distance(m1, j),
            matched_road=r_cur,
            involved_roads=tuple(sorted((r_prv, r_cur))),
            junction=jn,
        )
    jn = _nearest_junction(graph, prv, _ends(graph, r_cur), junction_radius)
    if jn is None:
        return INVALID
    return CheckPosResult(
        Case.FROM_JUNCTION,
        d=distance(m1, graph.junctions[jn].loc),
        matched_road=r_cur,
        involved_roads=(r_cur,),
        junction=jn,
    )


def max_dist(graph: RoadGraph, result: CheckPosResult, dt_s: float) -> float:
    """Farthest a vehicle may legally travel in ``dt_s`` seconds for this transition."""
    if not result.valid:
        raise ValueError("max_dist is undefined for an Invalid verdict")
    if dt_s <= 0:
        raise ValueError(f"dt must be positive, got {dt_s}")
    return max(graph.roads[r].max_speed_mps for r in result.involved_roads) * dt_s


def attack_prevent(state: VehicleState, vehicle_id: int, timestamp: int, t_auth: int = DEFAULT_T_AUTH) -> Alert:
    """Open (or re-open) the authentication window and return the alert to send."""
    state.auth_remaining = t_auth
    return Alert(vehicle_id, timestamp, t_auth)


@dataclass
class Detector:
    """Per-vehicle detection state plus the shared graph and key table.

    Packets of one vehicle are serialized by a per-vehicle lock; different
    vehicles may be processed from different threads.
    """

    graph: RoadGraph
    keys: dict[int, VehicleKey]
    t_auth: int = DEFAULT_T_AUTH
    junction_radius: float = JUNCTION_RADIUS_M
    states: dict[int, VehicleState] = field(default_factory=dict)
    _locks: dict[int, threading.Lock] = field(default_factory=dict, repr=False)
    _table_lock: threading.Lock = field(default_factory=threading.Lock, repr=False)

    def __post_init__(self):
        if self.t_auth < 0:
            raise ValueError("t_auth must be non-negative")

    def _lock(self, vid: int) -> threading.Lock:
        with self._table_lock:
            return self._locks.setdefault(vid, threading.Lock())

    def auth_remaining(self, vid: int) -> int:
        state = self.states.get(vid)
        return state.auth_remaining if state else 0

    def process_packet(self, p: LocationPacket) -> DetectionOutcome:
        if not isinstance(p, LocationPacket):
            raise TypeError("expected a LocationPacket")
        if p.vehicle_id not in self.keys:
            raise UnknownVehicleError(f"unknown vehicle {p.vehicle_id}")
        with self._lock(p.vehicle_id):
            state = self.states.get(p.vehicle_id)
            if state is None:
                return self._seed(p)
            return self._detect(state, p)

    def _seed(self, p: LocationPacket) -> DetectionOutcome:
        cur = GeoPoint(p.lat, p.lon)
        hit = match_road(self.graph, cur)
        road = hit[0] if hit else AT_JUNCTION
        self.states[p.vehicle_id] = VehicleState(cur, road, p.timestamp)
        return DetectionOutcome(p.vehicle_id, p.timestamp, Case.SEED, False, matched_road=road)

    def _flag(self, state, p, reason, **kw) -> DetectionOutcome:
        alert = attack_prevent(state, p.vehicle_id, p.timestamp, self.t_auth)
        return DetectionOutcome(
            p.vehicle_id,
            p.timestamp,
            flagged=True,
            reason=reason,
            auth_remaining=state.auth_remaining,
            alert=alert,
            **kw,
        )

    def _detect(self, state: VehicleState, p: LocationPacket) -> DetectionOutcome:
        if state.auth_remaining > 0:
            tag = p.auth_tag
            ok = tag is not None and len(tag) == TAG_SIZE and verify(p, self.keys[p.vehicle_id])
            if not ok:
                return self._flag(state, p, Reason.AUTH_FAILURE, case=Case.INVALID)
            state.auth_remaining -= 1

        if p.timestamp <= state.t_prv:
            return self._flag(state, p, Reason.REPLAY, case=Case.INVALID)

        cur = GeoPoint(p.lat, p.lon)
        result = check_pos(self.graph, state, cur, self.junction_radius)
        if not result.valid:
            return self._flag(state, p, Reason.INVALID_LOCATION, case=Case.INVALID)

        md = max_dist(self.graph, result, (p.timestamp - state.t_prv) / 1000.0)
        e = result.d / md
        kw = dict(case=result.case, d=result.d, max_dist=md, e_value=e, matched_road=result.matched_road)
        if e > 1.0:
            return self._flag(state, p, Reason.E_EXCEEDS, **kw)

        state.prv = cur
        state.r_prv = result.matched_road
        state.t_prv = p.timestamp
        return DetectionOutcome(
            p.vehicle_id, p.timestamp, flagged=False, auth_remaining=state.auth_remaining, **kw
        )
