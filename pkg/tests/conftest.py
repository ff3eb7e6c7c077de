import json
import math

import pytest

from fleetguard.geo import offset
from fleetguard.maps import bundled_path, make_grid
from fleetguard.roadmap import build_graph, load_roadmap

R = 6_371_000.0


def gc_dist(lat1, lon1, lat2, lon2):
    """Great-circle distance from the angle between unit vectors.

    Deliberately not the haversine formula, so it can check it.
    """
    def unit(lat, lon):
        a, b = math.radians(lat), math.radians(lon)
        return (math.cos(a) * math.cos(b), math.cos(a) * math.sin(b), math.sin(a))

    u, v = unit(lat1, lon1), unit(lat2, lon2)
    cross = (
        u[1] * v[2] - u[2] * v[1],
        u[2] * v[0] - u[0] * v[2],
        u[0] * v[1] - u[1] * v[0],
    )
    dot = sum(x * y for x, y in zip(u, v))
    return R * math.atan2(math.sqrt(sum(c * c for c in cross)), dot)


def scan_nearest(road, lat, lon, eps=1e-6):
    """Linear-scan nearest sample with lowest-index tie-break."""
    from fleetguard.geo import haversine

    dists = [haversine(lat, lon, s.lat, s.lon) for s in road.samples]
    best = min(dists)
    for i, d in enumerate(dists):
        if d <= best + eps:
            return i, d


@pytest.fixture(scope="session")
def grid():
    return load_roadmap(bundled_path("grid"))


@pytest.fixture(scope="session")
def district():
    return load_roadmap(bundled_path("district"))


def two_road_doc(origin=(1.3000, 103.8000), speeds=(13.9, 25.0)):
    """Road A runs 200 m east from J0 to J1, road B 200 m north from J1 to J2."""
    j0 = origin
    j1 = offset(*j0, 200.0, 0.0)
    j2 = offset(*j1, 0.0, 200.0)
    return {
        "junctions": [
            {"id": "J0", "lat": j0[0], "lon": j0[1]},
            {"id": "J1", "lat": j1[0], "lon": j1[1]},
            {"id": "J2", "lat": j2[0], "lon": j2[1]},
        ],
        "roads": [
            {"id": "A", "from": "J0", "to": "J1", "length_m": 200.0,
             "max_speed_mps": speeds[0], "polyline": [list(j0), list(j1)]},
            {"id": "B", "from": "J1", "to": "J2", "length_m": 200.0,
             "max_speed_mps": speeds[1], "polyline": [list(j1), list(j2)]},
        ],
    }


@pytest.fixture
def two_roads():
    return build_graph(two_road_doc())


@pytest.fixture
def write_json(tmp_path):
    def _write(doc, name="doc.json"):
        path = tmp_path / name
        path.write_text(json.dumps(doc), encoding="utf-8")
        return path

    return _write


@pytest.fixture(scope="session")
def corner_grid():
    """Grid whose corner junction sits at (1.302, 84.24)."""
    return build_graph(make_grid(origin=(1.302, 84.24)))
