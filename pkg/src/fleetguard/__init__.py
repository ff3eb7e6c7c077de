"""Roadmap-based GPS spoofing detection and HMAC prevention for vehicle fleets."""

from .attacker import AttackScenario, Attacker, BitFlip, CoordinateOffset, Replay
from .detector import (
    AT_JUNCTION,
    Case,
    CheckPosResult,
    DetectionOutcome,
    Detector,
    Reason,
    VehicleState,
    attack_prevent,
    check_pos,
    max_dist,
)
from .geo import GeoPoint, haversine
from .packets import LocationPacket, VehicleKey, deserialize, serialize, sign, verify
from .roadmap import RoadGraph, candidate_roads, load_roadmap, nearest_sample, sample_road
from .simulator import SimConfig, generate_trip, run_experiment, simulate

__version__ = "0.1.0"
