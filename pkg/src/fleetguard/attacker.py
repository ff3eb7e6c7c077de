"""Man-in-the-middle attacker on the vehicle -> backend packet stream.

The attacker sees every packet of its target in order, estimates the
transmission interval, and from ``start_time`` on rewrites or replays the
target's packets. It never holds vehicle keys, so anything it alters goes
out unsigned.
"""

from __future__ import annotations

import statistics
from dataclasses import dataclass, replace
from typing import Union

from .packets import FIELD_OFFSETS, LocationPacket, PacketError, deserialize, serialize

FLIPPABLE_FIELDS = ("lat", "lon", "bearing", "timestamp")


@dataclass(frozen=True)
class CoordinateOffset:
    d_lat: float = 0.0
    d_lon: float = 0.0

    name = "coordinate_offset"


@dataclass(frozen=True)
class BitFlip:
    field: str
    bit_index: int  # 0 is the least significant bit of the 64-bit field

    name = "bit_flip"

    def __post_init__(self):
        if self.field not in FLIPPABLE_FIELDS:
            raise ValueError(f"bit_flip field must be one of {FLIPPABLE_FIELDS}, got {self.field!r}")
        if not 0 <= self.bit_index < 64:
            raise ValueError("bit_index must be in [0, 64)")


@dataclass(frozen=True)
class Replay:
    delay_ms: int

    name = "replay"

    def __post_init__(self):
        if self.delay_ms <= 0:
            raise ValueError("replay delay must be positive")


Strategy = Union[CoordinateOffset, BitFlip, Replay]


@dataclass(frozen=True)
class AttackScenario:
    """``start_time``/``duration`` are ms relative to the start of the run.

    ``duration=None`` attacks only the first target packet at or after
    ``start_time``.
    """

    target_vehicle: int
    start_time: int
    strategy: Strategy
    duration: int | None = None

    def __post_init__(self):
        if self.start_time < 0:
            raise ValueError("start_time must be non-negative")
        if self.duration is not None and self.duration <= 0:
            raise ValueError("duration must be positive (or null for single-shot)")

    def to_json(self) -> dict:
        doc = {
            "target": self.target_vehicle,
            "start_time_ms": self.start_time,
            "duration_ms": self.duration,
            "strategy": self.strategy.name,
        }
        s = self.strategy
        if isinstance(s, CoordinateOffset):
            doc.update(d_lat=s.d_lat, d_lon=s.d_lon)
        elif isinstance(s, BitFlip):
            doc.update(field=s.field, bit_index=s.bit_index)
        else:
            doc.update(delay_ms=s.delay_ms)
        return doc


def scenario_from_json(doc: dict) -> AttackScenario:
    try:
        kind = doc["strategy"]
        if kind == "coordinate_offset":
            strategy = CoordinateOffset(float(doc.get("d_lat", 0.0)), float(doc.get("d_lon", 0.0)))
        elif kind == "bit_flip":
            strategy = BitFlip(str(doc["field"]), int(doc["bit_index"]))
        elif kind == "replay":
            strategy = Replay(int(doc["delay_ms"]))
        else:
            raise ValueError(f"unknown strategy {kind!r}")
        duration = doc.get("duration_ms")
        return AttackScenario(
            target_vehicle=int(doc["target"]),
            start_time=int(doc.get("start_time_ms", 0)),
            strategy=strategy,
            duration=None if duration is None else int(duration),
        )
    except KeyError as exc:
        raise ValueError(f"scenario: missing field {exc}") from None
    except TypeError as exc:
        raise ValueError(f"scenario: {exc}") from None


def flip_bit(p: LocationPacket, field: str, bit_index: int) -> LocationPacket:
    """Flip one bit of a header field in the unsigned encoding (tag dropped)."""
    raw = bytearray(serialize(p.unsigned()))
    offset, width = FIELD_OFFSETS[field]
    raw[offset + width - 1 - bit_index // 8] ^= 1 << (bit_index % 8)
    return deserialize(bytes(raw))


class Attacker:
    def __init__(self, scenario: AttackScenario, origin_ms: int = 0):
        self.scenario = scenario
        self.origin_ms = origin_ms
        self.seen: list[int] = []
        self.fired = 0
        self.skipped = 0
        self.first_injection: int | None = None
        self._queue: list[tuple[int, int, LocationPacket]] = []
        self._seq = 0

    def observe(self, p: LocationPacket) -> float | None:
        """Record a target packet; return the median inter-packet gap in ms."""
        self.seen.append(p.timestamp)
        return self.interval_estimate()

    def interval_estimate(self) -> float | None:
        if len(self.seen) < 2:
            return None
        gaps = [b - a for a, b in zip(self.seen, self.seen[1:])]
        return statistics.median(gaps)

    def _active(self, now: int) -> bool:
        start = self.origin_ms + self.scenario.start_time
        if now < start:
            return False
        if self.scenario.duration is None:
            return self.fired == 0
        return now < start + self.scenario.duration

    def intercept(self, p: LocationPacket, now: int) -> list[LocationPacket]:
        """Packets that reach the backend in place of ``p`` at time ``now``.

        Untouched packets are returned as the same object.
        """
        if p.vehicle_id != self.scenario.target_vehicle:
            return [p]
        self.observe(p)
        if not self._active(now):
            return [p]
        s = self.scenario.strategy
        if isinstance(s, CoordinateOffset):
            try:
                out = replace(p, lat=p.lat + s.d_lat, lon=p.lon + s.d_lon, auth_tag=None)
            except PacketError:
                self.skipped += 1
                return [p]
            self._mark(now)
            return [out]
        if isinstance(s, BitFlip):
            try:
                out = flip_bit(p, s.field, s.bit_index)
            except PacketError:
                # the flipped value is not even decodable; a stealthy attacker holds back
                self.skipped += 1
                return [p]
            self._mark(now)
            return [out]
        copy = replace(p, timestamp=p.timestamp + s.delay_ms)
        self._queue.append((now + s.delay_ms, self._seq, copy))
        self._seq += 1
        self.fired += 1
        return [p]

    def _mark(self, now: int) -> None:
        self.fired += 1
        if self.first_injection is None:
            self.first_injection = now

    def release(self, now: int) -> list[LocationPacket]:
        """Queued replays due at or before ``now``, in scheduling order."""
        due = sorted(q for q in self._queue if q[0] <= now)
        self._queue = [q for q in self._queue if q[0] > now]
        if due and self.first_injection is None:
            self.first_injection = now
        return [q[2] for q in due]
