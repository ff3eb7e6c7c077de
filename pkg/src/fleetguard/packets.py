"""Location packets, their wire format and HMAC-SHA-512 tags.

Wire layout (big-endian, no padding)::

    offset  size  field
    0       8     vehicle_id   unsigned 64-bit
    8       8     lat          IEEE-754 double, degrees
    16      8     lon          IEEE-754 double, degrees
    24      8     bearing      IEEE-754 double, degrees in [0, 360)
    32      8     timestamp    signed 64-bit, ms since the Unix epoch
    40      1     flags        bit 0 set when a tag follows; other bits zero
    41      64    auth_tag     present only when flags bit 0 is set

An unsigned packet is 41 bytes and a signed one 105. The tag is
HMAC-SHA-512 keyed with the vehicle's secret over the unsigned encoding.
"""

from __future__ import annotations

import hashlib
import hmac
import math
import secrets
import struct
from dataclasses import dataclass, replace

_HEADER = struct.Struct(">QdddqB")
TAG_SIZE = 64
KEY_SIZE = 32
FLAG_TAGGED = 0x01

UNSIGNED_SIZE = _HEADER.size
SIGNED_SIZE = _HEADER.size + TAG_SIZE

# Field name -> (byte offset, width) inside the header.
FIELD_OFFSETS = {
    "vehicle_id": (0, 8),
    "lat": (8, 8),
    "lon": (16, 8),
    "bearing": (24, 8),
    "timestamp": (32, 8),
}


class PacketError(ValueError):
    """Malformed packet: bad field values, bad encoding, or unusable tag."""


class KeyMismatchError(ValueError):
    pass


@dataclass(frozen=True)
class LocationPacket:
    vehicle_id: int
    lat: float
    lon: float
    bearing: float
    timestamp: int
    auth_tag: bytes | None = None

    def __post_init__(self):
        _check_fields(self)

    @property
    def signed(self) -> bool:
        return self.auth_tag is not None

    def unsigned(self) -> "LocationPacket":
        return replace(self, auth_tag=None)

    def to_json(self) -> dict:
        """Debug rendering; safe to log (contains no key material)."""
        return {
            "vehicle_id": self.vehicle_id,
            "lat": self.lat,
            "lon": self.lon,
            "bearing": self.bearing,
            "timestamp": self.timestamp,
            "auth_tag": self.auth_tag.hex() if self.auth_tag is not None else None,
        }


@dataclass(frozen=True)
class VehicleKey:
    vehicle_id: int
    key: bytes

    def __post_init__(self):
        if len(self.key) != KEY_SIZE:
            raise ValueError(f"key must be {KEY_SIZE} bytes")

    def __repr__(self):
        return f"VehicleKey(vehicle_id={self.vehicle_id}, key=<redacted>)"


def _check_fields(p: LocationPacket) -> None:
    if isinstance(p.vehicle_id, bool) or not isinstance(p.vehicle_id, int):
        raise PacketError("vehicle_id must be an integer")
    if not 0 <= p.vehicle_id < 2**64:
        raise PacketError(f"vehicle_id out of range: {p.vehicle_id}")
    for name, lo, hi in (("lat", -90.0, 90.0), ("lon", -180.0, 180.0)):
        v = getattr(p, name)
        if not isinstance(v, (int, float)) or not math.isfinite(v) or not lo <= v <= hi:
            raise PacketError(f"{name} out of range: {v!r}")
    b = p.bearing
    if not isinstance(b, (int, float)) or not math.isfinite(b) or not 0.0 <= b < 360.0:
        raise PacketError(f"bearing out of range: {b!r}")
    if isinstance(p.timestamp, bool) or not isinstance(p.timestamp, int):
        raise PacketError("timestamp must be integer milliseconds")
    if not -(2**63) <= p.timestamp < 2**63:
        raise PacketError(f"timestamp out of range: {p.timestamp}")
    if p.auth_tag is not None and not isinstance(p.auth_tag, (bytes, bytearray)):
        raise PacketError("auth_tag must be bytes")


def _header(p: LocationPacket, flags: int) -> bytes:
    return _HEADER.pack(p.vehicle_id, p.lat, p.lon, p.bearing, p.timestamp, flags)


def serialize(p: LocationPacket) -> bytes:
    if p.auth_tag is None:
        return _header(p, 0)
    if len(p.auth_tag) != TAG_SIZE:
        raise PacketError(f"auth_tag must be {TAG_SIZE} bytes, got {len(p.auth_tag)}")
    return _header(p, FLAG_TAGGED) + bytes(p.auth_tag)


def deserialize(data: bytes) -> LocationPacket:
    if len(data) < UNSIGNED_SIZE:
        raise PacketError(f"packet too short: {len(data)} bytes")
    vid, lat, lon, brg, ts, flags = _HEADER.unpack_from(data)
    if flags & ~FLAG_TAGGED:
        raise PacketError(f"unknown flag bits: {flags:#04x}")
    expected = SIGNED_SIZE if flags & FLAG_TAGGED else UNSIGNED_SIZE
    if len(data) != expected:
        raise PacketError(f"packet length {len(data)} does not match flags (want {expected})")
    tag = bytes(data[UNSIGNED_SIZE:]) if flags & FLAG_TAGGED else None
    return LocationPacket(vid, lat, lon, brg, ts, tag)


def _mac(p: LocationPacket, key: VehicleKey) -> bytes:
    return hmac.new(key.key, _header(p, 0), hashlib.sha512).digest()


def sign(p: LocationPacket, key: VehicleKey) -> LocationPacket:
    if p.auth_tag is not None:
        raise PacketError("packet is already signed")
    if key.vehicle_id != p.vehicle_id:
        raise KeyMismatchError(f"key belongs to vehicle {key.vehicle_id}, packet to {p.vehicle_id}")
    return replace(p, auth_tag=_mac(p, key))


def verify(p: LocationPacket, key: VehicleKey) -> bool:
    """Constant-time tag check. Raises :class:`PacketError` if there is no usable tag."""
    if p.auth_tag is None:
        raise PacketError("packet carries no auth_tag")
    if len(p.auth_tag) != TAG_SIZE:
        raise PacketError(f"auth_tag must be {TAG_SIZE} bytes, got {len(p.auth_tag)}")
    if key.vehicle_id != p.vehicle_id:
        return False
    return hmac.compare_digest(_mac(p, key), bytes(p.auth_tag))


def derive_keys(vehicle_ids, seed: int | None = None) -> dict[int, VehicleKey]:
    """One 32-byte key per vehicle.

    With a seed the keys come from SHAKE-256 over (seed, vehicle id) so runs
    are reproducible; without one they come from the OS CSPRNG.
    """
    keys = {}
    for vid in vehicle_ids:
        if seed is None:
            material = secrets.token_bytes(KEY_SIZE)
        else:
            material = hashlib.shake_256(f"fleetguard-key:{seed}:{vid}".encode()).digest(KEY_SIZE)
        keys[vid] = VehicleKey(vid, material)
    return keys
