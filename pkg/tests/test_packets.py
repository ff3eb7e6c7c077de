import struct
from dataclasses import replace
from datetime import datetime, timezone

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from fleetguard.bench import bench_hmac, random_packets
from fleetguard.packets import (
    SIGNED_SIZE,
    UNSIGNED_SIZE,
    KeyMismatchError,
    LocationPacket,
    PacketError,
    VehicleKey,
    derive_keys,
    deserialize,
    serialize,
    sign,
    verify,
)

SAMPLE_TS = int(datetime(2024, 5, 9, 11, 5, 24, tzinfo=timezone.utc).timestamp() * 1000)


@pytest.fixture
def sample_pkt():
    return LocationPacket(10010, 1.302, 84.24, 30.0, SAMPLE_TS)


@pytest.fixture
def key():
    return derive_keys([10010], seed=1)[10010]


packets = st.builds(
    LocationPacket,
    vehicle_id=st.integers(0, 2**64 - 1),
    lat=st.floats(-90, 90),
    lon=st.floats(-180, 180),
    bearing=st.floats(0, 360, exclude_max=True),
    timestamp=st.integers(-(2**63), 2**63 - 1),
)


def test_sample_round_trip(sample_pkt):
    data = serialize(sample_pkt)
    assert len(data) == UNSIGNED_SIZE == 41
    assert deserialize(data) == sample_pkt


def test_layout_is_big_endian_fixed_width(sample_pkt):
    data = serialize(sample_pkt)
    assert data[:8] == (10010).to_bytes(8, "big")
    assert struct.unpack(">d", data[8:16])[0] == 1.302
    assert struct.unpack(">d", data[16:24])[0] == 84.24
    assert struct.unpack(">q", data[32:40])[0] == SAMPLE_TS
    assert data[40] == 0


@settings(max_examples=500)
@given(packets)
def test_round_trip_property(p):
    assert deserialize(serialize(p)) == p


def test_round_trip_10k_random():
    for p in random_packets(10_000, seed=3):
        assert deserialize(serialize(p)) == p


def test_signed_size_within_bounds(sample_pkt, key):
    data = serialize(sign(sample_pkt, key))
    assert len(data) == SIGNED_SIZE == 105
    assert len(data) - UNSIGNED_SIZE == 64
    assert UNSIGNED_SIZE <= 120 and len(data) <= 250 <= 350


@pytest.mark.parametrize(
    "field, value",
    [("lat", 90.001), ("lon", -180.5), ("bearing", 360.0), ("bearing", -0.1),
     ("lat", float("nan")), ("vehicle_id", -1), ("vehicle_id", 2**64), ("timestamp", 1.5)],
)
def test_out_of_range_fields(sample_pkt, field, value):
    with pytest.raises(PacketError):
        replace(sample_pkt, **{field: value})


def test_deserialize_rejects_bad_lengths_and_flags(sample_pkt, key):
    data = serialize(sample_pkt)
    with pytest.raises(PacketError):
        deserialize(data[:-1])
    with pytest.raises(PacketError):
        deserialize(data + b"\x00")
    with pytest.raises(PacketError):
        deserialize(data[:-1] + b"\x02")
    signed = serialize(sign(sample_pkt, key))
    with pytest.raises(PacketError):
        deserialize(signed[:-1])


def test_sign_then_verify(sample_pkt, key):
    assert verify(sign(sample_pkt, key), key)


def test_sign_is_deterministic(sample_pkt, key):
    assert sign(sample_pkt, key) == sign(sample_pkt, key)


def test_tampered_lon_fails(sample_pkt, key):
    signed = sign(sample_pkt, key)
    raw = bytearray(serialize(signed))
    raw[23] ^= 0x01  # lowest mantissa bit of lon
    tampered = deserialize(bytes(raw))
    assert tampered.lon != sample_pkt.lon
    assert not verify(tampered, key)


def test_wrong_key_fails(sample_pkt, key):
    other = VehicleKey(10010, bytes(32))
    assert not verify(sign(sample_pkt, key), other)


def test_sign_key_mismatch(sample_pkt):
    with pytest.raises(KeyMismatchError):
        sign(sample_pkt, derive_keys([7], seed=1)[7])


def test_verify_requires_tag(sample_pkt, key):
    with pytest.raises(PacketError):
        verify(sample_pkt, key)
    truncated = replace(sign(sample_pkt, key), auth_tag=bytes(63))
    with pytest.raises(PacketError):
        verify(truncated, key)


def test_every_single_bit_flip_is_caught(sample_pkt, key):
    signed = serialize(sign(sample_pkt, key))
    for bit in range(len(signed) * 8):
        raw = bytearray(signed)
        raw[bit // 8] ^= 1 << (bit % 8)
        try:
            p = deserialize(bytes(raw))
        except PacketError:
            continue
        if p.auth_tag is None:
            continue
        assert not verify(p, key), bit


@settings(max_examples=200)
@given(packets, st.integers(0, SIGNED_SIZE * 8 - 1))
def test_mac_soundness_property(p, bit):
    k = VehicleKey(p.vehicle_id, b"k" * 32)
    raw = bytearray(serialize(sign(p, k)))
    assert verify(deserialize(bytes(raw)), k)
    raw[bit // 8] ^= 1 << (bit % 8)
    try:
        q = deserialize(bytes(raw))
    except PacketError:
        return
    assert q.auth_tag is None or not verify(q, k)


def test_size_bounds_over_random_packets(key):
    k = VehicleKey(10010, key.key)
    for p in random_packets(2_000, seed=9):
        assert len(serialize(p)) <= 120
        assert len(serialize(sign(p, k))) <= 250


def test_keys_are_reproducible_and_distinct():
    a = derive_keys([1, 2, 3], seed=5)
    b = derive_keys([1, 2, 3], seed=5)
    assert a == b
    assert len({k.key for k in a.values()}) == 3
    assert derive_keys([1], seed=6)[1] != a[1]
    assert "key=" in repr(a[1]) and a[1].key.hex() not in repr(a[1])


def test_json_rendering_hides_nothing_secret(sample_pkt, key):
    doc = sign(sample_pkt, key).to_json()
    assert doc["vehicle_id"] == 10010 and len(doc["auth_tag"]) == 128
    assert key.key.hex() not in str(doc)


def test_bench_reports_finite_positive_timings():
    out = bench_hmac(1000, seed=0)
    for part in ("sign", "verify", "sign_verify"):
        assert 0 < out[part]["mean_ms"] < float("inf")
        assert out[part]["median_ms"] <= out[part]["p99_ms"]
    assert out["reference_digest_ms"] == 0.3


def test_bench_packets_are_seeded():
    assert random_packets(50, seed=4) == random_packets(50, seed=4)
