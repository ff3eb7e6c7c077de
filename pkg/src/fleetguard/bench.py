"""Timing harness for packet signing and verification."""

from __future__ import annotations

import statistics
import time

import numpy as np

from .packets import LocationPacket, derive_keys, sign, verify

REFERENCE_DIGEST_MS = 0.3


def random_packets(n: int, seed: int = 0, vehicle_id: int = 10010) -> list[LocationPacket]:
    rng = np.random.default_rng(seed)
    lats = rng.uniform(-90, 90, n)
    lons = rng.uniform(-180, 180, n)
    brgs = rng.uniform(0, 360, n) % 360.0
    ts = rng.integers(0, 2**41, n)
    return [
        LocationPacket(vehicle_id, float(a), float(b), float(c), int(t))
        for a, b, c, t in zip(lats, lons, brgs, ts)
    ]


def _stats(samples_ns: list[int]) -> dict:
    ms = sorted(x / 1e6 for x in samples_ns)
    return {
        "mean_ms": statistics.fmean(ms),
        "median_ms": statistics.median(ms),
        "p99_ms": ms[min(len(ms) - 1, int(0.99 * len(ms)))],
    }


def bench_hmac(iterations: int = 10_000, seed: int = 0) -> dict:
    if iterations < 1:
        raise ValueError("iterations must be positive")
    packets = random_packets(iterations, seed)
    key = derive_keys([packets[0].vehicle_id], seed=seed)[packets[0].vehicle_id]
    sign_ns, verify_ns, both_ns = [], [], []
    clock = time.perf_counter_ns
    for p in packets:
        t0 = clock()
        s = sign(p, key)
        t1 = clock()
        ok = verify(s, key)
        t2 = clock()
        if not ok:
            raise AssertionError("freshly signed packet failed verification")
        sign_ns.append(t1 - t0)
        verify_ns.append(t2 - t1)
        both_ns.append(t2 - t0)
    return {
        "iterations": iterations,
        "seed": seed,
        "sign": _stats(sign_ns),
        "verify": _stats(verify_ns),
        "sign_verify": _stats(both_ns),
        "reference_digest_ms": REFERENCE_DIGEST_MS,
    }
