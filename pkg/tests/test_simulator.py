import json

import pytest

from fleetguard.attacker import AttackScenario, CoordinateOffset, Replay
from fleetguard.geo import haversine
from fleetguard.simulator import (
    CSV_COLUMNS,
    ConfigError,
    SimConfig,
    config_from_json,
    generate_trip,
    generate_trips,
    junction_vicinity,
    load_config,
    read_csv,
    run_experiment,
    rows_to_csv,
    summarize,
    write_report,
)


@pytest.fixture(scope="module")
def vicinity(grid):
    return junction_vicinity(grid)


def test_trip_is_deterministic(grid, vicinity):
    a = generate_trip(grid, 42, 300, 0.6, vicinity=vicinity)
    b = generate_trip(grid, 42, 300, 0.6, vicinity=vicinity)
    c = generate_trip(grid, 43, 300, 0.6, vicinity=vicinity)
    assert a == b and a != c


def test_trip_packet_count_and_cadence(grid, vicinity):
    trip = generate_trip(grid, 1, 600, 0.6, start_time=5_000, vicinity=vicinity)
    assert len(trip.points) == 601
    assert [trip.packet(k).timestamp for k in (0, 1, 600)] == [5_000, 6_000, 605_000]


def test_zero_duration_trip(grid, vicinity):
    assert len(generate_trip(grid, 1, 0, 0.6, vicinity=vicinity).points) == 1


def test_speed_never_exceeds_limit(grid, vicinity):
    for seed in range(5):
        trip = generate_trip(grid, seed, 300, 1.0, vicinity=vicinity)
        for a, b in zip(trip.points, trip.points[1:]):
            # mean speed over the second; it may straddle two roads
            limit = max(grid.roads[a.road].max_speed_mps, grid.roads[b.road].max_speed_mps)
            assert b.speed <= limit + 1e-9


def test_on_road_steps_bounded_by_fastest_limit(grid, vicinity):
    vmax = max(r.max_speed_mps for r in grid.roads.values())
    trip = generate_trip(grid, 9, 300, 1.0, vicinity=vicinity)
    for a, b in zip(trip.points, trip.points[1:]):
        if a.near_junction is None and b.near_junction is None:
            assert haversine(a.lat, a.lon, b.lat, b.lon) <= vmax + 1e-6


def test_bad_trip_arguments(grid):
    with pytest.raises(ValueError):
        generate_trip(grid, 1, 10, 0.0)
    with pytest.raises(ValueError):
        generate_trip(grid, 1, -1, 0.5)


def _cfg(**kw):
    base = dict(map="grid", trips=4, duration_s=120, seed=3)
    base.update(kw)
    return SimConfig(**base)


def test_empty_run(grid):
    cfg = _cfg(trips=0)
    report = run_experiment(grid, [], [], cfg)
    assert report.rows == []
    assert report.summary["packets"] == 0 and report.summary["flags"] == 0


def test_unknown_target_rejected(grid):
    cfg = _cfg()
    sc = AttackScenario(99, 0, Replay(1000))
    with pytest.raises(ConfigError, match="target"):
        run_experiment(grid, generate_trips(grid, cfg), [sc], cfg)


def test_attack_free_run_has_no_flags(grid):
    cfg = _cfg()
    report = run_experiment(grid, generate_trips(grid, cfg), [], cfg)
    s = report.summary
    assert s["packets"] == 4 * 121 and s["flags"] == 0
    assert s["max_e"] <= 1.0


def test_offset_attack_flagged_at_once(grid):
    cfg = _cfg()
    sc = AttackScenario(10011, 30_000, CoordinateOffset(0.0, 0.002))
    report = run_experiment(grid, generate_trips(grid, cfg), [sc], cfg)
    (atk,) = report.attacks
    assert atk["detection_latency"] == 1 and atk["injected"] == 1
    assert report.summary["false_positives"] == 0


def test_drops_thin_the_stream(grid):
    cfg = _cfg(drop_probability=0.3)
    report = run_experiment(grid, generate_trips(grid, cfg), [], cfg)
    assert 0 < report.summary["packets"] < 4 * 121
    assert report.summary["flags"] == 0


def test_report_files_and_evaluate_agree(tmp_path, grid):
    cfg = _cfg(scenarios=[AttackScenario(10010, 20_000, Replay(3000))])
    report = run_experiment(grid, generate_trips(grid, cfg), cfg.scenarios, cfg)
    json_path, csv_path = write_report(report, tmp_path)
    rows = read_csv(csv_path)
    assert list(rows[0]) == CSV_COLUMNS
    doc = json.loads(json_path.read_text())
    assert doc["summary"] == summarize(rows)
    assert csv_path.read_text() == rows_to_csv(report.rows)


def test_config_validation(tmp_path):
    with pytest.raises(ConfigError, match="speed_factor"):
        config_from_json({"speed_factor": 1.5})
    with pytest.raises(ConfigError, match="trips"):
        config_from_json({"trips": "ten"})
    with pytest.raises(ConfigError, match="unknown"):
        config_from_json({"tripz": 3})
    with pytest.raises(ConfigError, match=r"scenarios\[0\]"):
        config_from_json({"scenarios": [{"target": 1, "strategy": "nope"}]})
    with pytest.raises(ConfigError, match="horizon"):
        config_from_json({"duration_s": 10, "scenarios": [
            {"target": 10010, "strategy": "replay", "delay_ms": 5, "start_time_ms": 20_000}]})
    bad = tmp_path / "c.json"
    bad.write_text("{", encoding="utf-8")
    with pytest.raises(ConfigError, match="malformed"):
        load_config(bad)


def test_relative_map_path(tmp_path):
    (tmp_path / "maps").mkdir()
    cfg_path = tmp_path / "cfg.json"
    cfg_path.write_text(json.dumps({"map": "maps/m.json"}), encoding="utf-8")
    assert load_config(cfg_path).map_path() == tmp_path / "maps" / "m.json"
