import json
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from uavpsr.scenario import (AreaSpec, ConfigError, Horizon, HotspotTrace, LineupEvent, Placement,
                             PhysicalConstants, ScenarioConfig, UserDistributionSpec,
                             disperse_gather_traces, generate_population, generate_users,
                             hotspot_center_at, load_scenario, save_scenario, scenario_snapshot,
                             snapshot_at)

BUNDLED = ["reference", "reference_quit", "reference_post_quit", "reference_join",
           "reference_post_join", "reference_dynamic", "toy", "toy_quit", "toy_post"]


def test_default_constants_match_reference_table(consts):
    assert consts.altitude == 300 and consts.aperture_deg == 60
    assert consts.level_speed == pytest.approx(40 / 3.6)
    assert consts.elevation_per_slot == pytest.approx(40.0)
    assert consts.weight == pytest.approx(39.2)
    assert consts.n_rb == 25
    assert consts.e_thre == 150 and consts.beta == 2
    assert ScenarioConfig().initial_battery.tolist() == [1500.0] * 5


def test_area_size_in_units():
    assert AreaSpec().size == 10
    assert AreaSpec(600, 100).size == 6
    with pytest.raises(ConfigError):
        AreaSpec(-1, 100)


@pytest.mark.parametrize("kw", [
    {"d_max_m": 150.0},
    {"flight_s": 11.0},
    {"beta": 0.0},
    {"aperture_deg": 180.0},
])
def test_invalid_constants_rejected(kw):
    with pytest.raises(ConfigError):
        PhysicalConstants(**kw)


def test_invalid_user_spec_rejected():
    with pytest.raises(ConfigError):
        UserDistributionSpec(hotspot_fraction=0.5, hotspots=())
    with pytest.raises(ConfigError):
        UserDistributionSpec(count=-1)
    with pytest.raises(ConfigError):
        UserDistributionSpec(hotspot_fraction=1.5)


def test_invalid_scenarios_rejected():
    with pytest.raises(ConfigError):
        ScenarioConfig(n_uavs=0)
    with pytest.raises(ConfigError):
        ScenarioConfig(battery=(1500.0, 1500.0))
    with pytest.raises(ConfigError):
        ScenarioConfig(mode="fly")
    with pytest.raises(ConfigError):
        ScenarioConfig(events=(LineupEvent("join", 7, takeoff_step=3, takeoff_point=(0, 0)),))
    with pytest.raises(ConfigError):
        ScenarioConfig.from_dict({"name": "x", "bogus": 1})


def test_dict_round_trip_is_exact(tmp_path):
    cfg = ScenarioConfig(n_uavs=6, mode="join",
                         events=(LineupEvent("join", 5, takeoff_step=11, takeoff_point=(0.0, 0.0)),),
                         users=UserDistributionSpec(hotspots=disperse_gather_traces()))
    assert ScenarioConfig.from_dict(json.loads(json.dumps(cfg.to_dict()))) == cfg
    save_scenario(cfg, tmp_path / "s.json")
    assert load_scenario(tmp_path / "s.json") == cfg


@pytest.mark.parametrize("name", BUNDLED)
def test_bundled_scenarios_load(name):
    cfg = load_scenario(name)
    assert cfg.name == name
    assert len(cfg.initial_battery) == cfg.n_uavs


def test_toy_benchmark_geometry():
    cfg = load_scenario("toy")
    assert (cfg.n_uavs, cfg.users.count, cfg.area.size) == (2, 20, 6)
    assert cfg.rl.actor_hidden == (32, 24) and cfg.rl.critic_hidden == (32, 24)
    assert cfg.rl.workers * cfg.rl.episodes <= 2000
    quit_cfg = load_scenario("toy_quit")
    assert quit_cfg.users == cfg.users
    assert quit_cfg.initial_battery.min() < cfg.initial_battery.min()


def test_population_is_reproducible_and_inside_area():
    spec = UserDistributionSpec()
    a, la = generate_population(spec, AreaSpec(), seed=7)
    b, lb = generate_population(spec, AreaSpec(), seed=7)
    assert np.array_equal(a, b) and np.array_equal(la, lb)
    assert a.shape == (100, 2)
    assert np.all((a >= 0) & (a <= 10))
    c, _ = generate_population(spec, AreaSpec(), seed=8)
    assert not np.array_equal(a, c)


@given(count=st.integers(0, 300), frac=st.floats(0.0, 1.0), k=st.integers(1, 5))
@settings(max_examples=60, deadline=None)
def test_hotspot_split_sums_to_count(count, frac, k):
    hs = tuple(HotspotTrace(start=(1.0 + j, 1.0), weight=1.0 + j) for j in range(k))
    spec = UserDistributionSpec(count=count, hotspot_fraction=frac, hotspots=hs)
    counts = spec.hotspot_counts()
    assert len(counts) == k
    assert sum(counts) == round(count * frac)
    assert all(c >= 0 for c in counts)


def test_labels_mark_hotspot_membership():
    spec = UserDistributionSpec(count=100, hotspot_fraction=0.8)
    _, labels = generate_population(spec, AreaSpec(), seed=0)
    assert np.sum(labels >= 0) == 80
    assert np.sum(labels == -1) == 20


def test_horizon_segments():
    h = Horizon(n_steps=100, segments=10)
    assert [h.segment_of(t) for t in (1, 10, 11, 100)] == [1, 1, 2, 10]
    with pytest.raises(ValueError):
        h.segment_of(0)
    with pytest.raises(ValueError):
        h.segment_of(101)


def test_disperse_gather_schedule():
    traces = disperse_gather_traces()
    h = Horizon()
    assert len(traces) == 4
    for tr in traces:
        corner = np.array(tr.start)
        assert np.allclose(hotspot_center_at(tr, 1, h), corner)
        assert np.allclose(hotspot_center_at(tr, 100, h), corner)
        d = [np.linalg.norm(hotspot_center_at(tr, 10 * s + 1, h) - 5.0) for s in range(10)]
        # gather over segments 1-4, hold 4-7, disperse 7-10
        assert d[0] > d[1] > d[2] > d[3]
        assert d[3] == pytest.approx(1.0) and d[6] == pytest.approx(1.0)
        assert d[6] < d[7] < d[8] < d[9]
        assert np.allclose(d, d[::-1])


def test_snapshot_translates_hotspot_users():
    traces = disperse_gather_traces()
    spec = UserDistributionSpec(hotspots=traces)
    h = Horizon()
    base, labels = generate_population(spec, AreaSpec(), seed=3)
    moved = snapshot_at(spec, AreaSpec(), 40, 3, h)
    assert np.array_equal(base[labels == -1], moved[labels == -1])
    assert not np.allclose(base[labels == 0], moved[labels == 0])
    assert np.all((moved >= 0) & (moved <= 10))


def test_static_snapshot_constant_over_time():
    cfg = ScenarioConfig()
    assert np.array_equal(scenario_snapshot(cfg, 1), scenario_snapshot(cfg, 77))
    assert np.array_equal(scenario_snapshot(cfg, 1), generate_users(cfg.users, cfg.area, cfg.user_seed))


def test_circle_and_point_placements():
    pos = Placement(center=(5, 5), radius=1).positions(4)
    assert np.allclose(np.linalg.norm(pos - 5, axis=1), 1)
    pts = Placement(kind="points", points=((1, 2), (3, 4))).positions(2)
    assert pts.tolist() == [[1, 2], [3, 4]]
    with pytest.raises(ConfigError):
        Placement(kind="points", points=((1, 2),)).positions(2)


def test_join_events_and_overrides():
    cfg = load_scenario("reference_join")
    ev = cfg.join_events()
    assert len(ev) == 1 and ev[0].uav_index == 5 and ev[0].takeoff_step == 11
    other = cfg.with_overrides(n_uavs=6, user_seed=9)
    assert other.user_seed == 9 and other.events == cfg.events
    assert math.isclose(cfg.constants.min_altitude, 0.0)
