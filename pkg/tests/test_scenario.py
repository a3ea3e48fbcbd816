import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from coopsim.core import AgentClass, GridSpec, Pose
from coopsim.scenario import (
    ID_STRIDE,
    STREAM_PERCEPTION,
    AgentState,
    ScenarioConfig,
    WorldFrame,
    advance,
    deterministic_embedding,
    ego_sensor,
    generate_scenario,
    infra_sensor,
    load_scenario,
    perceive,
    rasterize_agents,
    rng_stream,
    save_scenario,
)

NOISELESS = dict(pos_noise_sigma=0.0, heading_noise_sigma=0.0, miss_prob=0.0, false_pos_rate=0.0)


def frame_with(agents, ego_xy=(0.0, 0.0)):
    base = generate_scenario(ScenarioConfig(n_agents=0)).frames[0]
    ego = AgentState(0, ego_xy, 0.0, 0.0, 0.0, (4.6, 1.8, 1.6), AgentClass.CAR)
    return WorldFrame(0.0, tuple(agents), ego, Pose.from_yaw(0.0, (*ego_xy, 0.0)),
                      base.lanes, base.drivable_mask)


def test_frame_count_and_determinism():
    cfg = ScenarioConfig(seed=7)
    a, b = generate_scenario(cfg), generate_scenario(cfg)
    assert len(a.frames) == 21
    assert [f.time for f in a.frames] == [0.5 * k for k in range(21)]
    assert all(fa.agents == fb.agents and fa.ego_pose == fb.ego_pose
               for fa, fb in zip(a.frames, b.frames))


def test_zero_agents_leaves_only_ego():
    sc = generate_scenario(ScenarioConfig(n_agents=0))
    assert all(f.agents == () for f in sc.frames)


def test_advance_examples():
    s = AgentState(1, (0.0, 0.0), 0.0, 0.0, 0.0, (1, 1, 1), AgentClass.CAR)
    assert advance(s, 0.5).position == (0.0, 0.0)
    moved = advance(AgentState(1, (0.0, 0.0), 0.0, 2.0, 0.0, (1, 1, 1), AgentClass.CAR), 0.5)
    assert moved.position == (1.0, 0.0)
    turned = advance(AgentState(1, (0.0, 0.0), 0.0, 3.0, math.pi / 2, (1, 1, 1), AgentClass.CAR), 1.0)
    assert math.isclose(turned.heading, math.pi / 2)
    assert np.allclose(turned.position, (0.0, 3.0), atol=1e-12)


def test_rasterize_agents_counts_cells():
    grid = GridSpec(200, 200, 0.5, -50.0, -50.0)
    car = AgentState(1, (0.0, 0.0), 0.0, 0.0, 0.0, (4.0, 2.0, 1.5), AgentClass.CAR)
    assert rasterize_agents(frame_with([car]), grid, Pose.identity()).sum() == 32
    assert rasterize_agents(frame_with([]), grid, Pose.identity()).sum() == 0
    far = AgentState(1, (500.0, 0.0), 0.0, 0.0, 0.0, (4.0, 2.0, 1.5), AgentClass.CAR)
    assert rasterize_agents(frame_with([far]), grid, Pose.identity()).sum() == 0


def test_perceive_miss_all_and_noiseless():
    frame = generate_scenario(ScenarioConfig(seed=3)).frames[4]
    rng = rng_stream(3, STREAM_PERCEPTION, 1, 4)
    none = perceive(frame, infra_sensor(miss_prob=1.0, false_pos_rate=0.0), rng)
    assert none.agent_queries == ()

    sensor = infra_sensor(**NOISELESS)
    pf = perceive(frame, sensor, rng_stream(3, STREAM_PERCEPTION, 1, 4))
    truth = {a.id: a for a in (*frame.agents, frame.ego)}
    assert pf.agent_queries
    from coopsim.core import invert, transform_point
    s_from_w = invert(sensor.world_from_sensor(frame))
    for q in pf.agent_queries:
        a = truth[q.track_id - ID_STRIDE]
        expected = transform_point(s_from_w, (*a.position, 0.0))
        assert np.array_equal(q.ref_point, expected)


def test_perceive_is_deterministic_per_stream():
    frame = generate_scenario(ScenarioConfig(seed=5)).frames[2]
    a = perceive(frame, ego_sensor(), rng_stream(5, STREAM_PERCEPTION, 0, 2))
    b = perceive(frame, ego_sensor(), rng_stream(5, STREAM_PERCEPTION, 0, 2))
    assert a == b


@settings(max_examples=25)
@given(st.integers(0, 10_000), st.integers(0, 20))
def test_queries_stay_inside_fov(seed, k):
    frame = generate_scenario(ScenarioConfig(seed=seed, occluded_crossing=True)).frames[k]
    for sensor in (ego_sensor(), infra_sensor()):
        pf = perceive(frame, sensor, rng_stream(seed, STREAM_PERCEPTION, sensor.view, k))
        for q in pf.agent_queries:
            assert sensor.in_fov(q.ref_point[0], q.ref_point[1])


@settings(max_examples=20)
@given(st.integers(0, 10_000))
def test_noiseless_sensor_sees_every_agent_in_fov(seed):
    frame = generate_scenario(ScenarioConfig(seed=seed)).frames[0]
    sensor = infra_sensor(**NOISELESS)
    from coopsim.core import invert, transform_point
    s_from_w = invert(sensor.world_from_sensor(frame))
    visible = {a.id for a in (*frame.agents, frame.ego)
               if sensor.in_fov(*transform_point(s_from_w, (*a.position, 0.0))[:2])}
    pf = perceive(frame, sensor, rng_stream(seed, STREAM_PERCEPTION, 1, 0))
    assert {q.track_id - ID_STRIDE for q in pf.agent_queries} == visible


def test_embedding_properties():
    base = deterministic_embedding(AgentClass.CAR, (4.6, 1.8, 1.6), 0.0)
    assert math.isclose(np.linalg.norm(base), 1.0, abs_tol=1e-9)
    twice = deterministic_embedding(AgentClass.CAR, (4.6, 1.8, 1.6), 2 * math.pi)
    assert np.allclose(twice, base, atol=1e-12)
    for h in np.linspace(-3, 3, 7):
        e = deterministic_embedding(AgentClass.PEDESTRIAN, (0.6, 0.6, 1.7), h)
        assert math.isclose(np.linalg.norm(e), 1.0, abs_tol=1e-9)
    with pytest.raises(ValueError):
        deterministic_embedding(AgentClass.CAR, (1, 1, 1), 0.0, dim=3)


def test_scenario_file_round_trip(tmp_path):
    sc = generate_scenario(ScenarioConfig(seed=11, n_agents=4))
    path = tmp_path / "s.json"
    save_scenario(sc, path)
    back = load_scenario(path)
    assert len(back.frames) == len(sc.frames)
    for a, b in zip(sc.frames, back.frames):
        assert a.agents == b.agents
        assert a.ego_pose.almost_equal(b.ego_pose, 0.0)


def test_config_validation():
    with pytest.raises(ValueError):
        ScenarioConfig(dt=0.0)
    with pytest.raises(ValueError):
        ScenarioConfig.from_dict({"bogus": 1})
