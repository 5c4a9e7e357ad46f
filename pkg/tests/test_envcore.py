import math

import numpy as np
import pytest

from fairnav import envcore as ec
from fairnav.geom2d import Action, Circle, Pose, WorldMap


def test_generation_is_deterministic():
    a = ec.generate_scenario("Uniform", 4, 10, seed=7)
    b = ec.generate_scenario("Uniform", 4, 10, seed=7)
    assert ec.scenario_to_text(a) == ec.scenario_to_text(b)
    c = ec.generate_scenario("Uniform", 4, 10, seed=8)
    assert ec.scenario_to_text(a) != ec.scenario_to_text(c)


def test_generation_validation():
    with pytest.raises(ValueError):
        ec.generate_scenario("Diagonal", 2, 0, seed=0)
    with pytest.raises(ValueError):
        ec.generate_scenario("Uniform", 0, 0, seed=0)
    with pytest.raises(ValueError):
        ec.generate_scenario("Uniform", 2, -1, seed=0)


@pytest.mark.parametrize("family", ["Uniform", "Corner"])
def test_generation_invariants(family):
    for seed in range(5):
        sc = ec.generate_scenario(family, 6, 15, seed=seed)
        r = sc.world.robot_radius
        g = ec.goal_radius(sc.world.map_size)
        starts = np.array([[p.x, p.y] for p in sc.starts])
        # starts crash-free and pairwise separated
        for i, p in enumerate(sc.starts):
            from fairnav.geom2d import CrashKind, check_crash

            assert check_crash(p, sc.world) is CrashKind.NONE
            for j in range(i):
                assert np.linalg.norm(starts[i] - starts[j]) > 2 * r
        # goals pairwise separated and clear of obstacles
        for i, gi in enumerate(sc.goal_centers):
            for j in range(i):
                assert np.linalg.norm(gi - sc.goal_centers[j]) >= 2 * (g + r)
            for c in sc.world.obstacles:
                assert np.linalg.norm(gi - c.center()) >= c.radius + g
        # start headings point at own goals
        for p, gc in zip(sc.starts, sc.goal_centers):
            assert p.theta == pytest.approx(
                math.atan2(gc[1] - p.y, gc[0] - p.x)
            )


def test_corner_regions():
    side = ec.CORNER_REGION_FACTOR * 128.0
    for seed in range(5):
        sc = ec.generate_scenario("Corner", 4, 0, seed=seed)
        for p, gc in zip(sc.starts, sc.goal_centers):
            def in_corner(x, y):
                return (x <= side or x >= 128.0 - side) and (
                    y <= side or y >= 128.0 - side
                )

            assert in_corner(p.x, p.y)
            assert in_corner(gc[0], gc[1])
            # start and goal sit in opposite corners
            assert (p.x <= side) != (gc[0] <= side)
            assert (p.y <= side) != (gc[1] <= side)


def test_observation_vector_layout():
    sc = ec.generate_scenario("Uniform", 1, 3, seed=1)
    obs = ec.observe(sc.world, sc.initial_states(), 0, sc.goal_centers[0])
    vec = obs.vector(sc.world.map_size)
    assert vec.shape == (ec.OBS_DIM,)
    assert vec.dtype == np.float32
    assert np.all(vec[4:68] >= 0) and np.all(vec[4:68] <= 1)


def test_env_step_rewards():
    world = WorldMap(128.0, [])
    goals = np.array([[120.0, 64.0]])
    # plain step
    states = [ec.AgentState(Pose(30.0, 64.0, 0.0))]
    nxt, r, done = ec.env_step(world, states, goals, [Action(1.0, 0.0)], 1)
    assert r[0] == pytest.approx(-ec.R_TIME)
    assert not done[0]
    # goal arrival
    states = [ec.AgentState(Pose(118.0, 64.0, 0.0))]
    nxt, r, done = ec.env_step(world, states, goals, [Action(1.0, 0.0)], 4)
    assert nxt[0].status is ec.Status.AT_GOAL
    assert nxt[0].goal_time == 4
    assert r[0] == pytest.approx(ec.R_GOAL - ec.R_TIME)
    # crash into the boundary
    states = [ec.AgentState(Pose(3.0, 64.0, math.pi))]
    nxt, r, done = ec.env_step(world, states, goals, [Action(5.0, 0.0)], 1)
    assert nxt[0].status is ec.Status.CRASHED
    assert r[0] == pytest.approx(-ec.R_CRASH - ec.R_TIME)
    assert done[0]


def test_env_step_crash_takes_precedence_over_goal():
    world = WorldMap(128.0, [Circle(120.0, 64.0, 2.0)])
    goals = np.array([[120.0, 64.0]])  # goal center inside an obstacle
    states = [ec.AgentState(Pose(116.0, 64.0, 0.0))]
    nxt, r, done = ec.env_step(world, states, goals, [Action(2.0, 0.0)], 1)
    assert nxt[0].status is ec.Status.CRASHED


def test_env_step_absorbing_is_bitwise():
    world = WorldMap(128.0, [])
    goals = np.array([[120.0, 64.0], [10.0, 10.0]])
    crashed = ec.AgentState(Pose(50.0, 50.0, 0.25), status=ec.Status.CRASHED)
    active = ec.AgentState(Pose(30.0, 64.0, 0.0))
    nxt, r, done = ec.env_step(
        world, [crashed, active], goals, [Action(5.0, 0.1), Action(1.0, 0.0)], 1
    )
    assert nxt[0].pose == crashed.pose
    assert r[0] == 0.0
    assert done[0]


def test_agent_collision():
    world = WorldMap(128.0, [])
    r = world.robot_radius
    goals = np.array([[120.0, 64.0], [10.0, 64.0]])
    # two agents driving head-on into contact
    states = [
        ec.AgentState(Pose(60.0, 64.0, 0.0)),
        ec.AgentState(Pose(64.0 + 2 * r, 64.0, math.pi)),
    ]
    nxt, r_, done = ec.env_step(
        world, states, goals, [Action(2.5, 0.0), Action(2.5, 0.0)], 1
    )
    assert nxt[0].status is ec.Status.CRASHED
    assert nxt[1].status is ec.Status.CRASHED


def test_at_goal_agents_leave_the_map():
    circles = ec.agent_circles(
        [
            ec.AgentState(Pose(10.0, 10.0, 0.0), status=ec.Status.AT_GOAL),
            ec.AgentState(Pose(20.0, 20.0, 0.0), status=ec.Status.CRASHED),
            ec.AgentState(Pose(30.0, 30.0, 0.0)),
        ],
        exclude=2,
        r_robot=2.56,
    )
    assert len(circles) == 1
    assert (circles[0].cx, circles[0].cy) == (20.0, 20.0)


def test_neighbors_range_and_status():
    ms = 128.0
    lim = ec.neighbor_range(ms)
    states = [
        ec.AgentState(Pose(64.0, 64.0, 0.0)),
        ec.AgentState(Pose(64.0 + lim - 0.1, 64.0, 0.0)),
        ec.AgentState(Pose(64.0 + lim + 0.1, 64.0, 0.0)),
        ec.AgentState(Pose(65.0, 64.0, 0.0), status=ec.Status.CRASHED),
    ]
    assert ec.neighbors(states, 0, ms) == [1]
    assert ec.neighbors(states, 3, ms) == []


def test_solitary_rollout_dwa():
    sc = ec.generate_scenario("Uniform", 1, 0, seed=3)
    t = ec.solitary_rollout(sc, 0, lambda obs, goal: obs.dwa_suggestion)
    assert 1 <= t <= ec.T_MAX


def test_solitary_rollout_timeout():
    sc = ec.generate_scenario("Uniform", 1, 0, seed=3)
    with pytest.raises(ec.SolitaryTimeout):
        ec.solitary_rollout(sc, 0, lambda obs, goal: Action(0.0, 0.0))


def test_solitary_rollout_modes():
    sc = ec.generate_scenario("Uniform", 2, 0, seed=5)
    t_removed = ec.solitary_rollout(sc, 0, lambda o, g: o.dwa_suggestion, mode="removed")
    assert t_removed >= 1
    with pytest.raises(ValueError):
        ec.solitary_rollout(sc, 0, lambda o, g: o.dwa_suggestion, mode="ghost")


def test_scenario_text_roundtrip():
    sc = ec.generate_scenario("Corner", 3, 8, seed=11)
    text = ec.scenario_to_text(sc)
    back = ec.scenario_from_text(text)
    assert ec.scenario_to_text(back) == text
    assert back.n_agents == 3
    assert np.array_equal(back.goal_centers, sc.goal_centers)


def test_trace_text_roundtrip():
    recs = [
        ec.StepRecord(1, 0, 1.25, 2.5, -0.125, 1, 3.2, 0.1, -0.1, 0.0, "active"),
        ec.StepRecord(2, 0, 1.5, 2.75, -0.25, 0, 0.0, 0.0, -0.1, 0.05, "at_goal"),
    ]
    text = ec.trace_to_text(recs)
    back = ec.trace_from_text(text)
    assert back == recs
    with pytest.raises(ValueError):
        ec.trace_from_text("not,a,trace\n")
