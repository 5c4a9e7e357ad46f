import math

import numpy as np
import pytest

from fairnav.geom2d import (
    N_BEAMS,
    W_MAX,
    Action,
    Circle,
    CrashKind,
    Pose,
    WorldMap,
    beam_angles,
    check_crash,
    clamp_action,
    lidar_scan,
    normalize_angle,
    relative_offset,
    step_kinematics,
    v_max,
)


def test_angle_normalization():
    assert normalize_angle(math.pi) == pytest.approx(math.pi)
    assert normalize_angle(-math.pi) == pytest.approx(math.pi)
    assert normalize_angle(3 * math.pi) == pytest.approx(math.pi)
    assert normalize_angle(0.25) == pytest.approx(0.25)
    for t in np.linspace(-20, 20, 400):
        n = normalize_angle(t)
        assert -math.pi < n <= math.pi
        assert abs(math.sin(n) - math.sin(t)) < 1e-12


def test_pose_wraps_theta():
    p = Pose(0.0, 0.0, 5 * math.pi / 2)
    assert p.theta == pytest.approx(math.pi / 2)


def test_clamp_action_bounds():
    a = clamp_action(Action(99.0, 99.0), 128.0)
    assert a.v == pytest.approx(v_max(128.0))
    assert a.w == pytest.approx(W_MAX)
    a = clamp_action(Action(-5.0, -99.0), 128.0)
    assert a.v == 0.0
    assert a.w == pytest.approx(-W_MAX)


def test_kinematics_quarter_arc_exact():
    p = step_kinematics(Pose(0.0, 0.0, 0.0), Action(1.0, math.pi / 2))
    assert p.x == pytest.approx(2 / math.pi, abs=1e-9)
    assert p.y == pytest.approx(2 / math.pi, abs=1e-9)
    assert p.theta == pytest.approx(math.pi / 2, abs=1e-9)


def test_kinematics_straight_line():
    p = step_kinematics(Pose(1.0, 2.0, 0.5), Action(3.0, 0.0))
    assert p.x == pytest.approx(1.0 + 3.0 * math.cos(0.5))
    assert p.y == pytest.approx(2.0 + 3.0 * math.sin(0.5))
    assert p.theta == pytest.approx(0.5)


def test_kinematics_euler_oracle(rng):
    # midpoint-heading substeps keep the reference second-order accurate
    worst = 0.0
    for _ in range(300):
        pose = Pose(*rng.uniform(-5, 5, 2), rng.uniform(-3, 3))
        a = Action(rng.uniform(0, 6.4), rng.uniform(-W_MAX, W_MAX))
        exact = step_kinematics(pose, a)
        x, y, th = pose.x, pose.y, pose.theta
        n = 1000
        for _ in range(n):
            x += a.v / n * math.cos(th + a.w / (2 * n))
            y += a.v / n * math.sin(th + a.w / (2 * n))
            th += a.w / n
        worst = max(worst, math.hypot(exact.x - x, exact.y - y))
    assert worst < 1e-3


def test_lidar_forward_beam_range():
    world = WorldMap(128.0, [Circle(20.0, 0.0, 12.0)])
    scan = lidar_scan(Pose(0.0, 0.0, 0.0), world)
    assert scan.shape == (N_BEAMS,)
    # beam straight at the circle hits at 20 - 12 = 8
    assert scan[0] == pytest.approx(8.0, abs=1e-9)


def test_lidar_miss_saturates():
    world = WorldMap(128.0, [])
    scan = lidar_scan(Pose(64.0, 64.0, 0.3), world)
    assert np.all(scan == world.scan_range)


def test_lidar_inside_circle_is_zero():
    world = WorldMap(128.0, [Circle(64.0, 64.0, 10.0)])
    scan = lidar_scan(Pose(64.0, 64.0, 0.0), world)
    assert np.all(scan == 0.0)


def test_lidar_raymarch_oracle(rng):
    for _ in range(20):
        obstacles = [
            Circle(*rng.uniform(20, 108, 2), rng.uniform(6.4, 10.24))
            for _ in range(5)
        ]
        world = WorldMap(128.0, obstacles)
        pose = Pose(*rng.uniform(30, 98, 2), rng.uniform(-3, 3))
        if any(
            math.hypot(pose.x - c.cx, pose.y - c.cy) <= c.radius
            for c in obstacles
        ):
            continue
        scan = lidar_scan(pose, world)
        for ang, r in zip(beam_angles(pose.theta), scan):
            t, ref = 0.0, world.scan_range
            while t < world.scan_range:
                px = pose.x + t * math.cos(ang)
                py = pose.y + t * math.sin(ang)
                if any(
                    math.hypot(px - c.cx, py - c.cy) <= c.radius for c in obstacles
                ):
                    ref = t
                    break
                t += 1e-3
            assert abs(ref - r) < 2e-3


def test_crash_thresholds():
    world = WorldMap(128.0, [Circle(50.0, 50.0, 6.4)])
    r = world.robot_radius
    # just outside the contact distance: no crash
    ok = Pose(50.0 + 6.4 + r + 0.01, 50.0, 0.0)
    assert check_crash(ok, world) is CrashKind.NONE
    bad = Pose(50.0 + 6.4 + r - 0.01, 50.0, 0.0)
    assert check_crash(bad, world) is CrashKind.OBSTACLE


def test_crash_agents_and_bounds():
    world = WorldMap(128.0, [])
    r = world.robot_radius
    a = Pose(60.0, 60.0, 0.0)
    near = Pose(60.0 + 2 * r - 0.01, 60.0, 0.0)
    far = Pose(60.0 + 2 * r + 0.01, 60.0, 0.0)
    assert check_crash(a, world, [near]) is CrashKind.AGENT
    assert check_crash(a, world, [far]) is CrashKind.NONE
    assert check_crash(Pose(r - 0.01, 64.0, 0.0), world) is CrashKind.OBSTACLE
    assert check_crash(Pose(r + 0.01, 64.0, 0.0), world) is CrashKind.NONE


def test_relative_offset_is_plain_subtraction():
    d = relative_offset(Pose(5.0, 5.0, 1.0), Pose(3.0, 4.0, -2.0))
    assert np.allclose(d, [2.0, 1.0])
