"""Dynamic Window Approach base controller.

Samples a velocity grid, simulates each candidate over a short horizon,
discards candidates that crash, and scores the remainder on heading
alignment, clearance, and speed. Works strictly from the lidar picture:
beam endpoints that hit something become point obstacles, so the planner
never sees more than the robot senses.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .geom2d import (
    N_BEAMS,
    W_MAX,
    Action,
    Pose,
    WorldMap,
    beam_angles,
    normalize_angle,
)


@dataclass
class DwaConfig:
    v_samples: int = 11
    w_samples: int = 11
    horizon: int = 5
    w_heading: float = 1.0
    w_clearance: float = 1.0
    w_velocity: float = 0.2

    def __post_init__(self):
        if self.v_samples < 2 or self.w_samples < 2:
            raise ValueError("need at least 2 samples per velocity axis")
        if self.horizon < 1:
            raise ValueError("horizon must be >= 1")
        if min(self.w_heading, self.w_clearance, self.w_velocity) < 0:
            raise ValueError("score weights must be non-negative")


def lidar_points(pose: Pose, ranges: np.ndarray, scan_range: float) -> np.ndarray:
    """Beam endpoints that actually hit something, as (K, 2) world points."""
    hit = ranges < scan_range
    if not np.any(hit):
        return np.zeros((0, 2))
    angles = beam_angles(pose.theta)[hit]
    r = ranges[hit]
    return np.stack(
        [pose.x + r * np.cos(angles), pose.y + r * np.sin(angles)], axis=1
    )


def _simulate_grid(
    pose: Pose, v: np.ndarray, w: np.ndarray, horizon: int
) -> tuple[np.ndarray, np.ndarray]:
    """Roll every (v, w) candidate forward; returns positions (C, H, 2)
    and final headings (C,)."""
    n = v.shape[0]
    x = np.full(n, pose.x)
    y = np.full(n, pose.y)
    th = np.full(n, pose.theta)
    straight = np.abs(w) < 1e-9
    xs = np.empty((n, horizon))
    ys = np.empty((n, horizon))
    for k in range(horizon):
        with np.errstate(divide="ignore", invalid="ignore"):
            r = np.where(straight, 0.0, v / np.where(straight, 1.0, w))
        nx = np.where(
            straight,
            x + v * np.cos(th),
            x + r * (np.sin(th + w) - np.sin(th)),
        )
        ny = np.where(
            straight,
            y + v * np.sin(th),
            y - r * (np.cos(th + w) - np.cos(th)),
        )
        th = th + np.where(straight, 0.0, w)
        x, y = nx, ny
        xs[:, k] = x
        ys[:, k] = y
    th = np.arctan2(np.sin(th), np.cos(th))
    return np.stack([xs, ys], axis=2), th


def dwa_suggest(
    pose: Pose,
    lidar_ranges: np.ndarray,
    goal_center: np.ndarray,
    world: WorldMap,
    config: DwaConfig | None = None,
) -> Action:
    """Pick the best velocity command from the sampled dynamic window.

    Ties on score break toward smaller |w|, then smaller candidate index.
    If every candidate crashes within the horizon, rotate in place at
    (0, w_max); a fully blocked window is a normal outcome.
    """
    cfg = config or DwaConfig()
    vmax = world.v_max
    rmax = world.scan_range
    r_robot = world.robot_radius

    assert lidar_ranges.shape == (N_BEAMS,)
    points = lidar_points(pose, lidar_ranges, rmax)

    vs = np.linspace(0.0, vmax, cfg.v_samples)
    ws = np.linspace(-W_MAX, W_MAX, cfg.w_samples)
    v_grid = np.repeat(vs, cfg.w_samples)
    w_grid = np.tile(ws, cfg.v_samples)

    positions, final_th = _simulate_grid(pose, v_grid, w_grid, cfg.horizon)

    # Arrival is absorbing: once a candidate trajectory enters the goal
    # region the robot stops there, so later lookahead steps are fiction
    # and do not count for crash or clearance.
    g_rad = 0.02 * world.map_size
    dist_goal = np.linalg.norm(positions - goal_center[None, None, :], axis=2)
    arrived = dist_goal <= g_rad
    active = (np.cumsum(arrived, axis=1) - arrived) == 0  # up to first arrival

    # Crash test: point obstacles closer than the body radius, or the body
    # circle leaving the map.
    out = (
        (positions[:, :, 0] - r_robot < 0.0)
        | (positions[:, :, 1] - r_robot < 0.0)
        | (positions[:, :, 0] + r_robot > world.map_size)
        | (positions[:, :, 1] + r_robot > world.map_size)
    )
    crashed = np.any(out & active, axis=1)
    if points.shape[0] > 0:
        d = np.linalg.norm(
            positions[:, :, None, :] - points[None, None, :, :], axis=3
        )  # (C, H, K)
        d = np.where(active[:, :, None], d, np.inf)
        dmin = d.min(axis=(1, 2))
        crashed |= dmin < r_robot
        clearance = np.clip(dmin - r_robot, 0.0, rmax)
    else:
        clearance = np.full(v_grid.shape[0], rmax)

    if np.all(crashed):
        return Action(0.0, W_MAX)

    # Heading error is judged at the pose after the first (executed) step;
    # judging at the horizon end makes the planner crawl near the goal,
    # because fast candidates overshoot within the lookahead. A first step
    # that lands inside the goal region counts as perfectly aligned.
    th1 = pose.theta + w_grid
    to_goal = np.arctan2(
        goal_center[1] - positions[:, 0, 1], goal_center[0] - positions[:, 0, 0]
    )
    herr = np.abs(np.arctan2(np.sin(to_goal - th1), np.cos(to_goal - th1)))
    herr[arrived[:, 0]] = 0.0
    score = (
        cfg.w_heading * (1.0 - herr / math.pi)
        + cfg.w_clearance * (clearance / rmax)
        + cfg.w_velocity * (v_grid / vmax)
    )
    score[crashed] = -np.inf

    best = np.max(score)
    tied = np.flatnonzero(score == best)
    tied = tied[np.argsort(np.abs(w_grid[tied]), kind="stable")]
    idx = tied[0]
    return Action(float(v_grid[idx]), float(w_grid[idx]))
