"""2D geometry core: poses, circular obstacles, lidar raycasting, collision
tests, and the unicycle kinematics used by every layer above.

All quantities are in world units; one call to :func:`step_kinematics`
advances exactly one timestep. Everything here is a pure function over
value types and safe to call concurrently.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from enum import Enum
from typing import Sequence

import numpy as np

# Scale factors relative to map size (map defaults to 128 x 128).
DEFAULT_MAP_SIZE = 128.0
ROBOT_RADIUS_FACTOR = 0.02
SCAN_RANGE_FACTOR = 0.1
VMAX_FACTOR = 0.05
W_MAX = 0.25 * math.pi
N_BEAMS = 64

_STRAIGHT_EPS = 1e-9


def robot_radius(map_size: float = DEFAULT_MAP_SIZE) -> float:
    return ROBOT_RADIUS_FACTOR * map_size


def max_scan_range(map_size: float = DEFAULT_MAP_SIZE) -> float:
    return SCAN_RANGE_FACTOR * map_size


def v_max(map_size: float = DEFAULT_MAP_SIZE) -> float:
    return VMAX_FACTOR * map_size


def normalize_angle(theta: float) -> float:
    """Wrap an angle into (-pi, pi]."""
    return math.pi - (math.pi - theta) % (2.0 * math.pi)


@dataclass(frozen=True)
class Pose:
    """SE(2) pose. theta is normalized into (-pi, pi] on construction."""

    x: float
    y: float
    theta: float

    def __post_init__(self):
        object.__setattr__(self, "theta", normalize_angle(self.theta))

    def position(self) -> np.ndarray:
        return np.array([self.x, self.y])


@dataclass(frozen=True)
class Circle:
    cx: float
    cy: float
    radius: float

    def __post_init__(self):
        if self.radius <= 0.0:
            raise ValueError(f"circle radius must be positive, got {self.radius}")

    def center(self) -> np.ndarray:
        return np.array([self.cx, self.cy])


@dataclass
class WorldMap:
    """Static environment: a square map of side map_size with circular obstacles."""

    map_size: float = DEFAULT_MAP_SIZE
    obstacles: list[Circle] = field(default_factory=list)

    def __post_init__(self):
        for c in self.obstacles:
            if not (0.0 <= c.cx <= self.map_size and 0.0 <= c.cy <= self.map_size):
                raise ValueError(f"obstacle center ({c.cx}, {c.cy}) outside map")

    @property
    def robot_radius(self) -> float:
        return robot_radius(self.map_size)

    @property
    def scan_range(self) -> float:
        return max_scan_range(self.map_size)

    @property
    def v_max(self) -> float:
        return v_max(self.map_size)


@dataclass(frozen=True)
class Action:
    """Velocity command: v forward units/timestep, w radians/timestep."""

    v: float
    w: float


def clamp_action(action: Action, map_size: float = DEFAULT_MAP_SIZE) -> Action:
    return Action(
        v=min(max(action.v, 0.0), v_max(map_size)),
        w=min(max(action.w, -W_MAX), W_MAX),
    )


def step_kinematics(pose: Pose, action: Action) -> Pose:
    """Advance a unicycle one timestep with an exact constant-arc integration.

    Near-zero angular velocity falls back to straight-line motion so the
    arc formula stays well conditioned.
    """
    v, w = action.v, action.w
    if abs(w) < _STRAIGHT_EPS:
        return Pose(
            pose.x + v * math.cos(pose.theta),
            pose.y + v * math.sin(pose.theta),
            pose.theta,
        )
    r = v / w
    return Pose(
        pose.x + r * (math.sin(pose.theta + w) - math.sin(pose.theta)),
        pose.y - r * (math.cos(pose.theta + w) - math.cos(pose.theta)),
        normalize_angle(pose.theta + w),
    )


def beam_angles(pose_theta: float) -> np.ndarray:
    """The 64 beam headings, starting at the robot's own heading."""
    return pose_theta + np.arange(N_BEAMS) * (2.0 * math.pi / N_BEAMS)


def lidar_scan(pose: Pose, world: WorldMap, others: Sequence[Circle] = ()) -> np.ndarray:
    """Cast 64 equally spaced rays and return hit distances.

    Rays that hit nothing return the maximum scan range. Tangent hits
    count as hits. If the sensor origin is inside any circle, every beam
    reads zero.
    """
    rmax = world.scan_range
    circles = list(world.obstacles) + list(others)
    if not circles:
        return np.full(N_BEAMS, rmax)

    centers = np.array([[c.cx, c.cy] for c in circles])
    radii = np.array([c.radius for c in circles])
    origin = np.array([pose.x, pose.y])

    oc = centers - origin  # (M, 2)
    dist2 = np.sum(oc * oc, axis=1)
    if np.any(dist2 <= radii * radii):
        return np.zeros(N_BEAMS)

    angles = beam_angles(pose.theta)
    dirs = np.stack([np.cos(angles), np.sin(angles)], axis=1)  # (64, 2)

    # Ray-circle quadratic per (beam, circle): t^2 - 2 b t + c = 0.
    b = dirs @ oc.T  # (64, M)
    c = dist2 - radii * radii  # (M,)
    disc = b * b - c[None, :]
    hit = disc >= 0.0
    t = np.where(hit, b - np.sqrt(np.maximum(disc, 0.0)), np.inf)
    t = np.where(t >= 0.0, t, np.inf)  # circle behind the ray origin
    ranges = np.min(t, axis=1)
    return np.minimum(ranges, rmax)


class CrashKind(Enum):
    NONE = "none"
    OBSTACLE = "obstacle"
    AGENT = "agent"


def check_crash(
    pose: Pose, world: WorldMap, other_agents: Sequence[Pose] = ()
) -> CrashKind:
    """Collision test for the robot body circle.

    Leaving the map counts as an obstacle crash; the boundary behaves like
    a wall. Agent-agent contact happens when centers come closer than two
    body radii.
    """
    r = world.robot_radius
    if (
        pose.x - r < 0.0
        or pose.y - r < 0.0
        or pose.x + r > world.map_size
        or pose.y + r > world.map_size
    ):
        return CrashKind.OBSTACLE
    for c in world.obstacles:
        if math.hypot(pose.x - c.cx, pose.y - c.cy) < c.radius + r:
            return CrashKind.OBSTACLE
    for p in other_agents:
        if math.hypot(pose.x - p.x, pose.y - p.y) < 2.0 * r:
            return CrashKind.AGENT
    return CrashKind.NONE


def relative_offset(a: Pose, b: Pose) -> np.ndarray:
    """World-frame positional offset of a with respect to b (heading ignored)."""
    return np.array([a.x - b.x, a.y - b.y])
