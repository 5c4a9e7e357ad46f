"""Episode engine: scenario generation, observation building, stepping with
the sparse efficiency-safety reward, neighbor queries, and the solitary
baseline rollout used for delay measurement.

An episode instance is single-threaded; run many instances in parallel
workers if you need throughput.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from enum import Enum
from typing import Callable, Sequence

import numpy as np

from .dwa import DwaConfig, dwa_suggest
from .geom2d import (
    W_MAX,
    Action,
    Circle,
    CrashKind,
    Pose,
    WorldMap,
    check_crash,
    clamp_action,
    lidar_scan,
    step_kinematics,
)

T_MAX = 100
GOAL_RADIUS_FACTOR = 0.02
NEIGHBOR_RANGE_FACTOR = 0.15
R_GOAL = 3.0
R_CRASH = 10.0
R_TIME = 0.1

OBSTACLE_RADIUS_RANGE = (0.05, 0.08)  # times map_size
CORNER_REGION_FACTOR = 0.2  # side of each corner square, times map_size

FAMILIES = ("Uniform", "Corner")


class GenerationFailed(RuntimeError):
    """Raised when rejection sampling cannot place all entities."""


class SolitaryTimeout(RuntimeError):
    """The solitary policy failed to reach the goal within the time limit."""


def goal_radius(map_size: float) -> float:
    return GOAL_RADIUS_FACTOR * map_size


def neighbor_range(map_size: float) -> float:
    return NEIGHBOR_RANGE_FACTOR * map_size


class Status(Enum):
    ACTIVE = "active"
    AT_GOAL = "at_goal"
    CRASHED = "crashed"


@dataclass
class AgentState:
    pose: Pose
    status: Status = Status.ACTIVE
    goal_time: int | None = None


@dataclass
class Scenario:
    world: WorldMap
    starts: list[Pose]
    goal_centers: np.ndarray  # (N, 2)
    family: str
    n_obstacles: int
    seed: int

    @property
    def n_agents(self) -> int:
        return len(self.starts)

    def initial_states(self) -> list[AgentState]:
        return [AgentState(pose=p) for p in self.starts]


@dataclass
class Observation:
    """Per-agent observation: pose features, normalized lidar, normalized
    goal displacement, and the DWA suggestion."""

    pose_feats: np.ndarray  # (4,) x/m, y/m, cos(theta), sin(theta)
    lidar: np.ndarray  # (64,) normalized to [0, 1]
    goal_disp: np.ndarray  # (2,) (goal - position) / map_size
    dwa_suggestion: Action
    lidar_raw: np.ndarray = field(repr=False, default=None)

    def vector(self, map_size: float) -> np.ndarray:
        vm = 0.05 * map_size
        return np.concatenate(
            [
                self.pose_feats,
                self.lidar,
                self.goal_disp,
                [self.dwa_suggestion.v / vm, self.dwa_suggestion.w / W_MAX],
            ]
        ).astype(np.float32)


OBS_DIM = 72


@dataclass
class StepRecord:
    t: int
    agent_id: int
    x: float
    y: float
    theta: float
    f: int
    v: float
    w: float
    r_hat: float
    r_tilde: float
    status: str


@dataclass
class EpisodeResult:
    success: bool
    goal_times: list[int | None]
    failure_cause: str | None  # "crash" | "timeout" | None
    trace: list[StepRecord] = field(default_factory=list)

    @property
    def makespan(self) -> int | None:
        if not self.success:
            return None
        return max(t for t in self.goal_times)


# ---------------------------------------------------------------------------
# Scenario generation


def _corner_square(corner: int, map_size: float) -> tuple[float, float]:
    """Lower-left coordinates of one of the four corner squares."""
    side = CORNER_REGION_FACTOR * map_size
    x0 = 0.0 if corner in (0, 2) else map_size - side
    y0 = 0.0 if corner in (0, 1) else map_size - side
    return x0, y0


def generate_scenario(
    family: str,
    n_agents: int,
    n_obstacles: int,
    seed: int,
    map_size: float = 128.0,
    max_attempts: int = 10000,
) -> Scenario:
    """Rejection-sample a scenario. Deterministic for a given seed.

    Starts are crash-free, goal centers are pairwise separated by at
    least 2 * (goal_radius + robot_radius), and every goal region stays
    clear of obstacles. Start headings point at the agent's own goal.
    """
    if family not in FAMILIES:
        raise ValueError(f"unknown family {family!r}")
    if not 1 <= n_agents <= 32:
        raise ValueError("n_agents must be in 1..32")
    if n_obstacles < 0:
        raise ValueError("n_obstacles must be non-negative")

    rng = np.random.Generator(np.random.Philox(key=seed))
    r_rob = 0.02 * map_size
    g_rad = goal_radius(map_size)
    goal_sep = 2.0 * (g_rad + r_rob)
    side = CORNER_REGION_FACTOR * map_size

    attempts = 0
    # A crowded layout can block a corner region entirely; after this many
    # draws for a single entity, redraw the whole obstacle layout.
    per_entity_cap = 60

    class _LayoutStuck(Exception):
        pass

    def budget(entity_attempts: list[int]):
        nonlocal attempts
        attempts += 1
        if attempts > max_attempts:
            raise GenerationFailed(
                f"could not place agents after {max_attempts} attempts "
                f"(family={family}, N={n_agents}, obstacles={n_obstacles})"
            )
        entity_attempts[0] += 1
        if entity_attempts[0] > per_entity_cap:
            raise _LayoutStuck

    def sample_in(x0: float, y0: float, w: float, h: float, margin: float):
        return np.array(
            [rng.uniform(x0 + margin, x0 + w - margin),
             rng.uniform(y0 + margin, y0 + h - margin)]
        )

    lo, hi = OBSTACLE_RADIUS_RANGE
    while True:
        obstacles = []
        for _ in range(n_obstacles):
            radius = rng.uniform(lo * map_size, hi * map_size)
            cx, cy = rng.uniform(0.0, map_size, size=2)
            obstacles.append(Circle(float(cx), float(cy), float(radius)))
        world = WorldMap(map_size=map_size, obstacles=obstacles)
        corners = rng.integers(0, 4, size=n_agents) if family == "Corner" else None

        try:
            positions: list[np.ndarray] = []
            for i in range(n_agents):
                entity_attempts = [0]
                while True:
                    budget(entity_attempts)
                    if family == "Corner":
                        x0, y0 = _corner_square(int(corners[i]), map_size)
                        p = sample_in(x0, y0, side, side, r_rob)
                    else:
                        p = sample_in(0.0, 0.0, map_size, map_size, r_rob)
                    pose = Pose(p[0], p[1], 0.0)
                    if check_crash(pose, world) is not CrashKind.NONE:
                        continue
                    if any(np.linalg.norm(p - q) <= 2.0 * r_rob for q in positions):
                        continue
                    positions.append(p)
                    break

            goals: list[np.ndarray] = []
            margin = g_rad + r_rob
            for i in range(n_agents):
                entity_attempts = [0]
                while True:
                    budget(entity_attempts)
                    if family == "Corner":
                        x0, y0 = _corner_square(3 - int(corners[i]), map_size)
                        g = sample_in(x0, y0, side, side, margin)
                    else:
                        g = sample_in(0.0, 0.0, map_size, map_size, margin)
                    if any(np.linalg.norm(g - q) < goal_sep for q in goals):
                        continue
                    if any(
                        np.linalg.norm(g - c.center()) < c.radius + g_rad
                        for c in obstacles
                    ):
                        continue
                    goals.append(g)
                    break
            break
        except _LayoutStuck:
            continue

    starts = [
        Pose(p[0], p[1], math.atan2(g[1] - p[1], g[0] - p[0]))
        for p, g in zip(positions, goals)
    ]
    return Scenario(
        world=world,
        starts=starts,
        goal_centers=np.array(goals),
        family=family,
        n_obstacles=n_obstacles,
        seed=seed,
    )


# ---------------------------------------------------------------------------
# Observation and stepping


def agent_circles(
    states: Sequence[AgentState], exclude: int, r_robot: float
) -> list[Circle]:
    """Other agents as body circles. At-goal agents leave the map; crashed
    agents stay behind as static obstacles."""
    out = []
    for j, s in enumerate(states):
        if j == exclude or s.status is Status.AT_GOAL:
            continue
        out.append(Circle(s.pose.x, s.pose.y, r_robot))
    return out


def observe_pose(
    world: WorldMap,
    pose: Pose,
    goal_center: np.ndarray,
    others: Sequence[Circle] = (),
    dwa_cfg: DwaConfig | None = None,
) -> Observation:
    m = world.map_size
    raw = lidar_scan(pose, world, others)
    suggestion = dwa_suggest(pose, raw, goal_center, world, dwa_cfg)
    return Observation(
        pose_feats=np.array(
            [pose.x / m, pose.y / m, math.cos(pose.theta), math.sin(pose.theta)]
        ),
        lidar=raw / world.scan_range,
        goal_disp=(goal_center - pose.position()) / m,
        dwa_suggestion=suggestion,
        lidar_raw=raw,
    )


def observe(
    world: WorldMap,
    states: Sequence[AgentState],
    i: int,
    goal_center: np.ndarray,
    dwa_cfg: DwaConfig | None = None,
) -> Observation:
    others = agent_circles(states, i, world.robot_radius)
    return observe_pose(world, states[i].pose, goal_center, others, dwa_cfg)


def env_step(
    world: WorldMap,
    states: Sequence[AgentState],
    goal_centers: np.ndarray,
    actions: Sequence[Action],
    t: int,
) -> tuple[list[AgentState], np.ndarray, np.ndarray]:
    """Advance one timestep: move all active agents simultaneously, then
    resolve crashes and goal arrivals on the post-move configuration.

    Returns (next_states, rewards, done_flags). Absorbing agents keep
    their pose bitwise unchanged and receive zero reward.
    """
    n = len(states)
    g_rad = goal_radius(world.map_size)
    moved: list[AgentState] = []
    for i, s in enumerate(states):
        if s.status is Status.ACTIVE:
            moved.append(
                AgentState(
                    pose=step_kinematics(s.pose, actions[i]),
                    status=Status.ACTIVE,
                    goal_time=None,
                )
            )
        else:
            moved.append(AgentState(pose=s.pose, status=s.status, goal_time=s.goal_time))

    rewards = np.zeros(n)
    r_rob = world.robot_radius
    crash_now = [False] * n
    for i, s in enumerate(moved):
        if states[i].status is not Status.ACTIVE:
            continue
        others = [
            p.pose
            for j, p in enumerate(moved)
            if j != i and p.status is not Status.AT_GOAL
        ]
        crash_now[i] = check_crash(s.pose, world, others) is not CrashKind.NONE

    for i, s in enumerate(moved):
        if states[i].status is not Status.ACTIVE:
            rewards[i] = 0.0
            continue
        if crash_now[i]:
            s.status = Status.CRASHED
            rewards[i] = -R_CRASH - R_TIME
        elif np.linalg.norm(s.pose.position() - goal_centers[i]) <= g_rad:
            s.status = Status.AT_GOAL
            s.goal_time = t
            rewards[i] = R_GOAL - R_TIME
        else:
            rewards[i] = -R_TIME

    done = np.array([s.status is not Status.ACTIVE for s in moved])
    return moved, rewards, done


def neighbors(
    states: Sequence[AgentState], i: int, map_size: float
) -> list[int]:
    """Indices of active agents within communication range of agent i."""
    if states[i].status is not Status.ACTIVE:
        return []
    rng_limit = neighbor_range(map_size)
    p = states[i].pose.position()
    out = []
    for j, s in enumerate(states):
        if j == i or s.status is not Status.ACTIVE:
            continue
        if np.linalg.norm(s.pose.position() - p) <= rng_limit:
            out.append(j)
    return out


# ---------------------------------------------------------------------------
# Solitary baseline

Policy = Callable[[Observation, np.ndarray], Action]


def solitary_rollout(
    scenario: Scenario,
    i: int,
    policy: Policy,
    mode: str = "removed",
    t_max: int = T_MAX,
    dwa_cfg: DwaConfig | None = None,
) -> int:
    """Run agent i alone under a deterministic policy; returns its goal time.

    mode="removed" deletes the other agents; mode="frozen" keeps them as
    static circles at their start poses. Raises SolitaryTimeout if the
    goal is not reached within t_max (a crash also counts as unreachable).
    """
    if mode not in ("removed", "frozen"):
        raise ValueError(f"unknown mode {mode!r}")
    world = scenario.world
    r_rob = world.robot_radius
    others: list[Circle] = []
    if mode == "frozen":
        others = [
            Circle(p.x, p.y, r_rob) for j, p in enumerate(scenario.starts) if j != i
        ]
    pose = scenario.starts[i]
    goal = scenario.goal_centers[i]
    g_rad = goal_radius(world.map_size)
    for t in range(1, t_max + 1):
        obs = observe_pose(world, pose, goal, others, dwa_cfg)
        action = clamp_action(policy(obs, goal), world.map_size)
        pose = step_kinematics(pose, action)
        if check_crash(pose, world, [Pose(c.cx, c.cy, 0.0) for c in others]) is not CrashKind.NONE:
            raise SolitaryTimeout(f"agent {i} crashed at t={t} under solitary policy")
        if np.linalg.norm(pose.position() - goal) <= g_rad:
            return t
    raise SolitaryTimeout(f"agent {i} did not reach its goal within {t_max} steps")


# ---------------------------------------------------------------------------
# Scenario / trace text formats


def scenario_to_text(s: Scenario) -> str:
    lines = [
        "# fairnav scenario v1",
        f"family = {s.family}",
        f"n_agents = {s.n_agents}",
        f"n_obstacles = {s.n_obstacles}",
        f"seed = {s.seed}",
        f"map_size = {float(s.world.map_size)!r}",
    ]
    for c in s.world.obstacles:
        lines.append(f"obstacle {float(c.cx)!r} {float(c.cy)!r} {float(c.radius)!r}")
    for i, p in enumerate(s.starts):
        lines.append(f"start {i} {float(p.x)!r} {float(p.y)!r} {float(p.theta)!r}")
    for i, g in enumerate(s.goal_centers):
        lines.append(f"goal {i} {float(g[0])!r} {float(g[1])!r}")
    return "\n".join(lines) + "\n"


def scenario_from_text(text: str) -> Scenario:
    header: dict[str, str] = {}
    obstacles: list[Circle] = []
    starts: dict[int, Pose] = {}
    goals: dict[int, np.ndarray] = {}
    for line in text.splitlines():
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        if "=" in line:
            key, _, value = line.partition("=")
            header[key.strip()] = value.strip()
            continue
        parts = line.split()
        if parts[0] == "obstacle":
            obstacles.append(Circle(*map(float, parts[1:4])))
        elif parts[0] == "start":
            starts[int(parts[1])] = Pose(*map(float, parts[2:5]))
        elif parts[0] == "goal":
            goals[int(parts[1])] = np.array([float(parts[2]), float(parts[3])])
        else:
            raise ValueError(f"unrecognized scenario record: {line!r}")
    n = int(header["n_agents"])
    world = WorldMap(map_size=float(header["map_size"]), obstacles=obstacles)
    return Scenario(
        world=world,
        starts=[starts[i] for i in range(n)],
        goal_centers=np.array([goals[i] for i in range(n)]),
        family=header["family"],
        n_obstacles=int(header["n_obstacles"]),
        seed=int(header["seed"]),
    )


TRACE_HEADER = "t,agent_id,x,y,theta,f,v,w,r_hat,r_tilde,status"


def trace_to_text(records: Sequence[StepRecord]) -> str:
    lines = [TRACE_HEADER]
    for r in records:
        lines.append(
            f"{r.t},{r.agent_id},{float(r.x)!r},{float(r.y)!r},{float(r.theta)!r},{r.f},"
            f"{float(r.v)!r},{float(r.w)!r},{float(r.r_hat)!r},{float(r.r_tilde)!r},{r.status}"
        )
    return "\n".join(lines) + "\n"


def trace_from_text(text: str) -> list[StepRecord]:
    lines = text.strip().splitlines()
    if not lines or lines[0] != TRACE_HEADER:
        raise ValueError("not a fairnav trace file")
    out = []
    for line in lines[1:]:
        p = line.split(",")
        out.append(
            StepRecord(
                t=int(p[0]),
                agent_id=int(p[1]),
                x=float(p[2]),
                y=float(p[3]),
                theta=float(p[4]),
                f=int(p[5]),
                v=float(p[6]),
                w=float(p[7]),
                r_hat=float(p[8]),
                r_tilde=float(p[9]),
                status=p[10],
            )
        )
    return out
