"""Evaluation metrics: success rate, makespan, and the delay statistics
measured against each agent's solitary baseline."""

from __future__ import annotations

import json
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from .. import envcore as ec
from .. import ncf2
from ..dwa import DwaConfig
from ..nets.bundle import PolicyBundle


@dataclass
class EpisodeMetrics:
    success: bool
    makespan: int | None
    vd: float | None
    maxd: float | None
    meand: float | None
    baseline_missing: bool


@dataclass
class MetricsReport:
    """Aggregates over an evaluation batch. Efficiency and fairness fields
    are None when no episode succeeded (printed as null in reports)."""

    family: str
    n_agents: int
    n_obstacles: int
    n_episodes: int
    n_successes: int
    sr: float
    ms: float | None
    vd: float | None
    maxd: float | None
    meand: float | None
    delay_mode: str
    seed: int
    n_baseline_excluded: int

    def to_json(self) -> str:
        # fixed key order so reports diff cleanly
        payload = {
            "family": self.family,
            "n_agents": self.n_agents,
            "n_obstacles": self.n_obstacles,
            "n_episodes": self.n_episodes,
            "n_successes": self.n_successes,
            "SR": self.sr,
            "MS": self.ms,
            "VD": self.vd,
            "MAXD": self.maxd,
            "MEAND": self.meand,
            "delay_mode": self.delay_mode,
            "seed": self.seed,
            "n_baseline_excluded": self.n_baseline_excluded,
        }
        return json.dumps(payload, indent=1) + "\n"


def delay_stats(delays: np.ndarray) -> tuple[float, float, float]:
    """Population variance, max, and mean of one episode's delays."""
    d = np.asarray(delays, dtype=float)
    return float(np.var(d)), float(d.max()), float(d.mean())


def episode_metrics(
    bundle: PolicyBundle,
    scenario: ec.Scenario,
    seed: int,
    episode: int,
    cfg: ncf2.ProtocolConfig,
    delay_mode: str,
) -> EpisodeMetrics:
    result, _ = ncf2.rollout_episode(
        bundle, scenario, seed, episode, cfg, record_trace=False
    )
    if not result.success:
        return EpisodeMetrics(False, None, None, None, None, False)
    makespan = result.makespan
    policy = ncf2.solitary_policy(bundle, scenario.world.map_size)
    delays = []
    for i in range(scenario.n_agents):
        try:
            base = ec.solitary_rollout(
                scenario, i, policy, mode=delay_mode, dwa_cfg=cfg.dwa
            )
        except ec.SolitaryTimeout:
            return EpisodeMetrics(True, makespan, None, None, None, True)
        delays.append(result.goal_times[i] - base)
    vd, maxd, meand = delay_stats(np.array(delays))
    return EpisodeMetrics(True, makespan, vd, maxd, meand, False)


def evaluate(
    bundle: PolicyBundle,
    family: str,
    n_agents: int,
    n_obstacles: int,
    n_episodes: int = 100,
    seed: int = 0,
    delay_mode: str = "removed",
    cfg: ncf2.ProtocolConfig | None = None,
    map_size: float = 128.0,
    workers: int = 1,
) -> MetricsReport:
    """Deterministic evaluation over freshly generated episodes.

    Per-episode metrics are computed independently (optionally in thread
    workers) and averaged over the successful episodes; episodes whose
    solitary baseline times out are excluded from the delay statistics
    and counted in n_baseline_excluded.
    """
    cfg = cfg or ncf2.ProtocolConfig(deterministic=True)
    if not cfg.deterministic:
        raise ValueError("evaluation requires a deterministic protocol config")

    def one(e: int) -> EpisodeMetrics:
        try:
            sc = ec.generate_scenario(
                family, n_agents, n_obstacles, seed=seed + e, map_size=map_size
            )
        except ec.GenerationFailed:
            return EpisodeMetrics(False, None, None, None, None, False)
        return episode_metrics(bundle, sc, seed, e, cfg, delay_mode)

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            per = list(pool.map(one, range(n_episodes)))
    else:
        per = [one(e) for e in range(n_episodes)]

    succ = [m for m in per if m.success]
    with_delay = [m for m in succ if not m.baseline_missing]

    def avg(vals):
        return float(np.mean(vals)) if vals else None

    return MetricsReport(
        family=family,
        n_agents=n_agents,
        n_obstacles=n_obstacles,
        n_episodes=n_episodes,
        n_successes=len(succ),
        sr=100.0 * len(succ) / n_episodes,
        ms=avg([m.makespan for m in succ]),
        vd=avg([m.vd for m in with_delay]),
        maxd=avg([m.maxd for m in with_delay]),
        meand=avg([m.meand for m in with_delay]),
        delay_mode=delay_mode,
        seed=seed,
        n_baseline_excluded=len(succ) - len(with_delay),
    )
