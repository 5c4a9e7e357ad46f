"""Fair-delay cooperation protocol.

Each timestep runs three stages per agent: exchange patience messages and
decide who moves, exchange state messages among the movers, then sample
velocity commands filtered by the move decisions. Stopping earns a sparse
fairness-efficiency reward built from neighbor patience and improvement
values, scored against the agent's own solitary critic.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Mapping, Sequence

import numpy as np

from . import envcore as ec
from .dwa import DwaConfig
from .geom2d import (
    W_MAX,
    Action,
    Pose,
    clamp_action,
    relative_offset,
    step_kinematics,
    v_max,
)
from .nets import rng as rngmod
from .nets.bundle import PolicyBundle
from .nets.distributions import sample_binary, sample_continuous

QFn = Callable[[np.ndarray, Action], float]


@dataclass
class FairnessConstants:
    alpha: float = 0.5
    beta: float = 0.1

    def __post_init__(self):
        if self.alpha < 0 or self.beta < 0:
            raise ValueError("fairness constants must be non-negative")


@dataclass
class AblationFlags:
    no_improvement: bool = False
    full_comm: bool = False
    fixed_priority: bool = False


class PatienceLedger:
    """Per-agent running patience: the accumulated action-value gap between
    the solitary action and the action actually taken. Starts at zero and
    is never reset within an episode."""

    def __init__(self, n_agents: int):
        self.rho = np.zeros(n_agents)

    def values(self) -> np.ndarray:
        return self.rho.copy()


def action_norm(a: Action, map_size: float) -> np.ndarray:
    return np.array([a.v / v_max(map_size), a.w / W_MAX])


def update_patience(
    ledger: PatienceLedger,
    i: int,
    obs_vec: np.ndarray,
    a_hat: Action,
    a: Action,
    q: QFn,
) -> float:
    """Accumulate the gap between the solitary action and the taken one.

    rho_i grows by Q(o, a_hat) - Q(o, a); taking exactly the solitary
    action leaves it unchanged. Returns the new value.
    """
    ledger.rho[i] += q(obs_vec, a_hat) - q(obs_vec, a)
    return float(ledger.rho[i])


# ---------------------------------------------------------------------------
# Messages


@dataclass
class PatienceMessage:
    """Sender-to-receiver packet for the move/stay negotiation: current and
    predicted positional offsets plus the relative-patience scalar. The
    scalar intentionally appears in both halves."""

    delta_now: np.ndarray  # (2,)
    rel_patience: float
    delta_next: np.ndarray  # (2,)
    rel_patience_2: float

    def rows(self, dup_patience: bool = True) -> tuple[np.ndarray, np.ndarray]:
        first = np.concatenate([self.delta_now, [self.rel_patience]])
        if dup_patience:
            second = np.concatenate([self.delta_next, [self.rel_patience_2]])
        else:
            second = np.asarray(self.delta_next, dtype=float)
        return first, second


@dataclass
class StateMessage:
    """Movement broadcast among cleared agents; all-zero when the sender
    was stopped this step."""

    gated_delta_now: np.ndarray  # (2,)
    gated_delta_next: np.ndarray  # (2,)

    def rows(self) -> tuple[np.ndarray, np.ndarray]:
        return self.gated_delta_now, self.gated_delta_next


def _rel_patience(rho: np.ndarray, i: int, nbrs: Sequence[int], j: int) -> float:
    denom = rho[i] + sum(rho[k] for k in nbrs)
    if denom == 0.0:
        return 0.0
    return float((rho[j] - rho[i]) / denom)


def build_patience_messages(
    poses: Mapping[int, Pose],
    rho: np.ndarray,
    next_poses: Mapping[int, Pose],
    i: int,
    nbrs: Sequence[int],
) -> list[PatienceMessage]:
    out = []
    for j in nbrs:
        rel = _rel_patience(rho, i, nbrs, j)
        out.append(
            PatienceMessage(
                delta_now=relative_offset(poses[j], poses[i]),
                rel_patience=rel,
                delta_next=relative_offset(next_poses[j], poses[i]),
                rel_patience_2=rel,
            )
        )
    return out


def build_state_messages(
    poses: Mapping[int, Pose],
    next_poses: Mapping[int, Pose],
    decisions: Mapping[int, int],
    i: int,
    nbrs: Sequence[int],
) -> list[StateMessage]:
    out = []
    for j in nbrs:
        g = float(decisions[j])
        out.append(
            StateMessage(
                gated_delta_now=g * relative_offset(poses[j], poses[i]),
                gated_delta_next=g * relative_offset(next_poses[j], poses[i]),
            )
        )
    return out


def encode_patience(bundle: PolicyBundle, msgs: Sequence[PatienceMessage]) -> np.ndarray:
    dup = bundle.dup_patience
    rows = [m.rows(dup) for m in msgs]
    d1, d2 = bundle.enc_patience.row_dims
    s1 = np.array([r[0] for r in rows]).reshape(len(rows), d1) if rows else np.zeros((0, d1))
    s2 = np.array([r[1] for r in rows]).reshape(len(rows), d2) if rows else np.zeros((0, d2))
    return bundle.enc_patience.encode_np([s1, s2])


def encode_state(bundle: PolicyBundle, msgs: Sequence[StateMessage]) -> np.ndarray:
    k = len(msgs)
    s1 = np.array([m.gated_delta_now for m in msgs]).reshape(k, 2) if k else np.zeros((0, 2))
    s2 = np.array([m.gated_delta_next for m in msgs]).reshape(k, 2) if k else np.zeros((0, 2))
    return bundle.enc_state.encode_np([s1, s2])


# ---------------------------------------------------------------------------
# Action generation


def residual_bounds(map_size: float) -> tuple[np.ndarray, np.ndarray]:
    hi = np.array([v_max(map_size), W_MAX])
    return -hi, hi


def compose_residual(base: Action, res: np.ndarray, map_size: float) -> Action:
    return clamp_action(Action(base.v + float(res[0]), base.w + float(res[1])), map_size)


def solitary_action(
    bundle: PolicyBundle,
    obs: ec.Observation,
    map_size: float,
    rng: np.random.Generator | None = None,
    deterministic: bool = True,
) -> tuple[Action, float]:
    """Single-agent policy: a learned residual on top of the DWA suggestion."""
    out = bundle.actor_forward_np("solitary", [obs.vector(map_size)])
    low, high = residual_bounds(map_size)
    res, logp = sample_continuous(out[:2], out[2:], rng, low, high, deterministic)
    return compose_residual(obs.dwa_suggestion, res, map_size), logp


def solitary_policy(bundle: PolicyBundle, map_size: float) -> ec.Policy:
    """Deterministic solitary policy as an (obs, goal) -> Action callable."""
    return lambda obs, goal: solitary_action(bundle, obs, map_size)[0]


def cf2_decide(
    bundle: PolicyBundle,
    obs_vec: np.ndarray,
    enc_patience: np.ndarray,
    rng: np.random.Generator | None,
    deterministic: bool = False,
) -> tuple[int, float]:
    """Binary move/stay decision; 1 means move. Deterministic ties break
    toward moving, so an untrained filter never freezes the fleet."""
    logits = bundle.actor_forward_np("cf2", [obs_vec, enc_patience])
    return sample_binary(logits, rng, deterministic)


def select_action(
    bundle: PolicyBundle,
    obs_vec: np.ndarray,
    enc_state: np.ndarray,
    f: int,
    base: Action,
    map_size: float,
    rng: np.random.Generator | None = None,
    eps: np.ndarray | None = None,
    deterministic: bool = False,
) -> tuple[Action, Action, float]:
    """Sample the velocity command nu and filter it by the move decision.

    Returns (executed action, nu, log_prob). A stopped agent executes
    (0, 0) regardless of nu.
    """
    out = bundle.actor_forward_np("nav", [obs_vec, enc_state])
    low, high = residual_bounds(map_size)
    res, logp = sample_continuous(out[:2], out[2:], rng, low, high, deterministic, eps)
    nu = compose_residual(base, res, map_size)
    executed = nu if f == 1 else Action(0.0, 0.0)
    return executed, nu, logp


def default_action(
    bundle: PolicyBundle,
    obs_vec: np.ndarray,
    poses: Mapping[int, Pose],
    next_poses: Mapping[int, Pose],
    i: int,
    nbrs: Sequence[int],
    base: Action,
    map_size: float,
    eps: np.ndarray | None = None,
    deterministic: bool = False,
) -> Action:
    """Counterfactual command if every agent (self included) were cleared
    to move; shares the caller's noise so the comparison is paired."""
    all_move = {j: 1 for j in list(nbrs) + [i]}
    msgs = build_state_messages(poses, next_poses, all_move, i, nbrs)
    enc = encode_state(bundle, msgs)
    a, _, _ = select_action(
        bundle, obs_vec, enc, 1, base, map_size, eps=eps, deterministic=deterministic
    )
    return a


def improvement(q: QFn, obs_vec: np.ndarray, a: Action, a_bar: Action) -> float:
    """Action-value gain of the executed action over the counterfactual."""
    return q(obs_vec, a) - q(obs_vec, a_bar)


def fairness_efficiency_reward(
    f: int,
    rho_i: float,
    nbr_rho: np.ndarray,
    nbr_xi: np.ndarray,
    constants: FairnessConstants,
) -> float:
    """Sparse reward for stopping: pays for yielding to less patient
    neighbors whose actions improved, taxed by own patience. Zero whenever
    the agent moved or all patience values are zero."""
    if f == 1:
        return 0.0
    denom = rho_i + float(np.sum(nbr_rho))
    if denom == 0.0:
        return 0.0
    gain = constants.alpha * float(np.sum((nbr_rho - rho_i) * nbr_xi))
    return (gain - constants.beta * rho_i) / denom


# ---------------------------------------------------------------------------
# Patience-variance alignment (used by the property suite)


def weighted_variance(rho_bar: np.ndarray, xi: np.ndarray) -> float:
    """Variance of normalized patience weighted by improvements."""
    s = float(np.sum(xi))
    mu = float(np.sum(xi * rho_bar)) / s
    return float(np.sum(xi * (rho_bar - mu) ** 2)) / s


def weighted_variance_grad(rho_bar: np.ndarray, xi: np.ndarray, i: int) -> float:
    """Analytic partial derivative of weighted_variance in rho_bar[i]."""
    s = float(np.sum(xi))
    mu = float(np.sum(xi * rho_bar)) / s
    return 2.0 * float(xi[i]) * (float(rho_bar[i]) - mu) / s


def patience_alignment(rho_bar: np.ndarray, xi: np.ndarray, i: int) -> float:
    """The reward's neighbor sum, here taken over the whole population.

    Equals -K times the variance gradient with K = (sum xi)^2 / (2 xi_i),
    so maximizing it descends the weighted patience variance.
    """
    return float(np.sum((rho_bar - float(rho_bar[i])) * xi))


# ---------------------------------------------------------------------------
# Per-step orchestration


@dataclass
class ProtocolConfig:
    constants: FairnessConstants = field(default_factory=FairnessConstants)
    flags: AblationFlags = field(default_factory=AblationFlags)
    force_all_move: bool = False  # navigation-only baseline
    deterministic: bool = False
    dwa: DwaConfig | None = None


@dataclass
class AgentStep:
    """Everything one agent produced during a protocol step; rewards from
    the subsequent environment transition are filled in afterwards."""

    obs_vec: np.ndarray
    enc_patience: np.ndarray
    enc_state: np.ndarray
    f: int
    action: Action
    nu: Action
    a_hat: Action
    a_bar: Action
    xi: float
    r_tilde: float
    rho: float
    r_hat: float = 0.0
    done: bool = False


@dataclass
class ProtocolStep:
    t: int
    agents: dict[int, AgentStep]
    actions: list[Action]  # joint action, length n_agents


def step_protocol(
    bundle: PolicyBundle,
    world,
    states: Sequence[ec.AgentState],
    goal_centers: np.ndarray,
    ledger: PatienceLedger,
    t: int,
    seed: int,
    episode: int,
    cfg: ProtocolConfig,
) -> ProtocolStep:
    """Run the three protocol stages for every active agent at timestep t.

    Stage 1 exchanges patience messages and samples move decisions.
    Stage 2 exchanges state messages gated by those decisions. Stage 3
    samples filtered velocity commands, plus the paired counterfactual
    command needed for improvements and the stopping reward. Patience is
    updated last so messages at t only reflect history before t.
    """
    n = len(states)
    m = world.map_size
    active = [i for i, s in enumerate(states) if s.status is ec.Status.ACTIVE]

    def q(obs_vec: np.ndarray, a: Action) -> float:
        return bundle.q_solitary_np(obs_vec, action_norm(a, m))

    obs = {i: ec.observe(world, states, i, goal_centers[i], cfg.dwa) for i in active}
    vecs = {i: obs[i].vector(m) for i in active}
    poses = {i: states[i].pose for i in active}
    a_hat = {i: solitary_action(bundle, obs[i], m)[0] for i in active}
    next_poses = {i: step_kinematics(poses[i], a_hat[i]) for i in active}

    if cfg.flags.fixed_priority:
        rho = np.arange(n, dtype=float)
    else:
        rho = ledger.values()

    if cfg.flags.full_comm:
        nbrs = {i: [j for j in active if j != i] for i in active}
    else:
        nbrs = {i: ec.neighbors(states, i, m) for i in active}

    # stage 1: who moves
    f: dict[int, int] = {}
    enc_pat: dict[int, np.ndarray] = {}
    for i in active:
        msgs = build_patience_messages(poses, rho, next_poses, i, nbrs[i])
        enc_pat[i] = encode_patience(bundle, msgs)
        if cfg.force_all_move:
            f[i] = 1
        else:
            rng = rngmod.rng_for(seed, episode, i, t, rngmod.CF2_SAMPLE)
            f[i], _ = cf2_decide(bundle, vecs[i], enc_pat[i], rng, cfg.deterministic)

    # stages 2 and 3: gated messages, filtered commands, counterfactuals
    agents: dict[int, AgentStep] = {}
    xi: dict[int, float] = {}
    for i in active:
        if cfg.deterministic:
            eps = None
        else:
            eps = rngmod.rng_for(seed, episode, i, t, rngmod.NAV_NOISE).standard_normal(2)
        msgs = build_state_messages(poses, next_poses, f, i, nbrs[i])
        enc_st = encode_state(bundle, msgs)
        a, nu, _ = select_action(
            bundle, vecs[i], enc_st, f[i], obs[i].dwa_suggestion, m,
            eps=eps, deterministic=cfg.deterministic,
        )
        a_bar = default_action(
            bundle, vecs[i], poses, next_poses, i, nbrs[i],
            obs[i].dwa_suggestion, m, eps=eps, deterministic=cfg.deterministic,
        )
        xi[i] = 1.0 if cfg.flags.no_improvement else improvement(q, vecs[i], a, a_bar)
        agents[i] = AgentStep(
            obs_vec=vecs[i], enc_patience=enc_pat[i], enc_state=enc_st,
            f=f[i], action=a, nu=nu, a_hat=a_hat[i], a_bar=a_bar,
            xi=xi[i], r_tilde=0.0, rho=float(rho[i]),
        )

    for i in active:
        js = nbrs[i]
        agents[i].r_tilde = fairness_efficiency_reward(
            f[i], float(rho[i]),
            np.array([rho[j] for j in js]),
            np.array([xi[j] for j in js]),
            cfg.constants,
        )

    if not cfg.flags.fixed_priority:
        for i in active:
            update_patience(ledger, i, vecs[i], a_hat[i], agents[i].action, q)

    joint = [
        agents[i].action if i in agents else Action(0.0, 0.0) for i in range(n)
    ]
    return ProtocolStep(t=t, agents=agents, actions=joint)


# ---------------------------------------------------------------------------
# Episode rollout


def rollout_episode(
    bundle: PolicyBundle,
    scenario: ec.Scenario,
    seed: int,
    episode: int = 0,
    cfg: ProtocolConfig | None = None,
    t_max: int = ec.T_MAX,
    record_trace: bool = True,
) -> tuple[ec.EpisodeResult, list[ProtocolStep]]:
    """Run one cooperative episode; returns the result plus per-step
    protocol data for learning or inspection.

    Success means every agent reached its goal within the time limit. Any
    crash marks the episode failed, though remaining agents keep moving
    around the wreck until they finish or time runs out.
    """
    cfg = cfg or ProtocolConfig()
    world = scenario.world
    states = scenario.initial_states()
    ledger = PatienceLedger(scenario.n_agents)
    steps: list[ProtocolStep] = []
    trace: list[ec.StepRecord] = []

    for t in range(1, t_max + 1):
        if all(s.status is not ec.Status.ACTIVE for s in states):
            break
        ps = step_protocol(
            bundle, world, states, scenario.goal_centers, ledger, t, seed, episode, cfg
        )
        states, rewards, done = ec.env_step(
            world, states, scenario.goal_centers, ps.actions, t
        )
        for i, a in ps.agents.items():
            a.r_hat = float(rewards[i])
            a.done = bool(done[i])
            if record_trace:
                s = states[i]
                trace.append(
                    ec.StepRecord(
                        t=t, agent_id=i, x=s.pose.x, y=s.pose.y, theta=s.pose.theta,
                        f=a.f, v=a.action.v, w=a.action.w,
                        r_hat=a.r_hat, r_tilde=a.r_tilde, status=s.status.value,
                    )
                )
        steps.append(ps)

    success = all(s.status is ec.Status.AT_GOAL for s in states)
    if success:
        cause = None
    elif any(s.status is ec.Status.CRASHED for s in states):
        cause = "crash"
    else:
        cause = "timeout"
    result = ec.EpisodeResult(
        success=success,
        goal_times=[s.goal_time for s in states],
        failure_cause=cause,
        trace=trace,
    )
    return result, steps
