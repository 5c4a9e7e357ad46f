"""Hybrid-reward soft actor-critic training.

Three phases: the solitary policy and its critic are trained alone first,
then the navigation module warms up with every agent cleared to move, and
finally navigation and the move filter train jointly on their separate
reward streams. Rollout workers feed a partitioned replay buffer through
an atomically published parameter snapshot; the learner consumes batches.
Determinism is guaranteed with a single worker.
"""

from __future__ import annotations

import json
import math
import os
import threading
import traceback
from dataclasses import dataclass, field, replace
from typing import Callable, Sequence

import numpy as np

from . import envcore as ec
from . import ncf2
from .dwa import DwaConfig
from .geom2d import Action
from .nets import autodiff as ad
from .nets import rng as rngmod
from .nets.autodiff import Tensor
from .nets.bundle import MlpSpec, PolicyBundle
from .nets.distributions import (
    LOG_STD_MAX,
    LOG_STD_MIN,
    _HALF_LOG_2PI,
    _SQUASH_EPS,
    squash_sample_t,
)
from .nets.layers import Adam

STREAMS = ("solitary", "nav", "cf2")

LOG_HEADER = (
    "# fairnav training log v1; iterations count gradient steps\n"
    "# iteration, stream, critic_loss, actor_loss, temperature, episodes_done, sr_window\n"
)


class TrainingDiverged(RuntimeError):
    """A loss went non-finite; carries the diagnostic record."""

    def __init__(self, message: str, record: dict):
        super().__init__(message)
        self.record = record


@dataclass
class Transition:
    stream: str
    obs: np.ndarray
    msg: np.ndarray | None
    action: np.ndarray | int
    reward: float
    next_obs: np.ndarray
    next_msg: np.ndarray | None
    done: bool

    def __post_init__(self):
        if self.stream not in STREAMS:
            raise ValueError(f"unknown stream {self.stream!r}")
        if (self.msg is None) != (self.stream == "solitary"):
            raise ValueError("messages required exactly for nav/cf2 streams")


class ReplayBuffer:
    """FIFO ring per stream; uniform sampling within a stream."""

    def __init__(self, capacity: int):
        if capacity < 1:
            raise ValueError("capacity must be positive")
        self.capacity = capacity
        self._data: dict[str, list[Transition]] = {s: [] for s in STREAMS}
        self._head: dict[str, int] = {s: 0 for s in STREAMS}
        self._lock = threading.Lock()

    def push(self, tr: Transition):
        with self._lock:
            d = self._data[tr.stream]
            if len(d) < self.capacity:
                d.append(tr)
            else:
                d[self._head[tr.stream]] = tr
                self._head[tr.stream] = (self._head[tr.stream] + 1) % self.capacity

    def size(self, stream: str) -> int:
        return len(self._data[stream])

    def sample(self, stream: str, batch: int, rng: np.random.Generator) -> list[Transition]:
        with self._lock:
            d = self._data[stream]
            if len(d) < batch:
                raise ValueError(f"stream {stream} has {len(d)} < {batch} transitions")
            idx = rng.integers(0, len(d), size=batch)
            return [d[i] for i in idx]


@dataclass
class SacConfig:
    discount: float = 0.95
    init_temperature: float = 0.01
    tau: float = 0.005
    target_interval: int = 1
    lr: float = 0.001
    batch_size: int = 256
    buffer_capacity: int = 1_500_000
    warmup_iterations: int = 10_000

    def __post_init__(self):
        for name in ("discount", "init_temperature", "tau", "lr"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")
        for name in ("target_interval", "batch_size", "buffer_capacity"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1")
        if self.warmup_iterations < 0:
            raise ValueError("warmup_iterations must be non-negative")


@dataclass
class TrainConfig:
    seed: int = 0
    family: str = "Uniform"
    n_agents: int = 2
    n_obstacles: int = 5
    map_size: float = 128.0
    out_dir: str = "runs/default"
    spec: MlpSpec = field(default_factory=MlpSpec)
    sac: SacConfig = field(default_factory=SacConfig)
    constants: ncf2.FairnessConstants = field(default_factory=ncf2.FairnessConstants)
    flags: ncf2.AblationFlags = field(default_factory=ncf2.AblationFlags)
    dup_patience: bool = True
    dwa: DwaConfig = field(default_factory=DwaConfig)
    phase_iterations: tuple[int, int, int] = (1_000_000, 1_000_000, 1_000_000)
    updates_per_episode: int = 64
    workers: int = 1
    checkpoint_interval: int = 5000
    sr_window: int = 20


# ---------------------------------------------------------------------------
# Batched sampling helpers (forward only, numpy)

# constant selection matrices: split a (B, 4) head output into mean/log_std
_SEL_MEAN = np.array([[1, 0], [0, 1], [0, 0], [0, 0]], dtype=np.float32)
_SEL_STD = np.array([[0, 0], [0, 0], [1, 0], [0, 1]], dtype=np.float32)


def _sample_batch_np(
    out: np.ndarray, rng: np.random.Generator
) -> tuple[np.ndarray, np.ndarray]:
    """Squashed-Gaussian batch sample; returns z in (-1, 1) and per-row logp."""
    mean, log_std = out[:, :2], np.clip(out[:, 2:], LOG_STD_MIN, LOG_STD_MAX)
    eps = rng.standard_normal(mean.shape)
    z = np.tanh(mean + np.exp(log_std) * eps)
    logp = np.sum(
        -0.5 * eps * eps - log_std - _HALF_LOG_2PI - np.log(1.0 - z * z + _SQUASH_EPS),
        axis=1,
    )
    return z, logp


def _compose_norm_np(obs: np.ndarray, z: np.ndarray) -> np.ndarray:
    """Final normalized action: base suggestion (last two obs features) plus
    the residual, clipped to the normalized action box."""
    a = obs[:, -2:] + z
    return np.stack([np.clip(a[:, 0], 0.0, 1.0), np.clip(a[:, 1], -1.0, 1.0)], axis=1)


def _compose_norm_t(obs: np.ndarray, z: Tensor) -> Tensor:
    base = Tensor(obs[:, -2:].astype(np.float32))
    a = base + z
    e0 = Tensor(np.array([[1.0], [0.0]], dtype=np.float32))
    e1 = Tensor(np.array([[0.0], [1.0]], dtype=np.float32))
    av = ad.clip(a @ e0, 0.0, 1.0)
    aw = ad.clip(a @ e1, -1.0, 1.0)
    return ad.concat([av, aw], axis=1)


def _stack(batch: Sequence[Transition], with_msg: bool):
    obs = np.stack([t.obs for t in batch]).astype(np.float32)
    nobs = np.stack([t.next_obs for t in batch]).astype(np.float32)
    rew = np.array([t.reward for t in batch], dtype=np.float32)
    done = np.array([t.done for t in batch], dtype=np.float32)
    msg = nmsg = None
    if with_msg:
        msg = np.stack([t.msg for t in batch]).astype(np.float32)
        nmsg = np.stack([t.next_msg for t in batch]).astype(np.float32)
    return obs, msg, rew, nobs, nmsg, done


def _check_finite(stream: str, iteration: int, **losses: float):
    bad = {k: v for k, v in losses.items() if not math.isfinite(v)}
    if bad:
        raise TrainingDiverged(
            f"non-finite loss in stream {stream} at iteration {iteration}",
            {"stream": stream, "iteration": iteration, "losses": losses},
        )


# ---------------------------------------------------------------------------
# SAC updaters


class ContinuousSac:
    """Twin-critic SAC for a tanh-squashed residual actor (solitary or nav)."""

    def __init__(self, bundle: PolicyBundle, which: str, cfg: SacConfig, seed: int):
        self.cfg = cfg
        self.which = which
        if which == "solitary":
            self.actor = bundle.solitary_actor
            self.critics = [bundle.solitary_critic, None]
            self.critic_names = ["solitary_critic"]
        elif which == "nav":
            self.actor = bundle.nav_actor
            self.critics = bundle.nav_critics
            self.critic_names = ["nav_critic1", "nav_critic2"]
        else:
            raise ValueError(which)
        self.bundle = bundle
        actor_store = bundle.stores[f"{which}_actor"]
        self.actor_opt = Adam([actor_store], lr=cfg.lr)
        self.critic_opt = Adam([bundle.stores[n] for n in self.critic_names], lr=cfg.lr)
        self.log_alpha = math.log(cfg.init_temperature)
        self.target_entropy = -2.0
        self.rng = np.random.Generator(
            np.random.Philox(key=np.uint64((seed << 8) ^ (0x51 if which == "solitary" else 0x52)))
        )
        self.updates = 0

    def _critic_list(self):
        return [c for c in self.critics if c is not None]

    def _groups(self, obs, msg):
        gs = [Tensor(obs)]
        if self.which == "nav":
            gs.append(Tensor(msg))
        return gs

    def update(self, batch: Sequence[Transition], iteration: int, warmup: bool) -> dict:
        cfg = self.cfg
        obs, msg, rew, nobs, nmsg, done = _stack(batch, self.which == "nav")
        act = np.stack([t.action for t in batch]).astype(np.float32)
        alpha = math.exp(self.log_alpha)

        # Bellman target from the target critics, no gradients
        next_groups_np = [nobs] + ([nmsg] if self.which == "nav" else [])
        aout = self.actor([np.asarray(g) for g in next_groups_np]).data
        z2, logp2 = _sample_batch_np(aout, self.rng)
        a2 = _compose_norm_np(nobs, z2)
        qt = np.stack(
            [
                self.bundle.target_net(n)(next_groups_np + [a2]).data[:, 0]
                for n in self.critic_names
            ]
        ).min(axis=0)
        y = rew + cfg.discount * (1.0 - done) * (qt - alpha * logp2)
        y = y.astype(np.float32)[:, None]

        groups = self._groups(obs, msg)
        closs = 0.0
        loss_t = None
        for name, net in zip(self.critic_names, self._critic_list()):
            q = net(groups + [Tensor(act)])
            diff = q - Tensor(y)
            term = (diff * diff).mean()
            loss_t = term if loss_t is None else loss_t + term
        loss_t.backward()
        closs = float(loss_t.data)
        _check_finite(self.which, iteration, critic_loss=closs)
        self.critic_opt.step()

        aloss = 0.0
        if not warmup:
            out = self.actor(self._groups(obs, msg))
            mean = out @ Tensor(_SEL_MEAN)
            log_std = out @ Tensor(_SEL_STD)
            noise = self.rng.standard_normal(mean.shape).astype(np.float32)
            z, logp = squash_sample_t(mean, log_std, noise)
            a = _compose_norm_t(obs, z)
            qs = [net(self._groups(obs, msg) + [a]) for net in self._critic_list()]
            qmin = qs[0] if len(qs) == 1 else ad.minimum(qs[0], qs[1])
            actor_loss = (alpha * logp - qmin).mean()
            actor_loss.backward()
            aloss = float(actor_loss.data)
            _check_finite(self.which, iteration, actor_loss=aloss)
            self.actor_opt.step()
            # temperature: push entropy toward the target
            lp = float(logp.data.mean())
            self.log_alpha += cfg.lr * (lp + self.target_entropy)

        self.updates += 1
        if self.updates % cfg.target_interval == 0:
            for name in self.critic_names:
                self.bundle.stores[name].copy_into(self.bundle.targets[name], cfg.tau)
        return {
            "critic_loss": closs,
            "actor_loss": aloss,
            "temperature": math.exp(self.log_alpha),
        }


class DiscreteSac:
    """Expectation-form SAC over the two-way move/stay filter."""

    def __init__(self, bundle: PolicyBundle, cfg: SacConfig, seed: int):
        self.cfg = cfg
        self.bundle = bundle
        self.actor = bundle.cf2_actor
        self.critics = bundle.cf2_critics
        self.critic_names = ["cf2_critic1", "cf2_critic2"]
        self.actor_opt = Adam([bundle.stores["cf2_actor"]], lr=cfg.lr)
        self.critic_opt = Adam([bundle.stores[n] for n in self.critic_names], lr=cfg.lr)
        self.log_alpha = math.log(cfg.init_temperature)
        self.target_entropy = 0.5 * math.log(2.0)
        self.updates = 0

    def update(self, batch: Sequence[Transition], iteration: int, warmup: bool) -> dict:
        cfg = self.cfg
        obs, msg, rew, nobs, nmsg, done = _stack(batch, True)
        act = np.array([t.action for t in batch], dtype=np.int64)
        onehot = np.zeros((len(batch), 2), dtype=np.float32)
        onehot[np.arange(len(batch)), act] = 1.0
        alpha = math.exp(self.log_alpha)

        # target: soft state value of the next state under the current policy
        logits2 = self.actor([nobs, nmsg]).data
        shifted = logits2 - logits2.max(axis=1, keepdims=True)
        p2 = np.exp(shifted) / np.exp(shifted).sum(axis=1, keepdims=True)
        logp2 = np.log(p2 + 1e-12)
        qt = np.minimum(
            self.bundle.target_net("cf2_critic1")([nobs, nmsg]).data,
            self.bundle.target_net("cf2_critic2")([nobs, nmsg]).data,
        )
        v2 = (p2 * (qt - alpha * logp2)).sum(axis=1)
        y = (rew + cfg.discount * (1.0 - done) * v2).astype(np.float32)[:, None]

        loss_t = None
        for net in self.critics:
            q = net([Tensor(obs), Tensor(msg)])
            q_taken = (q * Tensor(onehot)).sum(axis=1, keepdims=True)
            diff = q_taken - Tensor(y)
            term = (diff * diff).mean()
            loss_t = term if loss_t is None else loss_t + term
        loss_t.backward()
        closs = float(loss_t.data)
        _check_finite("cf2", iteration, critic_loss=closs)
        self.critic_opt.step()

        aloss = 0.0
        if not warmup:
            logits = self.actor([Tensor(obs), Tensor(msg)])
            logp = ad.log_softmax(logits, axis=1)
            probs = ad.softmax(logits, axis=1)
            q1 = self.critics[0]([Tensor(obs), Tensor(msg)])
            q2 = self.critics[1]([Tensor(obs), Tensor(msg)])
            qmin = Tensor(np.minimum(q1.data, q2.data))  # no grad into critics
            actor_loss = (probs * (alpha * logp - qmin)).sum(axis=1, keepdims=True).mean()
            actor_loss.backward()
            aloss = float(actor_loss.data)
            _check_finite("cf2", iteration, actor_loss=aloss)
            self.actor_opt.step()
            entropy = float(-(probs.data * logp.data).sum(axis=1).mean())
            self.log_alpha += cfg.lr * (self.target_entropy - entropy)

        self.updates += 1
        if self.updates % cfg.target_interval == 0:
            for name in self.critic_names:
                self.bundle.stores[name].copy_into(self.bundle.targets[name], cfg.tau)
        return {
            "critic_loss": closs,
            "actor_loss": aloss,
            "temperature": math.exp(self.log_alpha),
        }


# ---------------------------------------------------------------------------
# Episode generation


def solitary_episode(
    bundle: PolicyBundle,
    scenario: ec.Scenario,
    seed: int,
    episode: int,
    dwa_cfg: DwaConfig | None,
) -> tuple[list[Transition], bool]:
    """One stochastic single-agent episode; returns transitions and success."""
    world = scenario.world
    m = world.map_size
    states = scenario.initial_states()
    out: list[Transition] = []
    prev: tuple[np.ndarray, np.ndarray, float] | None = None
    for t in range(1, ec.T_MAX + 1):
        if states[0].status is not ec.Status.ACTIVE:
            break
        obs = ec.observe(world, states, 0, scenario.goal_centers[0], dwa_cfg)
        vec = obs.vector(m)
        if prev is not None:
            pobs, pact, prew = prev
            out.append(
                Transition("solitary", pobs, None, pact, prew, vec, None, False)
            )
        rng = rngmod.rng_for(seed, episode, 0, t, rngmod.SOLITARY_NOISE)
        a, _ = ncf2.solitary_action(bundle, obs, m, rng, deterministic=False)
        states, rewards, done = ec.env_step(
            world, states, scenario.goal_centers, [a], t
        )
        act = ncf2.action_norm(a, m).astype(np.float32)
        if done[0]:
            out.append(
                Transition("solitary", vec, None, act, float(rewards[0]),
                           np.zeros_like(vec), None, True)
            )
            prev = None
        else:
            prev = (vec, act, float(rewards[0]))
    return out, states[0].status is ec.Status.AT_GOAL


def episode_transitions(
    steps: Sequence[ncf2.ProtocolStep], map_size: float, include_cf2: bool
) -> list[Transition]:
    """Stitch protocol steps into per-stream transitions.

    Navigation transitions exist only for steps where the agent actually
    moved (its executed action came from the navigation head). The final
    step of a truncated episode has no successor and is dropped.
    """
    out: list[Transition] = []
    for k, ps in enumerate(steps):
        nxt = steps[k + 1] if k + 1 < len(steps) else None
        for i, a in ps.agents.items():
            if a.done:
                nobs = np.zeros_like(a.obs_vec)
                nav_nmsg = np.zeros_like(a.enc_state)
                cf2_nmsg = np.zeros_like(a.enc_patience)
            elif nxt is not None and i in nxt.agents:
                nobs = nxt.agents[i].obs_vec
                nav_nmsg = nxt.agents[i].enc_state
                cf2_nmsg = nxt.agents[i].enc_patience
            else:
                continue
            if a.f == 1:
                act = ncf2.action_norm(a.action, map_size).astype(np.float32)
                out.append(
                    Transition("nav", a.obs_vec, a.enc_state, act,
                               a.r_hat, nobs, nav_nmsg, a.done)
                )
            if include_cf2:
                out.append(
                    Transition("cf2", a.obs_vec, a.enc_patience, int(a.f),
                               a.r_tilde, nobs, cf2_nmsg, a.done)
                )
    return out


# ---------------------------------------------------------------------------
# Snapshot slot


class SnapshotSlot:
    """Atomic publication of serialized parameters: readers always see a
    complete byte string."""

    def __init__(self):
        self._blob: bytes | None = None

    def publish(self, blob: bytes):
        self._blob = blob  # single reference assignment, atomic in CPython

    def latest(self) -> bytes | None:
        return self._blob


# ---------------------------------------------------------------------------
# Pipeline


def _phase_streams(phase: int) -> tuple[str, ...]:
    return {0: ("solitary",), 1: ("nav",), 2: ("nav", "cf2")}[phase]


class Pipeline:
    """Actor/learner training loop over the three phases.

    With workers=1 everything runs synchronously on one thread and the
    training log is bit-reproducible. With more workers, episode
    generation happens on producer threads against the latest published
    snapshot while the learner consumes batches; scheduling is then
    nondeterministic by nature.

    Resuming restores parameters, temperatures, and phase/iteration
    counters from the checkpoint; the replay buffer restarts empty and is
    refilled before updates continue.
    """

    def __init__(self, cfg: TrainConfig):
        self.cfg = cfg
        os.makedirs(cfg.out_dir, exist_ok=True)
        self.bundle = PolicyBundle(cfg.spec, seed=cfg.seed, dup_patience=cfg.dup_patience)
        self.buffer = ReplayBuffer(cfg.sac.buffer_capacity)
        self.slot = SnapshotSlot()
        self.sample_rng = np.random.Generator(
            np.random.Philox(key=np.uint64((cfg.seed << 8) ^ 0xBA))
        )
        self.updaters: dict[str, object] = {}
        self.phase = 0
        self.phase_iteration = 0
        self.iteration = 0  # global gradient-step counter
        self.episodes_done = 0
        self._recent: list[bool] = []
        self.log_path = os.path.join(cfg.out_dir, "train.log")
        self._log_fh = None
        self._episode_lock = threading.Lock()
        self._stop = threading.Event()

    # -- bookkeeping --------------------------------------------------------

    def _log(self, line: str):
        self._log_fh.write(line + "\n")
        self._log_fh.flush()

    def _sr_window(self) -> float:
        if not self._recent:
            return 0.0
        return sum(self._recent) / len(self._recent)

    def _record_episode(self, success: bool | None):
        with self._episode_lock:
            self.episodes_done += 1
            if success is not None:
                self._recent.append(success)
                if len(self._recent) > self.cfg.sr_window:
                    self._recent.pop(0)

    def _next_episode_index(self) -> int:
        with self._episode_lock:
            idx = getattr(self, "_episode_counter", 0)
            self._episode_counter = idx + 1
            return idx

    def _scenario_seed(self, episode: int) -> int:
        return (self.cfg.seed << 20) + episode

    # -- checkpointing ------------------------------------------------------

    def _meta(self) -> dict:
        temps = {
            name: upd.log_alpha for name, upd in self.updaters.items()
        }
        return {
            "phase": self.phase,
            "phase_iteration": self.phase_iteration,
            "iteration": self.iteration,
            "episodes_done": self.episodes_done,
            "log_alpha": temps,
        }

    def save_checkpoint(self, tag: str = "latest"):
        path = os.path.join(self.cfg.out_dir, f"ckpt_{tag}.bin")
        tmp = path + ".tmp"
        self.bundle.save(tmp)
        os.replace(tmp, path)
        with open(os.path.join(self.cfg.out_dir, f"ckpt_{tag}.json"), "w") as fh:
            json.dump(self._meta(), fh, indent=1)
        return path

    def load_checkpoint(self, path: str):
        self.bundle.load(path)
        meta_path = path.rsplit(".", 1)[0] + ".json"
        with open(meta_path) as fh:
            meta = json.load(fh)
        self.phase = meta["phase"]
        self.phase_iteration = meta["phase_iteration"]
        self.iteration = meta["iteration"]
        self.episodes_done = meta["episodes_done"]
        self._resume_alpha = meta.get("log_alpha", {})

    # -- episode generation -------------------------------------------------

    def _make_worker_bundle(self) -> PolicyBundle:
        return PolicyBundle(self.cfg.spec, seed=self.cfg.seed,
                            dup_patience=self.cfg.dup_patience)

    def _generate_episode(self, wb: PolicyBundle, phase: int) -> int:
        """Roll one episode with the worker bundle, push its transitions.
        Returns the number of transitions pushed."""
        cfg = self.cfg
        episode = self._next_episode_index()
        n_agents = 1 if phase == 0 else cfg.n_agents
        try:
            sc = ec.generate_scenario(
                cfg.family, n_agents, cfg.n_obstacles,
                seed=self._scenario_seed(episode), map_size=cfg.map_size,
            )
        except ec.GenerationFailed:
            self._record_episode(None)
            return 0
        if phase == 0:
            trs, success = solitary_episode(wb, sc, cfg.seed, episode, cfg.dwa)
        else:
            pc = ncf2.ProtocolConfig(
                constants=cfg.constants, flags=cfg.flags,
                force_all_move=(phase == 1), deterministic=False, dwa=cfg.dwa,
            )
            res, steps = ncf2.rollout_episode(
                wb, sc, cfg.seed, episode, pc, record_trace=False
            )
            trs = episode_transitions(steps, cfg.map_size, include_cf2=(phase == 2))
            success = res.success
        for tr in trs:
            self.buffer.push(tr)
        self._record_episode(success)
        return len(trs)

    def _worker_loop(self, phase: int):
        """Producer thread: pull the latest snapshot, roll episodes. Any
        exception restarts the loop with a fresh bundle."""
        wb = self._make_worker_bundle()
        while not self._stop.is_set():
            try:
                blob = self.slot.latest()
                if blob is not None:
                    wb.load_bytes(blob)
                self._generate_episode(wb, phase)
            except Exception:
                traceback.print_exc()
                wb = self._make_worker_bundle()

    # -- updates ------------------------------------------------------------

    def _make_updaters(self, phase: int):
        cfg = self.cfg
        self.updaters = {}
        for stream in _phase_streams(phase):
            if stream == "cf2":
                upd = DiscreteSac(self.bundle, cfg.sac, cfg.seed)
            else:
                upd = ContinuousSac(self.bundle, stream, cfg.sac, cfg.seed)
            resumed = getattr(self, "_resume_alpha", {}).get(stream)
            if resumed is not None:
                upd.log_alpha = resumed
            self.updaters[stream] = upd

    def _ready(self, phase: int) -> bool:
        return all(
            self.buffer.size(s) >= self.cfg.sac.batch_size
            for s in _phase_streams(phase)
        )

    def _do_iteration(self, phase: int):
        warmup = self.phase_iteration < self.cfg.sac.warmup_iterations
        self.iteration += 1
        self.phase_iteration += 1
        for stream in _phase_streams(phase):
            batch = self.buffer.sample(stream, self.cfg.sac.batch_size, self.sample_rng)
            stats = self.updaters[stream].update(batch, self.iteration, warmup)
            self._log(
                f"{self.iteration}, {stream}, {stats['critic_loss']:.6e}, "
                f"{stats['actor_loss']:.6e}, {stats['temperature']:.6e}, "
                f"{self.episodes_done}, {self._sr_window():.3f}"
            )
        if self.iteration % self.cfg.checkpoint_interval == 0:
            self.save_checkpoint()

    # -- phase drivers ------------------------------------------------------

    def _run_phase_sync(self, phase: int, iters: int):
        wb = self._make_worker_bundle()
        while self.phase_iteration < iters:
            self.slot.publish(self.bundle.save_bytes())
            try:
                blob = self.slot.latest()
                if blob is not None:
                    wb.load_bytes(blob)
                self._generate_episode(wb, phase)
            except Exception:
                traceback.print_exc()
                wb = self._make_worker_bundle()
            if not self._ready(phase):
                continue
            for _ in range(self.cfg.updates_per_episode):
                if self.phase_iteration >= iters:
                    break
                self._do_iteration(phase)

    def _run_phase_threaded(self, phase: int, iters: int):
        self._stop.clear()
        self.slot.publish(self.bundle.save_bytes())
        threads = [
            threading.Thread(target=self._worker_loop, args=(phase,), daemon=True)
            for _ in range(self.cfg.workers)
        ]
        for th in threads:
            th.start()
        try:
            while self.phase_iteration < iters:
                if not self._ready(phase):
                    continue
                self._do_iteration(phase)
                if self.iteration % 50 == 0:
                    self.slot.publish(self.bundle.save_bytes())
        finally:
            self._stop.set()
            for th in threads:
                th.join(timeout=5.0)

    def run(self, resume: str | None = None) -> PolicyBundle:
        cfg = self.cfg
        if resume:
            self.load_checkpoint(resume)
        mode = "a" if resume else "w"
        self._log_fh = open(self.log_path, mode)
        if not resume:
            self._log_fh.write(LOG_HEADER)
            self._log_fh.flush()
        try:
            for phase in range(self.phase, 3):
                self.phase = phase
                if phase != getattr(self, "_resumed_phase", None):
                    self.phase_iteration = (
                        self.phase_iteration if resume and phase == self.phase else 0
                    )
                iters = cfg.phase_iterations[phase]
                if self.phase_iteration >= iters:
                    self.phase_iteration = 0
                    continue
                self._make_updaters(phase)
                self._log(f"# phase {phase} begin")
                if cfg.workers <= 1:
                    self._run_phase_sync(phase, iters)
                else:
                    self._run_phase_threaded(phase, iters)
                self._log(f"# phase {phase} end")
                self.save_checkpoint(f"phase{phase}")
                self.phase_iteration = 0
                resume = None
            self.save_checkpoint("final")
        except TrainingDiverged as err:
            record = dict(err.record)
            record["param_norms"] = {
                name: float(np.sqrt(sum(float((p.data ** 2).sum())
                                        for p in st.params.values())))
                for name, st in self.bundle.stores.items()
            }
            with open(os.path.join(cfg.out_dir, "diverged.json"), "w") as fh:
                json.dump(record, fh, indent=1)
            raise
        finally:
            self._log_fh.close()
        return self.bundle


def run_pipeline(cfg: TrainConfig, resume: str | None = None) -> tuple[PolicyBundle, str]:
    """Train all three phases; returns the bundle and the log path."""
    pipe = Pipeline(cfg)
    bundle = pipe.run(resume=resume)
    return bundle, pipe.log_path
