import math

import numpy as np
import pytest

from fairnav import envcore as ec
from fairnav import ncf2
from fairnav.geom2d import Action, Pose, W_MAX, v_max


# ---------------------------------------------------------------------------
# patience


def test_patience_starts_at_zero_and_telescopes():
    led = ncf2.PatienceLedger(3)
    assert np.all(led.values() == 0.0)
    q = lambda obs, a: -(a.v - 1.0) ** 2
    obs = np.zeros(72)
    for _ in range(10):
        ncf2.update_patience(led, 0, obs, Action(1.0, 0.0), Action(1.0, 0.0), q)
    assert led.values()[0] == 0.0


def test_patience_stub_critic_fixture():
    # critic penalizes squared deviation from the reference velocity;
    # deviations of 0.5 then 0 accumulate 0.25 by the third step
    led = ncf2.PatienceLedger(1)
    a_hat = Action(1.0, 0.0)
    q = lambda obs, a: -((a.v - a_hat.v) ** 2)
    obs = np.zeros(72)
    ncf2.update_patience(led, 0, obs, a_hat, Action(0.5, 0.0), q)
    ncf2.update_patience(led, 0, obs, a_hat, Action(1.0, 0.0), q)
    assert led.values()[0] == pytest.approx(0.25)


# ---------------------------------------------------------------------------
# messages


def test_rel_patience_examples():
    poses = {0: Pose(0, 0, 0), 1: Pose(1, 1, 0)}
    nxt = dict(poses)
    msgs = ncf2.build_patience_messages(poses, np.array([1.0, 2.0]), nxt, 0, [1])
    assert msgs[0].rel_patience == pytest.approx(1.0 / 3.0)
    assert msgs[0].rel_patience_2 == msgs[0].rel_patience
    # all-zero patience: zero-denominator convention
    msgs = ncf2.build_patience_messages(poses, np.zeros(2), nxt, 0, [1])
    assert msgs[0].rel_patience == 0.0
    # equal positive patience: symmetry
    msgs = ncf2.build_patience_messages(poses, np.array([2.0, 2.0]), nxt, 0, [1])
    assert msgs[0].rel_patience == 0.0


def test_patience_message_rows():
    m = ncf2.PatienceMessage(np.array([1.0, 2.0]), 0.5, np.array([3.0, 4.0]), 0.5)
    r1, r2 = m.rows(dup_patience=True)
    assert np.allclose(r1, [1, 2, 0.5]) and np.allclose(r2, [3, 4, 0.5])
    _, r2b = m.rows(dup_patience=False)
    assert np.allclose(r2b, [3, 4])


def test_state_message_gating():
    poses = {0: Pose(3, 4, 0), 1: Pose(5, 5, 0), 2: Pose(7, 7, 0)}
    nxt = {0: Pose(3, 4, 0), 1: Pose(6, 5, 0), 2: Pose(8, 8, 0)}
    msgs = ncf2.build_state_messages(poses, nxt, {1: 1, 2: 0}, 0, [1, 2])
    assert np.allclose(msgs[0].gated_delta_now, [2, 1])
    assert np.allclose(msgs[0].gated_delta_next, [3, 1])
    assert np.all(msgs[1].gated_delta_now == 0)
    assert np.all(msgs[1].gated_delta_next == 0)


def test_encoders_zero_for_empty_neighborhood(small_bundle):
    assert np.all(ncf2.encode_patience(small_bundle, []) == 0.0)
    assert np.all(ncf2.encode_state(small_bundle, []) == 0.0)


# ---------------------------------------------------------------------------
# decisions and actions


def test_cf2_untrained_tie_moves(small_bundle, rng):
    obs = rng.standard_normal(72).astype(np.float32)
    msg = np.zeros(16, np.float32)
    f, _ = small_bundle, None
    f, _ = ncf2.cf2_decide(small_bundle, obs, msg, None, deterministic=True)
    assert f == 1


def test_cf2_sampled_frequency_matches_softmax(small_bundle, rng):
    # bias the head so the softmax is not uniform
    small_bundle.stores["cf2_actor"].params["net.out.b"].data[:] = [0.7, 0.0]
    obs = rng.standard_normal(72).astype(np.float32)
    msg = rng.standard_normal(16).astype(np.float32)
    logits = small_bundle.actor_forward_np("cf2", [obs, msg])
    p1 = float(np.exp(logits[1]) / np.exp(logits).sum())
    g = np.random.default_rng(0)
    n = 20000
    hits = sum(ncf2.cf2_decide(small_bundle, obs, msg, g)[0] for _ in range(n))
    assert hits / n == pytest.approx(p1, abs=0.01)


def test_select_action_zero_residual_is_dwa(small_bundle, rng):
    obs_vec = rng.standard_normal(72).astype(np.float32)
    base = Action(3.2, 0.1)
    a, nu, _ = ncf2.select_action(
        small_bundle, obs_vec, np.zeros(16, np.float32), 1, base, 128.0,
        deterministic=True,
    )
    assert a == base and nu == base


def test_select_action_filtering(small_bundle, rng):
    obs_vec = rng.standard_normal(72).astype(np.float32)
    base = Action(3.2, 0.1)
    g = np.random.default_rng(4)
    a, nu, _ = ncf2.select_action(
        small_bundle, obs_vec, np.zeros(16, np.float32), 0, base, 128.0, rng=g
    )
    assert a == Action(0.0, 0.0)
    assert 0.0 <= nu.v <= v_max(128.0) and -W_MAX <= nu.w <= W_MAX


def test_default_action_matches_when_all_moved(small_bundle, rng):
    obs_vec = rng.standard_normal(72).astype(np.float32)
    poses = {0: Pose(10, 10, 0), 1: Pose(15, 10, 0)}
    nxt = {0: Pose(11, 10, 0), 1: Pose(16, 10, 0)}
    base = Action(2.0, 0.0)
    eps = np.array([0.3, -0.7])
    msgs = ncf2.build_state_messages(poses, nxt, {1: 1}, 0, [1])
    enc = ncf2.encode_state(small_bundle, msgs)
    a, _, _ = ncf2.select_action(small_bundle, obs_vec, enc, 1, base, 128.0, eps=eps)
    abar = ncf2.default_action(
        small_bundle, obs_vec, poses, nxt, 0, [1], base, 128.0, eps=eps
    )
    assert a == abar


# ---------------------------------------------------------------------------
# improvement and reward


def test_improvement_examples():
    q = lambda obs, a: -((a.v - 1.0) ** 2)
    obs = np.zeros(72)
    assert ncf2.improvement(q, obs, Action(1.0, 0.0), Action(0.5, 0.0)) == pytest.approx(0.25)
    assert ncf2.improvement(q, obs, Action(0.7, 0.0), Action(0.7, 0.0)) == 0.0
    a, b = Action(0.9, 0.0), Action(0.4, 0.0)
    assert ncf2.improvement(q, obs, a, b) == pytest.approx(-ncf2.improvement(q, obs, b, a))


def test_fairness_reward_fixture():
    c = ncf2.FairnessConstants()
    r = ncf2.fairness_efficiency_reward(
        0, 1.0, np.array([2.0, 3.0]), np.array([0.5, 1.0]), c
    )
    assert r == pytest.approx((0.5 * 2.5 - 0.1 * 1.0) / 6.0, abs=1e-12)


def test_fairness_reward_gate_and_conventions():
    c = ncf2.FairnessConstants()
    g = np.random.default_rng(0)
    for _ in range(200):
        n = int(g.integers(0, 5))
        r = ncf2.fairness_efficiency_reward(1, g.random(), g.random(n), g.random(n), c)
        assert r == 0.0
    # no neighbors: pure patience tax
    assert ncf2.fairness_efficiency_reward(0, 2.0, np.zeros(0), np.zeros(0), c) == pytest.approx(-c.beta)
    assert ncf2.fairness_efficiency_reward(0, 0.0, np.zeros(0), np.zeros(0), c) == 0.0


def test_fairness_constants_validation():
    with pytest.raises(ValueError):
        ncf2.FairnessConstants(alpha=-0.1)


# ---------------------------------------------------------------------------
# variance alignment identity


def test_alignment_identity_bulk(rng):
    for _ in range(10_000):
        n = int(rng.integers(2, 17))
        rb = rng.random(n)
        xi = rng.random(n) + 1e-6
        i = int(rng.integers(n))
        k = xi.sum() ** 2 / (2.0 * xi[i])
        lhs = ncf2.patience_alignment(rb, xi, i)
        rhs = -k * ncf2.weighted_variance_grad(rb, xi, i)
        assert abs(lhs - rhs) < 1e-9


def test_weighted_variance_matches_numpy():
    rb = np.array([0.1, 0.5, 0.9])
    xi = np.array([1.0, 2.0, 3.0])
    mu = np.average(rb, weights=xi)
    ref = np.average((rb - mu) ** 2, weights=xi)
    assert ncf2.weighted_variance(rb, xi) == pytest.approx(ref, abs=1e-12)


# ---------------------------------------------------------------------------
# protocol orchestration


def _protocol_rollout(bundle, seed=0, flags=None, n_agents=3, force=False):
    sc = ec.generate_scenario("Uniform", n_agents, 0, seed=2)
    cfg = ncf2.ProtocolConfig(flags=flags or ncf2.AblationFlags(), force_all_move=force)
    return ncf2.rollout_episode(bundle, sc, seed, 0, cfg), sc


def test_stopped_agents_never_move(small_bundle):
    # randomize the filter so both decisions occur
    small_bundle.stores["cf2_actor"].params["net.out.b"].data[:] = [0.0, 0.0]
    (result, steps), sc = _protocol_rollout(small_bundle, seed=5)
    checked = 0
    world = sc.world
    states = sc.initial_states()
    for ps in steps:
        nxt, _, _ = ec.env_step(world, states, sc.goal_centers, ps.actions, ps.t)
        for i, a in ps.agents.items():
            if a.f == 0 and nxt[i].status is not ec.Status.CRASHED:
                assert nxt[i].pose == states[i].pose  # bitwise
                checked += 1
        states = nxt
    assert checked > 0


def test_patience_zero_when_acting_as_solitary(small_bundle):
    # deterministic zero-residual rollout: every action equals the solitary
    # action, so patience telescopes to exactly zero at every step
    sc = ec.generate_scenario("Uniform", 2, 0, seed=3)
    cfg = ncf2.ProtocolConfig(deterministic=True, force_all_move=True)
    states = sc.initial_states()
    ledger = ncf2.PatienceLedger(2)
    for t in range(1, 30):
        ps = ncf2.step_protocol(
            small_bundle, sc.world, states, sc.goal_centers, ledger, t, 0, 0, cfg
        )
        assert np.all(ledger.values() == 0.0)
        states, _, _ = ec.env_step(sc.world, states, sc.goal_centers, ps.actions, t)


def test_forced_move_matches_nav_only_trace(small_bundle):
    (r1, _), _ = _protocol_rollout(small_bundle, seed=9, force=True)
    (r2, _), _ = _protocol_rollout(small_bundle, seed=9, force=True)
    assert ec.trace_to_text(r1.trace) == ec.trace_to_text(r2.trace)


def test_fixed_priority_ablation(small_bundle):
    flags = ncf2.AblationFlags(fixed_priority=True)
    sc = ec.generate_scenario("Uniform", 3, 0, seed=2)
    cfg = ncf2.ProtocolConfig(flags=flags)
    states = sc.initial_states()
    ledger = ncf2.PatienceLedger(3)
    for t in range(1, 5):
        ps = ncf2.step_protocol(
            small_bundle, sc.world, states, sc.goal_centers, ledger, t, 0, 0, cfg
        )
        for i, a in ps.agents.items():
            assert a.rho == float(i)
        states, _, _ = ec.env_step(sc.world, states, sc.goal_centers, ps.actions, t)
        assert np.all(ledger.values() == 0.0)  # ledger untouched under the flag


def test_no_improvement_ablation(small_bundle):
    flags = ncf2.AblationFlags(no_improvement=True)
    (result, steps), _ = _protocol_rollout(small_bundle, seed=4, flags=flags)
    for ps in steps:
        for a in ps.agents.values():
            assert a.xi == 1.0


def test_full_comm_ablation(small_bundle):
    flags = ncf2.AblationFlags(full_comm=True)
    sc = ec.generate_scenario("Uniform", 4, 0, seed=6)
    cfg = ncf2.ProtocolConfig(flags=flags)
    ledger = ncf2.PatienceLedger(4)
    states = sc.initial_states()
    rho_before = ledger.values().copy()
    ps = ncf2.step_protocol(
        small_bundle, sc.world, states, sc.goal_centers, ledger, 1, 0, 0, cfg
    )
    # every active agent hears every other, regardless of distance
    for i, a in ps.agents.items():
        # patience messages were built over all 3 others; spot-check via the
        # encoded vector being identical to an explicit all-pairs encoding
        nbrs = [j for j in range(4) if j != i]
        poses = {j: states[j].pose for j in range(4)}
        sol = {
            j: ncf2.solitary_action(
                small_bundle,
                ec.observe(sc.world, states, j, sc.goal_centers[j]),
                sc.world.map_size,
            )[0]
            for j in range(4)
        }
        from fairnav.geom2d import step_kinematics

        nxt = {j: step_kinematics(poses[j], sol[j]) for j in range(4)}
        msgs = ncf2.build_patience_messages(poses, rho_before, nxt, i, nbrs)
        assert np.allclose(a.enc_patience, ncf2.encode_patience(small_bundle, msgs))


def test_rollout_episode_success_bookkeeping(small_bundle):
    sc = ec.generate_scenario("Uniform", 1, 0, seed=1)
    cfg = ncf2.ProtocolConfig(deterministic=True)
    result, steps = ncf2.rollout_episode(small_bundle, sc, 0, 0, cfg)
    assert result.success
    assert result.failure_cause is None
    assert result.makespan == result.goal_times[0]
    assert result.trace[-1].status == "at_goal"
