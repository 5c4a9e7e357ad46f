"""Command-line entry point: train, eval, rollout, plot, selftest."""

from __future__ import annotations

import argparse
import math
import os
import sys

import numpy as np

from .. import config as cfgmod
from .. import envcore as ec
from .. import ncf2
from ..geom2d import Pose, WorldMap, Circle, Action, lidar_scan, step_kinematics
from ..nets.bundle import MlpSpec, PolicyBundle, bundle_from_file
from . import metrics as metricsmod
from . import plotting


def _default_seed() -> int:
    env = os.environ.get("FAIRNAV_SEED")
    if env is not None:
        try:
            return int(env)
        except ValueError:
            raise SystemExit(f"FAIRNAV_SEED must be an integer, got {env!r}")
    return 0


def _fail(msg: str) -> int:
    print(f"error: {msg}", file=sys.stderr)
    return 1


def _build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(
        prog="fairnav",
        description="Fair-delay multi-robot navigation: training and evaluation.",
    )
    sub = p.add_subparsers(dest="command", required=True)

    t = sub.add_parser("train", help="run the three-phase training pipeline")
    t.add_argument("--config", help="flat key=value config file")
    t.add_argument("--resume", help="checkpoint to resume from")
    t.add_argument("--dump-config", action="store_true",
                   help="print the default config and exit")

    e = sub.add_parser("eval", help="evaluate a checkpoint")
    e.add_argument("--ckpt", required=True)
    e.add_argument("--family", choices=ec.FAMILIES, default="Uniform")
    e.add_argument("--agents", type=int, default=2)
    e.add_argument("--obstacles", type=int, default=25)
    e.add_argument("--episodes", type=int, default=100)
    e.add_argument("--seed", type=int, default=None)
    e.add_argument("--out", required=True, help="report path (JSON)")
    e.add_argument("--delay-mode", choices=("removed", "frozen"), default="removed")
    e.add_argument("--workers", type=int, default=1)
    e.add_argument("--config", help="config file for dwa/ncf2 overrides")

    r = sub.add_parser("rollout", help="run one episode and write its trace")
    r.add_argument("--ckpt", required=True)
    r.add_argument("--scenario", help="scenario file; omit to generate one")
    r.add_argument("--family", choices=ec.FAMILIES, default="Uniform")
    r.add_argument("--agents", type=int, default=2)
    r.add_argument("--obstacles", type=int, default=5)
    r.add_argument("--seed", type=int, default=None)
    r.add_argument("--trace", required=True, help="output trace path")
    r.add_argument("--save-scenario", help="also write the scenario file")
    r.add_argument("--stochastic", action="store_true",
                   help="sample actions instead of taking the deterministic mode")
    r.add_argument("--config", help="config file for dwa/ncf2 overrides")

    pl = sub.add_parser("plot", help="render a trace to SVG")
    pl.add_argument("--trace", required=True)
    pl.add_argument("--scenario", help="scenario file for obstacles and goals")
    pl.add_argument("--out", required=True)

    sub.add_parser("selftest", help="run the built-in oracle and property checks")
    return p


def _load_values(path: str | None) -> dict:
    if path is None:
        return dict(cfgmod.DEFAULTS)
    return cfgmod.load_config(path)


def _protocol_config(values: dict, deterministic: bool) -> ncf2.ProtocolConfig:
    return ncf2.ProtocolConfig(
        constants=ncf2.FairnessConstants(values["ncf2.alpha"], values["ncf2.beta"]),
        flags=ncf2.AblationFlags(
            no_improvement=values["ncf2.no_improvement"],
            full_comm=values["ncf2.full_comm"],
            fixed_priority=values["ncf2.fixed_priority"],
        ),
        deterministic=deterministic,
        dwa=cfgmod.dwa_config(values),
    )


def _cmd_train(args) -> int:
    if args.dump_config:
        sys.stdout.write(cfgmod.dump_config())
        return 0
    try:
        values = _load_values(args.config)
    except (OSError, ValueError) as err:
        return _fail(str(err))
    from ..learn import run_pipeline

    tc = cfgmod.train_config(values)
    if os.environ.get("FAIRNAV_SEED") is not None and args.config is None:
        tc.seed = _default_seed()
    try:
        bundle, log_path = run_pipeline(tc, resume=args.resume)
    except OSError as err:
        return _fail(str(err))
    print(f"training complete; log at {log_path}")
    return 0


def _cmd_eval(args) -> int:
    seed = args.seed if args.seed is not None else _default_seed()
    try:
        bundle = bundle_from_file(args.ckpt)
        values = _load_values(args.config)
    except (OSError, ValueError) as err:
        return _fail(str(err))
    report = metricsmod.evaluate(
        bundle, args.family, args.agents, args.obstacles,
        n_episodes=args.episodes, seed=seed, delay_mode=args.delay_mode,
        cfg=_protocol_config(values, deterministic=True), workers=args.workers,
    )
    try:
        with open(args.out, "w") as fh:
            fh.write(report.to_json())
    except OSError as err:
        return _fail(str(err))
    print(f"SR {report.sr:.1f} over {report.n_episodes} episodes -> {args.out}")
    return 0


def _cmd_rollout(args) -> int:
    seed = args.seed if args.seed is not None else _default_seed()
    try:
        bundle = bundle_from_file(args.ckpt)
        values = _load_values(args.config)
        if args.scenario:
            with open(args.scenario) as fh:
                sc = ec.scenario_from_text(fh.read())
        else:
            sc = ec.generate_scenario(args.family, args.agents, args.obstacles, seed)
    except (OSError, ValueError, ec.GenerationFailed) as err:
        return _fail(str(err))
    cfg = _protocol_config(values, deterministic=not args.stochastic)
    result, _ = ncf2.rollout_episode(bundle, sc, seed, 0, cfg)
    try:
        with open(args.trace, "w") as fh:
            fh.write(ec.trace_to_text(result.trace))
        if args.save_scenario:
            with open(args.save_scenario, "w") as fh:
                fh.write(ec.scenario_to_text(sc))
    except OSError as err:
        return _fail(str(err))
    outcome = "success" if result.success else result.failure_cause
    print(f"episode {outcome}; trace -> {args.trace}")
    return 0


def _cmd_plot(args) -> int:
    try:
        with open(args.trace) as fh:
            records = ec.trace_from_text(fh.read())
        scenario = None
        if args.scenario:
            with open(args.scenario) as fh:
                scenario = ec.scenario_from_text(fh.read())
        svg = plotting.render_trace(records, scenario)
        with open(args.out, "w") as fh:
            fh.write(svg)
    except (OSError, ValueError) as err:
        return _fail(str(err))
    print(f"figure -> {args.out}")
    return 0


# ---------------------------------------------------------------------------
# selftest


def _check(name: str, ok: bool, results: list) -> None:
    results.append(ok)
    print(f"{'PASS' if ok else 'FAIL'} {name}")


def _cmd_selftest(_args) -> int:
    results: list[bool] = []
    rng = np.random.default_rng(0)

    # exact arc kinematics case
    p = step_kinematics(Pose(0.0, 0.0, 0.0), Action(1.0, math.pi / 2))
    ok = (
        abs(p.x - 2 / math.pi) < 1e-9
        and abs(p.y - 2 / math.pi) < 1e-9
        and abs(p.theta - math.pi / 2) < 1e-9
    )
    _check("kinematics quarter-arc case", ok, results)

    # arc integrator vs substepped Euler
    ok = True
    for _ in range(200):
        pose = Pose(*rng.uniform(-5, 5, 2), rng.uniform(-3, 3))
        a = Action(rng.uniform(0, 6.4), rng.uniform(-0.25 * math.pi, 0.25 * math.pi))
        exact = step_kinematics(pose, a)
        x, y, th = pose.x, pose.y, pose.theta
        n = 1000
        for _ in range(n):
            # midpoint heading keeps the reference second-order accurate
            x += a.v / n * math.cos(th + a.w / (2 * n))
            y += a.v / n * math.sin(th + a.w / (2 * n))
            th += a.w / n
        ok &= math.hypot(exact.x - x, exact.y - y) < 1e-3
    _check("kinematics Euler oracle", ok, results)

    # lidar vs dense ray-march
    ok = True
    for _ in range(5):
        world = WorldMap(
            128.0,
            [Circle(*rng.uniform(20, 108, 2), rng.uniform(6.4, 10.24)) for _ in range(4)],
        )
        pose = Pose(*rng.uniform(30, 98, 2), rng.uniform(-3, 3))
        if any(
            math.hypot(pose.x - c.cx, pose.y - c.cy) < c.radius + 2.56
            for c in world.obstacles
        ):
            continue
        scan = lidar_scan(pose, world)
        from ..geom2d import beam_angles

        for ang, r in zip(beam_angles(pose.theta), scan):
            t, step = 0.0, 1e-3
            rr = world.scan_range
            while t < world.scan_range:
                px, py = pose.x + t * math.cos(ang), pose.y + t * math.sin(ang)
                if any(
                    math.hypot(px - c.cx, py - c.cy) <= c.radius
                    for c in world.obstacles
                ):
                    rr = t
                    break
                t += step
            ok &= abs(rr - r) < 2e-3
    _check("lidar ray-march oracle", ok, results)

    # patience-variance alignment identity
    ok = True
    for _ in range(2000):
        n = int(rng.integers(2, 17))
        rb, xi = rng.random(n), rng.random(n) + 1e-3
        i = int(rng.integers(n))
        k = xi.sum() ** 2 / (2 * xi[i])
        lhs = ncf2.patience_alignment(rb, xi, i)
        rhs = -k * ncf2.weighted_variance_grad(rb, xi, i)
        ok &= abs(lhs - rhs) < 1e-9
    _check("patience-variance alignment identity", ok, results)

    # stopping reward fixture
    r = ncf2.fairness_efficiency_reward(
        0, 1.0, np.array([2.0, 3.0]), np.array([0.5, 1.0]), ncf2.FairnessConstants()
    )
    _check("stopping reward fixture", abs(r - 1.15 / 6.0) < 1e-12, results)
    _check(
        "stopping reward gate",
        ncf2.fairness_efficiency_reward(
            1, 1.0, np.array([2.0]), np.array([1.0]), ncf2.FairnessConstants()
        )
        == 0.0,
        results,
    )

    # checkpoint round-trip
    spec = MlpSpec(trunk=16, head=16, feat=8, embed=8)
    b1 = PolicyBundle(spec, seed=5)
    blob = b1.save_bytes()
    b2 = PolicyBundle(spec, seed=6)
    b2.load_bytes(blob)
    _check("checkpoint round-trip", b2.save_bytes() == blob, results)

    # attention permutation invariance
    enc = b1.enc_patience
    rows1 = rng.random((5, 3))
    rows2 = rng.random((5, 3))
    base = enc.encode_np([rows1, rows2])
    perm = rng.permutation(5)
    swapped = enc.encode_np([rows1[perm], rows2[perm]])
    _check(
        "attention permutation invariance",
        float(np.abs(base - swapped).max()) < 1e-6,
        results,
    )

    failed = results.count(False)
    print(f"{len(results) - failed}/{len(results)} checks passed")
    return 1 if failed else 0


def main(argv=None) -> int:
    parser = _build_parser()
    args = parser.parse_args(argv)
    handler = {
        "train": _cmd_train,
        "eval": _cmd_eval,
        "rollout": _cmd_rollout,
        "plot": _cmd_plot,
        "selftest": _cmd_selftest,
    }[args.command]
    return handler(args)


if __name__ == "__main__":
    sys.exit(main())
