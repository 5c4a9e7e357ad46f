"""Flat text configuration: `section.key = value` lines, one per setting.

Every key has a default; a config file only lists overrides. Blank lines
and `#` comments are ignored. Values are typed by their defaults, so a
typo in a number or flag fails loudly at parse time.
"""

from __future__ import annotations

from .dwa import DwaConfig
from .learn import SacConfig, TrainConfig
from .ncf2 import AblationFlags, FairnessConstants
from .nets.bundle import MlpSpec

DEFAULTS: dict[str, object] = {
    "run.seed": 0,
    "run.family": "Uniform",
    "run.agents": 2,
    "run.obstacles": 5,
    "run.map_size": 128.0,
    "run.out_dir": "runs/default",
    "dwa.v_samples": 11,
    "dwa.w_samples": 11,
    "dwa.horizon": 5,
    "dwa.w_heading": 1.0,
    "dwa.w_clearance": 1.0,
    "dwa.w_velocity": 0.2,
    "net.trunk": 256,
    "net.head": 256,
    "net.feat": 24,
    "net.embed": 24,
    "ncf2.alpha": 0.5,
    "ncf2.beta": 0.1,
    "ncf2.no_improvement": False,
    "ncf2.full_comm": False,
    "ncf2.fixed_priority": False,
    "ncf2.dup_patience": True,
    "sac.discount": 0.95,
    "sac.init_temperature": 0.01,
    "sac.tau": 0.005,
    "sac.target_interval": 1,
    "sac.lr": 0.001,
    "sac.batch_size": 256,
    "sac.buffer_capacity": 1_500_000,
    "sac.warmup_iterations": 10_000,
    "learn.phase0_iterations": 1_000_000,
    "learn.phase1_iterations": 1_000_000,
    "learn.phase2_iterations": 1_000_000,
    "learn.updates_per_episode": 64,
    "learn.workers": 1,
    "learn.checkpoint_interval": 5000,
    "learn.sr_window": 20,
}


def _convert(key: str, raw: str) -> object:
    default = DEFAULTS[key]
    if isinstance(default, bool):
        low = raw.lower()
        if low in ("true", "1", "yes"):
            return True
        if low in ("false", "0", "no"):
            return False
        raise ValueError(f"{key}: expected a boolean, got {raw!r}")
    if isinstance(default, int):
        return int(raw)
    if isinstance(default, float):
        return float(raw)
    return raw


def parse_config(text: str) -> dict[str, object]:
    """Defaults overlaid with the assignments in `text`."""
    values = dict(DEFAULTS)
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"line {lineno}: expected 'section.key = value'")
        key, _, raw = line.partition("=")
        key = key.strip()
        raw = raw.strip()
        if key not in DEFAULTS:
            raise ValueError(f"line {lineno}: unknown config key {key!r}")
        try:
            values[key] = _convert(key, raw)
        except ValueError as err:
            raise ValueError(f"line {lineno}: {err}") from None
    return values


def load_config(path: str) -> dict[str, object]:
    with open(path) as fh:
        return parse_config(fh.read())


def dump_config(values: dict[str, object] | None = None) -> str:
    values = values or DEFAULTS
    lines = []
    section = None
    for key in DEFAULTS:
        sec = key.split(".", 1)[0]
        if sec != section:
            if section is not None:
                lines.append("")
            section = sec
        v = values[key]
        if isinstance(v, bool):
            v = "true" if v else "false"
        lines.append(f"{key} = {v}")
    return "\n".join(lines) + "\n"


def dwa_config(values: dict[str, object]) -> DwaConfig:
    return DwaConfig(
        v_samples=values["dwa.v_samples"],
        w_samples=values["dwa.w_samples"],
        horizon=values["dwa.horizon"],
        w_heading=values["dwa.w_heading"],
        w_clearance=values["dwa.w_clearance"],
        w_velocity=values["dwa.w_velocity"],
    )


def mlp_spec(values: dict[str, object]) -> MlpSpec:
    return MlpSpec(
        trunk=values["net.trunk"],
        head=values["net.head"],
        feat=values["net.feat"],
        embed=values["net.embed"],
    )


def train_config(values: dict[str, object]) -> TrainConfig:
    return TrainConfig(
        seed=values["run.seed"],
        family=values["run.family"],
        n_agents=values["run.agents"],
        n_obstacles=values["run.obstacles"],
        map_size=values["run.map_size"],
        out_dir=values["run.out_dir"],
        spec=mlp_spec(values),
        sac=SacConfig(
            discount=values["sac.discount"],
            init_temperature=values["sac.init_temperature"],
            tau=values["sac.tau"],
            target_interval=values["sac.target_interval"],
            lr=values["sac.lr"],
            batch_size=values["sac.batch_size"],
            buffer_capacity=values["sac.buffer_capacity"],
            warmup_iterations=values["sac.warmup_iterations"],
        ),
        constants=FairnessConstants(
            alpha=values["ncf2.alpha"], beta=values["ncf2.beta"]
        ),
        flags=AblationFlags(
            no_improvement=values["ncf2.no_improvement"],
            full_comm=values["ncf2.full_comm"],
            fixed_priority=values["ncf2.fixed_priority"],
        ),
        dup_patience=values["ncf2.dup_patience"],
        dwa=dwa_config(values),
        phase_iterations=(
            values["learn.phase0_iterations"],
            values["learn.phase1_iterations"],
            values["learn.phase2_iterations"],
        ),
        updates_per_episode=values["learn.updates_per_episode"],
        workers=values["learn.workers"],
        checkpoint_interval=values["learn.checkpoint_interval"],
        sr_window=values["learn.sr_window"],
    )
