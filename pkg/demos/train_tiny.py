"""A miniature end-to-end training run, small enough for a coffee break.

Runs all three phases (solitary pre-training, navigation warm-up, joint
navigation + filter training) with a tiny network and a few hundred
gradient steps, then evaluates the result against the untrained baseline
on held-out episodes. At this scale the comparison is about exercising
the pipeline, not about winning: a few hundred steps of actor training
on a nearly empty replay buffer can easily land below the pure-DWA
baseline. The acceptance-scale run (20k iterations per phase) is where
the comparison is meaningful.

Run:  python demos/train_tiny.py
"""

import os

from fairnav import learn
from fairnav.evalcli import evaluate
from fairnav.nets.bundle import MlpSpec, PolicyBundle

OUT = os.path.join(os.path.dirname(__file__), "out", "train_tiny")

spec = MlpSpec(trunk=32, head=32, feat=8, embed=8)
cfg = learn.TrainConfig(
    seed=1,
    family="Uniform",
    n_agents=2,
    n_obstacles=3,
    out_dir=OUT,
    spec=spec,
    sac=learn.SacConfig(batch_size=32, buffer_capacity=20_000,
                        warmup_iterations=100),
    phase_iterations=(600, 400, 400),
    updates_per_episode=32,
    workers=1,
)

print("training (three phases, 1400 gradient steps)...")
bundle, log_path = learn.run_pipeline(cfg)
with open(log_path) as f:
    tail = f.read().splitlines()[-3:]
print("log tail:")
for line in tail:
    print(" ", line)

print("\nevaluating on 20 held-out episodes...")
trained = evaluate(bundle, "Uniform", 2, 3, n_episodes=20, seed=50_000)
baseline = evaluate(PolicyBundle(spec, seed=9), "Uniform", 2, 3,
                    n_episodes=20, seed=50_000)
print(f"trained  SR {trained.sr:5.1f}  MS {trained.ms}")
print(f"baseline SR {baseline.sr:5.1f}  MS {baseline.ms}")
print(f"\ncheckpoints and the full log are under {OUT}")
