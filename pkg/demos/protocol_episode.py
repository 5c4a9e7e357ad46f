"""A full cooperative episode under the fairness protocol.

Four robots cross a cluttered map. Each step every robot broadcasts a
patience message, decides whether to move, and the ones that stop collect
the fairness reward. The policy here is untrained (pure DWA residuals),
so this demo is about the protocol mechanics, not performance.

Run:  python demos/protocol_episode.py
Writes demos/out/protocol.svg and demos/out/protocol.trace.
"""

import os

import numpy as np

from fairnav import envcore as ec
from fairnav import ncf2
from fairnav.nets.bundle import MlpSpec, PolicyBundle

OUT = os.path.join(os.path.dirname(__file__), "out")
os.makedirs(OUT, exist_ok=True)

bundle = PolicyBundle(MlpSpec(trunk=32, head=32, feat=8, embed=8), seed=0)
sc = ec.generate_scenario("Corner", n_agents=4, n_obstacles=10, seed=2)
cfg = ncf2.ProtocolConfig()

result, steps = ncf2.rollout_episode(bundle, sc, seed=7, episode=0, cfg=cfg)

print(f"episode over after {len(steps)} steps; "
      f"success={result.success} cause={result.failure_cause}")
print("goal times:", result.goal_times)

# how often did each robot yield, and what did it earn for yielding?
n = sc.n_agents
stops = np.zeros(n)
fair = np.zeros(n)
for ps in steps:
    for i, a in ps.agents.items():
        stops[i] += a.f == 0
        fair[i] += a.r_tilde
for i in range(n):
    print(f"robot {i}: stopped {int(stops[i]):3d} steps, "
          f"fairness return {fair[i]:+.4f}")

trace_path = os.path.join(OUT, "protocol.trace")
with open(trace_path, "w") as f:
    f.write(ec.trace_to_text(result.trace))

from fairnav.evalcli import render_trace

svg_path = os.path.join(OUT, "protocol.svg")
with open(svg_path, "w") as f:
    f.write(render_trace(result.trace, scenario=sc))
print(f"wrote {trace_path} and {svg_path}")
