"""Counter-based random streams.

Every stochastic draw in a rollout comes from a Philox generator keyed by
(seed, episode, agent, timestep, stream). Streams are therefore
independent of call order and of whether other draws happen at all, which
is what makes parallel rollouts and ablation comparisons reproducible.
"""

from __future__ import annotations

import numpy as np

# stream ids
NAV_NOISE = 0
CF2_SAMPLE = 1
SOLITARY_NOISE = 2
SCENARIO = 3


def rng_for(seed: int, episode: int, agent: int, t: int, stream: int) -> np.random.Generator:
    key = np.array(
        [
            np.uint64(seed & 0xFFFFFFFFFFFFFFFF),
            np.uint64(
                ((episode & 0xFFFFFFFF) << 32)
                ^ ((agent & 0xFFFF) << 16)
                ^ ((t & 0xFFF) << 4)
                ^ (stream & 0xF)
            ),
        ],
        dtype=np.uint64,
    )
    return np.random.Generator(np.random.Philox(key=key))
