from .autodiff import Tensor
from .bundle import MlpSpec, PolicyBundle
from .distributions import sample_binary, sample_continuous
from .layers import Adam, AttentionEncoder, Linear, Mlp, ParamStore, ShapeError
from .rng import rng_for

__all__ = [
    "Tensor",
    "MlpSpec",
    "PolicyBundle",
    "sample_binary",
    "sample_continuous",
    "Adam",
    "AttentionEncoder",
    "Linear",
    "Mlp",
    "ParamStore",
    "ShapeError",
    "rng_for",
]
