from . import autodiff
from .autodiff import Tensor
from .layers import Conv2d, GroupNorm, Linear, Module, timestep_embedding
from .optim import EMA, Adam

__all__ = [
    "autodiff",
    "Tensor",
    "Module",
    "Conv2d",
    "Linear",
    "GroupNorm",
    "timestep_embedding",
    "Adam",
    "EMA",
]
