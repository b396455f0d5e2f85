"""
Simplified visual state-space (VSS) block.
"""

import logging
from typing import List, Optional, Tuple

import numpy as np

from ..ssm.kernel import SsmParams
from ..ssm.routes import RouteSet, ss2d_forward
from ..tensor.core import Tensor, depthwise_conv2d, layernorm, matmul, silu
from ..tensor.module import Module

logger = logging.getLogger(__name__)


class VssBlock(Module):
    """
    Gated block around an SS2D over the directions of its route set:

        y = LN(x); u = silu(dwconv(y W_in)); s = LN(SS2D(u)); g = silu(y W_gate)
        out = (s ⊙ g) W_out + x
    """

    def __init__(self, channels: int, route_set: RouteSet, expansion: int = 2, state_dim: int = 4,
                 dt_rank: int = 1, dt_init: float = 0.5, init_std: float = 0.1,
                 rng: Optional[np.random.Generator] = None):
        super().__init__()
        rng = rng if rng is not None else np.random.default_rng(0)
        inner = expansion * channels
        self.channels = channels
        self.inner = inner
        self.route_set = RouteSet(route_set)

        self.add_parameter("ln_in_gain", np.ones(channels))
        self.add_parameter("ln_in_bias", np.zeros(channels))
        self.add_parameter("w_in", rng.normal(0.0, init_std, (channels, inner)))
        self.add_parameter("conv", rng.normal(0.0, init_std, (3, 3, inner)))
        self.add_parameter("w_gate", rng.normal(0.0, init_std, (channels, inner)))
        self.add_parameter("ln_out_gain", np.ones(inner))
        self.add_parameter("ln_out_bias", np.zeros(inner))
        self.add_parameter("w_out", rng.normal(0.0, init_std, (inner, channels)))
        for k in range(len(self.route_set.directions)):
            self.add_module(f"route{k}", SsmParams(inner, state_dim, dt_rank, dt_init, init_std, rng))

    @property
    def routes(self) -> List[SsmParams]:
        return [getattr(self, f"route{k}") for k in range(len(self.route_set.directions))]


def vss_block_forward(block: VssBlock, x: Tensor, route_set: Optional[RouteSet] = None) -> Tuple[Tensor, List[Tensor]]:
    """
    Apply a VSS block.

    Args:
        block: Block parameters
        x: Features of shape (..., H, W, C)
        route_set: Override of the block's own route set

    Returns:
        Tuple (output with the shape of ``x``, the grid-aligned route features)
    """
    if x.ndim < 3 or x.shape[-1] != block.channels:
        raise ValueError(f"VSS block expects (..., H, W, {block.channels}), got {x.shape}")
    y = layernorm(x, block.ln_in_gain, block.ln_in_bias)
    u = silu(depthwise_conv2d(matmul(y, block.w_in), block.conv))
    s, route_feats = ss2d_forward(route_set or block.route_set, block.routes, u)
    s = layernorm(s, block.ln_out_gain, block.ln_out_bias)
    gate = silu(matmul(y, block.w_gate))
    return matmul(s * gate, block.w_out) + x, route_feats
