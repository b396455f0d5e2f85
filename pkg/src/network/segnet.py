"""
U-shaped segmentation network built from VSS blocks, plus the projector head.

Layout for a 32×32×1 input with embed_dim D = 8:

    patch embed (2×2, stride 2)     32×32×1  -> 16×16×D
    encoder VSS block               16×16×D            (skip)
    downsample (2×2, stride 2)      16×16×D  -> 8×8×2D
    bottleneck VSS block            8×8×2D             (route features)
    upsample + halve + concat skip  8×8×2D   -> 16×16×2D -> 16×16×D
    decoder VSS block               16×16×D
    upsample + projection + head    16×16×D  -> 32×32×classes
"""

import logging
from dataclasses import dataclass
from typing import Any, Dict, List, Optional, Tuple

import numpy as np

from ..ssm.routes import RouteSet
from ..tensor.core import Tensor, concat, matmul, reduce, reshape, silu, take, transpose
from ..tensor.module import Module
from ..utils.helpers import derive_rng
from .vss import VssBlock, vss_block_forward

logger = logging.getLogger(__name__)

DOWNSAMPLING_FACTOR = 4
INIT_STREAM = 10


@dataclass
class NetworkConfig:
    in_channels: int = 1
    embed_dim: int = 8
    num_classes: int = 2
    expansion: int = 2
    projector_dim: int = 16
    init_std: float = 0.1
    state_dim: int = 4
    dt_rank: int = 1
    dt_init: float = 0.5

    @classmethod
    def from_config(cls, config: Dict[str, Any]) -> "NetworkConfig":
        net, ssm = config["network"], config["ssm"]
        return cls(in_channels=net["in_channels"], embed_dim=net["embed_dim"], num_classes=net["num_classes"],
                   expansion=net["expansion"], projector_dim=net["projector_dim"], init_std=net["init_std"],
                   state_dim=ssm["state_dim"], dt_rank=ssm["dt_rank"], dt_init=ssm["dt_init"])

    @property
    def bottleneck_channels(self) -> int:
        """Channel width of the bottleneck route features (inner width of its VSS block)."""
        return self.expansion * 2 * self.embed_dim


def space_to_depth(x: Tensor, factor: int = 2) -> Tensor:
    """Fold factor×factor neighbourhoods into channels: (..., H, W, C) -> (..., H/f, W/f, f²C)."""
    *lead, height, width, channels = x.shape
    lead = tuple(lead)
    n = len(lead)
    x = reshape(x, lead + (height // factor, factor, width // factor, factor, channels))
    order = tuple(range(n)) + (n, n + 2, n + 1, n + 3, n + 4)
    x = transpose(x, order)
    return reshape(x, lead + (height // factor, width // factor, factor * factor * channels))


def upsample_nearest(x: Tensor, factor: int = 2) -> Tensor:
    height, width = x.shape[-3], x.shape[-2]
    x = take(x, np.arange(height * factor) // factor, axis=-3)
    return take(x, np.arange(width * factor) // factor, axis=-2)


def _affine(x: Tensor, weight: Tensor, bias: Tensor) -> Tensor:
    return matmul(x, weight) + bias


class SegNetwork(Module):
    """Segmentation network with one encoder stage, a bottleneck and a mirrored decoder."""

    def __init__(self, config: NetworkConfig, route_set: RouteSet, rng: Optional[np.random.Generator] = None):
        super().__init__()
        rng = rng if rng is not None else np.random.default_rng(0)
        self.config = config
        self.route_set = RouteSet(route_set)
        d, std = config.embed_dim, config.init_std
        block_kwargs = dict(expansion=config.expansion, state_dim=config.state_dim, dt_rank=config.dt_rank,
                            dt_init=config.dt_init, init_std=std, rng=rng)

        self.add_parameter("embed_w", rng.normal(0.0, std, (4 * config.in_channels, d)))
        self.add_parameter("embed_b", np.zeros(d))
        self.add_module("encoder", VssBlock(d, self.route_set, **block_kwargs))
        self.add_parameter("down_w", rng.normal(0.0, std, (4 * d, 2 * d)))
        self.add_parameter("down_b", np.zeros(2 * d))
        self.add_module("bottleneck", VssBlock(2 * d, self.route_set, **block_kwargs))
        self.add_parameter("up_w", rng.normal(0.0, std, (2 * d, d)))
        self.add_parameter("up_b", np.zeros(d))
        self.add_parameter("fuse_w", rng.normal(0.0, std, (2 * d, d)))
        self.add_parameter("fuse_b", np.zeros(d))
        self.add_module("decoder", VssBlock(d, self.route_set, **block_kwargs))
        self.add_parameter("expand_w", rng.normal(0.0, std, (d, d)))
        self.add_parameter("expand_b", np.zeros(d))
        self.add_parameter("head_w", rng.normal(0.0, std, (d, config.num_classes)))
        self.add_parameter("head_b", np.zeros(config.num_classes))

    def blocks(self) -> List[VssBlock]:
        return [self.encoder, self.bottleneck, self.decoder]


def network_forward(net: SegNetwork, image: Tensor) -> Tuple[Tensor, List[Tensor]]:
    """
    Segment an image batch.

    Args:
        net: Network parameters
        image: Input of shape (..., H, W, in_channels), H and W divisible by 4

    Returns:
        Tuple (logits of shape (..., H, W, num_classes), bottleneck route features, one per direction)
    """
    if image.ndim < 3 or image.shape[-1] != net.config.in_channels:
        raise ValueError(f"expected (..., H, W, {net.config.in_channels}) input, got {image.shape}")
    height, width = image.shape[-3], image.shape[-2]
    if height % DOWNSAMPLING_FACTOR or width % DOWNSAMPLING_FACTOR:
        raise ValueError(f"input extents {height}x{width} must be divisible by {DOWNSAMPLING_FACTOR}")

    x = _affine(space_to_depth(image), net.embed_w, net.embed_b)
    skip, _ = vss_block_forward(net.encoder, x, net.route_set)
    x = _affine(space_to_depth(skip), net.down_w, net.down_b)
    x, route_feats = vss_block_forward(net.bottleneck, x, net.route_set)
    x = _affine(upsample_nearest(x), net.up_w, net.up_b)
    x = _affine(concat([x, skip], axis=-1), net.fuse_w, net.fuse_b)
    x, _ = vss_block_forward(net.decoder, x, net.route_set)
    x = silu(_affine(upsample_nearest(x), net.expand_w, net.expand_b))
    return _affine(x, net.head_w, net.head_b), route_feats


class Projector(Module):
    """Two-layer perceptron applied to the globally pooled fused feature."""

    def __init__(self, in_dim: int, out_dim: int = 16, init_std: float = 0.1,
                 rng: Optional[np.random.Generator] = None):
        super().__init__()
        rng = rng if rng is not None else np.random.default_rng(0)
        self.in_dim = in_dim
        self.out_dim = out_dim
        self.add_parameter("w1", rng.normal(0.0, init_std, (in_dim, out_dim)))
        self.add_parameter("b1", np.zeros(out_dim))
        self.add_parameter("w2", rng.normal(0.0, init_std, (out_dim, out_dim)))
        self.add_parameter("b2", np.zeros(out_dim))


def projector_forward(projector: Projector, h: Tensor) -> Tensor:
    """
    Project a fused feature map (..., h', w', C) to a (..., out_dim) vector.
    """
    if h.ndim < 3 or h.shape[-1] != projector.in_dim:
        raise ValueError(f"projector expects (..., h, w, {projector.in_dim}), got {h.shape}")
    pooled = reduce("mean", h, (-3, -2))
    single = pooled.ndim == 1
    if single:
        pooled = reshape(pooled, (1, pooled.shape[0]))
    out = _affine(silu(_affine(pooled, projector.w1, projector.b1)), projector.w2, projector.b2)
    return reshape(out, (projector.out_dim,)) if single else out


def build_pair(config: NetworkConfig, seed: int, diverse_scan: bool = True):
    """
    Create the two co-trained networks and their projectors.

    Returns:
        Tuple (net_a, proj_a, net_b, proj_b); network B scans diagonally unless
        ``diverse_scan`` is off
    """
    route_b = RouteSet.DA if diverse_scan else RouteSet.HV
    net_a = SegNetwork(config, RouteSet.HV, derive_rng(seed, INIT_STREAM, 1))
    net_b = SegNetwork(config, route_b, derive_rng(seed, INIT_STREAM, 2))
    width = config.bottleneck_channels
    proj_a = Projector(width, config.projector_dim, config.init_std, derive_rng(seed, INIT_STREAM, 3))
    proj_b = Projector(width, config.projector_dim, config.init_std, derive_rng(seed, INIT_STREAM, 4))
    logger.info(f"Built networks A ({net_a.route_set.value}) and B ({net_b.route_set.value}) "
                f"with {net_a.num_parameters()} parameters each")
    return net_a, proj_a, net_b, proj_b
