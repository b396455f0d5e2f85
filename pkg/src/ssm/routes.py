"""
Scan routes: direction-specific orderings of an H×W grid and the multi-route SS2D.
"""

import logging
from dataclasses import dataclass
from enum import Enum
from typing import List, Sequence, Tuple

import numpy as np

from ..tensor.core import Tensor, reshape, take
from .kernel import SsmParams, s6_parameterize, selective_scan

logger = logging.getLogger(__name__)


class ScanDirection(str, Enum):
    H_FWD = "H-fwd"
    H_BWD = "H-bwd"
    V_FWD = "V-fwd"
    V_BWD = "V-bwd"
    D_FWD = "D-fwd"
    D_BWD = "D-bwd"
    AD_FWD = "AD-fwd"
    AD_BWD = "AD-bwd"

    @property
    def is_backward(self) -> bool:
        return self.value.endswith("-bwd")

    @property
    def forward(self) -> "ScanDirection":
        return ScanDirection(self.value.replace("-bwd", "-fwd"))


class RouteSet(str, Enum):
    """
    Directions owned by one network.

    The co-trained pair splits the eight directions into HV and DA; ALL scans
    every direction in a single network.
    """

    HV = "HV"
    DA = "DA"
    ALL = "ALL"

    @property
    def directions(self) -> Tuple[ScanDirection, ...]:
        hv = (ScanDirection.H_FWD, ScanDirection.H_BWD, ScanDirection.V_FWD, ScanDirection.V_BWD)
        da = (ScanDirection.D_FWD, ScanDirection.D_BWD, ScanDirection.AD_FWD, ScanDirection.AD_BWD)
        if self is RouteSet.HV:
            return hv
        if self is RouteSet.DA:
            return da
        return hv + da


# Routes in each of the co-trained HV and DA sets
ROUTES_PER_SET = 4


@dataclass(frozen=True)
class RoutePermutation:
    """Bijective ordering of the cells of an H×W grid; ``indices[k]`` is the k-th visited cell."""

    height: int
    width: int
    indices: np.ndarray

    def __post_init__(self):
        if self.indices.shape != (self.height * self.width,):
            raise ValueError(f"route has {self.indices.shape} entries for a {self.height}x{self.width} grid")
        if not np.array_equal(np.sort(self.indices), np.arange(self.height * self.width)):
            raise ValueError("route indices are not a bijection on the grid")

    @property
    def inverse(self) -> np.ndarray:
        return np.argsort(self.indices)

    def as_grid(self) -> np.ndarray:
        """Visit step of every cell, laid out on the grid."""
        return self.inverse.reshape(self.height, self.width)


def route_order(direction: ScanDirection, height: int, width: int) -> RoutePermutation:
    """
    Enumerate the cells of an H×W grid along one scan direction.

    Args:
        direction: Scan direction
        height: Grid rows (H >= 1)
        width: Grid columns (W >= 1)

    Returns:
        RoutePermutation over row-major cell indices
    """
    if height < 1 or width < 1:
        raise ValueError(f"route_order needs positive extents, got {height}x{width}")
    direction = ScanDirection(direction)
    rows, cols = np.divmod(np.arange(height * width), width)
    base = direction.forward

    if base is ScanDirection.H_FWD:
        order = np.arange(height * width)
    elif base is ScanDirection.V_FWD:
        order = np.lexsort((rows, cols))
    elif base is ScanDirection.D_FWD:
        # anti-diagonal groups r + c, rows ascending inside a group
        order = np.lexsort((rows, rows + cols))
    else:
        order = np.lexsort((rows, rows + (width - 1 - cols)))

    if direction.is_backward:
        order = order[::-1]
    return RoutePermutation(height, width, np.ascontiguousarray(order, dtype=np.int64))


def apply_route(perm: RoutePermutation, grid: Tensor) -> Tensor:
    """
    Flatten a grid (..., H, W, C) into the route's sequence (..., L, C).
    """
    if grid.ndim < 3 or grid.shape[-3:-1] != (perm.height, perm.width):
        raise ValueError(f"grid {grid.shape} does not match route extents {perm.height}x{perm.width}")
    flat = reshape(grid, grid.shape[:-3] + (perm.height * perm.width, grid.shape[-1]))
    return take(flat, perm.indices, axis=-2)


def invert_route(perm: RoutePermutation, seq: Tensor) -> Tensor:
    """
    Scatter a route sequence (..., L, C) back onto its grid (..., H, W, C).
    """
    if seq.ndim < 2 or seq.shape[-2] != perm.height * perm.width:
        raise ValueError(f"sequence {seq.shape} does not match route length {perm.height * perm.width}")
    flat = take(seq, perm.inverse, axis=-2)
    return reshape(flat, seq.shape[:-2] + (perm.height, perm.width, seq.shape[-1]))


def ss2d_forward(route_set: RouteSet, params: Sequence[SsmParams], grid: Tensor) -> Tuple[Tensor, List[Tensor]]:
    """
    Multi-route 2D selective scan.

    Args:
        route_set: Directions to scan along
        params: One SsmParams per route, in the route set's direction order
        grid: Feature grid of shape (..., H, W, C)

    Returns:
        Tuple (sum of the grid-aligned route outputs, list of the per-route outputs)
    """
    directions = RouteSet(route_set).directions
    if len(params) != len(directions):
        raise ValueError(f"{len(directions)} routes need {len(directions)} parameter sets, got {len(params)}")
    if not np.all(np.isfinite(grid.data)):
        raise ValueError("ss2d_forward: grid contains non-finite values")
    height, width = grid.shape[-3], grid.shape[-2]

    route_feats = []
    for direction, route_params in zip(directions, params):
        perm = route_order(direction, height, width)
        seq = apply_route(perm, grid)
        y = selective_scan(route_params, s6_parameterize(route_params, seq))
        route_feats.append(invert_route(perm, y))

    out = route_feats[0]
    for feat in route_feats[1:]:
        out = out + feat
    return out, route_feats
