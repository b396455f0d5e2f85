"""
Patch-level weak-strong mixing augmentation.

Both views share one whole-image flip/rotation (the weak augmentation) so they
stay pixel-aligned with each other and with the label. The image is then cut
into a patch grid and every patch is made strong (photometric) in exactly one
of the two views.
"""

import dataclasses
import logging
from dataclasses import dataclass
from typing import Any, Dict, List, Optional, Tuple

import numpy as np
from scipy.ndimage import gaussian_filter

logger = logging.getLogger(__name__)

DIHEDRAL_ORDER = 8


@dataclass
class AugmentConfig:
    patch_size: Optional[int] = None  # None draws a size per iteration
    alpha: float = 0.9
    blur_sigma: Tuple[float, float] = (0.1, 1.0)
    brightness: Tuple[float, float] = (-0.2, 0.2)
    contrast: Tuple[float, float] = (0.8, 1.25)
    gamma: Tuple[float, float] = (0.7, 1.5)
    seed: int = 0

    def __post_init__(self):
        if not 0.0 <= self.alpha <= 1.0:
            raise ValueError(f"alpha must lie in [0, 1], got {self.alpha}")
        for name in ("blur_sigma", "brightness", "contrast", "gamma"):
            low, high = getattr(self, name)
            if low > high:
                raise ValueError(f"{name} range ({low}, {high}) is reversed")
        if self.blur_sigma[0] < 0:
            raise ValueError("blur_sigma must be non-negative")
        if self.contrast[0] <= 0 or self.gamma[0] <= 0:
            raise ValueError("contrast and gamma must be positive")
        if self.patch_size is not None and self.patch_size < 1:
            raise ValueError(f"patch_size must be positive, got {self.patch_size}")

    @classmethod
    def from_config(cls, config: Dict[str, Any]) -> "AugmentConfig":
        section = config["augment"]
        patch_size = section["patch_size"]
        if isinstance(patch_size, str):
            if patch_size != "random":
                raise ValueError(f"patch_size must be an integer or 'random', got {patch_size!r}")
            patch_size = None
        return cls(patch_size=patch_size, alpha=section["alpha"], blur_sigma=tuple(section["blur_sigma"]),
                   brightness=tuple(section["brightness"]), contrast=tuple(section["contrast"]),
                   gamma=tuple(section["gamma"]), seed=section["seed"])


@dataclass
class AugmentedPair:
    """Two pixel-aligned views; ``strong_in_a[i, j]`` marks patches made strong in ``view_a``."""

    view_a: np.ndarray
    view_b: np.ndarray
    strong_in_a: np.ndarray
    patch_size: int
    label: Optional[np.ndarray] = None

    @property
    def strong_in_b(self) -> np.ndarray:
        return ~self.strong_in_a

    def pixel_mask(self) -> np.ndarray:
        """Per-pixel 0/1 map of where ``view_a`` holds the strong version."""
        height, width = self.view_a.shape
        mask = np.zeros((height, width))
        for (i, j), (r0, r1, c0, c1) in zip(np.ndindex(*self.strong_in_a.shape),
                                            patch_grid(height, width, self.patch_size)):
            mask[r0:r1, c0:c1] = float(self.strong_in_a[i, j])
        return mask


def dihedral(array: np.ndarray, element: int) -> np.ndarray:
    """
    Apply one element of the order-8 dihedral group to the last two axes.

    Elements 0-3 rotate by 90°·k; elements 4-7 flip horizontally after the rotation.
    """
    if not 0 <= element < DIHEDRAL_ORDER:
        raise ValueError(f"dihedral element must be in [0, {DIHEDRAL_ORDER}), got {element}")
    rotations = element % 4
    if rotations % 2 and array.shape[-1] != array.shape[-2]:
        raise ValueError(f"cannot rotate a non-square {array.shape[-2]}x{array.shape[-1]} image by 90°")
    out = np.rot90(array, k=rotations, axes=(-2, -1))
    if element >= 4:
        out = np.flip(out, axis=-1)
    return np.ascontiguousarray(out)


def shared_geometric(image: np.ndarray, label: Optional[np.ndarray], rng: np.random.Generator
                     ) -> Tuple[np.ndarray, Optional[np.ndarray]]:
    """
    Apply one random flip/rotation identically to an image and its label.

    Returns:
        Tuple (image, label); label stays None when none is given
    """
    element = int(rng.integers(DIHEDRAL_ORDER))
    return dihedral(image, element), (dihedral(label, element) if label is not None else None)


def strong_photometric(patch: np.ndarray, config: AugmentConfig, rng: np.random.Generator) -> np.ndarray:
    """
    Apply blur, brightness, contrast and gamma, each with probability alpha.

    Args:
        patch: Pixels in [0, 1]
        config: Augmentation ranges
        rng: Random generator

    Returns:
        Transformed patch clamped to [0, 1]
    """
    patch = np.asarray(patch, dtype=np.float64)
    if patch.size and (patch.min() < 0.0 or patch.max() > 1.0):
        raise ValueError("strong_photometric expects pixel values in [0, 1]")
    out = patch.copy()

    if rng.random() < config.alpha:
        sigma = rng.uniform(*config.blur_sigma)
        out = gaussian_filter(out, sigma=sigma, mode="nearest")
    if rng.random() < config.alpha:
        out = out + rng.uniform(*config.brightness)
    if rng.random() < config.alpha:
        factor = rng.uniform(*config.contrast)
        mean = out.mean()
        out = (out - mean) * factor + mean
    if rng.random() < config.alpha:
        out = np.power(np.clip(out, 0.0, 1.0), rng.uniform(*config.gamma))
    return np.clip(out, 0.0, 1.0)


def patch_grid(height: int, width: int, patch_size: int) -> List[Tuple[int, int, int, int]]:
    """
    Row-major patch bounds (r0, r1, c0, c1) covering the image exactly.

    The last patch row and column absorb any remainder.
    """
    if patch_size < 1:
        raise ValueError(f"patch size must be positive, got {patch_size}")
    if patch_size > height or patch_size > width:
        raise ValueError(f"patch size {patch_size} exceeds image {height}x{width}")
    rows = [i * patch_size for i in range(height // patch_size)] + [height]
    cols = [j * patch_size for j in range(width // patch_size)] + [width]
    return [(rows[i], rows[i + 1], cols[j], cols[j + 1])
            for i in range(len(rows) - 1) for j in range(len(cols) - 1)]


def draw_patch_size(extent: int, rng: np.random.Generator) -> int:
    """Uniform patch size from [max(1, extent/8), extent]."""
    return int(rng.integers(max(1, extent // 8), extent + 1))


def mix_augment(image: np.ndarray, label: Optional[np.ndarray], config: AugmentConfig,
                rng: np.random.Generator, patch_size: Optional[int] = None) -> AugmentedPair:
    """
    Build the two weak-strong mixed views of one image.

    Args:
        image: Grayscale image (H, W) in [0, 1]
        label: Optional label map (H, W)
        config: Augmentation settings
        rng: Random generator
        patch_size: Overrides ``config.patch_size``; a random size is drawn when both are None

    Returns:
        AugmentedPair with complementary strong/weak patch assignment
    """
    image = np.asarray(image, dtype=np.float64)
    if image.ndim != 2:
        raise ValueError(f"mix_augment expects a 2D image, got shape {image.shape}")
    if image.min() < 0.0 or image.max() > 1.0:
        raise ValueError("mix_augment expects pixel values in [0, 1]")

    size = patch_size if patch_size is not None else config.patch_size
    if size is None:
        size = draw_patch_size(min(image.shape), rng)

    weak, label = shared_geometric(image, label, rng)
    height, width = weak.shape
    bounds = patch_grid(height, width, size)
    n_rows, n_cols = height // size, width // size

    view_a, view_b = weak.copy(), weak.copy()
    strong_in_a = np.zeros((n_rows, n_cols), dtype=bool)
    for (i, j), (r0, r1, c0, c1) in zip(np.ndindex(n_rows, n_cols), bounds):
        heads = rng.random() < 0.5
        strong = strong_photometric(weak[r0:r1, c0:c1], config, rng)
        if heads:
            view_a[r0:r1, c0:c1] = strong
        else:
            view_b[r0:r1, c0:c1] = strong
        strong_in_a[i, j] = heads

    return AugmentedPair(view_a=view_a, view_b=view_b, strong_in_a=strong_in_a, patch_size=size, label=label)


def weak_pair(image: np.ndarray, label: Optional[np.ndarray], config: AugmentConfig,
              rng: np.random.Generator, patch_size: Optional[int] = None) -> AugmentedPair:
    """Identical views carrying only the shared geometric transform."""
    return mix_augment(image, label, dataclasses.replace(config, alpha=0.0), rng, patch_size)
