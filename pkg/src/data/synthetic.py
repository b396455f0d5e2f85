"""
Synthetic directional segmentation data.

Every image is a flat background with a single bright bar, either vertical or
tilted by 45°, plus Gaussian noise. The label is the exact bar mask.
"""

import logging
from dataclasses import dataclass, field
from typing import Any, Dict, List, Tuple

import numpy as np

logger = logging.getLogger(__name__)

FAMILIES = ("vertical", "tilted")
FOREGROUND_FRACTION_BOUNDS = (0.01, 0.50)


@dataclass
class SyntheticSpec:
    image_size: int = 32
    num_classes: int = 2
    families: Tuple[str, ...] = FAMILIES
    thickness_range: Tuple[int, int] = (2, 4)
    length_range: Tuple[int, int] = (12, 24)
    background: float = 0.2
    foreground: float = 0.8
    noise_sigma: float = 0.05
    num_labeled: int = 8
    num_unlabeled: int = 56
    num_test: int = 16
    seed: int = 0

    @classmethod
    def from_config(cls, config: Dict[str, Any]) -> "SyntheticSpec":
        section = dict(config["synthetic"])
        section["families"] = tuple(section["families"])
        section["thickness_range"] = tuple(section["thickness_range"])
        section["length_range"] = tuple(section["length_range"])
        return cls(**section)

    def validate(self) -> None:
        if self.image_size < 4:
            raise ValueError(f"image_size must be at least 4, got {self.image_size}")
        if self.num_classes != 2:
            raise ValueError("synthetic bars are binary; num_classes must be 2")
        unknown = set(self.families) - set(FAMILIES)
        if not self.families or unknown:
            raise ValueError(f"families must be a non-empty subset of {FAMILIES}, got {self.families}")
        t_lo, t_hi = self.thickness_range
        l_lo, l_hi = self.length_range
        if not 1 <= t_lo <= t_hi or not 1 <= l_lo <= l_hi:
            raise ValueError("thickness and length ranges must be positive and ordered")
        if l_hi + t_hi - 1 > self.image_size:
            raise ValueError(f"bars up to {l_hi}x{t_hi} do not fit a {self.image_size}px image")
        if not 0.0 <= self.background <= 1.0 or not 0.0 <= self.foreground <= 1.0:
            raise ValueError("background and foreground intensities must lie in [0, 1]")
        if self.noise_sigma < 0:
            raise ValueError("noise_sigma must be non-negative")
        if self.num_labeled < 0 or self.num_unlabeled < 0 or self.num_test < 0:
            raise ValueError("split sizes must be non-negative")


@dataclass
class SplitDataset:
    """Labeled pairs, unlabeled images and held-out test pairs; images are (n, H, W) in [0, 1]."""

    labeled_images: np.ndarray
    labeled_masks: np.ndarray
    unlabeled_images: np.ndarray
    test_images: np.ndarray
    test_masks: np.ndarray
    labeled_families: List[str] = field(default_factory=list)
    test_families: List[str] = field(default_factory=list)

    @property
    def image_size(self) -> int:
        for images in (self.labeled_images, self.unlabeled_images, self.test_images):
            if len(images):
                return images.shape[-1]
        raise ValueError("dataset holds no images")

    def test_subset(self, family: str) -> Tuple[np.ndarray, np.ndarray]:
        """Test pairs whose bar belongs to ``family``."""
        keep = np.array([f == family for f in self.test_families], dtype=bool)
        if len(keep) != len(self.test_images):
            raise ValueError("test family tags are missing")
        return self.test_images[keep], self.test_masks[keep]


def render_bar(size: int, family: str, row: int, col: int, thickness: int, length: int) -> np.ndarray:
    """
    Rasterize a bar mask.

    Args:
        size: Image extent
        family: ``vertical`` (columns col..col+thickness-1) or ``tilted`` (45° down-right)
        row: First row of the bar
        col: First column of the bar's top row
        thickness: Horizontal thickness in pixels
        length: Number of rows spanned

    Returns:
        Integer mask of shape (size, size)
    """
    mask = np.zeros((size, size), dtype=np.int64)
    for k in range(length):
        r = row + k
        c0 = col if family == "vertical" else col + k
        if not (0 <= r < size and 0 <= c0 and c0 + thickness <= size):
            raise ValueError(f"{family} bar at ({row}, {col}) leaves the {size}px image")
        mask[r, c0:c0 + thickness] = 1
    return mask


def _sample(spec: SyntheticSpec, rng: np.random.Generator) -> Tuple[np.ndarray, np.ndarray, str]:
    family = spec.families[rng.integers(len(spec.families))]
    thickness = int(rng.integers(spec.thickness_range[0], spec.thickness_range[1] + 1))
    length = int(rng.integers(spec.length_range[0], spec.length_range[1] + 1))
    size = spec.image_size
    row = int(rng.integers(0, size - length + 1))
    span = thickness if family == "vertical" else thickness + length - 1
    col = int(rng.integers(0, size - span + 1))

    mask = render_bar(size, family, row, col, thickness, length)
    image = spec.background + (spec.foreground - spec.background) * mask
    if spec.noise_sigma > 0:
        image = image + rng.normal(0.0, spec.noise_sigma, image.shape)
    return np.clip(image, 0.0, 1.0), mask, family


def gen_synthetic(spec: SyntheticSpec) -> SplitDataset:
    """
    Generate a deterministic split dataset.

    Args:
        spec: Dataset specification

    Returns:
        SplitDataset with disjoint labeled, unlabeled and test splits
    """
    spec.validate()
    rng = np.random.default_rng(spec.seed)
    size = spec.image_size

    def draw(count: int):
        images = np.zeros((count, size, size))
        masks = np.zeros((count, size, size), dtype=np.int64)
        families = []
        for i in range(count):
            images[i], masks[i], family = _sample(spec, rng)
            families.append(family)
        return images, masks, families

    labeled_images, labeled_masks, labeled_families = draw(spec.num_labeled)
    unlabeled_images, unlabeled_masks, _ = draw(spec.num_unlabeled)
    test_images, test_masks, test_families = draw(spec.num_test)

    all_masks = np.concatenate([labeled_masks, unlabeled_masks, test_masks])
    if len(all_masks):
        fraction = float(all_masks.mean())
        low, high = FOREGROUND_FRACTION_BOUNDS
        if not low < fraction < high:
            raise ValueError(f"foreground fraction {fraction:.4f} outside ({low}, {high})")
        logger.info(f"Generated {len(all_masks)} synthetic images, foreground fraction {fraction:.4f}")

    return SplitDataset(labeled_images, labeled_masks, unlabeled_images, test_images, test_masks,
                        labeled_families, test_families)
