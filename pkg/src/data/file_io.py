"""
File formats: binary PGM (P5) images, DCT1 tensors and dataset manifests.
"""

import logging
from pathlib import Path
from typing import List, Optional, Tuple

import numpy as np

from ..tensor.serialization import FormatError, decode_dct1, encode_dct1
from .synthetic import SplitDataset

logger = logging.getLogger(__name__)

PGM_MAXVAL = 255
SPLITS = ("labeled", "unlabeled", "test")


def write_pgm(path: Path, image: np.ndarray) -> None:
    """
    Write a [0, 1] image as an 8-bit binary PGM.

    Values are quantized as floor(v·255), so 0.5 is stored as 127.
    """
    image = np.asarray(image, dtype=np.float64)
    if image.ndim != 2:
        raise ValueError(f"PGM images are 2D, got shape {image.shape}")
    pixels = np.floor(np.clip(image, 0.0, 1.0) * PGM_MAXVAL + 1e-6).astype(np.uint8)
    height, width = image.shape
    header = f"P5\n{width} {height}\n{PGM_MAXVAL}\n".encode("ascii")
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    Path(path).write_bytes(header + pixels.tobytes())


def _next_token(payload: bytes, offset: int) -> Tuple[bytes, int]:
    while offset < len(payload):
        if payload[offset:offset + 1] == b"#":
            end = payload.find(b"\n", offset)
            offset = len(payload) if end < 0 else end + 1
        elif payload[offset:offset + 1].isspace():
            offset += 1
        else:
            break
    start = offset
    while offset < len(payload) and not payload[offset:offset + 1].isspace():
        offset += 1
    if start == offset:
        raise FormatError("truncated PGM header", start)
    return payload[start:offset], offset


def read_pgm(path: Path) -> np.ndarray:
    """Read a binary PGM into a float array with pixels mapped linearly to [0, 1]."""
    payload = Path(path).read_bytes()
    magic, offset = _next_token(payload, 0)
    if magic != b"P5":
        raise FormatError(f"bad PGM magic {magic!r}", 0)
    fields = []
    for _ in range(3):
        token, offset = _next_token(payload, offset)
        if not token.isdigit():
            raise FormatError(f"expected an integer, got {token!r}", offset - len(token))
        fields.append(int(token))
    width, height, maxval = fields
    if not 0 < maxval < 256:
        raise FormatError(f"unsupported maxval {maxval}", offset)
    # exactly one whitespace byte separates the header from the raster
    offset += 1
    if len(payload) - offset != width * height:
        raise FormatError(f"raster holds {len(payload) - offset} bytes, expected {width * height}",
                          min(len(payload), offset + width * height))
    pixels = np.frombuffer(payload, dtype=np.uint8, offset=offset).reshape(height, width)
    return pixels.astype(np.float64) / maxval


def save_tensor(path: Path, array: np.ndarray) -> None:
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    Path(path).write_bytes(encode_dct1(array))


def load_tensor(path: Path) -> np.ndarray:
    return decode_dct1(Path(path).read_bytes())


def save_dataset(dataset: SplitDataset, directory: Path) -> Path:
    """
    Store every image and label as DCT1 files and write ``manifest.tsv``.

    Manifest lines are ``<split>\\t<image>\\t<label|->[\\t<family>]`` with paths
    relative to the manifest.

    Returns:
        Path of the manifest
    """
    directory = Path(directory)
    lines: List[str] = []

    def emit(split: str, images: np.ndarray, masks: Optional[np.ndarray], families: List[str]):
        for i, image in enumerate(images):
            image_name = f"{split}/image_{i:04d}.dct"
            save_tensor(directory / image_name, image)
            label_name = "-"
            if masks is not None:
                label_name = f"{split}/label_{i:04d}.dct"
                save_tensor(directory / label_name, masks[i])
            columns = [split, image_name, label_name]
            if i < len(families):
                columns.append(families[i])
            lines.append("\t".join(columns))

    emit("labeled", dataset.labeled_images, dataset.labeled_masks, dataset.labeled_families)
    emit("unlabeled", dataset.unlabeled_images, None, [])
    emit("test", dataset.test_images, dataset.test_masks, dataset.test_families)

    manifest = directory / "manifest.tsv"
    manifest.write_text("\n".join(lines) + "\n", encoding="utf-8")
    logger.info(f"Saved dataset with {len(lines)} entries to {directory}")
    return manifest


def load_manifest(path: Path) -> SplitDataset:
    """Load a dataset written by :func:`save_dataset`."""
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"Dataset manifest not found: {path}")
    root = path.parent
    images = {split: [] for split in SPLITS}
    masks = {split: [] for split in SPLITS}
    families = {split: [] for split in SPLITS}

    offset = 0
    for raw in path.read_bytes().decode("utf-8").splitlines(keepends=True):
        line = raw.rstrip("\r\n")
        if line:
            columns = line.split("\t")
            if len(columns) not in (3, 4) or columns[0] not in SPLITS:
                raise FormatError(f"malformed manifest line {line!r}", offset)
            split = columns[0]
            images[split].append(load_tensor(root / columns[1]))
            if columns[2] != "-":
                masks[split].append(load_tensor(root / columns[2]).astype(np.int64))
            elif split != "unlabeled":
                raise FormatError(f"{split} entry without a label", offset)
            if len(columns) == 4:
                families[split].append(columns[3])
        offset += len(raw.encode("utf-8"))

    sizes = {a.shape for split in SPLITS for a in images[split]}
    if len(sizes) > 1:
        raise FormatError(f"manifest mixes image shapes {sorted(sizes)}", 0)
    shape = sizes.pop() if sizes else (0, 0)

    def stack(arrays, dtype=np.float64):
        return np.stack(arrays).astype(dtype) if arrays else np.zeros((0,) + shape, dtype=dtype)

    return SplitDataset(
        labeled_images=stack(images["labeled"]),
        labeled_masks=stack(masks["labeled"], np.int64),
        unlabeled_images=stack(images["unlabeled"]),
        test_images=stack(images["test"]),
        test_masks=stack(masks["test"], np.int64),
        labeled_families=families["labeled"],
        test_families=families["test"],
    )
