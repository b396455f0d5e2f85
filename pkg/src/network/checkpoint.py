"""
Checkpoint directories: one DCT1 file per tensor plus a text manifest.

Manifest layout::

    route_set HV
    tensor encoder.w_in 8,16
    ...

Extra ``key value`` header lines (such as ``iteration``) may precede the
tensor lines. Rank-0 tensors are listed with shape ``-``.
"""

import logging
from pathlib import Path
from typing import Dict, Optional, Tuple

import numpy as np

from ..ssm.routes import RouteSet
from ..tensor.module import Module
from ..tensor.serialization import FormatError, decode_dct1, encode_dct1

logger = logging.getLogger(__name__)

MANIFEST_NAME = "manifest.txt"


def _format_shape(shape: Tuple[int, ...]) -> str:
    return ",".join(str(n) for n in shape) if shape else "-"


def _parse_shape(text: str) -> Tuple[int, ...]:
    return () if text == "-" else tuple(int(n) for n in text.split(","))


def write_tensors(directory: Path, tensors: Dict[str, np.ndarray], header: Dict[str, str]) -> Path:
    """
    Write named arrays and a manifest into ``directory``.

    Args:
        directory: Target directory (created if missing)
        tensors: Mapping of dotted names to arrays
        header: Header key/value pairs written before the tensor lines

    Returns:
        Path of the manifest file
    """
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    lines = [f"{key} {value}" for key, value in header.items()]
    for name, array in tensors.items():
        (directory / f"{name}.dct").write_bytes(encode_dct1(array))
        lines.append(f"tensor {name} {_format_shape(np.shape(array))}")
    manifest = directory / MANIFEST_NAME
    manifest.write_text("\n".join(lines) + "\n", encoding="utf-8")
    return manifest


def read_tensors(directory: Path) -> Tuple[Dict[str, str], Dict[str, np.ndarray]]:
    """
    Read a checkpoint directory written by :func:`write_tensors`.

    Returns:
        Tuple (header mapping, mapping of names to arrays)
    """
    directory = Path(directory)
    manifest = directory / MANIFEST_NAME
    if not manifest.exists():
        raise FileNotFoundError(f"Checkpoint manifest not found: {manifest}")

    header: Dict[str, str] = {}
    tensors: Dict[str, np.ndarray] = {}
    offset = 0
    for raw in manifest.read_bytes().decode("utf-8").splitlines(keepends=True):
        parts = raw.split()
        if len(parts) == 3 and parts[0] == "tensor":
            name = parts[1]
            try:
                shape = _parse_shape(parts[2])
            except ValueError:
                raise FormatError(f"bad shape {parts[2]!r} for {name}", offset)
            array = decode_dct1((directory / f"{name}.dct").read_bytes())
            if array.shape != shape:
                raise FormatError(f"{name}: file shape {array.shape} != manifest shape {shape}", offset)
            tensors[name] = array
        elif len(parts) == 2 and parts[0] != "tensor":
            header[parts[0]] = parts[1]
        elif parts:
            raise FormatError(f"malformed manifest line {raw.strip()!r}", offset)
        offset += len(raw.encode("utf-8"))
    return header, tensors


def read_header(directory: Path) -> Dict[str, str]:
    """Header key/value pairs of a checkpoint manifest, without loading tensors."""
    manifest = Path(directory) / MANIFEST_NAME
    if not manifest.exists():
        raise FileNotFoundError(f"Checkpoint manifest not found: {manifest}")
    header = {}
    for line in manifest.read_text(encoding="utf-8").splitlines():
        parts = line.split()
        if len(parts) == 2 and parts[0] != "tensor":
            header[parts[0]] = parts[1]
    return header


def save_network(module: Module, directory: Path, route_set: Optional[RouteSet] = None,
                 extra: Optional[Dict[str, str]] = None) -> Path:
    """
    Save a module's parameters with its route-set tag.

    Args:
        module: Network (or any module) to save
        directory: Checkpoint directory
        route_set: Route-set tag; taken from ``module.route_set`` when omitted
        extra: Additional header entries

    Returns:
        Path of the manifest file
    """
    tag = route_set if route_set is not None else getattr(module, "route_set", None)
    header = {"route_set": RouteSet(tag).value} if tag is not None else {}
    header.update(extra or {})
    manifest = write_tensors(directory, module.state_dict(), header)
    logger.info(f"Saved {len(module.state_dict())} tensors to {directory}")
    return manifest


def load_network(module: Module, directory: Path, expected_route_set: Optional[RouteSet] = None) -> Dict[str, str]:
    """
    Load parameters saved by :func:`save_network` into ``module``.

    A route-set tag that differs from ``expected_route_set`` is reported as a
    warning and loading proceeds.

    Returns:
        The manifest header
    """
    header, tensors = read_tensors(directory)
    missing = set(module.parameters()) - set(tensors)
    if missing:
        raise FormatError(f"checkpoint lacks parameters {sorted(missing)[:3]}", 0)
    unknown = set(tensors) - set(module.parameters())
    if unknown:
        raise FormatError(f"checkpoint has unknown parameters {sorted(unknown)[:3]}", 0)
    if expected_route_set is not None and header.get("route_set") != RouteSet(expected_route_set).value:
        logger.warning(f"Checkpoint route set {header.get('route_set')} differs from expected "
                       f"{RouteSet(expected_route_set).value}")
    module.assign(tensors)
    return header
