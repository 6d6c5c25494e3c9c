"""Flat binary array files with JSON sidecar headers.

Every array artifact in this package uses the same convention: the payload is
a row-major stream of little-endian 64-bit floats in a ``.bin`` file, and a
sibling ``.json`` file of the same stem records the shape plus format-specific
metadata.  The sidecar is the source of truth for the shape; a payload whose
byte count disagrees with it is rejected.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

PAYLOAD_DTYPE = "<f8"


def sidecar_path(payload_path) -> Path:
    path = Path(payload_path)
    return path.with_suffix(".json")


def save_array(payload_path, array, header: dict) -> Path:
    """Write ``array`` as little-endian float64 plus a JSON sidecar.

    ``header`` entries are copied into the sidecar next to the mandatory
    ``shape`` key.  Returns the sidecar path.
    """
    path = Path(payload_path)
    path.parent.mkdir(parents=True, exist_ok=True)
    data = np.ascontiguousarray(array, dtype=PAYLOAD_DTYPE)
    with open(path, "wb") as fh:
        fh.write(data.tobytes())
    meta = dict(header)
    meta["shape"] = list(data.shape)
    side = sidecar_path(path)
    side.write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n")
    return side


def open_memmap(payload_path, shape, header: dict) -> np.memmap:
    """Create a writable memmap payload of the given shape, sidecar included.

    Used for archives too large to hold in memory; entries start zeroed and
    are flushed to disk by the memmap itself.
    """
    path = Path(payload_path)
    path.parent.mkdir(parents=True, exist_ok=True)
    meta = dict(header)
    meta["shape"] = list(shape)
    sidecar_path(path).write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n")
    return np.memmap(path, dtype=PAYLOAD_DTYPE, mode="w+", shape=tuple(shape))


def load_array(payload_path, mmap: bool = False):
    """Read a payload and its sidecar back as ``(array, header)``.

    Raises ``FileNotFoundError`` for a missing payload or sidecar and
    ``ValueError`` when the payload size does not match the recorded shape.
    """
    path = Path(payload_path)
    side = sidecar_path(path)
    if not path.exists():
        raise FileNotFoundError(f"missing array payload: {path}")
    if not side.exists():
        raise FileNotFoundError(f"missing sidecar for {path}: {side}")
    header = json.loads(side.read_text())
    shape = tuple(int(s) for s in header["shape"])
    expected = int(np.prod(shape)) * 8
    actual = path.stat().st_size
    if actual != expected:
        raise ValueError(
            f"payload {path} holds {actual} bytes but sidecar shape {shape} "
            f"requires {expected}"
        )
    if mmap:
        array = np.memmap(path, dtype=PAYLOAD_DTYPE, mode="r", shape=shape)
    else:
        array = np.fromfile(path, dtype=PAYLOAD_DTYPE).reshape(shape)
    return array, header
