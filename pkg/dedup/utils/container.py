"""
Versioned binary container for named arrays.

Layout::

    magic (8 bytes) | header length (uint32 LE) | JSON header | raw array data

The JSON header carries ``version``, ``kind``, caller metadata and an
``arrays`` table of ``{name, dtype, shape, offset, nbytes}`` entries. Arrays are
stored little-endian in declaration order, so a save/load round trip is
bit-exact.
"""

import json
import logging
import struct
from pathlib import Path
from typing import Any, Dict, Mapping, Tuple

import numpy as np

from dedup.exceptions import ArtifactError, MissingArtifactError, VersionMismatchError

logger = logging.getLogger(__name__)

MAGIC = b"TDEDUP\x00\x01"
CONTAINER_VERSION = 1

_ALLOWED_DTYPES = {"<f4", "<f8", "<i4", "<i8", "<u8"}


def write_container(
    path: Path,
    kind: str,
    metadata: Mapping[str, Any],
    arrays: Mapping[str, np.ndarray],
    version: int = CONTAINER_VERSION,
) -> None:
    """
    Write named arrays and a metadata header to ``path``.

    Args:
        path: Output file
        kind: Artifact kind recorded in the header (e.g. ``"embedder"``)
        metadata: JSON-serialisable header fields
        arrays: Name to array mapping; names must be unique
        version: Artifact version recorded in the header
    """
    table = []
    blobs = []
    offset = 0
    for name, array in arrays.items():
        array = np.asarray(array)
        dtype = array.dtype.newbyteorder("<").str
        if dtype not in _ALLOWED_DTYPES:
            raise ArtifactError(f"Unsupported dtype {array.dtype} for array '{name}'")
        blob = np.ascontiguousarray(array, dtype=dtype).tobytes()
        table.append({
            "name": name,
            "dtype": dtype,
            "shape": list(array.shape),
            "offset": offset,
            "nbytes": len(blob),
        })
        blobs.append(blob)
        offset += len(blob)

    header = {"version": version, "kind": kind, "metadata": dict(metadata), "arrays": table}
    header_bytes = json.dumps(header, sort_keys=True).encode("utf-8")

    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "wb") as f:
        f.write(MAGIC)
        f.write(struct.pack("<I", len(header_bytes)))
        f.write(header_bytes)
        for blob in blobs:
            f.write(blob)
    logger.debug(f"Wrote {kind} container with {len(table)} arrays to {path}")


def read_header(path: Path) -> Tuple[Dict[str, Any], int]:
    """
    Read the JSON header of a container.

    Returns:
        Header dictionary and the byte offset where array data starts
    """
    path = Path(path)
    if not path.exists():
        raise MissingArtifactError(f"Artifact not found: {path}")
    with open(path, "rb") as f:
        magic = f.read(len(MAGIC))
        if magic != MAGIC:
            raise ArtifactError(f"{path} is not a trace-dedup container")
        (length,) = struct.unpack("<I", f.read(4))
        header = json.loads(f.read(length).decode("utf-8"))
    return header, len(MAGIC) + 4 + length


def read_container(
    path: Path,
    kind: str,
    version: int = CONTAINER_VERSION,
) -> Tuple[Dict[str, Any], Dict[str, np.ndarray]]:
    """
    Read a container written by :func:`write_container`.

    Args:
        path: Container file
        kind: Expected artifact kind
        version: Expected major version

    Returns:
        Metadata dictionary and name to array mapping
    """
    header, data_start = read_header(path)
    if header.get("kind") != kind:
        raise ArtifactError(f"{path} holds '{header.get('kind')}', expected '{kind}'")
    if header.get("version") != version:
        raise VersionMismatchError(
            f"{path} has version {header.get('version')}, this build reads version {version}"
        )

    with open(path, "rb") as f:
        f.seek(data_start)
        data = f.read()

    arrays = {}
    for entry in header["arrays"]:
        start = entry["offset"]
        chunk = data[start:start + entry["nbytes"]]
        if len(chunk) != entry["nbytes"]:
            raise ArtifactError(f"{path} is truncated at array '{entry['name']}'")
        arrays[entry["name"]] = np.frombuffer(chunk, dtype=entry["dtype"]).reshape(entry["shape"]).copy()
    return header["metadata"], arrays
