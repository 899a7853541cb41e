#!/usr/bin/env python3
"""
CPC-SNN Checkpoint Container
Versioned binary files holding named float64 arrays plus a JSON manifest
"""

import hashlib
import json
import struct
from pathlib import Path
from typing import Dict, Any, Optional, Tuple

import numpy as np

from utils.exceptions import CheckpointError, MissingArtifactError

MAGIC = b"CPCSNN\x00\x00"
VERSION = 1

def save_arrays(path: Path, kind: str, arrays: Dict[str, np.ndarray],
                metadata: Optional[Dict[str, Any]] = None) -> Path:
    """
    Write named arrays to a checkpoint file

    Layout: magic (8 bytes), uint32 version, uint32 manifest length,
    UTF-8 JSON manifest, then every array in manifest order as
    row-major little-endian float64. All integers are little-endian.
    """
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    names = list(arrays)
    manifest = {
        "kind": kind,
        "arrays": [{"name": n, "shape": list(np.shape(arrays[n]))} for n in names],
        "metadata": metadata or {},
    }
    header = json.dumps(manifest, sort_keys=True).encode("utf-8")
    with open(path, "wb") as f:
        f.write(MAGIC)
        f.write(struct.pack("<II", VERSION, len(header)))
        f.write(header)
        for name in names:
            f.write(np.ascontiguousarray(arrays[name], dtype="<f8").tobytes())
    return path

def load_arrays(path: Path, kind: Optional[str] = None) -> Tuple[Dict[str, np.ndarray], Dict[str, Any]]:
    """Read a checkpoint file, returning (arrays, metadata)"""
    path = Path(path)
    if not path.exists():
        raise MissingArtifactError(f"Checkpoint not found: {path}", artifact_path=str(path))
    data = path.read_bytes()
    if data[:len(MAGIC)] != MAGIC:
        raise CheckpointError(f"Not a CPC-SNN checkpoint: {path}", error_code="bad_magic")
    offset = len(MAGIC)
    if len(data) < offset + 8:
        raise CheckpointError(f"Truncated checkpoint header: {path}", error_code="truncated")
    version, header_len = struct.unpack_from("<II", data, offset)
    offset += 8
    if version != VERSION:
        raise CheckpointError(f"Unsupported checkpoint version {version}: {path}", error_code="bad_version")
    try:
        manifest = json.loads(data[offset:offset + header_len].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as e:
        raise CheckpointError(f"Corrupt checkpoint manifest: {path}", error_code="bad_manifest") from e
    offset += header_len
    if kind is not None and manifest.get("kind") != kind:
        raise CheckpointError(f"Checkpoint {path} holds {manifest.get('kind')!r}, expected {kind!r}",
                              error_code="wrong_kind")

    arrays: Dict[str, np.ndarray] = {}
    for entry in manifest["arrays"]:
        shape = tuple(entry["shape"])
        count = int(np.prod(shape, dtype=np.int64))
        nbytes = count * 8
        if offset + nbytes > len(data):
            raise CheckpointError(f"Truncated checkpoint payload: {path}", error_code="truncated")
        arrays[entry["name"]] = np.frombuffer(data, dtype="<f8", count=count, offset=offset).reshape(shape).copy()
        offset += nbytes
    if offset != len(data):
        raise CheckpointError(f"Trailing bytes in checkpoint: {path}", error_code="trailing")
    return arrays, manifest.get("metadata", {})

def checkpoint_digest(arrays: Dict[str, np.ndarray]) -> str:
    """SHA-256 over names, shapes and float64 bytes; used to assert frozenness"""
    digest = hashlib.sha256()
    for name in sorted(arrays):
        value = np.ascontiguousarray(arrays[name], dtype="<f8")
        digest.update(name.encode("utf-8"))
        digest.update(repr(value.shape).encode("ascii"))
        digest.update(value.tobytes())
    return digest.hexdigest()
