"""Array persistence: raw little-endian float64 (column-major) plus a JSON manifest.

Dense arrays are written as ``<name>.bin`` holding the Fortran-ordered
float64 payload and ``<name>.json`` holding shape, role, checksum and any
extra metadata.  Sparse matrices are written in coordinate triplet form:
the payload is ``rows (int64) | cols (int64) | values (float64)``.
"""

import hashlib
import json
from pathlib import Path

import numpy as np
import scipy.sparse as sp

from .errors import ArtifactError

__all__ = ["save_array", "load_array", "save_sparse", "load_sparse", "read_manifest",
           "write_json", "read_json"]


def _sha256(payload: bytes) -> str:
    return hashlib.sha256(payload).hexdigest()


def write_json(path, obj):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")


def read_json(path):
    path = Path(path)
    if not path.is_file():
        raise ArtifactError(f"missing artifact manifest: {path}")
    return json.loads(path.read_text())


def read_manifest(stem):
    return read_json(Path(stem).with_suffix(".json"))


def save_array(stem, array, role="", **extra):
    """Write a dense array (any dimension, float64) and its manifest."""
    stem = Path(stem)
    stem.parent.mkdir(parents=True, exist_ok=True)
    a = np.asarray(array, dtype="<f8")
    payload = np.asfortranarray(a).tobytes(order="F")
    stem.with_suffix(".bin").write_bytes(payload)
    manifest = {"format": "dense", "dtype": "float64-le", "order": "F",
                "shape": list(a.shape), "role": role, "sha256": _sha256(payload)}
    manifest.update(extra)
    write_json(stem.with_suffix(".json"), manifest)
    return manifest


def _read_payload(stem, manifest):
    path = Path(stem).with_suffix(".bin")
    if not path.is_file():
        raise ArtifactError(f"missing artifact payload: {path}")
    payload = path.read_bytes()
    if _sha256(payload) != manifest.get("sha256"):
        raise ArtifactError(f"checksum mismatch for {path}")
    return payload


def load_array(stem):
    manifest = read_manifest(stem)
    if manifest.get("format") != "dense":
        raise ArtifactError(f"{stem}: expected dense array, found {manifest.get('format')}")
    payload = _read_payload(stem, manifest)
    shape = tuple(manifest["shape"])
    return np.frombuffer(payload, dtype="<f8").reshape(shape, order="F").copy()


def save_sparse(stem, matrix, role="", **extra):
    stem = Path(stem)
    stem.parent.mkdir(parents=True, exist_ok=True)
    coo = sp.coo_matrix(matrix)
    coo.sum_duplicates()
    payload = (coo.row.astype("<i8").tobytes() + coo.col.astype("<i8").tobytes()
               + coo.data.astype("<f8").tobytes())
    stem.with_suffix(".bin").write_bytes(payload)
    manifest = {"format": "coo", "shape": list(coo.shape), "nnz": int(coo.nnz),
                "role": role, "sha256": _sha256(payload)}
    manifest.update(extra)
    write_json(stem.with_suffix(".json"), manifest)
    return manifest


def load_sparse(stem):
    manifest = read_manifest(stem)
    if manifest.get("format") != "coo":
        raise ArtifactError(f"{stem}: expected coo triplets, found {manifest.get('format')}")
    payload = _read_payload(stem, manifest)
    nnz = manifest["nnz"]
    rows = np.frombuffer(payload, dtype="<i8", count=nnz, offset=0)
    cols = np.frombuffer(payload, dtype="<i8", count=nnz, offset=8 * nnz)
    vals = np.frombuffer(payload, dtype="<f8", count=nnz, offset=16 * nnz)
    return sp.csr_matrix((vals, (rows, cols)), shape=tuple(manifest["shape"]))
