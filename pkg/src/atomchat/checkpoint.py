"""Binary checkpoint container with bit-exact round-trips.

Layout (all integers little-endian):
    magic "ACPT" | u32 format version
    u64 header length | header JSON (model hyperparameters, vocab, kind)
    u32 parameter count
    per parameter, sorted by path:
        u32 path length | path UTF-8
        u32 ndim | u64 dims...
        float64 data | float64 squared-gradient avg | float64 squared-update avg
"""

from __future__ import annotations

import json
import struct

import numpy as np

from .errors import ContractError, FormatError

MAGIC = b"ACPT"
FORMAT_VERSION = 1


def save_checkpoint(path, store, meta):
    """Write every parameter in ``store`` plus optimizer accumulators."""
    header = json.dumps(meta, sort_keys=True).encode("utf-8")
    paths = sorted(store.paths())
    with open(path, "wb") as f:
        f.write(MAGIC)
        f.write(struct.pack("<I", FORMAT_VERSION))
        f.write(struct.pack("<Q", len(header)))
        f.write(header)
        f.write(struct.pack("<I", len(paths)))
        for p in paths:
            value = store.get(p)
            sq_grad, sq_delta = store.accumulators(p)
            encoded = p.encode("utf-8")
            f.write(struct.pack("<I", len(encoded)))
            f.write(encoded)
            f.write(struct.pack("<I", value.data.ndim))
            for dim in value.data.shape:
                f.write(struct.pack("<Q", dim))
            for arr in (value.data, sq_grad, sq_delta):
                f.write(np.ascontiguousarray(arr, dtype="<f8").tobytes())


def _read(f, n, what):
    buf = f.read(n)
    if len(buf) != n:
        raise FormatError(f"truncated checkpoint while reading {what}")
    return buf


def load_checkpoint(path):
    """Read a checkpoint; returns (meta, {path: (data, sq_grad, sq_delta)}).

    Raises FormatError on truncation or version mismatch; no partial state
    escapes on failure.
    """
    entries = {}
    with open(path, "rb") as f:
        if _read(f, 4, "magic") != MAGIC:
            raise FormatError("not a checkpoint file (bad magic)")
        (version,) = struct.unpack("<I", _read(f, 4, "version"))
        if version != FORMAT_VERSION:
            raise FormatError(
                f"checkpoint format version {version}, this build reads version {FORMAT_VERSION}"
            )
        (header_len,) = struct.unpack("<Q", _read(f, 8, "header length"))
        try:
            meta = json.loads(_read(f, header_len, "header").decode("utf-8"))
        except ValueError as e:
            raise FormatError(f"corrupt checkpoint header: {e}") from e
        (count,) = struct.unpack("<I", _read(f, 4, "parameter count"))
        for i in range(count):
            (path_len,) = struct.unpack("<I", _read(f, 4, f"path length #{i}"))
            p = _read(f, path_len, f"path #{i}").decode("utf-8")
            (ndim,) = struct.unpack("<I", _read(f, 4, f"ndim of '{p}'"))
            shape = tuple(
                struct.unpack("<Q", _read(f, 8, f"dim of '{p}'"))[0] for _ in range(ndim)
            )
            n_bytes = 8 * int(np.prod(shape, dtype=np.int64)) if shape else 8
            arrays = []
            for what in ("data", "sq_grad", "sq_delta"):
                raw = _read(f, n_bytes, f"{what} of '{p}'")
                arrays.append(np.frombuffer(raw, dtype="<f8").astype(np.float64).reshape(shape))
            entries[p] = tuple(arrays)
        if f.read(1):
            raise FormatError("trailing bytes after last checkpoint entry")
    return meta, entries


def apply_checkpoint(store, entries):
    """Overwrite store parameters and accumulators with loaded arrays in place."""
    store_paths = set(store.paths())
    loaded_paths = set(entries)
    if store_paths != loaded_paths:
        missing = sorted(store_paths - loaded_paths)
        extra = sorted(loaded_paths - store_paths)
        raise ContractError(f"checkpoint paths do not match store (missing={missing}, extra={extra})")
    for p, (data, sq_grad, sq_delta) in entries.items():
        value = store.get(p)
        if value.data.shape != data.shape:
            raise ContractError(
                f"shape mismatch for '{p}': store {value.data.shape}, checkpoint {data.shape}"
            )
        value.data[...] = data
        store.set_accumulators(p, sq_grad, sq_delta)
        value.clear_grad()
