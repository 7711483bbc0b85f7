"""MFF1 binary field files and JSON helpers."""
from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

from .grid import Field, GridDomain

MAGIC = b"MFF1"
_HEADER = struct.Struct("<5I")
_CODES = {"scalar": 0, "vector": 1, "matrix": 2}


def field_to_bytes(f: Field) -> bytes:
    """Serialise a field; exterior nodes are already zero by construction."""
    code = _CODES[f.value_kind]
    d = 1 if code == 0 else f.value_shape[0]
    head = MAGIC + _HEADER.pack(f.domain.m, f.domain.N, f.degree, code, d)
    return head + np.ascontiguousarray(f.values, dtype="<f8").tobytes()


def field_from_bytes(data: bytes, domain: GridDomain | None = None) -> Field:
    if data[:4] != MAGIC:
        raise ValueError("not an MFF1 file (bad magic)")
    m, N, k, code, d = _HEADER.unpack_from(data, 4)
    if code not in (0, 1, 2):
        raise ValueError(f"unknown value-shape code {code}")
    if domain is None:
        domain = GridDomain(m, N)
    elif (domain.m, domain.N) != (m, N):
        raise ValueError(f"file grid (m={m}, N={N}) does not match domain (m={domain.m}, N={domain.N})")
    from math import comb
    value_shape = ((), (d,), (d, d))[code]
    shape = (domain.n_nodes, comb(m, k), *value_shape)
    payload = np.frombuffer(data, dtype="<f8", offset=4 + _HEADER.size)
    if payload.size != int(np.prod(shape)):
        raise ValueError(f"payload holds {payload.size} values, expected {int(np.prod(shape))}")
    return Field(domain, k, payload.reshape(shape).astype(float))


def write_field(path, f: Field):
    Path(path).write_bytes(field_to_bytes(f))


def read_field(path, domain: GridDomain | None = None) -> Field:
    return field_from_bytes(Path(path).read_bytes(), domain)


def _default(o):
    if isinstance(o, (np.floating, np.integer)):
        return o.item()
    if isinstance(o, np.ndarray):
        return o.tolist()
    if isinstance(o, np.bool_):
        return bool(o)
    raise TypeError(f"cannot serialise {type(o).__name__}")


def to_json(obj) -> str:
    """Deterministic JSON (sorted keys, repr-exact floats)."""
    return json.dumps(obj, default=_default, sort_keys=True, indent=2)


def write_json(path, obj):
    Path(path).write_text(to_json(obj) + "\n", newline="\n")
