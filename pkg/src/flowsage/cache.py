"""Binary columnar cache of parsed flow records.

Layout::

    FLOWSAGE-CACHE v1\\n
    <one-line JSON header>\\n
    <column blobs, back to back, in header order>

The header lists ``rows`` and, per column, ``name``, ``dtype`` (numpy
little-endian code) and ``nbytes``.  Text columns are dictionary encoded:
the header carries the ``vocab`` and the blob holds ``<i4`` codes with -1
for absent.  Optional numeric columns are followed by a ``<name>.present``
``|u1`` mask column.
"""

from __future__ import annotations

import json
from typing import Sequence

import numpy as np

from .errors import FormatError, VersionError
from .ingest import FIELD_ORDER, OPTIONAL_FIELDS, FlowRecord

MAGIC = b"FLOWSAGE-CACHE"
VERSION = b"v1"

TEXT_FIELDS = ("orig_h", "resp_h", "proto", "conn_state", "history")
FLOAT_FIELDS = ("ts", "duration")


def is_cache(path) -> bool:
    with open(path, "rb") as fh:
        return fh.read(len(MAGIC)) == MAGIC


def write_cache(records: Sequence[FlowRecord], path) -> None:
    header = {"rows": len(records), "columns": []}
    blobs = []

    def add(name, arr, **extra):
        arr = np.ascontiguousarray(arr)
        header["columns"].append({"name": name, "dtype": arr.dtype.str, "nbytes": arr.nbytes, **extra})
        blobs.append(arr.tobytes())

    for name in FIELD_ORDER:
        values = [getattr(r, name) for r in records]
        if name in TEXT_FIELDS:
            vocab: dict[str, int] = {}
            codes = np.array([-1 if v is None else vocab.setdefault(v, len(vocab)) for v in values], dtype="<i4")
            add(name, codes, vocab=list(vocab))
            continue
        dtype = "<f8" if name in FLOAT_FIELDS else "<i8"
        present = np.array([v is not None for v in values], dtype="|u1")
        add(name, np.array([0 if v is None else v for v in values], dtype=dtype))
        if name in OPTIONAL_FIELDS:
            add(name + ".present", present)
    with open(path, "wb") as fh:
        fh.write(MAGIC + b" " + VERSION + b"\n")
        fh.write(json.dumps(header).encode("utf-8") + b"\n")
        for blob in blobs:
            fh.write(blob)


def read_cache(path) -> list[FlowRecord]:
    with open(path, "rb") as fh:
        first = fh.readline().rstrip(b"\n").split()
        if len(first) != 2 or first[0] != MAGIC:
            raise FormatError("not a FLOWSAGE record cache")
        if first[1] != VERSION:
            raise VersionError(f"unsupported cache version {first[1].decode(errors='replace')!r}")
        try:
            header = json.loads(fh.readline())
        except json.JSONDecodeError as exc:
            raise FormatError(f"bad cache header: {exc}") from None
        body = fh.read()
    rows = header["rows"]
    cols = {}
    offset = 0
    for col in header["columns"]:
        end = offset + col["nbytes"]
        if end > len(body):
            raise FormatError(f"cache truncated in column {col['name']}")
        arr = np.frombuffer(body[offset:end], dtype=col["dtype"])
        if arr.size != rows:
            raise FormatError(f"column {col['name']} has {arr.size} values, expected {rows}")
        if "vocab" in col:
            vocab = col["vocab"]
            cols[col["name"]] = [None if c < 0 else vocab[c] for c in arr.tolist()]
        else:
            cols[col["name"]] = arr.tolist()
        offset = end
    for name in FIELD_ORDER:
        if name in OPTIONAL_FIELDS and name not in TEXT_FIELDS:
            mask = cols.pop(name + ".present")
            cols[name] = [v if m else None for v, m in zip(cols[name], mask)]
    missing = [n for n in FIELD_ORDER if n not in cols]
    if missing:
        raise FormatError(f"cache lacks columns: {', '.join(missing)}")
    return [FlowRecord(**{n: cols[n][i] for n in FIELD_ORDER}) for i in range(rows)]
