"""Text checkpoint format.

::

    FLOWSAGE-CKPT v1
    meta <key> <value...>          (zero or more)
    param <name> <rank> <dim...>
    <row-major values, %.17g, one line per last-axis row>
    ...

Seventeen significant digits make the float64 round trip bit-exact.
"""

from __future__ import annotations

from typing import Mapping

import numpy as np

from .errors import FormatError, VersionError

MAGIC = "FLOWSAGE-CKPT"
VERSION = "v1"


def _fmt(values) -> str:
    return " ".join("%.17g" % v for v in values)


def dumps(params: Mapping[str, np.ndarray], meta: Mapping[str, object] = ()) -> str:
    lines = [f"{MAGIC} {VERSION}"]
    for key, value in dict(meta).items():
        if isinstance(value, (list, tuple)):
            value = " ".join(str(v) for v in value)
        lines.append(f"meta {key} {value}")
    for name, arr in params.items():
        arr = np.asarray(arr, dtype=np.float64)
        if any(c.isspace() for c in name):
            raise ValueError(f"parameter name may not contain whitespace: {name!r}")
        lines.append(" ".join(["param", name, str(arr.ndim)] + [str(d) for d in arr.shape]))
        if arr.ndim == 0:
            lines.append(_fmt([arr.item()]))
        elif arr.size:
            for row in arr.reshape(-1, arr.shape[-1]):
                lines.append(_fmt(row))
    return "\n".join(lines) + "\n"


def save(path, params, meta=()) -> None:
    with open(path, "w", encoding="ascii", newline="\n") as fh:
        fh.write(dumps(params, meta))


def loads(text: str) -> tuple[dict[str, np.ndarray], dict[str, str]]:
    lines = text.split("\n")
    if not lines or not lines[0].startswith(MAGIC):
        raise FormatError("not a FLOWSAGE checkpoint (bad magic line)")
    head = lines[0].split()
    if len(head) != 2:
        raise FormatError(f"malformed header line: {lines[0]!r}")
    if head[1] != VERSION:
        raise VersionError(f"unsupported checkpoint version {head[1]!r}; expected {VERSION}")
    meta: dict[str, str] = {}
    params: dict[str, np.ndarray] = {}
    pos = 1
    n = len(lines)
    while pos < n:
        line = lines[pos].strip()
        pos += 1
        if not line:
            continue
        parts = line.split()
        if parts[0] == "meta":
            if len(parts) < 2:
                raise FormatError(f"malformed meta line: {line!r}")
            meta[parts[1]] = " ".join(parts[2:])
            continue
        if parts[0] != "param" or len(parts) < 3:
            raise FormatError(f"expected a param line, got {line!r}")
        name = parts[1]
        try:
            rank = int(parts[2])
            shape = tuple(int(d) for d in parts[3:])
        except ValueError:
            raise FormatError(f"malformed param line: {line!r}") from None
        if len(shape) != rank:
            raise FormatError(f"param {name}: rank {rank} but {len(shape)} dims")
        count = int(np.prod(shape)) if shape else 1
        values: list[float] = []
        while len(values) < count:
            if pos >= n or not lines[pos].strip():
                raise FormatError(f"param {name}: truncated, expected {count} values, got {len(values)}")
            try:
                values.extend(float(tok) for tok in lines[pos].split())
            except ValueError:
                raise FormatError(f"param {name}: non-numeric value on line {pos + 1}") from None
            pos += 1
        if len(values) != count:
            raise FormatError(f"param {name}: expected {count} values, got {len(values)}")
        params[name] = np.asarray(values, dtype=np.float64).reshape(shape)
    return params, meta


def load(path):
    with open(path, "r", encoding="ascii") as fh:
        return loads(fh.read())
