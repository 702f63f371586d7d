"""Reader for labeled Zeek ``conn.log`` files in the IoT-23 layout.

Data rows are tab separated.  Lines starting with ``#`` are directives; the
``#fields`` directive names the columns and must appear before any data row.
IoT-23 packs ``tunnel_parents label detailed-label`` into the last tab field
separated by runs of spaces, both in the header and in every row; cleaned
TSVs put them in their own columns.  Both layouts are accepted.
"""

from __future__ import annotations

import io
import re
from dataclasses import dataclass, fields
from typing import IO, Iterable, Iterator, Optional

from .errors import EmptyInput, MissingHeader, RowError, SchemaError

MISSING_TOKENS = ("-", "(empty)")

# Zeek column name -> FlowRecord attribute, in the order they appear in conn.log
RETAINED = {
    "ts": "ts",
    "id.orig_h": "orig_h",
    "id.orig_p": "orig_p",
    "id.resp_h": "resp_h",
    "id.resp_p": "resp_p",
    "proto": "proto",
    "duration": "duration",
    "orig_bytes": "orig_bytes",
    "resp_bytes": "resp_bytes",
    "conn_state": "conn_state",
    "missed_bytes": "missed_bytes",
    "history": "history",
    "orig_pkts": "orig_pkts",
    "orig_ip_bytes": "orig_ip_bytes",
    "resp_pkts": "resp_pkts",
    "resp_ip_bytes": "resp_ip_bytes",
    "label": "label",
}
DROPPED = ("uid", "service", "local_orig", "local_resp", "tunnel_parents", "detailed-label")

INT_FIELDS = frozenset({
    "orig_p", "resp_p", "orig_bytes", "resp_bytes", "missed_bytes",
    "orig_pkts", "orig_ip_bytes", "resp_pkts", "resp_ip_bytes",
})
OPTIONAL_FIELDS = frozenset({"duration", "orig_bytes", "resp_bytes", "history"})

BENIGN, MALICIOUS = 0, 1

_PACKED_SPLIT = re.compile(r"\s{2,}")


@dataclass(frozen=True)
class FlowRecord:
    ts: float
    orig_h: str
    orig_p: int
    resp_h: str
    resp_p: int
    proto: str
    duration: Optional[float]
    orig_bytes: Optional[int]
    resp_bytes: Optional[int]
    conn_state: str
    missed_bytes: int
    history: Optional[str]
    orig_pkts: int
    orig_ip_bytes: int
    resp_pkts: int
    resp_ip_bytes: int
    label: int

    def __post_init__(self):
        for port in (self.orig_p, self.resp_p):
            if not 0 <= port <= 65535:
                raise ValueError(f"port out of range: {port}")
        for name in INT_FIELDS:
            value = getattr(self, name)
            if value is not None and value < 0:
                raise ValueError(f"{name} must be non-negative, got {value}")
        if self.duration is not None and not self.duration >= 0:
            raise ValueError(f"duration must be non-negative, got {self.duration}")
        if self.label not in (BENIGN, MALICIOUS):
            raise ValueError(f"label must be 0 or 1, got {self.label}")


FIELD_ORDER = tuple(f.name for f in fields(FlowRecord))


def raw_field(token: str) -> Optional[str]:
    """Map a raw token to ``None`` when it is a missing marker."""
    return None if token in MISSING_TOKENS else token


def normalize_label(raw: Optional[str]) -> int:
    if raw is not None and "malicious" in raw.lower():
        return MALICIOUS
    return BENIGN


def _split_header_fields(tokens: list[str]) -> list[str]:
    names = []
    for tok in tokens:
        parts = tok.split()
        names.extend(parts if parts else [tok])
    return names


def validate_schema(header_line: str) -> dict[str, int]:
    """Resolve the retained fields to column indices.

    Unknown extra columns are ignored.  Raises SchemaError naming every
    retained field that is missing.
    """
    line = header_line.rstrip("\r\n")
    if not line.startswith("#fields"):
        raise SchemaError(list(RETAINED), "header line does not start with #fields")
    names = _split_header_fields(line.split("\t")[1:])
    mapping = {}
    dupes = []
    for idx, name in enumerate(names):
        if name in RETAINED:
            if name in mapping:
                dupes.append(name)
            mapping[name] = idx
    if dupes:
        raise SchemaError(dupes, "retained fields appear more than once: " + ", ".join(dupes))
    missing = [name for name in RETAINED if name not in mapping]
    if missing:
        raise SchemaError(missing)
    mapping["__width__"] = len(names)
    return mapping


def _decode_separator(value: str) -> str:
    value = value.strip()
    if value.startswith("\\x"):
        return chr(int(value[2:], 16))
    return value or "\t"


class ConnLogReader:
    """Single-pass streaming parser.

    Iterate to get FlowRecords in file order.  ``total_rows`` and ``skipped``
    are updated as the stream is consumed; ``records + skipped == total_rows``
    once iteration finishes.  Skipped rows keep their error in ``errors``
    (capped at ``max_errors`` entries).
    """

    def __init__(self, stream: IO, max_errors: int = 100):
        self.stream = stream
        self.total_rows = 0
        self.skipped = 0
        self.unlabeled = 0
        self.errors: list[tuple[int, str]] = []
        self.max_errors = max_errors
        self.mapping: Optional[dict[str, int]] = None
        self.separator = "\t"

    def _lines(self) -> Iterator[str]:
        for line in self.stream:
            if isinstance(line, bytes):
                line = line.decode("utf-8", errors="replace")
            yield line.rstrip("\r\n")

    def __iter__(self) -> Iterator[FlowRecord]:
        saw_header = False
        for lineno, line in enumerate(self._lines(), start=1):
            if not line:
                continue
            if line.startswith("#"):
                if line.startswith("#separator"):
                    self.separator = _decode_separator(line[len("#separator"):])
                elif line.startswith("#fields"):
                    # concatenated captures repeat headers; the last one wins
                    self.mapping = validate_schema(line.replace(self.separator, "\t"))
                    saw_header = True
                continue
            if self.mapping is None:
                raise MissingHeader(f"line {lineno}: data row before any #fields directive")
            self.total_rows += 1
            try:
                yield self._parse_row(line)
            except RowError as exc:
                self.skipped += 1
                if len(self.errors) < self.max_errors:
                    self.errors.append((lineno, str(exc)))
        if not saw_header:
            raise MissingHeader("no #fields directive found")

    def _parse_row(self, line: str) -> FlowRecord:
        mapping = self.mapping
        width = mapping["__width__"]
        cols = line.split(self.separator)
        if len(cols) == width - 2 and _PACKED_SPLIT.search(cols[-1].strip()):
            packed = _PACKED_SPLIT.split(cols[-1].strip())
            if len(packed) != 3:
                packed = cols[-1].split(None, 2)
            cols = cols[:-1] + packed
        if len(cols) != width:
            raise RowError(f"expected {width} columns, got {len(cols)}")
        values = {}
        for zeek_name, attr in RETAINED.items():
            values[attr] = raw_field(cols[mapping[zeek_name]])
        raw_label = values.pop("label")
        if raw_label is None:
            self.unlabeled += 1
        try:
            return make_record(values, normalize_label(raw_label))
        except (TypeError, ValueError) as exc:
            raise RowError(str(exc)) from None


def make_record(values: dict, label: int) -> FlowRecord:
    out = {}
    for name in FIELD_ORDER:
        if name == "label":
            continue
        tok = values[name]
        if tok is None:
            if name not in OPTIONAL_FIELDS:
                raise ValueError(f"required field {name} is missing")
            out[name] = None
        elif name in INT_FIELDS:
            out[name] = int(tok)
        elif name in ("ts", "duration"):
            out[name] = float(tok)
        else:
            out[name] = tok
    return FlowRecord(label=label, **out)


@dataclass
class ParseResult:
    records: list[FlowRecord]
    total_rows: int
    skipped: int
    unlabeled: int = 0


def parse_conn_log(stream: IO) -> ParseResult:
    """Parse a whole stream into memory. Use ConnLogReader to stream instead."""
    reader = ConnLogReader(stream)
    records = list(reader)
    return ParseResult(records, reader.total_rows, reader.skipped, reader.unlabeled)


def parse_path(path) -> ParseResult:
    with open(path, "rb") as fh:
        return parse_conn_log(fh)


def class_balance(records: Iterable[FlowRecord]) -> dict[str, float]:
    n = 0
    malicious = 0
    for rec in records:
        n += 1
        malicious += rec.label
    if n == 0:
        raise EmptyInput("class_balance needs at least one record")
    mal = malicious / n
    return {"benign_fraction": (n - malicious) / n, "malicious_fraction": mal}


def _fmt(name: str, value) -> str:
    if value is None:
        return "-"
    if name == "label":
        return "Malicious" if value == MALICIOUS else "Benign"
    if isinstance(value, float):
        return repr(value)
    return str(value)


def write_conn_log(records: Iterable[FlowRecord], stream: IO[str]) -> int:
    """Write records as a conn.log with only the retained columns."""
    stream.write("#separator \\x09\n")
    stream.write("#fields\t" + "\t".join(RETAINED) + "\n")
    n = 0
    for rec in records:
        stream.write("\t".join(_fmt(attr, getattr(rec, attr)) for attr in RETAINED.values()) + "\n")
        n += 1
    return n


def records_to_tsv(records: Iterable[FlowRecord]) -> str:
    buf = io.StringIO()
    write_conn_log(records, buf)
    return buf.getvalue()
