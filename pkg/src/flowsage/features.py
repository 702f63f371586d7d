"""Tabular encoding of flow records: imputation, IP integers, one-hot
categoricals, z-scoring and seeded train/validation/test splits."""

from __future__ import annotations

import dataclasses
import ipaddress
import math
from collections import Counter
from dataclasses import dataclass, field
from typing import NamedTuple, Optional, Sequence

import numpy as np

from .errors import AddressError, EmptyVocabulary, TooFewSamples
from .ingest import FlowRecord

NUMERIC_COLUMNS = (
    "ts", "orig_h", "orig_p", "resp_h", "resp_p", "duration", "orig_bytes",
    "resp_bytes", "missed_bytes", "orig_pkts", "orig_ip_bytes", "resp_pkts",
    "resp_ip_bytes",
)
CATEGORICAL_COLUMNS = ("proto", "conn_state", "history")
VOCAB_CAPS = {"history": 20}
MISSING_CATEGORY = "missing"
OTHER = "other"
IP_COLUMNS = ("orig_h", "resp_h")

# bins per numeric column for the integer token view used by the embedding model
TOKEN_BINS = 16


def ip_to_int(addr: str) -> int:
    try:
        return int(ipaddress.ip_address(addr.strip()))
    except (ValueError, AttributeError) as exc:
        raise AddressError(f"not an IP address: {addr!r}") from exc


def ip_feature(addr: str) -> float:
    """Numeric IP column value; IPv6 is XOR-folded down to 64 bits."""
    value = ip_to_int(addr)
    if value >= 1 << 32 or ":" in addr:
        value = (value >> 64) ^ (value & 0xFFFFFFFFFFFFFFFF)
    return float(value)


def impute_missing(records: Sequence[FlowRecord]) -> list[FlowRecord]:
    """Absent numerics become 0, absent categoricals become ``"missing"``."""
    out = []
    for rec in records:
        changes = {}
        if rec.duration is None:
            changes["duration"] = 0.0
        if rec.orig_bytes is None:
            changes["orig_bytes"] = 0
        if rec.resp_bytes is None:
            changes["resp_bytes"] = 0
        if rec.history is None:
            changes["history"] = MISSING_CATEGORY
        out.append(dataclasses.replace(rec, **changes) if changes else rec)
    return out


def encode_labels(raw_labels) -> tuple[np.ndarray, int]:
    """Map raw label strings (or parsed records) to 0/1.

    Returns the label vector and the number of absent labels, which are
    counted as benign.
    """
    out = []
    unlabeled = 0
    for item in raw_labels:
        if isinstance(item, FlowRecord):
            out.append(item.label)
            continue
        if item is None or item in ("-", "(empty)", ""):
            unlabeled += 1
            out.append(0)
        else:
            out.append(1 if "malicious" in item.lower() else 0)
    return np.asarray(out, dtype=np.int64), unlabeled


def build_vocabulary(values: Sequence[str], cap: Optional[int] = None) -> list[str]:
    """Most frequent first; ties broken by first appearance."""
    counts = Counter(values)
    if not counts:
        raise EmptyVocabulary("cannot build a vocabulary from no values")
    first_seen = {}
    for i, v in enumerate(values):
        first_seen.setdefault(v, i)
    ordered = sorted(counts, key=lambda v: (-counts[v], first_seen[v]))
    return ordered[:cap] if cap else ordered


def one_hot_encode(column: Sequence[str], vocabulary: Sequence[str]) -> np.ndarray:
    """Width is ``len(vocabulary) + 1``; the last slot takes unseen values."""
    if not vocabulary:
        raise EmptyVocabulary("one-hot encoding needs a non-empty vocabulary")
    index = {v: i for i, v in enumerate(vocabulary)}
    other = len(vocabulary)
    out = np.zeros((len(column), len(vocabulary) + 1))
    for row, value in enumerate(column):
        out[row, index.get(value, other)] = 1.0
    return out


def _is_constant(mean: float, std: float) -> bool:
    return std <= 1e-12 * max(1.0, abs(mean))


class ColumnStats(NamedTuple):
    """Mean and population std of one column.

    ``mean_lo`` is the part of the exact mean that float64 ``mean`` cannot
    hold.  Timestamps sit near 1.5e9 where the float spacing is ~2e-7; with
    a spread of a few seconds that rounding alone would leave a 1e-9 offset
    in the normalized mean, so centering subtracts both parts.
    """

    mean: float
    std: float
    mean_lo: float = 0.0


def fit_normalizer(matrix: np.ndarray) -> list[ColumnStats]:
    stats = []
    n = matrix.shape[0]
    for j in range(matrix.shape[1]):
        col = matrix[:, j]
        mean = math.fsum(col.tolist()) / n
        lo = math.fsum((col - mean).tolist()) / n
        centered = (col - mean) - lo
        std = math.sqrt(math.fsum((centered * centered).tolist()) / n)
        stats.append(ColumnStats(mean, std, lo))
    return stats


def apply_normalizer(matrix: np.ndarray, stats) -> np.ndarray:
    out = np.empty_like(matrix, dtype=np.float64)
    for j, st in enumerate(stats):
        st = ColumnStats(*st)
        if _is_constant(st.mean, st.std):
            out[:, j] = 0.0
        else:
            out[:, j] = ((matrix[:, j] - st.mean) - st.mean_lo) / st.std
    return out


def normalize(table: np.ndarray, fit_rows=None):
    """Z-score every column with population std fitted on ``fit_rows``.

    Returns ``(normalized, stats)`` where stats is a list of ColumnStats.
    """
    table = np.asarray(table, dtype=np.float64)
    fit = table if fit_rows is None else table[fit_rows]
    stats = fit_normalizer(fit)
    return apply_normalizer(table, stats), stats


@dataclass(frozen=True)
class SplitSpec:
    train_fraction: float = 0.70
    validation_fraction_of_train: float = 0.20
    seed: int = 0

    @property
    def test_fraction(self) -> float:
        return 1.0 - self.train_fraction


@dataclass
class Split:
    train: np.ndarray
    val: np.ndarray
    test: np.ndarray


def split_sizes(n: int, spec: SplitSpec) -> tuple[int, int, int]:
    """(fit rows, validation rows, test rows).  Fit + validation = floor(0.7 n)."""
    n_train = math.floor(spec.train_fraction * n)
    n_val = math.floor(spec.validation_fraction_of_train * n_train)
    return n_train - n_val, n_val, n - n_train


def split_indices(n: int, spec: SplitSpec) -> Split:
    if n < 10:
        raise TooFewSamples(f"need at least 10 samples to split, got {n}")
    n_fit, n_val, n_test = split_sizes(n, spec)
    perm = np.random.default_rng(spec.seed).permutation(n)
    n_train = n_fit + n_val
    train_all = perm[:n_train]
    return Split(
        train=np.sort(train_all[n_val:]),
        val=np.sort(train_all[:n_val]),
        test=np.sort(perm[n_train:]),
    )


def split_dataset(table: "FeatureTable", spec: SplitSpec):
    parts = split_indices(table.n_rows, spec)
    return table.take(parts.train), table.take(parts.val), table.take(parts.test)


@dataclass
class ColumnMeta:
    name: str
    kind: str  # "numeric" or "onehot"
    category: Optional[str] = None


@dataclass
class FeatureTable:
    matrix: np.ndarray
    column_meta: list[ColumnMeta]
    labels: np.ndarray
    norm_stats: dict[str, ColumnStats] = field(default_factory=dict)
    tokens: Optional[np.ndarray] = None

    @property
    def n_rows(self) -> int:
        return self.matrix.shape[0]

    @property
    def n_features(self) -> int:
        return self.matrix.shape[1]

    def take(self, rows) -> "FeatureTable":
        return FeatureTable(
            self.matrix[rows], self.column_meta, self.labels[rows], self.norm_stats,
            None if self.tokens is None else self.tokens[rows],
        )


def to_sequence(matrix: np.ndarray) -> np.ndarray:
    """(B, F) -> (B, F, 1): every feature becomes one timestep with one channel."""
    matrix = np.asarray(matrix)
    if matrix.ndim == 1:
        return matrix.reshape(-1, 1)
    return matrix.reshape(matrix.shape[0], matrix.shape[1], 1)


def from_sequence(seq: np.ndarray) -> np.ndarray:
    seq = np.asarray(seq)
    if seq.ndim == 2:
        return seq.reshape(-1)
    return seq.reshape(seq.shape[0], seq.shape[1])


def _numeric_row(rec: FlowRecord) -> list[float]:
    row = []
    for name in NUMERIC_COLUMNS:
        value = getattr(rec, name)
        if name in IP_COLUMNS:
            row.append(ip_feature(value))
        else:
            row.append(0.0 if value is None else float(value))
    return row


def _categorical(rec: FlowRecord, name: str) -> str:
    value = getattr(rec, name)
    return MISSING_CATEGORY if value is None else value


class FeaturePipeline:
    """Encoding fitted on the training rows and reusable at inference.

    Numeric columns are z-scored, categoricals one-hot encoded with an extra
    ``other`` slot, and a parallel integer token matrix is built for the
    embedding model: categoricals map to their vocabulary index, numerics to
    one of ``TOKEN_BINS`` quantile bins of the raw value.
    """

    version = 1

    def __init__(self):
        self.vocabularies: dict[str, list[str]] = {}
        self.norm_stats: dict[str, ColumnStats] = {}
        self.token_edges: dict[str, list[float]] = {}
        self.fitted = False

    def fit(self, records: Sequence[FlowRecord]) -> "FeaturePipeline":
        records = impute_missing(records)
        for name in CATEGORICAL_COLUMNS:
            values = [_categorical(r, name) for r in records]
            self.vocabularies[name] = build_vocabulary(values, VOCAB_CAPS.get(name))
        raw = np.array([_numeric_row(r) for r in records], dtype=np.float64).reshape(-1, len(NUMERIC_COLUMNS))
        for j, st in enumerate(fit_normalizer(raw)):
            self.norm_stats[NUMERIC_COLUMNS[j]] = st
        qs = np.linspace(0, 1, TOKEN_BINS + 1)[1:-1]
        for j, name in enumerate(NUMERIC_COLUMNS):
            self.token_edges[name] = [float(v) for v in np.unique(np.quantile(raw[:, j], qs))]
        self.fitted = True
        return self

    @property
    def column_meta(self) -> list[ColumnMeta]:
        meta = [ColumnMeta(name, "numeric") for name in NUMERIC_COLUMNS]
        for name in CATEGORICAL_COLUMNS:
            for cat in self.vocabularies[name] + [OTHER]:
                meta.append(ColumnMeta(name, "onehot", cat))
        return meta

    @property
    def n_features(self) -> int:
        return len(NUMERIC_COLUMNS) + sum(len(v) + 1 for v in self.vocabularies.values())

    def _token_offsets(self) -> list[int]:
        offsets = []
        pos = 0
        for name in NUMERIC_COLUMNS:
            offsets.append(pos)
            pos += len(self.token_edges[name]) + 1
        for name in CATEGORICAL_COLUMNS:
            offsets.append(pos)
            pos += len(self.vocabularies[name]) + 1
        offsets.append(pos)
        return offsets

    @property
    def token_vocab_size(self) -> int:
        return self._token_offsets()[-1]

    def transform(self, records: Sequence[FlowRecord]) -> FeatureTable:
        if not self.fitted:
            raise RuntimeError("pipeline is not fitted")
        records = impute_missing(records)
        raw = np.array([_numeric_row(r) for r in records], dtype=np.float64).reshape(-1, len(NUMERIC_COLUMNS))
        stats = [self.norm_stats[name] for name in NUMERIC_COLUMNS]
        blocks = [apply_normalizer(raw, stats)]
        offsets = self._token_offsets()
        tokens = np.empty((len(records), len(NUMERIC_COLUMNS) + len(CATEGORICAL_COLUMNS)), dtype=np.int64)
        for j, name in enumerate(NUMERIC_COLUMNS):
            tokens[:, j] = offsets[j] + np.searchsorted(self.token_edges[name], raw[:, j], side="right")
        for k, name in enumerate(CATEGORICAL_COLUMNS):
            values = [_categorical(r, name) for r in records]
            vocab = self.vocabularies[name]
            blocks.append(one_hot_encode(values, vocab))
            index = {v: i for i, v in enumerate(vocab)}
            col = len(NUMERIC_COLUMNS) + k
            tokens[:, col] = [offsets[col] + index.get(v, len(vocab)) for v in values]
        labels = np.array([r.label for r in records], dtype=np.int64)
        return FeatureTable(np.hstack(blocks), self.column_meta, labels, dict(self.norm_stats), tokens)

    def to_dict(self) -> dict:
        return {
            "version": self.version,
            "numeric_columns": list(NUMERIC_COLUMNS),
            "categorical_columns": list(CATEGORICAL_COLUMNS),
            "vocabularies": self.vocabularies,
            "norm_stats": {k: list(v) for k, v in self.norm_stats.items()},
            "token_edges": self.token_edges,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "FeaturePipeline":
        if data.get("numeric_columns") != list(NUMERIC_COLUMNS) or data.get("categorical_columns") != list(CATEGORICAL_COLUMNS):
            raise ValueError("pipeline artifact column order does not match this build")
        pipe = cls()
        pipe.vocabularies = {k: list(v) for k, v in data["vocabularies"].items()}
        pipe.norm_stats = {k: ColumnStats(*(float(x) for x in v)) for k, v in data["norm_stats"].items()}
        pipe.token_edges = {k: [float(x) for x in v] for k, v in data["token_edges"].items()}
        pipe.fitted = True
        return pipe


@dataclass
class PreparedData:
    pipeline: FeaturePipeline
    train: FeatureTable
    val: FeatureTable
    test: FeatureTable
    split: Split


def prepare_tabular(records: Sequence[FlowRecord], spec: SplitSpec) -> PreparedData:
    """Split first, fit the encoding on the training rows only, then encode all
    three partitions with it."""
    parts = split_indices(len(records), spec)
    pipeline = FeaturePipeline().fit([records[i] for i in parts.train])
    table = pipeline.transform(records)
    return PreparedData(pipeline, table.take(parts.train), table.take(parts.val), table.take(parts.test), parts)
