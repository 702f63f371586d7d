"""IP communication graph built from flow records.

One node per distinct IP, one directed edge per ordered (src, dst) pair.
When several records share a pair, the per-flow attributes (duration,
ports, proto, conn_state, history, label) are taken from the last record
while the counters (packets, bytes, rejected and failed connections,
record count, protocol set) accumulate over all of them.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Iterable, Optional

import numpy as np

from .errors import FormatError, VersionError
from .ingest import FlowRecord

FAILED_STATES = frozenset({"S0", "REJ", "RSTO", "RSTR", "RSTOS0", "RSTRH", "SH", "SHR"})
REJECTED_STATE = "REJ"
MISSING = "missing"

NODE_FEATURES = (
    "log_total_bytes", "log_total_packets", "log_unique_connections",
    "failed_connection_rate", "log_avg_packet_size", "log_unique_protocols",
)
EDGE_FEATURES = (
    "log_duration", "log_duration_per_packet", "log_rejected_connections",
    "src_port_code", "dst_port_code", "log_total_packets", "log_total_bytes",
    "proto_code", "conn_state_code", "history_code",
)
CATEGORICAL_EDGE_FIELDS = ("src_port", "dst_port", "proto", "conn_state", "history")


@dataclass
class EdgeRecord:
    src: int
    dst: int
    duration: float = 0.0
    src_port: int = 0
    dst_port: int = 0
    proto: str = ""
    conn_state: str = ""
    history: str = MISSING
    label: int = 0
    total_packets: int = 0
    total_bytes: int = 0
    rejected_connections: int = 0
    failed_connections: int = 0
    record_count: int = 0
    protocols: set = field(default_factory=set)

    @property
    def duration_per_packet(self) -> float:
        return self.duration / self.total_packets if self.total_packets else 0.0


@dataclass
class NodeRecord:
    total_bytes: int
    total_packets: int
    unique_connections: int
    failed_connection_rate: float
    avg_packet_size: float
    unique_protocols: int


@dataclass
class FlowGraph:
    ips: list[str] = field(default_factory=list)
    ip_index: dict[str, int] = field(default_factory=dict)
    edges: dict[tuple[int, int], EdgeRecord] = field(default_factory=dict)

    @property
    def n_nodes(self) -> int:
        return len(self.ips)

    @property
    def n_edges(self) -> int:
        return len(self.edges)

    def node(self, ip: str) -> int:
        idx = self.ip_index.get(ip)
        if idx is None:
            idx = len(self.ips)
            self.ip_index[ip] = idx
            self.ips.append(ip)
        return idx

    def add_record(self, rec: FlowRecord) -> EdgeRecord:
        src = self.node(rec.orig_h)
        dst = self.node(rec.resp_h)
        edge = self.edges.get((src, dst))
        if edge is None:
            edge = self.edges[(src, dst)] = EdgeRecord(src, dst)
        edge.duration = rec.duration if rec.duration is not None else 0.0
        edge.src_port = rec.orig_p
        edge.dst_port = rec.resp_p
        edge.proto = rec.proto
        edge.conn_state = rec.conn_state
        edge.history = rec.history if rec.history is not None else MISSING
        edge.label = rec.label
        edge.total_packets += rec.orig_pkts + rec.resp_pkts
        edge.total_bytes += rec.orig_ip_bytes + rec.resp_ip_bytes
        edge.rejected_connections += rec.conn_state == REJECTED_STATE
        edge.failed_connections += rec.conn_state in FAILED_STATES
        edge.record_count += 1
        edge.protocols.add(rec.proto)
        return edge


def build_graph(records: Iterable[FlowRecord]) -> FlowGraph:
    graph = FlowGraph()
    for rec in records:
        graph.add_record(rec)
    return graph


def node_records(graph: FlowGraph) -> list[NodeRecord]:
    n = graph.n_nodes
    total_bytes = [0] * n
    total_packets = [0] * n
    failed = [0] * n
    records = [0] * n
    peers = [set() for _ in range(n)]
    protocols = [set() for _ in range(n)]
    for (src, dst), e in graph.edges.items():
        for node, peer in {(src, dst), (dst, src)}:
            total_bytes[node] += e.total_bytes
            total_packets[node] += e.total_packets
            failed[node] += e.failed_connections
            records[node] += e.record_count
            peers[node].add(peer)
            protocols[node].update(e.protocols)
    out = []
    for v in range(n):
        out.append(NodeRecord(
            total_bytes=total_bytes[v],
            total_packets=total_packets[v],
            unique_connections=len(peers[v]),
            failed_connection_rate=failed[v] / records[v] if records[v] else 0.0,
            avg_packet_size=total_bytes[v] / total_packets[v] if total_packets[v] else 0.0,
            unique_protocols=len(protocols[v]),
        ))
    return out


def node_feature_row(rec: NodeRecord) -> list[float]:
    return [
        math.log1p(rec.total_bytes),
        math.log1p(rec.total_packets),
        math.log1p(rec.unique_connections),
        rec.failed_connection_rate,
        math.log1p(rec.avg_packet_size),
        math.log1p(rec.unique_protocols),
    ]


def compute_node_features(graph: FlowGraph) -> np.ndarray:
    """(N, 6): log1p of bytes, packets, peers, avg packet size and protocol
    count; the failed-connection rate stays raw."""
    rows = [node_feature_row(r) for r in node_records(graph)]
    return np.asarray(rows, dtype=np.float64).reshape(-1, len(NODE_FEATURES))


def port_bucket(port: int) -> str:
    if port <= 1023:
        return str(port)
    if port <= 49151:
        return "registered"
    return "ephemeral"


def _categorical_value(edge: EdgeRecord, name: str) -> str:
    if name in ("src_port", "dst_port"):
        return port_bucket(getattr(edge, name))
    return getattr(edge, name)


def fit_edge_encoders(graph: FlowGraph, train_mask: Optional[np.ndarray] = None) -> dict[str, dict[str, int]]:
    """Label-encode categoricals in first-seen order over the training edges."""
    encoders = {name: {} for name in CATEGORICAL_EDGE_FIELDS}
    for i, edge in enumerate(graph.edges.values()):
        if train_mask is not None and not train_mask[i]:
            continue
        for name in CATEGORICAL_EDGE_FIELDS:
            enc = encoders[name]
            value = _categorical_value(edge, name)
            if value not in enc:
                enc[value] = len(enc)
    return encoders


def compute_edge_features(graph: FlowGraph, encoders: Optional[dict] = None, train_mask=None) -> np.ndarray:
    """(E, 10) in ``EDGE_FEATURES`` order.  Values unseen by the encoders get
    the next free code."""
    if encoders is None:
        encoders = fit_edge_encoders(graph, train_mask)
    rows = []
    for edge in graph.edges.values():
        codes = {}
        for name in CATEGORICAL_EDGE_FIELDS:
            enc = encoders[name]
            codes[name] = float(enc.get(_categorical_value(edge, name), len(enc)))
        rows.append([
            math.log1p(edge.duration),
            math.log1p(edge.duration_per_packet),
            math.log1p(edge.rejected_connections),
            codes["src_port"],
            codes["dst_port"],
            math.log1p(edge.total_packets),
            math.log1p(edge.total_bytes),
            codes["proto"],
            codes["conn_state"],
            codes["history"],
        ])
    return np.asarray(rows, dtype=np.float64).reshape(-1, len(EDGE_FEATURES))


@dataclass
class GraphTensors:
    node_features: np.ndarray
    edge_index: np.ndarray
    edge_features: np.ndarray
    edge_labels: np.ndarray
    train_mask: np.ndarray
    test_mask: np.ndarray
    encoders: dict = field(default_factory=dict)
    neighbors: list = field(default_factory=list)

    @property
    def n_nodes(self) -> int:
        return self.node_features.shape[0]

    @property
    def n_edges(self) -> int:
        return self.edge_index.shape[1]


def split_edges(n_edges: int, seed: int, train_fraction: float = 0.8) -> tuple[np.ndarray, np.ndarray]:
    n_train = math.floor(train_fraction * n_edges)
    perm = np.random.default_rng(seed).permutation(n_edges)
    train = np.zeros(n_edges, dtype=bool)
    train[perm[:n_train]] = True
    return train, ~train


def undirected_neighbors(edge_index: np.ndarray, n_nodes: int) -> list[np.ndarray]:
    """Sorted unique neighbors of every node, ignoring direction and self-loops."""
    src, dst = edge_index
    keep = src != dst
    a = np.concatenate([src[keep], dst[keep]])
    b = np.concatenate([dst[keep], src[keep]])
    pairs = np.unique(np.stack([a, b], axis=1), axis=0) if a.size else np.zeros((0, 2), dtype=np.int64)
    bounds = np.searchsorted(pairs[:, 0], np.arange(n_nodes + 1))
    return [pairs[bounds[v]:bounds[v + 1], 1] for v in range(n_nodes)]


def tensorize(graph: FlowGraph, split_seed: int = 0, train_fraction: float = 0.8) -> GraphTensors:
    train, test = split_edges(graph.n_edges, split_seed, train_fraction)
    encoders = fit_edge_encoders(graph, train)
    edge_index = np.array([[e.src for e in graph.edges.values()],
                           [e.dst for e in graph.edges.values()]], dtype=np.int64).reshape(2, -1)
    return GraphTensors(
        node_features=compute_node_features(graph),
        edge_index=edge_index,
        edge_features=compute_edge_features(graph, encoders),
        edge_labels=np.array([e.label for e in graph.edges.values()], dtype=np.int64),
        train_mask=train,
        test_mask=test,
        encoders=encoders,
        neighbors=undirected_neighbors(edge_index, graph.n_nodes),
    )


# ---------------------------------------------------------------- cache file

GRAPH_MAGIC = "FLOWSAGE-GRAPH"
GRAPH_VERSION = "v1"
_EDGE_COLUMNS = ("src", "dst", "duration", "src_port", "dst_port", "proto", "conn_state", "history",
                 "label", "total_packets", "total_bytes", "rejected_connections",
                 "failed_connections", "record_count", "protocols")


def save_graph(graph: FlowGraph, path, encoders: Optional[dict] = None) -> None:
    """Write the graph cache.

    Layout: ``FLOWSAGE-GRAPH v1``; ``nodes <N>`` then one ``<index>\\t<ip>``
    line per node; ``edges <E>`` then a tab-separated header and one line per
    edge (protocol set comma-joined, floats in repr form); ``encodings`` then
    one JSON line (``null`` when absent).
    """
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(f"{GRAPH_MAGIC} {GRAPH_VERSION}\n")
        fh.write(f"nodes {graph.n_nodes}\n")
        for i, ip in enumerate(graph.ips):
            fh.write(f"{i}\t{ip}\n")
        fh.write(f"edges {graph.n_edges}\n")
        fh.write("\t".join(_EDGE_COLUMNS) + "\n")
        for e in graph.edges.values():
            row = [e.src, e.dst, repr(float(e.duration)), e.src_port, e.dst_port, e.proto, e.conn_state,
                   e.history, e.label, e.total_packets, e.total_bytes, e.rejected_connections,
                   e.failed_connections, e.record_count, ",".join(sorted(e.protocols))]
            fh.write("\t".join(str(v) for v in row) + "\n")
        fh.write("encodings\n")
        fh.write(json.dumps(encoders, sort_keys=True) + "\n")


def load_graph(path) -> tuple[FlowGraph, Optional[dict]]:
    with open(path, "r", encoding="utf-8") as fh:
        lines = fh.read().split("\n")
    try:
        magic, version = lines[0].split()
    except ValueError:
        raise FormatError("not a FLOWSAGE graph cache") from None
    if magic != GRAPH_MAGIC:
        raise FormatError("not a FLOWSAGE graph cache")
    if version != GRAPH_VERSION:
        raise VersionError(f"unsupported graph cache version {version!r}")
    try:
        pos = 1
        n_nodes = int(lines[pos].split()[1])
        pos += 1
        graph = FlowGraph()
        for i in range(n_nodes):
            idx, ip = lines[pos + i].split("\t")
            if int(idx) != i:
                raise FormatError(f"node table out of order at line {pos + i + 1}")
            graph.node(ip)
        pos += n_nodes
        n_edges = int(lines[pos].split()[1])
        pos += 2  # count line and column header
        for i in range(n_edges):
            c = lines[pos + i].split("\t")
            if len(c) != len(_EDGE_COLUMNS):
                raise FormatError(f"edge line {pos + i + 1} has {len(c)} columns")
            e = EdgeRecord(
                int(c[0]), int(c[1]), float(c[2]), int(c[3]), int(c[4]), c[5], c[6], c[7], int(c[8]),
                int(c[9]), int(c[10]), int(c[11]), int(c[12]), int(c[13]),
                set(c[14].split(",")) if c[14] else set(),
            )
            graph.edges[(e.src, e.dst)] = e
        pos += n_edges
        if lines[pos] != "encodings":
            raise FormatError("missing encodings section")
        encoders = json.loads(lines[pos + 1])
    except (IndexError, ValueError) as exc:
        raise FormatError(f"truncated or malformed graph cache: {exc}") from None
    return graph, encoders
