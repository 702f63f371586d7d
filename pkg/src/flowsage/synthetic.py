"""Synthetic data for sanity runs.

``make_separable`` is a tabular set with two informative columns placed at
the end of each row and Gaussian noise elsewhere.  Class centers sit at
``+/- separation`` in both informative columns, and samples closer than
``margin`` to the separating hyperplane are redrawn, so the classes are
strictly linearly separable.

``make_community_records`` emits flow records over two IP communities with
distinct traffic profiles.  Flows inside a community are benign; flows from
community A into community B are malicious.
"""

from __future__ import annotations

import numpy as np

from .ingest import BENIGN, MALICIOUS, FlowRecord


def make_separable(n: int = 5000, n_features: int = 8, separation: float = 3.0, noise: float = 0.5,
                   margin: float = 1.0, seed: int = 0) -> tuple[np.ndarray, np.ndarray]:
    if n_features < 2:
        raise ValueError("need at least two features")
    rng = np.random.default_rng(seed)
    y = rng.integers(0, 2, size=n)
    sign = 2.0 * y - 1.0
    X = rng.normal(0.0, noise, size=(n, n_features))
    inf = X[:, -2:]
    inf += separation * sign[:, None]
    while True:
        # signed distance to the hyperplane x_{-2} + x_{-1} = 0
        bad = sign * inf.sum(axis=1) / np.sqrt(2.0) < margin
        if not bad.any():
            break
        inf[bad] = rng.normal(0.0, noise, size=(int(bad.sum()), 2)) + separation * sign[bad, None]
    return X, y


COMMUNITY_PROFILES = {
    "a": {"proto": "tcp", "conn_state": "SF", "history": "ShADadFf", "bytes": (400, 1500), "pkts": (6, 20),
          "resp_port": 80, "duration": (0.5, 5.0)},
    "b": {"proto": "udp", "conn_state": "SF", "history": "Dd", "bytes": (40, 120), "pkts": (1, 3),
          "resp_port": 53, "duration": (0.0, 0.1)},
}


def community_ips(n_nodes: int) -> tuple[list[str], list[str]]:
    half = n_nodes // 2
    a = [f"10.0.{i // 250}.{i % 250 + 1}" for i in range(half)]
    b = [f"192.168.{i // 250}.{i % 250 + 1}" for i in range(n_nodes - half)]
    return a, b


def _flow(rng, ts, src, dst, profile, label) -> FlowRecord:
    lo, hi = profile["pkts"]
    pkts_o = int(rng.integers(lo, hi + 1))
    pkts_r = int(rng.integers(lo, hi + 1))
    blo, bhi = profile["bytes"]
    bytes_o = int(rng.integers(blo, bhi + 1))
    bytes_r = int(rng.integers(blo, bhi + 1))
    dlo, dhi = profile["duration"]
    return FlowRecord(
        ts=ts, orig_h=src, orig_p=int(rng.integers(49152, 65536)), resp_h=dst, resp_p=profile["resp_port"],
        proto=profile["proto"], duration=float(np.round(rng.uniform(dlo, dhi), 6)),
        orig_bytes=bytes_o, resp_bytes=bytes_r, conn_state=profile["conn_state"], missed_bytes=0,
        history=profile["history"], orig_pkts=pkts_o, orig_ip_bytes=bytes_o + 28 * pkts_o,
        resp_pkts=pkts_r, resp_ip_bytes=bytes_r + 28 * pkts_r, label=label,
    )


def make_community_records(n_nodes: int = 400, intra_degree: int = 6, attacks_per_node: int = 3,
                           repeat_prob: float = 0.3, seed: int = 0) -> list[FlowRecord]:
    """Each node opens ``intra_degree`` flows to random peers in its own
    community; each community-A node also attacks ``attacks_per_node``
    community-B nodes.  With probability ``repeat_prob`` a flow is logged a
    second time, so the graph has duplicate records to merge."""
    rng = np.random.default_rng(seed)
    a, b = community_ips(n_nodes)
    flows = []
    for group, key in ((a, "a"), (b, "b")):
        for i, src in enumerate(group):
            peers = rng.choice(len(group) - 1, size=min(intra_degree, len(group) - 1), replace=False)
            for p in peers:
                dst = group[p + (p >= i)]
                flows.append((src, dst, key, BENIGN))
    for src in a:
        for p in rng.choice(len(b), size=min(attacks_per_node, len(b)), replace=False):
            flows.append((src, b[p], "a", MALICIOUS))
    order = rng.permutation(len(flows))
    records = []
    ts = 1_525_000_000.0
    for k in order:
        src, dst, key, label = flows[k]
        times = 2 if rng.random() < repeat_prob else 1
        for _ in range(times):
            ts += float(np.round(rng.uniform(0.001, 0.5), 6))
            records.append(_flow(rng, round(ts, 6), src, dst, COMMUNITY_PROFILES[key], label))
    return records
