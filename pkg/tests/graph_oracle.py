"""Independent single-pass node aggregation straight from raw records.

Shares no code with flowsage.graph beyond the record type.  Counters
(packets, bytes, failures, record counts) accumulate over every record;
distinct peers and protocols are plain sets.
"""

import math
import random

import numpy as np

from flowsage.ingest import FlowRecord

FAILED = {"S0", "REJ", "RSTO", "RSTR", "RSTOS0", "RSTRH", "SH", "SHR"}


def oracle_node_features(records):
    order = []
    stats = {}
    for r in records:
        for ip in (r.orig_h, r.resp_h):
            if ip not in stats:
                order.append(ip)
                stats[ip] = {"bytes": 0, "pkts": 0, "failed": 0, "n": 0, "peers": set(), "protos": set()}
        pkts = r.orig_pkts + r.resp_pkts
        nbytes = r.orig_ip_bytes + r.resp_ip_bytes
        for ip, peer in {(r.orig_h, r.resp_h), (r.resp_h, r.orig_h)}:
            s = stats[ip]
            s["bytes"] += nbytes
            s["pkts"] += pkts
            s["failed"] += r.conn_state in FAILED
            s["n"] += 1
            s["peers"].add(peer)
            s["protos"].add(r.proto)
    rows = []
    for ip in order:
        s = stats[ip]
        avg = s["bytes"] / s["pkts"] if s["pkts"] else 0.0
        rows.append([math.log1p(s["bytes"]), math.log1p(s["pkts"]), math.log1p(len(s["peers"])),
                     s["failed"] / s["n"], math.log1p(avg), math.log1p(len(s["protos"]))])
    return order, np.array(rows, dtype=np.float64)


def oracle_records(n: int = 50, n_ips: int = 8, seed: int = 0):
    """Random flows over a handful of hosts, with repeats, zero-packet rows
    and a spread of connection states."""
    rnd = random.Random(seed)
    ips = [f"10.0.{i // 4}.{i + 1}" for i in range(n_ips)]
    states = ["SF", "S0", "REJ", "RSTO", "OTH", "SH"]
    protos = ["tcp", "udp", "icmp"]
    out = []
    for k in range(n):
        src, dst = rnd.sample(ips, 2)
        zero = rnd.random() < 0.1
        op, rp = (0, 0) if zero else (rnd.randint(1, 9), rnd.randint(0, 9))
        out.append(FlowRecord(
            ts=1.5e9 + k, orig_h=src, orig_p=rnd.randint(1024, 65535), resp_h=dst,
            resp_p=rnd.choice([22, 23, 80, 443, 8080, 50000]), proto=rnd.choice(protos),
            duration=rnd.choice([None, round(rnd.uniform(0, 30), 6)]), orig_bytes=None, resp_bytes=None,
            conn_state=rnd.choice(states), missed_bytes=0, history=rnd.choice([None, "S", "ShAdDaf"]),
            orig_pkts=op, orig_ip_bytes=0 if zero else op * rnd.randint(40, 1500),
            resp_pkts=rp, resp_ip_bytes=rp * rnd.randint(40, 1500), label=rnd.randint(0, 1),
        ))
    return out
