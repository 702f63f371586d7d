"""GraphSAGE edge classifier with two-hop neighbor sampling.

Two mean-aggregator convolutions (6 -> 256 -> 256, relu between) produce
node embeddings; an edge is scored by a sigmoid over
``[h_src ; h_dst ; edge_features]``.  Training draws batches of training
edges and runs the convolutions on a sampled computation subgraph; test-time
inference uses full neighborhoods.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from . import autodiff as ad
from . import checkpoint
from .autodiff import Tensor
from .errors import FormatError, NaNLoss
from .graph import GraphTensors
from .layers import Dense, SAGEConv, mean_matrix
from .optim import Adam

HIDDEN = 256
FANOUT = (25, 10)


@dataclass
class SampledSubgraph:
    """Computation subgraph for a batch of edges.

    ``nodes`` are global ids: seeds (batch endpoints) first, then nodes first
    reached at hop 1, then at hop 2.  The first convolution runs on
    ``nodes[:n_hop1]`` with neighbor lists ``layer1``; the second on the seeds
    with ``layer2``.  All neighbor lists hold local indices into ``nodes``.
    """

    nodes: np.ndarray
    n_seeds: int
    n_hop1: int
    layer1: list
    layer2: list
    edge_src: np.ndarray
    edge_dst: np.ndarray


def _sample(nbrs: np.ndarray, k: Optional[int], rng: np.random.Generator) -> np.ndarray:
    if k is None or len(nbrs) <= k:
        return nbrs
    return np.sort(rng.choice(nbrs, size=k, replace=False))


def neighbor_sample(tensors: GraphTensors, batch_edges, fanout: Sequence[Optional[int]] = FANOUT,
                    rng: Optional[np.random.Generator] = None) -> SampledSubgraph:
    """Sample at most ``fanout[0]`` first-hop and ``fanout[1]`` second-hop
    neighbors per node, without replacement; all of them when fewer exist.
    A fanout of ``None`` takes every neighbor."""
    if rng is None:
        rng = np.random.default_rng(0)
    batch_edges = np.asarray(batch_edges, dtype=np.int64)
    src = tensors.edge_index[0, batch_edges]
    dst = tensors.edge_index[1, batch_edges]
    seeds = np.unique(np.concatenate([src, dst]))
    local = {int(v): i for i, v in enumerate(seeds)}
    order = list(seeds.tolist())

    def localize(ids):
        out = []
        for v in ids.tolist():
            idx = local.get(v)
            if idx is None:
                idx = local[v] = len(order)
                order.append(v)
            out.append(idx)
        return out

    seed_samples = [_sample(tensors.neighbors[v], fanout[0], rng) for v in seeds]
    layer2 = [localize(s) for s in seed_samples]
    n_hop1 = len(order)
    # seeds reuse their first-hop sample; the other hop-1 nodes draw their own
    layer1 = list(layer2)
    for v in order[len(seeds):n_hop1]:
        layer1.append(localize(_sample(tensors.neighbors[v], fanout[1], rng)))
    return SampledSubgraph(
        nodes=np.asarray(order, dtype=np.int64),
        n_seeds=len(seeds),
        n_hop1=n_hop1,
        layer1=layer1,
        layer2=layer2,
        edge_src=np.array([local[int(v)] for v in src], dtype=np.int64),
        edge_dst=np.array([local[int(v)] for v in dst], dtype=np.int64),
    )


class GraphSAGEModel:
    def __init__(self, in_width: int = 6, edge_width: int = 10, hidden: int = HIDDEN, seed: int = 0):
        self.in_width = in_width
        self.edge_width = edge_width
        self.hidden = hidden
        self.seed = seed
        self.conv1 = SAGEConv(in_width, hidden, "sage1", seed)
        self.conv2 = SAGEConv(hidden, hidden, "sage2", seed)
        self.head = Dense(2 * hidden + edge_width, 1, "head", seed, init="zeros")

    def params(self) -> dict[str, Tensor]:
        out = {}
        for mod in (self.conv1, self.conv2, self.head):
            out.update(mod.params())
        return out

    def score(self, h2: Tensor, src, dst, edge_feats) -> Tensor:
        z = ad.concat([h2[np.asarray(src)], h2[np.asarray(dst)], Tensor(edge_feats)], axis=1)
        return ad.sigmoid(self.head(z))

    def forward_sampled(self, tensors: GraphTensors, sub: SampledSubgraph, batch_edges) -> Tensor:
        x = Tensor(tensors.node_features[sub.nodes])
        n = len(sub.nodes)
        s1 = mean_matrix(sub.layer1, n)
        h1 = ad.relu(self.conv1(x, s1, targets=np.arange(sub.n_hop1)))
        s2 = mean_matrix(sub.layer2, sub.n_hop1)
        h2 = self.conv2(h1, s2, targets=np.arange(sub.n_seeds))
        return self.score(h2, sub.edge_src, sub.edge_dst, tensors.edge_features[np.asarray(batch_edges)])

    def embed_full(self, tensors: GraphTensors) -> Tensor:
        x = Tensor(tensors.node_features)
        s = mean_matrix(tensors.neighbors, tensors.n_nodes)
        h1 = ad.relu(self.conv1(x, s))
        return self.conv2(h1, s)

    def forward_full(self, tensors: GraphTensors, edges=None) -> Tensor:
        edges = np.arange(tensors.n_edges) if edges is None else np.asarray(edges, dtype=np.int64)
        h2 = self.embed_full(tensors)
        return self.score(h2, tensors.edge_index[0, edges], tensors.edge_index[1, edges],
                          tensors.edge_features[edges])


def graphsage_model(tensors: GraphTensors, seed: int = 0) -> GraphSAGEModel:
    return GraphSAGEModel(tensors.node_features.shape[1], tensors.edge_features.shape[1], HIDDEN, seed)


def predict_edges(model: GraphSAGEModel, tensors: GraphTensors, edges=None) -> np.ndarray:
    with ad.no_grad():
        return model.forward_full(tensors, edges).data.reshape(-1)


@dataclass
class SageEpoch:
    epoch: int
    loss: float
    train_accuracy: float
    seconds: float


@dataclass
class SageResult:
    model: GraphSAGEModel
    history: list[SageEpoch] = field(default_factory=list)
    seconds: float = 0.0


def train_graphsage(tensors: GraphTensors, epochs: int = 20, batch_size: int = 125, lr: float = 1e-3,
                    weight_decay: float = 1e-6, fanout: Sequence[Optional[int]] = FANOUT, seed: int = 0,
                    model: Optional[GraphSAGEModel] = None, log=None) -> SageResult:
    """Adam + BCE over neighbor-sampled batches of training edges.

    Loss and accuracy per epoch are averaged over the training edges as they
    are seen during the epoch.
    """
    model = model or graphsage_model(tensors, seed)
    opt = Adam(model.params(), lr=lr, weight_decay=weight_decay)
    train_edges = np.flatnonzero(tensors.train_mask)
    labels = tensors.edge_labels.astype(np.float64)
    result = SageResult(model)
    t0 = time.perf_counter()
    for epoch in range(1, epochs + 1):
        e0 = time.perf_counter()
        order = train_edges[np.random.default_rng([seed, epoch]).permutation(len(train_edges))]
        sample_rng = np.random.default_rng([seed, epoch, 2])
        total = 0.0
        correct = 0
        for b, start in enumerate(range(0, len(order), batch_size)):
            batch = order[start:start + batch_size]
            sub = neighbor_sample(tensors, batch, fanout, sample_rng)
            pred = model.forward_sampled(tensors, sub, batch)
            y = labels[batch].reshape(-1, 1)
            loss = ad.binary_cross_entropy(pred, y)
            value = float(loss.data)
            if not math.isfinite(value):
                raise NaNLoss(epoch, b)
            ad.backward(loss)
            opt.step()
            total += value * len(batch)
            correct += int(np.sum((pred.data >= 0.5) == (y == 1)))
        n = max(len(order), 1)
        rec = SageEpoch(epoch, total / n, correct / n, time.perf_counter() - e0)
        result.history.append(rec)
        if log:
            log(rec)
    result.seconds = time.perf_counter() - t0
    return result


def save_sage_checkpoint(model: GraphSAGEModel, path) -> None:
    meta = {"kind": "graphsage", "in_width": model.in_width, "edge_width": model.edge_width,
            "hidden": model.hidden, "seed": model.seed}
    checkpoint.save(path, {k: p.data for k, p in model.params().items()}, meta)


def load_sage_checkpoint(path) -> GraphSAGEModel:
    values, meta = checkpoint.load(path)
    try:
        model = GraphSAGEModel(int(meta["in_width"]), int(meta["edge_width"]), int(meta["hidden"]),
                               int(meta.get("seed", "0")))
    except (KeyError, ValueError) as exc:
        raise FormatError(f"graphsage checkpoint metadata incomplete: {exc}") from None
    params = model.params()
    if set(values) != set(params):
        raise FormatError("checkpoint parameters do not match the GraphSAGE model")
    for name, p in params.items():
        if values[name].shape != p.shape:
            raise FormatError(f"{name}: shape {values[name].shape} != expected {p.shape}")
        p.data[...] = values[name]
    return model
