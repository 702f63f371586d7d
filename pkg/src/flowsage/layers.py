"""Network building blocks: dense, LSTM / BiLSTM, dilated causal convolution
(TCN block), multi-head self-attention, pooling, embedding, GraphSAGE conv.

Each block exists as a pure function of explicit parameters plus a thin
class that owns named parameters (``<layer>.<param>``) and calls it.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
from scipy import sparse

from . import autodiff as ad
from .autodiff import Tensor
from .errors import ShapeError
from .optim import seeded_init


# ---------------------------------------------------------------- specs

LAYER_KINDS = ("dense", "lstm", "bilstm", "tcn_block", "mha", "gap", "dropout", "embedding", "sage_conv")


@dataclass(frozen=True)
class LayerSpec:
    kind: str
    hyperparameters: dict = field(default_factory=dict)

    def __post_init__(self):
        self.validate()

    def validate(self):
        if self.kind not in LAYER_KINDS:
            raise ValueError(f"unknown layer kind {self.kind!r}")
        hp = self.hyperparameters
        for key in ("units", "heads", "key_dim", "in_width", "out_width", "vocab_size", "dim", "kernel_size"):
            if key in hp and not (isinstance(hp[key], int) and hp[key] > 0):
                raise ValueError(f"{self.kind}: {key} must be a positive integer, got {hp[key]!r}")
        if "rate" in hp and not 0.0 <= hp["rate"] < 1.0:
            raise ValueError(f"{self.kind}: rate must be in [0, 1), got {hp['rate']!r}")
        if "dilations" in hp:
            d = list(hp["dilations"])
            if not d or any(x <= 0 for x in d) or any(b <= a for a, b in zip(d, d[1:])):
                raise ValueError(f"{self.kind}: dilations must be strictly increasing positive integers, got {d}")


class Layer:
    def params(self) -> dict[str, Tensor]:
        return {}


# ---------------------------------------------------------------- dense

def dense_forward(x: Tensor, W: Tensor, b: Tensor) -> Tensor:
    if x.shape[-1] != W.shape[0]:
        raise ShapeError(f"dense: input {x.shape} does not match weight {W.shape}")
    return ad.add(ad.matmul(x, W), b)


class Dense(Layer):
    def __init__(self, in_width: int, units: int, name: str = "dense", seed: int = 0, init: str = "glorot_uniform"):
        self.name = name
        self.W = seeded_init((in_width, units), init, seed, f"{name}.W")
        self.b = seeded_init((units,), "zeros", seed, f"{name}.b")

    def params(self):
        return {self.W.name: self.W, self.b.name: self.b}

    def __call__(self, x):
        return dense_forward(x, self.W, self.b)


# ---------------------------------------------------------------- recurrent

def lstm_forward(seq, W: Tensor, U: Tensor, b: Tensor, return_sequences: bool = False, reverse: bool = False):
    """Standard LSTM with gate order (input, forget, candidate, output).

    seq: (B, T, C); W: (C, 4H); U: (H, 4H); b: (4H,).  h_0 = c_0 = 0.
    Returns the last hidden state (B, H), or all states (B, T, H) in input
    time order when ``return_sequences``.  ``reverse`` runs t = T..1.
    """
    seq = ad.as_tensor(seq)
    if seq.ndim != 3 or seq.shape[2] != W.shape[0]:
        raise ShapeError(f"lstm: input {seq.shape} does not match kernel {W.shape}")
    B, T, _ = seq.shape
    if T < 1:
        raise ShapeError("lstm: sequence must have at least one timestep")
    H = U.shape[0]
    h = Tensor(np.zeros((B, H)))
    c = Tensor(np.zeros((B, H)))
    outputs = [None] * T
    steps = range(T - 1, -1, -1) if reverse else range(T)
    for t in steps:
        z = ad.add(ad.add(ad.matmul(seq[:, t, :], W), ad.matmul(h, U)), b)
        i = ad.sigmoid(z[:, :H])
        f = ad.sigmoid(z[:, H:2 * H])
        g = ad.tanh(z[:, 2 * H:3 * H])
        o = ad.sigmoid(z[:, 3 * H:])
        c = ad.add(ad.mul(f, c), ad.mul(i, g))
        h = ad.mul(o, ad.tanh(c))
        outputs[t] = h
    if return_sequences:
        return ad.stack(outputs, axis=1)
    return h


def lstm_params(in_width: int, units: int, name: str, seed: int) -> dict[str, Tensor]:
    W = seeded_init((in_width, 4 * units), "glorot_uniform", seed, f"{name}.W")
    U = seeded_init((units, 4 * units), "recurrent_uniform", seed, f"{name}.U")
    b = seeded_init((4 * units,), "zeros", seed, f"{name}.b")
    b.data[units:2 * units] = 1.0  # forget gate
    return {W.name: W, U.name: U, b.name: b}


class LSTM(Layer):
    def __init__(self, in_width: int, units: int = 32, name: str = "lstm", seed: int = 0, return_sequences=False):
        self.name = name
        self.units = units
        self.return_sequences = return_sequences
        self._p = lstm_params(in_width, units, name, seed)

    def params(self):
        return dict(self._p)

    def __call__(self, seq):
        n = self.name
        return lstm_forward(seq, self._p[f"{n}.W"], self._p[f"{n}.U"], self._p[f"{n}.b"], self.return_sequences)


def bilstm_forward(seq, fwd: Sequence[Tensor], bwd: Sequence[Tensor], return_sequences: bool = False):
    """Forward pass over t = 1..T and backward pass over t = T..1, concatenated
    forward-first on the feature axis."""
    a = lstm_forward(seq, *fwd, return_sequences=return_sequences)
    r = lstm_forward(seq, *bwd, return_sequences=return_sequences, reverse=True)
    return ad.concat([a, r], axis=-1)


class BiLSTM(Layer):
    def __init__(self, in_width: int, units: int = 35, name: str = "bilstm", seed: int = 0, return_sequences=False):
        self.name = name
        self.units = units
        self.return_sequences = return_sequences
        self._p = {}
        self._p.update(lstm_params(in_width, units, f"{name}.fwd", seed))
        self._p.update(lstm_params(in_width, units, f"{name}.bwd", seed))

    def params(self):
        return dict(self._p)

    def _triple(self, direction):
        pre = f"{self.name}.{direction}"
        return self._p[f"{pre}.W"], self._p[f"{pre}.U"], self._p[f"{pre}.b"]

    def __call__(self, seq):
        return bilstm_forward(seq, self._triple("fwd"), self._triple("bwd"), self.return_sequences)


# ---------------------------------------------------------------- convolution

def causal_conv1d(seq, kernel: Tensor, dilation: int = 1, bias: Optional[Tensor] = None) -> Tensor:
    out = ad.conv1d_causal(ad.as_tensor(seq), kernel, dilation)
    return out if bias is None else ad.add(out, bias)


def tcn_block(seq, convs: Sequence[tuple], dilations: Sequence[int], projection: Optional[tuple] = None) -> Tensor:
    """Stack of dilated causal conv sublayers with residual connections.

    ``convs[i] = (kernel, bias)`` for dilation ``dilations[i]``.  Each
    sublayer computes ``relu(conv(h) + bias) + residual(h)`` where the
    residual is the identity, or a 1x1 projection ``(W, b)`` when the first
    sublayer changes the width.  Returns the last timestep, (B, units).
    """
    h = ad.as_tensor(seq)
    for i, ((kernel, bias), d) in enumerate(zip(convs, dilations)):
        out = ad.relu(causal_conv1d(h, kernel, d, bias))
        if h.shape[-1] != out.shape[-1]:
            if projection is None or i != 0:
                raise ShapeError(f"tcn: residual width {h.shape[-1]} != {out.shape[-1]} without projection")
            res = dense_forward(h, *projection)
        else:
            res = h
        h = ad.add(out, res)
    return h[:, -1, :]


class TCNBlock(Layer):
    def __init__(self, in_width: int, units: int = 32, dilations=(8, 64), kernel_size: int = 3,
                 name: str = "tcn", seed: int = 0):
        LayerSpec("tcn_block", {"units": units, "dilations": list(dilations), "kernel_size": kernel_size})
        self.name = name
        self.dilations = tuple(dilations)
        self.convs = []
        width = in_width
        self._p = {}
        for i, _ in enumerate(self.dilations):
            k = seeded_init((kernel_size, width, units), "glorot_uniform", seed, f"{name}.conv{i}.kernel")
            b = seeded_init((units,), "zeros", seed, f"{name}.conv{i}.bias")
            self.convs.append((k, b))
            self._p[k.name] = k
            self._p[b.name] = b
            width = units
        self.projection = None
        if in_width != units:
            W = seeded_init((in_width, units), "glorot_uniform", seed, f"{name}.proj.W")
            b = seeded_init((units,), "zeros", seed, f"{name}.proj.b")
            self.projection = (W, b)
            self._p[W.name] = W
            self._p[b.name] = b

    def params(self):
        return dict(self._p)

    def __call__(self, seq):
        return tcn_block(seq, self.convs, self.dilations, self.projection)


# ---------------------------------------------------------------- attention

def multi_head_attention(seq, Wq, bq, Wk, bk, Wv, bv, Wo, bo, heads: int = 4, key_dim: int = 16,
                         return_attention: bool = False):
    """Self-attention with query = key = value = seq.

    Projections map C -> heads * key_dim; each head uses
    softmax(Q K^T / sqrt(key_dim)) V; heads are concatenated and projected
    back to C.  seq: (B, T, C) -> (B, T, C).
    """
    x = ad.as_tensor(seq)
    if x.ndim != 3 or x.shape[-1] != Wq.shape[0]:
        raise ShapeError(f"mha: input {x.shape} does not match projection {Wq.shape}")
    B, T, _ = x.shape

    def split_heads(t):
        return ad.transpose(ad.reshape(t, (B, T, heads, key_dim)), (0, 2, 1, 3))

    q = split_heads(dense_forward(x, Wq, bq))
    k = split_heads(dense_forward(x, Wk, bk))
    v = split_heads(dense_forward(x, Wv, bv))
    scores = ad.mul(ad.matmul(q, ad.transpose(k, (0, 1, 3, 2))), 1.0 / math.sqrt(key_dim))
    attn = ad.softmax(scores)
    ctx = ad.reshape(ad.transpose(ad.matmul(attn, v), (0, 2, 1, 3)), (B, T, heads * key_dim))
    out = dense_forward(ctx, Wo, bo)
    return (out, attn) if return_attention else out


def global_average_pool(seq) -> Tensor:
    """(B, T, C) -> (B, C), mean over time."""
    return ad.reduce_mean(ad.as_tensor(seq), axis=1)


class MultiHeadAttention(Layer):
    NAMES = ("Wq", "bq", "Wk", "bk", "Wv", "bv", "Wo", "bo")

    def __init__(self, width: int, heads: int = 4, key_dim: int = 16, name: str = "mha", seed: int = 0):
        LayerSpec("mha", {"heads": heads, "key_dim": key_dim})
        self.name = name
        self.heads = heads
        self.key_dim = key_dim
        inner = heads * key_dim
        shapes = {"Wq": (width, inner), "Wk": (width, inner), "Wv": (width, inner), "Wo": (inner, width)}
        self._p = {}
        for short in self.NAMES:
            full = f"{name}.{short}"
            if short.startswith("W"):
                self._p[full] = seeded_init(shapes[short], "glorot_uniform", seed, full)
            else:
                width_out = width if short == "bo" else inner
                self._p[full] = seeded_init((width_out,), "zeros", seed, full)

    def params(self):
        return dict(self._p)

    def __call__(self, seq, return_attention=False):
        args = [self._p[f"{self.name}.{s}"] for s in self.NAMES]
        return multi_head_attention(seq, *args, heads=self.heads, key_dim=self.key_dim,
                                    return_attention=return_attention)


# ---------------------------------------------------------------- embedding

def embedding_forward(indices, table: Tensor) -> Tensor:
    return ad.embedding_lookup(table, indices)


class Embedding(Layer):
    def __init__(self, vocab_size: int, dim: int = 16, name: str = "embedding", seed: int = 0):
        LayerSpec("embedding", {"vocab_size": vocab_size, "dim": dim})
        self.name = name
        self.table = seeded_init((vocab_size, dim), "glorot_uniform", seed, f"{name}.table")

    def params(self):
        return {self.table.name: self.table}

    def __call__(self, indices):
        return embedding_forward(indices, self.table)


# ---------------------------------------------------------------- graph

def mean_matrix(neighbor_lists: Sequence[Sequence[int]], n_cols: int) -> sparse.csr_matrix:
    """Row-normalized sparse matrix averaging each row's neighbor list.

    Empty lists give an all-zero row (isolated nodes aggregate to zero).
    """
    indptr = [0]
    indices = []
    data = []
    for nbrs in neighbor_lists:
        nbrs = np.asarray(nbrs, dtype=np.int64)
        if nbrs.size and (nbrs.min() < 0 or nbrs.max() >= n_cols):
            raise IndexError(f"neighbor index out of range [0, {n_cols})")
        indices.extend(nbrs.tolist())
        if nbrs.size:
            data.extend([1.0 / nbrs.size] * nbrs.size)
        indptr.append(len(indices))
    return sparse.csr_matrix((np.asarray(data, dtype=np.float64), np.asarray(indices, dtype=np.int64),
                              np.asarray(indptr, dtype=np.int64)), shape=(len(neighbor_lists), n_cols))


def sage_conv(node_feats, adjacency, W_self: Tensor, W_neigh: Tensor, bias: Optional[Tensor] = None,
              targets=None) -> Tensor:
    """Mean-aggregator GraphSAGE convolution.

    ``h'_v = h_v W_self + mean_{u in N(v)} h_u W_neigh (+ bias)``.
    ``adjacency`` is either a list of neighbor index lists (one per target)
    or a prebuilt mean matrix.  ``targets`` selects which rows of
    ``node_feats`` are the self terms; default is all nodes.
    """
    x = ad.as_tensor(node_feats)
    if x.shape[-1] != W_self.shape[0] or x.shape[-1] != W_neigh.shape[0]:
        raise ShapeError(f"sage_conv: features {x.shape} do not match weights {W_self.shape}")
    n = x.shape[0]
    if sparse.issparse(adjacency):
        S = adjacency
    else:
        S = mean_matrix(adjacency, n)
    own = x if targets is None else ad.getitem(x, np.asarray(targets, dtype=np.int64))
    if own.shape[0] != S.shape[0]:
        raise ShapeError(f"sage_conv: {own.shape[0]} targets but {S.shape[0]} neighbor rows")
    out = ad.add(ad.matmul(own, W_self), ad.matmul(ad.aggregate(S, x), W_neigh))
    return out if bias is None else ad.add(out, bias)


class SAGEConv(Layer):
    def __init__(self, in_width: int, out_width: int, name: str = "sage", seed: int = 0):
        self.name = name
        self.W_self = seeded_init((in_width, out_width), "glorot_uniform", seed, f"{name}.W_self")
        self.W_neigh = seeded_init((in_width, out_width), "glorot_uniform", seed, f"{name}.W_neigh")
        self.bias = seeded_init((out_width,), "zeros", seed, f"{name}.bias")

    def params(self):
        return {p.name: p for p in (self.W_self, self.W_neigh, self.bias)}

    def __call__(self, node_feats, adjacency, targets=None):
        return sage_conv(node_feats, adjacency, self.W_self, self.W_neigh, self.bias, targets)
