"""The sequence/attention classifiers and their mini-batch training loop."""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from . import autodiff as ad
from . import checkpoint
from .autodiff import Tensor
from .errors import ConfigError, FormatError, NaNLoss, PipelineMismatch, UnknownKind
from .layers import BiLSTM, Dense, Embedding, LayerSpec, LSTM, MultiHeadAttention, TCNBlock
from .optim import Adam

MODEL_KINDS = ("lstm", "bilstm", "tcn", "mha", "bilstm_mha", "bilstm_embed")

DROPOUT = 0.01
LSTM_UNITS = 32
BILSTM_UNITS = 35
TCN_UNITS = 32
TCN_DILATIONS = (8, 64)
MHA_HEADS = 4
MHA_KEY_DIM = 16
EMBED_DIM = 16

ARCHITECTURES = {
    "lstm": [
        LayerSpec("lstm", {"units": LSTM_UNITS}),
        LayerSpec("dropout", {"rate": DROPOUT}),
        LayerSpec("dense", {"units": 1}),
    ],
    "bilstm": [
        LayerSpec("bilstm", {"units": BILSTM_UNITS}),
        LayerSpec("dense", {"units": 1}),
    ],
    "tcn": [
        LayerSpec("tcn_block", {"units": TCN_UNITS, "dilations": list(TCN_DILATIONS), "kernel_size": 3}),
        LayerSpec("dropout", {"rate": DROPOUT}),
        LayerSpec("dense", {"units": 1}),
    ],
    "mha": [
        LayerSpec("mha", {"heads": MHA_HEADS, "key_dim": MHA_KEY_DIM}),
        LayerSpec("dropout", {"rate": DROPOUT}),
        LayerSpec("gap"),
        LayerSpec("dense", {"units": 1}),
    ],
    "bilstm_mha": [
        LayerSpec("bilstm", {"units": BILSTM_UNITS, "return_sequences": True}),
        LayerSpec("mha", {"heads": MHA_HEADS, "key_dim": MHA_KEY_DIM}),
        LayerSpec("dropout", {"rate": DROPOUT}),
        LayerSpec("gap"),
        LayerSpec("dense", {"units": 1}),
    ],
    "bilstm_embed": [
        LayerSpec("embedding", {"dim": EMBED_DIM}),
        LayerSpec("bilstm", {"units": BILSTM_UNITS}),
        LayerSpec("dropout", {"rate": DROPOUT}),
        LayerSpec("dense", {"units": 1}),
    ],
}


class Model:
    """Layer stack ending in a one-unit sigmoid head.

    ``input_shape`` is ``(T, C)`` for the float sequence kinds and ``(T,)``
    for ``bilstm_embed``, whose input is an integer token matrix.  The
    output head starts at zero, so an untrained model predicts exactly 0.5.
    """

    def __init__(self, kind: str, input_shape, seed: int = 0, vocab_size: Optional[int] = None):
        if kind not in ARCHITECTURES:
            raise UnknownKind(f"unknown model kind {kind!r}; expected one of {', '.join(MODEL_KINDS)}")
        self.kind = kind
        self.input_shape = tuple(int(d) for d in input_shape)
        self.seed = seed
        self.vocab_size = vocab_size
        self.layers = ARCHITECTURES[kind]
        self.pipeline: Optional[dict] = None
        self.modules = []
        self._build()

    def _build(self):
        if self.kind == "bilstm_embed":
            if self.vocab_size is None:
                raise ConfigError("bilstm_embed needs vocab_size")
            if len(self.input_shape) != 1:
                raise ConfigError("bilstm_embed input_shape is (timesteps,)")
            width = None
        else:
            if len(self.input_shape) != 2:
                raise ConfigError("input_shape must be (timesteps, channels)")
            width = self.input_shape[1]
        seed = self.seed
        for spec in self.layers:
            hp = spec.hyperparameters
            if spec.kind == "embedding":
                mod = Embedding(self.vocab_size, hp["dim"], "embedding", seed)
                width = hp["dim"]
            elif spec.kind == "lstm":
                mod = LSTM(width, hp["units"], "lstm", seed)
                width = hp["units"]
            elif spec.kind == "bilstm":
                mod = BiLSTM(width, hp["units"], "bilstm", seed, hp.get("return_sequences", False))
                width = 2 * hp["units"]
            elif spec.kind == "tcn_block":
                mod = TCNBlock(width, hp["units"], hp["dilations"], hp["kernel_size"], "tcn", seed)
                width = hp["units"]
            elif spec.kind == "mha":
                mod = MultiHeadAttention(width, hp["heads"], hp["key_dim"], "mha", seed)
            elif spec.kind == "dense":
                mod = Dense(width, hp["units"], "head", seed, init="zeros")
                width = hp["units"]
            else:
                mod = None
            self.modules.append(mod)
        self.head_width = self.modules[-1].W.shape[0]

    def params(self) -> dict[str, Tensor]:
        out = {}
        for mod in self.modules:
            if mod is not None:
                out.update(mod.params())
        return out

    def n_params(self) -> int:
        return sum(p.data.size for p in self.params().values())

    def check_input(self, x: np.ndarray):
        if tuple(x.shape[1:]) != self.input_shape:
            raise PipelineMismatch(
                f"{self.kind}: expected samples of shape {self.input_shape}, got {tuple(x.shape[1:])}")

    def forward(self, x, training: bool = False, rng: Optional[np.random.Generator] = None) -> Tensor:
        x = np.asarray(x)
        self.check_input(x)
        h = x if self.kind == "bilstm_embed" else Tensor(x)
        for spec, mod in zip(self.layers, self.modules):
            if spec.kind == "dropout":
                h = ad.dropout(h, spec.hyperparameters["rate"], training, rng)
            elif spec.kind == "gap":
                h = ad.reduce_mean(h, axis=1)
            else:
                h = mod(h)
        return ad.sigmoid(h)

    def __call__(self, x, training=False, rng=None):
        return self.forward(x, training, rng)


def build_model(kind: str, input_shape, seed: int = 0, vocab_size: Optional[int] = None) -> Model:
    return Model(kind, input_shape, seed, vocab_size)


@dataclass
class TrainConfig:
    epochs: int = 20
    batch_size: int = 125
    learning_rate: float = 1e-3
    weight_decay: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if not isinstance(self.epochs, int) or self.epochs < 0:
            raise ConfigError(f"epochs must be a non-negative integer, got {self.epochs!r}")
        if not isinstance(self.batch_size, int) or self.batch_size <= 0:
            raise ConfigError(f"batch_size must be a positive integer, got {self.batch_size!r}")
        if not self.learning_rate > 0 or not math.isfinite(self.learning_rate):
            raise ConfigError(f"learning_rate must be positive, got {self.learning_rate!r}")
        if self.weight_decay < 0:
            raise ConfigError(f"weight_decay must be non-negative, got {self.weight_decay!r}")


@dataclass
class EpochRecord:
    epoch: int
    train_loss: float
    val_loss: float
    val_accuracy: float
    seconds: float


@dataclass
class TrainResult:
    model: Model
    history: list[EpochRecord] = field(default_factory=list)
    seconds: float = 0.0


def batch_order(n: int, seed: int, epoch: int) -> np.ndarray:
    return np.random.default_rng([seed, epoch]).permutation(n)


def predict(model: Model, samples, batch_size: int = 1024) -> np.ndarray:
    """Probabilities in [0, 1]; dropout off, no graph recorded."""
    x = np.asarray(samples)
    model.check_input(x)
    out = np.empty(x.shape[0])
    with ad.no_grad():
        for start in range(0, x.shape[0], batch_size):
            stop = start + batch_size
            out[start:stop] = model.forward(x[start:stop]).data.reshape(-1)
    return out


def evaluate(model: Model, x, y) -> tuple[float, float]:
    """(mean BCE, accuracy at threshold 0.5)."""
    y = np.asarray(y, dtype=np.float64)
    if len(y) == 0:
        return float("nan"), float("nan")
    p = predict(model, x)
    loss = float(ad.binary_cross_entropy(Tensor(p), y).data)
    acc = float(np.mean((p >= 0.5) == (y == 1)))
    return loss, acc


def train(model: Model, train_set, val_set=None, cfg: Optional[TrainConfig] = None, log=None) -> TrainResult:
    """Mini-batch Adam on binary cross-entropy.

    Batches come from a permutation seeded by (cfg.seed, epoch); the last
    partial batch is kept.  Validation runs after every epoch and never
    touches parameters.  No early stopping.
    """
    cfg = cfg or TrainConfig()
    x, y = np.asarray(train_set[0]), np.asarray(train_set[1], dtype=np.float64)
    model.check_input(x)
    params = model.params()
    opt = Adam(params, lr=cfg.learning_rate, weight_decay=cfg.weight_decay)
    result = TrainResult(model)
    t0 = time.perf_counter()
    n = x.shape[0]
    for epoch in range(1, cfg.epochs + 1):
        e0 = time.perf_counter()
        order = batch_order(n, cfg.seed, epoch)
        drop_rng = np.random.default_rng([cfg.seed, epoch, 1])
        total = 0.0
        for b, start in enumerate(range(0, n, cfg.batch_size)):
            idx = order[start:start + cfg.batch_size]
            pred = model.forward(x[idx], training=True, rng=drop_rng)
            loss = ad.binary_cross_entropy(pred, y[idx].reshape(-1, 1))
            value = float(loss.data)
            if not math.isfinite(value):
                raise NaNLoss(epoch, b)
            ad.backward(loss)
            opt.step()
            total += value * len(idx)
        if val_set is not None and len(val_set[1]):
            val_loss, val_acc = evaluate(model, val_set[0], val_set[1])
        else:
            val_loss = val_acc = float("nan")
        rec = EpochRecord(epoch, total / n, val_loss, val_acc, time.perf_counter() - e0)
        result.history.append(rec)
        if log:
            log(rec)
    result.seconds = time.perf_counter() - t0
    return result


def history_csv(history: list[EpochRecord]) -> str:
    lines = ["epoch,train_loss,val_loss,val_accuracy,seconds"]
    for r in history:
        lines.append(f"{r.epoch},{r.train_loss!r},{r.val_loss!r},{r.val_accuracy!r},{r.seconds:.6f}")
    return "\n".join(lines) + "\n"


def save_checkpoint(model: Model, path) -> None:
    meta = {"kind": model.kind, "input_shape": list(model.input_shape), "seed": model.seed}
    if model.vocab_size is not None:
        meta["vocab_size"] = model.vocab_size
    checkpoint.save(path, {k: p.data for k, p in model.params().items()}, meta)


def load_checkpoint(path) -> Model:
    values, meta = checkpoint.load(path)
    try:
        kind = meta["kind"]
        shape = [int(v) for v in meta["input_shape"].split()]
        seed = int(meta.get("seed", "0"))
        vocab = int(meta["vocab_size"]) if "vocab_size" in meta else None
    except (KeyError, ValueError) as exc:
        raise FormatError(f"checkpoint metadata incomplete: {exc}") from None
    model = Model(kind, shape, seed, vocab)
    params = model.params()
    if set(values) != set(params):
        missing = sorted(set(params) - set(values))
        extra = sorted(set(values) - set(params))
        raise FormatError(f"checkpoint parameters do not match {kind}: missing {missing}, unexpected {extra}")
    for name, p in params.items():
        if values[name].shape != p.shape:
            raise FormatError(f"{name}: shape {values[name].shape} != expected {p.shape}")
        p.data[...] = values[name]
    return model
