"""Binary classification metrics: confusion matrix, per-class and
support-weighted precision/recall/F1, rank-based ROC-AUC, timing."""

from __future__ import annotations

import contextlib
import csv
import io
import json
import time
from dataclasses import asdict, dataclass, field
from typing import Optional

import numpy as np
from scipy.stats import rankdata

from .errors import EmptyMatrix, LengthMismatch, SingleClass


@dataclass(frozen=True)
class ConfusionMatrix:
    tp: int = 0
    fp: int = 0
    tn: int = 0
    fn: int = 0

    def __post_init__(self):
        for name in ("tp", "fp", "tn", "fn"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be non-negative")

    @property
    def total(self) -> int:
        return self.tp + self.fp + self.tn + self.fn


def confusion_matrix(scores, labels, threshold: float = 0.5) -> ConfusionMatrix:
    """Positive class is 1 (malicious); ``score >= threshold`` predicts 1."""
    s = np.asarray(scores, dtype=np.float64).reshape(-1)
    y = np.asarray(labels).reshape(-1)
    if s.shape != y.shape:
        raise LengthMismatch(f"{s.size} scores but {y.size} labels")
    pred = s >= threshold
    pos = y == 1
    return ConfusionMatrix(
        tp=int(np.sum(pred & pos)),
        fp=int(np.sum(pred & ~pos)),
        tn=int(np.sum(~pred & ~pos)),
        fn=int(np.sum(~pred & pos)),
    )


def _ratio(num: int, den: int, flags: list, what: str) -> float:
    if den == 0:
        flags.append(what)
        return 0.0
    return num / den


def _f1(p: float, r: float) -> float:
    return 2 * p * r / (p + r) if p + r > 0 else 0.0


@dataclass
class ClassMetrics:
    precision: float
    recall: float
    f1: float
    support: int


@dataclass
class ClassificationReport:
    benign: ClassMetrics
    malicious: ClassMetrics
    precision_weighted: float
    recall_weighted: float
    f1_weighted: float
    accuracy: float
    undefined: list = field(default_factory=list)


def classification_report(cm: ConfusionMatrix) -> ClassificationReport:
    """Per-class metrics and their support-weighted averages.

    0/0 precision or recall is reported as 0 and named in ``undefined``.
    """
    n = cm.total
    if n == 0:
        raise EmptyMatrix("confusion matrix has no samples")
    flags: list = []
    p1 = _ratio(cm.tp, cm.tp + cm.fp, flags, "malicious.precision")
    r1 = _ratio(cm.tp, cm.tp + cm.fn, flags, "malicious.recall")
    p0 = _ratio(cm.tn, cm.tn + cm.fn, flags, "benign.precision")
    r0 = _ratio(cm.tn, cm.tn + cm.fp, flags, "benign.recall")
    s1 = cm.tp + cm.fn
    s0 = cm.tn + cm.fp
    mal = ClassMetrics(p1, r1, _f1(p1, r1), s1)
    ben = ClassMetrics(p0, r0, _f1(p0, r0), s0)
    return ClassificationReport(
        benign=ben,
        malicious=mal,
        precision_weighted=(s0 * ben.precision + s1 * mal.precision) / n,
        recall_weighted=(s0 * ben.recall + s1 * mal.recall) / n,
        f1_weighted=(s0 * ben.f1 + s1 * mal.f1) / n,
        accuracy=(cm.tp + cm.tn) / n,
        undefined=flags,
    )


def roc_auc(scores, labels) -> float:
    """Mann-Whitney U / (n_pos * n_neg) with average ranks for ties."""
    s = np.asarray(scores, dtype=np.float64).reshape(-1)
    y = np.asarray(labels).reshape(-1)
    if s.shape != y.shape:
        raise LengthMismatch(f"{s.size} scores but {y.size} labels")
    pos = y == 1
    n_pos = int(pos.sum())
    n_neg = int(y.size - n_pos)
    if n_pos == 0 or n_neg == 0:
        raise SingleClass("ROC-AUC needs both classes present")
    ranks = rankdata(s, method="average")
    u = ranks[pos].sum() - n_pos * (n_pos + 1) / 2.0
    return float(u / (n_pos * n_neg))


@contextlib.contextmanager
def training_timer():
    """Yields a dict whose ``seconds`` is filled with monotonic elapsed time."""
    box = {"seconds": None}
    start = time.perf_counter()
    try:
        yield box
    finally:
        box["seconds"] = time.perf_counter() - start


def timed(fn, *args, **kwargs):
    with training_timer() as box:
        out = fn(*args, **kwargs)
    return out, box["seconds"]


JSON_KEYS = ("model", "tp", "fp", "tn", "fn", "accuracy", "precision_weighted", "recall_weighted",
             "f1_weighted", "auc", "train_seconds")


@dataclass
class EvalReport:
    model: str
    cm: ConfusionMatrix
    report: ClassificationReport
    auc: Optional[float]
    train_seconds: Optional[float] = None

    @property
    def accuracy(self) -> float:
        return self.report.accuracy

    def to_dict(self, include_timing: bool = True) -> dict:
        d = {
            "model": self.model,
            "tp": self.cm.tp,
            "fp": self.cm.fp,
            "tn": self.cm.tn,
            "fn": self.cm.fn,
            "accuracy": self.report.accuracy,
            "precision_weighted": self.report.precision_weighted,
            "recall_weighted": self.report.recall_weighted,
            "f1_weighted": self.report.f1_weighted,
            "auc": self.auc,
        }
        if include_timing:
            d["train_seconds"] = self.train_seconds
        return d

    def to_json(self, include_timing: bool = True) -> str:
        return json.dumps(self.to_dict(include_timing), indent=2) + "\n"

    @classmethod
    def from_dict(cls, d: dict) -> "EvalReport":
        cm = ConfusionMatrix(int(d["tp"]), int(d["fp"]), int(d["tn"]), int(d["fn"]))
        return cls(d["model"], cm, classification_report(cm), d.get("auc"), d.get("train_seconds"))

    def per_class(self) -> dict:
        return {"benign": asdict(self.report.benign), "malicious": asdict(self.report.malicious)}


def evaluate_scores(model: str, scores, labels, train_seconds: Optional[float] = None) -> EvalReport:
    cm = confusion_matrix(scores, labels)
    try:
        auc = roc_auc(scores, labels)
    except SingleClass:
        auc = None
    return EvalReport(model, cm, classification_report(cm), auc, train_seconds)


TABLE_HEADER = ("Model", "Precision (%)", "Recall (%)", "F1-score (%)", "Accuracy (%)", "ROC (%)",
                "train_seconds")


def _pct(v: Optional[float]) -> str:
    return "" if v is None else f"{100 * v:.2f}"


def table_row(r: EvalReport) -> list[str]:
    return [
        r.model,
        _pct(r.report.precision_weighted),
        _pct(r.report.recall_weighted),
        _pct(r.report.f1_weighted),
        _pct(r.report.accuracy),
        _pct(r.auc),
        "" if r.train_seconds is None else f"{r.train_seconds:.3f}",
    ]


def table_csv(reports: list[EvalReport]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(TABLE_HEADER)
    for r in reports:
        w.writerow(table_row(r))
    return buf.getvalue()


def format_row(r: EvalReport) -> str:
    cells = table_row(r)
    return " | ".join(f"{h}: {c}" for h, c in zip(TABLE_HEADER, cells) if c != "")
