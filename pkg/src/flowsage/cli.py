"""``flowsage`` command line: ingest, train, report (plus a synth helper).

Exit codes: 0 success, 2 ingest failure, 3 numeric failure during training,
4 invalid configuration, 5 nothing to report.
"""

from __future__ import annotations

import argparse
import json
import logging
import math
import os
import sys
from dataclasses import dataclass, fields
from pathlib import Path
from typing import Optional

import numpy as np

from . import cache
from .errors import (ConfigError, EmptyInput, FlowsageError, MissingHeader, NaNGradient, NaNLoss,
                     SchemaError, TooFewSamples)
from .features import SplitSpec, prepare_tabular, to_sequence
from .graph import build_graph, save_graph, tensorize
from .ingest import class_balance, parse_path, write_conn_log
from .metrics import EvalReport, evaluate_scores, format_row, table_csv
from .models import MODEL_KINDS, TrainConfig, build_model, history_csv, predict, save_checkpoint, train
from .sage import predict_edges, save_sage_checkpoint, train_graphsage
from .synthetic import make_community_records

log = logging.getLogger("flowsage")

EXIT_INGEST = 2
EXIT_NUMERIC = 3
EXIT_CONFIG = 4
EXIT_REPORT = 5

ALL_KINDS = MODEL_KINDS + ("graphsage",)


# ------------------------------------------------------------------- config

@dataclass
class RunConfig:
    data: str
    model: str
    out: str
    seed: int = 0
    epochs: int = 20
    batch_size: int = 125
    lr: float = 1e-3
    weight_decay: Optional[float] = None
    fanout: tuple = (25, 10)

    def validate(self) -> None:
        if self.model not in ALL_KINDS:
            raise ConfigError(f"unknown model kind {self.model!r}; expected one of {', '.join(ALL_KINDS)}")
        if not self.data or not Path(self.data).is_file():
            raise ConfigError(f"data file not found: {self.data!r}")
        if not self.out:
            raise ConfigError("an output directory is required")
        if not 0 <= self.seed < 2 ** 64:
            raise ConfigError(f"seed must fit in 64 bits, got {self.seed}")
        if len(self.fanout) != 2 or any(k <= 0 for k in self.fanout):
            raise ConfigError(f"fanout must be two positive integers, got {self.fanout!r}")
        if self.weight_decay is not None and not (math.isfinite(self.weight_decay) and self.weight_decay >= 0):
            raise ConfigError(f"weight_decay must be non-negative, got {self.weight_decay!r}")
        # TrainConfig carries the epoch/batch/lr bounds
        self.train_config()

    def effective_weight_decay(self) -> float:
        if self.weight_decay is not None:
            return self.weight_decay
        return 1e-6 if self.model == "graphsage" else 0.0

    def train_config(self) -> TrainConfig:
        return TrainConfig(epochs=self.epochs, batch_size=self.batch_size, learning_rate=self.lr,
                           weight_decay=self.effective_weight_decay(), seed=self.seed)

    def dump(self) -> str:
        lines = []
        for f in fields(self):
            v = getattr(self, f.name)
            if f.name == "fanout":
                v = ",".join(str(k) for k in v)
            elif f.name == "weight_decay":
                v = repr(self.effective_weight_decay())
            lines.append(f"{f.name} = {v}")
        return "\n".join(lines) + "\n"


CONFIG_KEYS = {"data": str, "model": str, "out": str, "seed": int, "epochs": int, "batch_size": int,
               "lr": float, "weight_decay": float, "fanout": str}
KEY_ALIASES = {"batch-size": "batch_size", "learning_rate": "lr", "weight-decay": "weight_decay"}


def read_config_file(path) -> dict:
    """Parse ``key = value`` lines; ``#`` starts a comment."""
    out = {}
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read config file: {exc}") from None
    for n, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{path}:{n}: expected 'key = value'")
        key, value = (s.strip() for s in line.split("=", 1))
        key = KEY_ALIASES.get(key, key)
        if key not in CONFIG_KEYS:
            raise ConfigError(f"{path}:{n}: unknown key {key!r}")
        out[key] = value
    return out


def _coerce(key: str, value):
    if value is None or not isinstance(value, str):
        return value
    kind = CONFIG_KEYS[key]
    if kind is str:
        return value
    try:
        return kind(value)
    except ValueError:
        raise ConfigError(f"{key}: cannot parse {value!r} as {kind.__name__}") from None


def parse_fanout(value) -> tuple:
    if isinstance(value, tuple):
        return value
    try:
        parts = tuple(int(p) for p in str(value).replace(" ", "").split(","))
    except ValueError:
        raise ConfigError(f"fanout must look like '25,10', got {value!r}") from None
    return parts


def default_seed() -> int:
    raw = os.environ.get("FLOWSAGE_SEED")
    if raw is None or raw == "":
        return 0
    try:
        return int(raw)
    except ValueError:
        raise ConfigError(f"FLOWSAGE_SEED must be an integer, got {raw!r}") from None


def resolve_config(args) -> RunConfig:
    """Defaults < FLOWSAGE_SEED < config file < explicit flags."""
    values = {"seed": default_seed()}
    if args.config:
        values.update(read_config_file(args.config))
    for key in CONFIG_KEYS:
        flag = getattr(args, key, None)
        if flag is not None:
            values[key] = flag
    for key in ("data", "model", "out"):
        if key not in values:
            raise ConfigError(f"missing required setting {key!r}")
    values = {k: _coerce(k, v) for k, v in values.items()}
    if "fanout" in values:
        values["fanout"] = parse_fanout(values["fanout"])
    cfg = RunConfig(**values)
    cfg.validate()
    return cfg


# ------------------------------------------------------------------ ingest

def cmd_ingest(args) -> int:
    try:
        result = parse_path(args.input)
        balance = class_balance(result.records)
    except (MissingHeader, SchemaError, EmptyInput) as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_INGEST
    except OSError as exc:
        print(f"error: cannot read {args.input}: {exc}", file=sys.stderr)
        return EXIT_INGEST
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    cache.write_cache(result.records, out)
    summary = {
        "input": str(args.input),
        "cache": str(out),
        "rows": len(result.records),
        "total_rows": result.total_rows,
        "skipped": result.skipped,
        "unlabeled": result.unlabeled,
        "benign_fraction": balance["benign_fraction"],
        "malicious_fraction": balance["malicious_fraction"],
    }
    summary_path = Path(args.summary) if args.summary else out.with_name(out.name + ".summary.json")
    summary_path.write_text(json.dumps(summary, indent=2) + "\n", encoding="utf-8")
    print(f"ingested {summary['rows']} records ({summary['skipped']} skipped of {summary['total_rows']} rows); "
          f"malicious {100 * summary['malicious_fraction']:.2f}%")
    print(f"cache: {out}\nsummary: {summary_path}")
    return 0


# ------------------------------------------------------------------- train

def load_records(path):
    if cache.is_cache(path):
        return cache.read_cache(path)
    return parse_path(path).records


def _epoch_logger(rec):
    log.info("epoch %d %s", rec.epoch, " ".join(f"{k}={v:.6g}" for k, v in vars(rec).items() if k != "epoch"))


def run_tabular(cfg: RunConfig, records, out: Path) -> EvalReport:
    data = prepare_tabular(records, SplitSpec(seed=cfg.seed))
    (out / "pipeline.json").write_text(json.dumps(data.pipeline.to_dict(), indent=2, sort_keys=True) + "\n",
                                       encoding="utf-8")
    if cfg.model == "bilstm_embed":
        pick = lambda t: t.tokens
        vocab = data.pipeline.token_vocab_size
    else:
        pick = lambda t: to_sequence(t.matrix)
        vocab = None
    x_train = pick(data.train)
    model = build_model(cfg.model, x_train.shape[1:], cfg.seed, vocab)
    result = train(model, (x_train, data.train.labels), (pick(data.val), data.val.labels),
                   cfg.train_config(), log=_epoch_logger)
    save_checkpoint(model, out / "checkpoint.ckpt")
    (out / "history.csv").write_text(history_csv(result.history), encoding="utf-8")
    scores = predict(model, pick(data.test))
    return evaluate_scores(cfg.model, scores, data.test.labels, result.seconds)


def run_graph(cfg: RunConfig, records, out: Path) -> EvalReport:
    graph = build_graph(records)
    tensors = tensorize(graph, split_seed=cfg.seed)
    save_graph(graph, out / "graph.cache", tensors.encoders)
    result = train_graphsage(tensors, epochs=cfg.epochs, batch_size=cfg.batch_size, lr=cfg.lr,
                             weight_decay=cfg.effective_weight_decay(), fanout=cfg.fanout, seed=cfg.seed,
                             log=_epoch_logger)
    save_sage_checkpoint(result.model, out / "checkpoint.ckpt")
    lines = ["epoch,train_loss,train_accuracy,seconds"]
    lines += [f"{r.epoch},{r.loss!r},{r.train_accuracy!r},{r.seconds:.6f}" for r in result.history]
    (out / "history.csv").write_text("\n".join(lines) + "\n", encoding="utf-8")
    test = np.flatnonzero(tensors.test_mask)
    scores = predict_edges(result.model, tensors, test)
    return evaluate_scores(cfg.model, scores, tensors.edge_labels[test], result.seconds)


def cmd_train(args) -> int:
    try:
        cfg = resolve_config(args)
    except ConfigError as exc:
        print(f"error: ConfigError: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "config.txt").write_text(cfg.dump(), encoding="utf-8")
    try:
        records = load_records(cfg.data)
        runner = run_graph if cfg.model == "graphsage" else run_tabular
        report = runner(cfg, records, out)
    except (NaNLoss, NaNGradient) as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (TooFewSamples, EmptyInput, MissingHeader, SchemaError) as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    (out / "report.json").write_text(report.to_json(include_timing=False), encoding="utf-8")
    (out / "timing.json").write_text(json.dumps({"model": cfg.model, "train_seconds": report.train_seconds})
                                     + "\n", encoding="utf-8")
    print(format_row(report))
    return 0


# ------------------------------------------------------------------ report

def collect_reports(runs: Path) -> list[EvalReport]:
    reports = []
    for path in sorted(runs.rglob("report.json")):
        data = json.loads(path.read_text(encoding="utf-8"))
        timing = path.with_name("timing.json")
        if "train_seconds" not in data and timing.is_file():
            data["train_seconds"] = json.loads(timing.read_text(encoding="utf-8")).get("train_seconds")
        reports.append(EvalReport.from_dict(data))
    reports.sort(key=lambda r: (-r.accuracy, r.model))
    return reports


def cmd_report(args) -> int:
    runs = Path(args.runs)
    if not runs.is_dir():
        print(f"error: run directory not found: {runs}", file=sys.stderr)
        return EXIT_REPORT
    reports = collect_reports(runs)
    if not reports:
        print(f"error: no report.json found under {runs}", file=sys.stderr)
        return EXIT_REPORT
    if args.format == "csv":
        text = table_csv(reports)
    else:
        text = json.dumps([r.to_dict() for r in reports], indent=2) + "\n"
    if args.out:
        Path(args.out).write_text(text, encoding="utf-8")
    else:
        sys.stdout.write(text)
    return 0


# ------------------------------------------------------------------- synth

def cmd_synth(args) -> int:
    records = make_community_records(n_nodes=args.nodes, seed=args.seed)
    with open(args.out, "w", encoding="utf-8", newline="\n") as fh:
        write_conn_log(records, fh)
    print(f"wrote {len(records)} flows over {args.nodes} hosts to {args.out}")
    return 0


# -------------------------------------------------------------------- main

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="flowsage", description="Flow-based IoT intrusion detection models.")
    p.add_argument("-v", "--verbose", action="store_true", help="log per-epoch progress to stderr")
    sub = p.add_subparsers(dest="command", required=True)

    ing = sub.add_parser("ingest", help="parse a labeled conn.log into a record cache")
    ing.add_argument("input")
    ing.add_argument("--out", required=True, help="cache file to write")
    ing.add_argument("--summary", help="summary JSON path (default: <out>.summary.json)")
    ing.set_defaults(func=cmd_ingest)

    tr = sub.add_parser("train", help="train one model kind and evaluate it on the test split")
    # values stay strings here so bad ones surface as config errors (exit 4)
    tr.add_argument("--model", help=", ".join(ALL_KINDS))
    tr.add_argument("--data", help="record cache (or raw conn.log)")
    tr.add_argument("--out", help="run output directory")
    tr.add_argument("--seed", help="default: $FLOWSAGE_SEED or 0")
    tr.add_argument("--epochs")
    tr.add_argument("--batch-size", dest="batch_size")
    tr.add_argument("--lr")
    tr.add_argument("--weight-decay", dest="weight_decay")
    tr.add_argument("--fanout", help="GraphSAGE neighbors per hop, e.g. 25,10")
    tr.add_argument("--config", help="key = value settings file; flags win")
    tr.set_defaults(func=cmd_train)

    rp = sub.add_parser("report", help="aggregate run reports into one comparison table")
    rp.add_argument("--runs", required=True)
    rp.add_argument("--format", choices=("csv", "json"), default="csv")
    rp.add_argument("--out", help="write here instead of stdout")
    rp.set_defaults(func=cmd_report)

    sy = sub.add_parser("synth", help="write a synthetic two-community conn.log")
    sy.add_argument("--out", required=True)
    sy.add_argument("--nodes", type=int, default=400)
    sy.add_argument("--seed", type=int, default=0)
    sy.set_defaults(func=cmd_synth)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(name)s: %(message)s", stream=sys.stderr)
    try:
        return args.func(args)
    except FlowsageError as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
