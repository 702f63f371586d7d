import csv
import io
import json
import shutil
import subprocess

import pytest

from flowsage import cli
from flowsage.cache import read_cache
from flowsage.ingest import parse_path

from conftest import IOT23_ROWS, iot23_text


@pytest.fixture(scope="module")
def small_log(tmp_path_factory):
    path = tmp_path_factory.mktemp("data") / "conn.log.labeled"
    assert cli.main(["synth", "--out", str(path), "--nodes", "60", "--seed", "3"]) == 0
    return path


@pytest.fixture(scope="module")
def small_cache(small_log, tmp_path_factory):
    out = tmp_path_factory.mktemp("cache") / "flows.cache"
    assert cli.main(["ingest", str(small_log), "--out", str(out)]) == 0
    return out


def test_ingest_writes_cache_and_summary(small_log, small_cache):
    summary = json.loads(small_cache.with_name("flows.cache.summary.json").read_text())
    parsed = parse_path(small_log)
    assert summary["rows"] == len(parsed.records) == len(read_cache(small_cache))
    assert summary["skipped"] == 0
    assert summary["benign_fraction"] + summary["malicious_fraction"] == pytest.approx(1.0)
    assert read_cache(small_cache) == parsed.records


def test_ingest_counts_a_bad_row(tmp_path):
    bad = IOT23_ROWS.splitlines()[0].split("\t")
    bad[3] = "not-a-port"
    src = tmp_path / "conn.log"
    src.write_text(iot23_text(IOT23_ROWS + "\t".join(bad) + "\n"))
    assert cli.main(["ingest", str(src), "--out", str(tmp_path / "c")]) == 0
    summary = json.loads((tmp_path / "c.summary.json").read_text())
    assert (summary["rows"], summary["skipped"]) == (2, 1)


def test_ingest_empty_file(tmp_path, capsys):
    src = tmp_path / "empty.log"
    src.write_text("")
    assert cli.main(["ingest", str(src), "--out", str(tmp_path / "c")]) == 2
    assert "MissingHeader" in capsys.readouterr().err


def test_ingest_missing_file(tmp_path):
    assert cli.main(["ingest", str(tmp_path / "nope"), "--out", str(tmp_path / "c")]) == 2


def test_ingest_leaves_input_alone(small_log, tmp_path):
    before = small_log.read_bytes()
    cli.main(["ingest", str(small_log), "--out", str(tmp_path / "c")])
    assert small_log.read_bytes() == before


@pytest.mark.parametrize("extra", [["--model", "gru"], ["--epochs", "-1"], ["--epochs", "ten"],
                                   ["--lr", "0"], ["--batch-size", "0"], ["--fanout", "25"],
                                   ["--seed", "x"], ["--weight-decay", "-1"]])
def test_train_rejects_bad_settings(small_cache, tmp_path, extra):
    args = ["train", "--model", "tcn", "--data", str(small_cache), "--out", str(tmp_path / "run")] + extra
    assert cli.main(args) == 4
    assert not (tmp_path / "run" / "checkpoint.ckpt").exists()


def test_train_missing_data(tmp_path):
    assert cli.main(["train", "--model", "tcn", "--data", str(tmp_path / "x"), "--out", str(tmp_path / "r")]) == 4


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_train_numeric_failure(small_cache, tmp_path):
    code = cli.main(["train", "--model", "lstm", "--data", str(small_cache), "--out", str(tmp_path / "r"),
                     "--epochs", "2", "--lr", "1e308"])
    assert code == 3


def _run(cache, out, *extra):
    return cli.main(["train", "--data", str(cache), "--out", str(out), *extra])


@pytest.mark.parametrize("model", ["tcn", "graphsage"])
def test_train_is_reproducible(small_cache, tmp_path, model):
    args = ["--model", model, "--epochs", "2", "--seed", "5"]
    assert _run(small_cache, tmp_path / "a", *args) == 0
    assert _run(small_cache, tmp_path / "b", *args) == 0
    for name in ("report.json", "checkpoint.ckpt"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()
    # history matches apart from the wall-clock column
    hist = [[row[:-1] for row in csv.reader(open(tmp_path / d / "history.csv"))] for d in "ab"]
    assert hist[0] == hist[1]
    # rerunning into the same directory overwrites with the same bytes
    first = (tmp_path / "a" / "report.json").read_bytes()
    assert _run(small_cache, tmp_path / "a", *args) == 0
    assert (tmp_path / "a" / "report.json").read_bytes() == first


def test_train_outputs(small_cache, tmp_path, capsys):
    assert _run(small_cache, tmp_path, "--model", "lstm", "--epochs", "2") == 0
    printed = capsys.readouterr().out
    assert "Accuracy (%)" in printed
    for name in ("checkpoint.ckpt", "history.csv", "report.json", "timing.json", "config.txt", "pipeline.json"):
        assert (tmp_path / name).exists(), name
    rows = list(csv.DictReader(io.StringIO((tmp_path / "history.csv").read_text())))
    assert [r["epoch"] for r in rows] == ["1", "2"]
    report = json.loads((tmp_path / "report.json").read_text())
    assert report["model"] == "lstm"
    assert report["tp"] + report["fp"] + report["tn"] + report["fn"] > 0
    assert json.loads((tmp_path / "timing.json").read_text())["train_seconds"] > 0


def test_untrained_tcn_scores_class_balance(small_cache, tmp_path):
    assert _run(small_cache, tmp_path, "--model", "tcn", "--epochs", "0") == 0
    r = json.loads((tmp_path / "report.json").read_text())
    # every prediction is 0.5, hence malicious
    assert r["tn"] == r["fn"] == 0
    assert r["accuracy"] == pytest.approx(r["tp"] / (r["tp"] + r["fp"]))
    assert r["auc"] == 0.5


def test_config_file_and_flags(small_cache, tmp_path, monkeypatch):
    conf = tmp_path / "run.conf"
    conf.write_text(f"# settings\nmodel = tcn\ndata = {small_cache}\nepochs = 3\nseed = 9\nlr = 0.01\n")
    monkeypatch.setenv("FLOWSAGE_SEED", "4")
    assert cli.main(["train", "--config", str(conf), "--out", str(tmp_path / "r"), "--epochs", "1"]) == 0
    settings = dict(line.split(" = ", 1) for line in (tmp_path / "r" / "config.txt").read_text().splitlines())
    assert settings["epochs"] == "1"  # flag beats file
    assert settings["seed"] == "9"  # file beats environment
    assert settings["lr"] == "0.01"


def test_seed_from_environment(small_cache, tmp_path, monkeypatch):
    monkeypatch.setenv("FLOWSAGE_SEED", "12")
    assert _run(small_cache, tmp_path, "--model", "tcn", "--epochs", "0") == 0
    assert "seed = 12" in (tmp_path / "config.txt").read_text()


def test_bad_config_file(small_cache, tmp_path):
    conf = tmp_path / "run.conf"
    conf.write_text("model tcn\n")
    assert cli.main(["train", "--config", str(conf), "--data", str(small_cache), "--out", str(tmp_path)]) == 4
    conf.write_text("colour = blue\n")
    assert cli.main(["train", "--config", str(conf), "--data", str(small_cache), "--out", str(tmp_path)]) == 4


@pytest.fixture(scope="module")
def runs(small_cache, tmp_path_factory):
    root = tmp_path_factory.mktemp("runs")
    assert _run(small_cache, root / "tcn", "--model", "tcn", "--epochs", "0") == 0
    assert _run(small_cache, root / "sage", "--model", "graphsage", "--epochs", "3") == 0
    return root


def test_report_csv(runs, capsys):
    assert cli.main(["report", "--runs", str(runs)]) == 0
    rows = list(csv.reader(io.StringIO(capsys.readouterr().out)))
    assert len(rows) == 3
    assert rows[0][-1] == "train_seconds"
    assert [r[0] for r in rows[1:]] == ["graphsage", "tcn"]
    assert float(rows[1][4]) >= float(rows[2][4])


def test_report_json(runs, tmp_path):
    out = tmp_path / "table.json"
    assert cli.main(["report", "--runs", str(runs), "--format", "json", "--out", str(out)]) == 0
    table = json.loads(out.read_text())
    assert isinstance(table, list) and len(table) == 2
    assert all(t["train_seconds"] is not None for t in table)


def test_report_missing_or_empty(tmp_path):
    assert cli.main(["report", "--runs", str(tmp_path / "missing")]) == 5
    assert cli.main(["report", "--runs", str(tmp_path)]) == 5


def test_console_script(small_cache, tmp_path):
    exe = shutil.which("flowsage")
    if exe is None:
        pytest.skip("console script not installed")
    proc = subprocess.run([exe, "train", "--model", "mlp", "--data", str(small_cache), "--out", str(tmp_path)],
                          capture_output=True, text=True)
    assert proc.returncode == 4
    assert "error" in proc.stderr


@pytest.mark.slow
def test_graphsage_on_community_fixture(tmp_path):
    log = tmp_path / "conn.log"
    assert cli.main(["synth", "--out", str(log), "--nodes", "400", "--seed", "0"]) == 0
    assert _run(log, tmp_path / "run", "--model", "graphsage") == 0
    assert json.loads((tmp_path / "run" / "report.json").read_text())["accuracy"] >= 0.95
