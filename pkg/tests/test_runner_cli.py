import csv
import json

import pytest

from acr.cli import main
from acr.runner import (
    SUMMARY_COLUMNS,
    RunConfig,
    aggregate,
    apply_overrides,
    env_overrides,
    load_config,
    parse_values,
    run_experiment,
    run_seed,
)

TINY = {
    "stream": {"kind": "image", "T": 2, "classes_per_task": 2, "samples_per_class": 20, "side": 8},
    "policy": "challenging",
    "buffer_size": 8,
    "batch_size": 8,
    "epochs": 2,
    "E": 1,
    "hidden": [8],
    "embed_dim": 4,
    "seeds": [0, 1],
    "corruptions": ["gaussian-noise:1", "pixelate:2"],
}


@pytest.fixture
def config_file(tmp_path):
    path = tmp_path / "tiny.json"
    path.write_text(json.dumps({**TINY, "out": str(tmp_path / "out")}))
    return path


def read_rows(path):
    return list(csv.DictReader(open(path)))


def test_run_writes_outputs(config_file, tmp_path, capsys):
    assert main(["run", str(config_file)]) == 0
    out = tmp_path / "out"
    rows = read_rows(out / "summary.csv")
    assert list(rows[0]) == SUMMARY_COLUMNS
    assert [r["seed"] for r in rows] == ["0", "1", "mean"]
    mean = sum(float(r["ACC_iid"]) for r in rows[:2]) / 2
    assert float(rows[2]["ACC_iid"]) == pytest.approx(mean, abs=1e-15)
    seed_dir = out / "seed_0"
    for name in ("alpha_iid.csv", "alpha_ood.csv", "alpha_ood_pixelate_2.csv", "buffer.json", "buffer_cv.csv"):
        assert (seed_dir / name).exists(), name
    assert json.loads((out / "aggregate.json").read_text())["seeds"] == [0, 1]
    assert "ACC_iid" in capsys.readouterr().out


def test_run_is_byte_deterministic(config_file, tmp_path):
    main(["run", str(config_file), "--out", str(tmp_path / "a")])
    main(["run", str(config_file), "--out", str(tmp_path / "b")])
    assert (tmp_path / "a/summary.csv").read_bytes() == (tmp_path / "b/summary.csv").read_bytes()


def test_policy_and_seed_overrides(config_file, tmp_path):
    out = tmp_path / "r"
    assert main(["run", str(config_file), "--seed", "3", "--policy", "reservoir", "--out", str(out),
                 "--set", "stream.samples_per_class=16"]) == 0
    rows = read_rows(out / "summary.csv")
    assert [r["seed"] for r in rows] == ["3", "mean"]
    assert rows[0]["policy"] == "reservoir"
    assert json.loads((out / "config.json").read_text())["stream"]["samples_per_class"] == 16


def test_single_task_run_has_empty_bwt(tmp_path):
    cfg = RunConfig(**{**TINY, "stream": {**TINY["stream"], "T": 1}, "seeds": [0], "corruptions": []})
    row = run_seed(cfg.validate(), 0)["row"]
    assert row["BWT_iid"] is None and row["ACC_ood"] is None


def test_vector_stream_skips_ood():
    cfg = RunConfig(**{**TINY, "stream": {"kind": "vector", "T": 2, "classes_per_task": 2,
                                         "samples_per_class": 20, "dim": 5}, "lr": 0.01})
    res = run_seed(cfg.validate(), 0)
    assert res["ood"] is None and res["iid"].T == 2


def test_cv_history_per_boundary(tmp_path):
    cfg = RunConfig(**TINY).validate()
    hist = run_seed(cfg, 0)["cv_history"]
    assert [h["stage"] for h in hist] == [0, 1]
    assert all(h["cv_classes"] == 0.0 for h in hist)


def test_aggregate_mean_and_std():
    rows = [{m: v for m in SUMMARY_COLUMNS[2:]} for v in (0.2, 0.4)]
    agg = aggregate(rows)
    assert agg["ACC_iid"]["mean"] == pytest.approx(0.3)
    assert agg["ACC_iid"]["std"] == pytest.approx(0.1)


def test_config_overrides(config_file):
    cfg = load_config(config_file, {"epochs": 3}, environ={"ACR_E": "2", "ACR_STREAM__SIDE": "9", "HOME": "/"})
    assert (cfg.epochs, cfg.E, cfg.stream["side"]) == (3, 2, 9)
    assert env_overrides({"ACR_LR": "0.5", "OTHER": "1"}) == {"lr": 0.5}
    with pytest.raises(KeyError):
        apply_overrides({}, {"bogus": 1})
    with pytest.raises(ValueError):
        load_config(config_file, {"E": 5})


def test_parse_values():
    assert parse_values("2..4") == [2, 3, 4]
    assert parse_values("0.1, 0.5") == [0.1, 0.5]


def test_sweep_and_report(config_file, tmp_path, capsys):
    out = tmp_path / "sw"
    assert main(["sweep", str(config_file), "--param", "E", "--values", "1..2", "--seed", "0",
                 "--out", str(out)]) == 0
    assert (out / "E=1/summary.csv").exists() and (out / "E=2/summary.csv").exists()
    assert len(read_rows(out / "sweep.csv")) == 2
    assert main(["report", str(out)]) == 0
    text = capsys.readouterr().out
    assert "E=1" in text and "E=2" in text
    assert len(read_rows(out / "report.csv")) == 2


def test_make_stream_and_corrupt(config_file, tmp_path):
    cache = tmp_path / "cache"
    assert main(["make-stream", str(config_file), "--out", str(cache)]) == 0
    assert (cache / "stream.json").exists()
    assert main(["corrupt", str(cache), "defocus-blur:3", "--out", str(tmp_path / "c")]) == 0
    assert (tmp_path / "c/task1_test_defocus-blur_3.bin").exists()
    assert main(["corrupt", str(cache), "defocus-blur:9", "--out", str(tmp_path / "c")]) == 1


def test_gradcheck_command(capsys):
    assert main(["gradcheck", "--configs", "3"]) == 0
    assert "PASS" in capsys.readouterr().out


def test_cli_errors(tmp_path, capsys):
    assert main(["run", str(tmp_path / "nope.json")]) == 1
    assert "nope.json" in capsys.readouterr().err
    (tmp_path / "bad.json").write_text("{")
    assert main(["run", str(tmp_path / "bad.json")]) == 1
    with pytest.raises(SystemExit) as exc:
        main(["frobnicate"])
    assert exc.value.code == 2


def test_run_experiment_rejects_unwritable_out(tmp_path):
    blocker = tmp_path / "file"
    blocker.write_text("x")
    with pytest.raises(OSError):
        run_experiment(RunConfig(**{**TINY, "out": str(blocker / "sub")}))
