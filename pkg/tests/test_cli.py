import csv
import json

import pytest

from hmbitcn.cli import main

TINY = {
    "synthetic": {"subjects_per_class": 3, "samples_per_subject": 3, "steps": 32, "seed": 1},
    "cif": {"t": 1, "n": 2, "a": 1.0, "b": -1.0},
    "model": {"channel_widths": [4, 4], "dilation_schedule": [2, 1]},
    "train": {"max_epochs": 2, "patience": 1, "batch_size": 8, "seeds": [41, 42]},
}


@pytest.fixture
def config(tmp_path):
    path = tmp_path / "tiny.json"
    path.write_text(json.dumps(TINY))
    return str(path)


def read_csv(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def test_unknown_subcommand(capsys):
    assert main(["nope"]) != 0
    assert "usage" in capsys.readouterr().err


def test_bad_config(tmp_path, capsys):
    bad = tmp_path / "bad.json"
    bad.write_text('{"model": {"kernel_size": 0}}')
    assert main(["train", "--config", str(bad), "--out", str(tmp_path)]) == 2
    err = capsys.readouterr().err
    assert "error" in err and "usage" in err
    bad.write_text('{"modle": {}}')
    assert main(["train", "--config", str(bad)]) == 2
    bad.write_text("{not json")
    assert main(["train", "--config", str(bad)]) == 2


def test_missing_config_file(tmp_path):
    assert main(["train", "--config", str(tmp_path / "absent.json")]) == 2


def test_gen_data_cif_apply_and_svd_report(config, tmp_path):
    data = tmp_path / "data"
    assert main(["gen-data", "--config", config, "--out", str(data)]) == 0
    assert (data / "manifest.json").exists()
    fused = tmp_path / "fused"
    assert main(["cif-apply", "--dataset", str(data), "--t", "1", "--n", "1", "--a", "1", "--b", "-1",
                 "--out", str(fused)]) == 0
    assert (fused / "data.bin").stat().st_size == (data / "data.bin").stat().st_size
    rep = tmp_path / "svd"
    assert main(["svd-report", "--config", config, "--dataset", str(data), "--n", "1,2", "--out", str(rep)]) == 0
    rows = read_csv(rep / "svd_report.csv")
    assert len(rows) == 4 and {"n", "a", "b", "shared_pattern_error"} <= set(rows[0])


def test_train_then_eval(config, tmp_path):
    out = tmp_path / "run"
    assert main(["train", "--config", config, "--out", str(out)]) == 0
    assert len(read_csv(out / "report.csv")) == 2
    assert read_csv(out / "history_seed41.csv")[0].keys() == {"epoch", "train_loss", "val_f1"}
    models = [str(out / "model_seed41.bin"), str(out / "model_seed42.bin")]
    assert main(["eval", "--config", str(out / "config.json"), "--model", *models, "--out", str(out)]) == 0
    rows = read_csv(out / "eval.csv")
    train_rows = read_csv(out / "report.csv")
    assert [r["accuracy"] for r in rows] == [r["accuracy"] for r in train_rows]


def test_ablate_table_and_determinism(config, tmp_path):
    outs = [tmp_path / "a", tmp_path / "b"]
    for out in outs:
        assert main(["ablate", "--config", config, "--out", str(out)]) == 0
    table = read_csv(outs[0] / "ablation.csv")
    assert [(r["cif"], r["direction"]) for r in table] == [
        (c, d) for c in ("off", "on") for d in ("forward", "backward", "both")
    ]
    assert len(read_csv(outs[0] / "ablation_seeds.csv")) == 12
    for name in ("ablation.csv", "ablation_seeds.csv"):
        assert (outs[0] / name).read_bytes() == (outs[1] / name).read_bytes()


def test_grid_cif(config, tmp_path):
    assert main(["grid-cif", "--config", config, "--t", "1,-1", "--n", "1", "--a", "1", "--b=-1,1",
                 "--out", str(tmp_path)]) == 0
    rows = read_csv(tmp_path / "grid_cif.csv")
    assert [(r["t"], r["b"]) for r in rows] == [("1", "-1.0"), ("1", "1.0"), ("-1", "-1.0"), ("-1", "1.0")]


def test_snr_verify_small(tmp_path):
    assert main(["snr-verify", "--a", "1,0.5", "--b=-1,1", "--count", "200000", "--out", str(tmp_path)]) == 0
    rows = read_csv(tmp_path / "snr_verify.csv")
    assert len(rows) > 0 and {"theoretical_gain", "empirical_gain", "mode"} <= set(rows[0])


def test_rf_report_and_timing(capsys):
    assert main(["rf-report"]) == 0
    assert "quoted_formula" in capsys.readouterr().out
    assert main(["timing"]) == 0
    assert "parameters" in capsys.readouterr().out
