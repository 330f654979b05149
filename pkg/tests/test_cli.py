import json

import pytest

from diffmsin.cli import main

TINY_TRAIN = """
[train]
batch_size = 32
d_e = 16
hidden = 16
att_hidden = 8
d_profile = 4
heads = 4
max_epochs = 2
{extra}

[train.src]
T = 4
{src}

[data]
preset = "tiny"
"""


def _toml(tmp_path, extra="", src=""):
    path = tmp_path / "c.toml"
    path.write_text(TINY_TRAIN.format(extra=extra, src=src))
    return str(path)


def test_gen_data_writes_manifest(tmp_path, capsys):
    assert main(["gen-data", "--preset", "tiny", "--seed", "7", "--out", str(tmp_path)]) == 0
    raw = json.loads((tmp_path / "manifest.json").read_text())
    assert len(raw["files"]) == 3
    assert "checksum" in capsys.readouterr().out


def test_unknown_flag_exits_2(capsys):
    assert main(["train", "--bogus"]) == 2
    assert "usage" in capsys.readouterr().err
    assert main([]) == 2


def test_train_then_eval(tmp_path, capsys):
    out = tmp_path / "run"
    assert main(["train", "--config", _toml(tmp_path), "--out", str(out)]) == 0
    run = json.loads((out / "run.json").read_text())
    lines = (out / "metrics.jsonl").read_text().splitlines()
    assert 1 <= len(lines) <= 2 and (out / "checkpoint.bin").exists()
    capsys.readouterr()
    assert main(["eval", "--config", _toml(tmp_path), "--checkpoint", str(out / "checkpoint.bin")]) == 0
    assert f"{run['best_auc']:.4f}" in capsys.readouterr().out


def test_train_from_generated_files(tmp_path):
    data = tmp_path / "data"
    assert main(["gen-data", "--preset", "tiny", "--seed", "1", "--out", str(data)]) == 0
    assert main(["train", "--config", _toml(tmp_path), "--data", str(data), "--seed", "1",
                 "--ablation", "no_src", "--out", str(tmp_path / "run")]) == 0
    assert json.loads((tmp_path / "run" / "run.json").read_text())["config"]["no_src"] is True


def test_ablate_prints_four_rows(tmp_path, capsys):
    assert main(["ablate", "--config", _toml(tmp_path), "--seeds", "0"]) == 0
    out = capsys.readouterr().out
    for row in ("full", "no_fdaf", "no_src", "no_mfe_src_fdaf"):
        assert any(line.startswith(row + " ") for line in out.splitlines())


def test_gradcheck_reports_no_failures(capsys):
    assert main(["gradcheck"]) == 0
    assert "0 failing" in capsys.readouterr().out


@pytest.mark.parametrize("extra", ["w1 = 5.0", "heads = 3", "colour = 1"])
def test_config_errors_exit_2(tmp_path, extra):
    assert main(["train", "--config", _toml(tmp_path, extra=extra), "--out", str(tmp_path / "r")]) == 2


def test_missing_files_exit_2(tmp_path):
    assert main(["train", "--config", str(tmp_path / "nope.toml")]) == 2
    assert main(["train", "--data", str(tmp_path / "nothing"), "--preset", "tiny"]) == 2


def test_numeric_failure_exits_3(tmp_path):
    cfg = _toml(tmp_path, src="alpha_start = 1.0\nalpha_end = 1.0")
    assert main(["train", "--config", cfg, "--out", str(tmp_path / "r")]) == 3
