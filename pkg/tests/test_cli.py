import csv
import json
import math
import subprocess
import sys

import pytest

from mirrorquant.cli import main


def test_gamma_examples(capsys):
    assert main(["gamma", "--B", "10", "--eps", "0.01"]) == 0
    assert float(capsys.readouterr().out.splitlines()[0]) == pytest.approx(0.5 * math.log(1.99 / 0.01) / 10, rel=1e-15)
    assert main(["gamma", "--B", "1", "--eps", "0.5", "--quiet"]) == 0
    assert float(capsys.readouterr().out.strip()) == pytest.approx(0.5 * math.log(3), rel=1e-15)


@pytest.mark.parametrize("argv", [["gamma", "--B", "1", "--eps", "1.5"], ["gamma", "--eps", "1.5"],
                                  ["gamma", "--B", "0", "--eps", "0.1"], [], ["bogus"]])
def test_usage_errors_exit_2(argv):
    with pytest.raises(SystemExit) as exc:
        main(argv)
    assert exc.value.code == 2


def test_check_passes(capsys):
    assert main(["check"]) == 0
    out = capsys.readouterr().out
    assert "[FAIL]" not in out
    assert "max closed-vs-stable deviation" in out


def test_check_detects_injected_bug(capsys):
    assert main(["check", "--inject-ste-bug"]) != 0
    captured = capsys.readouterr()
    assert "closed-form vs stable MD" in captured.err
    assert "[FAIL] closed-form vs stable MD (tanh)" in captured.out


def test_hidden_flag_not_in_help(capsys):
    with pytest.raises(SystemExit):
        main(["check", "--help"])
    assert "inject" not in capsys.readouterr().out


def _read_csv(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def test_convex_outputs_and_bound_recompute(tmp_path, config_dir, monkeypatch):
    monkeypatch.setenv("MIRRORQUANT_THREADS", "2")
    cfg = tmp_path / "c.json"
    cfg.write_text(json.dumps({"cases": [{"problem": "quadratic_box", "map": "tanh_entropy", "B": [1, 100]}],
                               "t": [10, 100, 1000]}))
    out = tmp_path / "out"
    assert main(["convex", str(cfg), "--out", str(out), "--quiet"]) == 0
    rows = _read_csv(out / "quadratic_box__tanh_entropy__B100.csv")
    assert len(rows) == 3
    summary = _read_csv(out / "summary.csv")
    assert len(summary) == 6
    for r in summary:
        # spreadsheet-style recomputation from the logged constants
        R, L, rho, B, t = (float(r[k]) for k in ("R", "L", "rho", "B", "t"))
        assert float(r["bound"]) == pytest.approx(R * L * math.sqrt(2 * B / (rho * t)), rel=1e-12)
        assert float(r["gap"]) <= float(r["bound"])


def test_convex_default_config_file(tmp_path, config_dir):
    assert main(["convex", str(config_dir / "convex_default.json"), "--out", str(tmp_path), "--quiet"]) == 0
    assert len(list(tmp_path.glob("*__B*.csv"))) == 6


@pytest.mark.parametrize("raw", [
    {"cases": [{"problem": "nope", "map": "quadratic"}]},
    {"cases": [{"problem": "quadratic_box", "map": "nope"}]},
    {"cases": [{"problem": "quadratic_box", "map": "quadratic", "beta": [1]}]},
    {"extra": 1},
    {"t": [0]},
])
def test_convex_config_errors_exit_2(tmp_path, raw, capsys):
    cfg = tmp_path / "bad.json"
    cfg.write_text(json.dumps(raw))
    assert main(["convex", str(cfg), "--out", str(tmp_path / "o")]) == 2
    assert "config error" in capsys.readouterr().err


def test_train_unknown_key_reports_path(tmp_path, capsys):
    cfg = tmp_path / "bad.json"
    cfg.write_text(json.dumps({"lr": {"eta00": 1}}))
    assert main(["train", str(cfg)]) == 2
    assert "lr.eta00" in capsys.readouterr().err


def test_train_shipped_config_and_seed_override(tmp_path, config_dir, capsys):
    a, b, c = tmp_path / "a", tmp_path / "b", tmp_path / "c"
    cfg = str(config_dir / "xor_md_tanh_s.json")
    assert main(["train", cfg, "--out", str(a)]) == 0
    out = capsys.readouterr().out
    assert "float-eval test accuracy" in out and "quantized-eval test accuracy" in out
    assert main(["train", cfg, "--out", str(b), "--seed", "3", "--quiet"]) == 0
    assert main(["train", cfg, "--out", str(c), "--seed", "3", "--quiet"]) == 0
    assert (b / "records.csv").read_bytes() == (c / "records.csv").read_bytes()
    assert (b / "summary.json").read_bytes() == (c / "summary.json").read_bytes()
    assert (a / "records.csv").read_bytes() != (b / "records.csv").read_bytes()


def test_module_entry_point():
    proc = subprocess.run([sys.executable, "-m", "mirrorquant", "gamma", "--B", "10", "--eps", "0.01"],
                          capture_output=True, text=True, check=False)
    assert proc.returncode == 0
    assert proc.stdout.startswith("0.26466")
