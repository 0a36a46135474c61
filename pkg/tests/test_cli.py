import subprocess
import sys

import pytest

from rotd import harness
from rotd.cli import main, preset_names


def write_cfg(path, **kv):
    base = dict(experiment="star", algorithms="TD, TDC, RO-TD", alpha=0.01, eta=10, n_samples=300, init="baird")
    base.update(kv)
    path.write_text("[experiment]\n" + "".join(f"{k} = {v}\n" for k, v in base.items()))
    return path


@pytest.fixture(autouse=True)
def no_env_override(monkeypatch):
    monkeypatch.delenv(harness.OUTPUT_ENV, raising=False)


def test_run_success(tmp_path, capsys):
    cfg = write_cfg(tmp_path / "ok.cfg", output_dir=tmp_path / "out", plot="true")
    assert main(["run", str(cfg)]) == 0
    out = capsys.readouterr().out
    assert "experiment star" in out
    for name in ("trace_TD.csv", "aggregate_RO-TD.csv", "summary.json", "mspbe.svg", "duality.svg"):
        assert (tmp_path / "out/star" / name).exists()


def test_run_config_errors_exit_1(tmp_path, capsys):
    assert main(["run", str(write_cfg(tmp_path / "bad.cfg", norm_pair="2, 1"))]) == 1
    (tmp_path / "empty.cfg").write_text("")
    assert main(["run", str(tmp_path / "empty.cfg")]) == 1
    assert "n_samples" in capsys.readouterr().err
    assert main(["run", str(tmp_path / "missing.cfg")]) == 1


def test_usage_error_exits_1():
    with pytest.raises(SystemExit) as info:
        main(["run"])
    assert info.value.code == 1


def test_run_io_error_exits_2(tmp_path, monkeypatch, capsys):
    blocker = tmp_path / "a_file"
    blocker.write_text("not a directory")
    monkeypatch.setenv(harness.OUTPUT_ENV, str(blocker / "out"))
    assert main(["run", str(write_cfg(tmp_path / "ok.cfg"))]) == 2
    assert "I/O error" in capsys.readouterr().err


def test_env_var_selects_output_dir(tmp_path, monkeypatch):
    monkeypatch.setenv(harness.OUTPUT_ENV, str(tmp_path / "env"))
    assert main(["run", str(write_cfg(tmp_path / "ok.cfg", output_dir=tmp_path / "cfg"))]) == 0
    assert (tmp_path / "env/star/trace_TD.csv").exists()
    assert not (tmp_path / "cfg").exists()


def test_all_diverged_exits_3(tmp_path, capsys):
    cfg = write_cfg(tmp_path / "div.cfg", algorithms="TD", alpha=0.5, n_samples=5000, n_runs=2,
                    output_dir=tmp_path / "out")
    assert main(["run", str(cfg)]) == 3
    assert "all runs diverged" in capsys.readouterr().err
    lines = (tmp_path / "out/star/aggregate_TD.csv").read_text().splitlines()
    assert len(lines) == 1  # header only: nothing left to aggregate


def test_presets_list_and_show(capsys):
    assert main(["presets", "list"]) == 0
    out = capsys.readouterr().out
    for name in preset_names():
        assert name in out
    assert main(["presets", "show", "star"]) == 0
    assert "[experiment]" in capsys.readouterr().out
    assert main(["presets", "show", "nope"]) == 1


def test_plot_command(tmp_path, capsys):
    cfg = write_cfg(tmp_path / "ok.cfg", output_dir=tmp_path / "out")
    assert main(["run", str(cfg)]) == 0
    trace = tmp_path / "out/star/trace_RO-TD.csv"
    assert main(["plot", str(trace), "--metric", "mspbe"]) == 0
    assert (tmp_path / "out/star/trace_RO-TD_mspbe.svg").exists()
    assert main(["plot", str(trace), "--metric", "theta_nnz", "--out", str(tmp_path / "n.svg"),
                 "--scale", "linear"]) == 0
    assert (tmp_path / "n.svg").exists()
    assert main(["plot", str(trace), "--metric", "accuracy"]) == 1
    assert main(["plot", str(tmp_path / "missing.csv"), "--metric", "mspbe"]) == 2
    empty = tmp_path / "empty.csv"
    harness.emit_csv([], empty)
    assert main(["plot", str(empty), "--metric", "mspbe"]) == 1


def test_module_entry_point(tmp_path):
    proc = subprocess.run([sys.executable, "-m", "rotd", "presets", "list"], capture_output=True, text=True)
    assert proc.returncode == 0 and "mountain-car" in proc.stdout
    proc = subprocess.run([sys.executable, "-m", "rotd", "run", str(tmp_path / "x.cfg")], capture_output=True,
                          text=True)
    assert proc.returncode == 1
