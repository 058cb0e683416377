import subprocess
import sys

import pytest

from tissuescale.cli import EXIT_CONFIG, EXIT_MONITOR, EXIT_OK, main
from tissuescale.config import default_config


@pytest.fixture()
def conf(tmp_path):
    def write(**overrides):
        kw = dict(time__T=0.05, macro__resolution=8, geometry__cell_resolution=16)
        kw.update(overrides)
        cfg = default_config().copy(**kw)
        path = tmp_path / "run.ini"
        path.write_text(cfg.to_text())
        return str(path)
    return write


def test_emit_config_round_trip(tmp_path, capsys):
    assert main(["emit-config"]) == EXIT_OK
    text = capsys.readouterr().out
    assert "[geometry]" in text and "# " in text
    assert main(["emit-config", "--out", str(tmp_path / "cfgdir")]) == EXIT_OK
    assert (tmp_path / "cfgdir" / "config.ini").read_text() == text


def test_cell_macro_energy_pipeline(conf, cache, tmp_path):
    c = conf(output__vtk_every=5)
    out = tmp_path / "out"
    assert main(["cell", "--config", c, "--out", str(out)]) == EXIT_OK
    assert (out / "tensor_E_hom.csv").exists() and any(cache.iterdir())
    assert main(["macro", "--config", c, "--out", str(out), "--threads", "1"]) == EXIT_OK
    first = (out / "macro_series.csv").read_bytes()
    assert (out / "macro_00005.vtk").exists()
    assert main(["energy", "--config", c, "--out", str(out)]) == EXIT_OK
    assert (out / "macro_series_energy.csv").exists()
    # a second run writes the same bytes
    assert main(["macro", "--config", c, "--out", str(out)]) == EXIT_OK
    assert (out / "macro_series.csv").read_bytes() == first


def test_restart_continues_bit_identically(conf, cache, tmp_path):
    c = conf()
    a, b = tmp_path / "a", tmp_path / "b"
    assert main(["cell", "--config", c, "--out", str(a)]) == EXIT_OK
    assert main(["macro", "--config", c, "--out", str(a)]) == EXIT_OK
    assert main(["macro", "--config", c, "--out", str(b), "--steps", "2"]) == EXIT_OK
    assert main(["macro", "--config", c, "--out", str(b), "--restart", str(b / "checkpoint.bin")]) == EXIT_OK
    last_a = (a / "macro_series.csv").read_text().splitlines()[-1]
    last_b = (b / "macro_series.csv").read_text().splitlines()[-1]
    assert last_a == last_b


def test_macro_without_cache_is_config_error(conf, cache, tmp_path, capsys):
    assert main(["macro", "--config", conf(), "--out", str(tmp_path)]) == EXIT_CONFIG
    assert "tissuescale cell" in capsys.readouterr().err


def test_config_errors_exit_2(tmp_path, capsys):
    bad = tmp_path / "bad.ini"
    bad.write_text("[material]\nK_p = -1\n")
    assert main(["cell", "--config", str(bad)]) == EXIT_CONFIG
    assert "A2" in capsys.readouterr().err
    bad.write_text("[time]\nT = 1\n[oops]\n")
    assert main(["cell", "--config", str(bad)]) == EXIT_CONFIG
    assert "line 3" in capsys.readouterr().err
    assert main(["cell", "--config", str(tmp_path / "missing.ini")]) == EXIT_CONFIG
    assert main(["cell", "--threads", "0"]) == EXIT_CONFIG


def test_gamma_below_bound_exit_2(conf, cache, tmp_path, capsys):
    c = conf()
    out = tmp_path / "o"
    main(["cell", "--config", c, "--out", str(out)])
    main(["macro", "--config", c, "--out", str(out)])
    assert main(["energy", "--config", c, "--out", str(out), "--gamma", "1e-9"]) == EXIT_CONFIG
    assert "admissibility bound" in capsys.readouterr().err


def test_monitor_trip_exit_4(conf, cache, tmp_path):
    c = conf(chemistry__mu1=400.0, time__T=0.2)
    out = tmp_path / "o"
    assert main(["cell", "--config", c, "--out", str(out)]) == EXIT_OK
    assert main(["macro", "--config", c, "--out", str(out)]) == EXIT_MONITOR


def test_dns_and_compare_commands(conf, cache, tmp_path):
    c = conf(time__T=0.02)
    out = tmp_path / "o"
    assert main(["dns", "--config", c, "--out", str(out), "--cells", "1"]) == EXIT_OK
    assert (out / "dns_N1.csv").exists() and (out / "dns_N1_cells.csv").exists()
    assert main(["compare", "--config", c, "--out", str(out), "--cells", "1", "2"]) == EXIT_OK
    lines = (out / "compare.csv").read_text().splitlines()
    assert lines[0].startswith("# tissuescale") and len(lines) == 4


def test_console_entry_point_help():
    r = subprocess.run([sys.executable, "-m", "tissuescale.cli", "--help"], capture_output=True, text=True)
    assert r.returncode == 0
    for cmd in ("cell", "macro", "dns", "compare", "energy", "emit-config"):
        assert cmd in r.stdout


def test_mode_flag_switches_to_evolutionary(conf, cache, tmp_path):
    c = conf()
    q, e = tmp_path / "q", tmp_path / "e"
    assert main(["cell", "--config", c, "--out", str(q)]) == EXIT_OK
    assert main(["macro", "--config", c, "--out", str(q), "--mode", "quasi"]) == EXIT_OK
    assert main(["macro", "--config", c, "--out", str(e), "--mode", "evolutionary"]) == EXIT_OK
    # inertia changes the trajectory, and the header hash records the different configuration
    qa = (q / "macro_series.csv").read_text().splitlines()
    ea = (e / "macro_series.csv").read_text().splitlines()
    assert qa[0] != ea[0]
    assert qa[-1] != ea[-1]
