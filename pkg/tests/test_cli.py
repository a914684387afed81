import json
import shutil
from pathlib import Path

import numpy as np
import pytest

from smallness_lab.cli import main
from smallness_lab.config import ConfigError, load_config, safe_expression
from smallness_lab.grid import Domain
from smallness_lab.io_csv import read_coefficient_csv, write_coefficient_csv

CONFIGS = Path(__file__).resolve().parent.parent / "configs"


def _write(tmp_path, text, name="exp.ini"):
    p = tmp_path / name
    p.write_text(text)
    return p


SPECTRUM = """\
[experiment]
kind = spectrum
output = out

[domain]
kind = interval
bounds = 0, pi
n = 200

[params]
k_max = 6
expected = k**2
"""


def test_spectrum_run_writes_artifacts(tmp_path, capsys):
    p = _write(tmp_path, SPECTRUM)
    assert main(["run", str(p)]) == 0
    out = tmp_path / "out"
    manifest = json.loads((out / "manifest.json").read_text())
    assert set(manifest["files"]) == {"eigenvalues.csv", "spectrum.svg"}
    rows = np.loadtxt(out / "eigenvalues.csv", delimiter=",", skiprows=1)
    assert np.allclose(rows[:, 1], np.arange(1, 7) ** 2, rtol=1e-2)
    svg = (out / "spectrum.svg").read_text()
    assert "<svg" in svg and "xlink:href=\"http" not in svg
    assert "[PASS]" in capsys.readouterr().out


def test_failed_check_exits_one(tmp_path):
    p = _write(tmp_path, SPECTRUM.replace("k**2", "2*k**2"))
    assert main(["run", str(p)]) == 1


def test_run_is_deterministic(tmp_path):
    for run in ("a", "b"):
        (tmp_path / run).mkdir()
        shutil.copy(CONFIGS / "reduction_replay.ini", tmp_path / run / "cfg.ini")
        text = (tmp_path / run / "cfg.ini").read_text().replace("../out/reduction_replay", "out")
        (tmp_path / run / "cfg.ini").write_text(text)
        assert main(["run", str(tmp_path / run / "cfg.ini")]) == 0
    a = (tmp_path / "a" / "out" / "manifest.json").read_text()
    b = (tmp_path / "b" / "out" / "manifest.json").read_text()
    assert a == b


def test_thread_count_does_not_change_outputs(tmp_path, monkeypatch):
    manifests = []
    for threads in ("1", "3"):
        monkeypatch.setenv("SMALLNESS_THREADS", threads)
        folder = tmp_path / threads
        folder.mkdir()
        text = (CONFIGS / "spectral_constant_torus.ini").read_text().replace("../out/spectral_constant_torus", "out")
        (folder / "cfg.ini").write_text(text)
        assert main(["run", str(folder / "cfg.ini")]) == 0
        manifests.append(json.loads((folder / "out" / "manifest.json").read_text())["files"])
    assert manifests[0] == manifests[1]


@pytest.mark.parametrize("name", sorted(p.name for p in CONFIGS.glob("*.ini")))
def test_reference_configs_pass(name, tmp_path):
    text = (CONFIGS / name).read_text()
    text = "\n".join("output = out" if line.startswith("output") else line for line in text.splitlines())
    p = _write(tmp_path, text, name)
    assert main(["run", str(p)]) == 0


def test_config_errors_carry_line_numbers(tmp_path, capsys):
    p = _write(tmp_path, "[experiment]\nkind = spectrum\n[domain]\nkind = interval\nbounds = 0, 1\nn = ten\n")
    assert main(["run", str(p)]) == 2
    assert "exp.ini:6" in capsys.readouterr().err
    p = _write(tmp_path, "[experiment]\nkind = nonsense\n")
    assert main(["run", str(p)]) == 2
    assert "exp.ini:2" in capsys.readouterr().err
    p = _write(tmp_path, "[experiment]\nkind = spectrum\ngarbage line\n")
    assert main(["run", str(p)]) == 2


def test_seed_mandatory_for_randomized(tmp_path):
    p = _write(tmp_path, "[experiment]\nkind = control\n[domain]\nn = 10\n")
    with pytest.raises(ConfigError, match="seed"):
        load_config(p)


def test_missing_coefficient_file(tmp_path):
    p = _write(tmp_path, SPECTRUM + "\n[coefficients]\nfile = nothere.csv\n")
    with pytest.raises(ConfigError, match="does not exist"):
        load_config(p)


def test_invariant_violation_exits_one(tmp_path, capsys):
    p = _write(tmp_path, SPECTRUM + "\n[coefficients]\nA = 1 - 2*x\n")
    assert main(["run", str(p)]) == 1
    assert "x-face" in capsys.readouterr().err


def test_usage_errors(capsys):
    assert main(["acceptance", "medium"]) == 2
    assert main([]) == 2
    assert main(["list-experiments"]) == 0
    assert "reduction-replay" in capsys.readouterr().out


def test_bad_thread_count(monkeypatch, tmp_path):
    monkeypatch.setenv("SMALLNESS_THREADS", "zero")
    assert main(["run", str(_write(tmp_path, SPECTRUM))]) == 2


def test_safe_expression_rejects_unknown_names():
    f = safe_expression("1 + sin(x) * y")
    assert f(np.array([0.0]), np.array([2.0])) == pytest.approx(1.0)
    assert safe_expression("2*pi", ()) == pytest.approx(6.283185307)
    with pytest.raises(ConfigError):
        safe_expression("__import__('os')")
    with pytest.raises(ConfigError):
        safe_expression("1 +")


def test_coefficient_csv_round_trip(tmp_path):
    d = Domain.rectangle(0, 1, 0, 1, 6)
    c = d.centers()
    A11 = 1 + c[:, 0]
    path = tmp_path / "coef.csv"
    write_coefficient_csv(path, d, A11, np.zeros(d.size), np.ones(d.size), A12=0.1 * c[:, 1], A22=2 + 0 * A11)
    lines = path.read_text().splitlines()
    header, body = lines[0], lines[1:]
    path.write_text("\n".join([header] + body[::-1]) + "\n")  # row order must not matter
    field = read_coefficient_csv(path, d)
    assert field.kappa == pytest.approx(np.ones(d.size))
    cfg = _write(tmp_path, SPECTRUM.replace("kind = interval\nbounds = 0, pi\nn = 200",
                                            "kind = rectangle\nbounds = 0, 1, 0, 1\nn = 6")
                 .replace("expected = k**2\n", "") + "\n[coefficients]\nfile = coef.csv\n")
    assert main(["run", str(cfg)]) == 0


def test_coefficient_csv_rejects_off_grid_rows(tmp_path):
    d = Domain.interval(0, 1, 4)
    path = tmp_path / "c.csv"
    path.write_text("x,A11,V,kappa\n0.1,1,0,1\n0.375,1,0,1\n0.625,1,0,1\n0.875,1,0,1\n")
    with pytest.raises(ValueError, match="row 2"):
        read_coefficient_csv(path, d)
