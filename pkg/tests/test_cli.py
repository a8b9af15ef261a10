import json
import subprocess
import sys

import pytest

from pscband import cli
from pscband.io import dumps

SPHERE = {"dim": 3, "name": "S^2 x I", "components": {"g11": "1", "g22": "sin(x1)^2", "g33": "1"}}
FLAT = {"dim": 3, "name": "T^2 x I", "components": {"g11": "1", "g22": "1", "g33": "1"}}
SMALL = {"x1": 24, "x2": 24, "xi": 9, "t": 48}


def write_cfg(tmp_path, name="cfg.json", **data):
    data.setdefault("output_dir", "out")
    path = tmp_path / name
    path.write_text(json.dumps(data))
    return path


def run(*args):
    return cli.main([str(a) for a in args])


def test_curvature_outputs(tmp_path):
    cfg = write_cfg(tmp_path, metric=SPHERE, x_kind="sphere", resolution={"x1": 8, "x2": 8, "xi": 5})
    assert run("curvature", "--config", cfg) == cli.OK
    out = tmp_path / "out"
    header = (out / "curvature.csv").read_text().splitlines()[0].split(",")
    assert header[:3] == ["x1", "x2", "xi"] and "R" in header
    summary = json.loads((out / "curvature_summary.json").read_text())
    assert abs(summary["min_R"] - 2) < 1e-9 and abs(summary["max_R"] - 2) < 1e-9


def test_check_exit_codes(tmp_path):
    good = write_cfg(tmp_path, "a.json", metric=SPHERE, resolution={"x1": 8, "x2": 8, "xi": 5})
    bad = write_cfg(tmp_path, "b.json", metric=FLAT, x_kind="torus", resolution={"x1": 8, "x2": 8, "xi": 5})
    assert run("check", "--config", good) == cli.OK
    assert run("check", "--config", bad) == cli.NEGATIVE
    report = json.loads((tmp_path / "out" / "check.json").read_text())
    assert not report["holds"] and any("R_g not positive" in m for m in report["failures"])


def test_pipeline_certifies_and_flat_fails(tmp_path):
    ok = write_cfg(tmp_path, "a.json", metric=SPHERE, resolution=SMALL, output_dir="a")
    no = write_cfg(tmp_path, "b.json", metric=FLAT, x_kind="torus", resolution={"x1": 8, "x2": 8, "t": 16},
                   output_dir="b")
    assert run("pipeline", "--config", ok) == cli.OK
    assert json.loads((tmp_path / "a" / "report.json").read_text())["conclusion"] == "PSC_CERTIFIED"
    assert run("pipeline", "--config", no) == cli.NEGATIVE
    assert json.loads((tmp_path / "b" / "report.json").read_text())["conclusion"].startswith("HYPOTHESIS_FAILED")


def test_pipeline_reports_are_byte_identical(tmp_path):
    cfg = write_cfg(tmp_path, metric=SPHERE, resolution=SMALL)
    blobs = []
    for name in ("r1", "r2"):
        assert run("pipeline", "--config", cfg, "--out", tmp_path / name) == cli.OK
        blobs.append((tmp_path / name / "report.json").read_bytes())
    assert blobs[0] == blobs[1]


def test_field_dump(tmp_path):
    cfg = write_cfg(tmp_path, metric=SPHERE, resolution=SMALL, dump_fields=True)
    assert run("pipeline", "--config", cfg) == cli.OK
    lines = (tmp_path / "out" / "u.csv").read_text().splitlines()
    assert lines[0].split(",")[:3] == ["x1", "x2", "t"] and len(lines) == 1 + 24 * 24 * 48
    axes = json.loads((tmp_path / "out" / "u.csv.json").read_text())["axes"]
    assert [a["count"] for a in axes] == [24, 24, 48]


def test_dry_run_touches_nothing(tmp_path, capsys):
    cfg = write_cfg(tmp_path, metric=SPHERE, resolution=SMALL)
    for cmd in ("curvature", "check", "pipeline", "eigen"):
        assert run(cmd, "--config", cfg, "--dry-run") == cli.OK
    assert not (tmp_path / "out").exists()
    assert "pipeline" in capsys.readouterr().out


def test_config_errors(tmp_path, capsys):
    cfg = write_cfg(tmp_path, metric=SPHERE, colour="blue")
    assert run("check", "--config", cfg) == cli.CONFIG
    assert "colour" in capsys.readouterr().err
    broken = tmp_path / "broken.json"
    broken.write_text('{"metric": {"dim": 3,}')
    assert run("check", "--config", broken) == cli.CONFIG
    assert "line 1 column" in capsys.readouterr().err
    assert run("check", "--config", tmp_path / "missing.json") == cli.CONFIG
    bad_expr = write_cfg(tmp_path, "e.json", metric={"dim": 3, "components": {"g11": "1+", "g22": "1", "g33": "1"}})
    assert run("check", "--config", bad_expr) == cli.CONFIG
    assert run("pipeline", "--config", cfg.with_name("e.json"), "--epsilon", "-1") == cli.CONFIG


def test_resolution_override(tmp_path):
    cfg = write_cfg(tmp_path, metric=SPHERE)
    assert run("curvature", "--config", cfg, "--resolution", "x1=6,x2=6,xi=3") == cli.OK
    assert len((tmp_path / "out" / "curvature.csv").read_text().splitlines()) == 1 + 6 * 6 * 3
    assert run("curvature", "--config", cfg, "--resolution", "x1=six") == cli.CONFIG


def test_sweep_and_eigen(tmp_path):
    cfg = write_cfg(tmp_path, metric=SPHERE, resolution={"x1": 8, "x2": 8, "xi": 9, "t": 128},
                    epsilons=[0.2, 0.1, 0.05])
    run("sweep", "--config", cfg)
    table = (tmp_path / "out" / "sweep.csv").read_text().splitlines()
    assert table[0].startswith("epsilon") and len(table) == 4
    torus = write_cfg(tmp_path, "t.json", metric={"dim": 2, "components": {"g11": "1", "g22": "1"}},
                      x_kind="torus", resolution={"x1": 16, "x2": 16}, eigen={"which": "X_slice"})
    assert run("eigen", "--config", torus) == cli.OK
    assert json.loads((tmp_path / "out" / "eigen.json").read_text())["sign"] == "zero"


def test_console_entry_point(tmp_path):
    cfg = write_cfg(tmp_path, metric=SPHERE, resolution={"x1": 6, "x2": 6, "xi": 3})
    proc = subprocess.run([sys.executable, "-m", "pscband.cli", "check", "--config", str(cfg)],
                          capture_output=True, text=True)
    assert proc.returncode == 0, proc.stderr


def test_dumps_is_stable():
    d = {"b": 0.1, "a": [float("nan"), float("inf"), 1]}
    assert dumps(d) == dumps(dict(d)) and dumps(d).index('"b"') < dumps(d).index('"a"')
    assert '"nan"' in dumps(d) and '"inf"' in dumps(d)
    assert "0.10000000000000001" in dumps({"x": 0.1})
