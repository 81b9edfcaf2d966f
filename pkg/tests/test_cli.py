import csv
import json
import shutil
import subprocess
import sys

import numpy as np
import pytest

from ils.cli import main
from ils.fixtures import data_path
from ils.transport import assemble, save_npz

from conftest import ROOM4_SAMPLES


def read_csv(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


@pytest.fixture(scope="module")
def ff_cache(tmp_path_factory, room4, room4_plain):
    d = tmp_path_factory.mktemp("ffcache")
    h = room4.geometry_hash()
    save_npz(room4_plain, d / f"plain-{h[:16]}-s{ROOM4_SAMPLES}-r0.npz", h)
    return d


def room4_args(ff_cache, *extra):
    return ["--scene", "room4.scene", "--samples", str(ROOM4_SAMPLES), "--cache", str(ff_cache), *extra]


def test_validate(capsys):
    assert main(["validate", "--scene", "room4.scene"]) == 0
    assert "patches: 2294" in capsys.readouterr().out


def test_input_errors_exit_1(tmp_path, capsys):
    assert main(["validate", "--scene", str(tmp_path / "missing.scene")]) == 1
    (tmp_path / "bad.scene").write_text('{"patches": [{"id": 0, "vertices": [[0,0,0],[1,0,0],[2,0,0]], '
                                        '"reflectance": 0.5}]}')
    assert main(["validate", "--scene", str(tmp_path / "bad.scene")]) == 1
    assert "zero area" in capsys.readouterr().err


def test_numerical_failure_exit_2(tmp_path):
    rc = main(["solve", "--scene", "cube.scene", "--samples", "16", "--solver", "jacobi",
               "--max-iters", "1", "--tol", "1e-12", "--out-dir", str(tmp_path)])
    assert rc == 2


def test_cube_solve_uniform(tmp_path):
    samples = 4096
    assert main(["solve", "--scene", "cube.scene", "--samples", str(samples), "--mode", "plain",
                 "--out-dir", str(tmp_path)]) == 0
    B = np.array([float(r["B"]) for r in read_csv(tmp_path / "solution.csv")])
    from ils.fixtures import build_cube
    _, row_sigma = assemble(build_cube(), samples, 0).row_sums()
    # B = E / (1 - rho) = 2 for exact row sums; a row-sum error e moves B by about rho B e / (1 - rho)
    tol = 3 * row_sigma.max() * 0.5 * 2.0 / 0.5
    assert np.abs(B - 2.0).max() <= tol
    meta = json.loads((tmp_path / "meta.json").read_text())
    assert meta["flags"]["seed"] == 0 and meta["versions"]["workers"] == 1


def test_solve_is_deterministic(tmp_path):
    argv = ["solve", "--scene", "cube.scene", "--samples", "64", "--out-dir", str(tmp_path)]
    assert main(argv) == 0
    first = {p.name: p.read_bytes() for p in tmp_path.iterdir()}
    assert main(argv) == 0
    assert {p.name: p.read_bytes() for p in tmp_path.iterdir()} == first


def test_room4_solve_map_sense(tmp_path, ff_cache):
    out = tmp_path / "solve"
    assert main(["solve", *room4_args(ff_cache, "--diff-mode", "plain"), "--out-dir", str(out)]) == 0
    sensors = read_csv(out / "sensors.csv")
    diff = read_csv(out / "diff.csv")
    assert len(sensors) == 8 and len(diff) == 8
    assert main(["map", "--scene", "room4.scene", "--solution", str(out / "solution.csv"), "--grid", "1.0",
                 "--rays", "64", "--out-dir", str(tmp_path / "map")]) == 0
    assert (tmp_path / "map" / "map.pgm").read_bytes().startswith(b"P5")
    rec = tmp_path / "recv.csv"
    rec.write_text("id,x,y,z,axis,type\n1,3.7,1.5,1.7,1 0 0,cone:45\n2,3.7,1.5,1.7,0 0 1,luxmeter\n")
    assert main(["sense", "--scene", "room4.scene", "--solution", str(out / "solution.csv"),
                 "--receivers", str(rec), "--rays", "256", "--out-dir", str(tmp_path / "sense")]) == 0
    assert len(read_csv(tmp_path / "sense" / "sense.csv")) == 2


def test_room4_optimize_and_report(tmp_path, ff_cache):
    assert main(["optimize", *room4_args(ff_cache), "--out-dir", str(tmp_path)]) == 0
    row = read_csv(tmp_path / "report.csv")[0]
    assert row["config"] == "0 0 254 254 0 0 0 0"
    assert float(row["delta_watt"]) == pytest.approx(580.8, abs=1e-9)
    assert all(float(x) <= 200.0 for x in row["delta_lux"].split())
    assert main(["report", "--scene", "room4.scene", "--config", "0 0 254 254 0 0 0 0",
                 "--out-dir", str(tmp_path / "rep")]) == 0
    assert "4.6464 kWh" in (tmp_path / "rep" / "report.txt").read_text()


@pytest.mark.parametrize("gateway", ["inprocess", "local"])
def test_room4_simulate(tmp_path, ff_cache, gateway):
    assert main(["simulate", "--scenario", str(data_path("room4_dynamic.json")), *room4_args(ff_cache)[2:],
                 "--gateway", gateway, "--out-dir", str(tmp_path)]) == 0
    rows = read_csv(tmp_path / "timeline.csv")
    assert [float(r["delta_watt"]) for r in rows if float(r["t"]) in (600.0, 1200.0)] == [580.8, 580.8]
    assert (tmp_path / "frames.log").read_text().strip()


def test_scenario_validation(tmp_path):
    sc = json.loads(data_path("room4_dynamic.json").read_text())
    sc["timeline"][1]["t"] = 0.0
    p = tmp_path / "s.json"
    p.write_text(json.dumps(sc))
    assert main(["simulate", "--scenario", str(p), "--out-dir", str(tmp_path)]) == 1
    assert main(["simulate", "--scenario", str(tmp_path / "none.json"), "--out-dir", str(tmp_path)]) == 1


def test_bundled_scenario_by_name():
    from ils.cli import load_scenario
    assert load_scenario("room4_dynamic.json")["timeline"]


def test_console_script_help():
    exe = shutil.which("ils")
    cmd = [exe] if exe else [sys.executable, "-m", "ils.cli"]
    out = subprocess.run(cmd + ["--help"], capture_output=True, text=True, check=True).stdout
    for sub in ("validate", "solve", "map", "sense", "optimize", "simulate", "report"):
        assert sub in out
