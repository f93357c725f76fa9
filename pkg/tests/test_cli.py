import csv
import json
import math
import xml.etree.ElementTree as ET
from pathlib import Path

import numpy as np
import pytest

from snlsr.cli import BENCH_COLUMNS, main, run_benchmark
from snlsr.netgen import NetworkConfig, generate_instance, load_instance, save_instance
from snlsr.plotting import from_pixels, plot_scatter, to_pixels

SVG = "{http://www.w3.org/2000/svg}"


def solve(tmp_path, name, *extra):
    out = tmp_path / name
    code = main(["solve", "--n-sensors", "100", "--radio-range", "0.4", "--noise", "0", "--seed", "4", "--out", str(out), *extra])
    return code, out


def test_generate_roundtrip(tmp_path):
    path = tmp_path / "inst.json"
    assert main(["generate", "--n-sensors", "40", "--radio-range", "0.3", "--seed", "2", "-o", str(path)]) == 0
    inst = load_instance(path)
    ref = generate_instance(NetworkConfig(n_sensors=40, radio_range=0.3, rng_seed=2))
    np.testing.assert_array_equal(inst.measured, ref.measured)


def test_solve_report_and_artifacts(tmp_path, capsys):
    code, out = solve(tmp_path, "a", "--plot", "--trace", "--dump-patches")
    assert code == 0
    report = json.loads((out / "report.json").read_text())
    assert report["rmsd_after_refinement"] <= 1e-3
    assert report["patches"]["count"] >= 1
    assert all(t >= 0 for t in report["timings"].values())
    assert set(report["artifacts"]) == {"positions", "scatter_registered", "scatter_refined", "refine_trace", "patches"}
    for path in report["artifacts"].values():
        assert Path(path).exists()
    for name in ("scatter_registered.svg", "scatter_refined.svg"):
        ET.parse(out / name)
    assert "rmsd_after" in capsys.readouterr().out


def test_solve_is_deterministic(tmp_path):
    _, a = solve(tmp_path, "a")
    _, b = solve(tmp_path, "b")
    ra, rb = (json.loads((d / "report.json").read_text()) for d in (a, b))
    for r in (ra, rb):
        r.pop("timings")
        r.pop("artifacts")
    assert ra == rb
    assert (a / "positions.json").read_bytes() == (b / "positions.json").read_bytes()


def test_config_file_and_flag_precedence(tmp_path):
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"network": {"n_sensors": 60, "radio_range": 0.5, "rng_seed": 1}, "solver": {"lam": 3.0}}))
    out = tmp_path / "o"
    assert main(["solve", "--config", str(cfg), "--lam", "1.5", "--out", str(out)]) == 0
    report = json.loads((out / "report.json").read_text())
    assert report["network"]["n_sensors"] == 60
    assert report["solver"]["lam"] == 1.5
    assert report["solver"]["max_cluster_size"] == 30 and report["solver"]["max_patch_size"] == 45


def test_bad_config_exit_code(tmp_path):
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"solver": {"lam": -1}}))
    assert main(["solve", "--config", str(cfg), "--n-sensors", "30", "--out", str(tmp_path / "o")]) == 2


def test_disconnected_graph_fails_with_stage(tmp_path, capsys):
    code = main(["solve", "--n-sensors", "100", "--radio-range", "0.05", "--seed", "1", "--out", str(tmp_path / "o")])
    assert code != 0
    err = capsys.readouterr().err
    assert "stage" in err and any(s in err for s in ("partition", "localize", "register"))


def test_solve_from_instance_file(tmp_path):
    inst = generate_instance(NetworkConfig(n_sensors=60, radio_range=0.4, rng_seed=9))
    path = tmp_path / "inst.json"
    save_instance(inst, path)
    out = tmp_path / "o"
    assert main(["solve", "--instance", str(path), "--out", str(out)]) == 0
    svg = tmp_path / "p.svg"
    assert main(["plot", "--instance", str(path), "--positions", str(out / "positions.json"), "-o", str(svg)]) == 0
    ET.parse(svg)


def test_bench_empty_grid(tmp_path):
    grid = tmp_path / "grid.json"
    grid.write_text(json.dumps({"rows": []}))
    out = tmp_path / "b.csv"
    assert main(["bench", str(grid), "--out", str(out)]) == 0
    assert out.read_text().strip() == ",".join(BENCH_COLUMNS)


def test_bench_rows_roundtrip(tmp_path):
    grid = {"rows": [{"n_sensors": 60, "radio_range": 0.4}, {"n_sensors": 60, "radio_range": 0.02}], "seeds": [1, 2]}
    out = tmp_path / "b.csv"
    records = run_benchmark(grid, out, plots_dir=tmp_path / "plots")
    rows = list(csv.DictReader(open(out)))
    assert len(rows) == len(records) == 6
    assert [r["seed"] for r in rows] == ["1", "2", "mean"] * 2
    for rec, row in zip(records, rows):
        for key in ("time_s", "rmsd_before", "rmsd_after", "tightness_rate"):
            a, b = rec[key], float(row[key])
            assert (math.isnan(a) and math.isnan(b)) or a == b
    assert rows[0]["status"] == "ok" and rows[3]["status"] == "error"
    assert rows[5]["status"] == "0/2 ok"
    assert (tmp_path / "plots" / "row0_seed1.svg").exists()


def test_svg_segments_invert_viewport(tmp_path):
    truth = np.array([[0.0, 0.0], [0.3, -0.2], [-0.4, 0.45]])
    est = truth + [[0.01, 0.0], [0.0, -0.02], [0.03, 0.03]]
    path = plot_scatter(truth, est, truth[:1], tmp_path / "s.svg")
    root = ET.parse(path).getroot()
    groups = {g.get("class"): g for g in root.iter(SVG + "g")}
    lines = list(groups["segments"])
    starts = from_pixels([[float(l.get("x1")), float(l.get("y1"))] for l in lines])
    ends = from_pixels([[float(l.get("x2")), float(l.get("y2"))] for l in lines])
    np.testing.assert_allclose(starts, truth, atol=1e-8)
    np.testing.assert_allclose(ends, est, atol=1e-8)
    assert len(list(groups["truth"])) == 3 and len(list(groups["anchors"])) == 1 and len(list(groups["estimates"])) == 3


def test_zero_error_segments(tmp_path):
    x = np.random.default_rng(0).uniform(-0.5, 0.5, size=(5, 2))
    root = ET.parse(plot_scatter(x, x, None, tmp_path / "z.svg")).getroot()
    for line in root.iter(SVG + "line"):
        assert line.get("x1") == line.get("x2") and line.get("y1") == line.get("y2")


def test_viewport_corners():
    np.testing.assert_allclose(to_pixels([[-0.55, 0.55], [0.55, -0.55]]), [[0, 0], [500, 500]])


def test_plot_length_mismatch(tmp_path):
    with pytest.raises(ValueError):
        plot_scatter(np.zeros((3, 2)), np.zeros((2, 2)), None, tmp_path / "x.svg")
