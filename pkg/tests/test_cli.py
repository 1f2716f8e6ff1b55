import csv
import json
import re
import subprocess
import sys
import time

import numpy as np
import pytest

from kendama.cli import main

SMOKE = {
    "schema_version": 1,
    "experiment": {"n_schedule": [50, 200], "rollouts_per_n": 50},
}


def write_cfg(path, doc):
    path.write_text(json.dumps(doc))
    return str(path)


@pytest.fixture(scope="module")
def smoke_run(tmp_path_factory):
    base = tmp_path_factory.mktemp("smoke")
    cfg = write_cfg(base / "cfg.json", SMOKE)
    t0 = time.perf_counter()
    code = main(["sweep", "--config", cfg, "--out", str(base / "a"), "--no-timestamp"])
    elapsed = time.perf_counter() - t0
    return base, cfg, code, elapsed


def test_smoke_sweep_fast(smoke_run):
    _, _, code, elapsed = smoke_run
    assert code == 0
    assert elapsed < 60


def test_sweep_rerun_is_byte_identical(smoke_run):
    base, cfg, _, _ = smoke_run
    assert main(["sweep", "--config", cfg, "--out", str(base / "b"), "--no-timestamp"]) == 0
    for name in ("records.csv", "summary.json"):
        assert (base / "a" / name).read_bytes() == (base / "b" / name).read_bytes()


def test_summary_matches_records(smoke_run):
    base = smoke_run[0] / "a"
    summary = json.loads((base / "summary.json").read_text())
    with open(base / "records.csv", newline="") as f:
        rows = list(csv.DictReader(f))
    assert len(rows) == 100
    for entry in summary["per_n"]:
        mine = [r for r in rows if int(r["n"]) == entry["n"]]
        m = len(mine)
        assert entry["rollouts"] == m
        assert entry["catch_pct"] == pytest.approx(100 * sum(int(r["catch"]) for r in mine) / m)
        assert entry["hit_center_pct"] == pytest.approx(100 * sum(int(r["hit_center"]) for r in mine) / m)
        assert entry["hit_pct"] == pytest.approx(100 * sum(int(r["hit"]) for r in mine) / m)
        failed = sum(r["outcome"] != "success" for r in mine)
        assert entry["trial_failure_pct"] == pytest.approx(100 * failed / m)
        vz = np.array([float(r["impact_rel_vz"]) for r in mine])
        vz = vz[np.isfinite(vz)]
        if vz.size:
            assert entry["impact_vz_mean"] == pytest.approx(vz.mean())
            assert entry["impact_vz_std"] == pytest.approx(vz.std())
        assert sum(entry["counts"].values()) == m


def test_timestamp_only_when_requested(tmp_path):
    out = tmp_path / "o"
    assert main(["calibrate-noise", "--out", str(out)]) == 0
    assert main(["learn-support", "--out", str(out)]) == 0
    assert "generated_at" in json.loads((out / "support.json").read_text())
    assert main(["learn-support", "--out", str(out), "--no-timestamp"]) == 0
    assert "generated_at" not in json.loads((out / "support.json").read_text())


def test_seed_flag_overrides_config(tmp_path):
    cfg = write_cfg(tmp_path / "c.json", {"schema_version": 1, "seed": 3})
    for d, extra in (("x", []), ("y", ["--seed", "3"]), ("z", ["--seed", "4"])):
        assert main(["calibrate-noise", "--config", cfg, "--out", str(tmp_path / d), *extra]) == 0
    x, y, z = ((tmp_path / d / "samples.csv").read_bytes() for d in "xyz")
    assert x == y and x != z


def test_pipeline_through_files(tmp_path):
    out = tmp_path / "o"
    assert main(["calibrate-noise", "--out", str(out), "--no-timestamp"]) == 0
    cfg = write_cfg(
        tmp_path / "c.json",
        {"schema_version": 1, "paths": {"samples": str(out / "samples.csv"), "support": str(out / "support.json")}},
    )
    assert main(["learn-support", "--config", cfg, "--out", str(out), "--no-timestamp"]) == 0
    assert main(["rollout", "--config", cfg, "--out", str(out), "--no-timestamp"]) == 0
    first = (out / "trace.csv").read_bytes()
    assert main(["rollout", "--config", cfg, "--out", str(out), "--no-timestamp"]) == 0
    assert (out / "trace.csv").read_bytes() == first
    rec = json.loads((out / "record.json").read_text())
    sup = json.loads((out / "support.json").read_text())
    assert rec["vhat"]["lo"] == pytest.approx(sup["box"]["lo"])
    assert rec["category"] in {"catch", "miss", "p1", "p2", "constraint_violation"}


def test_no_writes_outside_out_dir(tmp_path, monkeypatch):
    work = tmp_path / "cwd"
    work.mkdir()
    monkeypatch.chdir(work)
    cfg = write_cfg(tmp_path / "c.json", {"schema_version": 1, "experiment": {"n_schedule": [50], "rollouts_per_n": 3, "keep_traces": True}})
    out = tmp_path / "out"
    for cmd in ("calibrate-noise", "learn-support", "rollout", "sweep", "report"):
        assert main([cmd, "--config", cfg, "--out", str(out), "--no-timestamp"]) == 0
    assert list(work.iterdir()) == []
    assert sorted(p.name for p in tmp_path.iterdir()) == ["c.json", "cwd", "out"]
    assert len(list((out / "traces").glob("*.csv.gz"))) == 3


@pytest.mark.parametrize(
    "text",
    ["{not json", json.dumps({"schema_version": 1, "bogus": 1}), json.dumps({"schema_version": 2}),
     json.dumps({"schema_version": 1, "noise": {"epsilon": 1.5}}), json.dumps([1, 2])],
)
def test_bad_config_exits_1(tmp_path, capsys, text):
    p = tmp_path / "bad.json"
    p.write_text(text)
    assert main(["sweep", "--config", str(p), "--out", str(tmp_path / "o")]) == 1
    assert "error" in capsys.readouterr().err
    assert not (tmp_path / "o" / "records.csv").exists()


def test_missing_config_file_exits_1(tmp_path):
    assert main(["plan-swingup", "--config", str(tmp_path / "nope.json"), "--out", str(tmp_path)]) == 1


def test_infeasible_swingup_bounds_exit_2(tmp_path, capsys):
    cfg = write_cfg(tmp_path / "c.json", {"schema_version": 1, "swingup": {"F_lo": [1, 1], "F_hi": [2, 2]}})
    assert main(["plan-swingup", "--config", cfg, "--out", str(tmp_path / "o")]) == 2
    assert "solver" in capsys.readouterr().err


def test_swingup_nonconvergence_exit_2(tmp_path):
    # too few outer iterations to close the terminal gap
    cfg = write_cfg(tmp_path / "c.json", {"schema_version": 1, "swingup": {"solver": {"max_outer": 1, "max_inner": 5}}})
    out = tmp_path / "o"
    assert main(["plan-swingup", "--config", cfg, "--out", str(out), "--no-timestamp"]) == 2
    assert json.loads((out / "manifest.json").read_text())["converged"] is False


@pytest.mark.slow
def test_plan_swingup_default(tmp_path):
    out = tmp_path / "o"
    assert main(["plan-swingup", "--out", str(out), "--no-timestamp"]) == 0
    man = json.loads((out / "manifest.json").read_text())
    assert man["converged"] and man["terminal_residual"] < 1e-3
    assert man["gap_vanish_time"] is not None and man["gap_vanish_time"] <= 0.5
    with open(out / "F_star.csv") as f:
        assert sum(1 for _ in f) == 1 + 150


def test_report_missing_fields_exit_1(tmp_path):
    bad = tmp_path / "s.json"
    bad.write_text(json.dumps({"per_n": [{"n": 50, "catch_pct": 40.0}]}))
    cfg = write_cfg(tmp_path / "c.json", {"schema_version": 1, "paths": {"summary": str(bad)}})
    assert main(["report", "--config", cfg, "--out", str(tmp_path / "o")]) == 1
    bad.write_text(json.dumps({"something": 1}))
    assert main(["report", "--config", cfg, "--out", str(tmp_path / "o")]) == 1


def entry(n, catch, hit, vz, sd):
    return {"n": n, "catch_pct": catch, "hit_center_pct": hit, "impact_vz_mean": vz, "impact_vz_std": sd}


def series_paths(svg):
    return re.findall(r'<path class="series"[^>]* d="([^"]*)"', svg)


def parse_points(d):
    nums = [float(v) for v in re.findall(r"-?\d+(?:\.\d+)?", d)]
    return list(zip(nums[::2], nums[1::2]))


def test_report_structure_and_monotone_series(tmp_path):
    ns = [50, 100, 200, 400, 800, 1400, 2000]
    summary = {"per_n": [entry(n, 40 + 4 * i, 30 + 5 * i, 0.4 - 0.07 * i, 0.05) for i, n in enumerate(ns)]}
    s = tmp_path / "s.json"
    s.write_text(json.dumps(summary))
    cfg = write_cfg(tmp_path / "c.json", {"schema_version": 1, "paths": {"summary": str(s)}})
    out = tmp_path / "o"
    assert main(["report", "--config", cfg, "--out", str(out)]) == 0
    for name, rising in (("catch.svg", True), ("hit_center.svg", True), ("impact_velocity.svg", False)):
        svg = (out / name).read_text()
        assert svg.startswith("<svg") and svg.rstrip().endswith("</svg>")
        paths = series_paths(svg)
        assert len(paths) == 1
        pts = parse_points(paths[0])
        assert len(pts) == len(ns)
        xs, ys = zip(*pts)
        assert all(b > a for a, b in zip(xs, xs[1:]))
        # svg y grows downward
        diffs = np.diff(ys)
        assert np.all(diffs < 0) if rising else np.all(diffs > 0)
        assert "sample size n" in svg
    assert svg.count('class="band"') == len(ns)


def test_report_single_n_is_flat_point(tmp_path):
    s = tmp_path / "summary.json"
    s.write_text(json.dumps({"per_n": [entry(100, 50.0, 40.0, 0.1, 0.02)]}))
    assert main(["report", "--out", str(tmp_path)]) == 0
    for name in ("catch.svg", "hit_center.svg", "impact_velocity.svg"):
        paths = series_paths((tmp_path / name).read_text())
        assert len(paths) == 1 and len(parse_points(paths[0])) == 1


def test_console_script_help():
    r = subprocess.run([sys.executable, "-m", "kendama.cli", "--help"], capture_output=True, text=True)
    assert r.returncode == 0
    for cmd in ("plan-swingup", "calibrate-noise", "learn-support", "rollout", "sweep", "report"):
        assert cmd in r.stdout
