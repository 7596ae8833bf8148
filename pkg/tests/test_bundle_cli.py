import json
from pathlib import Path

import pytest

from cavsim import cli
from cavsim.bundle import NOT_REPRODUCED, compare_report, read_manifest, read_metrics, verify_manifest

TINY = """\
[scenario]
name = tiny
[ensemble]
n_atoms = 300
T_mot = 10 uK
drop_height = 1.147 mm
cloud_sigma = 0.3 mm, 0.3 mm, 0.3 mm
[drive]
s_single_beam = 16
delta_a = -63 MHz
Delta_c = -150 MHz
exposure_time = 0.3 ms
extinction_tau = 0 ms
[engine]
dt = 1 us
record_every = 10 us
seed = 3
[outputs]
files = tof, summary, spectrum, series, snapshot
"""

SWEEP = TINY.replace("name = tiny", "name = tiny_sweep").replace(
    "[outputs]", "[sweep]\npath = drive.s_single_beam\nvalues = 2, 16\n[outputs]")


@pytest.fixture
def scn(tmp_path):
    p = tmp_path / "tiny.scn"
    p.write_text(TINY)
    return p


def _run(argv, capsys):
    code = cli.main(argv)
    out, err = capsys.readouterr()
    return code, out, err


def _files(d):
    return {p.name: p.read_bytes() for p in sorted(Path(d).iterdir())}


def test_simulate_writes_complete_bundle(scn, tmp_path, capsys):
    out = tmp_path / "b1"
    code, stdout, _ = _run(["simulate", "--scenario", str(scn), "--out", str(out), "--quiet"], capsys)
    assert code == 0
    assert f"bundle={out}" in stdout
    names = set(_files(out))
    assert {"tof.csv", "summary.csv", "spectrum.csv", "series.csv", "snapshot.csv", "metrics.csv",
            "scenario.scn", "record.json", "manifest.txt"} <= names
    assert verify_manifest(out)
    meta = read_manifest(out)
    assert meta["seed"] == "3" and meta["atoms"] == "300"
    m = read_metrics(out)
    assert m["initial_decel_ms2"] > 0
    header = (out / "summary.csv").read_text().splitlines()[0]
    for col in ("t_e_ms", "t_f_ms", "T_z_uK", "delayed_fraction", "eta", "gamma_fs"):
        assert col in header
    # tampering is detected
    (out / "tof.csv").write_text("point,time_ms,counts\n")
    assert not verify_manifest(out)


def test_reruns_are_byte_identical_and_workers_do_not_matter(scn, tmp_path, capsys):
    a, b, c = tmp_path / "a", tmp_path / "b", tmp_path / "c"
    for d, w in ((a, "1"), (b, "1"), (c, "2")):
        assert _run(["simulate", "--scenario", str(scn), "--out", str(d), "--workers", w, "--quiet"], capsys)[0] == 0
    assert _files(a) == _files(b)
    fa, fc = _files(a), _files(c)
    for name in fa:
        if name.endswith(".csv"):
            assert fa[name] == fc[name], name
    assert read_manifest(a)["config_hash"] == read_manifest(c)["config_hash"]


def test_seed_and_atoms_overrides(scn, tmp_path, capsys):
    out = tmp_path / "o"
    _run(["simulate", "--scenario", str(scn), "--out", str(out), "--seed", "9", "--atoms", "100", "--quiet"], capsys)
    meta = read_manifest(out)
    assert meta["seed"] == "9" and meta["atoms"] == "100"


def test_sweep_summary_has_one_row_per_point(tmp_path, capsys):
    p = tmp_path / "s.scn"
    p.write_text(SWEEP)
    out = tmp_path / "s"
    assert _run(["simulate", "--scenario", str(p), "--out", str(out), "--quiet"], capsys)[0] == 0
    lines = (out / "summary.csv").read_text().splitlines()
    assert len(lines) == 3
    assert lines[0].split(",")[1] == "s_single_beam"
    m = read_metrics(out)
    assert "eta_jump_factor" in m


def test_cavsim_out_sets_default_root(scn, tmp_path, capsys, monkeypatch):
    monkeypatch.setenv("CAVSIM_OUT", str(tmp_path / "root"))
    assert _run(["simulate", "--scenario", str(scn), "--quiet"], capsys)[0] == 0
    assert (tmp_path / "root" / "tiny" / "manifest.txt").is_file()
    assert _run(["spectrum"], capsys)[0] == 0
    assert (tmp_path / "root" / "spectrum" / "spectrum.csv").is_file()


def test_report_pass_fail_and_missing_metric(scn, tmp_path, capsys):
    out = tmp_path / "r"
    _run(["simulate", "--scenario", str(scn), "--out", str(out), "--quiet"], capsys)
    good = tmp_path / "good.expect"
    good.write_text("metric,target,tolerance,mode,provenance,note\n"
                    "# comment lines are skipped\n"
                    "initial_decel_ms2,0,0,min,DERIVED,positive\n")
    code, stdout, _ = _run(["report", "--bundle", str(out), "--expect", str(good)], capsys)
    assert code == 0
    assert "PASS" in stdout
    report = (out / "report.csv").read_text()
    for name, _ in NOT_REPRODUCED:
        assert name in report
    assert "NOT_REPRODUCED" in report

    bad = tmp_path / "bad.expect"
    bad.write_text("metric,target,tolerance,mode,provenance,note\n"
                   "initial_decel_ms2,1e9,0.1,rel,PAPER,\n"
                   "no_such_metric,1,0.1,rel,DERIVED,\n")
    code, stdout, _ = _run(["report", "--bundle", str(out), "--expect", str(bad)], capsys)
    assert code == cli.EXIT_REPORT
    rows, ok = compare_report(out, bad, write=False)
    assert not ok
    assert "missing" in rows[1][7]


def test_input_errors_are_json_with_nonzero_exit(tmp_path, capsys):
    bad = tmp_path / "bad.scn"
    bad.write_text("[scenario]\nname = x\n[drive]\nexposure_time = 1 mm\n")
    code, _, err = _run(["simulate", "--scenario", str(bad), "--out", str(tmp_path / "x")], capsys)
    assert code == cli.EXIT_INPUT
    obj = json.loads(err.strip().splitlines()[-1])
    assert obj["error"] == "scenario" and obj["line"] == 4
    assert not (tmp_path / "x").exists()

    code, _, err = _run(["simulate", "--scenario", str(tmp_path / "missing.scn")], capsys)
    assert code == cli.EXIT_INPUT and json.loads(err)["error"] == "scenario"
    code, _, err = _run(["simulate", "--scenario", "preset:fig2", "--atoms", "0"], capsys)
    assert code == cli.EXIT_INPUT and "atoms" in json.loads(err)["message"]
    code, _, _ = _run(["frobnicate"], capsys)
    assert code == cli.EXIT_USAGE
    code, _, err = _run(["report", "--bundle", str(tmp_path), "--expect", "preset:fig2"], capsys)
    assert code != 0 and "error" in json.loads(err)


def test_failed_run_leaves_no_partial_bundle(tmp_path, capsys):
    # a time step far above the stability bound fails inside the run
    p = tmp_path / "unstable.scn"
    p.write_text(TINY.replace("dt = 1 us", "dt = 500 us").replace("exposure_time = 0.3 ms",
                                                                   "exposure_time = 1 ms"))
    out = tmp_path / "never"
    code, _, err = _run(["simulate", "--scenario", str(p), "--out", str(out), "--quiet"], capsys)
    assert code != 0
    assert "error" in json.loads(err.strip().splitlines()[-1])
    assert not out.exists()
    assert not any(tmp_path.glob("*tmp*"))


def test_threshold_command(capsys):
    code, stdout, _ = _run(["threshold", "--scenario", "preset:fig3"], capsys)
    assert code == 0
    lines = stdout.strip().splitlines()
    assert lines[0].startswith("s_single_beam,")
    above = [int(r.split(",")[6]) for r in lines[1:]]
    assert above == sorted(above) and above[0] == 0 and above[-1] == 1
