import json
import math

import numpy as np
import pytest

from tmsv_forge.analysis import synthetic_superposition_grid
from tmsv_forge.cli import main


def write_cfg(tmp_path, name="cfg.json", **data):
    data.setdefault("schema_version", 1)
    path = tmp_path / name
    path.write_text(json.dumps(data))
    return str(path)


def run(tmp_path, command, cfg=None, out="out", extra=()):
    argv = [command, "--out", str(tmp_path / out)]
    if cfg is not None:
        argv += ["--config", cfg]
    return main(argv + list(extra))


def load(tmp_path, out, name):
    return json.loads((tmp_path / out / name).read_text())


def test_optimize_writes_artifacts(tmp_path):
    cfg = write_cfg(tmp_path, target={"r": 0.25}, optimizer={"n_max": 6, "revalidate_n_max": 12})
    assert run(tmp_path, "optimize", cfg) == 0
    res = load(tmp_path, "out", "result.json")
    assert res["fidelity"] >= 0.999 and res["converged"]
    assert res["duration_s"] <= 2e-3
    assert res["revalidated_fidelity"] >= res["fidelity"] - 0.005
    assert res["metadata"]["tags"] == []
    lines = (tmp_path / "out" / "waveform.csv").read_text().splitlines()
    assert lines[0] == "t_seconds,phi_r_rad,phi_b_rad"
    assert len(lines) - 1 == round(res["duration_s"] * 1e6)
    assert (tmp_path / "out" / "cost_trace.csv").read_text().startswith("iteration,cost\n")


def test_optimize_large_space_tagged_and_nonconverged(tmp_path):
    cfg = write_cfg(tmp_path, target={"r": 1.0}, optimizer={"n_max": 32, "max_iterations": 1, "n_starts": 1})
    code = run(tmp_path, "optimize", cfg)
    res = load(tmp_path, "out", "result.json")
    assert "extended-runtime" in res["metadata"]["tags"]
    assert code == (0 if res["converged"] else 3)
    assert code == 3


@pytest.mark.parametrize("data, field", [
    ({"target": {"r": -1}}, "target.r"),
    ({"target": {"kind": "cat"}}, "target.kind"),
    ({"seed": -4}, "seed"),
    ({"optimizer": {"epsilon": 2}}, "optimizer.epsilon"),
    ({"tomography": {"planes": ["re-xx"]}}, "tomography.planes"),
    ({"bell": {"settings": [0.1, 0.2, 0.3]}}, "bell.settings"),
    ({"unknown": 1}, "unknown"),
    ({"schema_version": 7}, "schema_version"),
    ({"noise": {"n_bar_1": 0.1}, "target": {"kind": "superposition"}}, "noise"),
])
def test_bad_config_exit_2_no_files(tmp_path, capsys, data, field):
    cfg = write_cfg(tmp_path, **data)
    for command in ("optimize", "scan", "sweep"):
        assert run(tmp_path, command, cfg) == 2
        assert not (tmp_path / "out").exists()
    report = json.loads(capsys.readouterr().err.strip().splitlines()[-1])
    assert report["error"] == "config" and report["field"] == field


def test_missing_config_file(tmp_path):
    assert run(tmp_path, "epr", str(tmp_path / "nope.json")) == 2


def test_bad_thread_env(tmp_path, monkeypatch):
    monkeypatch.setenv("TMSV_FORGE_THREADS", "many")
    assert run(tmp_path, "optimize") == 2
    assert not (tmp_path / "out").exists()


def test_scan_ideal_r1_ridges(tmp_path):
    cfg = write_cfg(tmp_path, target={"r": 1.0}, tomography={"extent": 1.5, "step": 0.25})
    assert run(tmp_path, "scan", cfg) == 0
    manifest = load(tmp_path, "out", "manifest.json")
    assert [g["plane"] for g in manifest["grids"]] == ["re-re", "im-re", "re-im", "im-im"]

    def grid(name):
        data = np.loadtxt(tmp_path / "out" / name, delimiter=",", skiprows=1)
        return {(round(a, 6), round(b, 6)): v for a, b, v in data[:, :3]}

    rr, ii, ri = grid("chi_re_re.csv"), grid("chi_im_im.csv"), grid("chi_re_im.csv")
    # re-re is wide along x1 = -x2 (anti-correlated), im-im along x1 = x2
    assert rr[(0.5, -0.5)] > rr[(0.5, 0.5)]
    assert ii[(0.5, 0.5)] > ii[(0.5, -0.5)]
    assert ri[(0.5, 0.5)] == pytest.approx(ri[(0.5, -0.5)], abs=1e-10)
    assert ri[(0.75, 0.0)] == pytest.approx(ri[(0.0, 0.75)], abs=1e-10)
    side = load(tmp_path, "out", "chi_re_re.json")
    assert side["plane"] == "re-re" and side["target"]["r"] == 1.0


def test_scan_vacuum_identical_planes(tmp_path):
    cfg = write_cfg(tmp_path, target={"kind": "vacuum"}, tomography={"extent": 1.0, "step": 0.5})
    assert run(tmp_path, "scan", cfg) == 0
    cols = [np.loadtxt(tmp_path / "out" / f"chi_{p}.csv", delimiter=",", skiprows=1)[:, 2]
            for p in ("re_re", "im_re", "re_im", "im_im")]
    for c in cols[1:]:
        assert np.allclose(c, cols[0], atol=1e-12)


def test_scan_sampled_bit_identical(tmp_path):
    cfg = write_cfg(tmp_path, target={"r": 0.5}, tomography={"extent": 1.0, "step": 0.5, "planes": ["re-re"]})
    for out in ("a", "b"):
        assert run(tmp_path, "scan", cfg, out, ["--sampled", "--shots", "200", "--seed", "5"]) == 0
    assert (tmp_path / "a" / "chi_re_re.csv").read_bytes() == (tmp_path / "b" / "chi_re_re.csv").read_bytes()
    assert run(tmp_path, "scan", cfg, "c", ["--sampled", "--shots", "200", "--seed", "6"]) == 0
    assert (tmp_path / "a" / "chi_re_re.csv").read_bytes() != (tmp_path / "c" / "chi_re_re.csv").read_bytes()


def test_epr_ideal_vacuum_and_thermal(tmp_path):
    assert run(tmp_path, "epr", write_cfg(tmp_path, "a.json", target={"r": 1.0}), "ideal") == 0
    ideal = load(tmp_path, "ideal", "epr.json")["epr"]
    assert ideal["reid_value"] == pytest.approx(0.0046, abs=2e-4) and ideal["entangled"]
    assert run(tmp_path, "epr", write_cfg(tmp_path, "b.json", target={"kind": "vacuum"}), "vac") == 0
    vac = load(tmp_path, "vac", "epr.json")["epr"]
    assert vac["reid_value"] == pytest.approx(0.25, rel=0.01) and not vac["entangled"]
    noisy = write_cfg(tmp_path, "c.json", target={"r": 1.0}, noise={"n_bar_1": 0.06, "n_bar_2": 0.06},
                      tomography={"extent": 1.5, "step": 0.25})
    assert run(tmp_path, "epr", noisy, "thermal") == 0
    assert load(tmp_path, "thermal", "epr.json")["epr"]["reid_value"] > ideal["reid_value"]


def test_bell_auto_r1(tmp_path):
    cfg = write_cfg(tmp_path, target={"r": 1.0})
    assert run(tmp_path, "bell", cfg, "a", ["--seed", "3"]) == 0
    res = load(tmp_path, "a", "bell.json")
    assert abs(res["result"]["bell_signal"] - 2.31) <= 4 * res["result"]["sigma"]
    assert res["predicted_bell_signal"] == pytest.approx(2.31, abs=0.005)
    text = (tmp_path / "a" / "bell_trace.csv").read_text().splitlines()
    assert text[0] == "# classical_limit=2.0" and text[1] == "# tmsv_limit=2.32"
    assert text[2] == "shots,bell_signal,sigma"
    assert text[-1].startswith("251000,")
    assert run(tmp_path, "bell", cfg, "b", ["--seed", "4"]) == 0
    other = load(tmp_path, "b", "bell.json")
    assert other["result"]["bell_signal"] != res["result"]["bell_signal"]
    assert abs(other["result"]["bell_signal"] - 2.31) <= 4 * other["result"]["sigma"]


def test_bell_explicit_settings_and_schedule(tmp_path):
    cfg = write_cfg(tmp_path, target={"kind": "vacuum"},
                    bell={"settings": [-0.1248, 0.4041], "total_shots": 4000, "schedule": [100, 1000]})
    assert run(tmp_path, "bell", cfg) == 0
    lines = (tmp_path / "out" / "bell_trace.csv").read_text().splitlines()[3:]
    assert [int(l.split(",")[0]) for l in lines] == [100, 1000, 4000]
    assert load(tmp_path, "out", "bell.json")["predicted_bell_signal"] is None


def test_sweep_ideal_matches_theory(tmp_path):
    assert run(tmp_path, "sweep") == 0
    lines = (tmp_path / "out" / "sweep.csv").read_text().splitlines()
    assert lines[0] == "r,v_squeezed,v_antisqueezed,db_squeezed,db_antisqueezed,theory_db_squeezed,theory_db_antisqueezed"
    rows = np.array([[float(x) for x in l.split(",")] for l in lines[1:]])
    assert list(rows[:, 0]) == [0, 0.25, 0.75, 1.0, 1.25]
    for r, _, _, db_s, db_a, th_s, th_a in rows[1:]:
        assert db_s == pytest.approx(th_s, rel=0.02)
        assert db_a == pytest.approx(th_a, rel=0.02)
    assert rows[3, 4] == pytest.approx(-8.686, abs=5e-3)


def test_sweep_preserves_r_order(tmp_path):
    cfg = write_cfg(tmp_path, sweep={"r_values": [1.0, 0.0, 0.5]})
    assert run(tmp_path, "sweep", cfg) == 0
    lines = (tmp_path / "out" / "sweep.csv").read_text().splitlines()[1:]
    assert [l.split(",")[0] for l in lines] == ["1", "0", "0.5"]


def test_sweep_thermal_vacuum_row(tmp_path):
    cfg = write_cfg(tmp_path, sweep={"r_values": [0.0]}, noise={"n_bar_1": 0.06, "n_bar_2": 0.06})
    assert run(tmp_path, "sweep", cfg) == 0
    row = load(tmp_path, "out", "sweep.json")["rows"][0]
    # a thermal state has a narrower χ than the vacuum along both axes
    assert row["v_squeezed"] == pytest.approx(1 / 1.12, rel=1e-6)
    assert row["v_antisqueezed"] == pytest.approx(1 / 1.12, rel=1e-6)
    assert row["db_squeezed"] < 0


def test_fit_superposition_ideal(tmp_path):
    cfg = write_cfg(tmp_path, target={"kind": "superposition", "r": 1.0}, tomography={"extent": 3.0, "step": 0.25})
    assert run(tmp_path, "fit-superposition", cfg) == 0
    fit = load(tmp_path, "out", "superposition_fit.json")["fit"]
    assert abs(fit["c_1"] - fit["c_2"]) <= 0.05
    assert (tmp_path / "out" / "superposition_surface.csv").read_text().startswith("axis1,axis2,re_chi,fit\n")


def test_fit_superposition_synthetic_grid(tmp_path):
    csv, _ = synthetic_superposition_grid(0.57, 0.43, 0.60, 0.69).to_csv(tmp_path / "syn.csv")
    assert run(tmp_path, "fit-superposition", None, "out", ["--grid", str(csv)]) == 0
    fit = load(tmp_path, "out", "superposition_fit.json")["fit"]
    for key, want in zip(("c_1", "c_2", "r_1", "r_2"), (0.57, 0.43, 0.60, 0.69)):
        assert fit[key] == pytest.approx(want, rel=0.01)


def test_fit_superposition_missing_ridge_exit_4(tmp_path, capsys):
    small, _ = synthetic_superposition_grid(0.5, 0.5, 0.6, 0.6, extent=0.25).to_csv(tmp_path / "small.csv")
    assert run(tmp_path, "fit-superposition", None, "out", ["--grid", str(small)]) == 4
    assert json.loads(capsys.readouterr().err.strip())["error"] == "analysis"
    assert not (tmp_path / "out").exists()
    cfg = write_cfg(tmp_path, target={"kind": "vacuum"})
    assert run(tmp_path, "fit-superposition", cfg) == 4
    assert run(tmp_path, "fit-superposition", None, "out", ["--grid", str(tmp_path / "none.csv")]) == 2
