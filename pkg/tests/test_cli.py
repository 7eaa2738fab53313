"""Command-line front end: exit codes, file outputs, determinism."""

import json

import numpy as np
import pytest

from penlab.cli import console_main


def write_config(tmp_path, obj, name="cfg.json"):
    path = tmp_path / name
    path.write_text(json.dumps(obj))
    return str(path)


def test_missing_config_exits_2(tmp_path, capsys):
    code = console_main(["profile", "--config", str(tmp_path / "absent.json"),
                         "--out", str(tmp_path)])
    assert code == 2
    assert "not found" in capsys.readouterr().err


def test_profile_schwarzschild_row(tmp_path):
    code = console_main(["profile", "--out", str(tmp_path)])
    assert code == 0
    rows = (tmp_path / "profile.csv").read_text().strip().split("\n")
    assert rows[0] == "r,rho,F,V"
    row4 = next(r for r in rows if r.startswith("4,"))
    _, rho, F, _ = (float(v) for v in row4.split(","))
    assert abs(rho - 2.9142136) < 1e-6
    assert abs(F - 1.1715729) < 1e-6


def test_profile_flat_table(tmp_path):
    r = np.linspace(0.5, 50.0, 200)
    table = tmp_path / "flat.csv"
    table.write_text("r,phi,V\n" + "\n".join(
        f"{v:.17g},1.0,1.0" for v in r) + "\n")
    cfg = write_config(tmp_path, {
        "reference": {"kind": "tabulated", "table": str(table)},
        "profile": {"r_min": 1.0, "r_max": 40.0, "points": 40},
    })
    code = console_main(["profile", "--config", cfg, "--out", str(tmp_path)])
    assert code == 0
    rows = (tmp_path / "profile.csv").read_text().strip().split("\n")[1:]
    for row in rows[::7]:
        rv, rho, F, V = (float(v) for v in row.split(","))
        assert abs(rho - rv) < 1e-10 * rv
        assert abs(F - 1.0) < 1e-12


def test_profile_extremal_reference_exits_2(tmp_path, capsys):
    cfg = write_config(tmp_path, {
        "reference": {"kind": "reissner_nordstrom", "m": 1.0, "e": 1.0}})
    code = console_main(["profile", "--config", cfg, "--out", str(tmp_path)])
    assert code == 2
    assert "schema" in capsys.readouterr().err


def test_flow_and_solve_outputs(tmp_path):
    cfg = write_config(tmp_path, {
        "surface": {"r0": 4.0},
        "flow": {"ds": 0.02, "s_max": 1.0, "store_every": 5,
                 "resolution": [16, 32]},
        "solver": {"u0": 1.2},
    })
    assert console_main(["flow", "--config", cfg, "--out", str(tmp_path)]) == 0
    series = (tmp_path / "flow_series.csv").read_text()
    assert series.startswith("s,min_cos_theta,min_kappa_rho2,min_rho")
    report = json.loads((tmp_path / "flow_report.json").read_text())
    assert report["all_conditions_passed"] and not report["aborted"]

    assert console_main(["solve", "--config", cfg,
                         "--out", str(tmp_path)]) == 0
    urep = json.loads((tmp_path / "solve_report.json").read_text())
    assert urep["decay_bounded"] and urep["halvings"] == 0
    assert (tmp_path / "u_series.csv").read_text().startswith(
        "s,max_u_minus_1,min_u")


def test_constants_flat_zeros(tmp_path):
    r = np.linspace(0.5, 60.0, 300)
    table = tmp_path / "flat.csv"
    table.write_text("r,phi,V\n" + "\n".join(
        f"{v:.17g},1.0,1.0" for v in r) + "\n")
    cfg = write_config(tmp_path, {
        "reference": {"kind": "tabulated", "table": str(table)},
        "profile": {"r_min": 1.0, "r_max": 50.0},
    })
    code = console_main(["constants", "--config", cfg,
                         "--out", str(tmp_path)])
    assert code == 0
    cons = json.loads((tmp_path / "constants.json").read_text())
    for key in ("C1", "C2", "C3", "C4", "C5"):
        assert cons[key] == 0.0


def test_verify_clean_suite(tmp_path):
    assert console_main(["verify", "--out", str(tmp_path)]) == 0
    summary = json.loads((tmp_path / "verify.json").read_text())
    assert summary["all_passed"]
    assert len(summary["checks"]) == 8


def test_verify_fault_injection(tmp_path, capsys):
    cfg = write_config(tmp_path, {"inject": "t_sign_flip"})
    code = console_main(["verify", "--config", cfg, "--out", str(tmp_path)])
    assert code == 1
    summary = json.loads((tmp_path / "verify.json").read_text())
    failed = [c["name"] for c in summary["checks"] if not c["passed"]]
    assert failed == ["t_function_consistency"]
    assert "t_function_consistency" in capsys.readouterr().err


def test_scenario_flagship_margin(tmp_path):
    cfg = write_config(tmp_path, {
        "flow": {"resolution": [8, 16]},
        "scenario": {"kind": "schwarzschild_interior", "inner_m": 1.2,
                     "r0": 4.0, "s_max": 10.0},
    })
    code = console_main(["scenario", "--config", cfg, "--out", str(tmp_path)])
    assert code == 0
    report = json.loads((tmp_path / "scenario.json").read_text())
    assert abs(report["margin"] - 0.0111456) < 2e-4
    assert report["verdict"] == "inequality holds"
    trace = (tmp_path / "energy_trace.csv").read_text()
    assert trace.startswith("s,E,dEds_numeric,dEds_formula")


def test_scenario_equality_margin_zero(tmp_path):
    cfg = write_config(tmp_path, {
        "flow": {"resolution": [8, 16]},
        "scenario": {"kind": "schwarzschild_interior", "inner_m": 1.0,
                     "r0": 4.0, "s_max": 6.0},
    })
    assert console_main(["scenario", "--config", cfg,
                         "--out", str(tmp_path)]) == 0
    report = json.loads((tmp_path / "scenario.json").read_text())
    assert report["margin"] == 0.0


def test_scenario_hypothesis_gate_exits_3(tmp_path):
    cfg = write_config(tmp_path, {
        "flow": {"resolution": [16, 32]},
        "scenario": {"kind": "custom", "r0": 6.0,
                     "horizon_area": 16 * np.pi, "boundary_u0": 1.1,
                     "perturbation": [[3, 2, 0.15]],
                     "ds": 0.02, "s_max": 2.0},
    })
    code = console_main(["scenario", "--config", cfg, "--out", str(tmp_path)])
    assert code == 3
    report = json.loads((tmp_path / "scenario.json").read_text())
    assert report["verdict"] == "hypotheses not met"


def test_scenario_declared_violation_exits_1(tmp_path):
    cfg = write_config(tmp_path, {
        "flow": {"resolution": [8, 16]},
        "scenario": {"kind": "custom", "r0": 6.0,
                     "horizon_area": 16 * np.pi * 9.0, "boundary_u0": 1.05,
                     "s_max": 5.0},
    })
    code = console_main(["scenario", "--config", cfg, "--out", str(tmp_path)])
    assert code == 1


def test_scenario_batch_parallel_deterministic(tmp_path):
    cfg = write_config(tmp_path, {
        "flow": {"resolution": [8, 16]},
        "scenarios": [
            {"kind": "schwarzschild_interior", "inner_m": 1.2, "r0": 4.0,
             "s_max": 6.0},
            {"kind": "schwarzschild_interior", "inner_m": 1.4, "r0": 8.0,
             "s_max": 6.0},
        ],
    })
    out1, out2 = tmp_path / "a", tmp_path / "b"
    assert console_main(["scenario", "--config", cfg, "--out", str(out1),
                         "--jobs", "2"]) == 0
    assert console_main(["scenario", "--config", cfg,
                         "--out", str(out2)]) == 0
    for name in ("scenario_0.json", "scenario_1.json",
                 "energy_trace_0.csv", "energy_trace_1.csv"):
        assert (out1 / name).read_bytes() == (out2 / name).read_bytes()


def test_resolution_flag(tmp_path, capsys):
    cfg = write_config(tmp_path, {
        "scenario": {"kind": "schwarzschild_interior", "inner_m": 1.2,
                     "r0": 4.0, "s_max": 6.0}})
    assert console_main(["scenario", "--config", cfg, "--out", str(tmp_path),
                         "--resolution", "8x16"]) == 0
    report = json.loads((tmp_path / "scenario.json").read_text())
    assert report["scenario"]["resolution"] == [8, 16]
    code = console_main(["scenario", "--config", cfg, "--out", str(tmp_path),
                         "--resolution", "8y16"])
    assert code == 2
    assert "resolution" in capsys.readouterr().err


def test_normalized_units(tmp_path):
    # all lengths in units of the reference mass; doubling m doubles E
    cfg = write_config(tmp_path, {
        "normalized": True,
        "reference": {"kind": "schwarzschild", "m": 2.0},
        "flow": {"resolution": [8, 16]},
        "scenario": {"kind": "schwarzschild_interior", "inner_m": 1.2,
                     "r0": 4.0, "s_max": 6.0},
    })
    assert console_main(["scenario", "--config", cfg,
                         "--out", str(tmp_path)]) == 0
    report = json.loads((tmp_path / "scenario.json").read_text())
    assert report["scenario"]["r0"] == 8.0
    assert abs(report["margin"] - 2 * 0.0111456) < 4e-4
