"""End-to-end checks of the command line front end, run in process."""

import json
import os
import subprocess
import sys

import numpy as np
import pytest

from cellfields import bfmod, cli, gauge, liegroup
from cellfields.complexes import CubicalComplexND

SU2 = liegroup.su_group(2)


def run_cli(capsys, tmp_path, command, cfg, *extra, name="cfg"):
    """Write cfg, invoke main, and return (rc, summary, out_dir)."""
    path = tmp_path / f"{name}.json"
    path.write_text(cfg if isinstance(cfg, str) else json.dumps(cfg))
    out = tmp_path / f"out_{name}"
    capsys.readouterr()
    rc = cli.main([command, "--config", str(path), "--out", str(out), *extra])
    lines = capsys.readouterr().out.strip().splitlines()
    assert len(lines) == 1
    return rc, json.loads(lines[0]), out


def read_csv(path):
    rows = [line.split(",") for line in path.read_text().splitlines()]
    return rows[0], rows[1:]


def mech_free_config(n_atoms=6):
    return {"version": 1, "variant": "free", "mass": 1.3, "n_atoms": n_atoms,
            "lapse": 0.25, "q_start": [0.0], "q_end": [1.0]}


def wave_config(**overrides):
    x = (2.0 * np.arange(5) + 1.0) * 0.15
    cfg = {"version": 1, "h": 0.1, "k": 0.15, "n_steps": 4,
           "initial": {"centers": list(np.sin(np.pi * x / 1.5)),
                       "tfaces": list(np.sin(np.pi * x / 1.5))}}
    cfg.update(overrides)
    return cfg


class TestConfigErrors:
    def test_malformed_json_exits_2_without_outputs(self, capsys, tmp_path):
        rc, summary, out = run_cli(capsys, tmp_path, "mech", "{not json")
        assert rc == 2
        assert summary["error"]["code"] == "config"
        assert not out.exists()

    def test_unknown_key_rejected(self, capsys, tmp_path):
        cfg = mech_free_config()
        cfg["frobnicate"] = 3
        rc, summary, out = run_cli(capsys, tmp_path, "mech", cfg)
        assert rc == 2
        assert "frobnicate" in summary["error"]["message"]
        assert not out.exists()

    def test_missing_and_wrong_version(self, capsys, tmp_path):
        cfg = mech_free_config()
        del cfg["version"]
        rc, _, _ = run_cli(capsys, tmp_path, "mech", cfg, name="a")
        assert rc == 2
        cfg["version"] = 99
        rc, summary, _ = run_cli(capsys, tmp_path, "mech", cfg, name="b")
        assert rc == 2
        assert "version" in summary["error"]["message"]

    def test_missing_config_file(self, capsys, tmp_path):
        capsys.readouterr()
        rc = cli.main(["mech", "--config", str(tmp_path / "absent.json")])
        assert rc == 2
        assert json.loads(capsys.readouterr().out)["error"]["code"] == "config"

    def test_no_subcommand_is_usage_error(self, capsys):
        assert cli.main([]) == 2

    def test_preexisting_out_dir_untouched_on_config_error(self, capsys,
                                                           tmp_path):
        out = tmp_path / "out_keep"
        out.mkdir()
        (out / "sentinel.txt").write_text("keep me")
        cfg = mech_free_config()
        cfg["mass"] = -1.0
        path = tmp_path / "bad.json"
        path.write_text(json.dumps(cfg))
        capsys.readouterr()
        rc = cli.main(["mech", "--config", str(path), "--out", str(out)])
        assert rc == 2
        assert os.listdir(out) == ["sentinel.txt"]

    def test_variant_key_mixups_rejected(self, capsys, tmp_path):
        cfg = mech_free_config()
        cfg["stiffness"] = 0.4
        rc, _, _ = run_cli(capsys, tmp_path, "mech", cfg, name="a")
        assert rc == 2
        cfg = mech_free_config()
        cfg["inertia"] = [1.0, 1.0, 1.0]
        rc, _, _ = run_cli(capsys, tmp_path, "mech", cfg, name="b")
        assert rc == 2


class TestMech:
    def test_free_particle_current_column_constant(self, capsys, tmp_path):
        rc, summary, out = run_cli(capsys, tmp_path, "mech", mech_free_config())
        assert rc == 0
        header, rows = read_csv(out / "mech.csv")
        assert header == ["atom", "residual_interior", "residual_gluing",
                          "current_minus", "current_plus", "omega_defect"]
        assert [int(r[0]) for r in rows] == [1, 2, 3, 4, 5, 6]
        currents = [float(v) for r in rows for v in (r[3], r[4])]
        # total time 6 * 2 * 0.25 = 3, so the momentum current is -m D / T
        want = -1.3 * 1.0 / 3.0
        assert np.max(np.abs(np.array(currents) - want)) <= 1e-12
        assert summary["current_spread"] <= 1e-12
        assert all(float(r[1]) <= 1e-10 and float(r[2]) <= 1e-10 for r in rows)
        assert abs(summary["symplectic_defect"]) <= 1e-12

    def test_rigid_currents_and_omega_rows(self, capsys, tmp_path):
        cfg = {"version": 1, "variant": "rigid", "inertia": [1.0, 1.7, 2.4],
               "n_atoms": 4, "lapse": 0.2, "rotation_end": [0.4, 0.2, -0.3],
               "generator": [0.0, 1.0, 0.0]}
        rc, summary, out = run_cli(capsys, tmp_path, "mech", cfg)
        assert rc == 0
        _, rows = read_csv(out / "mech.csv")
        currents = np.array([[float(r[3]), float(r[4])] for r in rows])
        assert np.max(currents) - np.min(currents) <= 1e-8
        assert all(abs(float(r[5])) <= 1e-9 for r in rows)
        assert summary["variant"] == "rigid"

    def test_harmonic_reproducible_bytes(self, capsys, tmp_path):
        cfg = {"version": 1, "variant": "harmonic", "mass": 1.1,
               "stiffness": 0.7, "n_atoms": 5, "lapse": 0.2,
               "q_start": [0.2, -0.1], "q_end": [0.6, 0.4]}
        _, _, out1 = run_cli(capsys, tmp_path, "mech", cfg, name="a")
        _, _, out2 = run_cli(capsys, tmp_path, "mech", cfg, name="b")
        assert (out1 / "mech.csv").read_bytes() == (out2 / "mech.csv").read_bytes()

    def test_rigid_antipodal_branch_ambiguity_exits_4(self, capsys, tmp_path):
        cfg = {"version": 1, "variant": "rigid", "inertia": [1.0, 1.7, 2.4],
               "n_atoms": 1, "lapse": 1.0, "rotation_end": [3.1, 0.0, 0.0]}
        rc, summary, out = run_cli(capsys, tmp_path, "mech", cfg, name="strict")
        assert rc == 4
        assert summary["error"]["code"] == "branch"
        assert not out.exists()
        cfg["branch_policy"] = "least-action"
        rc, summary, out = run_cli(capsys, tmp_path, "mech", cfg, name="policy")
        assert rc == 0
        assert "notice" in summary and len(summary["branch_actions"]) == 2
        assert (out / "mech.csv").exists()


class TestWave:
    def test_marched_solution_residual_columns(self, capsys, tmp_path):
        rc, summary, out = run_cli(capsys, tmp_path, "wave", wave_config())
        assert rc == 0
        header, rows = read_csv(out / "wave.csv")
        assert header[:6] == ["step", "residual_interior", "residual_gluing_t",
                              "residual_gluing_s", "noether_flux",
                              "multisymplectic_defect"]
        assert header[6:] == [f"phi_{j}" for j in range(5)]
        assert len(rows) == 5
        for r in rows:
            assert float(r[1]) <= 1e-10
            assert float(r[2]) <= 1e-10
            assert float(r[3]) <= 1e-10
        assert summary["residual_max"] <= 1e-10
        assert abs(summary["multisymplectic_defect"]) <= 1e-9

    def test_flux_column_only_for_symmetric_nonlinearity(self, capsys,
                                                         tmp_path):
        cubic = wave_config(nonlinearity={"kind": "cubic", "coefficient": 0.2})
        rc, summary, out = run_cli(capsys, tmp_path, "wave", cubic)
        assert rc == 0
        header, _ = read_csv(out / "wave.csv")
        assert "noether_flux" not in header
        assert "noether_drift" not in summary

    def test_spatially_constant_data_conserves_flux(self, capsys, tmp_path):
        cfg = {"version": 1, "h": 0.1, "k": 0.15, "n_steps": 3,
               "initial": {"centers": [0.4, 0.4, 0.4], "tfaces": [0.4, 0.4, 0.4]},
               "boundary": {"left": 0.4, "right": 0.4}}
        rc, _, out = run_cli(capsys, tmp_path, "wave", cfg)
        assert rc == 0
        _, rows = read_csv(out / "wave.csv")
        fluxes = [float(r[4]) for r in rows]
        assert np.max(np.abs(np.array(fluxes) - fluxes[0])) <= 1e-13
        assert all(float(r[6]) == 0.4 for r in rows)

    def test_initial_data_from_csv_path(self, capsys, tmp_path):
        (tmp_path / "init.csv").write_text(
            "centers,tfaces\n0.1,0.1\n0.5,0.45\n0.2,0.2\n")
        cfg = {"version": 1, "h": 0.1, "k": 0.15, "n_steps": 2,
               "initial": {"csv": "init.csv"}}
        rc, summary, _ = run_cli(capsys, tmp_path, "wave", cfg)
        assert rc == 0
        assert summary["n1"] == 3

    def test_bad_initial_csv_header_exits_2(self, capsys, tmp_path):
        (tmp_path / "init.csv").write_text("a,b\n0.1,0.1\n")
        cfg = {"version": 1, "h": 0.1, "k": 0.15, "n_steps": 2,
               "initial": {"csv": "init.csv"}}
        rc, summary, _ = run_cli(capsys, tmp_path, "wave", cfg)
        assert rc == 2
        assert "header" in summary["error"]["message"]

    def test_seeded_rerun_is_byte_identical(self, capsys, tmp_path):
        cfg = wave_config(nonlinearity={"kind": "cubic", "coefficient": 0.2})
        _, _, out1 = run_cli(capsys, tmp_path, "wave", cfg, "--seed", "7",
                             name="a")
        _, _, out2 = run_cli(capsys, tmp_path, "wave", cfg, "--seed", "7",
                             name="b")
        assert (out1 / "wave.csv").read_bytes() == (out2 / "wave.csv").read_bytes()


class TestLgt:
    def test_random_small_boundary_solve(self, capsys, tmp_path):
        cfg = {"version": 1, "dims": [2, 2], "beta": 1.1,
               "boundary": {"kind": "random-small", "radius": 0.2, "seed": 5}}
        rc, summary, out = run_cli(capsys, tmp_path, "lgt", cfg)
        assert rc == 0
        header, rows = read_csv(out / "lgt.csv")
        assert header == ["quantity", "value"]
        values = dict(rows)
        iters = [k for k in values if k.startswith("residual_iter_")]
        assert len(iters) >= 2
        assert float(values[f"residual_iter_{summary['iterations']}"]) <= 1e-9
        constraints = [float(v) for k, v in values.items()
                       if k.startswith("constraint_")]
        assert constraints and max(constraints) <= 1e-9
        assert float(values["action"]) >= 0.0
        assert abs(float(values["action_reduced"])
                   - summary["action_reduced"]) == 0.0

    def test_boundary_file_roundtrip(self, capsys, tmp_path):
        cplx = CubicalComplexND((1, 1))
        g = SU2.exp(SU2.algebra_element(0.05 * np.array([1.0, -0.5, 0.25])))
        entries = [
            {"face": list(r.face), "axis": r.axis, "sign": r.sign,
             "matrix": [[[float(np.real(x)), float(np.imag(x))] for x in row]
                        for row in np.asarray(g)]}
            for r in gauge.boundary_rlinks(cplx)
        ]
        (tmp_path / "bnd.json").write_text(json.dumps(entries))
        cfg = {"version": 1, "dims": [1, 1], "beta": 0.9,
               "boundary": {"kind": "file", "path": "bnd.json"}}
        rc, summary, _ = run_cli(capsys, tmp_path, "lgt", cfg)
        assert rc == 0
        assert summary["residual"] <= 1e-9

    def test_boundary_file_missing_key_exits_2(self, capsys, tmp_path):
        (tmp_path / "bnd.json").write_text(json.dumps(
            [{"face": [0, 1], "axis": 1, "sign": -1}]))
        cfg = {"version": 1, "dims": [1, 1], "beta": 0.9,
               "boundary": {"kind": "file", "path": "bnd.json"}}
        rc, summary, _ = run_cli(capsys, tmp_path, "lgt", cfg)
        assert rc == 2
        assert "matrix" in summary["error"]["message"]

    def test_stalled_solve_exits_3(self, capsys, tmp_path):
        cfg = {"version": 1, "dims": [2, 2], "beta": 1.0, "max_iter": 1,
               "boundary": {"kind": "random-small", "radius": 0.1, "seed": 2}}
        rc, summary, out = run_cli(capsys, tmp_path, "lgt", cfg)
        assert rc == 3
        assert summary["error"]["code"] == "solver"
        assert not out.exists()

    def test_large_boundary_radius_exits_4(self, capsys, tmp_path):
        cfg = {"version": 1, "dims": [1, 1], "beta": 1.0,
               "boundary": {"kind": "random-small", "radius": 2.5, "seed": 0}}
        rc, summary, _ = run_cli(capsys, tmp_path, "lgt", cfg)
        assert rc == 4
        assert summary["error"]["code"] == "branch"


class TestBF:
    def test_pure_solution_defects_vanish(self, capsys, tmp_path):
        cfg = {"version": 1, "dims": [2, 2]}
        rc, summary, out = run_cli(capsys, tmp_path, "bf", cfg)
        assert rc == 0
        _, rows = read_csv(out / "bf.csv")
        values = dict(rows)
        for key in ("residual_interior", "residual_wedge", "residual_gluing"):
            assert float(values[key]) <= 1e-12
        defects = [float(v) for k, v in values.items() if k.startswith("defect_")]
        assert defects and max(abs(d) for d in defects) <= 1e-9
        assert summary["is_solution"] is True

    def test_quadratic_interaction_reports_honest_residuals(self, capsys,
                                                            tmp_path):
        cfg = {"version": 1, "dims": [2, 2],
               "phi": {"kind": "quadratic", "coefficient": 0.02}}
        rc, summary, out = run_cli(capsys, tmp_path, "bf", cfg)
        assert rc == 0
        _, rows = read_csv(out / "bf.csv")
        values = dict(rows)
        assert "residual_multiplier" in values
        assert summary["is_solution"] is False
        assert summary["residual_max"] > 0.0

    def test_sgn_table_file_matches_builtin(self, capsys, tmp_path):
        table = bfmod.sign_product_table(2)
        entries = [[list(c1), list(c2), v] for (c1, c2), v in table.items()]
        (tmp_path / "sgn.json").write_text(json.dumps(entries))
        base = {"version": 1, "dims": [2, 2],
                "phi": {"kind": "quadratic", "coefficient": 0.02}}
        with_file = {"version": 1, "dims": [2, 2],
                     "phi": {"kind": "quadratic", "coefficient": 0.02,
                             "sgn_table": "sgn.json"}}
        _, _, out1 = run_cli(capsys, tmp_path, "bf", base, name="a")
        _, _, out2 = run_cli(capsys, tmp_path, "bf", with_file, name="b")
        assert (out1 / "bf.csv").read_bytes() == (out2 / "bf.csv").read_bytes()

    def test_invalid_sgn_table_exits_2(self, capsys, tmp_path):
        # diagonal entries must vanish
        (tmp_path / "sgn.json").write_text(json.dumps(
            [[[0, 1, 1, 1], [0, 1, 1, 1], 1]]))
        cfg = {"version": 1, "dims": [2, 2],
               "phi": {"kind": "quadratic", "sgn_table": "sgn.json"}}
        rc, summary, _ = run_cli(capsys, tmp_path, "bf", cfg)
        assert rc == 2
        assert "sign table" in summary["error"]["message"]

    def test_seed_controls_field_draw(self, capsys, tmp_path):
        cfg = {"version": 1, "dims": [2, 2]}
        _, s0, _ = run_cli(capsys, tmp_path, "bf", cfg, "--seed", "0", name="a")
        _, s1, _ = run_cli(capsys, tmp_path, "bf", cfg, "--seed", "1", name="b")
        _, s0b, _ = run_cli(capsys, tmp_path, "bf", cfg, "--seed", "0", name="c")
        assert s0["defect_max"] == s0b["defect_max"]
        assert s0["defect_max"] != s1["defect_max"]


class TestCanonicalCheck:
    def test_scalar_family_report(self, capsys, tmp_path):
        cfg = {"version": 1, "family": "scalar",
               "nonlinearity": {"kind": "cubic", "coefficient": 0.3}}
        rc, summary, out = run_cli(capsys, tmp_path, "canonical-check", cfg)
        assert rc == 0
        report = json.loads((out / "canonical_check.json").read_text())
        assert report["family"] == "scalar"
        for key in ("theta_hat", "theta", "omega_hat", "omega"):
            assert report[key] <= 1e-8
            assert report[key] == summary[key]
        assert report["max"] == max(report["theta_hat"], report["theta"],
                                    report["omega_hat"], report["omega"])

    def test_gauge_and_bf_families(self, capsys, tmp_path):
        for family, cfg in (
                ("gauge", {"version": 1, "family": "gauge", "beta": 1.2}),
                ("bf", {"version": 1, "family": "bf",
                        "phi": {"kind": "quadratic"}})):
            rc, summary, _ = run_cli(capsys, tmp_path, "canonical-check", cfg,
                                     name=family)
            assert rc == 0
            assert summary["max"] <= 1e-8

    def test_family_parameter_mixups_rejected(self, capsys, tmp_path):
        cfg = {"version": 1, "family": "scalar", "beta": 1.0}
        rc, _, _ = run_cli(capsys, tmp_path, "canonical-check", cfg, name="a")
        assert rc == 2
        cfg = {"version": 1, "family": "gauge", "n0": 3}
        rc, _, _ = run_cli(capsys, tmp_path, "canonical-check", cfg, name="b")
        assert rc == 2


class TestConverge:
    def test_particle_table_and_order(self, capsys, tmp_path):
        cfg = {"version": 1, "scenario": "particle", "scales": [4, 8, 16]}
        rc, summary, out = run_cli(capsys, tmp_path, "converge", cfg)
        assert rc == 0
        header, rows = read_csv(out / "converge.csv")
        assert header == ["scale", "bulk_defect", "boundary_defect",
                          "bulk_order", "boundary_order"]
        assert len(rows) == 3
        defects = [float(r[1]) for r in rows]
        assert defects[0] > defects[1] > defects[2]
        assert summary["bulk_order"] >= 1.0
        assert summary["boundary_order"] >= 1.0

    def test_threads_flag_keeps_bytes(self, capsys, tmp_path):
        cfg = {"version": 1, "scenario": "particle", "scales": [4, 8]}
        _, _, out1 = run_cli(capsys, tmp_path, "converge", cfg, name="a")
        _, _, out2 = run_cli(capsys, tmp_path, "converge", cfg, "--threads",
                             "3", name="b")
        assert (out1 / "converge.csv").read_bytes() == \
            (out2 / "converge.csv").read_bytes()

    def test_scales_validation(self, capsys, tmp_path):
        cfg = {"version": 1, "scenario": "particle", "scales": [4]}
        rc, _, _ = run_cli(capsys, tmp_path, "converge", cfg, name="a")
        assert rc == 2
        cfg = {"version": 1, "scenario": "particle", "scales": [4, 0]}
        rc, _, _ = run_cli(capsys, tmp_path, "converge", cfg, name="b")
        assert rc == 2


class TestEntryPoint:
    def test_module_invocation_round_trip(self, tmp_path):
        path = tmp_path / "cfg.json"
        path.write_text(json.dumps(mech_free_config(n_atoms=3)))
        out = tmp_path / "out"
        proc = subprocess.run(
            [sys.executable, "-m", "cellfields.cli", "mech", "--config",
             str(path), "--out", str(out)],
            capture_output=True, text=True)
        assert proc.returncode == 0
        lines = proc.stdout.strip().splitlines()
        assert len(lines) == 1
        summary = json.loads(lines[0])
        assert summary["command"] == "mech"
        assert (out / "mech.csv").exists()
