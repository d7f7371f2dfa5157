import math

import pytest

from porowg import cli
from porowg.cli import (COLUMNS, ConfigError, config_from_mapping, emit_table, load_configs,
                        main, read_table_csv, run_experiment, run_oracle_suite)
from porowg.oracle import DimensionCapError


def small(**kw):
    return config_from_mapping({"problem": "elasticity2d", "mesh_n": [2, 4], "lambda": [1.0, 1e4], **kw})


def test_config_validation():
    for bad in ({"mesh_n": []}, {"lambda": []}, {"dt": []}, {"tol": 0.0}, {"tol": 1.5}, {"restart": 0},
                {"solver": "cg"}, {"precond": "lower"}, {"solver": "minres", "precond": "tri"},
                {"regularize": "off"}, {"problem": "stokes"}, {"rho_mode": "fixed(-1)"}, {"rho_mode": "often"}):
        with pytest.raises(ConfigError):
            small(**bad).validate()
    with pytest.raises(ConfigError):
        config_from_mapping({"colour": "red"})


def test_defaults():
    cfg = small().validate()
    assert cfg.resolved_tol() == 1e-10 and cfg.resolved_mu() == 0.5 and cfg.resolved_precond() == "diag"
    cfg = config_from_mapping({"problem": "elasticity3d", "solver": "gmres"}).validate()
    assert cfg.resolved_tol() == 1e-8 and cfg.resolved_precond() == "tri"
    cfg = config_from_mapping({"problem": "poro3_2d", "rho_mode": "fixed(0.5)"}).validate()
    assert cfg.resolved_tol() == 1e-8 and cfg.resolved_mu() == 1.0 and cfg.fixed_rho() == 0.5
    assert (cfg.maxit, cfg.restart) == (1000, 30)


def test_run_experiment_rows():
    results = run_experiment(small())
    assert len(results) == 4 and all(r.ok for r in results)
    row = results[0].row
    assert set(row) == set(COLUMNS)
    assert (row["N"], row["N_f"], row["dt"]) == (8, 16, None)
    assert all(r.row["outer_iters"] > 0 and r.row["final_relres"] <= 1e-10 for r in results)


def test_failed_cell_recorded():
    cfg = config_from_mapping({"problem": "poro3_2d", "mesh_n": [4], "lambda": [1e4], "maxit": 3})
    (res,) = run_experiment(cfg)
    assert not res.ok and res.row["outer_iters"] == 3 and res.row["final_relres"] > cfg.resolved_tol()


def test_csv_roundtrip_and_determinism(tmp_path):
    cfg = config_from_mapping({"problem": "poro2_2d", "mesh_n": [2], "lambda": [1.0, 1e4], "dt": [1e-3],
                               "solver": "gmres"})
    first = run_experiment(cfg)
    emit_table(first, "csv", tmp_path / "a.csv")
    assert read_table_csv(tmp_path / "a.csv") == [r.row for r in first]
    second = run_experiment(cfg)
    strip = [{k: v for k, v in r.row.items() if k != "wall_time_s"} for r in second]
    assert strip == [{k: v for k, v in r.row.items() if k != "wall_time_s"} for r in first]


def test_single_row_csv():
    (res,) = run_experiment(config_from_mapping({"mesh_n": [2]}))
    text = emit_table([res])
    assert text.splitlines()[0] == ",".join(COLUMNS) and len(text.splitlines()) == 2


def test_emit_errors(tmp_path):
    with pytest.raises(ValueError):
        emit_table([])
    (res,) = run_experiment(config_from_mapping({"mesh_n": [2]}))
    with pytest.raises(ValueError):
        emit_table([res], "html")
    with pytest.raises(OSError):
        emit_table([res], "csv", tmp_path / "missing" / "t.csv")


def fake_row(solver, dt, lam, N):
    row = dict.fromkeys(COLUMNS, 0)
    row.update(problem="poro2_2d", solver=solver, dt=dt, N=N, outer_iters=7, regularized=1,
               final_relres=math.nan, precond="diag", **{"lambda": lam})
    return row


def test_markdown_layout():
    rows = [fake_row(s, dt, lam, N) for s in ("minres", "gmres") for dt in (1e-3, 1e-6) for lam in (1.0, 1e4)
            for N in (512, 2048, 8192, 32768)]
    lines = emit_table(rows, "markdown").splitlines()
    assert len(lines) == 2 + 8
    assert lines[0].count("N=") == 4
    assert lines[2].startswith("| MINRES | 0.001 | 1 |")


def test_toml_config(tmp_path):
    path = tmp_path / "c.toml"
    path.write_text('problem = "poro2_2d"\nmesh_n = [2]\ndt = 1e-6\n\n[[run]]\nsolver = "minres"\n\n'
                    '[[run]]\nsolver = "gmres"\nlambda = [1.0, 1e4]\n')
    a, b = load_configs(path)
    assert (a.solver, b.solver, b.lam, a.dt) == ("minres", "gmres", [1.0, 1e4], [1e-6])
    (c,) = load_configs(path, {"solver": "gmres"})[:1]
    assert c.solver == "gmres"
    path.write_text("problem = \n")
    with pytest.raises(ConfigError):
        load_configs(path)


def test_presets_cover_every_table_cell():
    grid = {
        "table1": ("elasticity2d", [1.0, 1e4], None, ["on"]),
        "table2": ("elasticity3d", [1.0, 1e4], None, ["on"]),
        "table3": ("poro2_2d", [1.0, 1e4], [1e-3, 1e-6], ["on"]),
        "table4": ("poro2_3d", [1.0, 1e4], [1e-3, 1e-6], ["on"]),
        "table5": ("poro3_2d", [1.0, 1e4], [1e-3, 1e-6], ["on", "off"]),
        "table6": ("poro3_3d", [1.0, 1e4], [1e-3, 1e-6], ["on", "off"]),
    }
    assert cli.preset_names() == sorted(grid)
    for name, (problem, lams, dts, regs) in grid.items():
        cells = set()
        for cfg in load_configs(cli.preset_path(name)):
            assert cfg.problem == problem and len(cfg.mesh_n) >= 2
            for lam in cfg.lam:
                for dt in (cfg.dt if dts else [None]):
                    cells.add((cfg.solver, cfg.resolved_precond(), cfg.regularize, lam, dt))
        want = {(s, p, r, lam, dt) for s, p in (("minres", "diag"), ("gmres", "tri")) for r in regs
                for lam in lams for dt in (dts or [None])}
        assert want <= cells


def test_oracle_suite():
    reports = run_oracle_suite(cases=("two_field",), lams=(1.0,))
    assert reports and all(r.passed for r in reports)
    with pytest.raises(DimensionCapError):
        run_oracle_suite(dims=(3,), ns=[10])


def test_main_exit_codes(tmp_path, capsys):
    out = tmp_path / "r.csv"
    assert main(["run", "--problem", "elasticity2d", "--mesh-n", "2", "--lambda", "1,1e4", "--out", str(out)]) == 0
    assert len(read_table_csv(out)) == 2
    assert main(["run", "--mesh-n", ""]) == 2
    assert main(["run", "--config", str(tmp_path / "nope.toml")]) == 2
    assert main(["run", "--problem", "poro3_2d", "--mesh-n", "4", "--lambda", "1e4", "--maxit", "2"]) == 1
    assert main(["oracle", "--dim", "3", "--n", "10"]) == 2
    assert main(["oracle", "--n", "2", "--case", "two_field", "--lambda", "1"]) == 0
    assert main(["mesh", "--dim", "2", "--n", "2", "--dump", str(tmp_path / "m.txt")]) == 0
    assert "N_f = 16" in capsys.readouterr().out
    assert main(["run", "--list-presets"]) == 0


def test_oracle_violation_exit_code(monkeypatch, capsys):
    real = cli.oracle.verify_bounds

    def tampered(case, mesh, params, blocks=None):
        reports = real(case, mesh, params, blocks=blocks)
        reports[0].violations.append((reports[0].min, reports[0].lower))
        return reports

    monkeypatch.setattr(cli.oracle, "verify_bounds", tampered)
    assert main(["oracle", "--n", "2", "--case", "two_field", "--lambda", "1"]) == 3
    assert "FAIL" in capsys.readouterr().out
