import numpy as np
import pytest

from swedg.cases import state_from, well_balanced_case
from swedg.cli import main
from swedg.io import (
    ConfigError,
    RunConfig,
    format_eoc_table,
    parse_config,
    read_field_snapshot,
    validate_config,
    write_field_snapshot,
    write_report,
)
from swedg.mesh import build_cartesian


def _cfg(tmp_path, text):
    p = tmp_path / "run.cfg"
    p.write_text(text)
    return p


def test_minimal_config_takes_case_defaults(tmp_path):
    cfg = parse_config(_cfg(tmp_path, "[case]\nname = wb\n"))
    assert (cfg.N, cfg.cfl, cfg.t_end, cfg.limiter) == (3, 0.9, 10.0, "frozen-random")
    assert (cfg.flux, cfg.formula, cfg.dt, cfg.seed) == ("ersing-jump", "new", None, 0)


def test_dam_break_defaults_and_alternative_formula(tmp_path):
    cfg = parse_config(_cfg(tmp_path, "[case]\nname = dam2d\n[solver]\nformula = alternative\n"))
    assert cfg.formula == "alternative"
    assert (cfg.N, cfg.cfl, cfg.t_end, cfg.limiter, cfg.every) == (4, 0.4, 2.0, "fct", 20)


def test_symmetric_flux_with_new_formula_rejected(tmp_path):
    text = "[case]\nname = wb\n[solver]\nflux = wintermeyer-symmetric\nformula = new\n"
    with pytest.raises(ConfigError, match="incompatible"):
        parse_config(_cfg(tmp_path, text))


def test_symmetric_flux_defaults_to_local_symmetric(tmp_path):
    cfg = parse_config(_cfg(tmp_path, "[case]\nname = wb\n[solver]\nflux = wintermeyer-symmetric\n"))
    assert cfg.formula == "local-symmetric"


@pytest.mark.parametrize("text, match", [
    ("[case]\nname = wb\ncolour = red\n", r"case\.colour"),
    ("[case]\nname = wb\n[extras]\nx = 1\n", "extras"),
    ("[case]\nname = lake\n", "unknown case"),
    ("[case]\nname = wb\n[time]\ncfl = -1\n", r"time\.cfl"),
    ("[case]\nname = wb\n[time]\ncfl = fast\n", r"time\.cfl"),
    ("[case]\nname = wb\n[solver]\nlimiter = magic\n", r"solver\.limiter"),
    ("[case]\nname = wb\n[solver]\nflux = roe\n", r"solver\.flux"),
    ("[case]\nname = manufactured\nelements = 16 60\n", r"case\.elements"),
    ("[case]\nname = channel\nmesh = missing.mesh\n", r"case\.mesh"),
    ("[solver]\nflux = ersing-jump\n", r"case\.name"),
])
def test_config_errors_name_the_key(tmp_path, text, match):
    with pytest.raises(ConfigError, match=match):
        parse_config(_cfg(tmp_path, text))


def test_overrides_replace_file_values(tmp_path):
    cfg = parse_config(_cfg(tmp_path, "[case]\nname = wb\n"), ["time.t_end=0.5", "case.seed=7"])
    assert cfg.t_end == 0.5 and cfg.seed == 7
    with pytest.raises(ConfigError, match="form"):
        parse_config(None, ["case.name"])


def test_dt_override_drops_default_cfl():
    cfg = validate_config(RunConfig(case="wb", dt=1e-3))
    assert cfg.cfl is None and cfg.dt == 1e-3


def test_shipped_configs_parse():
    import pathlib
    for p in sorted(pathlib.Path(__file__).parents[1].joinpath("configs").glob("*.cfg")):
        parse_config(p)


def test_snapshot_round_trip(tmp_path):
    mesh = build_cartesian((0, 1, 0, 1), 2, 3, 3, "periodic")
    rng = np.random.default_rng(0)
    u = state_from(rng.uniform(0.1, 2, mesh.jac.shape), rng.normal(size=mesh.jac.shape),
                   rng.normal(size=mesh.jac.shape))
    b = rng.random(mesh.jac.shape) / 3
    alpha = rng.random(mesh.jac.shape)
    p = write_field_snapshot(tmp_path / "s.txt", u, b, mesh, 0.1 + 0.2, alpha)
    snap = read_field_snapshot(p)
    assert snap.t == 0.1 + 0.2 and snap.N == 3 and snap.n_elements == 6
    np.testing.assert_allclose(snap.state(), u, rtol=1e-15, atol=0)
    np.testing.assert_allclose(snap.column("b"), b, rtol=1e-15, atol=0)
    np.testing.assert_allclose(snap.column("alpha"), alpha, rtol=1e-15, atol=0)
    np.testing.assert_allclose(snap.column("x"), mesh.coords[..., 0], rtol=1e-15, atol=0)
    assert snap.column("i")[0, 2, 1] == 2 and snap.column("j")[0, 2, 1] == 1
    assert snap.column("element")[5].min() == 5


def test_lake_snapshot_has_uniform_H(tmp_path):
    mesh = build_cartesian((0, 1, 0, 1), 1, 1, 3, "slip-wall")
    b = 0.25 * mesh.coords[..., 0]
    u = state_from(0.75 - b, 0.0, 0.0)
    snap = read_field_snapshot(write_field_snapshot(tmp_path / "lake.txt", u, b, mesh, 0.0))
    np.testing.assert_array_equal(snap.data["H"], 0.75)


def test_snapshot_row_count_checked(tmp_path):
    mesh = build_cartesian((0, 1, 0, 1), 1, 1, 1, "slip-wall")
    u = state_from(np.ones(mesh.jac.shape), 0, 0)
    p = write_field_snapshot(tmp_path / "s.txt", u, np.zeros(mesh.jac.shape), mesh, 0.0)
    lines = p.read_text().splitlines()
    p.write_text("\n".join(lines[:-1]) + "\n")
    with pytest.raises(ValueError, match="rows"):
        read_field_snapshot(p)


def test_report_and_eoc_table(tmp_path):
    p = write_report(tmp_path / "r.txt", {"a": 0.1, "b": "ok", "c": 3})
    assert p.read_text() == "a = 0.10000000000000001\nb = ok\nc = 3\n"
    errors = np.array([[8.73e-4, 1e-3, 1e-3], [5.59e-5, 6e-5, 6e-5]])
    orders = np.array([[np.nan] * 3, [3.97, 4.06, 4.06]])
    table = format_eoc_table([16, 64], errors, orders).splitlines()
    assert "N_elem" in table[0] and "EOC" in table[0]
    assert "--" in table[2] and "3.97" in table[3]


def test_cli_check_operators(capsys):
    assert main(["check-operators"]) == 0
    assert "PASS" in capsys.readouterr().out


def test_cli_check_equivalence(capsys):
    assert main(["check-equivalence", "--states", "3"]) == 0
    out = capsys.readouterr().out
    assert "curvilinear" in out and "PASS" in out


def test_cli_gen_mesh(tmp_path):
    from swedg.cases import default_channel_mesh_path
    p = tmp_path / "c.mesh"
    assert main(["gen-mesh", "channel", "-o", str(p)]) == 0
    assert p.read_text() == default_channel_mesh_path().read_text()


def test_cli_config_error_exit_status(tmp_path, capsys):
    assert main(["run", "--case", "wb", "--set", "solver.flux=wintermeyer-symmetric",
                 "--set", "solver.formula=new", "-o", str(tmp_path)]) == 1
    assert "incompatible" in capsys.readouterr().err
    assert main(["run"]) == 1


def _read_report(path):
    return dict(line.split(" = ", 1) for line in path.read_text().splitlines())


def test_cli_short_wb_run_is_deterministic(tmp_path, capsys):
    outs = []
    for k in range(2):
        d = tmp_path / f"r{k}"
        assert main(["run", "--case", "wb", "--set", "time.max_steps=3", "--set", "output.every=1",
                     "-o", str(d)]) == 0
        outs.append(d)
    capsys.readouterr()
    files = sorted(f.name for f in outs[0].iterdir())
    assert "report.txt" in files and "snapshot_000003.txt" in files
    for name in files:
        assert (outs[0] / name).read_bytes() == (outs[1] / name).read_bytes()
    rep = _read_report(outs[0] / "report.txt")
    assert rep["status"] == "ok" and rep["steps"] == "3"
    assert float(rep["max_abs_H_minus_H0"]) <= 1e-13


def test_cli_channel_gauges_deterministic(tmp_path, capsys):
    csvs = []
    for k in range(2):
        d = tmp_path / f"c{k}"
        assert main(["run", "--case", "channel", "--set", "time.max_steps=2", "-o", str(d)]) == 0
        csvs.append((d / "gauges.csv").read_bytes())
    capsys.readouterr()
    assert csvs[0] == csvs[1]
    lines = csvs[0].decode().splitlines()
    assert lines[0] == "t,G1,G2,G3,G4,G5,G6"
    assert len(lines) == 4


def test_cli_solver_failure_exit_status(tmp_path, capsys, monkeypatch):
    import swedg.cli as cli

    real = cli.build_case

    def poisoned(cfg):
        case = real(cfg)
        case.u0 = case.u0.copy()
        case.u0[0, 0, 0, 1] = np.nan
        return case

    monkeypatch.setattr(cli, "build_case", poisoned)
    assert main(["run", "--case", "wb", "--set", "time.max_steps=2", "-o", str(tmp_path)]) == 2
    assert "aborted" in capsys.readouterr().err
    assert _read_report(tmp_path / "report.txt")["status"].startswith("failed")
