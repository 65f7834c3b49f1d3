import os

import numpy as np
import pytest

from phaseflow.app import (
    Config,
    cli_main,
    dump_config,
    initial_phase,
    load_config,
    preset,
    run_config,
    run_scenario,
    write_energy_csv,
    write_vtk,
)
from phaseflow.coupling import Discretization, State, initial_state, run
from phaseflow.mesh import build_structured_mesh
from phaseflow.momentum import PhysParams


# ------------------------------------------------------------------- config

def test_load_empty_file_with_scenario(tmp_path):
    p = tmp_path / "c.txt"
    p.write_text("scenario.name = ellipse\n")
    cfg = load_config(str(p))
    assert cfg.physics_mobility == 0.5
    assert cfg.scenario_rx == 0.87


def test_load_rejects_bad_delta(tmp_path):
    p = tmp_path / "c.txt"
    p.write_text("physics.delta = -1\n")
    with pytest.raises(ValueError, match="physics.delta"):
        load_config(str(p))


def test_load_rejects_unknown_key(tmp_path):
    p = tmp_path / "c.txt"
    p.write_text("physics.bogus = 3\n")
    with pytest.raises(ValueError, match="c.txt:1"):
        load_config(str(p))


def test_load_reports_line_numbers(tmp_path):
    p = tmp_path / "c.txt"
    p.write_text("# comment\n\nphysics.delta == 0.05\n")
    with pytest.raises(ValueError, match=":3"):
        load_config(str(p))


def test_config_round_trip(tmp_path):
    p = tmp_path / "c.txt"
    p.write_text("scenario.name = rising-droplet\nphysics.mobility = 0.125\n"
                 "solver.audit = strict\nadaptivity.enabled = true\n")
    cfg = load_config(str(p))
    assert cfg.physics_mobility == 0.125  # explicit key beats the preset
    assert cfg.adaptivity_enabled is True
    text1 = dump_config(cfg)
    p2 = tmp_path / "c2.txt"
    p2.write_text(text1)
    text2 = dump_config(load_config(str(p2)))
    assert text1 == text2


def test_preset_values_pinned():
    assert preset("ellipse").physics_mobility == 0.5
    assert preset("ellipse").physics_delta == 0.1
    rd = preset("rising-droplet")
    assert rd.physics_force_kind == "weighted"
    assert (rd.physics_force_x, rd.physics_force_y) == (0.0, -1.0e4)
    assert rd.physics_rho1 + rd.physics_rho2 == pytest.approx(0.02)  # avg 0.01
    assert preset("rayleigh-taylor").physics_sigma == 0.1
    ra = preset("rotating-annulus")
    assert ra.physics_force_rotations == 5.0
    assert preset("rising-droplet-r025").scenario_rx == 0.25
    with pytest.raises(ValueError):
        preset("nope")


def test_preset_dump_flags_defaulted_values():
    text = dump_config(preset("rayleigh-taylor"))
    assert "# defaulted:" in text
    assert "domain" in text


def test_initial_phase_shapes():
    cfg = preset("rotating-annulus")
    f = initial_phase(cfg)
    pts = np.array([[0.0, 0.4], [0.0, 0.0], [0.9, 0.9]])
    vals = f(pts)
    # centerline of the annulus is one strip half-width (0.1) from either
    # boundary: tanh(0.1 / (sqrt(2) * 0.05)) ~ 0.888
    assert vals[0] == pytest.approx(np.tanh(0.1 / (np.sqrt(2) * 0.05)), abs=1e-12)
    assert vals[1] < -0.9          # inner hole
    assert vals[2] < -0.9          # far field


# -------------------------------------------------------------------- vtk

def tiny_state():
    params = PhysParams()
    mesh = build_structured_mesh((0, 1, 0, 1), 2)
    disc = Discretization(mesh, params)
    return initial_state(disc, params, lambda p: np.ones(len(p))), params


def test_vtk_smoke(tmp_path):
    state, _ = tiny_state()
    path = tmp_path / "s.vtk"
    write_vtk(state, str(path))
    text = path.read_text()
    assert "CELL_TYPES" in text
    assert text.count("\n5") >= state.disc.mesh.n_triangles
    assert "SCALARS phi double 1" in text


def test_vtk_deterministic(tmp_path):
    state, _ = tiny_state()
    p1, p2 = tmp_path / "a.vtk", tmp_path / "b.vtk"
    write_vtk(state, str(p1))
    write_vtk(state, str(p2))
    assert p1.read_bytes() == p2.read_bytes()


def parse_vtk(path):
    """Minimal independent legacy-VTK reader for the round-trip check."""
    with open(path) as fh:
        tokens = fh.read().split()
    i = tokens.index("POINTS")
    n_pts = int(tokens[i + 1])
    pts = np.array([float(t) for t in tokens[i + 3:i + 3 + 3 * n_pts]]).reshape(-1, 3)
    j = tokens.index("CELLS")
    n_cells = int(tokens[j + 1])
    size = int(tokens[j + 2])
    raw = [int(t) for t in tokens[j + 3:j + 3 + size]]
    cells = []
    k = 0
    while k < len(raw):
        cnt = raw[k]
        cells.append(raw[k + 1:k + 1 + cnt])
        k += cnt + 1
    assert len(cells) == n_cells
    return pts, cells


def test_vtk_round_trip_with_independent_parser(tmp_path):
    state, _ = tiny_state()
    path = tmp_path / "s.vtk"
    write_vtk(state, str(path))
    pts, cells = parse_vtk(str(path))
    assert len(pts) == state.disc.mesh.n_vertices
    assert len(cells) == state.disc.mesh.n_triangles
    np.testing.assert_allclose(pts[:, :2], state.disc.mesh.vertices)


def test_vtk_quadratic_mesh(tmp_path):
    state, _ = tiny_state()
    path = tmp_path / "q.vtk"
    write_vtk(state, str(path), quadratic=True)
    pts, cells = parse_vtk(str(path))
    assert len(pts) == state.disc.vspace.n_nodes
    assert len(cells) == 4 * state.disc.mesh.n_triangles


# -------------------------------------------------------------------- csv

def test_csv_header_only_for_empty(tmp_path):
    path = tmp_path / "e.csv"
    write_energy_csv([], str(path))
    lines = path.read_text().strip().split("\n")
    assert len(lines) == 1
    assert lines[0].startswith("t,tau,E_kin,E_int,E_total")


def test_csv_rows_and_determinism(tmp_path):
    cfg = preset("ellipse")
    cfg.discretization_level = 4
    cfg.scenario_tmax = 2e-3
    out = run(run_config(cfg))
    pa, pb = tmp_path / "a.csv", tmp_path / "b.csv"
    write_energy_csv(out.records, str(pa))
    out2 = run(run_config(cfg))
    write_energy_csv(out2.records, str(pb))
    assert pa.read_bytes() == pb.read_bytes()
    lines = pa.read_text().strip().split("\n")
    assert len(lines) == len(out.records) + 1


# -------------------------------------------------------------------- cli

def test_cli_usage_error():
    assert cli_main(["bogus"]) == 1
    assert cli_main(["run", "--definitely-not-a-flag", "x"]) == 1
    assert cli_main(["run"]) == 1  # no config, no scenario


def test_cli_smoke_run(tmp_path, capsys):
    out = str(tmp_path / "out")
    code = cli_main(["run", "--scenario", "ellipse", "--level", "4",
                     "--tmax", "1e-3", "--out", out])
    assert code == 0
    assert os.path.exists(os.path.join(out, "energy.csv"))
    assert os.path.exists(os.path.join(out, "state_final.vtk"))
    assert os.path.exists(os.path.join(out, "config.txt"))


def test_cli_force_flag_switch(tmp_path):
    out = str(tmp_path / "out2")
    code = cli_main(["run", "--scenario", "rising-droplet", "--level", "4",
                     "--tmax", "1e-4", "--force", "constant", "--out", out])
    assert code == 0
    cfg_text = open(os.path.join(out, "config.txt")).read()
    assert "physics.force_kind = constant" in cfg_text


def test_cli_eoc_prints_table(tmp_path, capsys):
    code = cli_main(["run", "--scenario", "ellipse", "--elements", "p1p1",
                     "--tmax", "5e-4", "--eoc", "2,4"])
    assert code == 0
    out = capsys.readouterr().out
    assert "L2 error" in out
    assert "ratio" in out
