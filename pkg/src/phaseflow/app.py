"""Configuration, scenario presets, output writers, and the command line.

Configs are flat ``section.key = value`` text files; unknown keys are
rejected with a line number.  Scenario presets carry the parameter sets of
the validation experiments; values the literature leaves open (domain sizes,
initial geometry, force interpretation) are flagged in a ``# defaulted:``
block when a config is dumped.
"""

from __future__ import annotations

import os
import sys
from dataclasses import dataclass, field, fields, replace

import numpy as np

from .coupling import (
    AdaptivityConfig,
    RunConfig,
    RunResult,
    SplitTolerances,
    State,
    TimestepConfig,
    run,
)
from .errors import SolverError
from .fem import l2_distance, p1_at_p2_nodes
from .momentum import ForceSpec, PhysParams


@dataclass
class Config:
    """Flat solver configuration; attribute names map to ``section.key``."""

    # domain
    domain_x0: float = -1.0
    domain_x1: float = 1.0
    domain_y0: float = -1.0
    domain_y1: float = 1.0
    # physics
    physics_rho1: float = 0.001
    physics_rho2: float = 0.019
    physics_eta1: float = 0.01
    physics_eta2: float = 0.01
    physics_sigma: float = 1.0
    physics_delta: float = 0.05
    physics_mobility: float = 0.005
    physics_model: str = "agg"
    physics_force_kind: str = "none"
    physics_force_x: float = 0.0
    physics_force_y: float = 0.0
    physics_force_rotations: float = 0.0
    # discretization
    discretization_level: int = 6
    discretization_elements: str = "th"
    discretization_convection: str = "fv"
    discretization_bc: str = "noslip"
    # solver
    solver_eps_v: float = 1e-6
    solver_eps_phi: float = 1e-6
    solver_max_inner: int = 50
    solver_newton_tol: float = 1e-12
    solver_audit: str = "log"
    solver_audit_tol: float = 1e-8
    # timestep
    timestep_safety: float = 0.9
    timestep_v_min: float = 10.0
    timestep_v_max: float = 1.0e5
    # adaptivity
    adaptivity_enabled: bool = False
    adaptivity_min_level: int = 4
    adaptivity_max_level: int = 8
    adaptivity_c_ref_phi: float = 0.1
    adaptivity_c_coarse_phi: float = 0.2
    adaptivity_c_ref_v: float = 0.1
    adaptivity_c_coarse_v: float = 0.5
    adaptivity_interface_target: int = 20
    # output
    output_dir: str = "out"
    output_snapshot_every: int = 0
    output_vtk_quadratic: bool = False
    # scenario
    scenario_name: str = ""
    scenario_tmax: float = 0.1
    scenario_interface: str = "circle"   # circle | ellipse | annulus | layer
    scenario_cx: float = 0.0
    scenario_cy: float = 0.0
    scenario_rx: float = 0.5
    scenario_ry: float = 0.5
    scenario_r_inner: float = 0.3
    scenario_r_outer: float = 0.5
    scenario_layer_y: float = 0.0
    scenario_layer_amplitude: float = 0.0
    scenario_layer_waves: float = 1.0
    scenario_seed: int = 0               # reserved, unused by the core
    # metadata: which keys were defaulted rather than literature-stated
    defaulted: tuple = field(default_factory=tuple)


def _key_of(attr: str) -> str:
    section, _, key = attr.partition("_")
    return f"{section}.{key}"


_CONFIG_FIELDS = {f.name: f for f in fields(Config) if f.name != "defaulted"}
_KEY_TO_ATTR = {_key_of(name): name for name in _CONFIG_FIELDS}


def _parse_value(raw: str, pytype):
    raw = raw.strip()
    if pytype is bool:
        if raw.lower() in ("true", "yes", "on", "1"):
            return True
        if raw.lower() in ("false", "no", "off", "0"):
            return False
        raise ValueError(f"not a boolean: {raw!r}")
    if pytype is int:
        return int(raw)
    if pytype is float:
        return float(raw)
    return raw


def load_config(path: str) -> Config:
    """Parse and validate a config file; errors carry the offending line."""
    cfg = Config()
    with open(path, "r", encoding="utf-8") as fh:
        lines = fh.readlines()
    seen_scenario = None
    for lineno, line in enumerate(lines, start=1):
        stripped = line.strip()
        if not stripped or stripped.startswith("#"):
            continue
        if "=" not in stripped:
            raise ValueError(f"{path}:{lineno}: expected 'section.key = value'")
        key, _, raw = stripped.partition("=")
        key = key.strip()
        attr = _KEY_TO_ATTR.get(key)
        if attr is None:
            raise ValueError(f"{path}:{lineno}: unknown key {key!r}")
        pytype = type(getattr(Config(), attr))
        try:
            value = _parse_value(raw, pytype)
        except ValueError as exc:
            raise ValueError(f"{path}:{lineno}: {exc}") from exc
        if attr == "scenario_name":
            seen_scenario = value
        setattr(cfg, attr, value)
    if seen_scenario:
        base = preset(seen_scenario)
        # preset values first, explicit keys override
        merged = replace(base)
        for lineno, line in enumerate(lines, start=1):
            stripped = line.strip()
            if not stripped or stripped.startswith("#") or "=" not in stripped:
                continue
            key, _, raw = stripped.partition("=")
            attr = _KEY_TO_ATTR[key.strip()]
            setattr(merged, attr, _parse_value(raw, type(getattr(Config(), attr))))
        cfg = merged
    validate_config(cfg)
    return cfg


def validate_config(cfg: Config) -> None:
    def require(cond, name, msg):
        if not cond:
            raise ValueError(f"{name} {msg}")

    require(cfg.physics_delta > 0, "physics.delta", "must be > 0")
    require(cfg.physics_sigma > 0, "physics.sigma", "must be > 0")
    require(cfg.physics_rho1 > 0 and cfg.physics_rho2 > 0, "physics.rho*", "must be > 0")
    require(cfg.physics_eta1 > 0 and cfg.physics_eta2 > 0, "physics.eta*", "must be > 0")
    require(cfg.physics_mobility >= 0, "physics.mobility", "must be >= 0")
    require(cfg.physics_model in ("agg", "dss"), "physics.model", "must be agg or dss")
    require(cfg.discretization_elements in ("th", "p1p1"),
            "discretization.elements", "must be th or p1p1")
    require(cfg.discretization_convection in ("fv", "fe"),
            "discretization.convection", "must be fv or fe")
    require(cfg.discretization_bc in ("noslip", "freeslip"),
            "discretization.bc", "must be noslip or freeslip")
    require(cfg.discretization_level >= 2 and cfg.discretization_level % 2 == 0,
            "discretization.level", "must be an even integer >= 2")
    require(cfg.scenario_tmax >= 0, "scenario.tmax", "must be >= 0")
    require(cfg.solver_audit in ("strict", "log"), "solver.audit", "must be strict or log")
    require(cfg.domain_x1 > cfg.domain_x0 and cfg.domain_y1 > cfg.domain_y0,
            "domain", "must be a nondegenerate rectangle")
    require(cfg.scenario_interface in ("circle", "ellipse", "annulus", "layer"),
            "scenario.interface", "unknown interface kind")
    ForceSpec(kind=cfg.physics_force_kind,
              k0=(cfg.physics_force_x, cfg.physics_force_y),
              rotations_per_unit=cfg.physics_force_rotations)


def dump_config(cfg: Config) -> str:
    lines = []
    if cfg.defaulted:
        lines.append("# defaulted: values not stated by the validation literature:")
        for name in cfg.defaulted:
            lines.append(f"#   {name}")
    section = None
    for attr in _CONFIG_FIELDS:
        key = _key_of(attr)
        sec = key.split(".", 1)[0]
        if sec != section:
            lines.append("")
            section = sec
        value = getattr(cfg, attr)
        if isinstance(value, bool):
            value = "true" if value else "false"
        elif isinstance(value, float):
            value = f"{value:.17g}"
        lines.append(f"{key} = {value}")
    return "\n".join(lines).lstrip("\n") + "\n"


# ---------------------------------------------------------------------------
# scenario presets


def preset(name: str) -> Config:
    """Fully populated configuration for one of the validation scenarios."""
    if name == "ellipse":
        return Config(
            scenario_name=name,
            domain_x0=-1.0, domain_x1=1.0, domain_y0=-1.0, domain_y1=1.0,
            scenario_interface="ellipse", scenario_cx=0.0, scenario_cy=0.0,
            scenario_rx=0.87, scenario_ry=0.29,
            physics_rho1=0.001, physics_rho2=0.019,
            physics_eta1=0.01, physics_eta2=0.01,
            physics_sigma=1.0, physics_delta=0.1, physics_mobility=0.5,
            physics_force_kind="none",
            discretization_level=8, discretization_elements="th",
            scenario_tmax=2.5,
            defaulted=("discretization.level", "scenario.tmax (stationary after t=1.5)",
                       "initial profile tanh(d / (sqrt(2) delta))"),
        )
    if name in ("rising-droplet", "rising-droplet-r025"):
        radius = 0.5 if name == "rising-droplet" else 0.25
        return Config(
            scenario_name=name,
            domain_x0=0.0, domain_x1=1.0, domain_y0=0.0, domain_y1=2.0,
            scenario_interface="circle", scenario_cx=0.5, scenario_cy=0.5,
            scenario_rx=radius, scenario_ry=radius,
            physics_rho1=0.015, physics_rho2=0.005,   # avg 0.01, |A| = 0.5
            physics_eta1=0.001, physics_eta2=0.001,
            physics_sigma=1.0, physics_delta=0.05, physics_mobility=0.005,
            physics_force_kind="weighted", physics_force_x=0.0, physics_force_y=-1.0e4,
            discretization_bc="freeslip",
            discretization_level=8, discretization_elements="th",
            scenario_tmax=0.05,
            defaulted=("discretization.level",
                       "physics.force_kind = weighted (buoyancy needs the density factor)",
                       "scenario.tmax"),
        )
    if name == "rayleigh-taylor":
        return Config(
            scenario_name=name,
            domain_x0=0.0, domain_x1=1.0, domain_y0=0.0, domain_y1=4.0,
            scenario_interface="layer", scenario_layer_y=2.0,
            scenario_layer_amplitude=0.05, scenario_layer_waves=1.0,
            physics_rho1=0.00075, physics_rho2=0.00125,  # avg 0.001, |A| = 0.25
            physics_eta1=1.0e-3, physics_eta2=1.0e-3,
            physics_sigma=0.1, physics_delta=0.1, physics_mobility=0.01,
            physics_force_kind="weighted", physics_force_x=0.0, physics_force_y=-1.0e5,
            discretization_level=8, discretization_elements="p1p1",
            scenario_tmax=0.14,
            defaulted=("domain ((0,1)x(0,4))", "initial perturbation (cosine, amplitude 0.05)",
                       "discretization.level", "discretization.bc",
                       "physics.force_kind = weighted", "scenario.tmax"),
        )
    if name == "rotating-annulus":
        return Config(
            scenario_name=name,
            domain_x0=-1.0, domain_x1=1.0, domain_y0=-1.0, domain_y1=1.0,
            scenario_interface="annulus", scenario_cx=0.0, scenario_cy=0.0,
            scenario_r_inner=0.3, scenario_r_outer=0.5,
            physics_rho1=0.001, physics_rho2=0.019,
            physics_eta1=0.01, physics_eta2=0.01,
            physics_sigma=1.0, physics_delta=0.05, physics_mobility=0.005,
            physics_force_kind="rotating-weighted",
            physics_force_x=0.0, physics_force_y=100.0,
            physics_force_rotations=5.0,
            discretization_level=8, discretization_elements="p1p1",
            scenario_tmax=0.37,
            defaulted=("annulus radii (0.3, 0.5)", "physics.eta*",
                       "physics.force_kind = rotating-weighted",
                       "discretization.level", "discretization.bc", "scenario.tmax"),
        )
    raise ValueError(f"unknown scenario {name!r}")


def initial_phase(cfg: Config):
    """tanh profile across the configured interface geometry."""
    width = np.sqrt(2.0) * cfg.physics_delta

    if cfg.scenario_interface == "circle":
        cx, cy, r = cfg.scenario_cx, cfg.scenario_cy, cfg.scenario_rx

        def dist(p):
            return r - np.sqrt((p[:, 0] - cx) ** 2 + (p[:, 1] - cy) ** 2)
    elif cfg.scenario_interface == "ellipse":
        cx, cy = cfg.scenario_cx, cfg.scenario_cy
        rx, ry = cfg.scenario_rx, cfg.scenario_ry

        def dist(p):
            x = p[:, 0] - cx
            y = p[:, 1] - cy
            e = np.sqrt((x / rx) ** 2 + (y / ry) ** 2)
            g = np.sqrt((x / rx**2) ** 2 + (y / ry**2) ** 2)
            denom = np.where(e > 1e-12, np.maximum(g / np.maximum(e, 1e-12), 1e-12), 1e-12)
            return (1.0 - e) / denom
    elif cfg.scenario_interface == "annulus":
        cx, cy = cfg.scenario_cx, cfg.scenario_cy
        r_in, r_out = cfg.scenario_r_inner, cfg.scenario_r_outer

        def dist(p):
            rr = np.sqrt((p[:, 0] - cx) ** 2 + (p[:, 1] - cy) ** 2)
            return np.minimum(rr - r_in, r_out - rr)
    elif cfg.scenario_interface == "layer":
        y0 = cfg.scenario_layer_y
        amp = cfg.scenario_layer_amplitude
        waves = cfg.scenario_layer_waves
        wx = cfg.domain_x1 - cfg.domain_x0

        def dist(p):
            mid = y0 + amp * np.cos(2.0 * np.pi * waves * (p[:, 0] - cfg.domain_x0) / wx)
            return p[:, 1] - mid
    else:
        raise ValueError(f"unknown interface {cfg.scenario_interface!r}")

    return lambda p: np.tanh(dist(p) / width)


def phys_params(cfg: Config) -> PhysParams:
    return PhysParams(
        rho1=cfg.physics_rho1, rho2=cfg.physics_rho2,
        eta1=cfg.physics_eta1, eta2=cfg.physics_eta2,
        sigma=cfg.physics_sigma, delta=cfg.physics_delta,
        mobility=cfg.physics_mobility,
        force=ForceSpec(kind=cfg.physics_force_kind,
                        k0=(cfg.physics_force_x, cfg.physics_force_y),
                        rotations_per_unit=cfg.physics_force_rotations),
        model=cfg.physics_model,
        elements=cfg.discretization_elements,
        bc=cfg.discretization_bc,
    )


def run_config(cfg: Config, snapshot_hook=None) -> RunConfig:
    return RunConfig(
        params=phys_params(cfg),
        domain=(cfg.domain_x0, cfg.domain_x1, cfg.domain_y0, cfg.domain_y1),
        base_level=cfg.discretization_level,
        t_end=cfg.scenario_tmax,
        phi0=initial_phase(cfg),
        tols=SplitTolerances(eps_v=cfg.solver_eps_v, eps_phi=cfg.solver_eps_phi,
                             max_inner=cfg.solver_max_inner),
        timestep=TimestepConfig(safety=cfg.timestep_safety, v_min=cfg.timestep_v_min,
                                v_max=cfg.timestep_v_max),
        adaptivity=AdaptivityConfig(
            enabled=cfg.adaptivity_enabled,
            min_level=cfg.adaptivity_min_level, max_level=cfg.adaptivity_max_level,
            c_ref_phi=cfg.adaptivity_c_ref_phi, c_coarse_phi=cfg.adaptivity_c_coarse_phi,
            c_ref_v=cfg.adaptivity_c_ref_v, c_coarse_v=cfg.adaptivity_c_coarse_v,
            interface_points_target=cfg.adaptivity_interface_target),
        convection=cfg.discretization_convection,
        newton_tol=cfg.solver_newton_tol,
        audit_tol=cfg.solver_audit_tol,
        audit_strict=(cfg.solver_audit == "strict"),
        snapshot_every=cfg.output_snapshot_every,
        snapshot_hook=snapshot_hook,
    )


# ---------------------------------------------------------------------------
# output writers


def _fmt(x: float) -> str:
    return f"{float(x):.17g}"


def write_vtk(state: State, path: str, quadratic: bool = False) -> None:
    """Legacy-VTK ASCII snapshot: triangles, nodal phi/mu/p, velocity vectors.

    By default the quadratic velocity is sampled at the primal vertices; with
    ``quadratic`` the midpoint-refined mesh is written instead so every
    velocity node appears (P1 fields are prolonged exactly)."""
    disc = state.disc
    mesh = disc.mesh
    if quadratic and disc.vspace.degree == 2:
        out_mesh = disc.vspace.half_mesh
        points = out_mesh.vertices
        tris = out_mesh.triangles
        phi = p1_at_p2_nodes(mesh, state.phi)
        mu = p1_at_p2_nodes(mesh, state.mu)
        p = p1_at_p2_nodes(mesh, state.p)
        n = disc.vspace.n_nodes
        vel = np.column_stack([state.v[:n], state.v[n:]])
    else:
        points = mesh.vertices
        tris = mesh.triangles
        phi, mu, p = state.phi, state.mu, state.p
        nv = mesh.n_vertices
        n = disc.vspace.n_nodes
        vel = np.column_stack([state.v[:n][:nv], state.v[n:][:nv]])

    lines = [
        "# vtk DataFile Version 3.0",
        f"phaseflow state t={_fmt(state.t)}",
        "ASCII",
        "DATASET UNSTRUCTURED_GRID",
        f"POINTS {len(points)} double",
    ]
    for x, y in points:
        lines.append(f"{_fmt(x)} {_fmt(y)} 0")
    lines.append(f"CELLS {len(tris)} {4 * len(tris)}")
    for a, b, c in tris:
        lines.append(f"3 {a} {b} {c}")
    lines.append(f"CELL_TYPES {len(tris)}")
    lines.extend(["5"] * len(tris))
    lines.append(f"POINT_DATA {len(points)}")
    for name, vals in (("phi", phi), ("mu", mu), ("p", p)):
        lines.append(f"SCALARS {name} double 1")
        lines.append("LOOKUP_TABLE default")
        lines.extend(_fmt(v) for v in vals)
    lines.append("VECTORS velocity double")
    for vx, vy in vel:
        lines.append(f"{_fmt(vx)} {_fmt(vy)} 0")
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("\n".join(lines) + "\n")


CSV_HEADER = ("t,tau,E_kin,E_int,E_total,D_visc,D_mob,W_ext,"
              "ineq_lhs,ineq_rhs,ineq_residual,mass_phi,min_phi,max_phi,dofs")


def write_energy_csv(records, path: str) -> None:
    lines = [CSV_HEADER]
    for r in records:
        e = r.energy
        lines.append(",".join([
            _fmt(r.t), _fmt(r.tau), _fmt(e.e_kin), _fmt(e.e_int), _fmt(e.e_total),
            _fmt(e.d_visc), _fmt(e.d_mob), _fmt(e.w_ext),
            _fmt(r.report.lhs), _fmt(r.report.rhs), _fmt(r.report.residual),
            _fmt(r.mass_phi), _fmt(r.phi_min), _fmt(r.phi_max), str(r.dofs),
        ]))
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("\n".join(lines) + "\n")


# ---------------------------------------------------------------------------
# command line


_SYNOPSIS = """usage: phaseflow run [config] [options]

options:
  --scenario NAME        ellipse | rising-droplet | rising-droplet-r025 |
                         rayleigh-taylor | rotating-annulus
  --level N              uniform refinement level (even integer >= 2)
  --tmax T               final time
  --model agg|dss        include or omit the diffusive-flux momentum coupling
  --elements th|p1p1     velocity/pressure pair
  --convection fv|fe     transport mode
  --force constant|weighted
  --out DIR              output directory (default: out)
  --audit strict|log     strict exits 2 on an energy-audit failure
  --eoc L1,L2,...        convergence study against a reference two levels
                         above the largest entry; prints an error table
  --vtk-quadratic        write snapshots on the midpoint-refined mesh
"""


_KNOWN_FLAGS = ("scenario", "level", "tmax", "model", "elements", "convection",
                "force", "out", "audit", "eoc")


def _parse_cli(argv: list[str]) -> dict:
    if not argv or argv[0] != "run":
        raise ValueError("expected the 'run' subcommand")
    args = {"config": None, "flags": {}}
    i = 1
    while i < len(argv):
        a = argv[i]
        if a == "--vtk-quadratic":
            args["flags"]["vtk_quadratic"] = True
            i += 1
            continue
        if a.startswith("--"):
            name = a[2:].replace("-", "_")
            if name not in _KNOWN_FLAGS:
                raise ValueError(f"unknown flag {a}")
            if i + 1 >= len(argv):
                raise ValueError(f"missing value for {a}")
            args["flags"][name] = argv[i + 1]
            i += 2
            continue
        if args["config"] is not None:
            raise ValueError(f"unexpected positional argument {a!r}")
        args["config"] = a
        i += 1
    return args


def _config_from_cli(args: dict) -> Config:
    flags = args["flags"]
    if args["config"] and "scenario" in flags:
        raise ValueError("give either a config file or --scenario, not both")
    if args["config"]:
        cfg = load_config(args["config"])
    elif "scenario" in flags:
        cfg = preset(flags["scenario"])
    else:
        raise ValueError("need a config file or --scenario")
    if "level" in flags:
        cfg.discretization_level = int(flags["level"])
    if "tmax" in flags:
        cfg.scenario_tmax = float(flags["tmax"])
    if "model" in flags:
        cfg.physics_model = flags["model"]
    if "elements" in flags:
        cfg.discretization_elements = flags["elements"]
    if "convection" in flags:
        cfg.discretization_convection = flags["convection"]
    if "audit" in flags:
        cfg.solver_audit = flags["audit"]
    if "out" in flags:
        cfg.output_dir = flags["out"]
    if flags.get("vtk_quadratic"):
        cfg.output_vtk_quadratic = True
    if "force" in flags:
        want = flags["force"]
        if want not in ("constant", "weighted"):
            raise ValueError("--force must be constant or weighted")
        rotating = cfg.physics_force_kind.startswith("rotating")
        if rotating:
            cfg.physics_force_kind = "rotating" if want == "constant" else "rotating-weighted"
        else:
            cfg.physics_force_kind = want
    validate_config(cfg)
    return cfg


def run_scenario(cfg: Config) -> tuple[RunResult, int]:
    """Execute a configured run, writing snapshots and the energy ledger.
    Returns the result and the process exit code."""
    os.makedirs(cfg.output_dir, exist_ok=True)
    quadratic = cfg.output_vtk_quadratic

    def hook(state: State, step_index: int) -> None:
        tag = "final" if step_index < 0 else f"{step_index:06d}"
        write_vtk(state, os.path.join(cfg.output_dir, f"state_{tag}.vtk"),
                  quadratic=quadratic)

    rc = run_config(cfg, snapshot_hook=hook)
    code = 0
    try:
        result = run(rc)
    except SolverError as exc:
        print(f"audit failure: {exc}", file=sys.stderr)
        return RunResult(state=None, records=[], audit_failures=1), 2
    with open(os.path.join(cfg.output_dir, "config.txt"), "w", encoding="utf-8") as fh:
        fh.write(dump_config(cfg))
    write_energy_csv(result.records, os.path.join(cfg.output_dir, "energy.csv"))
    if result.audit_failures and cfg.solver_audit == "strict":
        code = 2
    return result, code


def run_eoc(cfg: Config, levels: list[int]) -> list[tuple[int, float, float]]:
    """Convergence harness: final-time phase-field L2 errors of uniform runs
    against a reference two levels above the largest requested level."""
    levels = sorted(levels)
    ref_level = levels[-1] + 2
    solutions = {}
    for level in levels + [ref_level]:
        c = replace(cfg)
        c.discretization_level = level
        c.adaptivity_enabled = False
        rcfg = run_config(c)
        result = run(rcfg)
        solutions[level] = result.state
    ref = solutions[ref_level]
    width = cfg.domain_x1 - cfg.domain_x0
    rows = []
    for level in levels:
        st = solutions[level]
        err = l2_distance(st.disc.mesh, st.phi, ref.disc.mesh, ref.phi)
        rows.append((level, width * 2.0 ** (-level / 2), err))
    return rows


def cli_main(argv: list[str]) -> int:
    try:
        args = _parse_cli(argv)
        cfg = _config_from_cli(args)
    except (ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        print(_SYNOPSIS, file=sys.stderr)
        return 1

    if "eoc" in args["flags"]:
        try:
            levels = [int(s) for s in args["flags"]["eoc"].split(",") if s]
        except ValueError:
            print("error: --eoc expects a comma list of levels", file=sys.stderr)
            print(_SYNOPSIS, file=sys.stderr)
            return 1
        rows = run_eoc(cfg, levels)
        print(f"{'level':>6} {'h':>12} {'L2 error':>14} {'ratio':>8}")
        prev = None
        for level, h, err in rows:
            ratio = f"{prev / err:8.2f}" if prev else " " * 8
            print(f"{level:>6} {h:>12.6g} {err:>14.6e} {ratio}")
            prev = err
        return 0

    result, code = run_scenario(cfg)
    if result.state is not None:
        n = len(result.records)
        print(f"completed {n} steps to t={result.state.t:.6g}; "
              f"audit failures: {result.audit_failures}")
    return code


def main() -> None:
    sys.exit(cli_main(sys.argv[1:]))
