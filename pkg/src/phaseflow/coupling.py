"""Outer time loop: the split solve of one step, the adaptive time-increment
rule, gradient-based mesh adaptation, and the run driver.

One step alternates between the phase-field problem (finite-volume transport
plus implicit diffusion, or a monolithic implicit convection) and the linear
momentum solve, iterated until the sup-norm increments of velocity and phase
fall below the configured tolerances.  In the monolithic mode the converged
limit satisfies the coupled implicit scheme exactly, which is what the energy
audit certifies.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .cahn_hilliard import (
    DoubleWell,
    ch_diffusive_solve,
    face_normal_velocities,
    fe_convection_matrix,
    fv_transport_step,
)
from .energy import EnergyBreakdown, InequalityReport, step_inequality_check
from .errors import SolverError, StepRejected
from .fem import (
    ScalarSpace,
    VelocitySpace,
    assemble_p1_mass,
    assemble_stiffness,
    element_gradient_magnitudes,
    lumped_p1_weights,
)
from .linalg import solve_linear
from .mesh import (
    COARSEN,
    KEEP,
    REFINE,
    Mesh,
    build_dual_grid,
    build_structured_mesh,
    refine_and_coarsen,
)
from .momentum import PhysParams, assemble_divergence, solve_momentum


@dataclass(frozen=True)
class SplitTolerances:
    eps_v: float = 1e-6
    eps_phi: float = 1e-6
    max_inner: int = 50

    def __post_init__(self):
        if self.eps_v <= 0 or self.eps_phi <= 0 or self.max_inner < 1:
            raise ValueError("tolerances must be positive")


@dataclass(frozen=True)
class TimestepConfig:
    safety: float = 0.9
    v_min: float = 10.0
    v_max: float = 1.0e5

    def __post_init__(self):
        if not (0 < self.v_min < self.v_max):
            raise ValueError("need 0 < v_min < v_max")


@dataclass(frozen=True)
class AdaptivityConfig:
    enabled: bool = False
    c_ref_phi: float = 0.1
    c_coarse_phi: float = 0.2
    c_ref_v: float = 0.1
    c_coarse_v: float = 0.5
    min_level: int = 2
    max_level: int = 2
    interface_points_target: int = 20

    def __post_init__(self):
        for c in (self.c_ref_phi, self.c_coarse_phi, self.c_ref_v, self.c_coarse_v):
            if not (0.0 < c < 1.0):
                raise ValueError("marking constants must lie in (0, 1)")
        if self.min_level > self.max_level:
            raise ValueError("min_level must not exceed max_level")


class Discretization:
    """Per-mesh bundle of spaces, the dual grid, and cached matrices."""

    def __init__(self, mesh: Mesh, params: PhysParams):
        self.mesh = mesh
        self.sspace = ScalarSpace(mesh)
        self.vspace = VelocitySpace(mesh, degree=params.velocity_degree, bc=params.bc)
        self.dual = build_dual_grid(mesh)
        self.mass = assemble_p1_mass(self.sspace)
        self.stiffness = assemble_stiffness(self.sspace, 1.0)
        self.lumped = lumped_p1_weights(mesh)
        self.B = assemble_divergence(self.vspace, self.sspace)

    @property
    def n_phi(self) -> int:
        return self.sspace.n_dofs

    @property
    def total_dofs(self) -> int:
        # velocity + pressure + phase + chemical potential
        return self.vspace.n_dofs + 3 * self.sspace.n_dofs


@dataclass(frozen=True)
class State:
    """Snapshot of one accepted time level; all fields on the same mesh."""

    t: float
    phi: np.ndarray
    mu: np.ndarray
    v: np.ndarray
    p: np.ndarray
    disc: Discretization


def consistent_chemical_potential(disc: Discretization, phi: np.ndarray,
                                  dw: DoubleWell) -> np.ndarray:
    """mu solving the curvature equation for a given phase field (used for
    initial data, whose time stepping has not produced a mu yet)."""
    rhs = dw.sigma * dw.delta * (disc.stiffness @ phi) \
        + (dw.sigma / dw.delta) * disc.lumped * dw.f_prime(phi)
    return solve_linear(disc.mass, rhs, tol=1e-13)


def initial_state(disc: Discretization, params: PhysParams, phi0) -> State:
    dw = DoubleWell(sigma=params.sigma, delta=params.delta)
    phi = np.asarray(phi0(disc.mesh.vertices), dtype=float)
    mu = consistent_chemical_potential(disc, phi, dw)
    return State(t=0.0, phi=phi, mu=mu, v=np.zeros(disc.vspace.n_dofs),
                 p=np.zeros(disc.sspace.n_dofs), disc=disc)


def compute_timestep(state: State, cfg: TimestepConfig) -> float:
    """Grid size over interface propagation speed, with cut-offs:
    tau = safety * h * clamp(max_K max(|grad mu|_K, |v|_K), v_min, v_max)^-1."""
    disc = state.disc
    h = disc.mesh.min_edge_length()
    gmu = element_gradient_magnitudes(disc.sspace, state.mu)
    m = disc.mesh.n_triangles
    lam = np.full((m, 3), 1.0 / 3.0)
    speed = np.sqrt((disc.vspace.eval_at_bary(state.v, np.arange(m), lam) ** 2).sum(axis=1))
    estimator = float(np.maximum(gmu, speed).max())
    clamped = min(max(estimator, cfg.v_min), cfg.v_max)
    return cfg.safety * h / clamped


def mark_elements(state: State, cfg: AdaptivityConfig) -> np.ndarray:
    """Gradient-based marking; refinement always wins over coarsening and the
    element level (base + generation) stays within [min_level, max_level]."""
    disc = state.disc
    n = disc.mesh.n_triangles
    grads = disc.vspace.component_gradients_at_barycenter(state.v)
    indicators = [
        (element_gradient_magnitudes(disc.sspace, state.phi), cfg.c_ref_phi, cfg.c_coarse_phi),
        (np.sqrt((grads[:, 0, :] ** 2).sum(axis=1)), cfg.c_ref_v, cfg.c_coarse_v),
        (np.sqrt((grads[:, 1, :] ** 2).sum(axis=1)), cfg.c_ref_v, cfg.c_coarse_v),
    ]
    refine = np.zeros(n, dtype=bool)
    coarsen = np.ones(n, dtype=bool)
    for g, c_ref, c_coarse in indicators:
        lo, hi = float(g.min()), float(g.max())
        refine |= g > (1.0 - c_ref) * lo + c_ref * hi
        # coarsening needs the consent of every indicator, else the velocity
        # controls would coarsen the fringe of the interface band
        coarsen &= g <= (1.0 - c_coarse) * lo + c_coarse * hi
    level = disc.mesh.base_level + disc.mesh.generation
    refine &= level < cfg.max_level
    coarsen &= level > cfg.min_level
    marks = np.where(refine, REFINE, np.where(coarsen, COARSEN, KEEP)).astype(np.int8)
    return marks


@dataclass
class StepDiagnostics:
    inner_iterations: int = 0
    newton_iterations: int = 0
    dv: float = np.inf
    dphi: float = np.inf


@dataclass
class SolverCaches:
    """Factorization caches carried across steps; refreshed lazily."""

    saddle: object = None
    phase: object = None

    def __post_init__(self):
        from .linalg import FactorizationCache

        if self.saddle is None:
            self.saddle = FactorizationCache()
        if self.phase is None:
            self.phase = FactorizationCache()


def splitting_step(state: State, tau: float, params: PhysParams, tols: SplitTolerances,
                   convection: str = "fv", newton_tol: float = 1e-12,
                   saddle_tol: float = 1e-9,
                   caches: SolverCaches | None = None) -> tuple[State, StepDiagnostics]:
    """One time step of the split scheme.  Raises StepRejected when the inner
    loop does not contract within the iteration budget (the driver halves tau
    and retries) and propagates CFL violations of the transport stage."""
    if convection not in ("fv", "fe"):
        raise ValueError(f"unknown convection mode {convection!r}")
    disc = state.disc
    dw = DoubleWell(sigma=params.sigma, delta=params.delta)
    diags = StepDiagnostics()
    if caches is None:
        caches = SolverCaches()

    phi_k = state.phi
    v_k = state.v

    # operators of old-step data stay fixed across the inner iterations
    from .momentum import assemble_Na, assemble_stabilization, assemble_viscous, \
        density_from_phase, viscosity_from_phase

    eta_k = viscosity_from_phase(phi_k, params)
    viscous = assemble_viscous(disc.vspace, eta_k)
    convective = assemble_Na(disc.vspace, density_from_phase(phi_k, params), v_k)
    stab = assemble_stabilization(disc.vspace, disc.sspace, eta_k) \
        if params.elements == "p1p1" else None

    def ch_solve(v_dofs: np.ndarray, phi_guess: np.ndarray):
        if convection == "fv":
            u_n = face_normal_velocities(v_dofs, disc.vspace, disc.mesh, disc.dual)
            phi_half = fv_transport_step(phi_k, disc.dual, tau, order=2, u_n=u_n,
                                         verts=disc.mesh.vertices,
                                         cell_measures=disc.lumped)
            conv = None
        else:
            phi_half = phi_k
            conv = fe_convection_matrix(disc.sspace, v_dofs, disc.vspace)
        phi_new, mu_new, rep = ch_diffusive_solve(
            phi_half, phi_k, tau, params.mobility, dw, disc.sspace,
            newton_tol=newton_tol, conv_matrix=conv, phi_guess=phi_guess,
            mass=disc.mass, stiffness=disc.stiffness, lumped=disc.lumped,
            lin_cache=caches.phase)
        diags.newton_iterations += rep.newton_iterations
        return phi_new, mu_new

    phi_i, mu_i = ch_solve(v_k, phi_k)
    v_prev = v_k
    for it in range(1, tols.max_inner + 1):
        diags.inner_iterations = it
        try:
            v_i, p_i = solve_momentum(disc.vspace, disc.sspace, params,
                                      phi_k, phi_i, mu_i, v_k, tau, state.t,
                                      tol=saddle_tol, B=disc.B, mean_weights=disc.lumped,
                                      viscous=viscous, convective=convective,
                                      stabilization=stab, saddle_cache=caches.saddle)
        except SolverError as exc:
            raise StepRejected(f"momentum solve failed: {exc}") from exc
        phi_next, mu_next = ch_solve(v_i, phi_i)
        diags.dv = float(np.abs(v_i - v_prev).max())
        diags.dphi = float(np.abs(phi_next - phi_i).max())
        phi_i, mu_i, v_prev = phi_next, mu_next, v_i
        if diags.dv <= tols.eps_v and diags.dphi <= tols.eps_phi:
            new = State(t=state.t + tau, phi=phi_i, mu=mu_i, v=v_i, p=p_i, disc=disc)
            return new, diags
    raise StepRejected(
        f"inner splitting loop did not converge in {tols.max_inner} iterations "
        f"(dv={diags.dv:.3e}, dphi={diags.dphi:.3e})")


def transfer_state(state: State, new_mesh: Mesh, transfer, params: PhysParams) -> State:
    """Move all fields to an adapted mesh: nodal interpolation/restriction for
    the P1 fields, re-evaluation at the new velocity nodes for the velocity."""
    disc_new = Discretization(new_mesh, params)
    phi = transfer.apply_p1(state.phi)
    mu = transfer.apply_p1(state.mu)
    p = transfer.apply_p1(state.p)
    p = p - (disc_new.lumped @ p) / disc_new.lumped.sum()
    old_vs = state.disc.vspace
    from .mesh import locate_points, barycentric_coordinates

    pts = disc_new.vspace.nodes
    tri = locate_points(state.disc.mesh, pts, tol=1e-9)
    lam = barycentric_coordinates(state.disc.mesh, pts, tri)
    vec = old_vs.eval_at_bary(state.v, tri, lam)
    v = np.concatenate([vec[:, 0], vec[:, 1]])
    v = np.where(disc_new.vspace.dirichlet_mask, 0.0, v)
    return State(t=state.t, phi=phi, mu=mu, v=v, p=p, disc=disc_new)


@dataclass
class StepRecord:
    """One accepted step, as written to the energy CSV."""

    t: float
    tau: float
    energy: EnergyBreakdown
    report: InequalityReport
    mass_phi: float
    phi_min: float
    phi_max: float
    dofs: int
    interval: int  # fixed-mesh interval id (ledger checks stay within one)
    transfer_mass_drift: float = 0.0


@dataclass
class RunConfig:
    params: PhysParams
    domain: tuple[float, float, float, float]
    base_level: int
    t_end: float
    phi0: object  # vectorized callable points -> phi values
    tols: SplitTolerances = field(default_factory=SplitTolerances)
    timestep: TimestepConfig = field(default_factory=TimestepConfig)
    adaptivity: AdaptivityConfig = field(default_factory=AdaptivityConfig)
    convection: str = "fv"
    newton_tol: float = 1e-12
    audit_tol: float = 1e-8
    audit_strict: bool = False
    max_rejections: int = 5
    snapshot_every: int = 0
    snapshot_hook: object = None  # callable(state, step_index)
    max_steps: int = 10**9


@dataclass
class RunResult:
    state: State
    records: list[StepRecord]
    audit_failures: int
    states: list[State] | None = None


def _initial_adapted_state(cfg: RunConfig) -> State:
    mesh = build_structured_mesh(cfg.domain, cfg.base_level)
    disc = Discretization(mesh, cfg.params)
    state = initial_state(disc, cfg.params, cfg.phi0)
    if not cfg.adaptivity.enabled:
        return state
    # resolve the initial interface before stepping: re-sample the analytic
    # datum after every adaptation pass
    for _ in range(cfg.adaptivity.max_level - cfg.adaptivity.min_level + 2):
        marks = mark_elements(state, cfg.adaptivity)
        if not (marks == REFINE).any():
            break
        new_mesh, _ = refine_and_coarsen(state.disc.mesh, marks)
        disc = Discretization(new_mesh, cfg.params)
        state = initial_state(disc, cfg.params, cfg.phi0)
    return state


def run(cfg: RunConfig, keep_states: bool = False) -> RunResult:
    """Advance the coupled system to t_end.  Deterministic for a fixed config:
    iteration orders, marking, and solver paths carry no randomness."""
    state = _initial_adapted_state(cfg)
    records: list[StepRecord] = []
    states = [state] if keep_states else None
    interval = 0
    audit_failures = 0
    step_index = 0
    tiny = 1e-12 * max(cfg.t_end, 1.0)
    caches = SolverCaches()

    if cfg.snapshot_hook is not None:
        cfg.snapshot_hook(state, 0)

    while state.t < cfg.t_end - tiny and step_index < cfg.max_steps:
        tau = min(compute_timestep(state, cfg.timestep), cfg.t_end - state.t)
        new = None
        diags = None
        for _ in range(cfg.max_rejections):
            try:
                new, diags = splitting_step(state, tau, cfg.params, cfg.tols,
                                            convection=cfg.convection,
                                            newton_tol=cfg.newton_tol,
                                            caches=caches)
                break
            except StepRejected:
                tau *= 0.5
        if new is None:
            raise StepRejected(f"step at t={state.t:.6g} rejected "
                               f"{cfg.max_rejections} times")

        report, breakdown = step_inequality_check(
            state.disc.sspace, state.disc.vspace, cfg.params,
            state.phi, state.v, new.phi, new.mu, new.v, tau, state.t,
            tol=cfg.audit_tol, stiffness=state.disc.stiffness, lumped=state.disc.lumped)
        if not report.passed:
            audit_failures += 1
            if cfg.audit_strict:
                raise SolverError(
                    f"energy audit failed at t={new.t:.6g}: residual "
                    f"{report.residual:.3e} > {report.tolerance:.3e}")

        step_index += 1
        mass = float(state.disc.lumped @ new.phi)
        rec = StepRecord(t=new.t, tau=tau, energy=breakdown, report=report,
                         mass_phi=mass, phi_min=float(new.phi.min()),
                         phi_max=float(new.phi.max()), dofs=state.disc.total_dofs,
                         interval=interval)

        if cfg.adaptivity.enabled:
            marks = mark_elements(new, cfg.adaptivity)
            if (marks != KEEP).any():
                new_mesh, transfer = refine_and_coarsen(new.disc.mesh, marks)
                if new_mesh.n_triangles != new.disc.mesh.n_triangles or \
                        new_mesh.n_vertices != new.disc.mesh.n_vertices:
                    moved = transfer_state(new, new_mesh, transfer, cfg.params)
                    rec.transfer_mass_drift = float(
                        moved.disc.lumped @ moved.phi) - mass
                    new = moved
                    interval += 1

        records.append(rec)
        state = new
        if keep_states:
            states.append(state)
        if cfg.snapshot_hook is not None and cfg.snapshot_every > 0 \
                and step_index % cfg.snapshot_every == 0:
            cfg.snapshot_hook(state, step_index)

    if cfg.snapshot_hook is not None:
        cfg.snapshot_hook(state, -1)
    return RunResult(state=state, records=records, audit_failures=audit_failures,
                     states=states)
