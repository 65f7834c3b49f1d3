"""Momentum step: the linear saddle-point solve for velocity and pressure.

The convective operators are assembled in skew-symmetrized form, so they are
exactly antisymmetric matrices and contribute nothing to the discrete kinetic
energy balance; together with the time-averaged lumped mass this is the
mechanism that makes the time discretization energy stable.  The diffusive
mass flux of the phase field enters the momentum equation through a second
skew operator weighted by the density increment per unit phase change; the
model switch turns exactly that coupling off (the simplified model follows
the classical volume-averaged formulation without the flux term).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from .fem import ScalarSpace, VelocitySpace, lumped_mass_diagonal
from .linalg import SaddleSystem, solve_saddle


@dataclass(frozen=True)
class ForceSpec:
    """External volume force density.

    kind 'constant': k0 everywhere; 'weighted': rho(phi) * k0 (gravitational
    acceleration k0); 'rotating': k0 rotated counterclockwise by
    2 pi rotations_per_unit * t, uniform in space; 'rotating-weighted': the
    rotating vector scaled by rho(phi); 'none': zero.
    """

    kind: str = "none"
    k0: tuple[float, float] = (0.0, 0.0)
    rotations_per_unit: float = 0.0

    def __post_init__(self):
        if self.kind not in ("none", "constant", "weighted", "rotating", "rotating-weighted"):
            raise ValueError(f"unknown force kind {self.kind!r}")

    def vector_at(self, t: float) -> np.ndarray:
        k = np.array(self.k0, dtype=float)
        if self.kind in ("rotating", "rotating-weighted"):
            theta = 2.0 * np.pi * self.rotations_per_unit * t
            c, s = np.cos(theta), np.sin(theta)
            k = np.array([c * k[0] - s * k[1], s * k[0] + c * k[1]])
        return k

    @property
    def density_weighted(self) -> bool:
        return self.kind in ("weighted", "rotating-weighted")


@dataclass(frozen=True)
class PhysParams:
    """Physical and discretization parameters of the two-phase model."""

    rho1: float = 0.001
    rho2: float = 0.019
    eta1: float = 0.01
    eta2: float = 0.01
    sigma: float = 1.0
    delta: float = 0.05
    mobility: float = 0.005
    force: ForceSpec = field(default_factory=ForceSpec)
    model: str = "agg"          # 'agg': with flux coupling; 'dss': without
    elements: str = "th"        # 'th': P2/P1 Taylor-Hood; 'p1p1': stabilized P1/P1
    bc: str = "noslip"

    def __post_init__(self):
        if self.rho1 <= 0 or self.rho2 <= 0:
            raise ValueError("specific densities must be positive")
        if self.eta1 <= 0 or self.eta2 <= 0:
            raise ValueError("viscosities must be positive")
        if self.mobility < 0:
            raise ValueError("mobility must be nonnegative")
        if self.delta <= 0 or self.sigma <= 0:
            raise ValueError("sigma and delta must be positive")
        if self.model not in ("agg", "dss"):
            raise ValueError(f"unknown model {self.model!r}")
        if self.elements not in ("th", "p1p1"):
            raise ValueError(f"unknown element pair {self.elements!r}")

    @property
    def velocity_degree(self) -> int:
        return 2 if self.elements == "th" else 1

    @property
    def atwood(self) -> float:
        return abs(self.rho1 - self.rho2) / (self.rho1 + self.rho2)


def density_from_phase(phi: np.ndarray, params: PhysParams) -> np.ndarray:
    """Affine mixture density (rho2 + rho1)/2 + (rho2 - rho1)/2 * phi, nodal."""
    return 0.5 * (params.rho2 + params.rho1) + 0.5 * (params.rho2 - params.rho1) * np.asarray(phi)


def viscosity_from_phase(phi: np.ndarray, params: PhysParams) -> np.ndarray:
    """Affine viscosity interpolation, mirroring the density law."""
    return 0.5 * (params.eta2 + params.eta1) + 0.5 * (params.eta2 - params.eta1) * np.asarray(phi)


def delta_rho(phi_old: np.ndarray, phi_new: np.ndarray, params: PhysParams) -> np.ndarray:
    """Nodal difference quotient of the density law, with the derivative as
    the fallback where the phase did not move.  Constant for the affine law,
    but evaluated nodally so a future nonlinear law slots in."""
    phi_old = np.asarray(phi_old, dtype=float)
    phi_new = np.asarray(phi_new, dtype=float)
    dphi = phi_new - phi_old
    drho = density_from_phase(phi_new, params) - density_from_phase(phi_old, params)
    slope = np.full_like(dphi, 0.5 * (params.rho2 - params.rho1))
    with np.errstate(invalid="ignore", divide="ignore"):
        quotient = np.where(dphi != 0.0, drho / np.where(dphi != 0.0, dphi, 1.0), slope)
    return quotient


def compute_flux_j(phi_old: np.ndarray, mu_new: np.ndarray, mobility: float,
                   space: ScalarSpace) -> np.ndarray:
    """Elementwise-constant diffusive mass flux -M grad(mu), shape (m, 2)."""
    from .fem import p1_gradients

    g, _ = p1_gradients(space.mesh)
    grad_mu = np.einsum("mk,mkd->md", mu_new[space.mesh.triangles], g)
    return -mobility * grad_mu


# ---------------------------------------------------------------------------
# operator assembly on the velocity space


def _vec_coo(vspace: VelocitySpace, blocks) -> sp.csr_array:
    """Assemble a vector-valued operator from per-element (nloc x nloc)
    component blocks: blocks[(a, b)] has shape (m, nloc, nloc)."""
    nodes = vspace.tri_nodes
    nloc = nodes.shape[1]
    n = vspace.n_nodes
    rows, cols, vals = [], [], []
    for (a, b), ke in blocks.items():
        rows.append(np.repeat(a * n + nodes, nloc, axis=1))
        cols.append(np.tile(b * n + nodes, (1, nloc)))
        vals.append(ke.reshape(ke.shape[0], -1))
    rows = np.concatenate([r.ravel() for r in rows])
    cols = np.concatenate([c.ravel() for c in cols])
    vals = np.concatenate([v.ravel() for v in vals])
    return sp.csr_array(sp.coo_array((vals, (rows, cols)),
                                     shape=(vspace.n_dofs, vspace.n_dofs)))


def _directional_convection(vspace: VelocitySpace, weight_qp: np.ndarray,
                            dir_qp: np.ndarray) -> sp.csr_array:
    """One-sided convection C[(a,i),(b,j)] = delta_ab
    int weight * shape_i * (dir . grad shape_j); weight and direction given at
    the quadrature points."""
    from .fem import QUAD_DEG4, element_chunks

    vals, grads, w = vspace.shape_table(QUAD_DEG4)

    def kernel(span):
        dgrad = np.einsum("mqd,mqnd->mqn", dir_qp[span], grads[span])
        return np.einsum("mq,mq,qi,mqj->mij", w[span], weight_qp[span], vals, dgrad)

    ke = np.concatenate(element_chunks(kernel, vspace.mesh.n_triangles), axis=0)
    return _vec_coo(vspace, {(0, 0): ke, (1, 1): ke})


def _p1_at_qp(vspace: VelocitySpace, nodal: np.ndarray) -> np.ndarray:
    from .fem import QUAD_DEG4

    lam = QUAD_DEG4.points
    tri = vspace.mesh.triangles
    return np.einsum("mk,qk->mq", nodal[tri], lam)


def _velocity_at_qp(vspace: VelocitySpace, v_dofs: np.ndarray) -> np.ndarray:
    from .fem import QUAD_DEG4

    vals, _, _ = vspace.shape_table(QUAD_DEG4)
    nodes = vspace.tri_nodes
    vx = np.einsum("mn,qn->mq", v_dofs[nodes], vals)
    vy = np.einsum("mn,qn->mq", v_dofs[vspace.n_nodes + nodes], vals)
    return np.stack([vx, vy], axis=-1)


def assemble_Na(vspace: VelocitySpace, rho_old: np.ndarray, v_old: np.ndarray) -> sp.csr_array:
    """Skew-symmetrized density-weighted convection: half the difference of
    the one-sided operator and its transpose, hence exactly antisymmetric."""
    rho_qp = _p1_at_qp(vspace, rho_old)
    v_qp = _velocity_at_qp(vspace, v_old)
    C = _directional_convection(vspace, rho_qp, v_qp)
    return 0.5 * (C - C.T)


def assemble_Nb(vspace: VelocitySpace, drho: np.ndarray, j_elem: np.ndarray,
                model: str = "agg") -> sp.csr_array:
    """Skew coupling of the diffusive mass flux into the momentum equation,
    weighted by the density increment per unit phase change.  Identically
    zero in the simplified ('dss') model."""
    if model == "dss":
        n = vspace.n_dofs
        return sp.csr_array((n, n))
    from .fem import QUAD_DEG4

    drho_qp = _p1_at_qp(vspace, drho)
    q = QUAD_DEG4.points.shape[0]
    j_qp = np.broadcast_to(j_elem[:, None, :], (j_elem.shape[0], q, 2))
    D = _directional_convection(vspace, drho_qp, j_qp)
    return 0.5 * (D - D.T)


def assemble_viscous(vspace: VelocitySpace, eta_old: np.ndarray) -> sp.csr_array:
    """int 2 eta D(u) : D(w) with the symmetrized gradient; symmetric positive
    semidefinite, kernel = rigid motions before boundary conditions."""
    eta_old = np.asarray(eta_old, dtype=float)
    if eta_old.min() <= 0:
        raise ValueError("viscosity must be positive")
    from .fem import QUAD_DEG4, element_chunks

    _, grads, w = vspace.shape_table(QUAD_DEG4)
    eta_qp = _p1_at_qp(vspace, eta_old)
    wq = w * eta_qp

    # 2 D(w_i^a) : D(w_j^b) = delta_ab grad_i . grad_j + d_b shape_i d_a shape_j
    def kernel(span):
        gdot = np.einsum("mq,mqid,mqjd->mij", wq[span], grads[span], grads[span])
        out = {}
        for a in range(2):
            for b in range(2):
                ke = np.einsum("mq,mqi,mqj->mij", wq[span],
                               grads[span, :, :, b], grads[span, :, :, a])
                if a == b:
                    ke = ke + gdot
                out[(a, b)] = ke
        return out

    parts = element_chunks(kernel, vspace.mesh.n_triangles)
    blocks = {key: np.concatenate([p[key] for p in parts], axis=0)
              for key in parts[0]}
    return _vec_coo(vspace, blocks)


def assemble_divergence(vspace: VelocitySpace, pspace: ScalarSpace) -> sp.csr_array:
    """B[l, (a, j)] = int shape_j^a d_a psi_l, the gradient-form coupling
    between velocity and the P1 pressure (rows sum to zero per column)."""
    from .fem import QUAD_DEG4

    vals, _, w = vspace.shape_table(QUAD_DEG4)
    lam = QUAD_DEG4.points
    gp1 = vspace.grads_p1
    tri = pspace.mesh.triangles
    nodes = vspace.tri_nodes
    n = vspace.n_nodes
    rows, cols, data = [], [], []
    for a in range(2):
        ke = np.einsum("mq,ml,qj->mlj", w, gp1[:, :, a], vals)
        rows.append(np.repeat(tri, nodes.shape[1], axis=1).ravel())
        cols.append(np.tile(a * n + nodes, (1, 3)).ravel())
        data.append(ke.ravel())
    return sp.csr_array(sp.coo_array(
        (np.concatenate(data), (np.concatenate(rows), np.concatenate(cols))),
        shape=(pspace.n_dofs, vspace.n_dofs)))


def assemble_stabilization(vspace: VelocitySpace, pspace: ScalarSpace,
                           eta_old: np.ndarray) -> sp.csr_array:
    """Pressure-projection stabilization for the equal-order pair:
    C_ij = int (1/eta) (psi_i - Pi0 psi_i)(psi_j - Pi0 psi_j) with Pi0 the
    elementwise mean; kernel = elementwise-constant pressures."""
    mesh = pspace.mesh
    areas = mesh.areas()
    eta_bar = np.asarray(eta_old, dtype=float)[mesh.triangles].mean(axis=1)
    # int (psi_i - 1/3)(psi_j - 1/3) = |K| [ (1 + delta_ij)/12 - 1/9 ]
    local = np.full((3, 3), 1.0 / 12.0 - 1.0 / 9.0)
    np.fill_diagonal(local, 1.0 / 6.0 - 1.0 / 9.0)
    ke = (areas / eta_bar)[:, None, None] * local[None, :, :]
    t = mesh.triangles
    rows = np.repeat(t, 3, axis=1)
    cols = np.tile(t, (1, 3))
    return sp.csr_array(sp.coo_array((ke.ravel(), (rows.ravel(), cols.ravel())),
                                     shape=(pspace.n_dofs, pspace.n_dofs)))


def assemble_rhs_K(vspace: VelocitySpace, pspace: ScalarSpace, mu_new: np.ndarray,
                   phi_new: np.ndarray, params: PhysParams, t: float,
                   rho_for_force: np.ndarray | None = None) -> np.ndarray:
    """Momentum right-hand side: int mu <grad phi, w_i> plus the external
    force work int <k(t), w_i> (with the density weight when configured)."""
    from .fem import QUAD_DEG4, p1_gradients

    vals, _, w = vspace.shape_table(QUAD_DEG4)
    lam = QUAD_DEG4.points
    mesh = pspace.mesh
    tri = mesh.triangles
    nodes = vspace.tri_nodes
    n = vspace.n_nodes
    out = np.zeros(vspace.n_dofs)

    mu_qp = np.einsum("mk,qk->mq", mu_new[tri], lam)
    gphi = np.einsum("mk,mkd->md", phi_new[tri], vspace.grads_p1)
    force = params.force.vector_at(t)
    if params.force.kind == "none":
        fx_qp = fy_qp = None
    elif params.force.density_weighted:
        rho = density_from_phase(phi_new, params) if rho_for_force is None else rho_for_force
        rho_qp = np.einsum("mk,qk->mq", rho[tri], lam)
        fx_qp = rho_qp * force[0]
        fy_qp = rho_qp * force[1]
    else:
        shape = mu_qp.shape
        fx_qp = np.full(shape, force[0])
        fy_qp = np.full(shape, force[1])

    for a in range(2):
        integrand = mu_qp * gphi[:, None, a]
        if fx_qp is not None:
            integrand = integrand + (fx_qp if a == 0 else fy_qp)
        ke = np.einsum("mq,qi->mi", w * integrand, vals)
        np.add.at(out, a * n + nodes, ke)
    return out


def assemble_external_force(vspace: VelocitySpace, pspace: ScalarSpace,
                            phi_new: np.ndarray, params: PhysParams, t: float) -> np.ndarray:
    """Only the external-force part of the right-hand side (used by the
    energy auditor so the work term matches the solve exactly)."""
    zero = np.zeros(pspace.n_dofs)
    return assemble_rhs_K(vspace, pspace, zero, zero, params, t,
                          rho_for_force=density_from_phase(phi_new, params))


def assemble_time_terms(vspace: VelocitySpace, rho_old: np.ndarray, rho_new: np.ndarray,
                        v_old: np.ndarray, tau: float) -> tuple[sp.csr_array, np.ndarray]:
    """Time discretization of the inertia with averaged lumped mass:
    matrix (M(rho_old) + M(rho_new)) / (2 tau), right-hand side
    M(rho_old) v_old / tau (the density-exchange term is already folded in)."""
    if tau <= 0:
        raise ValueError("tau must be positive")
    d_old = lumped_mass_diagonal(vspace, rho_old)
    d_new = lumped_mass_diagonal(vspace, rho_new)
    diag = np.concatenate([d_old + d_new, d_old + d_new]) / (2.0 * tau)
    mat = sp.csr_array(sp.diags_array(diag))
    rhs = np.concatenate([d_old, d_old]) / tau * v_old
    return mat, rhs


def apply_velocity_dirichlet(A: sp.csr_array, mask: np.ndarray) -> sp.csr_array:
    """Zero constrained rows and columns and put ones on the diagonal."""
    A = sp.csr_array(A)
    keep = ~mask
    d = sp.csr_array(sp.diags_array(keep.astype(float)))
    A = d @ A @ d
    A = A + sp.diags_array(mask.astype(float))
    return sp.csr_array(A)


def solve_momentum(vspace: VelocitySpace, pspace: ScalarSpace, params: PhysParams,
                   phi_old: np.ndarray, phi_new: np.ndarray, mu_new: np.ndarray,
                   v_old: np.ndarray, tau: float, t: float,
                   tol: float = 1e-9, B: sp.csr_array | None = None,
                   mean_weights: np.ndarray | None = None,
                   viscous: sp.csr_array | None = None,
                   convective: sp.csr_array | None = None,
                   stabilization: sp.csr_array | None = None,
                   saddle_cache=None) -> tuple[np.ndarray, np.ndarray]:
    """Assemble and solve the momentum saddle-point system for one step.

    The operators built from old-step data (viscous block, skew convection,
    pressure stabilization) may be passed in precomputed; within one time
    step they are constant across the splitting iterations."""
    from .fem import lumped_p1_weights

    rho_old = density_from_phase(phi_old, params)
    rho_new = density_from_phase(phi_new, params)
    eta_old = viscosity_from_phase(phi_old, params)
    drho = delta_rho(phi_old, phi_new, params)
    j_elem = compute_flux_j(phi_old, mu_new, params.mobility, pspace)

    if viscous is None:
        viscous = assemble_viscous(vspace, eta_old)
    if convective is None:
        convective = assemble_Na(vspace, rho_old, v_old)
    mat_t, rhs_t = assemble_time_terms(vspace, rho_old, rho_new, v_old, tau)
    G = mat_t + viscous + convective \
        + assemble_Nb(vspace, drho, j_elem, model=params.model)
    rhs = rhs_t + assemble_rhs_K(vspace, pspace, mu_new, phi_new, params, t)

    if B is None:
        B = assemble_divergence(vspace, pspace)
    if params.elements == "p1p1":
        C = stabilization if stabilization is not None \
            else assemble_stabilization(vspace, pspace, eta_old)
    else:
        C = None
    if mean_weights is None:
        mean_weights = lumped_p1_weights(pspace.mesh)

    mask = vspace.dirichlet_mask
    G = apply_velocity_dirichlet(G, mask)
    rhs = np.where(mask, 0.0, rhs)
    keepd = sp.csr_array(sp.diags_array((~mask).astype(float)))
    Bc = sp.csr_array(B @ keepd)

    system = SaddleSystem(G=G, B=Bc, C=C, mean_weights=mean_weights, rhs_v=rhs)
    v, p = solve_saddle(system, tol=tol, cache=saddle_cache)
    return v, p
