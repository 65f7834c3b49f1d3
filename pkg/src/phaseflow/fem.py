"""Finite element spaces on triangulations: continuous P1 scalars, P2 or P1
vector velocity spaces with Dirichlet handling, nodal interpolation, exact
quadrature, and the assembly kernels shared by the solvers.

Velocity mass matrices are lumped on the velocity space's own nodal mesh:
products of velocity basis functions are nodally interpolated on the midpoint
refinement for P2 (whose vertices are exactly the P2 nodes) and on the primal
mesh for P1.  Lumping makes those matrices diagonal and is what lets the
kinetic-energy telescoping of the stable time discretization hold to machine
precision.
"""

from __future__ import annotations

import os
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from .errors import GeometryError
from .mesh import Mesh, barycentric_coordinates, locate_points, midpoint_refine


def assembly_threads() -> int:
    """Degree of assembly parallelism, from PHASEFLOW_THREADS (default: cores)."""
    raw = os.environ.get("PHASEFLOW_THREADS", "")
    try:
        n = int(raw)
    except ValueError:
        n = 0
    if n < 1:
        n = os.cpu_count() or 1
    return n


def element_chunks(kernel, n_elements: int, min_chunk: int = 20000) -> list:
    """Evaluate ``kernel(slice)`` over the element range, split across the
    configured assembly threads for large meshes.  Chunks are returned in
    element order and each element's local arithmetic is unchanged, so the
    result is bitwise independent of the thread count."""
    threads = assembly_threads()
    if threads <= 1 or n_elements < 2 * min_chunk:
        return [kernel(slice(0, n_elements))]
    from concurrent.futures import ThreadPoolExecutor

    bounds = np.linspace(0, n_elements, threads + 1).astype(int)
    spans = [slice(int(a), int(b)) for a, b in zip(bounds[:-1], bounds[1:]) if b > a]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(kernel, spans))


@dataclass(frozen=True)
class Quadrature:
    """Symmetric rule on the reference triangle, exact to ``degree``.
    ``points`` are barycentric, ``weights`` sum to the reference area 1/2."""

    points: np.ndarray
    weights: np.ndarray
    degree: int


def _dunavant_degree4() -> Quadrature:
    a1, w1 = 0.445948490915965, 0.223381589678011
    a2, w2 = 0.091576213509771, 0.109951743655322
    pts = []
    wts = []
    for a, w in ((a1, w1), (a2, w2)):
        b = 1.0 - 2.0 * a
        pts += [(b, a, a), (a, b, a), (a, a, b)]
        wts += [w, w, w]
    return Quadrature(np.array(pts), 0.5 * np.array(wts), degree=4)


QUAD_DEG4 = _dunavant_degree4()


def p2_shape_values(lam: np.ndarray) -> np.ndarray:
    """Quadratic shape functions at barycentric points (q, 3) -> (q, 6).
    Nodes: 3 vertices, then 3 edge midpoints with edge k opposite vertex k."""
    l0, l1, l2 = lam[:, 0], lam[:, 1], lam[:, 2]
    return np.column_stack([
        l0 * (2 * l0 - 1),
        l1 * (2 * l1 - 1),
        l2 * (2 * l2 - 1),
        4 * l1 * l2,
        4 * l2 * l0,
        4 * l0 * l1,
    ])


def p2_shape_barygrad(lam: np.ndarray) -> np.ndarray:
    """Derivatives of the P2 shapes w.r.t. the barycentric coordinates,
    shape (q, 6, 3); physical gradients follow by chaining with grad(lambda)."""
    q = lam.shape[0]
    g = np.zeros((q, 6, 3))
    for k in range(3):
        g[:, k, k] = 4 * lam[:, k] - 1
    # edge node k couples the two barycentric coords other than k
    for k, (i, j) in enumerate(((1, 2), (2, 0), (0, 1))):
        g[:, 3 + k, i] = 4 * lam[:, j]
        g[:, 3 + k, j] = 4 * lam[:, i]
    return g


@dataclass(frozen=True)
class ScalarSpace:
    """Continuous piecewise linears; one dof per mesh vertex."""

    mesh: Mesh

    @property
    def n_dofs(self) -> int:
        return self.mesh.n_vertices

    def node_coords(self) -> np.ndarray:
        return self.mesh.vertices


class VelocitySpace:
    """Vector-valued continuous elements of degree 1 or 2 with component-major
    dof layout: dof(comp, node) = comp * n_nodes + node.

    ``bc`` selects which dofs carry essential conditions: 'noslip' pins both
    components of every boundary node, 'freeslip' pins only the component
    normal to the rectangle side (both at corners).
    """

    def __init__(self, mesh: Mesh, degree: int = 2, bc: str = "noslip"):
        if degree not in (1, 2):
            raise ValueError("velocity degree must be 1 or 2")
        if bc not in ("noslip", "freeslip"):
            raise ValueError(f"unknown boundary condition {bc!r}")
        self.mesh = mesh
        self.degree = degree
        self.bc = bc
        if degree == 2:
            self.nodes = np.concatenate([mesh.vertices, mesh.edge_midpoints()], axis=0)
            self.tri_nodes = np.column_stack([mesh.triangles, mesh.n_vertices + mesh.tri_edges])
            self.half_mesh = midpoint_refine(mesh)
        else:
            self.nodes = mesh.vertices
            self.tri_nodes = mesh.triangles
            self.half_mesh = None
        self.n_nodes = self.nodes.shape[0]
        self.n_dofs = 2 * self.n_nodes
        self._boundary_node_mask = self._compute_boundary_nodes()
        self.dirichlet_mask = self._compute_dirichlet()
        # geometry caches
        self.grads_p1, self.areas = p1_gradients(mesh)
        self._quad_cache: dict[int, tuple] = {}

    def _compute_boundary_nodes(self) -> np.ndarray:
        mask = np.zeros(self.n_nodes, dtype=bool)
        mesh = self.mesh
        bedges = mesh.boundary_edges
        mask[mesh.edges[bedges].ravel()] = True
        if self.degree == 2:
            mask[mesh.n_vertices + bedges] = True
        return mask

    def _compute_dirichlet(self) -> np.ndarray:
        mask = np.zeros(self.n_dofs, dtype=bool)
        bnodes = np.nonzero(self._boundary_node_mask)[0]
        if self.bc == "noslip":
            mask[bnodes] = True
            mask[self.n_nodes + bnodes] = True
            return mask
        x0, x1, y0, y1 = self.mesh.domain
        pts = self.nodes[bnodes]
        tol = 1e-12 * max(x1 - x0, y1 - y0)
        on_x = (np.abs(pts[:, 0] - x0) < tol) | (np.abs(pts[:, 0] - x1) < tol)
        on_y = (np.abs(pts[:, 1] - y0) < tol) | (np.abs(pts[:, 1] - y1) < tol)
        mask[bnodes[on_x]] = True
        mask[self.n_nodes + bnodes[on_y]] = True
        return mask

    # -- evaluation ------------------------------------------------------

    def shape_table(self, quad: Quadrature):
        """Per-element shape values and physical gradients at the quadrature
        points: values (q, nloc), grads (m, q, nloc, 2), scaled weights (m, q)."""
        key = id(quad)
        if key not in self._quad_cache:
            lam = quad.points
            if self.degree == 2:
                vals = p2_shape_values(lam)
                bg = p2_shape_barygrad(lam)  # (q, 6, 3)
                # physical grad: sum_k dN/dlam_k * grad(lam_k)
                grads = np.einsum("qnk,mkd->mqnd", bg, self.grads_p1)
            else:
                vals = lam.copy()
                grads = np.broadcast_to(
                    self.grads_p1[:, None, :, :], (self.mesh.n_triangles, lam.shape[0], 3, 2)
                ).copy()
            w = (2.0 * self.areas)[:, None] * quad.weights[None, :]
            self._quad_cache[key] = (vals, grads, w)
        return self._quad_cache[key]

    def eval_at_bary(self, dofs: np.ndarray, tri_ids: np.ndarray, lam: np.ndarray) -> np.ndarray:
        """Velocity vectors at barycentric points lam (k, 3) in tri_ids (k,)."""
        if self.degree == 2:
            shape = p2_shape_values(lam)
        else:
            shape = lam
        nodes = self.tri_nodes[tri_ids]
        ux = (dofs[nodes] * shape).sum(axis=1)
        uy = (dofs[self.n_nodes + nodes] * shape).sum(axis=1)
        return np.column_stack([ux, uy])

    def component_gradients_at_barycenter(self, dofs: np.ndarray) -> np.ndarray:
        """(m, 2, 2) array: [element, component, d/dx d/dy], P2 evaluated at
        the barycenter, exact for P1."""
        m = self.mesh.n_triangles
        if self.degree == 2:
            lam = np.full((1, 3), 1.0 / 3.0)
            bg = p2_shape_barygrad(lam)[0]  # (6, 3)
            gphys = np.einsum("nk,mkd->mnd", bg, self.grads_p1)  # (m, 6, 2)
        else:
            gphys = self.grads_p1
        nodes = self.tri_nodes
        gx = np.einsum("mn,mnd->md", dofs[nodes], gphys)
        gy = np.einsum("mn,mnd->md", dofs[self.n_nodes + nodes], gphys)
        out = np.empty((m, 2, 2))
        out[:, 0, :] = gx
        out[:, 1, :] = gy
        return out


def p1_gradients(mesh: Mesh) -> tuple[np.ndarray, np.ndarray]:
    """Constant gradients of the barycentric coordinates per element,
    (m, 3, 2), together with element areas."""
    p = mesh.vertices[mesh.triangles]
    a, b, c = p[:, 0], p[:, 1], p[:, 2]
    det = (b[:, 0] - a[:, 0]) * (c[:, 1] - a[:, 1]) - (b[:, 1] - a[:, 1]) * (c[:, 0] - a[:, 0])
    areas = 0.5 * np.abs(det)
    g = np.empty((mesh.n_triangles, 3, 2))
    # grad lambda_k = rot90(opposite edge) / det
    for k, (i, j) in enumerate(((1, 2), (2, 0), (0, 1))):
        e = p[:, j] - p[:, i]
        g[:, k, 0] = -e[:, 1] / det
        g[:, k, 1] = e[:, 0] / det
    return g, areas


def _coo(rows, cols, vals, shape) -> sp.csr_array:
    return sp.csr_array(sp.coo_array((vals.ravel(), (rows.ravel(), cols.ravel())), shape=shape))


# ---------------------------------------------------------------------------
# interpolation


def interpolate_nodal(f, space) -> np.ndarray:
    """Nodal interpolation onto a scalar or velocity space.

    ``f`` is either a vectorized callable (points (k, 2) -> values) or a tuple
    ``(source_space, dofs)`` with a P1 source field.  Scalar targets return
    (n,) arrays, velocity targets (2 * n_nodes,) component-major arrays.
    """
    if isinstance(space, ScalarSpace):
        pts = space.node_coords()
        if callable(f):
            return np.asarray(f(pts), dtype=float)
        src_space, dofs = f
        return _eval_p1(src_space.mesh, dofs, pts)
    pts = space.nodes
    if callable(f):
        vals = np.asarray(f(pts), dtype=float)
        if vals.shape != (space.n_nodes, 2):
            raise ValueError("vector interpolant must return (n, 2) values")
        return np.concatenate([vals[:, 0], vals[:, 1]])
    raise ValueError("P1 source into a velocity space needs a per-component callable")


def _eval_p1(mesh: Mesh, dofs: np.ndarray, pts: np.ndarray) -> np.ndarray:
    tri = locate_points(mesh, pts)
    lam = barycentric_coordinates(mesh, pts, tri)
    return (dofs[mesh.triangles[tri]] * lam).sum(axis=1)


def p1_at_p2_nodes(mesh: Mesh, vals: np.ndarray) -> np.ndarray:
    """Exact values of a P1 field at the quadratic node set (vertices then
    edge midpoints)."""
    e = mesh.edges
    return np.concatenate([vals, 0.5 * (vals[e[:, 0]] + vals[e[:, 1]])])


# ---------------------------------------------------------------------------
# scalar assembly


def assemble_stiffness(space: ScalarSpace, coeff) -> sp.csr_array:
    """P1 stiffness with a nonnegative scalar or nodal P1 coefficient,
    integrated exactly (the coefficient enters through its element mean)."""
    mesh = space.mesh
    g, areas = p1_gradients(mesh)
    if np.isscalar(coeff):
        if coeff < 0:
            raise ValueError("stiffness coefficient must be nonnegative")
        cbar = np.full(mesh.n_triangles, float(coeff))
    else:
        coeff = np.asarray(coeff, dtype=float)
        if coeff.min() < 0:
            raise ValueError("stiffness coefficient must be nonnegative")
        cbar = coeff[mesh.triangles].mean(axis=1)
    ke = np.einsum("m,mid,mjd->mij", cbar * areas, g, g)
    t = mesh.triangles
    rows = np.repeat(t, 3, axis=1)
    cols = np.tile(t, (1, 3))
    return _coo(rows, cols, ke, (space.n_dofs, space.n_dofs))


def assemble_p1_mass(space: ScalarSpace) -> sp.csr_array:
    """Consistent P1 mass matrix (|K|/6 diagonal, |K|/12 off-diagonal)."""
    mesh = space.mesh
    areas = mesh.areas()
    local = np.full((3, 3), 1.0 / 12.0)
    np.fill_diagonal(local, 1.0 / 6.0)
    ke = areas[:, None, None] * local[None, :, :]
    t = mesh.triangles
    rows = np.repeat(t, 3, axis=1)
    cols = np.tile(t, (1, 3))
    return _coo(rows, cols, ke, (space.n_dofs, space.n_dofs))


def lumped_p1_weights(mesh: Mesh) -> np.ndarray:
    """Integrals of the P1 hat functions (row sums of the mass matrix)."""
    w = np.zeros(mesh.n_vertices)
    np.add.at(w, mesh.triangles.ravel(), np.repeat(mesh.areas() / 3.0, 3))
    return w


def _nodal_mesh_integrals(tri_nodes: np.ndarray, areas: np.ndarray, nodal_weight: np.ndarray,
                          n_nodes: int) -> np.ndarray:
    """Per-node integrals of weight * hat_i over a P1 mesh given by tri_nodes,
    for a weight that is P1 on the same mesh: |K| (w_i/6 + w_a/12 + w_b/12)."""
    w = nodal_weight[tri_nodes]  # (m, 3)
    out = np.zeros(n_nodes)
    for k in range(3):
        contrib = areas * (w[:, k] / 6.0 + (w.sum(axis=1) - w[:, k]) / 12.0)
        np.add.at(out, tri_nodes[:, k], contrib)
    return out


def lumped_mass_diagonal(space: VelocitySpace, weight_p1: np.ndarray) -> np.ndarray:
    """Diagonal of the weighted lumped velocity mass matrix, per scalar node.

    The weight is a P1 field on the primal mesh; the lumping mesh is the
    midpoint refinement for P2 (weight restricted exactly) and the primal
    mesh for P1, so the result is the exact integral of weight * hat_i on the
    velocity space's own nodal mesh.
    """
    weight_p1 = np.asarray(weight_p1, dtype=float)
    if space.degree == 2:
        half = space.half_mesh
        w_nodes = p1_at_p2_nodes(space.mesh, weight_p1)
        return _nodal_mesh_integrals(half.triangles, half.areas(), w_nodes, space.n_nodes)
    return _nodal_mesh_integrals(space.mesh.triangles, space.areas, weight_p1, space.n_nodes)


def assemble_lumped_mass(space: VelocitySpace, weight_p1: np.ndarray) -> sp.csr_array:
    """Weighted lumped mass matrix on the full vector dof set (diagonal)."""
    d = lumped_mass_diagonal(space, weight_p1)
    return sp.csr_array(sp.diags_array(np.concatenate([d, d])))


# ---------------------------------------------------------------------------
# gradients and norms


def element_gradient_magnitudes(space, dofs: np.ndarray, component: int | None = None) -> np.ndarray:
    """|grad f| per element: exact for P1 scalars, barycenter value for P2."""
    if isinstance(space, ScalarSpace):
        g, _ = p1_gradients(space.mesh)
        vec = np.einsum("mk,mkd->md", dofs[space.mesh.triangles], g)
        return np.sqrt((vec**2).sum(axis=1))
    grads = space.component_gradients_at_barycenter(dofs)
    if component is None:
        raise ValueError("velocity fields need an explicit component")
    return np.sqrt((grads[:, component, :] ** 2).sum(axis=1))


def l2_norm_p1(space: ScalarSpace, dofs: np.ndarray, mass: sp.csr_array | None = None) -> float:
    M = assemble_p1_mass(space) if mass is None else mass
    return float(np.sqrt(dofs @ (M @ dofs)))


def l2_distance(coarse_mesh: Mesh, coarse_vals: np.ndarray,
                ref_mesh: Mesh, ref_vals: np.ndarray) -> float:
    """L2 distance between a P1 field and a reference P1 field on a finer
    nested mesh, via exact prolongation and exact quadrature on the reference
    mesh.  Raises GeometryError when the meshes are not nested."""
    if not _is_nested(coarse_mesh, ref_mesh):
        raise GeometryError("meshes are not nested; cannot form the L2 comparison")
    prolonged = _eval_p1(coarse_mesh, coarse_vals, ref_mesh.vertices)
    err = prolonged - ref_vals
    M = assemble_p1_mass(ScalarSpace(ref_mesh))
    return float(np.sqrt(max(err @ (M @ err), 0.0)))


def _is_nested(coarse: Mesh, fine: Mesh) -> bool:
    if coarse.domain != fine.domain or coarse.n_vertices > fine.n_vertices:
        return False
    fine_set = {tuple(np.round(v, 10)) for v in fine.vertices}
    return all(tuple(np.round(v, 10)) in fine_set for v in coarse.vertices)
