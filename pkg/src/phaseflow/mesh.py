"""Conforming simplicial triangulations of rectangles and their Voronoi duals.

The meshes produced here stay inside the right-isosceles family: the base grid
splits squares along one diagonal, and refinement is newest-vertex bisection
(the refinement edge of every triangle is its hypotenuse).  All elements are
therefore non-obtuse, which keeps the distance-based dual grid well defined:
circumcenters never leave their element and every dual face is the true
perpendicular bisector segment of a primal edge.

Triangles are stored as vertex triples ``(a, b, peak)`` with positive
orientation; the refinement edge is ``(a, b)`` and ``peak`` is the newest
vertex.  Bisection of ``(a, b, peak)`` at ``m = (a + b) / 2`` produces the
children ``(peak, a, m)`` and ``(b, peak, m)``.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import GeometryError

REFINE = 1
KEEP = 0
COARSEN = -1

_DEG_TOL = 1e-12


@dataclass(frozen=True)
class Mesh:
    """Immutable conforming triangulation with bisection metadata.

    vertices      (n, 2) coordinates
    triangles     (m, 3) vertex indices, peak (newest vertex) last,
                  refinement edge = (t[0], t[1]), positively oriented
    generation    (m,) bisection generation counter
    base_level    refinement level of the generation-0 elements; the level of
                  an element is base_level + generation
    domain        (x0, x1, y0, y1) bounding rectangle
    """

    vertices: np.ndarray
    triangles: np.ndarray
    generation: np.ndarray
    base_level: int
    domain: tuple[float, float, float, float]
    # derived connectivity, filled in __post_init__
    edges: np.ndarray = field(default=None, repr=False)
    tri_edges: np.ndarray = field(default=None, repr=False)
    edge_tris: np.ndarray = field(default=None, repr=False)

    def __post_init__(self):
        verts = np.ascontiguousarray(np.asarray(self.vertices, dtype=float))
        tris = np.ascontiguousarray(np.asarray(self.triangles, dtype=np.int64))
        gen = np.ascontiguousarray(np.asarray(self.generation, dtype=np.int64))
        object.__setattr__(self, "vertices", verts)
        object.__setattr__(self, "triangles", tris)
        object.__setattr__(self, "generation", gen)
        edges, tri_edges, edge_tris = _build_connectivity(tris)
        object.__setattr__(self, "edges", edges)
        object.__setattr__(self, "tri_edges", tri_edges)
        object.__setattr__(self, "edge_tris", edge_tris)

    @property
    def n_vertices(self) -> int:
        return self.vertices.shape[0]

    @property
    def n_triangles(self) -> int:
        return self.triangles.shape[0]

    @property
    def n_edges(self) -> int:
        return self.edges.shape[0]

    @property
    def boundary_edges(self) -> np.ndarray:
        """Edge ids lying on the domain boundary (exactly one incident element)."""
        return np.nonzero(self.edge_tris[:, 1] < 0)[0]

    @property
    def boundary_vertex_mask(self) -> np.ndarray:
        mask = np.zeros(self.n_vertices, dtype=bool)
        mask[self.edges[self.boundary_edges].ravel()] = True
        return mask

    def areas(self) -> np.ndarray:
        p = self.vertices[self.triangles]
        return 0.5 * np.abs(_cross(p[:, 1] - p[:, 0], p[:, 2] - p[:, 0]))

    def min_edge_length(self) -> float:
        ev = self.vertices[self.edges[:, 1]] - self.vertices[self.edges[:, 0]]
        return float(np.sqrt((ev**2).sum(axis=1)).min())

    def edge_midpoints(self) -> np.ndarray:
        return 0.5 * (self.vertices[self.edges[:, 0]] + self.vertices[self.edges[:, 1]])

    def validate(self) -> None:
        """Assert the structural invariants (conformity, orientation, non-obtuseness)."""
        p = self.vertices[self.triangles]
        twice_area = _cross(p[:, 1] - p[:, 0], p[:, 2] - p[:, 0])
        if not np.all(twice_area > 0):
            raise GeometryError("triangle with non-positive orientation or zero area")
        counts = np.bincount(self.tri_edges.ravel(), minlength=self.n_edges)
        if counts.max() > 2:
            raise GeometryError("edge shared by more than two triangles")
        # non-obtuse: all three angles at most 90 degrees
        for k in range(3):
            u = p[:, (k + 1) % 3] - p[:, k]
            w = p[:, (k + 2) % 3] - p[:, k]
            if np.any((u * w).sum(axis=1) < -_DEG_TOL):
                raise GeometryError("obtuse triangle detected")
        # conformity: no vertex of one triangle lies strictly inside an edge
        # of another; with shared-edge bookkeeping this reduces to checking
        # that boundary edges form the rectangle boundary and interior edges
        # come in matched pairs, which _build_connectivity guarantees by
        # construction.  Hanging nodes would show up as duplicated edges with
        # a single incident triangle on an interior segment:
        mids = self.edge_midpoints()[self.boundary_edges]
        x0, x1, y0, y1 = self.domain
        on_bnd = (
            (np.abs(mids[:, 0] - x0) < _DEG_TOL)
            | (np.abs(mids[:, 0] - x1) < _DEG_TOL)
            | (np.abs(mids[:, 1] - y0) < _DEG_TOL)
            | (np.abs(mids[:, 1] - y1) < _DEG_TOL)
        )
        if not np.all(on_bnd):
            raise GeometryError("hanging node: single-sided edge away from the boundary")


def _cross(u: np.ndarray, w: np.ndarray) -> np.ndarray:
    return u[..., 0] * w[..., 1] - u[..., 1] * w[..., 0]


def _build_connectivity(tris: np.ndarray):
    m = tris.shape[0]
    # local edge k is opposite local vertex k
    e0 = tris[:, [1, 2]]
    e1 = tris[:, [2, 0]]
    e2 = tris[:, [0, 1]]
    all_edges = np.concatenate([e0, e1, e2], axis=0)
    all_edges = np.sort(all_edges, axis=1)
    edges, inverse = np.unique(all_edges, axis=0, return_inverse=True)
    tri_edges = inverse.reshape(3, m).T.copy()
    edge_tris = np.full((edges.shape[0], 2), -1, dtype=np.int64)
    order = np.argsort(inverse, kind="stable")
    tri_of_entry = np.tile(np.arange(m), 3)[order]
    edge_sorted = inverse[order]
    starts = np.searchsorted(edge_sorted, np.arange(edges.shape[0]))
    ends = np.searchsorted(edge_sorted, np.arange(edges.shape[0]), side="right")
    for e in range(edges.shape[0]):
        inc = tri_of_entry[starts[e]:ends[e]]
        edge_tris[e, : len(inc)] = inc
    return edges, tri_edges, edge_tris


def build_structured_mesh(domain: tuple[float, float, float, float], level: int) -> Mesh:
    """Uniform right-isosceles triangulation of an axis-aligned rectangle.

    ``level`` must be a nonnegative even integer >= 2; the shortest edge is
    h = width * 2**(-level/2).  The rectangle height must be an integer
    multiple of h.  Every square cell is split along the diagonal from its
    lower-left to its upper-right corner, so uniform refinements of different
    levels are nested triangulations.
    """
    if level < 2 or level % 2 != 0:
        raise ValueError(f"level must be an even integer >= 2, got {level}")
    x0, x1, y0, y1 = (float(v) for v in domain)
    width, height = x1 - x0, y1 - y0
    if width <= 0 or height <= 0:
        raise ValueError("degenerate rectangle")
    h = width * 2.0 ** (-level / 2)
    nx = round(width / h)
    ny_f = height / h
    ny = round(ny_f)
    if abs(ny_f - ny) > 1e-9:
        raise GeometryError(f"rectangle height {height} is not a multiple of h={h}")

    xs = np.linspace(x0, x1, nx + 1)
    ys = np.linspace(y0, y1, ny + 1)
    X, Y = np.meshgrid(xs, ys, indexing="xy")
    vertices = np.column_stack([X.ravel(), Y.ravel()])

    def vid(i, j):
        return j * (nx + 1) + i

    I, J = np.meshgrid(np.arange(nx), np.arange(ny), indexing="xy")
    I, J = I.ravel(), J.ravel()
    ll = vid(I, J)
    lr = vid(I + 1, J)
    ul = vid(I, J + 1)
    ur = vid(I + 1, J + 1)
    # diagonal ll-ur is the refinement edge (hypotenuse) of both triangles
    lower = np.column_stack([ur, ll, lr])
    upper = np.column_stack([ll, ur, ul])
    triangles = np.concatenate([lower, upper], axis=0)
    generation = np.zeros(triangles.shape[0], dtype=np.int64)
    return Mesh(vertices, triangles, generation, base_level=level, domain=(x0, x1, y0, y1))


class FieldTransfer:
    """Maps P1 nodal data from a source mesh to the mesh produced by
    refine_and_coarsen: created midpoints interpolate their edge endpoints,
    surviving vertices keep their values."""

    def __init__(self, n_old: int, midpoints: list[tuple[int, int, int]], keep: np.ndarray):
        self.n_old = n_old
        self._midpoints = midpoints
        self._keep = keep

    def apply_p1(self, values: np.ndarray) -> np.ndarray:
        values = np.asarray(values, dtype=float)
        if values.shape[0] != self.n_old:
            raise ValueError("field length does not match the source mesh")
        grown = np.empty(self.n_old + len(self._midpoints), dtype=float)
        grown[: self.n_old] = values
        for idx, a, b in self._midpoints:
            grown[idx] = 0.5 * (grown[a] + grown[b])
        return grown[self._keep]


def refine_and_coarsen(mesh: Mesh, marks: np.ndarray) -> tuple[Mesh, FieldTransfer]:
    """Newest-vertex bisection of refine-marked elements with recursive
    conformity closure, then one generation of coarsening where every child
    of a bisection is coarsen-marked and the patch can be merged conformingly.

    Coarsen requests that cannot be honored are dropped silently.  Returns the
    new mesh together with the nodal transfer map.
    """
    marks = np.asarray(marks)
    if marks.shape[0] != mesh.n_triangles:
        raise ValueError("marks must have one entry per triangle")

    verts: list[np.ndarray] = list(mesh.vertices)
    n_old = mesh.n_vertices
    tris: list[tuple[int, int, int]] = [tuple(t) for t in mesh.triangles]
    gens: list[int] = list(mesh.generation)
    alive: list[bool] = [True] * len(tris)
    coarsen_flag: list[bool] = list(marks == COARSEN)
    midpoint_records: list[tuple[int, int, int]] = []

    # edge (sorted pair) -> midpoint vertex id, and edge -> alive incident tris
    midpoint_of: dict[tuple[int, int], int] = {}
    incident: dict[tuple[int, int], list[int]] = {}

    def edge_key(a: int, b: int) -> tuple[int, int]:
        return (a, b) if a < b else (b, a)

    def register(t: int) -> None:
        a, b, c = tris[t]
        for k in (edge_key(a, b), edge_key(b, c), edge_key(c, a)):
            incident.setdefault(k, []).append(t)

    def unregister(t: int) -> None:
        a, b, c = tris[t]
        for k in (edge_key(a, b), edge_key(b, c), edge_key(c, a)):
            incident[k].remove(t)

    for t in range(len(tris)):
        register(t)

    def get_midpoint(a: int, b: int) -> int:
        k = edge_key(a, b)
        m = midpoint_of.get(k)
        if m is None:
            m = len(verts)
            verts.append(0.5 * (verts[a] + verts[b]))
            midpoint_of[k] = m
            midpoint_records.append((m, a, b))
        return m

    def bisect(t: int) -> None:
        a, b, c = tris[t]
        m = get_midpoint(a, b)
        unregister(t)
        alive[t] = False
        for child in ((c, a, m), (b, c, m)):
            tris.append(child)
            gens.append(gens[t] + 1)
            alive.append(True)
            coarsen_flag.append(False)
            register(len(tris) - 1)

    def partner_across_refedge(t: int) -> int:
        a, b, _ = tris[t]
        for s in incident[edge_key(a, b)]:
            if s != t:
                return s
        return -1

    for t0 in np.nonzero(marks == REFINE)[0]:
        if not alive[t0]:
            continue  # already bisected by an earlier closure pass
        stack = [int(t0)]
        while stack:
            if len(stack) > len(tris) + 1:
                raise GeometryError("bisection closure did not terminate")
            t = stack[-1]
            if not alive[t]:
                stack.pop()
                continue
            partner = partner_across_refedge(t)
            if partner < 0:
                bisect(t)
                stack.pop()
            else:
                pa, pb, _ = tris[partner]
                ta, tb, _ = tris[t]
                if edge_key(pa, pb) == edge_key(ta, tb):
                    bisect(t)
                    bisect(partner)
                    stack.pop()
                else:
                    stack.append(partner)

    # ---- coarsening: remove peaks whose whole star is coarsen-marked ----
    # Sibling children of one bisection are always appended back to back as
    # (c, a, m), (b, c, m), and every compaction preserves relative order, so
    # true pairs are adjacent in the triangle list.  A removable vertex p is
    # the peak of every triangle containing it, its star consists of such
    # pairs (one on the boundary, two in the interior), and all of them are
    # coarsen-marked.
    n_grown = len(verts)
    tris_containing: dict[int, list[int]] = {}
    for t, ok in enumerate(alive):
        if ok:
            for v in tris[t]:
                tris_containing.setdefault(v, []).append(t)

    removed_vertex = np.zeros(n_grown, dtype=bool)
    for p, star in tris_containing.items():
        if len(star) not in (2, 4):
            continue
        if not all(alive[t] and tris[t][2] == p and coarsen_flag[t] for t in star):
            continue
        gen_set = {gens[t] for t in star}
        if len(gen_set) != 1 or min(gen_set) < 1:
            continue
        star = sorted(star)
        pairs = []
        ok = True
        for k in range(0, len(star), 2):
            t1, t2 = star[k], star[k + 1]
            if t2 != t1 + 1 or tris[t1][0] != tris[t2][1]:
                ok = False
                break
            pairs.append((t1, t2))
        if not ok:
            continue
        for t1, t2 in pairs:
            c, a, _ = tris[t1]
            b = tris[t2][0]
            alive[t1] = False
            alive[t2] = False
            tris.append((a, b, c))
            gens.append(gens[t1] - 1)
            alive.append(True)
            coarsen_flag.append(False)
        removed_vertex[p] = True

    # vertices (including earlier bisection midpoints) referenced by no
    # surviving triangle are dropped
    used = np.zeros(n_grown, dtype=bool)
    for t, ok in enumerate(alive):
        if ok:
            for v in tris[t]:
                used[v] = True
    keep = np.nonzero(used & ~removed_vertex)[0]
    renum = -np.ones(n_grown, dtype=np.int64)
    renum[keep] = np.arange(len(keep))

    new_tris = np.array([tris[t] for t, ok in enumerate(alive) if ok], dtype=np.int64)
    new_gens = np.array([gens[t] for t, ok in enumerate(alive) if ok], dtype=np.int64)
    new_tris = renum[new_tris]
    new_verts = np.array([verts[i] for i in keep])

    out = Mesh(new_verts, new_tris, new_gens, base_level=mesh.base_level, domain=mesh.domain)
    transfer = FieldTransfer(n_old, midpoint_records, keep)
    return out, transfer


def midpoint_refine(mesh: Mesh) -> Mesh:
    """Red refinement: every triangle is split into four using the edge
    midpoints.  The vertex list of the result is [old vertices; edge midpoints
    in edge order], which is exactly the quadratic (P2) node layout of the
    input mesh."""
    nv = mesh.n_vertices
    new_verts = np.concatenate([mesh.vertices, mesh.edge_midpoints()], axis=0)
    t = mesh.triangles
    # local edge k (opposite vertex k) midpoint node ids
    m0 = nv + mesh.tri_edges[:, 0]
    m1 = nv + mesh.tri_edges[:, 1]
    m2 = nv + mesh.tri_edges[:, 2]
    a, b, c = t[:, 0], t[:, 1], t[:, 2]
    # children keep the right-isosceles family: corner children have their
    # right angle at the adjacent leg midpoint, the center child at the
    # hypotenuse midpoint (m2, midpoint of edge (a, b))
    child_a = np.column_stack([a, m2, m1])
    child_b = np.column_stack([m2, b, m0])
    child_c = np.column_stack([m1, m0, c])
    child_m = np.column_stack([m0, m1, m2])
    new_tris = np.concatenate([child_a, child_b, child_c, child_m], axis=0)
    new_gens = np.zeros(new_tris.shape[0], dtype=np.int64)
    return Mesh(new_verts, new_tris, new_gens, base_level=mesh.base_level + 2, domain=mesh.domain)


@dataclass(frozen=True)
class DualGrid:
    """Voronoi dual of a non-obtuse triangulation, clipped to the domain.

    Faces are the perpendicular bisector segments between adjacent vertices;
    ``face_cells[f] = (i, j)`` with unit normal ``face_normals[f]`` pointing
    from cell i to cell j.  Degenerate faces (coincident circumcenters across
    a shared hypotenuse) are omitted.  ``boundary_normal_integral[i]`` is the
    integral of the outward domain normal over the part of the boundary owned
    by cell i, so interior rows are zero and for every cell

        sum_f |Gamma_f| nu_f (outward from i) + boundary_normal_integral[i] = 0.
    """

    cell_volumes: np.ndarray
    face_cells: np.ndarray
    face_normals: np.ndarray
    face_measures: np.ndarray
    face_midpoints: np.ndarray
    face_endpoints: np.ndarray
    face_edge: np.ndarray
    face_tri: np.ndarray
    boundary_normal_integral: np.ndarray

    @property
    def n_cells(self) -> int:
        return self.cell_volumes.shape[0]

    @property
    def n_faces(self) -> int:
        return self.face_measures.shape[0]


def circumcenters(mesh: Mesh) -> np.ndarray:
    p = mesh.vertices[mesh.triangles]
    a, b, c = p[:, 0], p[:, 1], p[:, 2]
    ab = b - a
    ac = c - a
    d = 2.0 * _cross(ab, ac)
    ab2 = (ab**2).sum(axis=1)
    ac2 = (ac**2).sum(axis=1)
    ux = (ac[:, 1] * ab2 - ab[:, 1] * ac2) / d
    uy = (ab[:, 0] * ac2 - ac[:, 0] * ab2) / d
    return a + np.column_stack([ux, uy])


def build_dual_grid(mesh: Mesh) -> DualGrid:
    """Construct the vertex-centered Voronoi dual.  Raises GeometryError on
    obtuse elements (their circumcenter leaves the element and the bisector
    construction below would produce negative cell parts)."""
    p = mesh.vertices[mesh.triangles]
    for k in range(3):
        u = p[:, (k + 1) % 3] - p[:, k]
        w = p[:, (k + 2) % 3] - p[:, k]
        if np.any((u * w).sum(axis=1) < -_DEG_TOL):
            raise GeometryError("obtuse triangle: Voronoi dual face would degenerate")

    cc = circumcenters(mesh)
    verts = mesh.vertices
    edges = mesh.edges
    edge_tris = mesh.edge_tris
    emid = mesh.edge_midpoints()

    interior = edge_tris[:, 1] >= 0
    # face endpoints: circumcenter-to-circumcenter, or circumcenter-to-edge-midpoint
    end0 = cc[edge_tris[:, 0]]
    end1 = np.where(interior[:, None], cc[np.where(interior, edge_tris[:, 1], 0)], emid)
    seg = end1 - end0
    measures = np.sqrt((seg**2).sum(axis=1))
    elen = np.sqrt(((verts[edges[:, 1]] - verts[edges[:, 0]]) ** 2).sum(axis=1))
    keep = measures > 1e-12 * elen

    i_idx = edges[keep, 0]
    j_idx = edges[keep, 1]
    dvec = verts[j_idx] - verts[i_idx]
    normals = dvec / np.sqrt((dvec**2).sum(axis=1))[:, None]
    midpoints = 0.5 * (end0[keep] + end1[keep])

    # containing triangle for the face midpoint (velocity evaluation point)
    t0 = edge_tris[keep, 0]
    t1 = edge_tris[keep, 1]
    face_tri = t0.copy()
    lam = barycentric_coordinates(mesh, midpoints, t0)
    outside = lam.min(axis=1) < -1e-10
    swap = outside & (t1 >= 0)
    face_tri[swap] = t1[swap]

    # cell volumes: per (triangle, vertex) kite [x_i, mid(i,a), cc, mid(i,b)]
    n = mesh.n_vertices
    volumes = np.zeros(n)
    tri = mesh.triangles
    for k in range(3):
        xi = p[:, k]
        ma = 0.5 * (xi + p[:, (k + 1) % 3])
        mb = 0.5 * (xi + p[:, (k + 2) % 3])
        area = 0.5 * np.abs(
            _cross(ma - xi, cc - xi) + _cross(cc - xi, mb - xi)
        )
        np.add.at(volumes, tri[:, k], area)

    # boundary ownership: each boundary edge donates its half to both endpoint cells
    bni = np.zeros((n, 2))
    bedges = mesh.boundary_edges
    for e in bedges:
        t = edge_tris[e, 0]
        va, vb = edges[e]
        evec = verts[vb] - verts[va]
        nrm = np.array([evec[1], -evec[0]])
        third = [v for v in tri[t] if v != va and v != vb][0]
        if np.dot(nrm, verts[third] - verts[va]) > 0:
            nrm = -nrm
        nrm /= np.linalg.norm(nrm)
        half = 0.5 * np.linalg.norm(evec)
        bni[va] += half * nrm
        bni[vb] += half * nrm

    ends = np.stack([end0[keep], end1[keep]], axis=1)
    return DualGrid(
        cell_volumes=volumes,
        face_cells=np.column_stack([i_idx, j_idx]),
        face_normals=normals,
        face_measures=measures[keep],
        face_midpoints=midpoints,
        face_endpoints=ends,
        face_edge=np.nonzero(keep)[0],
        face_tri=face_tri,
        boundary_normal_integral=bni,
    )


def barycentric_coordinates(mesh: Mesh, points: np.ndarray, tri_ids: np.ndarray) -> np.ndarray:
    """Barycentric coordinates of ``points[k]`` in triangle ``tri_ids[k]``."""
    t = mesh.triangles[tri_ids]
    a = mesh.vertices[t[:, 0]]
    b = mesh.vertices[t[:, 1]]
    c = mesh.vertices[t[:, 2]]
    det = _cross(b - a, c - a)
    l1 = _cross(points - a, c - a) / det
    l2 = _cross(b - a, points - a) / det
    l0 = 1.0 - l1 - l2
    return np.column_stack([l0, l1, l2])


def locate_points(mesh: Mesh, points: np.ndarray, tol: float = 1e-10) -> np.ndarray:
    """Containing triangle for each query point via a uniform bucket grid.
    Points outside the mesh raise GeometryError."""
    points = np.atleast_2d(points)
    x0, x1, y0, y1 = mesh.domain
    nb = max(1, int(np.sqrt(mesh.n_triangles)))
    bx = (x1 - x0) / nb
    by = (y1 - y0) / nb
    buckets: dict[tuple[int, int], list[int]] = {}
    p = mesh.vertices[mesh.triangles]
    lo = p.min(axis=1)
    hi = p.max(axis=1)
    for t in range(mesh.n_triangles):
        i0 = int((lo[t, 0] - x0) / bx)
        i1 = int((hi[t, 0] - x0) / bx)
        j0 = int((lo[t, 1] - y0) / by)
        j1 = int((hi[t, 1] - y0) / by)
        for i in range(max(i0, 0), min(i1, nb - 1) + 1):
            for j in range(max(j0, 0), min(j1, nb - 1) + 1):
                buckets.setdefault((i, j), []).append(t)
    out = np.empty(points.shape[0], dtype=np.int64)
    for k, pt in enumerate(points):
        i = min(max(int((pt[0] - x0) / bx), 0), nb - 1)
        j = min(max(int((pt[1] - y0) / by), 0), nb - 1)
        found = -1
        for t in buckets.get((i, j), ()):
            lam = barycentric_coordinates(mesh, pt[None, :], np.array([t]))[0]
            if lam.min() >= -tol:
                found = t
                break
        if found < 0:
            raise GeometryError(f"point {pt} not located in the mesh")
        out[k] = found
    return out
