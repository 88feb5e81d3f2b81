"""Taylor-Hood P2-P1 spaces and operator assembly.

Velocity lives in vector P2 (scalar nodes are vertices plus edge
midpoints, x-block followed by y-block), pressure in P1 on the vertices.
All forms are integrated with a symmetric 7-point triangle rule that is
exact for polynomials of degree 5, which covers the highest-degree
integrand here (the convection form, P2 * grad P2 * P2).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from .mesh import BoundaryTag, Mesh

# ---------------------------------------------------------------------
# reference element
# ---------------------------------------------------------------------

# 7-point symmetric rule on the reference triangle {x,y >= 0, x+y <= 1},
# weights sum to the reference area 1/2, exact through degree 5.
_S15 = math.sqrt(15.0)
_QA1 = (6.0 + _S15) / 21.0
_QA2 = (6.0 - _S15) / 21.0
_QW1 = (155.0 + _S15) / 2400.0
_QW2 = (155.0 - _S15) / 2400.0

TRI_QPOINTS = np.array(
    [
        [1.0 / 3.0, 1.0 / 3.0],
        [_QA1, _QA1],
        [_QA1, 1.0 - 2.0 * _QA1],
        [1.0 - 2.0 * _QA1, _QA1],
        [_QA2, _QA2],
        [_QA2, 1.0 - 2.0 * _QA2],
        [1.0 - 2.0 * _QA2, _QA2],
    ]
)
TRI_QWEIGHTS = np.array([9.0 / 80.0, _QW1, _QW1, _QW1, _QW2, _QW2, _QW2])

# 2-point Gauss rule on [0, 1], exact through degree 3 (edge integrals).
EDGE_QPOINTS = np.array([0.5 - 0.5 / math.sqrt(3.0), 0.5 + 0.5 / math.sqrt(3.0)])
EDGE_QWEIGHTS = np.array([0.5, 0.5])


def p2_values(xi: np.ndarray, eta: np.ndarray) -> np.ndarray:
    """P2 Lagrange basis values, shape (6, npts).

    Node order: the three vertices, then the midpoint opposite each
    vertex (node 3 on edge v1-v2, node 4 on v0-v2, node 5 on v0-v1).
    """
    lam0 = 1.0 - xi - eta
    lam1 = xi
    lam2 = eta
    return np.stack(
        [
            lam0 * (2.0 * lam0 - 1.0),
            lam1 * (2.0 * lam1 - 1.0),
            lam2 * (2.0 * lam2 - 1.0),
            4.0 * lam1 * lam2,
            4.0 * lam0 * lam2,
            4.0 * lam0 * lam1,
        ]
    )


def p2_gradients(xi: np.ndarray, eta: np.ndarray) -> np.ndarray:
    """Reference gradients of the P2 basis, shape (6, npts, 2)."""
    lam0 = 1.0 - xi - eta
    lam1 = xi
    lam2 = eta
    z = np.zeros_like(xi)
    d0 = 4.0 * lam0 - 1.0
    d1 = 4.0 * lam1 - 1.0
    d2 = 4.0 * lam2 - 1.0
    grads = np.empty((6, xi.shape[0], 2))
    grads[0] = np.stack([-d0, -d0], axis=-1)
    grads[1] = np.stack([d1, z], axis=-1)
    grads[2] = np.stack([z, d2], axis=-1)
    grads[3] = np.stack([4.0 * lam2, 4.0 * lam1], axis=-1)
    grads[4] = np.stack([-4.0 * lam2, 4.0 * (lam0 - lam2)], axis=-1)
    grads[5] = np.stack([4.0 * (lam0 - lam1), -4.0 * lam1], axis=-1)
    return grads


def p1_values(xi: np.ndarray, eta: np.ndarray) -> np.ndarray:
    """P1 basis values, shape (3, npts)."""
    return np.stack([1.0 - xi - eta, xi, eta])


_P2_QP = p2_values(TRI_QPOINTS[:, 0], TRI_QPOINTS[:, 1])  # (6, 7)
_P2G_QP = p2_gradients(TRI_QPOINTS[:, 0], TRI_QPOINTS[:, 1])  # (6, 7, 2)
_P1_QP = p1_values(TRI_QPOINTS[:, 0], TRI_QPOINTS[:, 1])  # (3, 7)
_P1G = np.array([[-1.0, -1.0], [1.0, 0.0], [0.0, 1.0]])  # constant


# ---------------------------------------------------------------------
# dof map
# ---------------------------------------------------------------------


@dataclass(frozen=True)
class DofMap:
    """Node and dof numbering for one mesh.

    Scalar P2 nodes are vertices (0..n_v-1) followed by edge midpoints
    (n_v..n_v+n_e-1).  A velocity dof is ``node + comp * n_nodes`` with
    comp 0 for x and 1 for y.  Pressure dofs are the vertices.
    """

    mesh: Mesh
    tri_nodes: np.ndarray  # (n_t, 6) global scalar node indices
    node_coords: np.ndarray  # (n_nodes, 2) affine node positions (edge midpoints)
    node_coords_snapped: np.ndarray  # as above, boundary midpoints snapped to circles
    edge_vertices: np.ndarray  # (n_e, 2) sorted vertex pairs per edge
    dirichlet_nodes: np.ndarray  # bool (n_nodes,)
    boundary_edge_index: dict  # sorted vertex pair -> edge index

    @property
    def n_vertices(self) -> int:
        return self.mesh.n_vertices

    @property
    def n_edges(self) -> int:
        return self.edge_vertices.shape[0]

    @property
    def n_nodes(self) -> int:
        return self.n_vertices + self.n_edges

    @property
    def n_u(self) -> int:
        return 2 * self.n_nodes

    @property
    def n_p(self) -> int:
        return self.n_vertices

    @property
    def dirichlet_mask(self) -> np.ndarray:
        """Boolean mask over all velocity dofs (x-block then y-block)."""
        return np.concatenate([self.dirichlet_nodes, self.dirichlet_nodes])

    def velocity_dof(self, node: int, comp: int) -> int:
        return node + comp * self.n_nodes

    def interpolate_velocity(self, fx, fy) -> np.ndarray:
        """Nodal interpolation of an analytic vector field onto P2."""
        x, y = self.node_coords[:, 0], self.node_coords[:, 1]
        return np.concatenate([np.asarray(fx(x, y), dtype=float), np.asarray(fy(x, y), dtype=float)])

    def interpolate_pressure(self, g) -> np.ndarray:
        v = self.mesh.vertices
        return np.asarray(g(v[:, 0], v[:, 1]), dtype=float)


def build_dofmap(mesh: Mesh) -> DofMap:
    """Enumerate P2/P1 dofs and mark Dirichlet velocity nodes.

    ``node_coords`` holds the affine node positions that assembly and
    nodal interpolation are consistent with.  ``node_coords_snapped``
    additionally places boundary-edge midpoints on their circle, giving
    exported fields second-order boundary geometry.
    """
    tris = mesh.triangles
    n_v = mesh.n_vertices

    edge_of = {}
    edge_list = []
    tri_nodes = np.empty((len(tris), 6), dtype=np.int64)
    tri_nodes[:, :3] = tris
    # local edge k is opposite vertex k: (v1,v2), (v0,v2), (v0,v1)
    local_pairs = ((1, 2), (0, 2), (0, 1))
    for t, tri in enumerate(tris):
        for k, (a, b) in enumerate(local_pairs):
            key = (min(tri[a], tri[b]), max(tri[a], tri[b]))
            idx = edge_of.get(key)
            if idx is None:
                idx = len(edge_list)
                edge_of[key] = idx
                edge_list.append(key)
            tri_nodes[t, 3 + k] = n_v + idx

    edge_vertices = np.array(edge_list, dtype=np.int64)
    mid = 0.5 * (mesh.vertices[edge_vertices[:, 0]] + mesh.vertices[edge_vertices[:, 1]])
    node_coords = np.vstack([mesh.vertices, mid])
    snapped = node_coords.copy()

    dirichlet = np.zeros(n_v + len(edge_list), dtype=bool)
    boundary_edge_index = {}
    geom = mesh.geometry
    for (a, b), tag in zip(mesh.boundary_edges, mesh.boundary_tags):
        key = (int(min(a, b)), int(max(a, b)))
        e = edge_of[key]
        boundary_edge_index[key] = e
        dirichlet[[a, b, n_v + e]] = True
        if geom is not None:
            r1, r2, c1, c2 = geom
            m = node_coords[n_v + e]
            if tag == BoundaryTag.OUTER_CYLINDER:
                snapped[n_v + e] = m * (r1 / np.linalg.norm(m))
            else:
                d = m - (c1, c2)
                snapped[n_v + e] = (c1, c2) + d * (r2 / np.linalg.norm(d))

    return DofMap(mesh, tri_nodes, node_coords, snapped, edge_vertices, dirichlet, boundary_edge_index)


# ---------------------------------------------------------------------
# geometry tables shared by the assemblers
# ---------------------------------------------------------------------


def _affine_tables(mesh: Mesh):
    """detJ (n_t,) and physical P2 gradients (n_t, 6, nq, 2)."""
    v = mesh.vertices
    t = mesh.triangles
    j1 = v[t[:, 1]] - v[t[:, 0]]
    j2 = v[t[:, 2]] - v[t[:, 0]]
    det = j1[:, 0] * j2[:, 1] - j1[:, 1] * j2[:, 0]
    # inverse-transpose of J = [[j1x, j2x], [j1y, j2y]]
    inv_t = np.empty((len(t), 2, 2))
    inv_t[:, 0, 0] = j2[:, 1]
    inv_t[:, 0, 1] = -j2[:, 0]
    inv_t[:, 1, 0] = -j1[:, 1]
    inv_t[:, 1, 1] = j1[:, 0]
    inv_t /= det[:, None, None]
    inv_t = np.transpose(inv_t, (0, 2, 1))
    grads = np.einsum("txy,iqy->tiqx", inv_t, _P2G_QP)
    return det, grads


def _p1_phys_gradients(mesh: Mesh):
    v = mesh.vertices
    t = mesh.triangles
    j1 = v[t[:, 1]] - v[t[:, 0]]
    j2 = v[t[:, 2]] - v[t[:, 0]]
    det = j1[:, 0] * j2[:, 1] - j1[:, 1] * j2[:, 0]
    inv_t = np.empty((len(t), 2, 2))
    inv_t[:, 0, 0] = j2[:, 1]
    inv_t[:, 0, 1] = -j2[:, 0]
    inv_t[:, 1, 0] = -j1[:, 1]
    inv_t[:, 1, 1] = j1[:, 0]
    inv_t /= det[:, None, None]
    inv_t = np.transpose(inv_t, (0, 2, 1))
    return det, np.einsum("txy,iy->tix", inv_t, _P1G)


def _scatter(local: np.ndarray, rows_nodes: np.ndarray, cols_nodes: np.ndarray, shape, n_chunks: int):
    """Accumulate per-element local matrices into one CSR matrix.

    ``n_chunks > 1`` splits the element range and sums partial matrices,
    exercising the associative-reduction contract of parallel assembly.
    """
    n_t = local.shape[0]
    bounds = np.linspace(0, n_t, n_chunks + 1, dtype=int)
    total = None
    for lo, hi in zip(bounds[:-1], bounds[1:]):
        if lo == hi:
            continue
        part = sp.coo_matrix(
            (
                local[lo:hi].ravel(),
                (rows_nodes[lo:hi].ravel(), cols_nodes[lo:hi].ravel()),
            ),
            shape=shape,
        ).tocsr()
        total = part if total is None else total + part
    if total is None:
        total = sp.csr_matrix(shape)
    total.sum_duplicates()
    return total


def _scalar_p2_pattern(dofmap: DofMap):
    tn = dofmap.tri_nodes
    rows = np.repeat(tn, 6, axis=1)
    cols = np.tile(tn, (1, 6))
    return rows, cols


def assemble_scalar_mass(mesh: Mesh, dofmap: DofMap, n_chunks: int = 1) -> sp.csr_matrix:
    """Scalar P2 mass matrix (n_nodes x n_nodes)."""
    det, _ = _affine_tables(mesh)
    base = np.einsum("q,iq,jq->ij", TRI_QWEIGHTS, _P2_QP, _P2_QP)
    local = det[:, None, None] * base[None, :, :]
    rows, cols = _scalar_p2_pattern(dofmap)
    n = dofmap.n_nodes
    return _scatter(local, rows, cols, (n, n), n_chunks)


def assemble_scalar_stiffness(mesh: Mesh, dofmap: DofMap, n_chunks: int = 1) -> sp.csr_matrix:
    """Scalar P2 stiffness matrix (grad-grad, n_nodes x n_nodes)."""
    det, grads = _affine_tables(mesh)
    local = np.einsum("q,tiqx,tjqx,t->tij", TRI_QWEIGHTS, grads, grads, det)
    rows, cols = _scalar_p2_pattern(dofmap)
    n = dofmap.n_nodes
    return _scatter(local, rows, cols, (n, n), n_chunks)


def _vector_block(scalar: sp.csr_matrix) -> sp.csr_matrix:
    """Expand a scalar P2 operator to the vector space (block diagonal)."""
    return sp.block_diag([scalar, scalar], format="csr")


def assemble_velocity_mass(mesh: Mesh, dofmap: DofMap, n_chunks: int = 1) -> sp.csr_matrix:
    """Vector P2 mass matrix (n_u x n_u), symmetric positive definite."""
    return _vector_block(assemble_scalar_mass(mesh, dofmap, n_chunks))


def assemble_velocity_stiffness(mesh: Mesh, dofmap: DofMap, n_chunks: int = 1) -> sp.csr_matrix:
    """Vector P2 stiffness (grad-grad, n_u x n_u); kernel = constant fields."""
    return _vector_block(assemble_scalar_stiffness(mesh, dofmap, n_chunks))


def assemble_pressure_mass(mesh: Mesh, dofmap: DofMap, n_chunks: int = 1) -> sp.csr_matrix:
    """P1 mass matrix (n_p x n_p)."""
    det, _ = _p1_phys_gradients(mesh)
    base = np.einsum("q,iq,jq->ij", TRI_QWEIGHTS, _P1_QP, _P1_QP)
    local = det[:, None, None] * base[None, :, :]
    tris = mesh.triangles
    rows = np.repeat(tris, 3, axis=1)
    cols = np.tile(tris, (1, 3))
    n = dofmap.n_p
    return _scatter(local, rows, cols, (n, n), n_chunks)


def assemble_divergence(mesh: Mesh, dofmap: DofMap, n_chunks: int = 1) -> sp.csr_matrix:
    """Divergence operator B (n_p x n_u): B[q, v] = (div phi_v, psi_q)."""
    det, grads = _affine_tables(mesh)
    tris = mesh.triangles
    tn = dofmap.tri_nodes
    n_nodes = dofmap.n_nodes
    blocks = []
    for comp in range(2):
        local = np.einsum("q,iq,tjq,t->tij", TRI_QWEIGHTS, _P1_QP, grads[:, :, :, comp], det)
        rows = np.repeat(tris, 6, axis=1)
        cols = np.tile(tn + comp * n_nodes, (1, 3))
        blocks.append(_scatter(local, rows, cols, (dofmap.n_p, dofmap.n_u), n_chunks))
    return (blocks[0] + blocks[1]).tocsr()


def assemble_convection_skew(
    mesh: Mesh, dofmap: DofMap, w: np.ndarray, n_chunks: int = 1
) -> sp.csr_matrix:
    """Skew-symmetric convection operator N(w) (n_u x n_u).

    Rows test v, columns trial u; v'N(w)u equals
    1/2 (w . grad u, v) - 1/2 (w . grad v, u), so v'N(w)v vanishes
    identically and N is linear in the advecting field w.
    """
    w = np.asarray(w, dtype=float)
    if w.shape != (dofmap.n_u,):
        raise ValueError(f"advecting field has length {w.shape}, expected ({dofmap.n_u},)")
    det, grads = _affine_tables(mesh)
    tn = dofmap.tri_nodes
    n_nodes = dofmap.n_nodes
    wx = w[:n_nodes][tn]  # (n_t, 6)
    wy = w[n_nodes:][tn]
    # advecting velocity at quadrature points, (n_t, nq, 2)
    w_qp = np.stack([wx @ _P2_QP, wy @ _P2_QP], axis=-1)
    # C[i, j] = (w . grad N_j, N_i); same scalar block for both components
    wdotgrad = np.einsum("tqx,tjqx->tjq", w_qp, grads)  # (n_t, 6, nq)
    local = np.einsum("q,iq,tjq,t->tij", TRI_QWEIGHTS, _P2_QP, wdotgrad, det)
    rows, cols = _scalar_p2_pattern(dofmap)
    n = dofmap.n_nodes
    c1 = _scatter(local, rows, cols, (n, n), n_chunks)
    skew = 0.5 * (c1 - c1.T)
    return _vector_block(skew.tocsr())


def assemble_forcing(mesh: Mesh, dofmap: DofMap, f, t: float = 0.0) -> np.ndarray:
    """Load vector (f(., t), phi_v) for an analytic f(x, y, t) -> (fx, fy)."""
    det, _ = _affine_tables(mesh)
    v = mesh.vertices
    tr = mesh.triangles
    # physical quadrature points, (n_t, nq, 2)
    lam = np.column_stack([1.0 - TRI_QPOINTS.sum(axis=1), TRI_QPOINTS])
    pts = np.einsum("qk,tkx->tqx", lam, v[tr])
    fx, fy = f(pts[:, :, 0], pts[:, :, 1], t)
    out = np.zeros(dofmap.n_u)
    lx = np.einsum("q,iq,tq,t->ti", TRI_QWEIGHTS, _P2_QP, np.asarray(fx, dtype=float), det)
    ly = np.einsum("q,iq,tq,t->ti", TRI_QWEIGHTS, _P2_QP, np.asarray(fy, dtype=float), det)
    np.add.at(out, dofmap.tri_nodes, lx)
    np.add.at(out, dofmap.tri_nodes + dofmap.n_nodes, ly)
    return out


# ---------------------------------------------------------------------
# boundary conditions
# ---------------------------------------------------------------------


def apply_dirichlet(op: sp.spmatrix, rhs: np.ndarray | None, dofmap: DofMap):
    """Impose homogeneous Dirichlet rows/columns on velocity dofs.

    Square velocity operators get symmetric elimination: constrained rows
    and columns are zeroed and the diagonal set to one, with matching rhs
    zeros.  Rectangular operators with velocity columns (the divergence)
    only get their constrained columns zeroed.  Inputs are not mutated.
    """
    mask = dofmap.dirichlet_mask
    keep = sp.diags((~mask).astype(float))
    if op.shape == (dofmap.n_u, dofmap.n_u):
        out = keep @ op @ keep + sp.diags(mask.astype(float))
        out = out.tocsr()
    elif op.shape[1] == dofmap.n_u:
        out = (op @ keep).tocsr()
    else:
        raise ValueError(f"operator shape {op.shape} has no velocity columns to constrain")
    new_rhs = None
    if rhs is not None:
        new_rhs = np.array(rhs, dtype=float, copy=True)
        if new_rhs.shape[0] == dofmap.n_u:
            new_rhs[mask] = 0.0
    return out, new_rhs


# ---------------------------------------------------------------------
# bundle used by the solvers and diagnostics
# ---------------------------------------------------------------------


@dataclass(frozen=True)
class Operators:
    """All assembled operators for one mesh/dofmap pair (unconstrained)."""

    mesh: Mesh
    dofmap: DofMap
    mass_scalar: sp.csr_matrix  # P2 scalar mass
    stiffness_scalar: sp.csr_matrix  # P2 scalar stiffness
    mass_v: sp.csr_matrix  # vector mass, n_u x n_u
    stiffness: sp.csr_matrix  # vector stiffness, n_u x n_u
    divergence: sp.csr_matrix  # n_p x n_u
    mass_p: sp.csr_matrix  # n_p x n_p

    def pressure_mean(self, p: np.ndarray) -> float:
        one = np.ones(self.dofmap.n_p)
        mp1 = self.mass_p @ one
        return float(mp1 @ p) / float(mp1 @ one)

    def remove_pressure_mean(self, p: np.ndarray) -> np.ndarray:
        return p - self.pressure_mean(p)


def assemble_operators(mesh: Mesh, dofmap: DofMap | None = None, n_chunks: int = 1) -> Operators:
    if dofmap is None:
        dofmap = build_dofmap(mesh)
    ms = assemble_scalar_mass(mesh, dofmap, n_chunks)
    ks = assemble_scalar_stiffness(mesh, dofmap, n_chunks)
    return Operators(
        mesh=mesh,
        dofmap=dofmap,
        mass_scalar=ms,
        stiffness_scalar=ks,
        mass_v=_vector_block(ms),
        stiffness=_vector_block(ks),
        divergence=assemble_divergence(mesh, dofmap, n_chunks),
        mass_p=assemble_pressure_mass(mesh, dofmap, n_chunks),
    )
