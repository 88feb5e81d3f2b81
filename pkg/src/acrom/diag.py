"""Derived quantities and theory checks.

Includes kinetic energy, the per-step energy-balance identity, drag and
lift line integrals over the inner cylinder, the first principal angle
between the divergence image of the velocity basis and the pressure
basis, the discrete inf-sup constant of the reduced pair, pointwise
divergence fields, and the relative discrete-in-time L2 error norm used
by the convergence studies.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import scipy.linalg
import scipy.sparse.linalg as spla

from .fem import (DofMap, Operators, EDGE_QPOINTS, EDGE_QWEIGHTS, p1_values, p2_gradients)
from .mesh import Mesh, inner_boundary_edges
from .pod import PodBasis
from .rom import ReducedModel, RomTrajectory, rom_energy_residual


# ---------------------------------------------------------------------
# energies
# ---------------------------------------------------------------------


def kinetic_energy(u: np.ndarray, mass) -> float:
    """1/2 u' M u."""
    return 0.5 * float(u @ (mass @ u))


def kinetic_energy_reduced(a_u: np.ndarray) -> float:
    """Orthonormal modes make the mass-weighted energy a coordinate norm."""
    return 0.5 * float(a_u @ a_u)


@dataclass
class EnergyBalanceReport:
    residuals: np.ndarray  # per-step relative residual of the equality
    inequality_slack: float  # cumulative inequality RHS - LHS (>= 0 expected)

    @property
    def max_residual(self) -> float:
        return float(self.residuals.max()) if len(self.residuals) else 0.0


def energy_balance(traj: RomTrajectory, model: ReducedModel) -> EnergyBalanceReport:
    """Evaluate the per-step energy equality and cumulative inequality.

    The inequality uses the discrete dual norm of the forcing on the
    reduced space, |f|_* = |L^{-1} f_r| with K_r = L L'.
    """
    n = traj.n_steps
    resid = np.empty(n)
    for k in range(n):
        resid[k] = rom_energy_residual(
            model, traj.a_u[k], traj.a_p[k], traj.a_u[k + 1], traj.a_p[k + 1]
        )

    dt, eps, nu = model.dt, model.eps, model.nu
    du = np.diff(traj.a_u, axis=0)
    dp = np.diff(traj.a_p, axis=0)
    grad_sq = np.einsum("ni,ij,nj->n", traj.a_u[1:], model.K_r, traj.a_u[1:])
    lhs = (
        traj.a_u[-1] @ traj.a_u[-1]
        + eps * (traj.a_p[-1] @ traj.a_p[-1])
        + np.sum(du * du)
        + eps * np.sum(dp * dp)
        + dt * nu * grad_sq.sum()
    )
    if np.abs(model.f_r).max() > 0:
        L = scipy.linalg.cholesky(model.K_r, lower=True)
        dual = scipy.linalg.solve_triangular(L, model.f_r, lower=True)
        dual_sq = float(dual @ dual)
    else:
        dual_sq = 0.0
    rhs = (
        traj.a_u[0] @ traj.a_u[0]
        + eps * (traj.a_p[0] @ traj.a_p[0])
        + (4.0 * dt / nu) * n * dual_sq
    )
    return EnergyBalanceReport(residuals=resid, inequality_slack=float(rhs - lhs))


# ---------------------------------------------------------------------
# drag / lift over the inner cylinder
# ---------------------------------------------------------------------


@dataclass(frozen=True)
class BoundaryForceFunctionals:
    """Linear functionals: drag = g_drag_u . u + g_drag_p . p, same for lift.

    Convention: the loop normal points out of the fluid (toward the
    inner-cylinder center); the stress is tau = (grad u + grad u') - p I,
    optionally with the viscosity factor on the symmetric gradient.
    drag is minus the y-component of the integrated traction, lift the
    x-component.
    """

    g_drag_u: np.ndarray
    g_drag_p: np.ndarray
    g_lift_u: np.ndarray
    g_lift_p: np.ndarray

    def evaluate(self, u: np.ndarray, p: np.ndarray) -> tuple[float, float]:
        drag = float(self.g_drag_u @ u + self.g_drag_p @ p)
        lift = float(self.g_lift_u @ u + self.g_lift_p @ p)
        return drag, lift

    def reduce(self, u_basis: PodBasis, p_basis: PodBasis):
        """Project onto POD bases for mesh-independent online evaluation."""
        return (
            u_basis.modes.T @ self.g_drag_u,
            p_basis.modes.T @ self.g_drag_p,
            u_basis.modes.T @ self.g_lift_u,
            p_basis.modes.T @ self.g_lift_p,
        )


def _edge_local_coords(tri: np.ndarray, va: int, vb: int, mesh: Mesh):
    """Reference coordinates along edge (va, vb) of triangle tri."""
    corners = [int(v) for v in tri]
    la = corners.index(va)
    lb = corners.index(vb)
    ref = np.array([[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]])
    s = EDGE_QPOINTS
    pts = (1.0 - s)[:, None] * ref[la][None, :] + s[:, None] * ref[lb][None, :]
    return pts


def drag_lift_functionals(
    mesh: Mesh, dofmap: DofMap, include_viscosity: bool = False, nu: float = 1.0
) -> BoundaryForceFunctionals:
    """Assemble the drag/lift boundary functionals over the inner loop.

    Element-side traces of the P2 gradient and P1 pressure are
    integrated edge by edge with a 2-point Gauss rule (exact to cubic
    traces on the straight edges).
    """
    loop = inner_boundary_edges(mesh)
    visc = nu if include_viscosity else 1.0

    # map undirected boundary edge -> owning triangle
    owner = {}
    for t, tri in enumerate(mesh.triangles):
        for a, b in ((tri[0], tri[1]), (tri[1], tri[2]), (tri[2], tri[0])):
            owner[(int(min(a, b)), int(max(a, b)))] = t

    n_u = dofmap.n_u
    n_nodes = dofmap.n_nodes
    g_drag_u = np.zeros(n_u)
    g_lift_u = np.zeros(n_u)
    g_drag_p = np.zeros(dofmap.n_p)
    g_lift_p = np.zeros(dofmap.n_p)

    v = mesh.vertices
    for va, vb in loop:
        t = owner[(int(min(va, vb)), int(max(va, vb)))]
        tri = mesh.triangles[t]
        pa, pb = v[va], v[vb]
        tang = pb - pa
        length = float(np.hypot(*tang))
        that = tang / length
        normal = np.array([-that[1], that[0]])  # +90 deg: toward the hole center

        # affine gradient map of the owning triangle
        j1 = v[tri[1]] - v[tri[0]]
        j2 = v[tri[2]] - v[tri[0]]
        det = j1[0] * j2[1] - j1[1] * j2[0]
        inv_t = np.array([[j2[1], -j1[1]], [-j2[0], j1[0]]]) / det

        ref_pts = _edge_local_coords(tri, int(va), int(vb), mesh)
        grads_ref = p2_gradients(ref_pts[:, 0], ref_pts[:, 1])  # (6, nq, 2)
        grads = np.einsum("xy,iqy->iqx", inv_t, grads_ref)
        p1v = p1_values(ref_pts[:, 0], ref_pts[:, 1])  # (3, nq)

        nodes = dofmap.tri_nodes[t]
        for q, wq in enumerate(EDGE_QWEIGHTS):
            w = wq * length
            for loc in range(6):
                gx, gy = grads[loc, q]
                # traction of the symmetric gradient:
                #   x-dof: [2 gx, gy] . n (x-row), [gy, 0] extra on y-row via symmetry
                tx_x = visc * (2.0 * gx * normal[0] + gy * normal[1])
                ty_x = visc * (gy * normal[0])
                tx_y = visc * (gx * normal[1])
                ty_y = visc * (gx * normal[0] + 2.0 * gy * normal[1])
                g_lift_u[nodes[loc]] += w * tx_x
                g_drag_u[nodes[loc]] -= w * ty_x
                g_lift_u[nodes[loc] + n_nodes] += w * tx_y
                g_drag_u[nodes[loc] + n_nodes] -= w * ty_y
            for loc in range(3):
                val = p1v[loc, q]
                # pressure part of the traction is -p n
                g_lift_p[tri[loc]] += w * (-val * normal[0])
                g_drag_p[tri[loc]] -= w * (-val * normal[1])

    return BoundaryForceFunctionals(g_drag_u, g_drag_p, g_lift_u, g_lift_p)


def drag_lift(
    u: np.ndarray, p: np.ndarray, mesh: Mesh, dofmap: DofMap,
    include_viscosity: bool = False, nu: float = 1.0,
) -> tuple[float, float]:
    """Drag and lift of one full-order state (see drag_lift_functionals)."""
    return drag_lift_functionals(mesh, dofmap, include_viscosity, nu).evaluate(u, p)


# ---------------------------------------------------------------------
# principal angle and inf-sup constant
# ---------------------------------------------------------------------


@dataclass
class AngleReport:
    R: int
    M: int
    alpha: float  # cos(theta_1), first principal angle
    theta1: float
    singular_values: np.ndarray  # full cross-Gram spectrum, descending
    infsup_beta: float
    div_rank: int  # numerical dimension of the divergence image space


def _mp_solver(ops: Operators):
    return spla.factorized(ops.mass_p.tocsc())


def divergence_field(u: np.ndarray, ops: Operators) -> np.ndarray:
    """L2 projection of div(u) onto P1 (coefficient vector)."""
    return _mp_solver(ops)(ops.divergence @ u)


def divergence_norm(u: np.ndarray, ops: Operators) -> float:
    """Mp-norm of the P1-projected divergence."""
    d = divergence_field(u, ops)
    return math.sqrt(max(float(d @ (ops.mass_p @ d)), 0.0))


def _orthonormalize_columns(cols: np.ndarray, W, rank_tol: float = 1e-12):
    """Modified Gram-Schmidt under W, dropping numerically dependent columns."""
    kept = []
    norms0 = np.sqrt(np.maximum(np.einsum("ik,ik->k", cols, W @ cols), 0.0))
    floor = rank_tol * (norms0.max() if norms0.size else 0.0)
    basis = []
    for k in range(cols.shape[1]):
        v = cols[:, k].copy()
        for b in basis:
            v -= (b @ (W @ v)) * b
        nrm = math.sqrt(max(float(v @ (W @ v)), 0.0))
        if nrm <= floor:
            continue
        basis.append(v / nrm)
        kept.append(k)
    if basis:
        return np.column_stack(basis), kept
    return np.zeros((cols.shape[0], 0)), kept


def principal_angle(u_basis: PodBasis, p_basis: PodBasis, ops: Operators) -> AngleReport:
    """First principal angle between the divergence image and pressure span.

    The divergences of the velocity modes are carried as their P1
    projections, orthonormalized under the pressure mass; the singular
    values of the cross-Gram against the pressure modes are the cosines
    of the principal angles, so alpha = sigma_1 and theta_1 = arccos of
    it (argument clamped into [0, 1] against roundoff).
    """
    solve_mp = _mp_solver(ops)
    div_cols = np.column_stack(
        [solve_mp(ops.divergence @ u_basis.modes[:, k]) for k in range(u_basis.R)]
    )
    x_div, kept = _orthonormalize_columns(div_cols, ops.mass_p)
    if x_div.shape[1] == 0:
        sv = np.zeros(0)
        alpha = 0.0
    else:
        gram = x_div.T @ (ops.mass_p @ p_basis.modes)
        sv = scipy.linalg.svd(gram, compute_uv=False)
        alpha = float(sv[0])
    alpha_c = min(max(alpha, 0.0), 1.0)
    try:
        beta = infsup_constant(u_basis, p_basis, ops)
    except ValueError:
        beta = float("nan")  # degenerate velocity span; angle still valid
    return AngleReport(
        R=u_basis.R,
        M=p_basis.R,
        alpha=alpha_c,
        theta1=math.acos(alpha_c),
        singular_values=sv,
        infsup_beta=beta,
        div_rank=len(kept),
    )


def infsup_constant(u_basis: PodBasis, p_basis: PodBasis, ops: Operators) -> float:
    """Discrete inf-sup constant of the reduced velocity/pressure pair.

    beta = min over unit pressure q of max over velocity v of
    (div v, q) / (|grad v| |q|); with G the reduced divergence and the
    reduced stiffness factored as L L', this is the smallest singular
    value of G L^{-T}.
    """
    g = p_basis.modes.T @ (ops.divergence @ u_basis.modes)  # (M, R)
    s = u_basis.modes.T @ (ops.stiffness @ u_basis.modes)
    s = 0.5 * (s + s.T)
    try:
        L = scipy.linalg.cholesky(s, lower=True)
    except scipy.linalg.LinAlgError as e:
        raise ValueError(f"reduced stiffness is singular: {e}") from None
    y = scipy.linalg.solve_triangular(L, g.T, lower=True)  # L^{-1} G'
    sv = scipy.linalg.svd(y, compute_uv=False)
    return float(sv[-1]) if len(sv) >= g.shape[0] else 0.0


# ---------------------------------------------------------------------
# error norms
# ---------------------------------------------------------------------


@dataclass
class ErrorReport:
    dts: np.ndarray
    velocity_errors: np.ndarray
    pressure_errors: np.ndarray
    velocity_order: float | None
    pressure_order: float | None


def fit_order(dts, errors) -> float | None:
    """Least-squares slope of log(error) against log(dt); None if < 2 points."""
    dts = np.asarray(dts, dtype=float)
    errors = np.asarray(errors, dtype=float)
    if len(dts) < 2:
        return None
    slope = np.polyfit(np.log(dts), np.log(errors), 1)[0]
    return float(slope)


def l2l2_relative_error(times_a, A, times_b, B, weight=None, atol: float = 1e-9):
    """Relative discrete-in-time L2 error of trajectory A against reference B.

    Columns of A and B are states at times_a / times_b; every coarse
    time must appear in the reference grid.  Returns (error, degenerate)
    where degenerate flags a zero reference norm (error reported inf).
    """
    times_a = np.asarray(times_a, dtype=float)
    times_b = np.asarray(times_b, dtype=float)
    idx = []
    for t in times_a:
        j = int(np.argmin(np.abs(times_b - t)))
        if abs(times_b[j] - t) > atol:
            raise ValueError(f"time {t} of the coarse grid is missing from the reference grid")
        idx.append(j)
    diff = A - B[:, idx]
    ref = B[:, idx]
    if weight is None:
        num = np.einsum("in,in->n", diff, diff)
        den = np.einsum("in,in->n", ref, ref)
    else:
        num = np.einsum("in,in->n", diff, weight @ diff)
        den = np.einsum("in,in->n", ref, weight @ ref)
    if len(times_a) > 1:
        dt = np.diff(times_a)
        dt = np.concatenate([dt, dt[-1:]])
    else:
        dt = np.ones(1)
    num_t = float(np.sqrt(np.sum(dt * num)))
    den_t = float(np.sqrt(np.sum(dt * den)))
    if den_t == 0.0:
        return math.inf, True
    return num_t / den_t, False
