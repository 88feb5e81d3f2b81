"""Reduced operators and the online artificial-compression integrator.

Galerkin projection onto the POD bases turns the full-order scheme into
a dense R x R step.  The pressure update is eliminated exactly, so each
step solves one dense system in the velocity coordinates; a monolithic
(R+M) path exists for cross-checking.  Online cost depends only on the
mode counts, never on the underlying mesh.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from . import io as acio
from .fem import Operators, assemble_convection_skew
from .pod import PodBasis, l2_project


class RomBuildError(Exception):
    """Reduced operators failed their construction invariants."""


@dataclass(frozen=True)
class ReducedModel:
    """Dense reduced operators ready for online stepping.

    T is the convection tensor with T[k, i, j] = b*(mode_k, mode_j,
    mode_i): skew-symmetric in its last two slots, contracted against
    the lagged coordinates in the first.
    """

    R: int
    M: int
    K_r: np.ndarray  # (R, R) reduced stiffness
    D_r: np.ndarray  # (M, R) reduced divergence (psi_k, div phi_i)
    T: np.ndarray  # (R, R, R) reduced convection
    f_r: np.ndarray  # (R,) reduced forcing (steady)
    nu: float
    eps: float
    dt: float
    u_basis: PodBasis = None
    p_basis: PodBasis = None

    def truncate(self, R: int, M: int) -> "ReducedModel":
        """Submodel with the leading R velocity and M pressure modes."""
        if R > self.R or M > self.M:
            raise ValueError(f"cannot truncate to ({R}, {M}) from ({self.R}, {self.M})")
        return replace(
            self,
            R=R,
            M=M,
            K_r=self.K_r[:R, :R].copy(),
            D_r=self.D_r[:M, :R].copy(),
            T=self.T[:R, :R, :R].copy(),
            f_r=self.f_r[:R].copy(),
        )

    def with_forcing_scale(self, scale: float) -> "ReducedModel":
        return replace(self, f_r=scale * self.f_r)

    def with_dt(self, dt: float) -> "ReducedModel":
        return replace(self, dt=dt)

    def with_eps(self, eps: float) -> "ReducedModel":
        return replace(self, eps=eps)

    def convection_matrix(self, a: np.ndarray) -> np.ndarray:
        """N_r(a)[i, j] = sum_k a_k T[k, i, j]."""
        return np.einsum("k,kij->ij", a, self.T)


def build_reduced_model(
    u_basis: PodBasis,
    p_basis: PodBasis,
    ops: Operators,
    f_vec: np.ndarray,
    nu: float,
    eps: float,
    dt: float,
    check_tol: float = 1e-10,
) -> ReducedModel:
    """Project the full-order operators onto the POD bases.

    Verifies at build time that the reduced mass matrices are identities
    (orthonormality), the convection tensor is skew in its trailing
    slots, and the reduced stiffness is symmetric.
    """
    phi = u_basis.modes
    psi = p_basis.modes
    R = u_basis.R
    M = p_basis.R
    if phi.shape[0] != ops.dofmap.n_u or psi.shape[0] != ops.dofmap.n_p:
        raise RomBuildError("basis dimensions do not match the mesh operators")

    mu = phi.T @ (ops.mass_v @ phi)
    mp = psi.T @ (ops.mass_p @ psi)
    if np.abs(mu - np.eye(R)).max() > check_tol or np.abs(mp - np.eye(M)).max() > check_tol:
        raise RomBuildError("reduced mass matrices deviate from identity: bases not orthonormal")

    K_r = phi.T @ (ops.stiffness @ phi)
    K_r = 0.5 * (K_r + K_r.T)
    D_r = psi.T @ (ops.divergence @ phi)

    T = np.empty((R, R, R))
    for k in range(R):
        n_k = assemble_convection_skew(ops.mesh, ops.dofmap, phi[:, k])
        T[k] = phi.T @ (n_k @ phi)
    skew_defect = np.abs(T + np.transpose(T, (0, 2, 1))).max()
    scale = max(np.abs(T).max(), 1e-300)
    if skew_defect > 1e-12 * scale:
        raise RomBuildError(f"convection tensor skew defect {skew_defect/scale:.2e}")

    f_r = phi.T @ f_vec
    return ReducedModel(
        R=R, M=M, K_r=K_r, D_r=D_r, T=T, f_r=f_r,
        nu=nu, eps=eps, dt=dt, u_basis=u_basis, p_basis=p_basis,
    )


# ---------------------------------------------------------------------
# stepping
# ---------------------------------------------------------------------


def ac_rom_step(a_u: np.ndarray, a_p: np.ndarray, model: ReducedModel, method: str = "eliminated"):
    """One backward-Euler AC step in reduced coordinates.

    Eliminated path: substitute the exact pressure update
    a_p_new = a_p - (dt/eps) D a_u_new into the momentum equation,
    leaving one dense R x R solve with a (dt^2/eps) D'D augmentation.
    """
    dt, eps, nu = model.dt, model.eps, model.nu
    n_r = model.convection_matrix(a_u)
    momentum = np.eye(model.R) + dt * nu * model.K_r + dt * n_r
    rhs_u = a_u + dt * model.f_r
    if method == "eliminated":
        lhs = momentum + (dt * dt / eps) * (model.D_r.T @ model.D_r)
        a_u1 = np.linalg.solve(lhs, rhs_u + dt * (model.D_r.T @ a_p))
        a_p1 = a_p - (dt / eps) * (model.D_r @ a_u1)
    elif method == "monolithic":
        R, M = model.R, model.M
        big = np.zeros((R + M, R + M))
        big[:R, :R] = momentum
        big[:R, R:] = -dt * model.D_r.T
        big[R:, :R] = dt * model.D_r
        big[R:, R:] = eps * np.eye(M)
        sol = np.linalg.solve(big, np.concatenate([rhs_u, eps * a_p]))
        a_u1, a_p1 = sol[:R], sol[R:]
    else:
        raise ValueError(f"unknown method {method!r}")
    return a_u1, a_p1


def rom_energy_residual(model: ReducedModel, a_u0, a_p0, a_u1, a_p1) -> float:
    """Relative residual of the reduced per-step energy identity.

    Orthonormality turns the L2 norms into coordinate norms:
    |a_u1|^2 + eps |a_p1|^2 + |da_u|^2 + eps |da_p|^2
      + 2 dt nu a_u1' K a_u1  =  |a_u0|^2 + eps |a_p0|^2 + 2 dt f' a_u1.
    """
    du = a_u1 - a_u0
    dp = a_p1 - a_p0
    lhs = (
        a_u1 @ a_u1
        + model.eps * (a_p1 @ a_p1)
        + du @ du
        + model.eps * (dp @ dp)
        + 2.0 * model.dt * model.nu * (a_u1 @ (model.K_r @ a_u1))
    )
    rhs = a_u0 @ a_u0 + model.eps * (a_p0 @ a_p0) + 2.0 * model.dt * (model.f_r @ a_u1)
    return abs(lhs - rhs) / max(abs(rhs), 1e-300)


@dataclass
class RomTrajectory:
    """Coordinate history of one reduced run plus per-step residuals."""

    times: np.ndarray
    a_u: np.ndarray  # (n_steps + 1, R)
    a_p: np.ndarray  # (n_steps + 1, M)
    energy_residual: np.ndarray  # (n_steps,)

    @property
    def n_steps(self) -> int:
        return len(self.energy_residual)


def project_initial_state(u_basis: PodBasis, p_basis: PodBasis, u_full, p_full):
    """Reduced initial coordinates from a full-order state (L2 projection)."""
    return l2_project(u_basis, u_full), l2_project(p_basis, p_full)


def run_rom(
    model: ReducedModel,
    a0: tuple[np.ndarray, np.ndarray],
    t_start: float,
    t_end: float,
    method: str = "eliminated",
) -> RomTrajectory:
    """Step the reduced model across a window from coordinates a0.

    Only R- and M-sized arrays are touched per step, so the cost per
    step is independent of the full-order resolution.
    """
    dt = model.dt
    n_steps = int(round((t_end - t_start) / dt))
    if n_steps < 0:
        raise ValueError("t_end must not precede t_start")
    a_u = np.empty((n_steps + 1, model.R))
    a_p = np.empty((n_steps + 1, model.M))
    resid = np.empty(n_steps)
    a_u[0] = a0[0]
    a_p[0] = a0[1]
    for n in range(n_steps):
        a_u[n + 1], a_p[n + 1] = ac_rom_step(a_u[n], a_p[n], model, method=method)
        resid[n] = rom_energy_residual(model, a_u[n], a_p[n], a_u[n + 1], a_p[n + 1])
    times = t_start + dt * np.arange(n_steps + 1)
    return RomTrajectory(times=times, a_u=a_u, a_p=a_p, energy_residual=resid)


# ---------------------------------------------------------------------
# persistence
# ---------------------------------------------------------------------


def save_trajectory(path, traj: RomTrajectory, meta: dict) -> None:
    acio.write_artifact(
        path,
        "trajectory",
        meta,
        {
            "times": traj.times,
            "a_u": traj.a_u,
            "a_p": traj.a_p,
            "energy_residual": traj.energy_residual,
        },
    )


def load_trajectory(path) -> tuple[RomTrajectory, dict]:
    hdr, arrays = acio.read_artifact(path)
    if hdr.kind != "trajectory":
        raise acio.ArtifactError(f"{path}: expected a trajectory artifact, found {hdr.kind!r}")
    traj = RomTrajectory(
        times=arrays["times"],
        a_u=arrays["a_u"],
        a_p=arrays["a_p"],
        energy_residual=arrays["energy_residual"],
    )
    return traj, hdr.meta
