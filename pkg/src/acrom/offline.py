"""Full-order backward-Euler artificial-compression integrator.

Each step solves the coupled update: implicit momentum with the
advecting field lagged one step, and the relaxed continuity equation
eps * (p_new - p_old)/dt + div(u_new) = 0.  The default path factorizes
the monolithic velocity-pressure system with a sparse direct solver; a
pressure-eliminated path is kept for cross-checking on small problems.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from . import io as acio
from .fem import DofMap, Operators, assemble_convection_skew, assemble_forcing, assemble_operators, build_dofmap
from .mesh import Mesh


class SolverError(Exception):
    """Linear solve failed or produced an unusable state."""

    def __init__(self, message: str, last_good_time: float | None = None):
        super().__init__(message)
        self.last_good_time = last_good_time


def rotational_body_force(x, y, t=0.0):
    """Steady counterclockwise forcing that vanishes on the unit circle."""
    s = 1.0 - x * x - y * y
    return -4.0 * y * s, 4.0 * x * s


def zero_body_force(x, y, t=0.0):
    return np.zeros_like(x), np.zeros_like(x)


_FORCING = {"rotational": rotational_body_force, "zero": zero_body_force}


@dataclass
class OfflineConfig:
    dt: float
    t_end: float
    nu: float = 0.01
    eps: float = 1e-6
    t_start: float = 0.0
    snapshot_every: int = 1
    forcing: str = "rotational"
    initial_state: str = "rest"
    initial_file: str = ""
    checkpoint_every: int = 0

    def __post_init__(self):
        if self.dt <= 0 or self.eps <= 0:
            raise ValueError("dt and eps must be positive")
        if self.t_end <= self.t_start:
            raise ValueError("t_end must exceed t_start")
        if self.snapshot_every < 1:
            raise ValueError("snapshot_every must be >= 1")

    @property
    def n_steps(self) -> int:
        n = int(round((self.t_end - self.t_start) / self.dt))
        if abs(self.t_start + n * self.dt - self.t_end) > 1e-9 * max(1.0, abs(self.t_end)):
            raise ValueError("time window is not an integer number of steps")
        return n

    def meta(self) -> dict:
        return {
            "nu": self.nu,
            "dt": self.dt,
            "eps": self.eps,
            "t_start": self.t_start,
            "t_end": self.t_end,
            "snapshot_every": self.snapshot_every,
            "forcing": self.forcing,
        }


@dataclass
class SnapshotSet:
    """Time-indexed coefficient columns from one full-order run.

    U is n_u x N (velocity), P is n_p x N (pressure); column j was taken
    at times[j].  energy_residual / kinetic_energy / div_norm carry the
    per-step stability accounting of the producing run.
    """

    times: np.ndarray
    U: np.ndarray
    P: np.ndarray
    config: OfflineConfig
    mesh: Mesh = None
    dofmap: DofMap = None
    step_times: np.ndarray = None
    energy_residual: np.ndarray = None
    kinetic_energy: np.ndarray = None

    @property
    def n_snapshots(self) -> int:
        return self.U.shape[1]

    def validate(self, ops: Operators) -> None:
        if np.any(np.diff(self.times) <= 0):
            raise ValueError("snapshot times must be strictly increasing")
        mask = ops.dofmap.dirichlet_mask
        if self.U.size and np.abs(self.U[mask, :]).max() > 0:
            raise ValueError("velocity snapshots must vanish on Dirichlet dofs")
        one = np.ones(ops.dofmap.n_p)
        mp1 = ops.mass_p @ one
        area = float(mp1 @ one)
        means = (mp1 @ self.P) / area
        if self.P.size and np.abs(means).max() > 1e-10:
            raise ValueError(f"pressure snapshots must have zero mean (max {np.abs(means).max():.2e})")


# ---------------------------------------------------------------------
# single step
# ---------------------------------------------------------------------


class AcFemStepper:
    """Precomputed operators and constraints for repeated AC steps.

    Solve methods:
      monolithic  -- sparse LU of the coupled system, refactorized every
                     step (reference path; bitwise-reproducible restarts).
      frozen      -- same coupled system solved by defect correction
                     against a cached LU, refactorized only when the
                     correction stalls; identical solutions to direct
                     solves within the 1e-13 iteration tolerance and much
                     faster when the advecting field changes slowly.
      eliminated  -- exact pressure elimination with a dense pressure
                     mass inverse; cross-check path for small problems.
    """

    DEFECT_TOL = 1e-13
    MAX_DEFECT_ITERS = 8

    def __init__(self, ops: Operators, config: OfflineConfig, method: str = "monolithic"):
        if method not in ("monolithic", "frozen", "eliminated"):
            raise ValueError(f"unknown solve method {method!r}")
        self.ops = ops
        self.cfg = config
        self.method = method
        dm = ops.dofmap
        self.dm = dm
        mask = dm.dirichlet_nodes
        self._keep_s = sp.diags((~mask).astype(float))
        self._fix_s = sp.diags(mask.astype(float))
        self.base_scalar = (ops.mass_scalar / config.dt + config.nu * ops.stiffness_scalar).tocsr()
        n = dm.n_nodes
        self.Bx = ops.divergence[:, :n].tocsr()
        self.By = ops.divergence[:, n:].tocsr()
        self.Bx_c = (self.Bx @ self._keep_s).tocsr()
        self.By_c = (self.By @ self._keep_s).tocsr()
        self.f_vec = assemble_forcing(ops.mesh, dm, _FORCING[config.forcing])
        one = np.ones(dm.n_p)
        self._mp_one = ops.mass_p @ one
        self._area = float(self._mp_one @ one)
        self._mp_scale = config.eps / config.dt
        self._lu = None
        self.n_factorizations = 0
        self.n_defect_iterations = 0

    def _momentum_scalar(self, u: np.ndarray) -> sp.csr_matrix:
        conv = assemble_convection_skew(self.ops.mesh, self.dm, u)
        n = self.dm.n_nodes
        a_s = self.base_scalar + conv[:n, :n]
        return (self._keep_s @ a_s @ self._keep_s + self._fix_s).tocsr()

    def _factorize(self, mono):
        try:
            lu = spla.splu(mono)
        except RuntimeError as e:
            raise SolverError(f"sparse factorization failed: {e}") from e
        self.n_factorizations += 1
        return lu

    def _frozen_solve(self, mono, rhs):
        if self._lu is None:
            self._lu = self._factorize(mono)
        x = self._lu.solve(rhs)
        floor = max(self.DEFECT_TOL * np.linalg.norm(rhs), 1e-300)
        for _ in range(self.MAX_DEFECT_ITERS):
            r = rhs - mono @ x
            if np.linalg.norm(r) <= floor:
                return x
            x = x + self._lu.solve(r)
            self.n_defect_iterations += 1
        # stalled against the cached factorization: refresh at this state
        self._lu = self._factorize(mono)
        x = self._lu.solve(rhs)
        x = x + self._lu.solve(rhs - mono @ x)
        return x

    def step(self, u: np.ndarray, p: np.ndarray):
        """Advance one time step; returns (u_new, p_new, info dict)."""
        cfg = self.cfg
        dm = self.dm
        a_c = self._momentum_scalar(u)

        rhs_u = self.f_vec + (self.ops.mass_v @ u) / cfg.dt
        rhs_u[dm.dirichlet_mask] = 0.0
        rhs_p = self._mp_scale * (self.ops.mass_p @ p)
        rhs = np.concatenate([rhs_u, rhs_p])

        mono = sp.bmat(
            [
                [a_c, None, -self.Bx_c.T],
                [None, a_c, -self.By_c.T],
                [self.Bx_c, self.By_c, self._mp_scale * self.ops.mass_p],
            ],
            format="csc",
        )
        if self.method == "monolithic":
            x = self._factorize(mono).solve(rhs)
        elif self.method == "frozen":
            x = self._frozen_solve(mono, rhs)
        else:
            x = self._solve_eliminated(a_c, rhs_u, p)

        resid = np.linalg.norm(mono @ x - rhs)
        scale = np.linalg.norm(rhs)
        rel = resid / scale if scale > 0 else resid
        if not np.isfinite(rel) or rel > 1e-9:
            raise SolverError(f"linear solve residual {rel:.3e} exceeds 1e-9 (method={self.method})")

        u_new = x[: dm.n_u]
        p_new = x[dm.n_u :]
        # Q = zero-mean L2: the discrete update conserves the weighted mean
        # exactly; subtraction only removes roundoff drift.
        p_new = p_new - (self._mp_one @ p_new) / self._area
        return u_new, p_new, {"residual": rel}

    def _solve_eliminated(self, a_c, rhs_u, p):
        """Pressure-eliminated solve; dense pressure-mass inverse, so only
        suitable for modest pressure spaces (used for cross-checks)."""
        cfg = self.cfg
        dm = self.dm
        b_c = sp.bmat([[self.Bx_c, self.By_c]], format="csr")
        a_full = sp.block_diag([a_c, a_c], format="csr")
        mp_dense = self.ops.mass_p.toarray()
        y = np.linalg.solve(mp_dense, b_c.toarray())  # Mp^{-1} B
        s = a_full.toarray() + (cfg.dt / cfg.eps) * (b_c.T.toarray() @ y)
        rhs_mom = rhs_u + b_c.T @ p
        u_new = np.linalg.solve(s, rhs_mom)
        p_new = p - (cfg.dt / cfg.eps) * (y @ u_new)
        return np.concatenate([u_new, p_new])


def ac_fem_step(state, ops: Operators, config: OfflineConfig, method: str = "monolithic"):
    """One backward-Euler AC step from state=(u, p); convenience wrapper."""
    u, p = state
    stepper = AcFemStepper(ops, config, method=method)
    u2, p2, _ = stepper.step(np.asarray(u, dtype=float), np.asarray(p, dtype=float))
    return u2, p2


def solve_coupled_system(ops: Operators, config: OfflineConfig, u, p, method: str):
    """Advance (u, p) by one step with the requested solve path.

    Both paths satisfy the same coupled equations; tests check they agree.
    """
    stepper = AcFemStepper(ops, config, method=method)
    return stepper.step(np.asarray(u, dtype=float), np.asarray(p, dtype=float))[:2]


# ---------------------------------------------------------------------
# energy accounting
# ---------------------------------------------------------------------


def fom_energy_residual(ops: Operators, cfg: OfflineConfig, u0, p0, u1, p1, f_vec) -> float:
    """Relative residual of the per-step discrete energy identity.

    |u1|^2 + eps |p1|^2 + |u1-u0|^2 + eps |p1-p0|^2 + 2 dt nu |grad u1|^2
    must equal |u0|^2 + eps |p0|^2 + 2 dt (f, u1); exact for the scheme.
    """
    m, k, mp = ops.mass_v, ops.stiffness, ops.mass_p
    du, dp = u1 - u0, p1 - p0
    lhs = (
        u1 @ (m @ u1)
        + cfg.eps * (p1 @ (mp @ p1))
        + du @ (m @ du)
        + cfg.eps * (dp @ (mp @ dp))
        + 2.0 * cfg.dt * cfg.nu * (u1 @ (k @ u1))
    )
    rhs = u0 @ (m @ u0) + cfg.eps * (p0 @ (mp @ p0)) + 2.0 * cfg.dt * (f_vec @ u1)
    denom = max(abs(rhs), 1e-300)
    return abs(lhs - rhs) / denom


# ---------------------------------------------------------------------
# time loop
# ---------------------------------------------------------------------


def save_checkpoint(path, u, p, t, step, cfg: OfflineConfig) -> None:
    acio.write_artifact(
        path,
        "checkpoint",
        {**cfg.meta(), "t": t, "step": step},
        {"u": u, "p": p, "t": np.array([t]), "step": np.array([step])},
    )


def load_checkpoint(path):
    hdr, arrays = acio.read_artifact(path)
    if hdr.kind != "checkpoint":
        raise acio.ArtifactError(f"{path}: expected a checkpoint artifact, found {hdr.kind!r}")
    return arrays["u"], arrays["p"], float(arrays["t"][0]), int(arrays["step"][0])


def run_offline(
    config: OfflineConfig,
    mesh: Mesh,
    ops: Operators | None = None,
    initial=None,
    checkpoint_path=None,
    progress=None,
    method: str = "monolithic",
) -> SnapshotSet:
    """March the full-order scheme over the configured window.

    Snapshots (including the initial state) are taken every
    ``snapshot_every`` steps.  Identical config and mesh reproduce the
    run bitwise.  On solver failure the last checkpoint survives and the
    error reports the last completed time.
    """
    if ops is None:
        ops = assemble_operators(mesh, build_dofmap(mesh))
    dm = ops.dofmap

    if initial is not None:
        u = np.array(initial[0], dtype=float)
        p = np.array(initial[1], dtype=float)
    elif config.initial_state == "from_file":
        u, p, t_ck, _ = load_checkpoint(config.initial_file)
        if abs(t_ck - config.t_start) > 1e-9:
            raise ValueError(
                f"checkpoint time {t_ck} does not match configured t_start {config.t_start}"
            )
    else:
        u = np.zeros(dm.n_u)
        p = np.zeros(dm.n_p)

    stepper = AcFemStepper(ops, config, method=method)
    n_steps = config.n_steps

    times = [config.t_start]
    cols_u = [u.copy()]
    cols_p = [p.copy()]
    step_times = np.empty(n_steps)
    resid = np.empty(n_steps)
    kin = np.empty(n_steps + 1)
    kin[0] = 0.5 * (u @ (ops.mass_v @ u))

    t = config.t_start
    for step in range(1, n_steps + 1):
        try:
            u_new, p_new, _ = stepper.step(u, p)
        except SolverError as e:
            raise SolverError(str(e), last_good_time=t) from e
        t = config.t_start + step * config.dt
        resid[step - 1] = fom_energy_residual(ops, config, u, p, u_new, p_new, stepper.f_vec)
        u, p = u_new, p_new
        kin[step] = 0.5 * (u @ (ops.mass_v @ u))
        step_times[step - 1] = t
        if step % config.snapshot_every == 0:
            times.append(t)
            cols_u.append(u.copy())
            cols_p.append(p.copy())
        if checkpoint_path and config.checkpoint_every and step % config.checkpoint_every == 0:
            save_checkpoint(checkpoint_path, u, p, t, step, config)
        if progress:
            progress(step, n_steps, t)

    if checkpoint_path:
        save_checkpoint(checkpoint_path, u, p, t, n_steps, config)

    snaps = SnapshotSet(
        times=np.array(times),
        U=np.column_stack(cols_u),
        P=np.column_stack(cols_p),
        config=config,
        mesh=mesh,
        dofmap=dm,
        step_times=step_times,
        energy_residual=resid,
        kinetic_energy=kin,
    )
    snaps.validate(ops)
    return snaps


# ---------------------------------------------------------------------
# snapshot persistence
# ---------------------------------------------------------------------


def save_snapshots(path, snaps: SnapshotSet) -> None:
    arrays = {"times": snaps.times, "U": snaps.U, "P": snaps.P}
    if snaps.step_times is not None:
        arrays["step_times"] = snaps.step_times
        arrays["energy_residual"] = snaps.energy_residual
        arrays["kinetic_energy"] = snaps.kinetic_energy
    acio.write_artifact(path, "snapshots", snaps.config.meta(), arrays)


def load_snapshots(path, mesh: Mesh | None = None, dofmap: DofMap | None = None) -> SnapshotSet:
    hdr, arrays = acio.read_artifact(path)
    if hdr.kind != "snapshots":
        raise acio.ArtifactError(f"{path}: expected a snapshots artifact, found {hdr.kind!r}")
    m = hdr.meta
    cfg = OfflineConfig(
        dt=float(m["dt"]),
        t_end=float(m["t_end"]),
        nu=float(m["nu"]),
        eps=float(m["eps"]),
        t_start=float(m["t_start"]),
        snapshot_every=int(m["snapshot_every"]),
        forcing=m["forcing"],
    )
    return SnapshotSet(
        times=arrays["times"],
        U=arrays["U"],
        P=arrays["P"],
        config=cfg,
        mesh=mesh,
        dofmap=dofmap,
        step_times=arrays.get("step_times"),
        energy_residual=arrays.get("energy_residual"),
        kinetic_energy=arrays.get("kinetic_energy"),
    )
