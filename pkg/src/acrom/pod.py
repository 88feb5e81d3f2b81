"""POD basis extraction and projection-error identities.

The basis solves the mass-weighted eigenproblem of the snapshot
correlation matrix (method of snapshots): C = X' W X, C a_i = lam_i a_i,
mode_i = X a_i / sqrt(lam_i).  Retained modes are re-orthonormalized
against W with one modified Gram-Schmidt pass to remove roundoff.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.linalg

from . import io as acio
from .offline import SnapshotSet

RANK_TOL = 1e-14  # relative eigenvalue floor for an admissible mode


class PodRankError(Exception):
    """Requested more modes than the snapshot set supports."""

    def __init__(self, requested: int, admissible: int):
        super().__init__(
            f"requested {requested} modes but the snapshot set has numerical rank "
            f"{admissible} (eigenvalues below {RANK_TOL:g} * lambda_1); "
            f"largest admissible count is {admissible}"
        )
        self.requested = requested
        self.admissible = admissible


@dataclass
class PodBasis:
    """Weighted-orthonormal modes for one field.

    modes : (n, R) coefficient columns, W-orthonormal
    eigenvalues : full descending spectrum of the correlation matrix
    weight : the mass matrix defining the inner product (M or Mp)
    """

    field: str  # 'velocity' | 'pressure'
    modes: np.ndarray
    eigenvalues: np.ndarray
    R: int
    weight: object

    @property
    def rank(self) -> int:
        return admissible_rank(self.eigenvalues)

    def orthonormality_defect(self) -> float:
        g = self.modes.T @ (self.weight @ self.modes)
        return float(np.abs(g - np.eye(self.R)).max())


def admissible_rank(eigenvalues: np.ndarray) -> int:
    if len(eigenvalues) == 0 or eigenvalues[0] <= 0:
        return 0
    return int(np.sum(eigenvalues > RANK_TOL * eigenvalues[0]))


def correlation_eigensystem(X: np.ndarray, W) -> tuple[np.ndarray, np.ndarray]:
    """Descending eigenpairs of the W-weighted snapshot correlation matrix.

    Eigenvalues in [-tol, 0) are clamped to zero; anything more negative
    indicates a broken weight matrix and raises.
    """
    C = X.T @ (W @ X)
    C = 0.5 * (C + C.T)
    lam, vecs = scipy.linalg.eigh(C)
    lam = lam[::-1]
    vecs = vecs[:, ::-1]
    if len(lam) and lam[0] > 0 and lam.min() < -1e-12 * lam[0]:
        raise ValueError(f"correlation matrix has negative eigenvalue {lam.min():.3e}")
    lam = np.clip(lam, 0.0, None)
    return lam, vecs


def _mgs_reorthonormalize(modes: np.ndarray, W) -> np.ndarray:
    """One modified Gram-Schmidt pass in the W inner product."""
    out = modes.copy()
    for i in range(out.shape[1]):
        v = out[:, i]
        for j in range(i):
            v -= (out[:, j] @ (W @ v)) * out[:, j]
        nrm = np.sqrt(v @ (W @ v))
        out[:, i] = v / nrm
    return out


def pod_from_matrix(X: np.ndarray, W, R: int, field: str) -> PodBasis:
    """Build a basis of R modes from snapshot columns X under weight W."""
    if X.shape[1] == 0:
        raise ValueError("snapshot matrix is empty")
    lam, vecs = correlation_eigensystem(X, W)
    rank = admissible_rank(lam)
    if R > rank:
        raise PodRankError(R, rank)
    modes = X @ (vecs[:, :R] / np.sqrt(lam[:R]))
    modes = _mgs_reorthonormalize(modes, W)
    return PodBasis(field=field, modes=modes, eigenvalues=lam, R=R, weight=W)


def compute_pod(snapshots: SnapshotSet, field: str, R: int, weight) -> PodBasis:
    """POD of a snapshot set; field selects velocity (weight M) or pressure (Mp)."""
    if field == "velocity":
        X = snapshots.U
    elif field == "pressure":
        X = snapshots.P
    else:
        raise ValueError(f"unknown field {field!r}")
    return pod_from_matrix(X, weight, R, field)


# ---------------------------------------------------------------------
# projections
# ---------------------------------------------------------------------


def l2_project(basis: PodBasis, v: np.ndarray) -> np.ndarray:
    """Reduced coordinates of the W-orthogonal projection of v."""
    v = np.asarray(v, dtype=float)
    if v.shape[0] != basis.modes.shape[0]:
        raise ValueError(
            f"vector has length {v.shape[0]}, expected {basis.modes.shape[0]}"
        )
    return basis.modes.T @ (basis.weight @ v)


def reconstruct(basis: PodBasis, coords: np.ndarray) -> np.ndarray:
    return basis.modes @ np.asarray(coords, dtype=float)


@dataclass
class ProjectionReport:
    """Measured projection errors against the eigenvalue-tail identities.

    The L2 identity says the summed squared projection errors of the
    snapshots equal the eigenvalue tail; the H1 variant weights each tail
    eigenvalue by the squared gradient norm of its mode.  Mismatches are
    relative to the full spectrum sum.
    """

    R: int
    l2_per_snapshot: np.ndarray
    l2_measured: float
    l2_tail: float
    l2_mismatch: float
    h1_per_snapshot: np.ndarray | None = None
    h1_measured: float | None = None
    h1_tail: float | None = None
    h1_mismatch: float | None = None


def projection_error_report(
    basis: PodBasis, snapshots: SnapshotSet, stiffness=None
) -> ProjectionReport:
    """Compare measured projection errors with the eigenvalue tails.

    ``stiffness`` enables the gradient-seminorm identity for velocity
    bases.  The basis must come from these snapshots under this weight.
    """
    X = snapshots.U if basis.field == "velocity" else snapshots.P
    W = basis.weight
    lam = basis.eigenvalues
    rank = basis.rank
    scale = max(float(lam.sum()), 1e-300)

    coords = basis.modes.T @ (W @ X)  # (R, N)
    resid = X - basis.modes @ coords
    l2_per = np.einsum("in,in->n", resid, W @ resid)
    l2_measured = float(l2_per.sum())
    l2_tail = float(lam[basis.R :].sum())
    l2_mis = abs(l2_measured - l2_tail) / scale

    h1_per = h1_measured = h1_tail = h1_mis = None
    if stiffness is not None and basis.field == "velocity":
        h1_per = np.einsum("in,in->n", resid, stiffness @ resid)
        h1_measured = float(h1_per.sum())
        # tail modes up to the numerical rank; zero eigenvalues cannot
        # contribute because the snapshots live in the nonzero-lambda span
        if basis.R < rank:
            tail = _tail_modes(X, W, lam, basis.R, rank)
            gnorms = np.einsum("ik,ik->k", tail, stiffness @ tail)
            h1_tail = float(gnorms @ lam[basis.R : rank])
        else:
            h1_tail = 0.0
        h1_mis = abs(h1_measured - h1_tail) / scale

    return ProjectionReport(
        R=basis.R,
        l2_per_snapshot=l2_per,
        l2_measured=l2_measured,
        l2_tail=l2_tail,
        l2_mismatch=l2_mis,
        h1_per_snapshot=h1_per,
        h1_measured=h1_measured,
        h1_tail=h1_tail,
        h1_mismatch=h1_mis,
    )


def _tail_modes(X, W, lam, R, rank):
    _, vecs = correlation_eigensystem(X, W)
    return X @ (vecs[:, R:rank] / np.sqrt(lam[R:rank]))


# ---------------------------------------------------------------------
# inverse estimate
# ---------------------------------------------------------------------


def pod_inverse_constant(basis: PodBasis, stiffness) -> float:
    """Spectral norm of the reduced stiffness (gradient inverse estimate).

    For any reduced field v = modes @ c, |grad v| <= sqrt(value) * |v|.
    """
    if basis.field != "velocity":
        raise ValueError("inverse estimate applies to the velocity basis")
    s_r = basis.modes.T @ (stiffness @ basis.modes)
    s_r = 0.5 * (s_r + s_r.T)
    return float(scipy.linalg.eigvalsh(s_r)[-1])


# ---------------------------------------------------------------------
# persistence
# ---------------------------------------------------------------------


def save_basis(path, basis: PodBasis, provenance: str = "") -> None:
    acio.write_artifact(
        path,
        "basis",
        {"field": basis.field, "R": basis.R, "provenance": provenance},
        {"modes": basis.modes, "eigenvalues": basis.eigenvalues},
    )


def load_basis(path, weight) -> PodBasis:
    hdr, arrays = acio.read_artifact(path)
    if hdr.kind != "basis":
        raise acio.ArtifactError(f"{path}: expected a basis artifact, found {hdr.kind!r}")
    return PodBasis(
        field=hdr.meta["field"],
        modes=arrays["modes"],
        eigenvalues=arrays["eigenvalues"],
        R=int(hdr.meta["R"]),
        weight=weight,
    )
