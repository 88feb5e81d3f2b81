import numpy as np
import pytest

from acrom.offline import SnapshotSet
from acrom.pod import (PodBasis, PodRankError, compute_pod, l2_project, load_basis,
                       pod_from_matrix, pod_inverse_constant, projection_error_report,
                       reconstruct, save_basis)

import oracle


@pytest.fixture(scope="module")
def velocity_basis(tiny_snapshots, tiny_ops):
    return compute_pod(tiny_snapshots, "velocity", 5, tiny_ops.mass_v)


@pytest.fixture(scope="module")
def pressure_basis(tiny_snapshots, tiny_ops):
    return compute_pod(tiny_snapshots, "pressure", 5, tiny_ops.mass_p)


def test_orthonormality_both_fields(velocity_basis, pressure_basis):
    assert velocity_basis.orthonormality_defect() <= 1e-10
    assert pressure_basis.orthonormality_defect() <= 1e-10


def test_eigenvalues_descending_nonnegative(velocity_basis):
    lam = velocity_basis.eigenvalues
    assert np.all(np.diff(lam) <= 1e-12 * lam[0])
    assert np.all(lam >= 0.0)


def test_trace_identity(tiny_snapshots, tiny_ops, velocity_basis):
    # sum of eigenvalues equals the summed weighted energy of the snapshots
    total = sum(
        tiny_snapshots.U[:, j] @ (tiny_ops.mass_v @ tiny_snapshots.U[:, j])
        for j in range(tiny_snapshots.n_snapshots)
    )
    lam_sum = velocity_basis.eigenvalues.sum()
    assert abs(lam_sum - total) <= 1e-10 * total


def test_single_snapshot_pod(tiny_snapshots, tiny_ops):
    u = tiny_snapshots.U[:, 4]
    single = SnapshotSet(
        times=tiny_snapshots.times[4:5], U=u[:, None], P=tiny_snapshots.P[:, 4:5],
        config=tiny_snapshots.config,
    )
    basis = compute_pod(single, "velocity", 1, tiny_ops.mass_v)
    nrm = np.sqrt(u @ (tiny_ops.mass_v @ u))
    assert abs(basis.eigenvalues[0] - nrm**2) <= 1e-12 * nrm**2
    # mode equals the normalized snapshot up to sign
    diff = min(
        np.abs(basis.modes[:, 0] - u / nrm).max(),
        np.abs(basis.modes[:, 0] + u / nrm).max(),
    )
    assert diff <= 1e-12


def test_degenerate_pair_keeps_orthonormality(tiny_ops):
    # two weighted-orthogonal columns of equal norm: eigenvalues tie, any
    # rotation is a valid basis, the invariant is orthonormality
    rng = np.random.default_rng(0)
    n = tiny_ops.dofmap.n_u
    w = tiny_ops.mass_v
    a = rng.standard_normal(n)
    b = rng.standard_normal(n)
    b -= (a @ (w @ b)) / (a @ (w @ a)) * a
    a /= np.sqrt(a @ (w @ a))
    b /= np.sqrt(b @ (w @ b))
    basis = pod_from_matrix(np.column_stack([a, b]), w, 2, "velocity")
    assert abs(basis.eigenvalues[0] - basis.eigenvalues[1]) <= 1e-10 * basis.eigenvalues[0]
    assert basis.orthonormality_defect() <= 1e-10


def test_rank_error_names_admissible_count(tiny_snapshots, tiny_ops):
    u = tiny_snapshots.U[:, :1]
    single = SnapshotSet(
        times=tiny_snapshots.times[:1], U=u, P=tiny_snapshots.P[:, :1],
        config=tiny_snapshots.config,
    )
    with pytest.raises(PodRankError) as err:
        compute_pod(single, "velocity", 2, tiny_ops.mass_v)
    assert err.value.admissible == 1
    assert "1" in str(err.value)


def test_projection_unit_coordinates(velocity_basis):
    c = l2_project(velocity_basis, velocity_basis.modes[:, 2])
    expected = np.zeros(velocity_basis.R)
    expected[2] = 1.0
    assert np.abs(c - expected).max() <= 1e-10


def test_projection_of_orthogonal_vector_is_zero(velocity_basis, tiny_ops):
    rng = np.random.default_rng(1)
    v = rng.standard_normal(tiny_ops.dofmap.n_u)
    v -= reconstruct(velocity_basis, l2_project(velocity_basis, v))
    assert np.abs(l2_project(velocity_basis, v)).max() <= 1e-9 * np.sqrt(v @ (tiny_ops.mass_v @ v))


def test_projection_pythagoras(velocity_basis, tiny_ops):
    rng = np.random.default_rng(2)
    v = rng.standard_normal(tiny_ops.dofmap.n_u)
    c = l2_project(velocity_basis, v)
    r = v - reconstruct(velocity_basis, c)
    lhs = v @ (tiny_ops.mass_v @ v)
    rhs = c @ c + r @ (tiny_ops.mass_v @ r)
    assert abs(lhs - rhs) <= 1e-10 * lhs


def test_projection_idempotent(velocity_basis):
    rng = np.random.default_rng(3)
    c = rng.standard_normal(velocity_basis.R)
    c2 = l2_project(velocity_basis, reconstruct(velocity_basis, c))
    assert np.abs(c2 - c).max() <= 1e-12 * np.abs(c).max()


def test_projection_dimension_mismatch(velocity_basis):
    with pytest.raises(ValueError):
        l2_project(velocity_basis, np.zeros(3))


@pytest.mark.parametrize("R", [0, 3, None])
def test_tail_identities(tiny_snapshots, tiny_ops, R):
    # measured projection-error sums equal the eigenvalue tails; None = full rank
    probe = compute_pod(tiny_snapshots, "velocity", 1, tiny_ops.mass_v)
    if R is None:
        R = probe.rank
    if R == 0:
        basis = PodBasis("velocity", probe.modes[:, :0], probe.eigenvalues, 0, tiny_ops.mass_v)
    else:
        basis = compute_pod(tiny_snapshots, "velocity", R, tiny_ops.mass_v)
    rep = projection_error_report(basis, tiny_snapshots, stiffness=tiny_ops.stiffness)
    assert rep.l2_mismatch <= 1e-8
    assert rep.h1_mismatch <= 1e-8
    if R == 0:
        assert abs(rep.l2_measured - basis.eigenvalues.sum()) <= 1e-10 * basis.eigenvalues.sum()
    if R == probe.rank:
        assert rep.l2_measured <= 1e-10 * basis.eigenvalues.sum()


def test_pressure_tail_identity(tiny_snapshots, tiny_ops):
    basis = compute_pod(tiny_snapshots, "pressure", 4, tiny_ops.mass_p)
    rep = projection_error_report(basis, tiny_snapshots)
    assert rep.l2_mismatch <= 1e-8


def test_inverse_constant_single_mode(velocity_basis, tiny_ops):
    one = PodBasis("velocity", velocity_basis.modes[:, :1], velocity_basis.eigenvalues, 1,
                   tiny_ops.mass_v)
    s = pod_inverse_constant(one, tiny_ops.stiffness)
    phi = velocity_basis.modes[:, 0]
    assert abs(s - phi @ (tiny_ops.stiffness @ phi)) <= 1e-10 * s


def test_inverse_estimate_inequality(velocity_basis, tiny_ops):
    s = pod_inverse_constant(velocity_basis, tiny_ops.stiffness)
    rng = np.random.default_rng(4)
    for _ in range(100):
        c = rng.standard_normal(velocity_basis.R)
        v = reconstruct(velocity_basis, c)
        grad = np.sqrt(v @ (tiny_ops.stiffness @ v))
        nrm = np.sqrt(v @ (tiny_ops.mass_v @ v))
        assert grad <= np.sqrt(s) * nrm * (1.0 + 1e-12)


def test_inverse_constant_nondecreasing_in_R(tiny_snapshots, tiny_ops):
    probe = compute_pod(tiny_snapshots, "velocity", 1, tiny_ops.mass_v)
    values = []
    for R in range(1, probe.rank + 1):
        b = compute_pod(tiny_snapshots, "velocity", R, tiny_ops.mass_v)
        values.append(pod_inverse_constant(b, tiny_ops.stiffness))
    assert all(values[i + 1] >= values[i] * (1 - 1e-12) for i in range(len(values) - 1))


def test_mode_gradient_norm_against_oracle(velocity_basis, tiny_snapshots, tiny_ops):
    phi = velocity_basis.modes[:, 1]
    direct = oracle.grad_inner(tiny_snapshots.mesh, tiny_ops.dofmap, phi, phi)
    assembled = phi @ (tiny_ops.stiffness @ phi)
    assert abs(direct - assembled) <= 1e-9 * abs(direct)


def test_basis_persistence(tmp_path, velocity_basis, tiny_ops):
    path = tmp_path / "basis.bin"
    save_basis(path, velocity_basis, provenance="abc123")
    back = load_basis(path, tiny_ops.mass_v)
    assert np.array_equal(back.modes, velocity_basis.modes)
    assert np.array_equal(back.eigenvalues, velocity_basis.eigenvalues)
    assert back.R == velocity_basis.R and back.field == "velocity"
