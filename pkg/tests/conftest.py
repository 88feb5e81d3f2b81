import numpy as np
import pytest

from acrom.fem import assemble_forcing, assemble_operators, build_dofmap
from acrom.mesh import BoundaryTag, Mesh, generate_offset_cylinder_mesh
from acrom.offline import OfflineConfig, SnapshotSet, rotational_body_force, run_offline


@pytest.fixture(scope="session")
def tiny_annulus():
    """Small offset annulus (~180 triangles) for fast operator tests."""
    return generate_offset_cylinder_mesh(1.0, 0.4, 0.1, 0.0, 0.35)


@pytest.fixture(scope="session")
def tiny_ops(tiny_annulus):
    return assemble_operators(tiny_annulus, build_dofmap(tiny_annulus))


@pytest.fixture(scope="session")
def concentric_annulus():
    """Annulus centered at the origin; drag/lift closed forms live here."""
    return generate_offset_cylinder_mesh(1.0, 0.4, 0.0, 0.0, 0.2)


@pytest.fixture(scope="session")
def square_mesh():
    """Hand-built two-triangle unit square (dense-oracle playground)."""
    verts = np.array([[0.0, 0.0], [1.0, 0.0], [1.0, 1.0], [0.0, 1.0]])
    tris = np.array([[0, 1, 2], [0, 2, 3]])
    edges = np.array([[0, 1], [1, 2], [2, 3], [3, 0]])
    tags = np.full(4, int(BoundaryTag.OUTER_CYLINDER))
    return Mesh(verts, tris, edges, tags, geometry=None)


@pytest.fixture(scope="session")
def tiny_run(tiny_annulus, tiny_ops):
    """Short forced run on the tiny annulus: 30 steps, snapshots kept."""
    cfg = OfflineConfig(dt=0.02, t_end=0.6, nu=0.01, eps=1e-4)
    return run_offline(cfg, tiny_annulus, ops=tiny_ops)


@pytest.fixture(scope="session")
def tiny_snapshots(tiny_run, tiny_annulus, tiny_ops):
    """The tiny run without its all-zero initial column (full-rank set)."""
    return SnapshotSet(
        times=tiny_run.times[1:],
        U=tiny_run.U[:, 1:],
        P=tiny_run.P[:, 1:],
        config=tiny_run.config,
        mesh=tiny_annulus,
        dofmap=tiny_ops.dofmap,
    )


@pytest.fixture(scope="session")
def tiny_forcing(tiny_annulus, tiny_ops):
    return assemble_forcing(tiny_annulus, tiny_ops.dofmap, rotational_body_force)
