import math
from fractions import Fraction

import numpy as np
import pytest
import scipy.sparse.linalg as spla

from acrom.fem import (TRI_QPOINTS, TRI_QWEIGHTS, apply_dirichlet, assemble_convection_skew,
                       assemble_divergence, assemble_forcing, assemble_operators,
                       assemble_pressure_mass, assemble_scalar_mass, assemble_velocity_mass,
                       assemble_velocity_stiffness, build_dofmap)
from acrom.mesh import BoundaryTag, Mesh, generate_offset_cylinder_mesh

import oracle

# Exact integrals of quadratic Lagrange basis products over the unit
# reference triangle (vertices (0,0),(1,0),(0,1)); entries times 360.
P2_MASS_360 = np.array(
    [
        [6, -1, -1, -4, 0, 0],
        [-1, 6, -1, 0, -4, 0],
        [-1, -1, 6, 0, 0, -4],
        [-4, 0, 0, 32, 16, 16],
        [0, -4, 0, 16, 32, 16],
        [0, 0, -4, 16, 16, 32],
    ],
    dtype=float,
)


@pytest.fixture(scope="module")
def unit_triangle():
    verts = np.array([[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]])
    tris = np.array([[0, 1, 2]])
    edges = np.array([[0, 1], [1, 2], [2, 0]])
    tags = np.zeros(3, dtype=int)
    return Mesh(verts, tris, edges, tags)


def test_quadrature_exact_to_degree_five():
    # the rule must integrate all monomials x^p y^q with p+q <= 5 exactly
    for p in range(6):
        for q in range(6 - p):
            exact = Fraction(math.factorial(p) * math.factorial(q), math.factorial(p + q + 2))
            quad = float(np.sum(TRI_QWEIGHTS * TRI_QPOINTS[:, 0] ** p * TRI_QPOINTS[:, 1] ** q))
            assert abs(quad - float(exact)) < 1e-15, (p, q)


def test_reference_p2_mass_matrix(unit_triangle):
    dm = build_dofmap(unit_triangle)
    ms = assemble_scalar_mass(unit_triangle, dm).toarray()
    assert np.abs(ms * 360.0 - P2_MASS_360).max() < 1e-12


def test_reference_p1_mass_matrix(unit_triangle):
    dm = build_dofmap(unit_triangle)
    mp = assemble_pressure_mass(unit_triangle, dm).toarray()
    area = 0.5
    expected = area / 12.0 * np.array([[2, 1, 1], [1, 2, 1], [1, 1, 2]], dtype=float)
    assert np.abs(mp - expected).max() < 1e-14


def test_dof_counts(tiny_annulus, tiny_ops):
    dm = tiny_ops.dofmap
    assert dm.n_u == 2 * (dm.n_vertices + dm.n_edges)
    assert dm.n_p == dm.n_vertices


def test_all_boundary_nodes_are_dirichlet(tiny_ops):
    dm = tiny_ops.dofmap
    n_v = dm.n_vertices
    for (a, b), _ in zip(dm.mesh.boundary_edges, dm.mesh.boundary_tags):
        e = dm.boundary_edge_index[(int(min(a, b)), int(max(a, b)))]
        assert dm.dirichlet_nodes[a] and dm.dirichlet_nodes[b]
        assert dm.dirichlet_nodes[n_v + e]


def test_mass_row_sum_is_twice_area(tiny_annulus, tiny_ops):
    one = np.ones(tiny_ops.dofmap.n_u)
    total = float(one @ (tiny_ops.mass_v @ one))
    assert abs(total - 2.0 * tiny_annulus.total_area) < 1e-12


def test_mass_symmetric_and_spd(tiny_ops):
    m = tiny_ops.mass_v
    assert abs(m - m.T).max() <= 1e-12 * abs(m).max()
    np.linalg.cholesky(m.toarray())  # raises if not positive definite


def test_pressure_mass_integrates_area(tiny_annulus, tiny_ops):
    one = np.ones(tiny_ops.dofmap.n_p)
    assert abs(one @ (tiny_ops.mass_p @ one) - tiny_annulus.total_area) < 1e-12
    assert abs(tiny_ops.mass_p - tiny_ops.mass_p.T).max() <= 1e-12 * abs(tiny_ops.mass_p).max()


def test_stiffness_kernel_and_symmetry(tiny_ops):
    k = tiny_ops.stiffness
    assert abs(k - k.T).max() <= 1e-12 * abs(k).max()
    const = np.ones(tiny_ops.dofmap.n_u)
    assert np.abs(k @ const).max() <= 1e-12 * abs(k).max()


def test_divergence_of_translation_vanishes(tiny_ops):
    const = np.ones(tiny_ops.dofmap.n_u)
    assert np.abs(tiny_ops.divergence @ const).max() < 1e-12


def test_divergence_of_linear_field(tiny_ops):
    dm = tiny_ops.dofmap
    u = dm.interpolate_velocity(lambda x, y: x, lambda x, y: 0 * x)
    expected = tiny_ops.mass_p @ np.ones(dm.n_p)
    assert np.abs(tiny_ops.divergence @ u - expected).max() < 1e-12


def test_divergence_adjoint_against_quadrature(tiny_annulus, tiny_ops):
    dm = tiny_ops.dofmap
    rng = np.random.default_rng(11)
    for _ in range(5):
        v = rng.standard_normal(dm.n_u)
        q = rng.standard_normal(dm.n_p)
        direct = oracle.divergence_pairing(tiny_annulus, dm, v, q)
        assembled = float(q @ (tiny_ops.divergence @ v))
        assert abs(direct - assembled) < 1e-11 * max(1.0, abs(direct))


def test_convection_zero_field(tiny_annulus, tiny_ops):
    n = assemble_convection_skew(tiny_annulus, tiny_ops.dofmap, np.zeros(tiny_ops.dofmap.n_u))
    assert n.nnz == 0 or np.abs(n.data).max() == 0.0


def test_convection_skew_symmetry_property(tiny_annulus, tiny_ops):
    dm = tiny_ops.dofmap
    rng = np.random.default_rng(2)
    for _ in range(100):
        w = rng.standard_normal(dm.n_u)
        v = rng.standard_normal(dm.n_u)
        n = assemble_convection_skew(tiny_annulus, dm, w)
        scale = np.abs(n.data).max() * (v @ v)
        assert abs(v @ (n @ v)) <= 1e-12 * scale


def test_convection_linear_in_advecting_field(tiny_annulus, tiny_ops):
    dm = tiny_ops.dofmap
    rng = np.random.default_rng(3)
    w1 = rng.standard_normal(dm.n_u)
    w2 = rng.standard_normal(dm.n_u)
    n1 = assemble_convection_skew(tiny_annulus, dm, w1)
    n2 = assemble_convection_skew(tiny_annulus, dm, w2)
    n12 = assemble_convection_skew(tiny_annulus, dm, 2.0 * w1 - 0.5 * w2)
    assert abs(n12 - (2.0 * n1 - 0.5 * n2)).max() < 1e-12 * abs(n1).max()


def test_convection_matches_quadrature_oracle(tiny_annulus, tiny_ops):
    dm = tiny_ops.dofmap
    rng = np.random.default_rng(4)
    for _ in range(5):
        w = rng.standard_normal(dm.n_u)
        u = rng.standard_normal(dm.n_u)
        v = rng.standard_normal(dm.n_u)
        n = assemble_convection_skew(tiny_annulus, dm, w)
        assembled = float(v @ (n @ u))
        direct = oracle.skew_convection(tiny_annulus, dm, w, u, v)
        assert abs(assembled - direct) < 1e-10 * max(1.0, abs(direct))


def test_convection_dimension_mismatch(tiny_annulus, tiny_ops):
    with pytest.raises(ValueError):
        assemble_convection_skew(tiny_annulus, tiny_ops.dofmap, np.zeros(3))


def test_dirichlet_solve_zeros_boundary(tiny_ops):
    dm = tiny_ops.dofmap
    rng = np.random.default_rng(5)
    b = rng.standard_normal(dm.n_u)
    mc, bc = apply_dirichlet(tiny_ops.mass_v, b, dm)
    x = spla.spsolve(mc.tocsc(), bc)
    assert np.abs(x[dm.dirichlet_mask]).max() == 0.0


def test_dirichlet_idempotent(tiny_ops):
    mc, _ = apply_dirichlet(tiny_ops.mass_v, None, tiny_ops.dofmap)
    mc2, _ = apply_dirichlet(mc, None, tiny_ops.dofmap)
    assert abs(mc - mc2).max() == 0.0


def test_dirichlet_equals_interior_submatrix(square_mesh):
    dm = build_dofmap(square_mesh)
    ops = assemble_operators(square_mesh, dm)
    rng = np.random.default_rng(6)
    b = rng.standard_normal(dm.n_u)
    kc, bc = apply_dirichlet(tiny := ops.mass_v + 0.5 * ops.stiffness, b, dm)
    x = spla.spsolve(kc.tocsc(), bc)
    free = ~dm.dirichlet_mask
    sub = tiny.toarray()[np.ix_(free, free)]
    x_int = np.linalg.solve(sub, b[free])
    assert np.abs(x[free] - x_int).max() < 1e-12 * max(1.0, np.abs(x_int).max())
    # energies agree
    e_full = x @ (tiny @ x)
    e_int = x_int @ (sub @ x_int)
    assert abs(e_full - e_int) < 1e-12 * abs(e_int)


def test_forcing_vanishes_where_factor_does():
    from acrom.offline import rotational_body_force

    fx, fy = rotational_body_force(np.array([0.0, 1.0]), np.array([0.0, 0.0]))
    assert np.abs(fx).max() == 0.0 and np.abs(fy).max() == 0.0


def test_constant_forcing_equals_mass_action(tiny_annulus, tiny_ops):
    dm = tiny_ops.dofmap
    f = assemble_forcing(tiny_annulus, dm, lambda x, y, t: (np.full_like(x, 2.0), np.full_like(x, -3.0)))
    const = np.concatenate([np.full(dm.n_nodes, 2.0), np.full(dm.n_nodes, -3.0)])
    assert np.abs(f - tiny_ops.mass_v @ const).max() < 1e-12


def test_forcing_against_oversampled_quadrature(unit_triangle):
    dm = build_dofmap(unit_triangle)

    def f(x, y, t=0.0):
        return -4.0 * y * (1 - x**2 - y**2), 4.0 * x * (1 - x**2 - y**2)

    load = assemble_forcing(unit_triangle, dm, f)
    # compare (f, phi) for the first x-component basis function
    e0 = np.zeros(dm.n_u)
    e0[0] = 1.0
    direct = oracle.load_inner(unit_triangle, dm, lambda x, y: f(x, y), e0)
    assert abs(load[0] - direct) < 1e-10


def test_poisson_manufactured_quadratic_is_exact():
    # u = (x^2 + y^2, 0) lies in the P2 space, so the Galerkin solution
    # reproduces its interpolant to solver precision
    mesh = generate_offset_cylinder_mesh(1.0, 0.4, 0.1, 0.0, 0.3)
    dm = build_dofmap(mesh)
    ops = assemble_operators(mesh, dm)
    u_exact = dm.interpolate_velocity(lambda x, y: x**2 + y**2, lambda x, y: 0 * x)
    f = assemble_forcing(mesh, dm, lambda x, y, t: (np.full_like(x, -4.0), np.zeros_like(x)))
    free = ~dm.dirichlet_mask
    lift = u_exact * dm.dirichlet_mask
    rhs = (f - ops.stiffness @ lift)[free]
    k = ops.stiffness.toarray()
    u_h = lift.copy()
    u_h[free] = np.linalg.solve(k[np.ix_(free, free)], rhs)
    err = u_h - u_exact
    l2 = math.sqrt(err @ (ops.mass_v @ err))
    assert l2 < 1e-10


def _structured_square(n):
    """n x n structured triangulation of the unit square."""
    xs = np.linspace(0.0, 1.0, n + 1)
    verts = np.array([[x, y] for y in xs for x in xs])
    tris = []
    for j in range(n):
        for i in range(n):
            a = j * (n + 1) + i
            b = a + 1
            c = a + n + 2
            d = a + n + 1
            tris.append([a, b, c])
            tris.append([a, c, d])
    edges = []
    for i in range(n):  # bottom and top rows
        edges += [[i, i + 1], [n * (n + 1) + i, n * (n + 1) + i + 1]]
    for j in range(n):  # left and right columns
        edges += [[j * (n + 1), (j + 1) * (n + 1)], [(j + 1) * (n + 1) - 1, (j + 2) * (n + 1) - 1]]
    edges = np.array(edges)
    tags = np.full(len(edges), int(BoundaryTag.OUTER_CYLINDER))
    return Mesh(verts, np.array(tris), edges, tags)


def _solve_poisson(mesh, dm, ops, u_exact_fn, f_fn):
    lift = dm.interpolate_velocity(u_exact_fn, lambda x, y: 0 * x)
    lift[~dm.dirichlet_mask] = 0.0
    f = assemble_forcing(mesh, dm, f_fn)
    free = ~dm.dirichlet_mask
    k = ops.stiffness.tocsr()
    rhs = (f - k @ lift)[free]
    u_h = lift.copy()
    u_h[free] = np.linalg.solve(k.toarray()[np.ix_(free, free)], rhs)
    err2 = oracle.integrate(
        mesh, dm,
        lambda ctx, xi, eta: _sq_err(ctx, xi, eta, u_h, u_exact_fn),
    )
    return math.sqrt(err2)


def _sq_err(ctx, xi, eta, u_h, exact_fn):
    x, y = ctx.v0 + ctx.J @ np.array([xi, eta])
    val = oracle.vel_at(ctx, ctx.gather_velocity(u_h), xi, eta)
    return float((val[0] - exact_fn(x, y)) ** 2 + val[1] ** 2)


def u_smooth(x, y):
    return np.sin(x) * np.cos(y)


def f_smooth(x, y, t=0.0):
    return 2.0 * np.sin(x) * np.cos(y), np.zeros_like(x)


def test_poisson_cubic_rate_on_polygonal_domain():
    # on an exactly represented domain the quadratic element converges at
    # third order in L2
    errs = []
    ns = (2, 4, 8)
    for n in ns:
        mesh = _structured_square(n)
        dm = build_dofmap(mesh)
        ops = assemble_operators(mesh, dm)
        errs.append(_solve_poisson(mesh, dm, ops, u_smooth, f_smooth))
    rate = np.polyfit(np.log([1.0 / n for n in ns]), np.log(errs), 1)[0]
    assert rate > 2.7, (errs, rate)


def test_poisson_rate_on_curved_annulus():
    # straight-edge triangles approximate the circles to O(h^2), which
    # caps the observable L2 rate at two on this domain
    errs = []
    hs = (0.4, 0.2, 0.1)
    for h in hs:
        mesh = generate_offset_cylinder_mesh(1.0, 0.4, 0.1, 0.0, h)
        dm = build_dofmap(mesh)
        ops = assemble_operators(mesh, dm)
        errs.append(_solve_poisson(mesh, dm, ops, u_smooth, f_smooth))
    rate = np.polyfit(np.log(hs), np.log(errs), 1)[0]
    assert rate > 1.9, (errs, rate)


def test_chunked_assembly_matches_serial(tiny_annulus, tiny_ops):
    dm = tiny_ops.dofmap
    rng = np.random.default_rng(7)
    w = rng.standard_normal(dm.n_u)
    serial = assemble_convection_skew(tiny_annulus, dm, w, n_chunks=1)
    chunked = assemble_convection_skew(tiny_annulus, dm, w, n_chunks=7)
    assert abs(serial - chunked).max() <= 1e-13 * abs(serial).max()
    m1 = assemble_velocity_mass(tiny_annulus, dm, n_chunks=1)
    m5 = assemble_velocity_mass(tiny_annulus, dm, n_chunks=5)
    assert abs(m1 - m5).max() <= 1e-13 * abs(m1).max()


def test_mass_energy_against_oracle(tiny_annulus, tiny_ops):
    dm = tiny_ops.dofmap
    rng = np.random.default_rng(8)
    u = rng.standard_normal(dm.n_u)
    direct = oracle.mass_inner(tiny_annulus, dm, u, u)
    assert abs(float(u @ (tiny_ops.mass_v @ u)) - direct) < 1e-10 * abs(direct)


def test_stiffness_against_oracle(tiny_annulus, tiny_ops):
    dm = tiny_ops.dofmap
    rng = np.random.default_rng(9)
    u = rng.standard_normal(dm.n_u)
    v = rng.standard_normal(dm.n_u)
    direct = oracle.grad_inner(tiny_annulus, dm, u, v)
    assert abs(float(v @ (tiny_ops.stiffness @ u)) - direct) < 1e-9 * max(1.0, abs(direct))
