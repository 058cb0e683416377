import numpy as np
import pytest
import scipy.sparse as sp
from hypothesis import given, settings, strategies as st

from tissuescale import fem
from tissuescale.errors import GeometryError, ValidationError
from tissuescale.linalg import pcg, solve
from tissuescale.mesh import ELASTIC, FLUID, Grid, Inclusion, build_unit_cell, cell_index, tile_indicator


def test_grid_counts_periodic_and_plain():
    g = Grid((4, 3))
    assert g.n_nodes == 20 and g.n_elements == 12
    p = Grid((4, 3), periodic=True)
    assert p.n_nodes == 12
    assert np.isclose(p.volume, 1.0)
    with pytest.raises(ValidationError):
        Grid((0, 3))


def test_periodic_identification_folds_opposite_faces():
    g = Grid((4, 4), periodic=True)
    pairs = g.identification()
    assert np.all(g.fold[pairs[:, 0]] == g.fold[pairs[:, 1]])


def test_boundary_edges_cover_each_face():
    g = Grid((5, 3))
    for face, count in (("left", 3), ("right", 3), ("bottom", 5), ("top", 5)):
        nodes, elems = g.boundary_edges(face)
        assert nodes.shape == (count, 2) and len(elems) == count
    with pytest.raises(ValidationError):
        Grid((2, 2), periodic=True).boundary_edges("left")


def test_disc_cell_phases_and_true_arc_length():
    grid, ind = build_unit_cell(32, Inclusion("circle", (0.5, 0.5), 0.3))
    assert np.any(ind.phase == FLUID) and np.any(ind.phase == ELASTIC)
    assert np.isclose(ind.theta_e(grid) + ind.theta_f(grid), 1.0)
    # staircase faces weighted by |n_face . n_true| sum to the circle perimeter
    arc = 2 * np.pi * 0.3
    assert abs(ind.theta_gamma - arc) / arc < 0.02
    # the raw staircase overestimates the perimeter by 4/pi
    assert abs(ind.gamma_measure / arc - 4 / np.pi) < 0.1


def test_geometry_errors():
    with pytest.raises(GeometryError):
        build_unit_cell(16, Inclusion("circle", (0.5, 0.5), 0.55))
    with pytest.raises(ValidationError):
        build_unit_cell(4)


def test_membrane_arc_selects_subset_of_faces():
    grid, ind = build_unit_cell(32, Inclusion("circle", (0.5, 0.5), 0.3), membrane_arc=(0.0, 90.0))
    frac = ind.gamma_tilde.mean()
    assert 0.15 < frac < 0.35


def test_tiling_repeats_the_cell_and_cell_index_partitions():
    grid, ind = build_unit_cell(16, Inclusion("circle", (0.5, 0.5), 0.3))
    tg, tind = tile_indicator(grid, ind, 2)
    assert tg.n_elements == 4 * grid.n_elements
    assert np.isclose(tind.theta_f(tg), ind.theta_f(grid))
    cells = cell_index(tg, 2)
    assert np.all(np.bincount(cells) == grid.n_elements)


def test_q1_mass_integrates_area_and_stiffness_kills_constants():
    g = Grid((6, 4), (2.0, 1.0))
    dm = fem.dofmap(g)
    M = fem.mass_matrix(dm)
    one = np.ones(dm.n)
    assert np.isclose(one @ M @ one, 2.0)
    K = fem.diffusion_matrix(dm, np.eye(2))
    assert np.abs(K @ one).max() < 1e-12
    assert abs(K - K.T).max() < 1e-12


def test_elasticity_matrix_rigid_modes():
    g = Grid((5, 5))
    dm = fem.dofmap(g)
    A = fem.elasticity_matrix(dm, np.broadcast_to(fem.isotropic_voigt(13.0, 0.3), (g.n_elements, 3, 3)))
    x = g.node_coords[dm.node_of]
    for mode in (np.tile([1.0, 0.0], dm.n), np.tile([0.0, 1.0], dm.n),
                 np.column_stack([-x[:, 1], x[:, 0]]).ravel()):
        assert np.abs(A @ mode).max() < 1e-10


def test_linear_field_gradients_are_exact():
    g = Grid((4, 4))
    dm = fem.dofmap(g)
    x = g.node_coords[dm.node_of]
    u = 2.0 * x[:, 0] - 3.0 * x[:, 1]
    assert np.allclose(fem.gradients(dm, u), [2.0, -3.0])


def test_isotropic_voigt_is_spd():
    C = fem.isotropic_voigt(13.0, 0.3)
    assert np.allclose(C, C.T)
    assert np.linalg.eigvalsh(C).min() > 0
    with pytest.raises(ValidationError):
        fem.check_positive_definite(-np.eye(2)[None], "K")


def _spd(n, seed):
    rng = np.random.default_rng(seed)
    B = rng.standard_normal((n, n))
    return sp.csr_matrix(B @ B.T + n * np.eye(n))


def test_pcg_matches_direct_and_error_energy_norm_decreases():
    A = _spd(40, 0)
    b = np.arange(40, dtype=float)
    x_ref = np.linalg.solve(A.toarray(), b)
    errs = []
    x, _ = pcg(A, b, tol=1e-12, callback=lambda xk: errs.append(float((xk - x_ref) @ (A @ (xk - x_ref)))))
    assert np.allclose(x, x_ref, atol=1e-8)
    assert all(e1 <= e0 * (1 + 1e-10) for e0, e1 in zip(errs, errs[1:]))


@pytest.mark.parametrize("method", ["direct", "cg", "minres"])
def test_solver_methods_agree_with_constraint(method):
    g = Grid((8, 8), periodic=True)
    dm = fem.dofmap(g)
    K = fem.diffusion_matrix(dm, np.eye(2))
    rhs = fem.load_flux(dm, np.array([1.0, 0.0])) * 0 + np.sin(2 * np.pi * g.node_coords[dm.node_of][:, 0])
    rhs -= rhs.mean()
    cons, null = fem.mean_constraints(dm)
    r = solve(fem.LinearSystem(K, rhs, cons, null), tol=1e-10, method=method)
    assert r.residual < 1e-8
    assert abs(cons[0] @ r.x) < 1e-10


@settings(max_examples=25, deadline=None)
@given(st.floats(0.1, 10.0), st.floats(-1.0, 1.0), st.floats(-1.0, 1.0))
def test_load_flux_scales_linearly(s, f1, f2):
    g = Grid((3, 3), periodic=True)
    dm = fem.dofmap(g)
    a = fem.load_flux(dm, np.array([f1, f2]))
    b = fem.load_flux(dm, s * np.array([f1, f2]))
    assert np.allclose(b, s * a, atol=1e-12)
