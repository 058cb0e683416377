import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from tissuescale import fem
from tissuescale.cell_problems import (CellStokes, solve_all, solve_diffusion_correctors, solve_elastic_correctors,
                                       solve_pressure_correctors)
from tissuescale.effective import (effective_diffusion, effective_elasticity, effective_permeability,
                                   quadratic_form_min_eig, tensor_to_voigt, voigt_to_tensor)
from tissuescale.errors import MismatchError, ValidationError
from tissuescale.homogenizer import UnitCellHomogenizer
from tissuescale.mesh import ELASTIC, FLUID, Inclusion, build_unit_cell, make_indicator

C = fem.isotropic_voigt(13.0, 0.3)


@pytest.fixture(scope="module")
def disc16():
    return build_unit_cell(16, Inclusion("circle", (0.5, 0.5), 0.3))


def test_voigt_tensor_round_trip():
    rng = np.random.default_rng(1)
    A = rng.standard_normal((3, 3))
    A = A + A.T
    assert np.allclose(tensor_to_voigt(voigt_to_tensor(A)), A)


def test_pressure_corrector_laminate_is_one_dimensional():
    # permeability varies in y1 only: w_p^1 depends on y1 alone and w_p^2 vanishes
    grid, ind = build_unit_cell(16)
    k = np.where(grid.element_centroids[:, 0] < 0.5, 1.0, 3.0)
    wp, _ = solve_pressure_correctors(grid, ind, k)
    x = grid.node_coords[wp.dofmap.node_of]
    w1 = wp.fields[0]
    for xv in np.unique(x[:, 0]):
        col = w1[x[:, 0] == xv]
        assert np.ptp(col) < 1e-10
    assert np.abs(wp.fields[1]).max() < 1e-10


def test_elastic_correctors_mirror_symmetry(disc16):
    grid, ind = disc16
    el = solve_elastic_correctors(grid, ind, C)
    E = effective_elasticity(grid, ind, C, el)
    # square symmetry of the disc cell
    assert abs(E[0, 0] - E[1, 1]) / E[0, 0] < 1e-9
    assert abs(E[0, 2]) < 1e-9 and abs(E[1, 2]) < 1e-9


def test_permeability_scales_linearly(disc16):
    grid, ind = disc16
    wp1, _ = solve_pressure_correctors(grid, ind, 0.05)
    wp2, _ = solve_pressure_correctors(grid, ind, 0.2)
    K1 = effective_permeability(grid, ind, 0.05, wp1)
    K2 = effective_permeability(grid, ind, 0.2, wp2)
    assert np.allclose(K2, 4 * K1, rtol=1e-9)


def test_mismatched_coefficients_are_rejected(disc16):
    grid, ind = disc16
    el = solve_elastic_correctors(grid, ind, C)
    with pytest.raises(MismatchError):
        effective_elasticity(grid, ind, fem.isotropic_voigt(13.0, 0.1), el)


def test_diffusion_hole_bounds(disc16):
    grid, ind = disc16
    ob, om = solve_diffusion_correctors(grid, ind, 1.0, 4.0)
    Db, D = effective_diffusion(grid, ind, (1.0, 1.0, 0.1), 1.0, 4.0, ob, om)
    th = ind.theta_f(grid)
    harmonic = 1 / ((1 - th) / 1.0 + th / 4.0)
    arithmetic = (1 - th) * 1.0 + th * 4.0
    assert harmonic - 1e-9 <= D[0, 0] <= arithmetic + 1e-9
    # pectins diffuse in the wall only: below theta_e times the species coefficient
    assert Db[2, 0, 0] < 0.1 * (1 - th)
    with pytest.raises(ValidationError):
        solve_diffusion_correctors(grid, ind, -1.0, 1.0)


def test_stokes_divergence_free_and_q_is_spd(disc16):
    grid, ind = disc16
    corr = solve_all(grid, ind, C, 0.05 * np.eye(2), G=(0.5, 0.0))
    stokes = corr.stokes
    assert max(stokes.divergence) < 1e-10
    assert max(stokes.residuals) < 1e-8
    Qp = stokes.Q_p
    assert np.allclose(Qp, Qp.T, atol=1e-10)
    # the dissipation form of the pressure-driven modes is positive
    assert np.linalg.eigvalsh(stokes.viscous[:2, :2] + stokes.darcy[:2, :2]).min() > 0


def test_cell_stokes_requires_fluid():
    grid, ind = build_unit_cell(16)
    with pytest.raises(ValidationError):
        CellStokes(grid, ind)


def test_membrane_patch_reduces_calcium_diffusion():
    inc = Inclusion("circle", (0.5, 0.5), 0.3)
    g0, i0 = build_unit_cell(16, inc)
    g1, i1 = build_unit_cell(16, inc, membrane_arc=(-45.0, 45.0))
    _, om0 = solve_diffusion_correctors(g0, i0, 1.0, 4.0)
    _, om1 = solve_diffusion_correctors(g1, i1, 1.0, 4.0)
    D0 = effective_diffusion(g0, i0, (1.0,), 1.0, 4.0, _, om0)[1]
    D1 = effective_diffusion(g1, i1, (1.0,), 1.0, 4.0, _, om1)[1]
    # blocking exchange on the right-hand arc cannot speed up horizontal transport
    assert D1[0, 0] <= D0[0, 0] + 1e-12


def test_homogenizer_estimator_api(hom16):
    coef = hom16.coefficients_
    X = np.array([[1e-3, 0.0, 0.0], [0.0, 2e-3, 1e-3]])
    S = hom16.predict(X)
    assert np.allclose(S, X @ coef.E_hom.T)
    T = hom16.transform(X)
    assert T.shape == (2, 2)
    assert np.allclose(T[:, 0], np.einsum("ni,ij,nj->n", X, coef.E_hom, X), rtol=1e-8)
    assert np.all(T[:, 1] >= 0)
    params = hom16.get_params()
    assert params["resolution"] == 16
    with pytest.raises(ValidationError):
        hom16.predict(np.zeros((1, 2)))


def test_homogenizer_rejects_bad_permeability():
    with pytest.raises(ValidationError, match="K_p"):
        UnitCellHomogenizer(resolution=16, K_p=-1.0).fit()


def test_elasticity_table_interpolates_and_stiffens(hom16):
    tab = hom16.coefficients_.table
    E0, E1 = tab(tab.F[0]), tab(tab.F[-1])
    assert quadratic_form_min_eig(E1 - E0) > 0
    mid = tab(0.5 * (tab.F[0] + tab.F[1]))
    assert np.allclose(mid, 0.5 * (tab.E[0] + tab.E[1]))


def test_scalars_cover_all_coefficients(hom16):
    s = hom16.coefficients_.scalars()
    for key in ("E_hom[0,0]", "K_p[1,1]", "D[0,0]", "D_b3[0,0]", "Q_p[0,0]", "theta_f", "theta_gamma"):
        assert key in s


@settings(max_examples=10, deadline=None)
@given(st.floats(0.5, 20.0))
def test_effective_elasticity_scales_with_stiffness(s):
    grid, ind = build_unit_cell(8, Inclusion("circle", (0.5, 0.5), 0.25))
    el = solve_elastic_correctors(grid, ind, C)
    els = solve_elastic_correctors(grid, ind, s * C)
    # correctors are invariant under scaling; E_hom scales
    assert np.allclose(els.fields, el.fields, atol=1e-9)
    assert np.allclose(effective_elasticity(grid, ind, s * C, els), s * effective_elasticity(grid, ind, C, el),
                       rtol=1e-9)


def test_laminate_phase_indicator_for_calcium():
    grid, _ = build_unit_cell(16)
    phase = np.where(grid.element_centroids[:, 0] < 0.5, ELASTIC, FLUID).astype(np.int8)
    ind = make_indicator(grid, phase)
    ob, om = solve_diffusion_correctors(grid, ind, 1.0, 4.0)
    _, D = effective_diffusion(grid, ind, (1.0,), 1.0, 4.0, ob, om)
    assert np.allclose(np.diag(D), [1.6, 2.5], rtol=1e-9)
