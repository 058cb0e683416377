import numpy as np
import pytest

from tissuescale.compare import accumulate_errors, compare_two_scale, macro_cell_averages
from tissuescale.errors import ValidationError
from tissuescale.micro import MicroSolver, build_tissue


@pytest.fixture(scope="module")
def short(cfg):
    return cfg.copy(time__T=0.05)


def test_tissue_size_limits(cfg):
    with pytest.raises(ValidationError):
        build_tissue(cfg, 9)
    with pytest.raises(ValidationError):
        build_tissue(cfg, 2, cell_resolution=8)


def test_unsupported_modes_rejected(cfg):
    with pytest.raises(ValidationError):
        MicroSolver(cfg.copy(modes__elasticity="evolutionary"), 1)
    with pytest.raises(ValidationError):
        MicroSolver(cfg.copy(geometry__inclusion="none"), 1)


def test_single_cell_run_is_divergence_free_and_nonnegative(short):
    m = MicroSolver(short, 1)
    ser = m.run()
    assert len(ser) == 6
    assert max(s["divergence"] for s in ser) < 1e-9
    assert min(s["min_density"] for s in ser) >= -short.solver.monitor_tol
    assert all(s["contraction"] < 1 for s in ser[1:])


def test_zero_forcing_stays_zero(cfg):
    z = cfg.copy(time__T=0.03, loads__traction_left=(0.0, 0.0), loads__traction_right=(0.0, 0.0),
                 loads__flux_left=0.0, loads__flux_right=0.0, initial__b=(0.0, 0.0, 0.0), initial__c=0.0,
                 chemistry__p1=0.0)
    m = MicroSolver(z, 1)
    m.run()
    s = m.state
    assert max(np.abs(s.u).max(), np.abs(s.p).max(), np.abs(s.b).max(), np.abs(s.c).max()) == 0.0


def test_cell_averages_shapes_and_constant_fields(short):
    m = MicroSolver(short, 2)
    avg = m.cell_averages()
    assert avg["u"].shape == (4, 2) and avg["b"].shape == (4, 3) and avg["p"].shape == (4,)
    # the initial calcium density is uniform, so every cell average equals it
    assert np.allclose(avg["c"], short.initial.c)
    assert np.allclose(avg["b"], short.initial.b)


def test_accumulate_errors_closed_form():
    a = [{"u": np.ones((4, 2)), "p": np.ones(4), "b": np.ones((4, 3)), "c": np.ones(4)}] * 3
    b = [{"u": np.zeros((4, 2)), "p": np.zeros(4), "b": np.zeros((4, 3)), "c": np.zeros(4)}] * 3
    e = accumulate_errors(a, b, 0.1, 2)
    assert e["p"] == pytest.approx(np.sqrt(0.3))
    assert e["u"] == pytest.approx(np.sqrt(0.6))
    with pytest.raises(ValidationError):
        accumulate_errors(a, b[:2], 0.1, 2)


def test_macro_cell_averages_of_linear_field(cfg, hom16):
    from tissuescale.macro import MacroSolver

    m = MacroSolver(cfg, hom16.coefficients_, hom16, resolution=8)
    st = m.state.copy()
    st.p = m.grid.node_coords[:, 0].copy()
    avg = macro_cell_averages(m, st, 2)
    assert np.allclose(avg["p"], [0.25, 0.75, 0.25, 0.75])
    with pytest.raises(ValidationError):
        macro_cell_averages(m, st, 3)


def test_compare_report_small(short, hom16):
    rep = compare_two_scale(short, cells=[1, 2], homogenizer=hom16, macro_resolution=16)
    assert len(rep.rows()) == 2
    assert np.isnan(rep.ratios()[0]["u"]) and np.isfinite(rep.ratios()[1]["u"])
    assert all(g >= 0 for g in rep.energy_gap)
    assert "N=2" in rep.summary()
    with pytest.raises(ValidationError):
        compare_two_scale(short, cells=[2, 1], homogenizer=hom16)
