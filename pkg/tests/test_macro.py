import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from tissuescale import io as tio
from tissuescale.errors import MonitorTrip, SolverError, ValidationError
from tissuescale.macro import MacroSolver, load_factor


@pytest.fixture(scope="module")
def small(cfg, hom16):
    return MacroSolver(cfg, hom16.coefficients_, hom16, resolution=8)


def test_load_ramp():
    assert load_factor(0.5, 0.0) == 1.0
    assert load_factor(0.25, 1.0) == pytest.approx(0.25)
    assert load_factor(2.0, 1.0) == 1.0


def test_default_run_converges_in_few_sweeps(cfg, hom16):
    m = MacroSolver(cfg, hom16.coefficients_, hom16, resolution=8)
    ser = m.run(5)
    assert all(s["iterations"] <= 4 for s in ser[1:])
    assert all(s["contraction"] < 1 for s in ser[1:])
    assert ser[-1]["min_density"] >= 0
    assert ser[-1]["p_L2"] > 0


@pytest.mark.parametrize("modes", [
    dict(modes__elasticity="evolutionary"),
    dict(modes__fluid="full"),
    dict(modes__elasticity="evolutionary", modes__fluid="full"),
    dict(modes__pressure="incompressible"),
])
def test_alternative_modes_run(cfg, hom16, modes):
    m = MacroSolver(cfg.copy(**modes), hom16.coefficients_, hom16, resolution=8)
    ser = m.run(5)
    assert np.isfinite(ser[-1]["u_L2"]) and np.isfinite(ser[-1]["p_L2"])
    if "modes__pressure" in modes:
        assert abs(ser[-1]["p_int"]) < 1e-10


def test_full_fluid_approaches_quasi_steady(cfg, hom16):
    # the cell flow relaxes on a short time scale, so the two closures agree at later times
    out = {}
    for fl in ("quasi_steady", "full"):
        m = MacroSolver(cfg.copy(modes__fluid=fl, modes__chemistry="frozen"), hom16.coefficients_, hom16,
                        resolution=8)
        ser = m.run(60)
        out[fl] = ser[-1]["Q1_mean"]
    assert abs(out["full"] - out["quasi_steady"]) / abs(out["quasi_steady"]) < 0.05


def test_full_mode_needs_fluid_inclusion(cfg):
    with pytest.raises(ValidationError, match="fluid inclusion"):
        MacroSolver(cfg.copy(modes__fluid="full", geometry__inclusion="none", geometry__cell_resolution=16),
                    resolution=8)


def test_checkpoint_restart_is_bit_identical(cfg, hom16, tmp_path):
    a = MacroSolver(cfg, hom16.coefficients_, hom16, resolution=8)
    a.run(3)
    path = tio.save_checkpoint(tmp_path / "c.bin", a.state, cfg)
    a.run(3)
    b = MacroSolver(cfg, hom16.coefficients_, hom16, resolution=8)
    state, text = tio.load_checkpoint(path)
    assert text == cfg.to_text(annotate=False)
    b.state = state
    b.run(3)
    for k in ("u", "p", "b", "c", "F", "Q"):
        assert np.array_equal(getattr(a.state, k), getattr(b.state, k))


def test_monitor_trips_on_negative_density(cfg, hom16):
    m = MacroSolver(cfg.copy(chemistry__mu1=400.0), hom16.coefficients_, hom16, resolution=8)
    with pytest.raises(MonitorTrip, match="halve"):
        m.run(20)


def test_fixed_point_budget_exhaustion_reports_ratios(cfg, hom16):
    m = MacroSolver(cfg, hom16.coefficients_, hom16, resolution=8)
    with pytest.raises(SolverError) as exc:
        m.fixed_point_step(tol=1e-300, max_iter=2)
    assert len(exc.value.trace) >= 1


def test_non_spd_table_rejected(cfg, hom16):
    import copy
    coef = copy.deepcopy(hom16.coefficients_)
    coef.table.E[3] = -coef.table.E[3]
    with pytest.raises(ValidationError):
        MacroSolver(cfg, coef, hom16, resolution=8)


@settings(max_examples=15, deadline=None)
@given(st.integers(0, 2 ** 31 - 1), st.floats(-3, 3))
def test_closure_linearity(small, seed, s):
    rng = np.random.default_rng(seed)
    n = small.dm.n
    p1, p2 = rng.standard_normal(n), rng.standard_normal(n)
    v1, v2 = rng.standard_normal(2 * n), rng.standard_normal(2 * n)
    Q1, V1, _, _ = small.fluid_closure(p1, v1)
    Q2, V2, _, _ = small.fluid_closure(p2, v2)
    Q, V, _, _ = small.fluid_closure(p1 + s * p2, v1 + s * v2)
    assert np.allclose(Q, Q1 + s * Q2, atol=1e-10)
    assert np.allclose(V, V1 + s * V2, atol=1e-10)


@settings(max_examples=6, deadline=None)
@given(st.floats(0.1, 4.0))
def test_scaling_linearity_with_frozen_chemistry(cfg, hom16, s):
    base = cfg.copy(modes__chemistry="frozen")
    L = base.loads
    scaled = base.copy(loads__traction_left=tuple(s * x for x in L.traction_left),
                       loads__traction_right=tuple(s * x for x in L.traction_right),
                       loads__flux_left=s * L.flux_left, loads__flux_right=s * L.flux_right)
    a = MacroSolver(base, hom16.coefficients_, hom16, resolution=8)
    b = MacroSolver(scaled, hom16.coefficients_, hom16, resolution=8)
    a.run(3)
    b.run(3)
    assert np.allclose(b.state.u, s * a.state.u, rtol=1e-8, atol=1e-14)
    assert np.allclose(b.state.p, s * a.state.p, rtol=1e-8, atol=1e-14)
