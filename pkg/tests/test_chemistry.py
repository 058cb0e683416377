import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays

from tissuescale.chemistry import (MemoryHistory, MemoryKernel, ReactionParams, boundary_fluxes, direct_convolution,
                                   elasticity_closure, fluid_decay, reaction_rates, saturate, stiffening)
from tissuescale.errors import ValidationError

nonneg = st.floats(0.0, 50.0, allow_nan=False)
params_st = st.builds(ReactionParams, mu1=st.floats(0, 5), mu2=st.floats(0, 5), r_dc=st.floats(0, 5),
                      r_d=st.floats(0, 5), kappa_M=st.floats(0.01, 5), r_b=st.floats(0, 5))


@settings(max_examples=200, deadline=None)
@given(st.tuples(nonneg, nonneg, nonneg), nonneg, nonneg, params_st, st.integers(0, 3))
def test_quasi_positivity(b, c, s, p, k):
    # a species at zero is never driven negative
    b = np.array(b)
    if k < 3:
        b[k] = 0.0
    else:
        c = 0.0
    rates = reaction_rates(b, c, s, p)
    assert rates[k] >= 0.0
    assert fluid_decay(0.0, p.mu2) >= 0.0


@settings(max_examples=100, deadline=None)
@given(st.tuples(nonneg, nonneg, nonneg), nonneg, nonneg, params_st)
def test_stoichiometry_without_decay(b, c, s, p):
    p = ReactionParams(mu1=0.0, r_d=0.0, r_dc=p.r_dc, kappa_M=p.kappa_M, r_b=p.r_b)
    g1, g2, g3, ge = reaction_rates(np.array(b), c, s, p)
    assert ge + g3 == 0.0
    # each crosslink consumes two demethylesterified pectin units
    assert abs(g2 + 2 * g3) <= 1e-12 * (1 + abs(g2))


@settings(max_examples=200, deadline=None)
@given(arrays(float, (5, 2), elements=st.floats(-1e6, 1e6)), st.floats(0.01, 100.0))
def test_saturation_bound(v, R):
    G = saturate(v, R)
    assert np.all(np.linalg.norm(G, axis=1) <= R * (1 + 1e-12))
    # direction is preserved
    assert np.all(np.sum(G * v, axis=1) >= 0)


def test_saturation_rejects_nonpositive_bound():
    with pytest.raises(ValidationError):
        saturate(np.ones(2), 0.0)


def test_reactions_reject_negative_inputs_unless_clipped():
    with pytest.raises(ValidationError):
        reaction_rates(np.array([-1.0, 0.0, 0.0]), 0.0, 0.0)
    r = reaction_rates(np.array([-1.0, 0.0, 0.0]), 0.0, 0.0, strict=False)
    assert r[0] == 0.0


def test_reaction_params_validation():
    with pytest.raises(ValidationError):
        ReactionParams(mu1=-1.0)
    with pytest.raises(ValidationError):
        ReactionParams(kappa_M=0.0)


def test_boundary_fluxes_signs():
    P, Fb, Fc = boundary_fluxes(np.array([1.0, 2.0, 3.0]), 0.5)
    assert P[0] > 0 and P[1] == 0 and P[2] == 0
    assert np.all(Fb <= 0) and Fc <= 0


def test_memory_recursion_equals_full_history_sum():
    k = MemoryKernel(1.3, 0.7)
    rng = np.random.default_rng(3)
    samples = rng.uniform(0, 2, size=(40, 4))
    h = MemoryHistory(k, 0.05, (4,))
    for n in range(40):
        val = h.push(samples[n])
        # the latest level carries zero kernel weight, so any value stands in for it
        ref = direct_convolution(k, np.vstack([samples[:n + 1], np.zeros(4)]), 0.05)
        assert np.allclose(val, ref, rtol=1e-12, atol=1e-14)


def test_memory_constant_history_second_order():
    k = MemoryKernel()
    errs = []
    for dt in (0.1, 0.05, 0.025):
        h = MemoryHistory(k, dt, ())
        for _ in range(int(round(1 / dt))):
            F = h.push(1.0)
        errs.append(abs(F - k.constant_history(1.0, 1.0)))
    assert 3.5 <= errs[0] / errs[1] <= 4.5
    assert 3.5 <= errs[1] / errs[2] <= 4.5


@settings(max_examples=50, deadline=None)
@given(arrays(float, (12,), elements=st.floats(0, 10)), arrays(float, (12,), elements=st.floats(0, 10)),
       st.floats(-3, 3))
def test_memory_linearity(a, b, s):
    k = MemoryKernel()
    ha, hb, hc = (MemoryHistory(k, 0.1, ()) for _ in range(3))
    for x, y in zip(a, b):
        fa, fb, fc = ha.push(x), hb.push(y), hc.push(x + s * y)
    assert np.isclose(fc, fa + s * fb, rtol=1e-10, atol=1e-12)


def test_memory_state_restore():
    k = MemoryKernel()
    h = MemoryHistory(k, 0.1, (2,))
    h.push([1.0, 2.0])
    st_ = h.state()
    v1 = h.push([0.5, 0.5])
    h.restore(st_)
    assert np.array_equal(h.push([0.5, 0.5]), v1)


def test_memory_bound_and_kernel_validation():
    k = MemoryKernel(2.0, 0.5)
    assert k.constant_history(3.0, 100.0) <= k.bound(3.0) + 1e-12
    with pytest.raises(ValidationError):
        MemoryKernel(1.0, 0.0)


def test_stiffening_closure_is_monotone_and_bounded():
    F = np.linspace(0, 100, 50)
    s = stiffening(F, 1.0)
    assert np.all(np.diff(s) > 0) and s[0] == 1.0 and s[-1] < 2.0
    E = elasticity_closure(np.eye(3), np.array([0.0, 1.0]), 1.0)
    assert np.allclose(E[1], 1.5 * np.eye(3))
