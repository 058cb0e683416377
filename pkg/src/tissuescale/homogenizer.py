"""Estimator front end: geometry + material table in, effective coefficients out."""
from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_array, check_is_fitted

from . import fem
from .cell_problems import solve_all
from .chemistry import MemoryKernel, elasticity_closure, saturate
from .effective import (EffectiveCoefficients, effective_convection, effective_coupling, effective_diffusion,
                        effective_elasticity, effective_permeability, localized_energy, strain_localization,
                        stress_trace_operator, tabulate_elasticity)
from .errors import ValidationError
from .mesh import ELASTIC, Inclusion, build_unit_cell


class UnitCellHomogenizer(TransformerMixin, BaseEstimator):
    """Solve the unit-cell problems of one cell geometry and assemble all effective coefficients.

    After ``fit`` the estimator exposes ``grid_``, ``indicator_``,
    ``correctors_`` and ``coefficients_``.  ``predict`` maps macroscopic
    Voigt strains (rows) to effective stresses; ``transform`` maps them to
    ``[localized energy density, mean positive stress trace]`` per row.
    """

    def __init__(self, resolution=32, inclusion="circle", center=(0.5, 0.5), size=0.3, membrane_arc=(),
                 labelling="centroid", young=13.0, poisson=0.3, K_p=0.05, D_b=(1.0, 1.0, 0.1), D_e=1.0,
                 D_f=1.0, mu=1.0, R=1.0, e_s=1.0, k0=1.0, tau_kappa=1.0, b3_cap=10.0, memory_samples=17,
                 tol=1e-10, method="direct"):
        self.resolution = resolution
        self.inclusion = inclusion
        self.center = center
        self.size = size
        self.membrane_arc = membrane_arc
        self.labelling = labelling
        self.young = young
        self.poisson = poisson
        self.K_p = K_p
        self.D_b = D_b
        self.D_e = D_e
        self.D_f = D_f
        self.mu = mu
        self.R = R
        self.e_s = e_s
        self.k0 = k0
        self.tau_kappa = tau_kappa
        self.b3_cap = b3_cap
        self.memory_samples = memory_samples
        self.tol = tol
        self.method = method

    @classmethod
    def from_config(cls, cfg, resolution=None):
        g, m, c, s = cfg.geometry, cfg.material, cfg.chemistry, cfg.solver
        return cls(resolution=resolution or g.cell_resolution, inclusion=g.inclusion, center=tuple(g.center),
                   size=g.size, membrane_arc=tuple(g.membrane_arc), labelling=g.labelling, young=m.young,
                   poisson=m.poisson, K_p=m.K_p, D_b=tuple(m.D_b), D_e=m.D_e, D_f=m.D_f, mu=m.mu, R=c.R,
                   e_s=c.e_s, k0=c.k0, tau_kappa=c.tau_kappa, b3_cap=c.b3_cap,
                   memory_samples=c.memory_samples, tol=s.tol, method=s.method)

    def _validate(self):
        if self.K_p <= 0:
            raise ValidationError("K_p must be > 0 (A2 positivity of the permeability)")
        if min(self.D_b) <= 0 or self.D_e <= 0 or self.D_f <= 0 or self.mu <= 0:
            raise ValidationError("diffusion coefficients and viscosity must be > 0")
        if self.inclusion not in ("circle", "square", "none"):
            raise ValidationError(f"unknown inclusion {self.inclusion!r}")

    def base_voigt(self):
        return fem.isotropic_voigt(self.young, self.poisson)

    def memory_range(self):
        """Tabulation range: twice the largest memory value reachable with ``b3 <= b3_cap``."""
        return 2.0 * MemoryKernel(self.k0, self.tau_kappa).bound(self.b3_cap)

    def fit(self, X=None, y=None):
        self._validate()
        inc = None
        if self.inclusion != "none":
            inc = Inclusion(self.inclusion, tuple(self.center), float(self.size))
        arc = tuple(self.membrane_arc) if len(self.membrane_arc) == 2 else None
        grid, ind = build_unit_cell(int(self.resolution), inc, membrane_arc=arc, labelling=self.labelling)
        C = self.base_voigt()
        K = self.K_p * np.eye(2)
        # representative saturated velocity for the convection corrector
        G = saturate(np.array([1.0, 0.0]), self.R)
        corr = solve_all(grid, ind, C, K, self.D_e, self.D_f, self.mu, G, self.tol, self.method)
        E_hom = effective_elasticity(grid, ind, C, corr.elastic)
        K_hom = effective_permeability(grid, ind, K, corr.w_p)
        K_u = effective_coupling(grid, ind, K, corr.w_e)
        D_b, D = effective_diffusion(grid, ind, self.D_b, self.D_e, self.D_f, corr.omega_b, corr.omega)
        W = strain_localization(corr.elastic)
        T = stress_trace_operator(grid, corr.elastic, W)
        table, _ = tabulate_elasticity(grid, ind, C, lambda E, F: elasticity_closure(E, F, self.e_s),
                                       self.memory_range(), self.memory_samples, corr.elastic,
                                       self.tol, self.method)
        st = corr.stokes
        if st is not None:
            v_f = effective_convection(grid, ind, G, self.D_f, corr.z)
            Q_p, Q_u, V = st.Q_p, st.Q_u, st.mean_velocity
            diss = self._dissipation(grid, corr)
            visc, darcy = st.viscous, st.darcy
            kin = st.velocity @ (st.operator.Mv @ st.velocity.T) / grid.volume
        else:
            v_f = np.zeros(2)
            Q_p = Q_u = np.zeros((2, 2))
            V = np.zeros((2, 4))
            visc = np.zeros((4, 4))
            darcy = np.zeros((4, 4))
            kin = np.zeros((4, 4))
            diss = self._dissipation(grid, corr)
        coeffs = EffectiveCoefficients(
            E_hom=E_hom, K_p=K_hom, K_u=K_u, D_b=D_b, D=D, v_f=v_f, Q_p=Q_p, Q_u=Q_u, mean_velocity=V,
            viscous=visc, darcy=darcy, theta_e=ind.theta_e(grid), theta_f=ind.theta_f(grid),
            theta_gamma=ind.theta_gamma, table=table,
            stress_trace=T, dissipation=diss, kinetic=kin,
            meta={"resolution": int(self.resolution), "fingerprint": ind.fingerprint(), "key": corr.key})
        self.grid_ = grid
        self.indicator_ = ind
        self.correctors_ = corr
        self.localization_ = W
        self.coefficients_ = coeffs
        return self

    def _dissipation(self, grid, corr):
        """Cell dissipation forms of the four flow modes (grad p e_1, e_2, wall velocity e_1, e_2).

        ``out[a, b]`` is the sum of the Darcy form of the wall pressure
        fluctuations and the viscous form of the cell velocities.
        """
        dm = corr.w_p.dofmap
        K = corr.w_p.coefficient
        st = corr.stokes
        phis = []
        for k in range(2):
            g = fem.gradients(dm, corr.w_p.fields[k] + (st.q[k] if st is not None else 0.0))
            phis.append(g + np.eye(2)[k])
        for m in range(2):
            phis.append(fem.gradients(dm, corr.w_e.fields[m] + (st.q[2 + m] if st is not None else 0.0)))
        out = np.zeros((4, 4))
        for a in range(4):
            Kg = np.einsum("eij,eqj->eqi", K, phis[a])
            for b in range(4):
                out[a, b] = fem.integrate(dm, np.einsum("eqi,eqi->eq", Kg, phis[b])).sum()
        out /= grid.volume
        if st is not None:
            out += st.viscous
        return out

    def predict(self, X):
        check_is_fitted(self, "coefficients_")
        X = check_array(X, ensure_2d=True)
        if X.shape[1] != 3:
            raise ValidationError("strains must be rows of 3 Voigt components (11, 22, 2*12)")
        return X @ self.coefficients_.E_hom.T

    def transform(self, X):
        check_is_fitted(self, "coefficients_")
        X = check_array(X, ensure_2d=True)
        if X.shape[1] != 3:
            raise ValidationError("strains must be rows of 3 Voigt components (11, 22, 2*12)")
        el = self.correctors_.elastic
        energy = np.array([localized_energy(self.grid_, el, self.localization_, x) for x in X])
        s_bar = mean_positive_trace(self.coefficients_.stress_trace, X, self.grid_.volume,
                                    fem.ref_for(self.grid_)["w"])
        return np.column_stack([energy, s_bar])


def mean_positive_trace(T, strains, volume, weights, chunk=256):
    """Cell average over the wall phase of ``(tr sigma)^+`` for each row of Voigt strains.

    ``T`` is the stress-trace operator ``(ne, nq, 3)``; the average is
    ``(1/|Y_e|) int_{Y_e}``.
    """
    strains = np.atleast_2d(np.asarray(strains, dtype=float))
    ne = T.shape[0]
    vol_e = ne * weights.sum()
    flat = T.reshape(-1, 3)
    w = np.tile(weights, ne)
    out = np.empty(len(strains))
    for s in range(0, len(strains), chunk):
        tr = strains[s:s + chunk] @ flat.T
        out[s:s + chunk] = np.maximum(tr, 0.0) @ w / vol_e
    return out


def wall_elements(indicator):
    return np.flatnonzero(indicator.phase == ELASTIC)
