"""Homogenized coefficients obtained by cell averaging of correctors.

Averages use the same 2x2 Gauss rule as assembly, which keeps discrete
identities such as the localization energy identity exact.
Elastic tensors are stored in Voigt form with engineering shear; index
order is (11, 22, 12).
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import fem
from .cell_problems import check_compatible, coefficient_hash, solve_elastic_correctors
from .errors import ValidationError
from .mesh import ELASTIC, FLUID

_V = ((0, 0), (1, 1), (0, 1))


def voigt_index(i, j):
    return 2 if i != j else i


def voigt_to_tensor(C):
    """Fourth-order tensor ``E_ijkl`` from a Voigt matrix (engineering shear)."""
    T = np.zeros((2, 2, 2, 2))
    for i in range(2):
        for j in range(2):
            for k in range(2):
                for l in range(2):
                    T[i, j, k, l] = C[voigt_index(i, j), voigt_index(k, l)]
    return T


def tensor_to_voigt(T):
    C = np.zeros((3, 3))
    for I, (i, j) in enumerate(_V):
        for J, (k, l) in enumerate(_V):
            C[I, J] = T[i, j, k, l]
    return C


def strain_to_voigt(eps):
    eps = np.asarray(eps, dtype=float)
    return np.array([eps[0, 0], eps[1, 1], eps[0, 1] + eps[1, 0]])


def quadratic_form_min_eig(C):
    """Smallest eigenvalue of ``A -> C A : A`` on symmetric matrices with the Frobenius norm."""
    return float(np.linalg.eigvalsh(0.5 * (fem.mandel(C) + fem.mandel(C).T)).min())


def _wall(grid, indicator, field_):
    a = np.asarray(field_, dtype=float)
    if a.ndim >= 1 and a.shape[0] == grid.n_elements:
        return a[indicator.phase == ELASTIC]
    return a


def effective_elasticity(grid, indicator, voigt, correctors):
    """``E^hom`` as a 3x3 Voigt matrix: cell average of ``E (b_kl + e(w^kl))`` over the wall phase."""
    C = np.broadcast_to(_wall(grid, indicator, voigt), (len(correctors.dofmap.elements), 3, 3))
    check_compatible(correctors, C, "effective elasticity")
    dm = correctors.dofmap
    out = np.zeros((3, 3))
    for k in range(3):
        eps = correctors.strains(k) + np.eye(3)[k]
        sig = np.einsum("eIJ,eqJ->eqI", C, eps)
        out[:, k] = fem.integrate(dm, sig).sum(axis=0)
    return out / grid.volume


def _flux_average(dm, K, fields, sign, grid):
    cols = []
    for j in range(2):
        g = fem.gradients(dm, fields[j])
        Kg = np.einsum("eab,eqb->eqa", K, g)
        base = np.broadcast_to(K[:, None, :, j], Kg.shape) if sign > 0 else np.broadcast_to(np.eye(2)[j], Kg.shape)
        cols.append(fem.integrate(dm, base + sign * Kg).sum(axis=0))
    return np.stack(cols, axis=1) / grid.volume


def effective_permeability(grid, indicator, permeability, w_p):
    """``K_p^hom[i, j] = (1/|Y|) int_{Y_e} (K e_j + K grad w_p^j)_i``."""
    K = np.broadcast_to(_per(permeability, grid, indicator, w_p), w_p.coefficient.shape)
    check_compatible(w_p, K, "effective permeability")
    return _flux_average(w_p.dofmap, K, w_p.fields, +1, grid)


def effective_coupling(grid, indicator, permeability, w_e):
    """``K_u[i, j] = (1/|Y|) int_{Y_e} (delta_ij - (K grad w_e^j)_i)``."""
    K = np.broadcast_to(_per(permeability, grid, indicator, w_e), w_e.coefficient.shape)
    check_compatible(w_e, K, "effective coupling")
    return _flux_average(w_e.dofmap, K, w_e.fields, -1, grid)


def _per(value, grid, indicator, corr):
    a = np.asarray(value, dtype=float)
    n = len(corr.dofmap.elements)
    if a.ndim == 0:
        return np.broadcast_to(a * np.eye(2), (n, 2, 2))
    if a.shape == (2, 2):
        return np.broadcast_to(a, (n, 2, 2))
    if a.shape[0] == grid.n_elements:
        a = a[corr.dofmap.elements]
        return a[:, None, None] * np.eye(2) if a.ndim == 1 else a
    return a


def effective_diffusion(grid, indicator, D_b, D_e, D_f, omega_b, omega):
    """Return ``(D_b^hom, D^hom)``; ``D_b^hom`` has one 2x2 block per species."""
    D_b = np.atleast_1d(np.asarray(D_b, dtype=float))
    if np.any(D_b <= 0):
        raise ValidationError("pectin diffusion coefficients must be positive")
    Kb = np.broadcast_to(np.eye(2), omega_b.coefficient.shape)
    check_compatible(omega_b, Kb, "effective pectin diffusion")
    unit = _flux_average(omega_b.dofmap, Kb, omega_b.fields, +1, grid)
    Db_hom = D_b[:, None, None] * unit
    d = np.where(indicator.phase == FLUID, D_f, D_e)
    K = d[:, None, None] * np.eye(2)
    check_compatible(omega, K, "effective calcium diffusion")
    D_hom = _flux_average(omega.dofmap, K, omega.fields, +1, grid)
    return Db_hom, D_hom


def effective_convection(grid, indicator, G, D_f, z):
    """``v_f = (1/|Y|) int_{Y_f} (G - D_f grad z)``."""
    dm = z.dofmap
    G = np.broadcast_to(np.asarray(G, dtype=float), (len(dm.elements), 2))
    g = fem.gradients(dm, z.fields[0])
    integrand = G[:, None, :] - D_f * g
    return fem.integrate(dm, integrand).sum(axis=0) / grid.volume


def strain_localization(correctors):
    """Localization ``W`` at wall-phase quadrature points, shape ``(ne, nq, 3, 3)``.

    Column ``J`` maps the unit macroscopic Voigt strain ``J`` to the local
    strain ``b_J + e_y(w^J)``.
    """
    cols = [correctors.strains(k) + np.eye(3)[k] for k in range(3)]
    return np.stack(cols, axis=3)


def localized_energy(grid, correctors, W, strain):
    """``(1/|Y|) int_{Y_e} E (W e) : (W e)`` for a constant Voigt strain ``e``."""
    loc = np.einsum("eqIJ,J->eqI", W, strain)
    dens = np.einsum("eqI,eIJ,eqJ->eq", loc, correctors.voigt, loc)
    return float(fem.integrate(correctors.dofmap, dens).sum() / grid.volume)


def positive_stress_trace(grid, correctors, W, strain, scale=1.0):
    """Per-point ``s+ = (tr E (W e))^+`` and its wall-phase average.

    ``scale`` is the memory-dependent stiffening factor of the closure.
    Returns ``(s_bar, s_points)``.
    """
    loc = np.einsum("eqIJ,...J->...eqI", W, np.asarray(strain, dtype=float))
    sig = scale * np.einsum("eIJ,...eqJ->...eqI", correctors.voigt, loc)
    s = np.maximum(sig[..., 0] + sig[..., 1], 0.0)
    dm = correctors.dofmap
    vol = len(dm.elements) * grid.element_area
    w = fem.ref_for(grid)["w"]
    s_bar = np.einsum("...eq,q->...", s, w) / vol
    return s_bar, s


def stress_trace_operator(grid, correctors, W):
    """Linear map from macroscopic Voigt strain to the unclipped local stress trace.

    Returns ``T`` with shape ``(ne, nq, 3)`` so that ``tr sigma = T @ e``.
    """
    trace = np.array([1.0, 1.0, 0.0])
    return np.einsum("I,eIJ,eqJK->eqK", trace, correctors.voigt, W)


def flow_interaction(grid, indicator, permeability, q, fluid_velocity):
    """``Q = (1/|Y|) (int_{Y_f} v - int_{Y_e} K grad q)``.

    ``fluid_velocity`` is a constant vector or interleaved nodal values on
    the fluid phase (full-grid node order restricted to fluid nodes).
    """
    fmask = indicator.phase == FLUID
    if not np.any(fmask):
        V = np.zeros(2)
    else:
        v = np.asarray(fluid_velocity, dtype=float)
        dmf = fem.dofmap(grid, fmask)
        if v.shape == (2,):
            V = v * fmask.sum() * grid.element_area
        else:
            w = fem.node_integrals(dmf)
            V = np.array([w @ v[0::2], w @ v[1::2]])
    K = _per(permeability, grid, indicator, q)
    g = fem.gradients(q.dofmap, q.fields[0])
    Kg = np.einsum("eab,eqb->eqa", K, g)
    F = fem.integrate(q.dofmap, Kg).sum(axis=0)
    return (V - F) / grid.volume


@dataclass
class ElasticityTable:
    """``E^hom`` tabulated on a uniform grid of memory values with linear interpolation."""

    F: np.ndarray
    E: np.ndarray
    clamps: int = 0

    def __call__(self, F):
        F = np.asarray(F, dtype=float)
        lo, hi = self.F[0], self.F[-1]
        out_of_range = (F < lo) | (F > hi)
        self.clamps += int(np.count_nonzero(out_of_range))
        Fc = np.clip(F, lo, hi)
        t = (Fc - lo) / (hi - lo) * (len(self.F) - 1) if hi > lo else np.zeros_like(Fc)
        i = np.minimum(np.floor(t).astype(int), len(self.F) - 2) if len(self.F) > 1 else np.zeros_like(Fc, int)
        a = (t - i)[..., None, None]
        if len(self.F) == 1:
            return np.broadcast_to(self.E[0], Fc.shape + (3, 3)).copy()
        return (1 - a) * self.E[i] + a * self.E[i + 1]


def tabulate_elasticity(grid, indicator, base_voigt, closure, F_max, samples=17, correctors=None,
                        tol=1e-10, method="direct"):
    """Tabulate ``E^hom`` over ``F in [0, F_max]``.

    ``closure(E_base, F)`` returns the cell stiffness at memory value ``F``.
    Correctors are re-solved only when the closed stiffness is not a common
    scaling of one already solved for.
    """
    F = np.linspace(0.0, float(F_max), int(samples))
    solved = {} if correctors is None else {correctors.coef_hash: correctors}
    E = []
    mask = indicator.phase == ELASTIC
    for f in F:
        Cf = closure(np.asarray(base_voigt, dtype=float), f)
        Cw = np.broadcast_to(_wall(grid, indicator, Cf), (int(mask.sum()), 3, 3))
        key = coefficient_hash(Cw)
        if key not in solved:
            solved[key] = solve_elastic_correctors(grid, indicator, Cf, tol, method)
        E.append(effective_elasticity(grid, indicator, Cf, solved[key]))
    return ElasticityTable(F, np.array(E)), solved


@dataclass
class EffectiveCoefficients:
    """All homogenized coefficients of one cell and material table."""

    E_hom: np.ndarray
    K_p: np.ndarray
    K_u: np.ndarray
    D_b: np.ndarray
    D: np.ndarray
    v_f: np.ndarray
    Q_p: np.ndarray
    Q_u: np.ndarray
    mean_velocity: np.ndarray
    viscous: np.ndarray
    darcy: np.ndarray
    theta_e: float
    theta_f: float
    theta_gamma: float
    table: ElasticityTable | None = None
    stress_trace: np.ndarray | None = None
    dissipation: np.ndarray | None = None
    kinetic: np.ndarray | None = None
    meta: dict = field(default_factory=dict)

    def scalars(self):
        """Flat dict of every effective scalar, used for refinement checks and CSV output."""
        out = {}
        for name in ("E_hom", "K_p", "K_u", "D", "Q_p", "Q_u"):
            a = getattr(self, name)
            for idx in np.ndindex(a.shape):
                out[f"{name}[{','.join(map(str, idx))}]"] = float(a[idx])
        for s in range(self.D_b.shape[0]):
            for idx in np.ndindex(2, 2):
                out[f"D_b{s + 1}[{idx[0]},{idx[1]}]"] = float(self.D_b[s][idx])
        out["theta_e"] = self.theta_e
        out["theta_f"] = self.theta_f
        out["theta_gamma"] = self.theta_gamma
        return out


def check_structure(E, K_p, D, D_b, tol=1e-9):
    """Symmetry and positive-definiteness report for the assembled tensors."""
    T = voigt_to_tensor(E)
    scale = np.max(np.abs(T))
    sym = max(np.max(np.abs(T - T.transpose(2, 3, 0, 1))), np.max(np.abs(T - T.transpose(1, 0, 2, 3))),
              np.max(np.abs(T - T.transpose(0, 1, 3, 2)))) / scale
    report = {"E_sym": sym, "E_min_eig": quadratic_form_min_eig(E)}
    for name, M in (("K_p", K_p), ("D", D)):
        report[f"{name}_sym"] = float(np.max(np.abs(M - M.T)) / np.max(np.abs(M)))
        report[f"{name}_min_eig"] = float(np.linalg.eigvalsh(0.5 * (M + M.T)).min())
    for s, M in enumerate(D_b):
        report[f"D_b{s + 1}_sym"] = float(np.max(np.abs(M - M.T)) / np.max(np.abs(M)))
        report[f"D_b{s + 1}_min_eig"] = float(np.linalg.eigvalsh(0.5 * (M + M.T)).min())
    report["ok"] = all(v <= tol for k, v in report.items() if k.endswith("_sym")) and all(
        v > 0 for k, v in report.items() if k.endswith("_min_eig"))
    return report
