"""Periodic corrector problems on the unit cell.

Every scalar corrector is a zero-mean periodic field on its subdomain,
elastic correctors are periodic vector fields with zero mean on the wall
phase.  The cell Stokes problem is posed with Q1 velocities and
piecewise-constant pressures, which gives an exactly divergence-free
discrete velocity, and it is coupled to the wall-phase flux corrector
through the normal-stress condition on the interface.
"""
from __future__ import annotations

import hashlib
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from . import fem
from .errors import CompatibilityError, MismatchError, SolverError, ValidationError
from .linalg import Factorized, solve
from .mesh import ELASTIC, FLUID

# Voigt columns of the symmetric basis tensors b_11, b_22 and sym(b_12)
VOIGT_BASIS = np.eye(3)
PAIRS = ((0, 0), (1, 1), (0, 1))


def coefficient_hash(*arrays):
    """Hash of coefficient tables, invariant under a common positive scaling."""
    h = hashlib.sha256()
    for a in arrays:
        a = np.asarray(a, dtype=float)
        scale = np.max(np.abs(a)) if a.size else 1.0
        scale = scale if scale > 0 else 1.0
        h.update(np.round(a / scale, 12).tobytes())
    return h.hexdigest()[:16]


def _phase_mask(indicator, phase):
    return indicator.phase == phase


def _per_element(value, n_elements, shape):
    a = np.asarray(value, dtype=float)
    if a.shape == shape:
        a = np.broadcast_to(a, (n_elements,) + shape)
    elif a.ndim == 0 and shape == (2, 2):
        a = np.broadcast_to(float(a) * np.eye(2), (n_elements, 2, 2))
    elif a.ndim == 1 and shape == (2, 2) and len(a) == n_elements:
        a = a[:, None, None] * np.eye(2)
    if a.shape != (n_elements,) + shape:
        raise ValidationError(f"coefficient of shape {np.shape(value)} cannot be read as per-element {shape}")
    return np.ascontiguousarray(a)


def _rel_mean(dm, u, weights=None):
    w = fem.node_integrals(dm) if weights is None else weights
    u = np.asarray(u)
    if u.ndim == 1 and len(u) == 2 * dm.n:
        means = [abs(w @ u[c::2]) / w.sum() for c in range(2)]
        norm = np.sqrt(max(sum(w @ u[c::2] ** 2 for c in range(2)) / w.sum(), 1e-300))
        return max(means) / norm
    norm = np.sqrt(max(w @ u ** 2 / w.sum(), 1e-300))
    return abs(w @ u) / w.sum() / norm


@dataclass
class ScalarCorrectors:
    """A family of scalar correctors ``fields[k]`` on one dof map."""

    name: str
    dofmap: fem.DofMap
    fields: np.ndarray
    coefficient: np.ndarray
    residuals: list
    means: list
    coef_hash: str
    meta: dict = field(default_factory=dict)

    def gradients(self, k):
        return fem.gradients(self.dofmap, self.fields[k])

    def norm(self, k):
        M = fem.mass_matrix(self.dofmap)
        return float(np.sqrt(self.fields[k] @ (M @ self.fields[k])))


@dataclass
class ElasticCorrectors:
    dofmap: fem.DofMap
    fields: np.ndarray
    voigt: np.ndarray
    residuals: list
    means: list
    coef_hash: str

    def strains(self, k):
        return fem.strains(self.dofmap, self.fields[k])

    def energy(self, k):
        """``int E e(w) : e(w)`` over the wall phase."""
        eps = self.strains(k)
        dens = np.einsum("eqI,eIJ,eqJ->eq", eps, self.voigt, eps)
        return float(fem.integrate(self.dofmap, dens).sum())

    def norm(self, k):
        M = fem.mass_matrix(self.dofmap)
        u = self.fields[k]
        return float(np.sqrt(u[0::2] @ (M @ u[0::2]) + u[1::2] @ (M @ u[1::2])))


def solve_elastic_correctors(grid, indicator, voigt, tol=1e-10, method="direct"):
    """Correctors ``w^kl`` for the pairs (11), (22), (12) on the wall phase.

    ``voigt`` is a 3x3 Voigt stiffness (engineering shear) or one per element.
    """
    mask = _phase_mask(indicator, ELASTIC)
    C = _per_element(voigt, grid.n_elements, (3, 3))[mask]
    dm = fem.dofmap(grid, mask)
    comps = dm.components()
    if len(comps) != 1:
        raise SolverError(f"elastic phase splits into {len(comps)} disconnected pieces")
    A = fem.elasticity_matrix(dm, C)
    cons, null = fem.mean_constraints(dm, vector=True)
    fields, res, means = [], [], []
    for k in range(3):
        rhs = -fem.load_stress(dm, C @ VOIGT_BASIS[k])
        r = solve(fem.LinearSystem(A, rhs, cons, null), tol=tol, method=method)
        fields.append(r.x)
        res.append(r.residual)
        means.append(_rel_mean(dm, r.x))
    return ElasticCorrectors(dm, np.array(fields), C, res, means, coefficient_hash(C))


def _scalar_family(name, dm, K, rhs_list, tol, method):
    A = fem.diffusion_matrix(dm, K)
    cons, null = fem.mean_constraints(dm)
    fields, res, means = [], [], []
    for b in rhs_list:
        r = solve(fem.LinearSystem(A, b, cons, null), tol=tol, method=method)
        fields.append(r.x)
        res.append(r.residual)
        means.append(_rel_mean(dm, r.x))
    return ScalarCorrectors(name, dm, np.array(fields), K, res, means, coefficient_hash(K))


def solve_pressure_correctors(grid, indicator, permeability, tol=1e-10, method="direct"):
    """Correctors ``w_p^k`` and ``w_e^k`` on the wall phase.

    ``w_p^k`` solves div(K(grad w + e_k)) = 0 with zero conormal flux of
    K(grad w + e_k) on the interface; ``w_e^k`` solves div(K grad w - e_k) = 0
    with zero flux of K grad w - e_k.
    """
    mask = _phase_mask(indicator, ELASTIC)
    K = _per_element(permeability, grid.n_elements, (2, 2))[mask]
    dm = fem.dofmap(grid, mask)
    e = np.eye(2)
    wp = _scalar_family("w_p", dm, K, [-fem.load_flux(dm, K @ e[k]) for k in range(2)], tol, method)
    we = _scalar_family("w_e", dm, K, [fem.load_flux(dm, e[k]) for k in range(2)], tol, method)
    return wp, we


def tilde_duplication(grid, indicator):
    """Nodes doubled along the membrane patch and the element side using the copy."""
    nodes = indicator.tilde_interior_nodes()
    return nodes, indicator.phase == FLUID


def solve_diffusion_correctors(grid, indicator, D_e=1.0, D_f=1.0, tol=1e-10, method="direct"):
    """Correctors ``omega_b^j`` (unit coefficient on the wall phase) and ``omega^j``.

    ``omega^j`` lives on the whole cell with coefficient ``D_e`` / ``D_f`` and
    may jump across the membrane patch, where both sides are insulated.  The
    species coefficients of the wall-phase problem are scalars, so the
    wall-phase corrector is computed once with unit coefficient.
    """
    if min(D_e, D_f) <= 0:
        raise ValidationError("diffusion coefficients must be positive")
    mask = _phase_mask(indicator, ELASTIC)
    dm_b = fem.dofmap(grid, mask)
    Kb = np.broadcast_to(np.eye(2), (len(dm_b.elements), 2, 2))
    e = np.eye(2)
    omega_b = _scalar_family("omega_b", dm_b, Kb, [-fem.load_flux(dm_b, e[k]) for k in range(2)], tol, method)

    dup, side = tilde_duplication(grid, indicator)
    dm = fem.dofmap(grid, None, duplicate=dup, duplicate_side=side)
    if np.any(indicator.gamma_tilde) and len(dm.components()) > 1:
        import warnings
        warnings.warn("membrane patch separates the fluid phase; exchange is degenerate", RuntimeWarning)
    d = np.where(indicator.phase == FLUID, D_f, D_e)
    K = d[:, None, None] * np.eye(2)
    omega = _scalar_family("omega", dm, K, [-fem.load_flux(dm, K @ e[k]) for k in range(2)], tol, method)
    return omega_b, omega


def solve_convection_corrector(grid, indicator, G, D_f=1.0, tol=1e-10, method="direct"):
    """Corrector ``z`` on the fluid phase: div(D_f grad z - G) = 0, zero total flux on the interface.

    ``G`` is a constant vector or one vector per fluid element.
    """
    mask = _phase_mask(indicator, FLUID)
    if not np.any(mask):
        raise ValidationError("cell has no fluid phase")
    dm = fem.dofmap(grid, mask)
    G = np.broadcast_to(np.asarray(G, dtype=float), (len(dm.elements), 2))
    K = np.broadcast_to(D_f * np.eye(2), (len(dm.elements), 2, 2))
    return _scalar_family("z", dm, K, [fem.load_flux(dm, G)], tol, method)


def interface_coupling(dm_e, dm_f, indicator, faces=None):
    """Matrix ``G[i, (j, c)] = int_Gamma psi_i phi_j (n_f)_c`` with ``n_f`` the outward normal of the fluid.

    Rows are scalar wall-phase dofs, columns interleaved fluid velocity dofs.
    """
    faces = np.arange(indicator.n_gamma) if faces is None else np.asarray(faces)
    ne = dm_e.local(indicator.gamma_nodes[faces])
    nf = dm_f.local(indicator.gamma_nodes[faces])
    if np.any(ne < 0) or np.any(nf < 0):
        raise ValidationError("interface nodes missing from a dof map")
    nfl = -indicator.gamma_normal[faces]
    L = indicator.gamma_length[faces]
    m = np.array([[1 / 3, 1 / 6], [1 / 6, 1 / 3]])
    rows, cols, vals = [], [], []
    for a in range(2):
        for b in range(2):
            for c in range(2):
                rows.append(ne[:, a])
                cols.append(2 * nf[:, b] + c)
                vals.append(L * m[a, b] * nfl[:, c])
    return sp.csr_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
                         shape=(dm_e.n, 2 * dm_f.n))


def solve_flux_corrector(grid, indicator, permeability, normal_flux, tol=1e-10, rtol_compat=1e-8,
                         method="direct"):
    """Corrector ``q``: div(K grad q) = 0 on the wall phase, -K grad q . n = g on the interface.

    ``normal_flux`` gives ``g`` per interface face (``n`` points out of the
    wall phase) or is a constant vector ``v`` meaning ``g = v . n``.
    """
    mask = _phase_mask(indicator, ELASTIC)
    K = _per_element(permeability, grid.n_elements, (2, 2))[mask]
    dm = fem.dofmap(grid, mask)
    g = np.asarray(normal_flux, dtype=float)
    if g.shape == (2,):
        g = indicator.gamma_normal @ g
    g = np.broadcast_to(g, (indicator.n_gamma,))
    defect = float(np.sum(g * indicator.gamma_length))
    scale = float(np.sum(np.abs(g) * indicator.gamma_length))
    if abs(defect) > rtol_compat * max(scale, 1e-300) and abs(defect) > 1e-14:
        raise CompatibilityError(f"interface flux is incompatible: net flux {defect:.6g}", defect)
    b = np.zeros(dm.n)
    nodes = dm.local(indicator.gamma_nodes)
    np.add.at(b, nodes, -0.5 * (g * indicator.gamma_length)[:, None])
    fam = _scalar_family("q", dm, K, [b], tol, method)
    fam.meta = {"defect": defect}
    return fam


def interface_frame(dm, indicator):
    """Interface flags and unit normals (out of the fluid) at the nodes of ``dm``.

    The true inclusion normal is used when the indicator carries one,
    otherwise the length-weighted average of the adjacent face normals.
    """
    gnodes = dm.local(indicator.gamma_nodes)
    on_gamma = np.zeros(dm.n, dtype=bool)
    on_gamma[gnodes.ravel()] = True
    if indicator.node_normal is not None:
        nsum = np.where(on_gamma[:, None], indicator.node_normal[dm.node_of], 0.0)
    else:
        nsum = np.zeros((dm.n, 2))
        for c in range(2):
            np.add.at(nsum, gnodes[:, c], -indicator.gamma_normal * indicator.gamma_length[:, None])
    nrm = np.linalg.norm(nsum, axis=1)
    if np.any(on_gamma & (nrm < 1e-12)):
        raise ValidationError("interface node with vanishing normal")
    normal = np.zeros((dm.n, 2))
    normal[on_gamma] = nsum[on_gamma] / nrm[on_gamma, None]
    return on_gamma, normal


def tangential_reduction(on_gamma, normal):
    """Matrix ``T`` with ``v = T r``: interface nodes keep only a normal amplitude."""
    n = len(on_gamma)
    ncol = np.where(on_gamma, 1, 2)
    start = np.concatenate([[0], np.cumsum(ncol)[:-1]])
    node = np.arange(n)
    rows = np.concatenate([2 * node, 2 * node + 1])
    cols = np.concatenate([start, np.where(on_gamma, start, start + 1)])
    vals = np.concatenate([np.where(on_gamma, normal[:, 0], 1.0), np.where(on_gamma, normal[:, 1], 1.0)])
    return sp.csr_matrix((vals, (rows, cols)), shape=(2 * n, int(ncol.sum())))


@dataclass
class StokesSolution:
    velocity: np.ndarray
    pressure: np.ndarray
    q: np.ndarray
    divergence: float
    residual: float


class CellStokes:
    """Coupled cell Stokes / wall-phase Darcy operator.

    Unknowns are the fluid velocity ``v`` (Q1, with the tangential part on
    the interface prescribed), the fluid pressure (one value per fluid
    element) and the wall-phase flux corrector ``q``.  The normal stress on
    the interface equals ``-(g + q)`` where ``g`` is a given wall-phase field,
    and ``q`` is driven by the normal fluid flux through the interface.
    ``mass_shift`` adds ``mass_shift * int v . eta`` for implicit time stepping.
    """

    def __init__(self, grid, indicator, mu=1.0, permeability=1.0, mass_shift=0.0, coupled=True):
        if mu <= 0:
            raise ValidationError("viscosity must be positive")
        fmask = _phase_mask(indicator, FLUID)
        if not np.any(fmask):
            raise ValidationError("cell has no fluid phase")
        self.grid = grid
        self.indicator = indicator
        self.mu = float(mu)
        self.coupled = coupled
        self.dm_f = fem.dofmap(grid, fmask)
        self.dm_e = fem.dofmap(grid, _phase_mask(indicator, ELASTIC))
        self.K = _per_element(permeability, grid.n_elements, (2, 2))[indicator.phase == ELASTIC]
        nv = 2 * self.dm_f.n
        visc = np.diag([1.0, 1.0, 0.5]) * self.mu
        A = fem.elasticity_matrix(self.dm_f, np.broadcast_to(visc, (len(self.dm_f.elements), 3, 3)))
        self.M = fem.mass_matrix(self.dm_f)
        Mv = sp.kron(self.M, sp.eye(2)).tocsr()
        self.Mv = Mv
        if mass_shift:
            A = A + mass_shift * Mv
        self.A = A.tocsr()
        self.B = fem.divergence_matrix(self.dm_f)
        self.G = interface_coupling(self.dm_e, self.dm_f, indicator)
        self.Kq = fem.diffusion_matrix(self.dm_e, self.K)
        self._build_tangential()
        self._factor()

    def _build_tangential(self):
        self.on_gamma, self.node_normal = interface_frame(self.dm_f, self.indicator)
        self.node_tangent = np.stack([-self.node_normal[:, 1], self.node_normal[:, 0]], axis=1)
        self.T = tangential_reduction(self.on_gamma, self.node_normal)

    def _factor(self):
        T = self.T
        Ar = (T.T @ self.A @ T).tocsr()
        Br = (self.B @ T).tocsr()
        nr = Ar.shape[0]
        npf = Br.shape[0]
        ne = self.dm_e.n
        if self.coupled:
            Gr = (self.G @ T).tocsr()
            K = sp.bmat([[Ar, -Br.T, Gr.T],
                         [-Br, None, None],
                         [Gr, None, -self.Kq]]).tocsr()
            w = fem.node_integrals(self.dm_e)
            cons = [np.concatenate([np.zeros(nr + npf), w])]
            null = [np.concatenate([np.zeros(nr), np.ones(npf), np.ones(ne)])]
        else:
            K = sp.bmat([[Ar, -Br.T], [-Br, None]]).tocsr()
            cons, null = [], []
        self.sizes = (nr, npf, ne if self.coupled else 0)
        self.system = fem.LinearSystem(K, np.zeros(K.shape[0]), cons, null)
        self.solver = Factorized(self.system)

    def tangential_data(self, U):
        """Nodal velocity with tangential component ``U . tau`` on interface nodes.

        ``U`` is a constant vector or an array of nodal vectors (fluid dofmap order).
        """
        U = np.broadcast_to(np.asarray(U, dtype=float), (self.dm_f.n, 2))
        t = np.einsum("ic,ic->i", U, self.node_tangent)
        vd = np.where(self.on_gamma[:, None], t[:, None] * self.node_tangent, 0.0)
        return vd.ravel()

    def solve(self, body_force=(0.0, 0.0), tangential=(0.0, 0.0), wall_field=None, extra_rhs=None):
        """Solve one forcing case.

        ``body_force`` is the constant macroscopic gradient term ``f`` in
        ``-div(sigma) + f = 0``; ``tangential`` prescribes the tangential trace;
        ``wall_field`` is the known part of the normal-stress datum, a wall-phase
        nodal field; ``extra_rhs`` is added to the velocity equation (full dofs).
        """
        T = self.T
        nr, npf, ne = self.sizes
        vd = self.tangential_data(tangential)
        f = -fem.load_body(self.dm_f, np.asarray(body_force, dtype=float)) - self.A @ vd
        if extra_rhs is not None:
            f = f + extra_rhs
        if wall_field is not None:
            f = f - self.G.T @ np.asarray(wall_field)
        rhs = [T.T @ f, self.B @ vd]
        if self.coupled:
            rhs.append(-self.G @ vd)
        rhs = np.concatenate(rhs)
        sol = self.solver(rhs)
        v = T @ sol[:nr] + vd
        pres = sol[nr:nr + npf]
        q = sol[nr + npf:] if self.coupled else np.zeros(0)
        if self.coupled:
            w = fem.node_integrals(self.dm_e)
            shift = (w @ q) / w.sum()
            q = q - shift
            pres = pres - shift
        div = float(np.max(np.abs(self.B @ v)) / self.grid.element_area)
        self.system.rhs = rhs
        r = rhs - self.system.matrix @ sol
        nb = np.linalg.norm(rhs)
        res = float(np.linalg.norm(r) / nb) if nb > 0 else float(np.linalg.norm(r))
        return StokesSolution(v, pres, q, div, res)

    def solve_many(self, extra_rhs):
        """Velocities and flux correctors for columns of extra velocity loads (no other data)."""
        extra_rhs = np.atleast_2d(np.asarray(extra_rhs, dtype=float).T).T
        nr, npf, ne = self.sizes
        rhs = np.zeros((self.system.n, extra_rhs.shape[1]))
        rhs[:nr] = self.T.T @ extra_rhs
        sol = self.solver(rhs)
        v = self.T @ sol[:nr]
        q = sol[nr + npf:] if self.coupled else np.zeros((0, extra_rhs.shape[1]))
        if self.coupled:
            w = fem.node_integrals(self.dm_e)
            q = q - (w @ q) / w.sum()
        return v, q

    def mean_velocity(self, v):
        """``(1/|Y|) int_{Y_f} v``; ``v`` may hold one field per column."""
        w = fem.node_integrals(self.dm_f)
        return np.array([w @ v[0::2], w @ v[1::2]]) / self.grid.volume

    def mean_flux(self, q):
        """``(1/|Y|) int_{Y_e} K grad q``; ``q`` may hold one field per column."""
        if not hasattr(self, "_flux_op"):
            r = fem.ref_for(self.grid)
            local = np.einsum("eab,bi->eai", self.K, r["grad"])
            op = np.zeros((2, self.dm_e.n))
            for a in range(2):
                np.add.at(op[a], self.dm_e.conn, local[:, a, :])
            self._flux_op = op / self.grid.volume
        return self._flux_op @ np.asarray(q)

    def viscous_form(self, v1, v2):
        return float(v1 @ (self.A @ v2))

    def darcy_form(self, q1, q2):
        return float(q1 @ (self.Kq @ q2))


@dataclass
class StokesResponses:
    """Cell responses to unit pressure gradients ``e_k`` and unit wall velocities ``e_m``.

    Mode order: (grad p e_1, grad p e_2, wall velocity e_1, wall velocity e_2).
    ``Q[:, mode]`` is the interaction vector of each mode and
    ``mean_velocity[:, mode]`` the cell-averaged fluid velocity.
    """

    velocity: np.ndarray
    pressure: np.ndarray
    q: np.ndarray
    mean_velocity: np.ndarray
    mean_flux: np.ndarray
    Q: np.ndarray
    viscous: np.ndarray
    darcy: np.ndarray
    divergence: list
    residuals: list
    operator: CellStokes = field(repr=False, default=None)

    @property
    def Q_p(self):
        return self.Q[:, :2]

    @property
    def Q_u(self):
        return self.Q[:, 2:]


def solve_stokes_unit_responses(grid, indicator, mu=1.0, permeability=1.0, pressure_correctors=None,
                                tol=1e-10):
    """Steady cell Stokes responses for the four unit forcing modes."""
    op = CellStokes(grid, indicator, mu=mu, permeability=permeability)
    if pressure_correctors is None:
        pressure_correctors = solve_pressure_correctors(grid, indicator, permeability)
    wp, we = pressure_correctors
    e = np.eye(2)
    sols = []
    for k in range(2):
        sols.append(op.solve(body_force=e[k], wall_field=wp.fields[k]))
    for m in range(2):
        sols.append(op.solve(tangential=e[m], wall_field=we.fields[m]))
    res = [s.residual for s in sols]
    if max(res) > max(tol, 1e-8):
        raise SolverError(f"cell Stokes residual {max(res):.3e} above tolerance", res)
    V = np.stack([op.mean_velocity(s.velocity) for s in sols], axis=1)
    F = np.stack([op.mean_flux(s.q) for s in sols], axis=1)
    Q = V - F
    vel = np.array([s.velocity for s in sols])
    qs = np.array([s.q for s in sols])
    visc = np.array([[op.viscous_form(a, b) for b in vel] for a in vel]) / grid.volume
    darcy = np.array([[op.darcy_form(a, b) for b in qs] for a in qs]) / grid.volume
    return StokesResponses(vel, np.array([s.pressure for s in sols]), qs, V, F, Q, visc, darcy,
                           [s.divergence for s in sols], res, op)


@dataclass
class CorrectorSet:
    """All unit-cell correctors for one geometry and coefficient table."""

    grid: object
    indicator: object
    elastic: ElasticCorrectors
    w_p: ScalarCorrectors
    w_e: ScalarCorrectors
    omega_b: ScalarCorrectors
    omega: ScalarCorrectors
    z: ScalarCorrectors | None
    stokes: StokesResponses | None
    key: str = ""

    def residuals(self):
        out = {"elastic": self.elastic.residuals, "w_p": self.w_p.residuals, "w_e": self.w_e.residuals,
               "omega_b": self.omega_b.residuals, "omega": self.omega.residuals}
        if self.z is not None:
            out["z"] = self.z.residuals
        if self.stokes is not None:
            out["stokes"] = self.stokes.residuals
        return out

    def means(self):
        out = {"elastic": self.elastic.means, "w_p": self.w_p.means, "w_e": self.w_e.means,
               "omega_b": self.omega_b.means, "omega": self.omega.means}
        if self.z is not None:
            out["z"] = self.z.means
        return out


def solve_all(grid, indicator, voigt, permeability, D_e=1.0, D_f=1.0, mu=1.0, G=(0.0, 0.0),
              tol=1e-10, method="direct"):
    """Solve every corrector family for one cell."""
    el = solve_elastic_correctors(grid, indicator, voigt, tol, method)
    wp, we = solve_pressure_correctors(grid, indicator, permeability, tol, method)
    ob, om = solve_diffusion_correctors(grid, indicator, D_e, D_f, tol, method)
    z = st = None
    if np.any(indicator.phase == FLUID):
        z = solve_convection_corrector(grid, indicator, G, D_f, tol, method)
        st = solve_stokes_unit_responses(grid, indicator, mu, permeability, (wp, we), tol)
    key = coefficient_hash(indicator.phase, indicator.gamma_tilde, el.voigt, wp.coefficient,
                           [D_e, D_f, mu], G)
    return CorrectorSet(grid, indicator, el, wp, we, ob, om, z, st, key)


def check_compatible(correctors, coefficient, what):
    if correctors.coef_hash != coefficient_hash(coefficient):
        raise MismatchError(f"{what}: correctors were solved for a different coefficient table")
