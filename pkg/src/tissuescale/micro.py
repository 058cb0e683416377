"""Direct simulation of the periodic microscopic problem on an ``N x N`` tissue.

The tissue is the unit square tiled by ``N x N`` scaled copies of the unit
cell (``eps = 1 / N``).  Per time step the wall displacement ``u``, the wall
pressure ``p``, the inclusion velocity ``v`` and the inclusion pressure are
solved together (quasi-stationary elasticity, Darcy flow in the wall,
quasi-steady ``eps^2``-scaled Stokes flow in the inclusions).  Interface
conditions:

* the tangential inclusion velocity equals the tangential wall velocity,
  imposed on the trial space, with tests tied the same way;
* the wall outflow ``(-K grad p + d_t u) . n`` equals ``v . n``;
* the inclusion normal stress equals ``-p``.

Chemistry uses lumped mass, implicit diffusion and convection, reactions at
the previous time level and the membrane deposition ``eps P`` on the
interface.  Calcium lives on the whole tissue and may jump across the
membrane patch, whose two sides are insulated.
"""
from __future__ import annotations

import copy
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from . import fem
from .cell_problems import interface_coupling, interface_frame, tangential_reduction, tilde_duplication
from .chemistry import MemoryHistory, MemoryKernel, ReactionParams, boundary_fluxes, fluid_decay, \
    reaction_rates, saturate, stiffening
from .errors import MonitorTrip, SolverError, ValidationError
from .macro import load_factor, rigid_rows
from .mesh import ELASTIC, FLUID, Inclusion, build_unit_cell, cell_index, tile_indicator

MAX_CELLS = 8


@dataclass
class MicroState:
    """Microscopic fields at one time level.

    ``u``, ``p``, ``b`` and ``F`` live on the wall-phase nodes, ``v`` on the
    inclusion nodes, ``pi`` per inclusion element and ``c`` on all nodes
    (with membrane copies).
    """

    t: float
    step: int
    u: np.ndarray
    p: np.ndarray
    v: np.ndarray
    pi: np.ndarray
    b: np.ndarray
    c: np.ndarray
    F: np.ndarray
    memory: dict
    record: dict = field(default_factory=dict)

    def copy(self):
        return copy.deepcopy(self)


def build_tissue(config, n_cells, cell_resolution=None):
    """Tissue grid and indicator for ``n_cells`` per side."""
    N = int(n_cells)
    if not 1 <= N <= MAX_CELLS:
        raise ValidationError(f"tissue size must lie in 1..{MAX_CELLS}, got {N}")
    g = config.geometry
    res = int(cell_resolution or config.dns.cell_resolution)
    if res < 16:
        raise ValidationError("per-cell resolution must be >= 16")
    inc = None if g.inclusion == "none" else Inclusion(g.inclusion, tuple(g.center), float(g.size))
    arc = tuple(g.membrane_arc) if len(g.membrane_arc) == 2 else None
    cell_grid, cell_ind = build_unit_cell(res, inc, membrane_arc=arc, labelling=g.labelling)
    grid, ind = tile_indicator(cell_grid, cell_ind, N)
    return cell_grid, cell_ind, grid, ind


class MicroSolver:
    """Time stepping of the microscopic model on a tiled tissue."""

    def __init__(self, config, n_cells, cell_resolution=None, initial=None):
        modes = config.modes
        if modes.elasticity != "quasi_stationary" or modes.fluid != "quasi_steady":
            raise ValidationError("the direct simulation supports quasi-stationary elasticity with "
                                  "quasi-steady inclusion flow only")
        self.cfg = config
        self.N = int(n_cells)
        self.eps = 1.0 / self.N
        self.cell_grid, self.cell_ind, self.grid, self.ind = build_tissue(config, n_cells, cell_resolution)
        if not np.any(self.ind.phase == FLUID):
            raise ValidationError("the direct simulation needs a cell with a fluid inclusion")
        ch, m = config.chemistry, config.material
        self.params = ReactionParams(ch.mu1, ch.mu2, ch.r_dc, ch.r_d, ch.kappa_M, ch.r_b, ch.p1, ch.f_b, ch.f_c)
        self.kernel = MemoryKernel(ch.k0, ch.tau_kappa)
        self.dt = float(config.time.dt)
        self.E_base = fem.isotropic_voigt(m.young, m.poisson)
        self._setup()
        self.state = self.initial_state(initial)

    # ------------------------------------------------------------------ setup
    def _setup(self):
        grid, ind, m = self.grid, self.ind, self.cfg.material
        self.dm_e = dm_e = fem.dofmap(grid, ind.phase == ELASTIC)
        self.dm_f = dm_f = fem.dofmap(grid, ind.phase == FLUID)
        dup, side = tilde_duplication(grid, ind)
        self.dm_c = fem.dofmap(grid, None, duplicate=dup, duplicate_side=side)
        self.ne, self.nf = dm_e.n, dm_f.n
        # wall phase
        self.Mp = fem.mass_matrix(dm_e)
        self.Ml = fem.mass_matrix(dm_e, lumped=True)
        self.Kp = fem.diffusion_matrix(dm_e, m.K_p)
        self.Cu = fem.gradient_coupling(dm_e, np.eye(2)).tocsr()
        self.w_e = fem.node_integrals(dm_e)
        self.R = rigid_rows(grid, dm_e)
        # inclusions
        visc = np.diag([1.0, 1.0, 0.5]) * m.mu * self.eps ** 2
        self.Av = fem.elasticity_matrix(dm_f, np.broadcast_to(visc, (len(dm_f.elements), 3, 3)))
        self.Bdiv = fem.divergence_matrix(dm_f)
        self.G = interface_coupling(dm_e, dm_f, ind)
        on_gamma, normal = interface_frame(dm_f, ind)
        self.T = tangential_reduction(on_gamma, normal)
        tangent = np.stack([-normal[:, 1], normal[:, 0]], axis=1)
        gi = np.flatnonzero(on_gamma)
        gj = dm_e.local(dm_f.node_of[gi])
        if np.any(gj < 0):
            raise ValidationError("interface node missing from the wall phase")
        rows, cols, vals = [], [], []
        for a in range(2):
            for b in range(2):
                rows.append(2 * gi + a)
                cols.append(2 * gj + b)
                vals.append(tangent[gi, a] * tangent[gi, b])
        # tangential trace of a wall field on the inclusion nodes
        self.S = sp.csr_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
                               shape=(2 * self.nf, 2 * self.ne))
        self._build_mechanics_blocks()
        self._build_chemistry()

    def _build_mechanics_blocks(self):
        """Parts of the monolithic operator that do not depend on the memory values."""
        dt, m = self.dt, self.cfg.material
        S, T, Av, G, B = self.S, self.T, self.Av, self.G, self.Bdiv
        incompressible = self.cfg.modes.pressure == "incompressible"
        Kpp = self.Kp if incompressible else self.Kp + (m.rho_p / dt) * self.Mp
        self._blocks = {
            "uu": (S.T @ Av @ S) / dt, "up": self.Cu.T + S.T @ G.T, "ur": S.T @ Av @ T, "ui": -(S.T @ B.T),
            "pu": -(self.Cu + G @ S) / dt, "pp": Kpp, "pr": -(G @ T),
            "ru": (T.T @ Av @ S) / dt, "rp": T.T @ G.T, "rr": T.T @ Av @ T, "ri": -(T.T @ B.T),
            "iu": -(B @ S) / dt, "ir": -(B @ T),
        }
        self.nr = T.shape[1]
        self.npi = B.shape[0]
        extra = [np.concatenate([r, np.zeros(self.ne + self.nr + self.npi)]) for r in self.R]
        if incompressible:
            extra.append(np.concatenate([np.zeros(2 * self.ne), self.w_e, np.zeros(self.nr + self.npi)]))
        self._extra = sp.csr_matrix(np.array(extra))

    def _build_chemistry(self):
        dm_e, dm_c, ind, ch, m = self.dm_e, self.dm_c, self.ind, self.cfg.chemistry, self.cfg.material
        dt = self.dt
        self.Mbl = fem.boundary_mass(dm_e)
        self._chem_b = []
        for s in range(3):
            A = self.Ml / dt + fem.diffusion_matrix(dm_e, m.D_b[s]) + ch.f_b * self.Mbl
            self._chem_b.append(spla.splu(A.tocsc()))
        # lumped membrane measure (true arc weights, tissue units)
        self.gamma_lumped = np.zeros(self.ne)
        nodes = dm_e.local(ind.gamma_nodes)
        np.add.at(self.gamma_lumped, nodes, 0.5 * ind.surface_weight[:, None])
        # calcium: whole tissue, membrane copies on the inclusion side
        d = np.where(ind.phase == FLUID, m.D_f, m.D_e)
        self.Mc = fem.mass_matrix(dm_c, lumped=True)
        self.Ac = fem.diffusion_matrix(dm_c, d) + ch.f_c * fem.boundary_mass(dm_c)
        solid = ind.phase[dm_c.elements] == ELASTIC
        self.c_solid_conn = dm_c.conn[solid]
        self.c_fluid_elems = np.flatnonzero(~solid)
        self.b_conn = dm_e.conn
        # c dof of every wall node (the wall side never uses membrane copies)
        self.c_of_b = np.zeros(self.ne, dtype=int)
        self.c_of_b[self.b_conn.ravel()] = self.c_solid_conn.ravel()
        self._gradN = fem.ref_for(self.grid)["gradN"]
        self.fluid_map = dm_c.conn[self.c_fluid_elems]

    # --------------------------------------------------------------- helpers
    def _loads(self, t):
        L = self.cfg.loads
        s = load_factor(t, L.ramp)
        fu = np.zeros(2 * self.ne)
        fp = np.zeros(self.ne)
        for face in fem.FACES:
            fu += s * fem.boundary_load(self.dm_e, face, np.array(getattr(L, f"traction_{face}")))
            fp += s * fem.boundary_load(self.dm_e, face, getattr(L, f"flux_{face}"))
        return fu, fp

    def element_scale(self, F):
        return stiffening(F[self.dm_e.conn].mean(axis=1), self.cfg.chemistry.e_s)

    def stiffness(self, F):
        return self.E_base[None] * self.element_scale(F)[:, None, None]

    def norm(self, x, M=None):
        M = self.Ml if M is None else M
        return float(np.sqrt(x @ (M @ x)))

    def vnorm(self, x, M=None):
        return float(np.hypot(self.norm(x[0::2], M), self.norm(x[1::2], M)))

    # ---------------------------------------------------------- initial data
    def initial_state(self, initial=None):
        ini = self.cfg.initial
        initial = initial or {}
        p = np.asarray(initial.get("p", np.full(self.ne, ini.p)), dtype=float).copy()
        b = np.asarray(initial.get("b", np.tile(ini.b, (self.ne, 1))), dtype=float).copy()
        c = np.asarray(initial.get("c", np.full(self.dm_c.n, ini.c)), dtype=float).copy()
        F = np.zeros(self.ne)
        hist = MemoryHistory(self.kernel, self.dt, self.ne)
        u = self.equilibrium(p, F, 0.0)
        st = MicroState(0.0, 0, u, p, np.zeros(2 * self.nf), np.zeros(self.npi), b, c, F, hist.state())
        st.record = self._energy_terms(st, st)
        return st

    def equilibrium(self, p, F, t):
        """Wall displacement under the loads and the pressure gradient, traction-free interface."""
        K = fem.elasticity_matrix(self.dm_e, self.stiffness(F))
        fu, _ = self._loads(t)
        Rs = sp.csr_matrix(self.R)
        A = sp.bmat([[K, Rs.T], [Rs, None]]).tocsc()
        sol = spla.splu(A).solve(np.concatenate([fu - self.Cu.T @ p, np.zeros(3)]))
        return sol[: 2 * self.ne]

    # ------------------------------------------------------------ mechanics
    def _mechanics_factor(self, F):
        bl = self._blocks
        K = fem.elasticity_matrix(self.dm_e, self.stiffness(F))
        A = sp.bmat([[K + bl["uu"], bl["up"], bl["ur"], bl["ui"]],
                     [bl["pu"], bl["pp"], bl["pr"], None],
                     [bl["ru"], bl["rp"], bl["rr"], bl["ri"]],
                     [bl["iu"], None, bl["ir"], sp.csr_matrix((self.npi, self.npi))]]).tocsr()
        E = self._extra
        A = sp.bmat([[A, E.T], [E, None]]).tocsc()
        self._lu = spla.splu(A)

    def step_mechanics(self, st, t_new):
        """Monolithic implicit step; returns ``(u, p, v, pi)``."""
        dt, m = self.dt, self.cfg.material
        fu, fp = self._loads(t_new)
        Su = self.S @ st.u / dt
        rhs_u = fu + self.S.T @ (self.Av @ Su)
        rhs_p = fp - (self.Cu @ st.u) / dt - self.G @ Su
        if self.cfg.modes.pressure == "compressible":
            rhs_p += (m.rho_p / dt) * (self.Mp @ st.p)
        rhs_r = self.T.T @ (self.Av @ Su)
        rhs_i = -(self.Bdiv @ Su)
        rhs = np.concatenate([rhs_u, rhs_p, rhs_r, rhs_i, np.zeros(self._extra.shape[0])])
        sol = self._lu.solve(rhs)
        if not np.all(np.isfinite(sol)):
            raise SolverError("micro mechanics solve produced non-finite values")
        ne, nr = self.ne, self.nr
        u = sol[: 2 * ne]
        p = sol[2 * ne: 3 * ne]
        r = sol[3 * ne: 3 * ne + nr]
        pi = sol[3 * ne + nr: 3 * ne + nr + self.npi]
        v = self.T @ r + self.S @ (u - st.u) / dt
        return u, p, v, pi

    def divergence(self, v):
        """Largest per-element mean divergence of the inclusion velocity."""
        return float(np.max(np.abs(self.Bdiv @ v)) / self.grid.element_area)

    # ------------------------------------------------------------ chemistry
    def positive_trace(self, u, F):
        """Nodal (lumped) element averages of ``(tr E e(u))^+`` on the wall phase."""
        eps = fem.strains(self.dm_e, u)
        tvec = self.E_base[0] + self.E_base[1]
        tr = self.element_scale(F)[:, None] * (eps @ tvec)
        s_el = np.maximum(tr, 0.0).mean(axis=1)
        out = np.zeros(self.ne)
        np.add.at(out, self.dm_e.conn, 0.25 * s_el[:, None])
        cnt = np.zeros(self.ne)
        np.add.at(cnt, self.dm_e.conn, 0.25)
        return out / cnt

    def _convection(self, v):
        """``int G(v) c . grad(psi)`` over the inclusion elements."""
        vx = v[0::2][self.dm_f.conn].mean(axis=1)
        vy = v[1::2][self.dm_f.conn].mean(axis=1)
        Gv = saturate(np.stack([vx, vy], axis=1), self.cfg.chemistry.R)
        local = np.einsum("ea,aij->eij", Gv, self._gradN)
        return fem._sparse(self.fluid_map, local, self.dm_c.n)

    def step_chemistry(self, st, u_iter, v_iter, F):
        if self.cfg.modes.chemistry == "frozen":
            return st.b.copy(), st.c.copy()
        dt, area = self.dt, self.grid.element_area
        s_plus = self.positive_trace(u_iter, F)
        c_wall = st.c[self.c_of_b]
        g1, g2, g3, ge = reaction_rates(st.b, c_wall, s_plus, self.params, strict=False)
        P, _, _ = boundary_fluxes(st.b, c_wall, self.params)
        ml = self.Ml.diagonal()
        b_new = np.empty_like(st.b)
        for s, g in enumerate((g1, g2, g3)):
            rhs = ml * (st.b[:, s] / dt + g) + self.eps * self.gamma_lumped * P[:, s]
            b_new[:, s] = self._chem_b[s].solve(rhs)
        src = np.zeros(self.dm_c.n)
        np.add.at(src, self.c_solid_conn, 0.25 * area * ge[self.b_conn])
        fconn = self.fluid_map
        gf = fluid_decay(np.maximum(st.c[fconn], 0.0), self.params.mu2)
        np.add.at(src, fconn, 0.25 * area * gf)
        A = self.Mc / dt + self.Ac - self._convection(v_iter)
        c_new = spla.splu(A.tocsc()).solve(self.Mc @ st.c / dt + src)
        self.monitor(b_new, c_new)
        return b_new, c_new

    def monitor(self, b, c):
        tol = self.cfg.solver.monitor_tol
        lo = min(float(b.min()), float(c.min()))
        if lo < -tol:
            raise MonitorTrip(f"negative density {lo:.3e} below -{tol:g}; halve the time step (dt={self.dt:g})")

    # ------------------------------------------------------------ coupling
    def fixed_point_step(self, st=None, tol=None, max_iter=None):
        st = self.state if st is None else st
        tol = self.cfg.macro.fp_tol if tol is None else tol
        max_iter = self.cfg.macro.fp_max_iter if max_iter is None else max_iter
        t_new = st.t + self.dt
        hist = MemoryHistory(self.kernel, self.dt, self.ne)
        hist.restore(st.memory)
        F = hist.push(st.b[:, 2]) if self.cfg.modes.chemistry == "coupled" else st.F.copy()
        self._mechanics_factor(F)
        mech = (st.u, st.p, st.v, st.pi)
        chem = (st.b, st.c)
        dist, ratios = [], []
        for it in range(1, max_iter + 1):
            b, c = self.step_chemistry(st, mech[0], mech[2], F)
            new_mech = self.step_mechanics(st, t_new)
            d = max(self.vnorm(new_mech[0] - mech[0]), self.norm(new_mech[1] - mech[1]),
                    *(self.norm(b[:, s] - chem[0][:, s]) for s in range(3)),
                    self.norm(c - chem[1], self.Mc))
            dist.append(d)
            if len(dist) > 1:
                ratios.append(d / dist[-2] if dist[-2] > 0 else 0.0)
            mech, chem = new_mech, (b, c)
            if it >= 2 and d < tol:
                break
        else:
            raise SolverError(f"micro fixed point did not converge in {max_iter} sweeps", ratios)
        u, p, v, pi = mech
        new = MicroState(t_new, st.step + 1, u, p, v, pi, chem[0], chem[1], F, hist.state())
        new.record = self._energy_terms(new, st)
        new.record.update(iterations=it, distances=dist, ratios=ratios, divergence=self.divergence(v))
        return new

    def advance(self, n_steps=1):
        for _ in range(n_steps):
            self.state = self.fixed_point_step(self.state)
        return self.state

    # -------------------------------------------------------------- diagnostics
    def _energy_terms(self, st, old):
        m = self.cfg.material
        eps = fem.strains(self.dm_e, st.u)
        s_new = self.element_scale(st.F)
        dens = s_new[:, None] * np.einsum("eqI,IJ,eqJ->eq", eps, self.E_base, eps)
        elastic = float(fem.integrate(self.dm_e, dens).sum())
        if st.step > 0:
            rate = (s_new - self.element_scale(old.F)) / self.dt
            elastic_rate = float(fem.integrate(self.dm_e, rate[:, None] / s_new[:, None] * dens).sum())
            gamma_bound = float(max(np.max(rate / (2 * s_new)), 0.0))
        else:
            elastic_rate = gamma_bound = 0.0
        pressure = float(m.rho_p * st.p @ (self.Mp @ st.p))
        dissipation = float(st.p @ (self.Kp @ st.p) + st.v @ (self.Av @ st.v))
        return {"elastic": elastic, "elastic_rate": elastic_rate, "pressure": pressure,
                "dissipation": dissipation, "kinetic": 0.0, "gamma_bound": gamma_bound}

    def summary(self, st=None):
        st = self.state if st is None else st
        out = {"t": st.t, "step": st.step, "u_L2": self.vnorm(st.u), "p_L2": self.norm(st.p)}
        for s in range(3):
            out[f"b{s + 1}_L2"] = self.norm(st.b[:, s])
        out["c_L2"] = self.norm(st.c, self.Mc)
        out["p_int"] = float(self.w_e @ st.p)
        out["min_density"] = float(min(st.b.min(), st.c.min()))
        out["divergence"] = st.record.get("divergence", 0.0)
        for k in ("elastic", "elastic_rate", "pressure", "dissipation", "kinetic", "gamma_bound"):
            out[k] = st.record.get(k, 0.0)
        out["iterations"] = st.record.get("iterations", 0)
        rat = st.record.get("ratios", [])
        out["contraction"] = float(max(rat)) if rat else 0.0
        return out

    def cell_averages(self, st=None):
        """Per-cell averages: wall-phase means of ``u``, ``p``, ``b`` and the cell mean of ``c``.

        Returns a dict of arrays with one row per cell (``N^2`` rows).
        """
        st = self.state if st is None else st
        N = self.N
        cells = cell_index(self.grid, N)
        ew = self.dm_e.elements
        ce = cells[ew]
        vol = np.bincount(ce, minlength=N * N) * self.grid.element_area

        def wall_mean(values):
            el = values[self.dm_e.conn].mean(axis=1) * self.grid.element_area
            return np.bincount(ce, weights=el, minlength=N * N) / vol

        out = {"u": np.stack([wall_mean(st.u[0::2]), wall_mean(st.u[1::2])], axis=1),
               "p": wall_mean(st.p),
               "b": np.stack([wall_mean(st.b[:, s]) for s in range(3)], axis=1)}
        cc = cells[self.dm_c.elements]
        el = st.c[self.dm_c.conn].mean(axis=1) * self.grid.element_area
        out["c"] = np.bincount(cc, weights=el, minlength=N * N) / (self.grid.volume / (N * N))
        return out

    def run(self, n_steps=None, callback=None):
        if n_steps is None:
            n_steps = int(round(self.cfg.time.T / self.dt))
        series = [self.summary()]
        if callback is not None:
            callback(self.state)
        for _ in range(n_steps):
            self.advance(1)
            series.append(self.summary())
            if callback is not None:
                callback(self.state)
        return series
