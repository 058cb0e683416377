"""Time stepping of the homogenized poroelastic / flow / reaction-diffusion system.

Each step alternates a chemistry solve for the current mechanics iterate
and a mechanics solve for the resulting chemistry until successive iterates
agree.  Mechanics is the displacement-pressure block with the fluid
interaction folded into the pressure operator; chemistry uses lumped mass,
implicit diffusion with Robin boundary terms and reactions evaluated at the
previous time level.
"""
from __future__ import annotations

import copy
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from . import fem
from .cell_problems import CellStokes
from .chemistry import MemoryHistory, MemoryKernel, ReactionParams, boundary_fluxes, fluid_decay, \
    reaction_rates, stiffening
from .effective import quadratic_form_min_eig
from .errors import MonitorTrip, SolverError, ValidationError
from .homogenizer import UnitCellHomogenizer, mean_positive_trace
from .mesh import Grid

FIELDS = ("u", "p", "b1", "b2", "b3", "c")


@dataclass
class MacroState:
    """Macroscopic fields at one time level (nodal arrays on the macro grid)."""

    t: float
    step: int
    u: np.ndarray
    v: np.ndarray
    a: np.ndarray
    p: np.ndarray
    b: np.ndarray
    c: np.ndarray
    F: np.ndarray
    memory: dict
    Q: np.ndarray
    V: np.ndarray
    cell_velocity: np.ndarray | None = None
    V_mem: np.ndarray | None = None
    record: dict = field(default_factory=dict)

    def copy(self):
        return copy.deepcopy(self)


def rigid_rows(grid, dm):
    """Rows fixing the mean displacement and the mean rotation."""
    w = fem.node_integrals(dm)
    x = grid.node_coords[dm.node_of]
    xc = x - (w @ x) / w.sum()
    n = dm.n
    rows = np.zeros((3, 2 * n))
    rows[0, 0::2] = w
    rows[1, 1::2] = w
    rows[2, 0::2] = -w * xc[:, 1]
    rows[2, 1::2] = w * xc[:, 0]
    return rows


def load_factor(t, ramp):
    return 1.0 if ramp <= 0 else min(t / ramp, 1.0)


class MacroSolver:
    """Homogenized model on the unit square with a uniform ``n x n`` grid.

    ``coefficients`` are the effective coefficients of the configured cell;
    they are computed with :class:`UnitCellHomogenizer` when not given.
    ``initial`` may override initial nodal fields (``p``, ``b``, ``c``).
    """

    def __init__(self, config, coefficients=None, homogenizer=None, resolution=None, initial=None):
        self.cfg = config
        self.modes = config.modes
        n = int(resolution or config.macro.resolution)
        self.grid = Grid((n, n), (1.0, 1.0), periodic=False)
        self.dm = fem.dofmap(self.grid)
        if coefficients is None or (config.modes.fluid == "full" and homogenizer is None):
            homogenizer = homogenizer or UnitCellHomogenizer.from_config(config).fit()
            coefficients = homogenizer.coefficients_
        self.hom = homogenizer
        self.coef = coefficients
        ch = config.chemistry
        self.params = ReactionParams(ch.mu1, ch.mu2, ch.r_dc, ch.r_d, ch.kappa_M, ch.r_b, ch.p1, ch.f_b, ch.f_c)
        self.kernel = MemoryKernel(ch.k0, ch.tau_kappa)
        self.dt = float(config.time.dt)
        self.tol = float(config.solver.tol)
        self._check_table()
        self._setup_operators()
        self.state = self.initial_state(initial)

    # ------------------------------------------------------------------ setup
    def _check_table(self):
        table = self.coef.table
        for E in table.E:
            if not quadratic_form_min_eig(E) > 0:
                raise ValidationError("tabulated effective elasticity is not positive definite")
        self.E_base = self.coef.E_hom

    def _setup_operators(self):
        dm, c, m = self.dm, self.coef, self.cfg.material
        self.w_nodes = fem.node_integrals(dm)
        self.Ml = fem.mass_matrix(dm, lumped=True)
        self.Mp = fem.mass_matrix(dm)
        self.Mv = sp.kron(self.Mp, sp.eye(2)).tocsr()
        self.Mvl = sp.kron(self.Ml, sp.eye(2)).tocsr()
        self.Mbl = fem.boundary_mass(dm)
        if self.modes.fluid == "full":
            # implicit Euler cell flow: the shifted responses enter implicitly, the history as a load
            self._setup_full_fluid()
            self.resp_Q, self.resp_V = self.cell_resp_Q, self.cell_resp_V
        else:
            self.resp_Q, self.resp_V = np.hstack([c.Q_p, c.Q_u]), c.mean_velocity
        Q_p, Q_u = self.resp_Q[:, :2], self.resp_Q[:, 2:]
        K_eff = c.K_p - Q_p
        self.K_eff = 0.5 * (K_eff + K_eff.T)
        if not np.linalg.eigvalsh(self.K_eff).min() > 0:
            raise ValidationError("effective pressure operator is not positive definite")
        self.Ku_eff = c.K_u + Q_u
        self.Kp = fem.diffusion_matrix(dm, self.K_eff)
        self.C = fem.gradient_coupling(dm, self.Ku_eff)
        self.Bup = fem.gradient_coupling(dm, np.eye(2)).T.tocsr()
        self.R = rigid_rows(self.grid, dm)
        self.inertia = self.modes.elasticity == "evolutionary"
        self.fluid_inertia = not (self.modes.elasticity == "quasi_stationary" and self.modes.fluid == "quasi_steady")
        # fluid inertia int V . phi with V linear in (grad p, d_t u): applied implicitly
        self.Iuu = sp.kron(self.Mp, sp.csr_matrix(self.resp_V[:, 2:])).tocsr()
        self.Iup = fem.gradient_coupling(dm, self.resp_V[:, :2].T).T.tocsr()
        # chemistry operators are constant in time: factor once
        te, dt = c.theta_e, self.dt
        self._chem = []
        for s in range(3):
            A = te / dt * self.Ml + fem.diffusion_matrix(dm, c.D_b[s]) + self.params.f_b * self.Mbl
            self._chem.append(spla.splu(A.tocsc()))
        r = fem.ref_for(self.grid)
        vf = np.broadcast_to(c.v_f, (len(dm.elements), 2))
        local = np.einsum("ea,aij->eij", vf, r["gradN"])
        conv = fem._sparse(dm.conn, local, dm.n)
        Ac = 1.0 / dt * self.Ml + fem.diffusion_matrix(dm, c.D) - conv + self.params.f_c * self.Mbl
        self._chem.append(spla.splu(Ac.tocsc()))
        h = 1.0 / int(c.meta.get("resolution", 32))
        self.trace_w = fem.reference(h, h)["w"]

    def _setup_full_fluid(self):
        """Per-element time-dependent cell flow: one shifted operator shared by all elements."""
        h = self.hom
        m = self.cfg.material
        st = h.correctors_.stokes
        if st is None:
            raise ValidationError("full fluid mode needs a cell with a fluid inclusion")
        shift = m.rho_f / self.dt
        op = CellStokes(h.grid_, h.indicator_, mu=m.mu, permeability=m.K_p * np.eye(2), mass_shift=shift)
        wp, we = h.correctors_.w_p, h.correctors_.w_e
        e = np.eye(2)
        sols = [op.solve(body_force=e[k], wall_field=wp.fields[k]) for k in range(2)]
        sols += [op.solve(tangential=e[k], wall_field=we.fields[k]) for k in range(2)]
        self.cell_op = op
        self.cell_resp_v = np.stack([s.velocity for s in sols], axis=1)
        self.cell_resp_Q = np.stack([op.mean_velocity(s.velocity) - op.mean_flux(s.q) for s in sols], axis=1)
        self.cell_resp_V = np.stack([op.mean_velocity(s.velocity) for s in sols], axis=1)
        self.steady_velocity = st.velocity.T
        self.cell_shift = shift

    def _boundary_loads(self, t):
        L = self.cfg.loads
        s = load_factor(t, L.ramp)
        fu = np.zeros(2 * self.dm.n)
        fp = np.zeros(self.dm.n)
        for face in fem.FACES:
            fu += s * fem.boundary_load(self.dm, face, np.array(getattr(L, f"traction_{face}")))
            fp += s * fem.boundary_load(self.dm, face, getattr(L, f"flux_{face}"))
        return fu, fp

    # --------------------------------------------------------------- helpers
    def element_scale(self, F):
        """Per-element memory value (mean of the corner nodes)."""
        return F[self.dm.conn].mean(axis=1)

    def stiffness(self, F):
        Fe = self.element_scale(F)
        return self.coef.table(Fe)

    def _centroid_gradients(self, p):
        return fem.gradients(self.dm, p).mean(axis=1)

    def _centroid_values(self, v):
        return np.stack([fem.values(self.dm, v[0::2]).mean(axis=1), fem.values(self.dm, v[1::2]).mean(axis=1)], 1)

    def amplitudes(self, p, v):
        """Flow-mode amplitudes ``(grad p, d_t u)`` per element, shape ``(ne, 4)``."""
        return np.concatenate([self._centroid_gradients(p), self._centroid_values(v)], axis=1)

    def norm(self, x, vector=False):
        if vector:
            return float(np.sqrt(x[0::2] @ (self.Ml @ x[0::2]) + x[1::2] @ (self.Ml @ x[1::2])))
        return float(np.sqrt(x @ (self.Ml @ x)))

    # ---------------------------------------------------------- initial data
    def initial_state(self, initial=None):
        ini = self.cfg.initial
        initial = initial or {}
        n = self.dm.n
        p = np.asarray(initial.get("p", np.full(n, ini.p)), dtype=float).copy()
        b = np.asarray(initial.get("b", np.tile(ini.b, (n, 1))), dtype=float).copy()
        c = np.asarray(initial.get("c", np.full(n, ini.c)), dtype=float).copy()
        F = np.zeros(n)
        hist = MemoryHistory(self.kernel, self.dt, n)
        u = self.equilibrium(p, F, 0.0)
        v = np.zeros(2 * n)
        amp = self.amplitudes(p, v)
        c_ = self.coef
        Q = amp @ np.hstack([c_.Q_p, c_.Q_u]).T
        V = amp @ c_.mean_velocity.T
        cell_v = V_mem = None
        if self.modes.fluid == "full":
            # the cell flow starts from the steady response to the initial data
            cell_v = self.steady_velocity @ amp.T
            V_mem = V - amp @ self.resp_V.T
        st = MacroState(0.0, 0, u, v, np.zeros(2 * n), p, b, c, F, hist.state(), Q, V, cell_v, V_mem)
        st.record = self._energy_terms(st, st)
        return st

    def equilibrium(self, p, F, t):
        """Displacement balancing the loads and the pressure gradient, rigid motions removed."""
        K = fem.elasticity_matrix(self.dm, self.stiffness(F))
        fu, _ = self._boundary_loads(t)
        rhs = fu - self.Bup @ p
        Rs = sp.csr_matrix(self.R)
        A = sp.bmat([[K, Rs.T], [Rs, None]]).tocsc()
        sol = spla.splu(A).solve(np.concatenate([rhs, np.zeros(3)]))
        return sol[: 2 * self.dm.n]

    # ------------------------------------------------------------ mechanics
    def _newmark(self, st):
        """``d_t u^{n+1} = alpha u^{n+1} + r`` for the active time integrator."""
        dt = self.dt
        if self.inertia:
            beta, gamma = 0.25, 0.5
            alpha = gamma / (beta * dt)
            r = -alpha * st.u + (1 - gamma / beta) * st.v + dt * (1 - gamma / (2 * beta)) * st.a
            return alpha, r
        return 1.0 / dt, -st.u / dt

    def _mechanics_factor(self, st, F):
        """Factor the displacement-pressure block for the memory values of this step."""
        dm, dt, c, m = self.dm, self.dt, self.coef, self.cfg.material
        n = dm.n
        K = fem.elasticity_matrix(dm, self.stiffness(F))
        alpha, _ = self._newmark(st)
        blocks_u = K
        if self.inertia:
            blocks_u = K + (c.theta_e * m.rho_e / (0.25 * dt * dt)) * self.Mv
        Kpp = self.Kp
        incompressible = self.modes.pressure == "incompressible"
        if not incompressible:
            Kpp = Kpp + (c.theta_e * m.rho_p / dt) * self.Mp
        Bup = self.Bup
        if self.fluid_inertia:
            rf = m.rho_f / dt
            blocks_u = blocks_u + rf * alpha * self.Iuu
            Bup = Bup + rf * self.Iup
        rows = [[blocks_u, Bup], [-alpha * self.C, Kpp]]
        A = sp.bmat(rows).tolil()
        extra = []
        if not self.inertia:
            for r in self.R:
                extra.append(np.concatenate([r, np.zeros(n)]))
        if incompressible:
            extra.append(np.concatenate([np.zeros(2 * n), self.w_nodes]))
        if extra:
            E = sp.csr_matrix(np.array(extra))
            A = sp.bmat([[A.tocsr(), E.T], [E, None]])
        self._mech_lu = spla.splu(A.tocsc())
        self._mech_extra = len(extra)

    def step_poroelastic(self, st, t_new, memory_part=None):
        """One implicit step of the displacement-pressure block.

        ``memory_part`` holds the responses to the stored cell flow (full mode).
        Returns ``(u, v, a, p)`` at the new time level.
        """
        dm, dt, c, m = self.dm, self.dt, self.coef, self.cfg.material
        n = dm.n
        alpha, r = self._newmark(st)
        fu, fp = self._boundary_loads(t_new)
        rhs_u = fu.copy()
        if self.inertia:
            pred = st.u + dt * st.v + dt * dt * 0.25 * st.a
            rhs_u += (c.theta_e * m.rho_e / (0.25 * dt * dt)) * (self.Mv @ pred)
        if self.fluid_inertia:
            old = self.Iup @ st.p + self.Iuu @ st.v - self.Iuu @ r
            if st.V_mem is not None:
                old += fem.load_body(dm, st.V_mem - memory_part[2].T)
            rhs_u += m.rho_f / dt * old
        rhs_p = fp + self.C @ r
        if self.modes.pressure == "compressible":
            rhs_p += (c.theta_e * m.rho_p / dt) * (self.Mp @ st.p)
        if memory_part is not None:
            rhs_p += fem.load_flux(dm, memory_part[1].T)
        rhs = np.concatenate([rhs_u, rhs_p, np.zeros(self._mech_extra)])
        sol = self._mech_lu.solve(rhs)
        if not np.all(np.isfinite(sol)):
            raise SolverError("mechanics solve produced non-finite values")
        u = sol[: 2 * n]
        p = sol[2 * n: 3 * n]
        v = alpha * u + r
        if self.inertia:
            a = (u - st.u - dt * st.v - dt * dt * 0.25 * st.a) / (0.25 * dt * dt)
        else:
            a = (v - st.v) / dt
        return u, v, a, p

    # ---------------------------------------------------------- fluid closure
    def fluid_closure(self, p, v, memory_part=None):
        """``(Q, mean fluid velocity, cell velocities, history velocity)`` per element.

        Quasi-steady mode combines the unit responses linearly; full mode
        adds the response of the stored cell velocities of the previous step.
        """
        amp = self.amplitudes(p, v)
        Q = amp @ self.resp_Q.T
        V = amp @ self.resp_V.T
        if memory_part is None:
            return Q, V, None, None
        mem_v, mem_Q, mem_V = memory_part
        return Q + mem_Q.T, V + mem_V.T, self.cell_resp_v @ amp.T + mem_v, mem_V.T

    def _full_memory(self, st):
        """Cell responses to the stored velocities (implicit Euler history term)."""
        op = self.cell_op
        extra = self.cell_shift * (op.Mv @ st.cell_velocity)
        v, q = op.solve_many(extra)
        V = op.mean_velocity(v)
        return v, V - op.mean_flux(q), V

    # ------------------------------------------------------------ chemistry
    def mean_positive_trace(self, u, F):
        """Nodal cell-averaged ``s+`` from the element strains of ``u``."""
        eps = fem.strains(self.dm, u).mean(axis=1)
        scale = stiffening(self.element_scale(F), self.cfg.chemistry.e_s)
        s_el = scale * mean_positive_trace(self.coef.stress_trace, eps, 1.0, self.trace_w)
        return self._to_nodes(s_el)

    def _to_nodes(self, elem_values):
        out = np.zeros(self.dm.n)
        np.add.at(out, self.dm.conn, (elem_values * 0.25 * self.grid.element_area)[:, None])
        return out / self.w_nodes

    def step_chemistry(self, st, u_iter, F):
        """Implicit diffusion, previous-level reactions, mechanics from ``u_iter``."""
        c, dt = self.coef, self.dt
        if self.modes.chemistry == "frozen":
            return st.b.copy(), st.c.copy()
        s_plus = self.mean_positive_trace(u_iter, F)
        g1, g2, g3, ge = reaction_rates(st.b, st.c, s_plus, self.params, strict=False)
        P, _, _ = boundary_fluxes(st.b, st.c, self.params)
        ml = self.Ml.diagonal()
        b_new = np.empty_like(st.b)
        for s, g in enumerate((g1, g2, g3)):
            rhs = ml * (c.theta_e / dt * st.b[:, s] + c.theta_e * g + c.theta_gamma * P[:, s])
            b_new[:, s] = self._chem[s].solve(rhs)
        gf = fluid_decay(np.maximum(st.c, 0.0), self.params.mu2)
        rhs = ml * (st.c / dt + c.theta_f * gf + c.theta_e * ge)
        c_new = self._chem[3].solve(rhs)
        self.monitor(b_new, c_new)
        return b_new, c_new

    def monitor(self, b, c):
        tol = self.cfg.solver.monitor_tol
        lo = min(float(b.min()), float(c.min()))
        if lo < -tol:
            raise MonitorTrip(f"negative density {lo:.3e} below -{tol:g}; halve the time step (dt={self.dt:g})")

    # ------------------------------------------------------------ coupling
    def fixed_point_step(self, st=None, tol=None, max_iter=None):
        """Advance one step; returns the new state with the contraction trace in ``record``."""
        st = self.state if st is None else st
        tol = self.cfg.macro.fp_tol if tol is None else tol
        max_iter = self.cfg.macro.fp_max_iter if max_iter is None else max_iter
        if not 0 < tol < 1:
            raise ValidationError("fixed-point tolerance must lie in (0, 1)")
        t_new = st.t + self.dt
        hist = MemoryHistory(self.kernel, self.dt, self.dm.n)
        hist.restore(st.memory)
        if self.modes.chemistry == "coupled":
            F = hist.push(st.b[:, 2])
        else:
            F = st.F.copy()
        self._mechanics_factor(st, F)
        memory_part = self._full_memory(st) if self.modes.fluid == "full" else None
        # iterate 0: mechanics frozen at the old level
        mech = (st.u, st.v, st.a, st.p)
        chem = (st.b, st.c)
        dist, ratios = [], []
        for it in range(1, max_iter + 1):
            b, c = self.step_chemistry(st, mech[0], F)
            new_mech = self.step_poroelastic(st, t_new, memory_part)
            d = max(self.norm(new_mech[0] - mech[0], True), self.norm(new_mech[3] - mech[3]),
                    *(self.norm(b[:, s] - chem[0][:, s]) for s in range(3)), self.norm(c - chem[1]))
            dist.append(d)
            if len(dist) > 1:
                ratios.append(d / dist[-2] if dist[-2] > 0 else 0.0)
            mech, chem = new_mech, (b, c)
            if it >= 2 and d < tol:
                break
        else:
            raise SolverError(f"fixed point did not converge in {max_iter} sweeps "
                              f"(distances {', '.join(f'{x:.2e}' for x in dist)})", ratios)
        u, v, a, p = mech
        Q, V, cell_v, V_mem = self.fluid_closure(p, v, memory_part)
        new = MacroState(t_new, st.step + 1, u, v, a, p, chem[0], chem[1], F, hist.state(), Q, V, cell_v, V_mem)
        new.record = self._energy_terms(new, st)
        new.record.update(iterations=it, distances=dist, ratios=ratios)
        return new

    def advance(self, n_steps=1):
        for _ in range(n_steps):
            self.state = self.fixed_point_step(self.state)
        return self.state

    # -------------------------------------------------------------- diagnostics
    def _energy_terms(self, st, old):
        """Raw integrals entering the energy functional at this time level."""
        dm, c, m = self.dm, self.coef, self.cfg.material
        E_new = self.stiffness(st.F)
        eps = fem.strains(dm, st.u)
        dens = np.einsum("eqI,eIJ,eqJ->eq", eps, E_new, eps)
        elastic = float(fem.integrate(dm, dens).sum())
        es = self.cfg.chemistry.e_s
        if st.step > 0:
            s_new = stiffening(self.element_scale(st.F), es)
            s_old = stiffening(self.element_scale(old.F), es)
            rate = (s_new - s_old) / self.dt
            dens_base = np.einsum("eqI,IJ,eqJ->eq", eps, self.E_base, eps)
            elastic_rate = float(fem.integrate(dm, rate[:, None] * dens_base).sum())
            gamma_bound = float(max(np.max(rate / (2 * s_new)), 0.0))
        else:
            elastic_rate = 0.0
            gamma_bound = 0.0
        pressure = float(c.theta_e * m.rho_p * st.p @ (self.Mp @ st.p))
        gp = fem.gradients(dm, st.p)
        vq = np.stack([fem.values(dm, st.v[0::2]), fem.values(dm, st.v[1::2])], axis=2)
        amp = np.concatenate([gp, vq], axis=2)
        diss = c.dissipation if c.dissipation is not None else np.zeros((4, 4))
        dissipation = float(fem.integrate(dm, np.einsum("eqa,ab,eqb->eq", amp, diss, amp)).sum())
        kinetic = 0.0
        if self.inertia:
            kinetic += float(c.theta_e * m.rho_e * st.v @ (self.Mv @ st.v))
        if self.fluid_inertia and c.kinetic is not None:
            kinetic += float(m.rho_f * fem.integrate(dm, np.einsum("eqa,ab,eqb->eq", amp, c.kinetic, amp)).sum())
        return {"elastic": elastic, "elastic_rate": elastic_rate, "pressure": pressure,
                "dissipation": dissipation, "kinetic": kinetic, "gamma_bound": gamma_bound}

    def summary(self, st=None):
        """Scalar diagnostics of a state: L2 norms, probes and integrals."""
        st = self.state if st is None else st
        out = {"t": st.t, "step": st.step}
        out["u_L2"] = self.norm(st.u, True)
        out["p_L2"] = self.norm(st.p)
        for s in range(3):
            out[f"b{s + 1}_L2"] = self.norm(st.b[:, s])
        out["c_L2"] = self.norm(st.c)
        out["p_int"] = float(self.w_nodes @ st.p)
        centre = int(self.grid.node_id(self.grid.shape[0] // 2, self.grid.shape[1] // 2))
        out["u1_centre"] = float(st.u[2 * centre])
        out["p_centre"] = float(st.p[centre])
        out["b3_centre"] = float(st.b[centre, 2])
        out["c_centre"] = float(st.c[centre])
        out["Q1_mean"] = float(np.mean(st.Q[:, 0]))
        out["min_density"] = float(min(st.b.min(), st.c.min()))
        for k in ("elastic", "elastic_rate", "pressure", "dissipation", "kinetic", "gamma_bound"):
            out[k] = st.record.get(k, 0.0)
        out["iterations"] = st.record.get("iterations", 0)
        rat = st.record.get("ratios", [])
        out["contraction"] = float(max(rat)) if rat else 0.0
        return out

    def run(self, n_steps=None, callback=None):
        """Run to the configured final time; returns the list of per-step summaries."""
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
