"""Comparison of direct simulations with the homogenized solution.

Micro fields are averaged cell by cell (wall-phase means of ``u``, ``p``
and ``b``, full-cell mean of ``c``); the macro fields are averaged over the
same cells.  Errors are discrete ``L2(0, T; L2)`` norms of the difference of
the cell averages, accumulated at every time level after the initial one.
"""
from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from .energy import check_gamma, energy_series
from .errors import ValidationError
from .homogenizer import UnitCellHomogenizer
from .macro import MacroSolver
from .mesh import cell_index
from .micro import MicroSolver

FIELDS = ("u", "p", "b", "c")


def macro_cell_averages(solver, state, n_cells):
    """Cell averages of macro fields over the ``n_cells x n_cells`` tissue cells."""
    N = int(n_cells)
    nx = solver.grid.shape[0]
    if nx % N:
        raise ValidationError(f"macro resolution {nx} is not divisible by the tissue size {N}")
    cells = cell_index(solver.grid, N)
    area = solver.grid.element_area
    vol = np.bincount(cells, minlength=N * N) * area
    conn = solver.dm.conn

    def avg(x):
        return np.bincount(cells, weights=x[conn].mean(axis=1) * area, minlength=N * N) / vol

    return {"u": np.stack([avg(state.u[0::2]), avg(state.u[1::2])], axis=1), "p": avg(state.p),
            "b": np.stack([avg(state.b[:, s]) for s in range(3)], axis=1), "c": avg(state.c)}


def accumulate_errors(micro_avgs, macro_avgs, dt, n_cells):
    """``sqrt(sum_n dt sum_cells |cell| |diff|^2)`` per field from lists of cell-average dicts."""
    if len(micro_avgs) != len(macro_avgs):
        raise ValidationError("micro and macro series have different lengths")
    cell = 1.0 / (int(n_cells) ** 2)
    out = {}
    for f in FIELDS:
        s = 0.0
        for a, b in zip(micro_avgs, macro_avgs):
            s += dt * cell * float(np.sum((np.asarray(a[f]) - np.asarray(b[f])) ** 2))
        out[f] = float(np.sqrt(s))
    return out


@dataclass
class ComparisonReport:
    """Errors per tissue size with successive ratios and energy gaps."""

    cells: list
    errors: list
    energy_gap: list
    runtime: list
    times: np.ndarray
    macro_energy: np.ndarray
    micro_energy: list
    gamma: float
    meta: dict = field(default_factory=dict)

    def ratios(self):
        """``error(N_k) / error(N_{k-1})`` per field (NaN in the first row)."""
        out = []
        for k, e in enumerate(self.errors):
            if k == 0:
                out.append({f: float("nan") for f in FIELDS})
            else:
                prev = self.errors[k - 1]
                out.append({f: e[f] / prev[f] if prev[f] > 0 else float("nan") for f in FIELDS})
        return out

    def rows(self):
        """Table rows: N, eps, errors, ratios, energy gap, runtime."""
        rows = []
        for N, e, r, g, rt in zip(self.cells, self.errors, self.ratios(), self.energy_gap, self.runtime):
            rows.append([N, 1.0 / N] + [e[f] for f in FIELDS] + [r[f] for f in FIELDS] + [g, rt])
        return rows

    columns = ["N", "eps"] + [f"err_{f}" for f in FIELDS] + [f"ratio_{f}" for f in FIELDS] + \
              ["energy_gap", "runtime_s"]

    def monotone(self, fields=FIELDS):
        return all(self.errors[k][f] < self.errors[k - 1][f] for k in range(1, len(self.errors)) for f in fields)

    def summary(self):
        lines = [f"two-scale comparison, gamma = {self.gamma:g}"]
        for row in self.rows():
            N = row[0]
            errs = ", ".join(f"{f}={row[2 + i]:.3e}" for i, f in enumerate(FIELDS))
            rats = ", ".join(f"{f}={row[6 + i]:.3f}" for i, f in enumerate(FIELDS))
            lines.append(f"N={N}: errors {errs}; ratios {rats}; energy gap {row[10]:.3e}; {row[11]:.1f}s")
        return "\n".join(lines)


def compare_two_scale(config, cells=None, homogenizer=None, macro_resolution=None, gamma=None,
                      progress=None):
    """Run the macro model once and a direct simulation per tissue size; return the report.

    The effective coefficients are computed on the same cell mesh as the
    tissue copies so that the comparison isolates the homogenization error.
    """
    cells = [int(n) for n in (config.dns.cells if cells is None else cells)]
    if sorted(cells) != cells or len(set(cells)) != len(cells):
        raise ValidationError("tissue sizes must be strictly increasing")
    gamma = float(config.dns.gamma if gamma is None else gamma)
    res_cell = int(config.dns.cell_resolution)
    if homogenizer is None:
        homogenizer = UnitCellHomogenizer.from_config(config, resolution=res_cell).fit()
    macro = MacroSolver(config, homogenizer.coefficients_, homogenizer, resolution=macro_resolution)
    n_steps = int(round(config.time.T / config.time.dt))
    states = [macro.state]
    for _ in range(n_steps):
        macro.advance(1)
        states.append(macro.state)
    times = np.array([s.t for s in states])
    macro_records = [s.record for s in states]
    errors, gaps, runtimes, micro_energy = [], [], [], []
    for N in cells:
        t0 = time.perf_counter()
        micro = MicroSolver(config, N)
        micro_avgs, macro_avgs, records = [], [], [micro.state.record]
        for k in range(1, n_steps + 1):
            micro.advance(1)
            records.append(micro.state.record)
            micro_avgs.append(micro.cell_averages())
            macro_avgs.append(macro_cell_averages(macro, states[k], N))
            if progress is not None:
                progress(N, k, n_steps)
        errors.append(accumulate_errors(micro_avgs, macro_avgs, config.time.dt, N))
        micro_energy.append(energy_series(records, times, gamma))
        runtimes.append(time.perf_counter() - t0)
    check_gamma(gamma, macro_records)
    macro_energy = energy_series(macro_records, times, gamma)
    gaps = [float(np.max(np.abs(e - macro_energy))) for e in micro_energy]
    return ComparisonReport(cells, errors, gaps, runtimes, times, macro_energy, micro_energy, gamma,
                            meta={"n_steps": n_steps, "cell_resolution": res_cell,
                                  "macro_resolution": macro.grid.shape[0]})
