"""Time-weighted energy functional shared by the macroscopic and the direct simulations.

Both solvers record, per time level, the raw integrals

``elastic``       int E e(u) : e(u)
``elastic_rate``  int d_t E e(u) : e(u)
``pressure``      rho_p int p^2 (wall phase)
``kinetic``       inertial densities (zero in quasi-stationary runs)
``dissipation``   Darcy plus viscous dissipation rate
``gamma_bound``   smallest gamma with 2 gamma E - d_t E >= 0 at that level

and the weighted functional with ``zeta(t) = exp(-gamma t)`` is

    E(s_n) = zeta_n^2 (A_n + P_n + K_n) / 2
             + sum_{m <= n} dt zeta_m^2 [(2 gamma A_m - B_m) / 2 + gamma (P_m + K_m) + D_m].
"""
from __future__ import annotations

import numpy as np

from .errors import ValidationError

TERMS = ("elastic", "elastic_rate", "pressure", "kinetic", "dissipation", "gamma_bound")


def admissibility_bound(records):
    """Largest recorded ``d_t E / (2 E)`` ratio: gamma must not be smaller."""
    return float(max((r.get("gamma_bound", 0.0) for r in records), default=0.0))


def check_gamma(gamma, records):
    if not gamma > 0:
        raise ValidationError(f"gamma must be > 0, got {gamma}")
    bound = admissibility_bound(records)
    if gamma < bound:
        raise ValidationError(f"gamma = {gamma:g} is below the admissibility bound {bound:.6g}")
    return bound


def energy_series(records, times, gamma):
    """Weighted energy at every recorded time level.

    ``records[0]`` is the initial level; the accumulated part uses the
    right endpoint of every step, matching the implicit time discretization.
    """
    check_gamma(gamma, records)
    times = np.asarray(times, dtype=float)
    if len(times) != len(records):
        raise ValidationError("one record per time level is required")
    get = {k: np.array([float(r.get(k, 0.0)) for r in records]) for k in TERMS}
    zeta2 = np.exp(-2.0 * gamma * times)
    A, B, P, K, D = get["elastic"], get["elastic_rate"], get["pressure"], get["kinetic"], get["dissipation"]
    inst = 0.5 * zeta2 * (A + P + K)
    rate = zeta2 * (0.5 * (2.0 * gamma * A - B) + gamma * (P + K) + D)
    dt = np.diff(times)
    acc = np.concatenate([[0.0], np.cumsum(dt * rate[1:])])
    return inst + acc


def energy_table(records, times, gamma):
    """Rows ``(t, E, elastic, pressure, kinetic, dissipation)`` for CSV output."""
    E = energy_series(records, times, gamma)
    return np.column_stack([np.asarray(times, dtype=float), E] +
                           [[float(r.get(k, 0.0)) for r in records]
                            for k in ("elastic", "pressure", "kinetic", "dissipation")])
