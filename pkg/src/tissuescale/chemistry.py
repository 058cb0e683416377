"""Reaction kinetics, boundary fluxes, crosslink memory and the stiffness closure.

Pectin densities are arrays ``b`` with a trailing axis of length 3
(methylesterified, demethylesterified, calcium-pectin crosslinks); calcium
densities ``c`` have the same leading shape.
"""
from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from .errors import ValidationError


@dataclass(frozen=True)
class ReactionParams:
    mu1: float = 0.5
    mu2: float = 0.1
    r_dc: float = 1.0
    r_d: float = 0.1
    kappa_M: float = 1.0
    r_b: float = 0.1
    p1: float = 1.0
    f_b: float = 1.0
    f_c: float = 1.0

    def __post_init__(self):
        for k, v in asdict(self).items():
            if not np.isfinite(v) or v < 0:
                raise ValidationError(f"reaction parameter {k} must be finite and >= 0, got {v}")
        if self.kappa_M <= 0:
            raise ValidationError("kappa_M (Michaelis constant) must be > 0")


def _check_nonnegative(name, x):
    if np.any(np.asarray(x) < 0):
        raise ValidationError(f"{name} must be nonnegative")


def michaelis(c, kappa_M):
    return c / (kappa_M + c)


def reaction_rates(b, c, s_plus, params=ReactionParams(), strict=True):
    """Rates ``(g_b1, g_b2, g_b3, g_e)`` for wall-phase states.

    ``s_plus`` is the positive part of the elastic stress trace.  With
    ``strict`` negative inputs raise; otherwise they are clipped at zero.
    """
    b = np.asarray(b, dtype=float)
    c = np.asarray(c, dtype=float)
    s_plus = np.asarray(s_plus, dtype=float)
    if strict:
        _check_nonnegative("pectin densities", b)
        _check_nonnegative("calcium density", c)
        _check_nonnegative("stress trace positive part", s_plus)
    else:
        b, c, s_plus = np.maximum(b, 0.0), np.maximum(c, 0.0), np.maximum(s_plus, 0.0)
    b1, b2, b3 = b[..., 0], b[..., 1], b[..., 2]
    p = params
    bind = p.r_dc * b2 * michaelis(c, p.kappa_M)
    brk = p.r_b * b3 * s_plus
    g1 = -p.mu1 * b1
    g2 = p.mu1 * b1 - 2.0 * bind + 2.0 * brk - p.r_d * b2
    g3 = bind - brk
    ge = -bind + brk
    return g1, g2, g3, ge


def fluid_decay(c, mu2=ReactionParams.mu2):
    return -mu2 * np.asarray(c, dtype=float)


def boundary_fluxes(b, c, params=ReactionParams()):
    """Membrane deposition ``P`` and external fluxes ``F_b``, ``F_c``."""
    b = np.asarray(b, dtype=float)
    c = np.asarray(c, dtype=float)
    P = np.zeros_like(b)
    P[..., 0] = params.p1 / (1.0 + np.maximum(b[..., 2], 0.0))
    return P, -params.f_b * b, -params.f_c * c


def saturate(v, R=1.0):
    """``G(v) = R v / (R + |v|)`` with ``|.|`` the Euclidean norm of the last axis."""
    if R <= 0:
        raise ValidationError("saturation bound R must be positive")
    v = np.asarray(v, dtype=float)
    n = np.linalg.norm(v, axis=-1, keepdims=True)
    return R * v / (R + n)


@dataclass(frozen=True)
class MemoryKernel:
    """``kappa(t) = k0 t exp(-t / tau)``."""

    k0: float = 1.0
    tau: float = 1.0

    def __post_init__(self):
        if self.k0 < 0 or self.tau <= 0:
            raise ValidationError("memory kernel needs k0 >= 0 and tau > 0")

    def __call__(self, t):
        t = np.asarray(t, dtype=float)
        return self.k0 * t * np.exp(-t / self.tau)

    def constant_history(self, zeta0, t):
        """Exact memory value for a constant history ``zeta0`` on ``[0, t]``."""
        s = np.asarray(t, dtype=float) / self.tau
        return zeta0 * self.k0 * self.tau ** 2 * (1.0 - np.exp(-s) * (1.0 + s))

    def bound(self, zeta_max):
        """Supremum of the memory value over all histories bounded by ``zeta_max``."""
        return zeta_max * self.k0 * self.tau ** 2


def direct_convolution(kernel, samples, dt):
    """Trapezoidal ``int_0^t kappa(t - s) zeta(s) ds`` from the full sample history."""
    samples = np.asarray(samples, dtype=float)
    n = samples.shape[0] - 1
    if n == 0:
        return np.zeros(samples.shape[1:])
    w = np.ones(n + 1)
    w[0] = w[-1] = 0.5
    k = kernel(dt * np.arange(n, -1, -1))
    return dt * np.tensordot(w * k, samples, axes=(0, 0))


class MemoryHistory:
    """Per-point running trapezoidal convolution with the memory kernel.

    The kernel is a product of a linear and an exponential factor, so the
    discrete convolution obeys a two-term recursion; the result equals the
    full-history trapezoid sum without storing past samples.
    """

    def __init__(self, kernel, dt, shape):
        if dt <= 0:
            raise ValidationError("time step must be positive")
        self.kernel = kernel
        self.dt = float(dt)
        self.decay = np.exp(-self.dt / kernel.tau)
        self.P = np.zeros(shape)
        self.R = np.zeros(shape)
        self.steps = 0

    def value(self, current=None):
        """Memory value at the latest time level (the current sample has zero weight)."""
        return self.kernel.k0 * self.dt * self.R

    def push(self, sample):
        """Append the sample of the current time level and advance one step."""
        sample = np.asarray(sample, dtype=float)
        c = 0.5 if self.steps == 0 else 1.0
        P_new = self.decay * (self.P + c * sample)
        self.R = self.decay * (self.R + self.dt * (self.P + c * sample))
        self.P = P_new
        self.steps += 1
        return self.value()

    def state(self):
        return {"P": self.P.copy(), "R": self.R.copy(), "steps": self.steps}

    def restore(self, state):
        self.P = np.array(state["P"], dtype=float)
        self.R = np.array(state["R"], dtype=float)
        self.steps = int(state["steps"])


def memory_update(history, sample, dt=None):
    """Push one ``b3`` sample and return the updated memory value."""
    if dt is not None and not np.isclose(dt, history.dt):
        raise ValidationError("history was built for a different time step")
    return history.push(sample)


def stiffening(F, e_s=1.0):
    """Scale factor ``1 + e_s F / (1 + F)`` of the crosslink-dependent stiffness."""
    if e_s < 0:
        raise ValidationError("stiffening gain must be >= 0")
    F = np.maximum(np.asarray(F, dtype=float), 0.0)
    return 1.0 + e_s * F / (1.0 + F)


def elasticity_closure(base, F, e_s=1.0):
    """Stiffness at memory value ``F``: ``E_base * (1 + e_s F / (1 + F))``."""
    s = stiffening(F, e_s)
    return np.asarray(base, dtype=float) * np.asarray(s)[..., None, None]
