"""Bilinear finite elements on uniform grids.

All element integrals use the 2x2 Gauss rule.  Local matrices depend only
on the element size, so they are precomputed once per grid spacing and
scaled by the per-element coefficient during assembly.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np
import scipy.sparse as sp
from scipy.sparse import csgraph

from .errors import ConstraintError, ValidationError
from .mesh import ELASTIC, FLUID

_G = 0.5 / np.sqrt(3.0)
_XI = np.array([[0.5 - _G, 0.5 - _G], [0.5 + _G, 0.5 - _G],
                [0.5 + _G, 0.5 + _G], [0.5 - _G, 0.5 + _G]])
_CORNERS = np.array([[0, 0], [1, 0], [1, 1], [0, 1]], dtype=float)


@dataclass(frozen=True)
class Q1:
    """Reference data of a bilinear element with sides ``hx, hy``."""

    hx: float
    hy: float

    @property
    def area(self):
        return self.hx * self.hy

    @property
    def points(self):
        return _XI * np.array([self.hx, self.hy])

    @property
    def weights(self):
        return np.full(4, 0.25 * self.area)

    @property
    def N(self):
        sx = 2 * _CORNERS[:, 0] - 1
        sy = 2 * _CORNERS[:, 1] - 1
        x, y = _XI[:, :1], _XI[:, 1:]
        return (0.5 + sx * (x - 0.5)) * (0.5 + sy * (y - 0.5))

    @property
    def dN(self):
        """Physical gradients, shape ``(nq, 4, 2)``."""
        sx = 2 * _CORNERS[:, 0] - 1
        sy = 2 * _CORNERS[:, 1] - 1
        x, y = _XI[:, :1], _XI[:, 1:]
        gx = sx * (0.5 + sy * (y - 0.5)) / self.hx
        gy = sy * (0.5 + sx * (x - 0.5)) / self.hy
        return np.stack([gx, gy], axis=2)

    @property
    def B(self):
        """Voigt strain-displacement matrices ``(nq, 3, 8)``, engineering shear."""
        dN = self.dN
        B = np.zeros((4, 3, 8))
        B[:, 0, 0::2] = dN[:, :, 0]
        B[:, 1, 1::2] = dN[:, :, 1]
        B[:, 2, 0::2] = dN[:, :, 1]
        B[:, 2, 1::2] = dN[:, :, 0]
        return B


@lru_cache(maxsize=32)
def reference(hx, hy):
    q = Q1(float(hx), float(hy))
    w = q.weights
    N, dN, B = q.N, q.dN, q.B
    data = {
        "q": q,
        "N": N,
        "dN": dN,
        "B": B,
        "w": w,
        "mass": np.einsum("q,qi,qj->ij", w, N, N),
        "diff": np.einsum("q,qia,qjb->abij", w, dN, dN),
        "elas": np.einsum("q,qIi,qJj->IJij", w, B, B),
        "grad": np.einsum("q,qia->ai", w, dN),
        "intB": np.einsum("q,qIi->Ii", w, B),
        "intN": w @ N,
        "gradN": np.einsum("q,qia,qj->aij", w, dN, N),
        # integral of div(v) over the element for the 8 velocity dofs
        "div": np.einsum("q,qj->j", w, B[:, 0] + B[:, 1]),
    }
    return data


def ref_for(grid):
    return reference(*grid.h)


@dataclass
class DofMap:
    """Scalar node numbering restricted to a set of active elements.

    ``conn`` holds, for each active element, the local ids of its four
    corner nodes.  ``node_of`` maps local ids back to grid node ids (a
    duplicated node maps to the same grid node twice).
    """

    grid: object
    elements: np.ndarray
    conn: np.ndarray
    node_of: np.ndarray
    duplicated: np.ndarray = field(default_factory=lambda: np.empty(0, int))

    @property
    def n(self):
        return len(self.node_of)

    def components(self):
        """Connected components of the active node graph, as arrays of local ids."""
        rows = np.repeat(self.conn, 4, axis=1).ravel()
        cols = np.tile(self.conn, (1, 4)).ravel()
        g = sp.csr_matrix((np.ones(len(rows)), (rows, cols)), shape=(self.n, self.n))
        k, labels = csgraph.connected_components(g, directed=False)
        return [np.flatnonzero(labels == c) for c in range(k)]

    def local(self, grid_nodes):
        """Local ids of grid nodes (first copy when duplicated); -1 when inactive."""
        lookup = np.full(self.grid.n_nodes, -1)
        lookup[self.node_of[::-1]] = np.arange(self.n)[::-1]
        return lookup[np.asarray(grid_nodes)]

    def scatter(self, values, fill=0.0):
        """Grid-node array from local values; duplicates keep the first copy."""
        out = np.full(self.grid.n_nodes, fill, dtype=float)
        out[self.node_of[::-1]] = np.asarray(values)[::-1]
        return out

    def vector_conn(self):
        c = self.conn
        out = np.empty((len(c), 8), dtype=int)
        out[:, 0::2] = 2 * c
        out[:, 1::2] = 2 * c + 1
        return out


def dofmap(grid, element_mask=None, duplicate=None, duplicate_side=None):
    """Build a DofMap over the elements selected by ``element_mask``.

    ``duplicate`` lists grid nodes that receive a second copy; elements
    flagged in ``duplicate_side`` use the copy.
    """
    if element_mask is None:
        element_mask = np.ones(grid.n_elements, dtype=bool)
    elements = np.flatnonzero(element_mask)
    if len(elements) == 0:
        raise ValidationError("empty element selection")
    gconn = grid.elements[elements]
    used = np.unique(gconn)
    lookup = np.full(grid.n_nodes, -1)
    lookup[used] = np.arange(len(used))
    conn = lookup[gconn]
    node_of = used.copy()
    dup = np.empty(0, dtype=int)
    if duplicate is not None and len(duplicate):
        dup = np.intersect1d(np.asarray(duplicate), used)
        copy_id = np.full(grid.n_nodes, -1)
        copy_id[dup] = len(used) + np.arange(len(dup))
        side = np.asarray(duplicate_side)[elements]
        swap = side[:, None] & (copy_id[gconn] >= 0)
        conn = np.where(swap, copy_id[gconn], conn)
        node_of = np.concatenate([used, dup])
    return DofMap(grid, elements, conn, node_of, dup)


def _sparse(conn, local, n):
    ne, m = conn.shape
    rows = np.broadcast_to(conn[:, :, None], (ne, m, m)).ravel()
    cols = np.broadcast_to(conn[:, None, :], (ne, m, m)).ravel()
    A = sp.coo_matrix((local.ravel(), (rows, cols)), shape=(n, n)).tocsr()
    A.sum_duplicates()
    return A


def _as_tensor(coef, ne, dim):
    c = np.asarray(coef, dtype=float)
    if c.ndim == 0:
        c = np.full(ne, float(c))
    if c.ndim == 1:
        c = c[:, None, None] * np.eye(dim)
    if c.ndim == 2:
        c = np.broadcast_to(c, (ne, dim, dim))
    if c.shape != (ne, dim, dim):
        raise ValidationError(f"coefficient has shape {c.shape}, expected ({ne}, {dim}, {dim})")
    return c


def check_positive_definite(tensors, what):
    sym = 0.5 * (tensors + np.swapaxes(tensors, 1, 2))
    lam = np.linalg.eigvalsh(sym).min() if len(sym) else 1.0
    if not lam > 0:
        raise ValidationError(f"{what} must be uniformly positive definite (min eigenvalue {lam:.3g})")


def diffusion_matrix(dm, coef):
    """Stiffness of ``int K grad(u) . grad(v)`` with per-element tensor ``K``."""
    r = ref_for(dm.grid)
    K = _as_tensor(coef, len(dm.elements), 2)
    check_positive_definite(K, "diffusion coefficient")
    local = np.einsum("eab,abij->eij", K, r["diff"])
    return _sparse(dm.conn, local, dm.n)


def mass_matrix(dm, coef=1.0, lumped=False):
    r = ref_for(dm.grid)
    c = np.broadcast_to(np.asarray(coef, dtype=float), (len(dm.elements),))
    if lumped:
        vals = np.zeros(dm.n)
        np.add.at(vals, dm.conn, c[:, None] * r["intN"][None, :])
        return sp.diags(vals).tocsr()
    return _sparse(dm.conn, c[:, None, None] * r["mass"], dm.n)


def elasticity_matrix(dm, voigt):
    """Stiffness of ``int E e(u) : e(v)`` with per-element 3x3 Voigt tensors."""
    r = ref_for(dm.grid)
    C = _as_tensor(voigt, len(dm.elements), 3)
    check_positive_definite(mandel(C), "elasticity tensor")
    local = np.einsum("eIJ,IJij->eij", C, r["elas"])
    return _sparse(dm.vector_conn(), local, 2 * dm.n)


def node_integrals(dm, coef=1.0):
    """``int psi_i`` (times a per-element weight) for every local node."""
    r = ref_for(dm.grid)
    c = np.broadcast_to(np.asarray(coef, dtype=float), (len(dm.elements),))
    out = np.zeros(dm.n)
    np.add.at(out, dm.conn, c[:, None] * r["intN"][None, :])
    return out


def load_flux(dm, flux):
    """``int f . grad(psi_i)`` for a per-element constant vector ``f``."""
    r = ref_for(dm.grid)
    f = np.broadcast_to(np.asarray(flux, dtype=float), (len(dm.elements), 2))
    out = np.zeros(dm.n)
    np.add.at(out, dm.conn, f @ r["grad"])
    return out


def load_stress(dm, stress):
    """``int sigma : e(phi)`` for a per-element constant Voigt stress."""
    r = ref_for(dm.grid)
    s = np.broadcast_to(np.asarray(stress, dtype=float), (len(dm.elements), 3))
    out = np.zeros(2 * dm.n)
    np.add.at(out, dm.vector_conn(), s @ r["intB"])
    return out


def load_body(dm, force):
    """``int f . phi`` for a per-element constant body force vector."""
    r = ref_for(dm.grid)
    f = np.broadcast_to(np.asarray(force, dtype=float), (len(dm.elements), 2))
    out = np.zeros(2 * dm.n)
    vc = dm.vector_conn()
    np.add.at(out, vc[:, 0::2], f[:, :1] * r["intN"][None, :])
    np.add.at(out, vc[:, 1::2], f[:, 1:] * r["intN"][None, :])
    return out


def gradients(dm, u):
    """Gradients of a scalar field at quadrature points, ``(ne, nq, 2)``."""
    r = ref_for(dm.grid)
    return np.einsum("qia,ei->eqa", r["dN"], np.asarray(u)[dm.conn])


def strains(dm, u):
    """Voigt strains of a vector field at quadrature points, ``(ne, nq, 3)``."""
    r = ref_for(dm.grid)
    return np.einsum("qIi,ei->eqI", r["B"], np.asarray(u)[dm.vector_conn()])


def values(dm, u):
    r = ref_for(dm.grid)
    return np.asarray(u)[dm.conn] @ r["N"].T


def integrate(dm, qvalues):
    """Sum of quadrature values times weights, per element."""
    r = ref_for(dm.grid)
    return np.tensordot(qvalues, r["w"], axes=([1], [0]))


def gradient_coupling(dm, coef=1.0):
    """Matrix of ``int (K u) . grad(psi_i)`` for scalar tests and vector trials.

    Rows are scalar dofs, columns interleaved vector dofs of the same map.
    """
    r = ref_for(dm.grid)
    K = np.broadcast_to(_as_tensor(coef, len(dm.elements), 2), (len(dm.elements), 2, 2))
    local = np.einsum("eac,aij->eijc", K, r["gradN"]).reshape(len(dm.elements), 4, 8)
    vc = dm.vector_conn()
    ne = len(vc)
    rows = np.broadcast_to(dm.conn[:, :, None], (ne, 4, 8)).ravel()
    cols = np.broadcast_to(vc[:, None, :], (ne, 4, 8)).ravel()
    A = sp.coo_matrix((local.ravel(), (rows, cols)), shape=(dm.n, 2 * dm.n)).tocsr()
    A.sum_duplicates()
    return A


FACES = ("left", "right", "bottom", "top")


def boundary_mass(dm, faces=FACES, coef=1.0, lumped=True):
    """``int_{faces} c psi_i psi_j`` on the outer boundary of a plain grid."""
    grid = dm.grid
    n = dm.n
    vals = np.zeros(n)
    rows, cols, data = [], [], []
    for face in faces:
        pairs, _ = grid.boundary_edges(face)
        L = grid.h[1] if face in ("left", "right") else grid.h[0]
        loc = dm.local(pairs)
        if np.any(loc < 0):
            raise ValidationError(f"face {face} is not covered by the dof map")
        if lumped:
            np.add.at(vals, loc.ravel(), 0.5 * coef * L)
        else:
            m = coef * L * np.array([[1 / 3, 1 / 6], [1 / 6, 1 / 3]])
            for a in range(2):
                for b in range(2):
                    rows.append(loc[:, a])
                    cols.append(loc[:, b])
                    data.append(np.full(len(loc), m[a, b]))
    if lumped:
        return sp.diags(vals).tocsr()
    return sp.csr_matrix((np.concatenate(data), (np.concatenate(rows), np.concatenate(cols))), shape=(n, n))


def boundary_load(dm, face, value):
    """``int_face g . phi_i`` for a constant scalar ``g`` (scalar dofs) or vector ``g`` (interleaved)."""
    grid = dm.grid
    pairs, _ = grid.boundary_edges(face)
    L = grid.h[1] if face in ("left", "right") else grid.h[0]
    loc = dm.local(pairs)
    if np.any(loc < 0):
        raise ValidationError(f"face {face} is not covered by the dof map")
    g = np.asarray(value, dtype=float)
    if g.ndim == 0:
        out = np.zeros(dm.n)
        np.add.at(out, loc.ravel(), 0.5 * L * float(g))
        return out
    out = np.zeros(2 * dm.n)
    for c in range(2):
        np.add.at(out, 2 * loc.ravel() + c, 0.5 * L * g[c])
    return out


def divergence_matrix(dm):
    """Rows: active elements; ``(B v)_e = int_e div v``."""
    r = ref_for(dm.grid)
    vc = dm.vector_conn()
    ne = len(vc)
    rows = np.repeat(np.arange(ne), 8)
    return sp.csr_matrix((np.tile(r["div"], ne), (rows, vc.ravel())), shape=(ne, 2 * dm.n))


def mandel(voigt):
    """Voigt (engineering shear) tensors to Mandel form, whose eigenvalues are
    those of the quadratic form on symmetric matrices."""
    d = np.array([1.0, 1.0, np.sqrt(2.0)])
    return np.asarray(voigt) * d[:, None] * d[None, :]


def isotropic_voigt(young, poisson):
    """Plane-strain isotropic stiffness in Voigt form."""
    if young <= 0 or not -1.0 < poisson < 0.5:
        raise ValidationError(f"invalid isotropic parameters E={young}, nu={poisson}")
    mu = young / (2 * (1 + poisson))
    lam = young * poisson / ((1 + poisson) * (1 - 2 * poisson))
    return np.array([[lam + 2 * mu, lam, 0.0], [lam, lam + 2 * mu, 0.0], [0.0, 0.0, mu]])


def interface_matrix(dm, indicator, faces=None, coef=1.0):
    """Face mass ``int_face psi_i psi_j`` summed over interface faces."""
    faces = np.arange(indicator.n_gamma) if faces is None else np.asarray(faces)
    nodes = dm.local(indicator.gamma_nodes[faces])
    if np.any(nodes < 0):
        raise ValidationError("interface nodes not covered by the dof map")
    L = indicator.gamma_length[faces] * np.broadcast_to(coef, len(faces))
    local = L[:, None, None] * np.array([[1 / 3, 1 / 6], [1 / 6, 1 / 3]])
    return _sparse(nodes, local, dm.n)


@dataclass
class LinearSystem:
    """Sparse system with optional null space and matching zero-mean rows.

    Each ``constraints[k]`` is a weight vector ``c`` imposing ``c . x = 0``;
    ``nullspace[k]`` is the kernel vector it removes.
    """

    matrix: sp.spmatrix
    rhs: np.ndarray
    constraints: list = field(default_factory=list)
    nullspace: list = field(default_factory=list)
    symmetric: bool = True
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        n = self.matrix.shape[0]
        if self.matrix.shape != (n, n):
            raise ValidationError("system matrix must be square")
        self.rhs = np.asarray(self.rhs, dtype=float)
        if self.rhs.shape[0] != n:
            raise ValidationError(f"rhs length {self.rhs.shape[0]} does not match {n} dofs")
        for c in self.constraints:
            if len(c) != n:
                raise ValidationError("constraint length mismatch")

    @property
    def n(self):
        return self.matrix.shape[0]

    def bordered(self):
        if not self.constraints:
            return self.matrix.tocsc()
        C = sp.csr_matrix(np.vstack(self.constraints))
        k = C.shape[0]
        return sp.bmat([[self.matrix, C.T], [C, sp.csr_matrix((k, k))]]).tocsc()


def mean_constraints(dm, weights=None, vector=False):
    """Zero-mean rows and kernel vectors, one per connected component."""
    w = node_integrals(dm) if weights is None else weights
    cons, null = [], []
    for comp in dm.components():
        for c in range(2 if vector else 1):
            row = np.zeros(dm.n * (2 if vector else 1))
            ker = np.zeros_like(row)
            if vector:
                row[2 * comp + c] = w[comp]
                ker[2 * comp + c] = 1.0
            else:
                row[comp] = w[comp]
                ker[comp] = 1.0
            cons.append(row)
            null.append(ker)
    return cons, null


def assemble(kind, grid, indicator, coefficient, domain="Y", rhs=None, constraints="mean"):
    """Assemble one of the four operator kinds on a subdomain of the grid.

    ``kind`` is ``diffusion``, ``elasticity``, ``stokes`` or ``mass``.
    ``domain`` selects ``Y_e``, ``Y_f`` or ``Y``.  Periodic grids get one
    zero-mean row per connected component for diffusion and elasticity.
    """
    if domain == "Y":
        mask = np.ones(grid.n_elements, dtype=bool)
    elif domain == "Y_e":
        mask = indicator.phase == ELASTIC
    elif domain == "Y_f":
        mask = indicator.phase == FLUID
    else:
        raise ValidationError(f"unknown domain {domain!r}")
    dm = dofmap(grid, mask)
    coef = np.asarray(coefficient, dtype=float)
    if coef.ndim >= 1 and coef.shape[0] == grid.n_elements:
        coef = coef[mask]
    if kind == "diffusion":
        A = diffusion_matrix(dm, coef)
        vector = False
    elif kind == "elasticity":
        A = elasticity_matrix(dm, coef)
        vector = True
    elif kind == "mass":
        if np.any(coef <= 0):
            raise ValidationError("mass coefficient must be positive")
        A = mass_matrix(dm, coef)
        vector = False
        constraints = None
    elif kind == "stokes":
        from .cell_problems import CellStokes
        op = CellStokes(grid, indicator, mu=float(coef), coupled=False)
        op.system.meta["operator"] = op
        return op.system
    else:
        raise ValidationError(f"unknown operator kind {kind!r}")
    b = np.zeros(A.shape[0]) if rhs is None else rhs
    cons, null = ([], [])
    if constraints == "mean":
        cons, null = mean_constraints(dm, vector=vector)
    elif constraints is None and kind != "mass" and grid.periodic:
        raise ConstraintError(f"{kind} system on a periodic grid is singular without constraints")
    sys_ = LinearSystem(A, b, cons, null)
    sys_.meta["dofmap"] = dm
    return sys_
