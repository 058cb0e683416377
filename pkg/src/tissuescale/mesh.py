"""Structured grids and phase labelling for the unit cell and for tiled tissues.

Grids are uniform and made of bilinear quadrilaterals.  Node and element
numbering is lexicographic with the first index running along ``x``.
A periodic grid identifies the nodes of opposite faces, so it stores
``nx * ny`` nodes; a plain grid stores ``(nx + 1) * (ny + 1)``.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property

import numpy as np
from scipy import ndimage

from .errors import GeometryError, ValidationError

ELASTIC = 0
FLUID = 1


@dataclass(frozen=True)
class Grid:
    """Uniform quadrilateral grid on ``[0, a1] x [0, a2]``."""

    shape: tuple[int, int]
    lengths: tuple[float, float] = (1.0, 1.0)
    periodic: bool = False

    def __post_init__(self):
        nx, ny = self.shape
        if nx < 1 or ny < 1:
            raise ValidationError(f"grid shape must be positive, got {self.shape}")
        if min(self.lengths) <= 0:
            raise ValidationError(f"cell lengths must be positive, got {self.lengths}")

    @property
    def h(self):
        return (self.lengths[0] / self.shape[0], self.lengths[1] / self.shape[1])

    @property
    def node_shape(self):
        nx, ny = self.shape
        return (nx, ny) if self.periodic else (nx + 1, ny + 1)

    @property
    def n_nodes(self):
        mx, my = self.node_shape
        return mx * my

    @property
    def n_elements(self):
        return self.shape[0] * self.shape[1]

    @property
    def element_area(self):
        return self.h[0] * self.h[1]

    @property
    def volume(self):
        return self.lengths[0] * self.lengths[1]

    def node_id(self, i, j):
        mx, my = self.node_shape
        i = np.asarray(i)
        j = np.asarray(j)
        if self.periodic:
            return np.mod(i, mx) + mx * np.mod(j, my)
        return i + mx * j

    @cached_property
    def element_ij(self):
        nx, ny = self.shape
        j, i = np.divmod(np.arange(nx * ny), nx)
        return np.stack([i, j], axis=1)

    @cached_property
    def elements(self):
        """Corner node ids, counter-clockwise from the lower-left corner."""
        i, j = self.element_ij.T
        return np.stack(
            [self.node_id(i, j), self.node_id(i + 1, j),
             self.node_id(i + 1, j + 1), self.node_id(i, j + 1)], axis=1)

    @cached_property
    def node_coords(self):
        mx, my = self.node_shape
        j, i = np.divmod(np.arange(mx * my), mx)
        return np.stack([i * self.h[0], j * self.h[1]], axis=1)

    @cached_property
    def element_corner_coords(self):
        """Unfolded coordinates of the four corners, shape ``(n_el, 4, 2)``."""
        i, j = self.element_ij.T
        hx, hy = self.h
        x0 = i * hx
        y0 = j * hy
        xs = np.stack([x0, x0 + hx, x0 + hx, x0], axis=1)
        ys = np.stack([y0, y0, y0 + hy, y0 + hy], axis=1)
        return np.stack([xs, ys], axis=2)

    @cached_property
    def element_centroids(self):
        i, j = self.element_ij.T
        return np.stack([(i + 0.5) * self.h[0], (j + 0.5) * self.h[1]], axis=1)

    @cached_property
    def element_volumes(self):
        return np.full(self.n_elements, self.element_area)

    @cached_property
    def fold(self):
        """Map from the ``(nx+1)*(ny+1)`` unfolded node lattice to node ids."""
        nx, ny = self.shape
        j, i = np.divmod(np.arange((nx + 1) * (ny + 1)), nx + 1)
        return self.node_id(i, j)

    def identification(self):
        """Pairs ``(min_face, max_face)`` of unfolded node indices identified by periodicity."""
        if not self.periodic:
            return np.empty((0, 2), dtype=int)
        nx, ny = self.shape
        pairs = []
        for j in range(ny + 1):
            pairs.append((j * (nx + 1), j * (nx + 1) + nx))
        for i in range(nx + 1):
            pairs.append((i, ny * (nx + 1) + i))
        return np.array(pairs, dtype=int)

    def boundary_edges(self, face):
        """Node pairs and element ids of the edges on one face of a plain grid.

        ``face`` is one of ``left``, ``right``, ``bottom``, ``top``.
        """
        if self.periodic:
            raise ValidationError("periodic grids have no boundary")
        nx, ny = self.shape
        if face == "left":
            k = np.arange(ny)
            return np.stack([self.node_id(0, k), self.node_id(0, k + 1)], 1), k * nx
        if face == "right":
            k = np.arange(ny)
            return np.stack([self.node_id(nx, k), self.node_id(nx, k + 1)], 1), k * nx + nx - 1
        if face == "bottom":
            k = np.arange(nx)
            return np.stack([self.node_id(k, 0), self.node_id(k + 1, 0)], 1), k
        if face == "top":
            k = np.arange(nx)
            return np.stack([self.node_id(k, ny), self.node_id(k + 1, ny)], 1), (ny - 1) * nx + k
        raise ValidationError(f"unknown face {face!r}")


@dataclass(frozen=True)
class Inclusion:
    shape: str = "circle"
    center: tuple[float, float] = (0.5, 0.5)
    size: float = 0.3

    @property
    def area(self):
        if self.shape == "circle":
            return np.pi * self.size ** 2
        return (2.0 * self.size) ** 2

    def coverage(self, grid, samples=16):
        """Fraction of each element covered by the inclusion (sub-sampled)."""
        t = (np.arange(samples) + 0.5) / samples
        sx, sy = np.meshgrid(t * grid.h[0], t * grid.h[1], indexing="ij")
        offsets = np.stack([sx.ravel(), sy.ravel()], axis=1)
        lower = grid.element_centroids - 0.5 * np.asarray(grid.h)
        cov = np.empty(grid.n_elements)
        for k in range(0, grid.n_elements, 4096):
            pts = lower[k:k + 4096, None, :] + offsets[None]
            inside = self.contains(pts.reshape(-1, 2)).reshape(pts.shape[:2])
            cov[k:k + 4096] = inside.mean(axis=1)
        return cov

    def normal(self, points):
        """Unit normal of the inclusion boundary pointing into the inclusion,
        evaluated at the closest boundary point; ``None`` for squares, whose
        interface faces are grid aligned."""
        if self.shape != "circle":
            return None
        d = np.asarray(self.center) - np.asarray(points)
        n = np.linalg.norm(d, axis=1, keepdims=True)
        return d / np.where(n > 0, n, 1.0)

    def contains(self, points):
        d = np.asarray(points) - np.asarray(self.center)
        if self.shape == "circle":
            return np.hypot(d[:, 0], d[:, 1]) < self.size
        if self.shape == "square":
            return np.max(np.abs(d), axis=1) < self.size
        raise ValidationError(f"unknown inclusion shape {self.shape!r}")


@dataclass(frozen=True, eq=False)
class MaterialIndicator:
    """Per-element phase labels and the interface faces between phases.

    ``gamma_normal`` is the unit normal of each interface face pointing out of
    the elastic phase, i.e. into the fluid.
    """

    phase: np.ndarray
    gamma_elastic: np.ndarray
    gamma_fluid: np.ndarray
    gamma_nodes: np.ndarray
    gamma_normal: np.ndarray
    gamma_length: np.ndarray
    gamma_centroid: np.ndarray
    gamma_tilde: np.ndarray
    volume: float
    center: tuple[float, float] | None = None
    meta: dict = field(default_factory=dict)
    gamma_weight: np.ndarray | None = None
    node_normal: np.ndarray | None = None

    @property
    def elastic(self):
        return self.phase == ELASTIC

    @property
    def fluid(self):
        return self.phase == FLUID

    @property
    def n_gamma(self):
        return len(self.gamma_length)

    def theta_e(self, grid):
        return float(np.sum(grid.element_volumes[self.elastic]) / self.volume)

    def theta_f(self, grid):
        return float(np.sum(grid.element_volumes[self.fluid]) / self.volume)

    @property
    def surface_weight(self):
        """Per-face weights approximating the arc length of the true interface."""
        return self.gamma_length if self.gamma_weight is None else self.gamma_weight

    @property
    def theta_gamma(self):
        return float(np.sum(self.surface_weight) / self.volume)

    @property
    def gamma_measure(self):
        """Length of the discrete (staircase) interface."""
        return float(np.sum(self.gamma_length))

    def gamma_node_set(self, only_tilde=False):
        faces = self.gamma_nodes[self.gamma_tilde] if only_tilde else self.gamma_nodes
        return np.unique(faces)

    def tilde_interior_nodes(self):
        """Interface nodes all of whose interface faces belong to the membrane patch."""
        if not np.any(self.gamma_tilde):
            return np.empty(0, dtype=int)
        nodes = self.gamma_nodes.ravel()
        tilde = np.repeat(self.gamma_tilde, 2)
        on_tilde = np.unique(nodes[tilde])
        off_tilde = np.unique(nodes[~tilde])
        return np.setdiff1d(on_tilde, off_tilde)

    def fingerprint(self):
        import hashlib
        h = hashlib.sha256()
        h.update(self.phase.astype(np.int8).tobytes())
        h.update(self.gamma_tilde.astype(np.int8).tobytes())
        return h.hexdigest()[:16]


def interface_faces(grid, phase):
    """Faces separating an ELASTIC element from a FLUID element."""
    nx, ny = grid.shape
    i, j = grid.element_ij.T
    hx, hy = grid.h
    rows = []
    for axis in (0, 1):
        if axis == 0:
            ok = np.ones_like(i, bool) if grid.periodic else i < nx - 1
            nb = ((i + 1) % nx) + nx * j
        else:
            ok = np.ones_like(j, bool) if grid.periodic else j < ny - 1
            nb = i + nx * ((j + 1) % ny)
        e = np.flatnonzero(ok & (phase != phase[nb]))
        n = nb[e]
        ie, je = i[e], j[e]
        if axis == 0:
            nodes = np.stack([grid.node_id(ie + 1, je), grid.node_id(ie + 1, je + 1)], 1)
            cen = np.stack([(ie + 1) * hx, (je + 0.5) * hy], 1)
            length = np.full(len(e), hy)
            unit = np.array([1.0, 0.0])
        else:
            nodes = np.stack([grid.node_id(ie, je + 1), grid.node_id(ie + 1, je + 1)], 1)
            cen = np.stack([(ie + 0.5) * hx, (je + 1) * hy], 1)
            length = np.full(len(e), hx)
            unit = np.array([0.0, 1.0])
        e_is_elastic = phase[e] == ELASTIC
        elastic = np.where(e_is_elastic, e, n)
        fluid_el = np.where(e_is_elastic, n, e)
        normal = np.where(e_is_elastic[:, None], unit, -unit)
        rows.append((elastic, fluid_el, nodes, normal, length, cen))
    cat = [np.concatenate([r[k] for r in rows]) for k in range(6)]
    order = np.lexsort((cat[1], cat[0]))
    return [c[order] for c in cat]


def _arc_mask(centroids, center, arc):
    if arc is None or center is None:
        return np.zeros(len(centroids), dtype=bool)
    a0, a1 = (float(a) % 360.0 for a in arc)
    d = centroids - np.asarray(center)
    ang = np.degrees(np.arctan2(d[:, 1], d[:, 0])) % 360.0
    if np.isclose(float(arc[1]) - float(arc[0]), 360.0):
        return np.ones(len(centroids), dtype=bool)
    if a0 <= a1:
        return (ang >= a0) & (ang <= a1)
    return (ang >= a0) | (ang <= a1)


def make_indicator(grid, phase, tilde=None, center=None, membrane_arc=None, inclusion=None,
                   weights=None, node_normal=None):
    """Indicator for given element phases.

    With an ``inclusion`` the interface nodes carry the true boundary normal
    and each face is weighted by ``length * |n_face . n_true|``, which sums
    to the true arc length of a curve resolved by a staircase.
    """
    phase = np.asarray(phase, dtype=np.int8)
    el, fl, nodes, normal, length, cen = interface_faces(grid, phase)
    if tilde is None:
        tilde = _arc_mask(cen, center, membrane_arc)
    if inclusion is not None and len(length):
        n_true = inclusion.normal(cen)
        if n_true is not None:
            weights = length * np.abs(np.sum(normal * n_true, axis=1))
            node_normal = np.zeros((grid.n_nodes, 2))
            gn = np.unique(nodes)
            # outward normal of the fluid region = minus the inward normal
            node_normal[gn] = -inclusion.normal(grid.node_coords[gn])
    return MaterialIndicator(
        phase=phase, gamma_elastic=el, gamma_fluid=fl, gamma_nodes=nodes,
        gamma_normal=normal, gamma_length=length, gamma_centroid=cen,
        gamma_tilde=np.asarray(tilde, dtype=bool), volume=grid.volume,
        center=None if center is None else tuple(center),
        meta={"membrane_arc": membrane_arc}, gamma_weight=weights, node_normal=node_normal)


def build_unit_cell(resolution, inclusion=None, membrane_arc=None, lengths=(1.0, 1.0),
                    labelling="centroid"):
    """Periodic unit-cell grid with an optional fluid inclusion.

    With ``labelling="centroid"`` an element is FLUID when its centroid lies
    inside the inclusion.  With ``labelling="area"`` elements are ranked by
    the fraction of their area covered by the inclusion (then by centroid
    distance) and the best-covered ones are labelled FLUID until the
    labelled area is closest to the exact inclusion area; equally ranked
    elements are kept together so the labels keep the inclusion symmetries.
    ``membrane_arc = (deg0, deg1)`` selects the interface faces whose centroid
    angle about the inclusion centre falls in the arc; they form the
    no-exchange membrane patch.
    """
    if int(resolution) < 8:
        raise ValidationError(f"resolution must be >= 8, got {resolution}")
    n = int(resolution)
    grid = Grid((n, n), tuple(float(a) for a in lengths), periodic=True)
    phase = np.zeros(grid.n_elements, dtype=np.int8)
    center = None
    if inclusion is not None:
        center = tuple(float(c) for c in inclusion.center)
        s = float(inclusion.size)
        if s <= 0:
            raise GeometryError("inclusion size must be positive")
        for c, a in zip(center, grid.lengths):
            if c - s <= 0.0 or c + s >= a:
                raise GeometryError("inclusion touches the cell boundary")
        if labelling == "centroid":
            phase[inclusion.contains(grid.element_centroids)] = FLUID
        elif labelling == "area":
            phase[_area_labels(grid, inclusion, center)] = FLUID
        else:
            raise ValidationError(f"unknown labelling {labelling!r}")
        i, j = grid.element_ij.T
        border = (i == 0) | (j == 0) | (i == n - 1) | (j == n - 1)
        if np.any(phase[border] == FLUID):
            raise GeometryError("need at least one elastic element layer between the inclusion and the cell boundary")
        if np.any(phase == FLUID):
            _, ncomp = ndimage.label(phase.reshape(n, n) == FLUID)
            if ncomp != 1:
                raise GeometryError(f"fluid region must be connected, found {ncomp} components")
    return grid, make_indicator(grid, phase, center=center, membrane_arc=membrane_arc, inclusion=inclusion)


def _area_labels(grid, inclusion, center):
    cov = inclusion.coverage(grid)
    dist = np.linalg.norm(grid.element_centroids - np.asarray(center), axis=1)
    key_c = np.round(cov, 9)
    key_d = np.round(dist, 9)
    order = np.lexsort((key_d, -key_c))
    # only cut between groups of equally ranked elements so that the
    # labelling keeps every symmetry of the inclusion
    ranks = np.stack([key_c[order], key_d[order]], axis=1)
    cuts = np.flatnonzero(np.any(np.diff(ranks, axis=0) != 0, axis=1)) + 1
    cuts = np.concatenate([[0], cuts, [grid.n_elements]])
    target = inclusion.area / grid.element_area
    count = int(cuts[np.argmin(np.abs(cuts - target))])
    return order[:count]


def tile_indicator(cell_grid, indicator, n_cells):
    """Tissue grid made of ``n_cells x n_cells`` copies of the unit cell.

    The tissue occupies the same box as the cell, so ``eps = 1 / n_cells``.
    """
    nx, ny = cell_grid.shape
    N = int(n_cells)
    grid = Grid((N * nx, N * ny), cell_grid.lengths, periodic=False)
    phase = np.tile(indicator.phase.reshape(ny, nx), (N, N)).ravel()
    weight = indicator.surface_weight
    lookup = {(int(a), int(b)): k for k, (a, b) in
              enumerate(zip(indicator.gamma_elastic, indicator.gamma_fluid))}
    el, fl, *_ = interface_faces(grid, phase.astype(np.int8))

    def local(e):
        i, j = grid.element_ij[e].T
        return (i % nx) + nx * (j % ny)

    idx = np.array([lookup[(int(a), int(b))] for a, b in zip(local(el), local(fl))], dtype=int)
    tilde = indicator.gamma_tilde[idx] if len(idx) else np.zeros(0, bool)
    # the cell weights are lengths in cell units; tissue faces are shorter by eps
    weights = weight[idx] * (grid.h[0] / cell_grid.h[0]) if len(idx) else np.zeros(0)
    node_normal = None
    if indicator.node_normal is not None:
        mx, my = grid.node_shape
        j, i = np.divmod(np.arange(grid.n_nodes), mx)
        node_normal = indicator.node_normal[cell_grid.node_id(i % nx, j % ny)]
    tissue = make_indicator(grid, phase, tilde=tilde, weights=weights, node_normal=node_normal)
    tissue.meta.update(n_cells=N, eps=1.0 / N)
    return grid, tissue


def cell_index(grid, n_cells):
    """Cell copy (0 .. N^2-1) containing each element of a tiled tissue grid."""
    nx, ny = grid.shape
    i, j = grid.element_ij.T
    cx = i // (nx // n_cells)
    cy = j // (ny // n_cells)
    return cx + n_cells * cy
