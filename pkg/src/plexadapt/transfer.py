"""Point location by visibility walk and P1 interpolation between meshes."""
from __future__ import annotations

import numpy as np
from scipy.spatial import cKDTree

from .fields import NodalField
from .mesh import Mesh, MeshError

__all__ = ["TransferError", "PointLocator", "locate_point", "interpolate_field", "interpolate_values"]

BARY_TOL = 1e-10
SNAP_TOL = 1e-8


class TransferError(MeshError):
    """A target point cannot be located in the source mesh."""


class PointLocator:
    """Walk-based point location on a fixed mesh.

    Cell indices returned here index :meth:`Mesh.triangles`; use
    ``mesh.cell_ids()[i]`` for the point id.
    """

    def __init__(self, mesh: Mesh):
        self.mesh = mesh
        self.xy = mesh.vertex_coords()
        self.tri = mesh.triangles()
        self.nbr = mesh.cell_neighbors()
        p = self.xy[self.tri]
        self._tri_xy = p.reshape(-1, 6).tolist()
        self._nbr = self.nbr.tolist()
        self._det = ((p[:, 1, 0] - p[:, 0, 0]) * (p[:, 2, 1] - p[:, 0, 1])
                     - (p[:, 1, 1] - p[:, 0, 1]) * (p[:, 2, 0] - p[:, 0, 0])).tolist()
        self._tree = None
        self._vertex_cell = None
        self.stats = {"walk_steps": 0, "fallbacks": 0, "snaps": 0}

    def _bary(self, c: int, x: float, y: float):
        x0, y0, x1, y1, x2, y2 = self._tri_xy[c]
        det = self._det[c]
        l0 = ((x1 - x) * (y2 - y) - (y1 - y) * (x2 - x)) / det
        l1 = ((x2 - x) * (y0 - y) - (y2 - y) * (x0 - x)) / det
        return l0, l1, 1.0 - l0 - l1

    def nearest_vertex_cells(self, pts) -> np.ndarray:
        """A cell incident to the nearest mesh vertex of each point (walk hints)."""
        if self._tree is None:
            self._tree = cKDTree(self.xy)
            vc = np.empty(len(self.xy), dtype=np.int64)
            vc[self.tri.ravel()] = np.repeat(np.arange(len(self.tri)), 3)
            self._vertex_cell = vc
        _, idx = self._tree.query(np.asarray(pts, dtype=float).reshape(-1, 2))
        return self._vertex_cell[idx]

    def locate(self, point, hint: int | None = None):
        """Return ``(cell_index, barycentric)`` for ``point``.

        Walks from ``hint`` toward the neighbour opposite the most negative
        barycentric coordinate; falls back to an exhaustive scan on cycles,
        walks longer than twice the cell count, or when the walk leaves the mesh.
        """
        x, y = float(point[0]), float(point[1])
        ncell = len(self._tri_xy)
        c = 0 if hint is None or not (0 <= hint < ncell) else int(hint)
        visited = set()
        for _ in range(2 * ncell + 1):
            lam = self._bary(c, x, y)
            k = min(range(3), key=lam.__getitem__)
            if lam[k] >= -BARY_TOL:
                self.stats["walk_steps"] += len(visited)
                return c, _clip(lam)
            visited.add(c)
            n = self._nbr[c][k]
            if n < 0 or n in visited:
                break
            c = n
        self.stats["fallbacks"] += 1
        return self.locate_scan(point)

    def locate_scan(self, point):
        """Exhaustive search; snaps points within ``SNAP_TOL`` of the boundary."""
        c, lam = self._scan(point)
        if lam.min() >= -BARY_TOL:
            return c, _clip(lam)
        snapped, dist = self._snap_to_boundary(point)
        if dist <= SNAP_TOL:
            self.stats["snaps"] += 1
            c, lam = self._scan(snapped)
            if lam.min() >= -1e-6:
                return c, _clip(lam)
        raise TransferError(
            f"point ({point[0]:.17g}, {point[1]:.17g}) lies outside the mesh (distance {dist:.3g})")

    def _scan(self, point):
        p = self.xy[self.tri]
        x, y = float(point[0]), float(point[1])
        det = np.asarray(self._det)
        l0 = ((p[:, 1, 0] - x) * (p[:, 2, 1] - y) - (p[:, 1, 1] - y) * (p[:, 2, 0] - x)) / det
        l1 = ((p[:, 2, 0] - x) * (p[:, 0, 1] - y) - (p[:, 2, 1] - y) * (p[:, 0, 0] - x)) / det
        lam = np.column_stack([l0, l1, 1.0 - l0 - l1])
        c = int(np.argmax(lam.min(axis=1)))
        return c, lam[c]

    def _snap_to_boundary(self, point):
        edges, _ = self.mesh.boundary_facets()
        a, b = self.xy[edges[:, 0]], self.xy[edges[:, 1]]
        d = b - a
        p = np.asarray(point, dtype=float)
        t = np.clip(np.einsum("ij,ij->i", p - a, d) / np.einsum("ij,ij->i", d, d), 0.0, 1.0)
        q = a + t[:, None] * d
        dist = np.hypot(*(q - p).T)
        i = int(np.argmin(dist))
        return q[i], float(dist[i])


def _clip(lam) -> np.ndarray:
    lam = np.maximum(np.asarray(lam, dtype=float), 0.0)
    return lam / lam.sum()


def locate_point(mesh: Mesh, x, hint: int | None = None):
    """Locate ``x``; returns the containing cell's point id and its barycentric coordinates.

    ``hint`` is a cell point id.
    """
    loc = PointLocator(mesh)
    cids = mesh.cell_ids()
    h = None
    if hint is not None:
        pos = np.searchsorted(cids, hint)
        if pos < len(cids) and cids[pos] == hint:
            h = int(pos)
    c, lam = loc.locate(x, h)
    return int(cids[c]), lam


def interpolate_values(values, mesh_old: Mesh, points, locator: PointLocator | None = None) -> np.ndarray:
    """Evaluate P1 nodal ``values`` of ``mesh_old`` at ``points`` (any trailing shape)."""
    loc = locator or PointLocator(mesh_old)
    pts = np.asarray(points, dtype=float).reshape(-1, 2)
    values = np.asarray(values, dtype=float)
    hints = loc.nearest_vertex_cells(pts) if len(pts) else []
    cells = np.empty(len(pts), dtype=np.int64)
    lams = np.empty((len(pts), 3))
    for i, (p, h) in enumerate(zip(pts, hints)):
        cells[i], lams[i] = loc.locate(p, int(h))
    nodal = values[loc.tri[cells]]
    return np.einsum("nk,nk...->n...", lams, nodal)


def interpolate_field(u_old: NodalField, mesh_old: Mesh, mesh_new: Mesh) -> NodalField:
    """Transfer a P1 field to ``mesh_new`` by point evaluation at its vertices."""
    u_old.check_bound(mesh_old)
    if mesh_new is mesh_old:
        return u_old.copy()
    vals = interpolate_values(u_old.values, mesh_old, mesh_new.vertex_coords())
    return NodalField(mesh_new, vals, u_old.kind)
