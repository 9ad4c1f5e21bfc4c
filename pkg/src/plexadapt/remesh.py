"""Local anisotropic remeshing toward a unit mesh of a Riemannian metric.

The remesher works on a private copy of the input mesh and repeats sweeps of
edge splitting, edge collapsing, edge swapping and quality-constrained
smoothing until a sweep changes no topology.  The metric is frozen: split
vertices take the mean of their edge's end metrics, and smoothed vertices
re-sample the metric of the input mesh.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np

from .fields import FieldError, NodalField, metric_edge_lengths, sym_det, sym_eig
from .mesh import CELL, CORNER_TAG, EDGE, VERTEX, Mesh, MeshError, compact, signed_area, validate
from .transfer import PointLocator

__all__ = ["AdaptOptions", "AdaptResult", "Remesher", "quality", "cell_qualities", "edge_lengths", "unit_edge_fraction", "adapt"]

log = logging.getLogger(__name__)

SQRT2 = math.sqrt(2.0)
_Q_SCALE = 4.0 * math.sqrt(3.0)
_SWAP_HYSTERESIS = 1e-12
# cells thinner than this (area relative to squared perimeter) count as inverted
_AREA_TOL = 1e-12
# relative slack on length thresholds so that edges of exactly l_split survive rounding
_LEN_TOL = 1e-9


@dataclass
class AdaptOptions:
    l_split: float = SQRT2
    l_collapse: float = 1.0 / SQRT2
    q_min_accept: float = 0.1
    max_sweeps: int = 20
    smooth_iters: int = 2

    def __post_init__(self):
        if not (0 < self.l_collapse < 1 < self.l_split):
            raise ValueError("need 0 < l_collapse < 1 < l_split")
        if not (0 < self.q_min_accept <= 1):
            raise ValueError("q_min_accept must lie in (0, 1]")
        if self.max_sweeps < 1 or self.smooth_iters < 0:
            raise ValueError("max_sweeps >= 1 and smooth_iters >= 0 required")


@dataclass
class AdaptResult:
    """Output of :func:`adapt`.

    ``point_map`` maps point ids of the input mesh to ids of the new mesh
    (``-1`` for removed points); ``vertex_origin[i]`` is the input vertex a new
    vertex ``i`` came from, or ``-1`` if it was created by a split.
    """

    mesh: Mesh
    metric: NodalField
    point_map: np.ndarray
    vertex_origin: np.ndarray
    stats: dict = field(default_factory=dict)


def _tri_quality(ax, ay, bx, by, cx, cy, ma, mb, mc) -> float:
    """Metric quality of triangle abc; negative when inverted, 0 when degenerate."""
    area = 0.5 * ((bx - ax) * (cy - ay) - (by - ay) * (cx - ax))
    ex, ey = bx - ax, by - ay
    fx, fy = cx - bx, cy - by
    gx, gy = ax - cx, ay - cy
    l1 = (0.5 * (ma[0] + mb[0]) * ex * ex + (ma[1] + mb[1]) * ex * ey + 0.5 * (ma[2] + mb[2]) * ey * ey)
    l2 = (0.5 * (mb[0] + mc[0]) * fx * fx + (mb[1] + mc[1]) * fx * fy + 0.5 * (mb[2] + mc[2]) * fy * fy)
    l3 = (0.5 * (mc[0] + ma[0]) * gx * gx + (mc[1] + ma[1]) * gx * gy + 0.5 * (mc[2] + ma[2]) * gy * gy)
    perim2 = ex * ex + ey * ey + fx * fx + fy * fy + gx * gx + gy * gy
    if area <= _AREA_TOL * perim2:
        return -1.0 if area < 0 else 0.0
    m11 = (ma[0] + mb[0] + mc[0]) / 3.0
    m12 = (ma[1] + mb[1] + mc[1]) / 3.0
    m22 = (ma[2] + mb[2] + mc[2]) / 3.0
    det = m11 * m22 - m12 * m12
    return _Q_SCALE * math.sqrt(max(det, 0.0)) * area / (l1 + l2 + l3)


def quality(mesh: Mesh, cell: int, M: NodalField) -> float:
    """Metric quality ``4 sqrt(3) A_M / sum l_M^2`` of a cell; 1 for a metric-equilateral cell."""
    M.check_bound(mesh)
    if not mesh.is_active(cell) or mesh.kind(cell) != CELL:
        raise MeshError(f"point {cell} is not an active cell")
    idx = mesh.vertex_index()
    verts = mesh.cell_vertices(cell)
    (ax, ay), (bx, by), (cx, cy) = (mesh.coords(v) for v in verts)
    q = _tri_quality(ax, ay, bx, by, cx, cy, *(M.values[idx[v]] for v in verts))
    if q <= 0:
        raise MeshError(f"cell {cell} is inverted")
    return q


def cell_qualities(mesh: Mesh, M: NodalField) -> np.ndarray:
    M.check_bound(mesh)
    xy, tri, m = mesh.vertex_coords(), mesh.triangles(), M.values
    p = xy[tri]
    area = 0.5 * ((p[:, 1, 0] - p[:, 0, 0]) * (p[:, 2, 1] - p[:, 0, 1])
                  - (p[:, 1, 1] - p[:, 0, 1]) * (p[:, 2, 0] - p[:, 0, 0]))
    mbar = m[tri].mean(axis=1)
    total = np.zeros(len(tri))
    for k in range(3):
        i, j = tri[:, k], tri[:, (k + 1) % 3]
        total += metric_edge_lengths(xy, np.column_stack([i, j]), m) ** 2
    return _Q_SCALE * np.sqrt(np.maximum(sym_det(mbar), 0.0)) * area / total


def edge_lengths(mesh: Mesh, M: NodalField) -> np.ndarray:
    """Metric length of every active edge, in edge-id order."""
    M.check_bound(mesh)
    return metric_edge_lengths(mesh.vertex_coords(), mesh.edges_array(), M.values)


def unit_edge_fraction(L, lo: float = 1.0 / SQRT2, hi: float = SQRT2) -> float:
    """Fraction of metric lengths in ``[lo, hi]``, with the remesher's rounding slack at both ends."""
    L = np.asarray(L, dtype=float)
    if not len(L):
        return 0.0
    return float(np.mean((L >= lo * (1 - _LEN_TOL)) & (L <= hi * (1 + _LEN_TOL))))


def _check_spd(values) -> None:
    l1, l2, _ = sym_eig(values)
    if not np.all(np.isfinite(values)) or np.any(l2 <= 0):
        bad = int(np.argmin(np.where(np.isfinite(l2), l2, -np.inf)))
        raise FieldError(f"metric at vertex {bad} is not SPD")


class Remesher:
    """Mutable remeshing state: a working mesh plus its per-vertex metric.

    The input mesh and metric are copied; the copy of the input also serves as
    the background on which moved vertices re-sample the metric.
    """

    def __init__(self, mesh: Mesh, metric: NodalField, opts: AdaptOptions | None = None):
        metric.check_bound(mesh)
        if metric.kind != "tensor":
            raise FieldError("metric must be a tensor field")
        _check_spd(metric.values)
        self.opts = opts or AdaptOptions()
        self.mesh = mesh.copy()
        self._bg = PointLocator(mesh)
        self._bg_values = metric.values.copy()
        self._input_points = mesh.num_points
        self.met: list = [None] * self.mesh.num_points
        self._hint: list = [None] * self.mesh.num_points
        vids = mesh.vertex_ids()
        first_cell = np.empty(mesh.num_vertices, dtype=np.int64)
        first_cell[mesh.triangles()[::-1].ravel()] = np.repeat(np.arange(mesh.num_cells)[::-1], 3)
        for i, v in enumerate(vids.tolist()):
            self.met[v] = tuple(metric.values[i].tolist())
            self._hint[v] = int(first_cell[i])
        self.stats = {"split": 0, "collapse": 0, "swap": 0, "smooth": 0, "rejected": 0, "sweeps": 0}
        # vertices whose star changed, in order; swap and smooth passes revisit only
        # the neighbourhood of entries logged since their previous run
        self._touched: list = []
        self._marks = {"swap": None, "smooth": None}

    # -- helpers -----------------------------------------------------------
    def _grow(self) -> None:
        n = self.mesh.num_points - len(self.met)
        if n > 0:
            self.met.extend([None] * n)
            self._hint.extend([None] * n)

    def _q(self, a, b, c, pos=None, mv=None) -> float:
        """Quality of (a, b, c); ``pos``/``mv`` override coordinates/metric of some vertices."""
        co, met = self.mesh._coords, self.met
        pa = pos.get(a) if pos and a in pos else co[a]
        pb = pos.get(b) if pos and b in pos else co[b]
        pc = pos.get(c) if pos and c in pos else co[c]
        ma = mv.get(a) if mv and a in mv else met[a]
        mb = mv.get(b) if mv and b in mv else met[b]
        mc = mv.get(c) if mv and c in mv else met[c]
        return _tri_quality(pa[0], pa[1], pb[0], pb[1], pc[0], pc[1], ma, mb, mc)

    def cell_quality(self, c: int) -> float:
        return self._q(*self.mesh._cell_verts[c])

    def edge_length(self, e: int) -> float:
        a, b = self.mesh._cone[e]
        return self._length(a, b)

    def _length(self, a, b, pa=None, ma=None) -> float:
        co, met = self.mesh._coords, self.met
        pa = pa or co[a]
        ma = ma or met[a]
        pb, mb = co[b], met[b]
        ex, ey = pb[0] - pa[0], pb[1] - pa[1]
        q = 0.5 * ((ma[0] + mb[0]) * ex * ex + 2.0 * (ma[1] + mb[1]) * ex * ey + (ma[2] + mb[2]) * ey * ey)
        return math.sqrt(max(q, 0.0))

    def _accept(self, new_min: float, old_min: float) -> bool:
        return new_min > 0 and (new_min >= self.opts.q_min_accept or new_min > old_min)

    def _sample_metric(self, v: int, xy) -> tuple:
        c, lam = self._bg.locate(xy, self._hint[v])
        tri = self._bg.tri[c]
        val = lam[0] * self._bg_values[tri[0]] + lam[1] * self._bg_values[tri[1]] + lam[2] * self._bg_values[tri[2]]
        return tuple(val.tolist()), c

    @staticmethod
    def _rotate_to_edge(verts, a, b):
        """Return (u, w, o): the cell's CCW vertices with edge {a, b} as u->w."""
        for k in range(3):
            u, w = verts[k], verts[(k + 1) % 3]
            if (u == a and w == b) or (u == b and w == a):
                return u, w, verts[(k + 2) % 3]
        raise MeshError("edge not in cell")

    def _check_edge(self, e: int) -> None:
        m = self.mesh
        if not m.is_active(e) or m._kind[e] != EDGE:
            raise MeshError(f"point {e} is not an active edge")

    # -- refinement ------------------------------------------------------------
    def split_edge(self, e: int) -> int | None:
        """Split ``e`` at its Euclidean midpoint; returns the new vertex or ``None`` if rejected."""
        self._check_edge(e)
        m = self.mesh
        a, b = m._cone[e]
        pa, pb = m._coords[a], m._coords[b]
        mid = (0.5 * (pa[0] + pb[0]), 0.5 * (pa[1] + pb[1]))
        ma, mb = self.met[a], self.met[b]
        mm = (0.5 * (ma[0] + mb[0]), 0.5 * (ma[1] + mb[1]), 0.5 * (ma[2] + mb[2]))
        cells = list(m._support[e])
        NEW = -1
        pos, mv = {NEW: mid}, {NEW: mm}
        children = []
        old_min = 2.0
        for c in cells:
            u, w, o = self._rotate_to_edge(m._cell_verts[c], a, b)
            children.append((u, NEW, o))
            children.append((NEW, w, o))
            old_min = min(old_min, self._q(u, w, o))
        new_min = min(self._q(*ch, pos=pos, mv=mv) for ch in children)
        # the quality gate applies once the neighbourhood is acceptable; a midpoint split
        # of a cell that is too coarse for the metric cannot raise its quality
        if new_min <= 0 or (old_min >= self.opts.q_min_accept and not self._accept(new_min, old_min)):
            self.stats["rejected"] += 1
            return None
        tag = m._tag[e]
        for c in cells:
            m.remove_point(c)
        m.remove_point(e)
        v = m.add_vertex(mid, tag)
        m.add_edge(a, v, tag)
        m.add_edge(v, b, tag)
        for ch in children:
            m.add_cell(*(v if x == NEW else x for x in ch))
        self._grow()
        self.met[v] = mm
        self._hint[v] = self._hint[a]
        self._touched.extend(x for ch in children for x in ch if x != NEW)
        self._touched.append(v)
        self.stats["split"] += 1
        return v

    # -- coarsening -------------------------------------------------------------
    def _collapse_plan(self, e: int, v: int, w: int):
        """Evaluate removing ``v`` onto ``w``; returns (new_min_quality, plan) or None."""
        m = self.mesh
        tag_v = m._tag[v]
        if tag_v == CORNER_TAG:
            return None
        bnd_edge = len(m._support[e]) == 1
        if tag_v != 0 and (not bnd_edge or m._tag[w] == 0):
            return None
        removed = m._support[e]
        opp = set()
        for c in removed:
            opp.add(self._rotate_to_edge(m._cell_verts[c], v, w)[2])
        nv = set(m.vertex_neighbors(v))
        nw = set(m.vertex_neighbors(w))
        if (nv & nw) != opp:
            return None
        lsplit = self.opts.l_split
        for x in nv - opp - {w}:
            if self._length(x, w, None, None) > lsplit * (1 + _LEN_TOL):
                return None
        cells_v = m.vertex_cells(v)
        old_min = 2.0
        new_cells = []
        new_min = 2.0
        for c in cells_v:
            verts = m._cell_verts[c]
            old_min = min(old_min, self._q(*verts))
            if c in removed:
                continue
            nc = tuple(w if x == v else x for x in verts)
            q = self._q(*nc)
            if q <= 0:
                return None
            new_min = min(new_min, q)
            new_cells.append(nc)
        if not new_cells or not self._accept(new_min, old_min):
            return None
        return new_min, (v, w, cells_v, new_cells, nv - opp - {w})

    def collapse_edge(self, e: int) -> bool:
        """Collapse ``e`` by removing one endpoint; returns False if every option is rejected."""
        self._check_edge(e)
        a, b = self.mesh._cone[e]
        best = None
        for v, w in ((a, b), (b, a)):
            plan = self._collapse_plan(e, v, w)
            if plan is not None and (best is None or plan[0] > best[0]):
                best = plan
        if best is None:
            self.stats["rejected"] += 1
            return False
        v, w, cells_v, new_cells, relink = best[1]
        m = self.mesh
        tags = {x: m._tag[m.edge_between(v, x)] for x in relink}
        for c in cells_v:
            m.remove_point(c)
        for ev in list(m._support[v]):
            m.remove_point(ev)
        m.remove_point(v)
        for x in sorted(relink):
            m.add_edge(w, x, tags[x])
        for nc in new_cells:
            m.add_cell(*nc)
        self._grow()
        self._touched.extend(x for nc in new_cells for x in nc)
        self.stats["collapse"] += 1
        return True

    # -- swapping -------------------------------------------------------------
    def swap_edge(self, e: int) -> bool:
        """Flip the diagonal of the quad around interior edge ``e`` if min quality strictly improves.

        Flips that would create a new diagonal longer than ``l_split`` (and
        longer than the current one) are refused.
        """
        self._check_edge(e)
        m = self.mesh
        cells = m._support[e]
        if len(cells) != 2:
            raise MeshError(f"edge {e} is a boundary edge and cannot be swapped")
        a, b = m._cone[e]
        u, w, o1 = self._rotate_to_edge(m._cell_verts[cells[0]], a, b)
        o2 = self._rotate_to_edge(m._cell_verts[cells[1]], a, b)[2]
        if m.edge_between(o1, o2) is not None:
            return False
        # never create a diagonal the next split pass would cut again (split/collapse/swap cycles)
        new_len = self._length(o1, o2)
        if new_len > self.opts.l_split * (1 + _LEN_TOL) and new_len > self._length(a, b):
            return False
        q_old = min(self._q(u, w, o1), self._q(w, u, o2))
        q1 = self._q(u, o2, o1)
        if q1 <= q_old + _SWAP_HYSTERESIS:
            return False
        q2 = self._q(o2, w, o1)
        if min(q1, q2) <= q_old + _SWAP_HYSTERESIS:
            return False
        c0, c1 = cells
        m.remove_point(c0)
        m.remove_point(c1)
        m.remove_point(e)
        m.add_edge(o1, o2, 0)
        m.add_cell(u, o2, o1)
        m.add_cell(o2, w, o1)
        self._grow()
        self._touched.extend((u, w, o1, o2))
        self.stats["swap"] += 1
        return True

    # -- smoothing -------------------------------------------------------------
    def smooth_vertex(self, v: int) -> bool:
        """Move ``v`` toward the metric-weighted centroid of its neighbours if quality allows."""
        m = self.mesh
        if not m.is_active(v) or m._kind[v] != VERTEX:
            raise MeshError(f"point {v} is not an active vertex")
        tag = m._tag[v]
        if tag == CORNER_TAG:
            return False
        sx = sy = sw = 0.0
        bnd = []
        for ev in m._support[v]:
            x = m.other_vertex(ev, v)
            mx = self.met[x]
            wgt = math.sqrt(max(mx[0] * mx[2] - mx[1] * mx[1], 0.0))
            px = m._coords[x]
            sx += wgt * px[0]
            sy += wgt * px[1]
            sw += wgt
            if tag != 0 and len(m._support[ev]) == 1:
                bnd.append(px)
        if sw <= 0:
            return False
        target = (sx / sw, sy / sw)
        if tag != 0:
            if len(bnd) != 2:
                return False
            (ax, ay), (bx, by) = bnd
            dx, dy = bx - ax, by - ay
            t = ((target[0] - ax) * dx + (target[1] - ay) * dy) / (dx * dx + dy * dy)
            t = min(max(t, 0.05), 0.95)
            target = (ax + t * dx, ay + t * dy)
        cur = m._coords[v]
        if abs(target[0] - cur[0]) + abs(target[1] - cur[1]) <= 1e-14 * (abs(cur[0]) + abs(cur[1]) + 1.0):
            return False
        cells = m.vertex_cells(v)
        # reject folds before sampling: the metric lookup needs the target inside the mesh
        for c in cells:
            pts = [target if w == v else m._coords[w] for w in m._cell_verts[c]]
            if signed_area(*pts) <= 0:
                return False
        mv_new, hint = self._sample_metric(v, target)
        old_min = 2.0
        new_min = 2.0
        pos, mv = {v: target}, {v: mv_new}
        for c in cells:
            verts = m._cell_verts[c]
            old_min = min(old_min, self._q(*verts))
            q = self._q(*verts, pos=pos, mv=mv)
            if q <= 0:
                return False
            new_min = min(new_min, q)
        if new_min < old_min:
            return False
        m.move_vertex(v, target)
        self.met[v] = mv_new
        self._hint[v] = hint
        self._touched.append(v)
        self.stats["smooth"] += 1
        return True

    # -- sweeps ----------------------------------------------------------------
    def _active_edges_and_lengths(self):
        m = self.mesh
        eids = m.points(EDGE)
        if not eids:
            return eids, np.zeros(0)
        co, met = m._coords, self.met
        ends = [m._cone[e] for e in eids]
        pa = np.array([co[a] for a, _ in ends])
        pb = np.array([co[b] for _, b in ends])
        ma = np.array([met[a] for a, _ in ends])
        mb = np.array([met[b] for _, b in ends])
        d = pb - pa
        mm = 0.5 * (ma + mb)
        q = mm[:, 0] * d[:, 0] ** 2 + 2 * mm[:, 1] * d[:, 0] * d[:, 1] + mm[:, 2] * d[:, 1] ** 2
        return eids, np.sqrt(np.maximum(q, 0.0))

    def split_pass(self) -> int:
        eids, L = self._active_edges_and_lengths()
        lim = self.opts.l_split * (1 + _LEN_TOL)
        order = sorted((-L[i], e) for i, e in enumerate(eids) if L[i] > lim)
        n = 0
        for _, e in order:
            if self.mesh.is_active(e) and self.split_edge(e) is not None:
                n += 1
        return n

    def collapse_pass(self) -> int:
        eids, L = self._active_edges_and_lengths()
        order = sorted((L[i], e) for i, e in enumerate(eids) if L[i] < self.opts.l_collapse)
        n = 0
        for _, e in order:
            if self.mesh.is_active(e) and self.edge_length(e) < self.opts.l_collapse:
                n += self.collapse_edge(e)
        return n

    def _dirty_cells(self, name: str):
        """Active cells around vertices touched since the previous ``name`` pass; None means all."""
        start = self._marks[name]
        self._marks[name] = len(self._touched)
        if start is None:
            return None
        m = self.mesh
        cells = set()
        for v in set(self._touched[start:]):
            if m._active[v]:
                cells.update(m.vertex_cells(v))
        return cells

    def swap_pass(self) -> int:
        m = self.mesh
        cells = self._dirty_cells("swap")
        if cells is None:
            edges = m.points(EDGE)
        else:
            edges = sorted({e for c in cells for e in m._cone[c]})
        n = 0
        for e in edges:
            if m.is_active(e) and len(m._support[e]) == 2:
                n += self.swap_edge(e)
        return n

    def smooth_pass(self) -> int:
        m = self.mesh
        cells = self._dirty_cells("smooth")
        if cells is None:
            verts = m.points(VERTEX)
        else:
            verts = sorted({x for c in cells for x in m._cell_verts[c]})
        n = 0
        for v in verts:
            if m._active[v]:
                n += self.smooth_vertex(v)
        return n

    def sweep(self) -> int:
        """One split/collapse/swap/smooth sweep; returns the number of topological changes."""
        ns = self.split_pass()
        nc = self.collapse_pass()
        nw = self.swap_pass()
        for _ in range(self.opts.smooth_iters):
            self.smooth_pass()
        self.stats["sweeps"] += 1
        log.debug("sweep %d: %d splits, %d collapses, %d swaps, V=%d",
                  self.stats["sweeps"], ns, nc, nw, self.mesh.num_vertices)
        return ns + nc + nw

    def run(self, check: bool = False) -> "Remesher":
        for _ in range(self.opts.max_sweeps):
            changed = self.sweep()
            if check:
                rep = validate(self.mesh)
                if not rep.ok:
                    raise MeshError(f"remeshing produced an invalid mesh:\n{rep}")
            if changed == 0:
                break
        return self

    def result(self) -> AdaptResult:
        new, o2n = compact(self.mesh)
        vids = new.vertex_ids()
        n2o = np.full(new.num_points, -1, dtype=np.int64)
        n2o[o2n[o2n >= 0]] = np.flatnonzero(o2n >= 0)
        old_vertices = n2o[vids]
        metric = NodalField(new, np.array([self.met[v] for v in old_vertices.tolist()]).reshape(-1, 3), "tensor")
        origin = np.where(old_vertices < self._input_points, old_vertices, -1)
        return AdaptResult(new, metric, o2n[: self._input_points].copy(), origin, dict(self.stats))


def adapt(mesh: Mesh, M: NodalField, opts: AdaptOptions | None = None, check: bool = False) -> AdaptResult:
    """Produce a near-unit mesh for metric ``M``; the input mesh is left untouched."""
    rep = validate(mesh)
    if not rep.ok:
        raise MeshError(f"invalid input mesh:\n{rep}")
    r = Remesher(mesh, M, opts).run(check=check)
    res = r.result()
    rep = validate(res.mesh)
    if not rep.ok:
        raise MeshError(f"remeshing produced an invalid mesh:\n{rep}")
    return res
