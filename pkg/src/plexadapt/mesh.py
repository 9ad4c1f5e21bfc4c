"""Plex-style triangle mesh: vertices, edges and cells share one point numbering.

Every entity of the mesh is a *point* of a directed acyclic graph.  A cell
covers its three edges, an edge covers its two vertices.  ``cone(p)`` lists the
points covered by ``p`` and ``support(p)`` the points covering it.  Points
removed by local remeshing operations are tombstoned (marked inactive) and only
dropped when :func:`compact` renumbers the mesh.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "VERTEX",
    "EDGE",
    "CELL",
    "CORNER_TAG",
    "MeshError",
    "Mesh",
    "ValidationReport",
    "build_from_cells",
    "unit_square_mesh",
    "cone",
    "support",
    "closure",
    "star",
    "validate",
    "compact",
]

VERTEX, EDGE, CELL = 0, 1, 2
STRATUM_NAMES = ("vertex", "edge", "cell")

#: Boundary tag reserved for corner vertices; these are never moved or removed.
CORNER_TAG = -1

# relative tolerance used for collinearity when detecting corners
_COLLINEAR_TOL = 1e-10


class MeshError(ValueError):
    """Raised for invalid mesh input or an illegal topological query."""


def signed_area(a, b, c) -> float:
    return 0.5 * ((b[0] - a[0]) * (c[1] - a[1]) - (b[1] - a[1]) * (c[0] - a[0]))


class Mesh:
    """Mutable 2D triangle mesh stored as an interpolated plex.

    Points are numbered globally.  A freshly built or compacted mesh numbers
    vertices first, then edges, then cells, so that vertex point ids coincide
    with vertex indices.  Points appended by mutations go at the end.
    """

    def __init__(self):
        self._kind: list[int] = []
        self._cone: list[tuple] = []
        self._support: list[list[int]] = []
        self._active: list[bool] = []
        self._coords: list = []
        self._tag: list[int] = []
        self._cell_verts: list = []
        self._edge_index: dict[tuple[int, int], int] = {}
        self._counts = [0, 0, 0]
        self.generation = 0
        self._cache: dict = {}

    # -- basic queries -------------------------------------------------
    @property
    def num_points(self) -> int:
        """Size of the point numbering, tombstones included."""
        return len(self._kind)

    @property
    def num_vertices(self) -> int:
        return self._counts[VERTEX]

    @property
    def num_edges(self) -> int:
        return self._counts[EDGE]

    @property
    def num_cells(self) -> int:
        return self._counts[CELL]

    def euler_characteristic(self) -> int:
        return self.num_vertices - self.num_edges + self.num_cells

    def kind(self, p: int) -> int:
        self._check_point(p)
        return self._kind[p]

    def is_active(self, p: int) -> bool:
        return 0 <= p < len(self._kind) and self._active[p]

    def _check_point(self, p: int) -> None:
        if not (0 <= p < len(self._kind)):
            raise MeshError(f"point {p} out of range [0, {len(self._kind)})")
        if not self._active[p]:
            raise MeshError(f"point {p} is inactive")

    def points(self, kind: int | None = None) -> list[int]:
        """Active points in ascending id order, optionally restricted to a stratum."""
        if kind is None:
            return [p for p, a in enumerate(self._active) if a]
        return [p for p, (k, a) in enumerate(zip(self._kind, self._active)) if a and k == kind]

    def coords(self, v: int) -> tuple[float, float]:
        return self._coords[v]

    def tag(self, p: int) -> int:
        return self._tag[p]

    def is_boundary_edge(self, e: int) -> bool:
        return len(self._support[e]) == 1

    def edge_between(self, a: int, b: int) -> int | None:
        return self._edge_index.get((a, b) if a < b else (b, a))

    def cell_vertices(self, c: int) -> tuple[int, int, int]:
        """Vertices of cell ``c`` in counter-clockwise order."""
        return self._cell_verts[c]

    def edge_vertices(self, e: int) -> tuple[int, int]:
        return self._cone[e]

    def other_vertex(self, e: int, v: int) -> int:
        a, b = self._cone[e]
        return b if a == v else a

    def vertex_cells(self, v: int) -> list[int]:
        cells = set()
        for e in self._support[v]:
            cells.update(self._support[e])
        return sorted(cells)

    def vertex_neighbors(self, v: int) -> list[int]:
        out = []
        for e in self._support[v]:
            a, b = self._cone[e]
            out.append(b if a == v else a)
        return out

    # -- mutation hooks (used by the remesher) ---------------------------
    def _new_point(self, kind, cone_, tag=0, xy=None, verts=None) -> int:
        p = len(self._kind)
        self._kind.append(kind)
        self._cone.append(tuple(cone_))
        self._support.append([])
        self._active.append(True)
        self._coords.append(xy)
        self._tag.append(tag)
        self._cell_verts.append(verts)
        for q in cone_:
            self._support[q].append(p)
        self._counts[kind] += 1
        self._touch()
        return p

    def _touch(self) -> None:
        self.generation += 1
        if self._cache:
            self._cache.clear()

    def add_vertex(self, xy, tag: int = 0) -> int:
        return self._new_point(VERTEX, (), tag, (float(xy[0]), float(xy[1])))

    def add_edge(self, a: int, b: int, tag: int = 0) -> int:
        key = (a, b) if a < b else (b, a)
        if key in self._edge_index:
            raise MeshError(f"edge {key} already exists")
        e = self._new_point(EDGE, key, tag)
        self._edge_index[key] = e
        return e

    def add_cell(self, a: int, b: int, c: int) -> int:
        """Add cell ``(a, b, c)`` (counter-clockwise), creating missing edges with tag 0."""
        edges = []
        for u, w in ((a, b), (b, c), (c, a)):
            e = self.edge_between(u, w)
            if e is None:
                e = self.add_edge(u, w)
            elif len(self._support[e]) >= 2:
                raise MeshError(f"edge {e} would get a third cell")
            edges.append(e)
        return self._new_point(CELL, edges, 0, None, (a, b, c))

    def remove_point(self, p: int) -> None:
        """Tombstone ``p``; it must not be covered by any active point."""
        self._check_point(p)
        if self._support[p]:
            raise MeshError(f"point {p} still covered by {self._support[p]}")
        for q in self._cone[p]:
            self._support[q].remove(p)
        if self._kind[p] == EDGE:
            del self._edge_index[self._cone[p]]
        self._active[p] = False
        self._counts[self._kind[p]] -= 1
        self._touch()

    def move_vertex(self, v: int, xy) -> None:
        self._coords[v] = (float(xy[0]), float(xy[1]))
        self._touch()

    def set_tag(self, p: int, tag: int) -> None:
        self._tag[p] = tag
        self._touch()

    def copy(self) -> "Mesh":
        m = Mesh()
        m._kind = list(self._kind)
        m._cone = list(self._cone)
        m._support = [list(s) for s in self._support]
        m._active = list(self._active)
        m._coords = list(self._coords)
        m._tag = list(self._tag)
        m._cell_verts = list(self._cell_verts)
        m._edge_index = dict(self._edge_index)
        m._counts = list(self._counts)
        return m

    # -- array views (cached per generation) ----------------------------
    def vertex_ids(self) -> np.ndarray:
        if "vids" not in self._cache:
            self._cache["vids"] = np.array(self.points(VERTEX), dtype=np.int64)
        return self._cache["vids"]

    def cell_ids(self) -> np.ndarray:
        if "cids" not in self._cache:
            self._cache["cids"] = np.array(self.points(CELL), dtype=np.int64)
        return self._cache["cids"]

    def edge_ids(self) -> np.ndarray:
        if "eids" not in self._cache:
            self._cache["eids"] = np.array(self.points(EDGE), dtype=np.int64)
        return self._cache["eids"]

    def vertex_index(self) -> np.ndarray:
        """Map from point id to position among active vertices (-1 elsewhere)."""
        if "vindex" not in self._cache:
            idx = np.full(self.num_points, -1, dtype=np.int64)
            vids = self.vertex_ids()
            idx[vids] = np.arange(len(vids))
            self._cache["vindex"] = idx
        return self._cache["vindex"]

    def vertex_coords(self) -> np.ndarray:
        """``(num_vertices, 2)`` coordinates in vertex-index order."""
        if "xy" not in self._cache:
            xy = np.array([self._coords[v] for v in self.vertex_ids()], dtype=float)
            self._cache["xy"] = xy.reshape(-1, 2)
        return self._cache["xy"]

    def triangles(self) -> np.ndarray:
        """``(num_cells, 3)`` counter-clockwise vertex indices in cell-id order."""
        if "tri" not in self._cache:
            idx = self.vertex_index()
            tri = np.array([self._cell_verts[c] for c in self.cell_ids()], dtype=np.int64)
            self._cache["tri"] = idx[tri.reshape(-1, 3)]
        return self._cache["tri"]

    def edges_array(self) -> np.ndarray:
        """``(num_edges, 2)`` vertex indices in edge-id order."""
        if "edges" not in self._cache:
            idx = self.vertex_index()
            ev = np.array([self._cone[e] for e in self.edge_ids()], dtype=np.int64)
            self._cache["edges"] = idx[ev.reshape(-1, 2)]
        return self._cache["edges"]

    def boundary_edges_array(self) -> np.ndarray:
        """``(nb, 2)`` vertex indices of boundary edges."""
        if "bedges" not in self._cache:
            eids = self.edge_ids()
            mask = np.array([len(self._support[e]) == 1 for e in eids], dtype=bool)
            self._cache["bedges"] = self.edges_array()[mask]
        return self._cache["bedges"]

    def boundary_facets(self) -> tuple[np.ndarray, np.ndarray]:
        """Boundary edges oriented along their cell (domain on the left) and that cell's index.

        Returns ``(edges, cells)`` with ``edges`` an ``(nb, 2)`` vertex-index
        array and ``cells`` indices into :meth:`triangles`.
        """
        if "bfacets" not in self._cache:
            cpos = {c: i for i, c in enumerate(self.cell_ids())}
            idx = self.vertex_index()
            out, owner = [], []
            for e in self.edge_ids():
                if len(self._support[e]) != 1:
                    continue
                c = self._support[e][0]
                a, b, d = self._cell_verts[c]
                ends = set(self._cone[e])
                for u, w in ((a, b), (b, d), (d, a)):
                    if {u, w} == ends:
                        out.append((idx[u], idx[w]))
                        owner.append(cpos[c])
                        break
            self._cache["bfacets"] = (
                np.array(out, dtype=np.int64).reshape(-1, 2),
                np.array(owner, dtype=np.int64),
            )
        return self._cache["bfacets"]

    def vertex_tags(self) -> np.ndarray:
        return np.array([self._tag[v] for v in self.vertex_ids()], dtype=np.int64)

    def cell_areas(self) -> np.ndarray:
        xy = self.vertex_coords()
        t = self.triangles()
        a, b, c = xy[t[:, 0]], xy[t[:, 1]], xy[t[:, 2]]
        return 0.5 * ((b[:, 0] - a[:, 0]) * (c[:, 1] - a[:, 1]) - (b[:, 1] - a[:, 1]) * (c[:, 0] - a[:, 0]))

    def cell_neighbors(self) -> np.ndarray:
        """``(num_cells, 3)``: cell index across the edge opposite local vertex k, or -1."""
        if "nbr" not in self._cache:
            cids = self.cell_ids()
            cpos = {c: i for i, c in enumerate(cids)}
            nbr = np.full((len(cids), 3), -1, dtype=np.int64)
            for i, c in enumerate(cids):
                verts = self._cell_verts[c]
                for k in range(3):
                    e = self.edge_between(verts[(k + 1) % 3], verts[(k + 2) % 3])
                    for other in self._support[e]:
                        if other != c:
                            nbr[i, k] = cpos[other]
            self._cache["nbr"] = nbr
        return self._cache["nbr"]

    def __repr__(self) -> str:
        return f"Mesh(V={self.num_vertices}, E={self.num_edges}, C={self.num_cells})"


# ---------------------------------------------------------------------------
# construction


def build_from_cells(cells, coords, edge_tags: dict | None = None) -> Mesh:
    """Interpolate a cell-vertex list into a full vertex/edge/cell plex.

    ``edge_tags`` optionally maps unordered vertex pairs of boundary edges to
    positive tags; untagged boundary edges get tag 1.  Clockwise cells are
    flipped.  Vertex ``i`` of the input becomes point ``i``.
    """
    xy = np.asarray(coords, dtype=float)
    if xy.ndim != 2 or xy.shape[1] != 2:
        raise MeshError("coords must be an (n, 2) array")
    cells = [tuple(int(v) for v in c) for c in cells]
    if not cells:
        raise MeshError("at least one cell is required")
    nv = len(xy)
    seen = {}
    oriented = []
    scale = float(np.ptp(xy, axis=0).max()) if nv else 1.0
    area_tol = 1e-14 * max(scale, 1e-300) ** 2
    for i, c in enumerate(cells):
        if len(c) != 3:
            raise MeshError(f"cell {i} does not have 3 vertices")
        for v in c:
            if not (0 <= v < nv):
                raise MeshError(f"cell {i} references vertex {v} out of range")
        if len(set(c)) != 3:
            raise MeshError(f"degenerate cell {i}: repeated vertex {c}")
        key = tuple(sorted(c))
        if key in seen:
            raise MeshError(f"duplicate cell {i} (same vertices as cell {seen[key]})")
        seen[key] = i
        a = signed_area(xy[c[0]], xy[c[1]], xy[c[2]])
        if abs(a) <= area_tol:
            raise MeshError(f"degenerate cell {i}: zero area")
        oriented.append(c if a > 0 else (c[0], c[2], c[1]))

    edge_cells: dict[tuple[int, int], list[int]] = {}
    for i, (a, b, c) in enumerate(oriented):
        for u, w in ((a, b), (b, c), (c, a)):
            edge_cells.setdefault((u, w) if u < w else (w, u), []).append(i)
    for key, cs in edge_cells.items():
        if len(cs) > 2:
            raise MeshError(f"non-manifold edge {key} shared by cells {cs}")
    used = np.zeros(nv, dtype=bool)
    used[np.array(oriented).ravel()] = True
    if not used.all():
        raise MeshError(f"vertex {int(np.argmin(used))} is not referenced by any cell")

    mesh = Mesh()
    for p in xy:
        mesh.add_vertex(p, 0)
    edge_tags = {(min(k), max(k)): int(t) for k, t in (edge_tags or {}).items()}
    for key in sorted(edge_cells):
        tag = 0
        if len(edge_cells[key]) == 1:
            tag = edge_tags.get(key, 1) or 1
        mesh.add_edge(key[0], key[1], tag)
    for c in oriented:
        mesh.add_cell(*c)
    tag_boundary_vertices(mesh)
    mesh.generation = 0
    return mesh


def tag_boundary_vertices(mesh: Mesh) -> None:
    """Give boundary vertices the tag of their boundary segment, corners ``CORNER_TAG``.

    A corner is a boundary vertex where the two boundary edges are not
    collinear, carry different tags, or where more than two boundary edges meet.
    """
    bnd: dict[int, list[int]] = {}
    for e in mesh.points(EDGE):
        if mesh.is_boundary_edge(e):
            for v in mesh._cone[e]:
                bnd.setdefault(v, []).append(e)
    for v in mesh.points(VERTEX):
        edges = bnd.get(v)
        if not edges:
            mesh._tag[v] = 0
            continue
        if len(edges) != 2:
            mesh._tag[v] = CORNER_TAG
            continue
        e1, e2 = edges
        t1, t2 = mesh._tag[e1], mesh._tag[e2]
        a = mesh.other_vertex(e1, v)
        b = mesh.other_vertex(e2, v)
        pv, pa, pb = mesh._coords[v], mesh._coords[a], mesh._coords[b]
        ux, uy = pa[0] - pv[0], pa[1] - pv[1]
        wx, wy = pb[0] - pv[0], pb[1] - pv[1]
        cross = ux * wy - uy * wx
        norm = np.hypot(ux, uy) * np.hypot(wx, wy)
        collinear = abs(cross) <= _COLLINEAR_TOL * norm and (ux * wx + uy * wy) < 0
        mesh._tag[v] = t1 if (t1 == t2 and collinear) else CORNER_TAG
    mesh._touch()


def unit_square_mesh(n: int, m: int | None = None, x0=0.0, y0=0.0, lx=1.0, ly=1.0) -> Mesh:
    """Structured ``n x m`` grid of the rectangle split by ``/`` diagonals.

    Boundary edges are tagged 1 (bottom), 2 (right), 3 (top), 4 (left).
    """
    m = n if m is None else m
    xs = x0 + lx * np.arange(n + 1) / n
    ys = y0 + ly * np.arange(m + 1) / m
    X, Y = np.meshgrid(xs, ys)
    coords = np.column_stack([X.ravel(), Y.ravel()])

    def vid(i, j):
        return j * (n + 1) + i

    cells = []
    for j in range(m):
        for i in range(n):
            a, b, c, d = vid(i, j), vid(i + 1, j), vid(i + 1, j + 1), vid(i, j + 1)
            cells.append((a, b, c))
            cells.append((a, c, d))
    tags = {}
    for i in range(n):
        tags[(vid(i, 0), vid(i + 1, 0))] = 1
        tags[(vid(i, m), vid(i + 1, m))] = 3
    for j in range(m):
        tags[(vid(n, j), vid(n, j + 1))] = 2
        tags[(vid(0, j), vid(0, j + 1))] = 4
    return build_from_cells(cells, coords, tags)


# ---------------------------------------------------------------------------
# topology queries


def cone(mesh: Mesh, p: int) -> list[int]:
    mesh._check_point(p)
    return list(mesh._cone[p])


def support(mesh: Mesh, p: int) -> list[int]:
    mesh._check_point(p)
    return list(mesh._support[p])


def closure(mesh: Mesh, p: int) -> set[int]:
    """Transitive closure of ``cone``, including ``p``."""
    mesh._check_point(p)
    out = {p}
    stack = [p]
    while stack:
        for q in mesh._cone[stack.pop()]:
            if q not in out:
                out.add(q)
                stack.append(q)
    return out


def star(mesh: Mesh, p: int) -> set[int]:
    """Transitive closure of ``support``, including ``p``."""
    mesh._check_point(p)
    out = {p}
    stack = [p]
    while stack:
        for q in mesh._support[stack.pop()]:
            if q not in out:
                out.add(q)
                stack.append(q)
    return out


# ---------------------------------------------------------------------------
# validation and compaction


@dataclass
class ValidationReport:
    violations: list[tuple[str, tuple[int, ...]]] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not self.violations

    def __bool__(self) -> bool:
        return self.ok

    def add(self, message: str, *points: int) -> None:
        self.violations.append((message, tuple(int(p) for p in points)))

    def __str__(self) -> str:
        if self.ok:
            return "OK"
        lines = [f"{len(self.violations)} violation(s):"]
        lines += [f"  {msg} {list(pts)}" for msg, pts in self.violations[:50]]
        return "\n".join(lines)


def validate(mesh: Mesh) -> ValidationReport:
    """Check every topological and geometric invariant; violations are returned, not raised."""
    rep = ValidationReport()
    kind, cone_, sup, act = mesh._kind, mesh._cone, mesh._support, mesh._active
    counts = [0, 0, 0]
    for p in range(mesh.num_points):
        if not act[p]:
            continue
        k = kind[p]
        counts[k] += 1
        expected = (0, 2, 3)[k]
        cp = cone_[p]
        if len(cp) != expected or len(set(cp)) != expected:
            rep.add(f"{STRATUM_NAMES[k]} cone has wrong size or repeated entries", p)
        for q in cp:
            if not (0 <= q < mesh.num_points) or not act[q]:
                rep.add("cone references inactive point", p, q)
                continue
            if kind[q] != k - 1:
                rep.add("cone entry from wrong stratum", p, q)
            if p not in sup[q]:
                rep.add("cone/support transpose broken", p, q)
        for q in sup[p]:
            if not (0 <= q < mesh.num_points) or not act[q]:
                rep.add("support references inactive point", p, q)
            elif p not in cone_[q]:
                rep.add("support/cone transpose broken", p, q)
        if len(set(sup[p])) != len(sup[p]):
            rep.add("support has repeated entries", p)
        if k == EDGE:
            ns = len(sup[p])
            if ns not in (1, 2):
                rep.add(f"edge supported by {ns} cells", p)
            tag = mesh._tag[p]
            if ns == 1 and tag == 0:
                rep.add("boundary edge without tag", p)
            if ns == 2 and tag != 0:
                rep.add("interior edge carries boundary tag", p)
            if mesh._edge_index.get(tuple(sorted(cp))) != p:
                rep.add("edge index out of sync", p)
        elif k == CELL:
            verts = mesh._cell_verts[p]
            if verts is None or len(set(verts)) != 3:
                rep.add("cell vertex cache missing", p)
                continue
            ring = {tuple(sorted((verts[i], verts[(i + 1) % 3]))) for i in range(3)}
            if ring != {tuple(sorted(cone_[e])) for e in cp if 0 <= e < mesh.num_points}:
                rep.add("cell vertex cache disagrees with cone", p)
            try:
                a = signed_area(*(mesh._coords[v] for v in verts))
            except TypeError:
                rep.add("cell references vertex without coordinates", p)
                continue
            if not a > 0:
                rep.add("cell has non-positive area", p)
        elif k == VERTEX:
            if not sup[p]:
                rep.add("isolated vertex", p)
    if counts != mesh._counts:
        rep.add(f"stratum counts {mesh._counts} disagree with active points {counts}")
    if rep.ok:
        bnd_vertices = set()
        for e in mesh.points(EDGE):
            if len(sup[e]) == 1:
                bnd_vertices.update(cone_[e])
        for v in mesh.points(VERTEX):
            on_bnd = v in bnd_vertices
            if on_bnd and mesh._tag[v] == 0:
                rep.add("boundary vertex without tag", v)
            if not on_bnd and mesh._tag[v] != 0:
                rep.add("interior vertex carries boundary tag", v)
        loops = _count_boundary_loops(mesh)
        chi = mesh.euler_characteristic()
        if chi != 2 - loops:
            rep.add(f"Euler characteristic {chi} != {2 - loops} for {loops} boundary loop(s)")
        _check_tiling(mesh, rep)
    return rep


def _check_tiling(mesh: Mesh, rep: ValidationReport) -> None:
    """Positive cells must tile the region bounded by their boundary loops (no folds)."""
    cells_area = 0.0
    enclosed = 0.0
    coords = mesh._coords
    for c in mesh.points(CELL):
        verts = mesh._cell_verts[c]
        cells_area += signed_area(*(coords[v] for v in verts))
        for i in range(3):
            a, b = verts[i], verts[(i + 1) % 3]
            e = mesh._edge_index.get((a, b) if a < b else (b, a))
            if len(mesh._support[e]) == 1:
                (ax, ay), (bx, by) = coords[a], coords[b]
                enclosed += 0.5 * (ax * by - ay * bx)
    if abs(cells_area - enclosed) > 1e-9 * max(abs(enclosed), cells_area):
        rep.add(f"cells overlap: total area {cells_area:.12g} but boundary encloses {enclosed:.12g}")


def _count_boundary_loops(mesh: Mesh) -> int:
    parent = {}

    def find(x):
        while parent[x] != x:
            parent[x] = parent[parent[x]]
            x = parent[x]
        return x

    for e in mesh.points(EDGE):
        if len(mesh._support[e]) == 1:
            a, b = mesh._cone[e]
            parent.setdefault(a, a)
            parent.setdefault(b, b)
            parent[find(a)] = find(b)
    return len({find(x) for x in parent})


def compact(mesh: Mesh) -> tuple[Mesh, np.ndarray]:
    """Renumber active points contiguously per stratum (vertices, edges, cells).

    Returns the new mesh and an array mapping old point ids to new ones
    (``-1`` for tombstoned points).
    """
    old_to_new = np.full(mesh.num_points, -1, dtype=np.int64)
    order = mesh.points(VERTEX) + mesh.points(EDGE) + mesh.points(CELL)
    old_to_new[order] = np.arange(len(order))
    new = Mesh()
    o2n = old_to_new.tolist()
    for p in order:
        k = mesh._kind[p]
        verts = None
        if k == CELL:
            verts = tuple(o2n[v] for v in mesh._cell_verts[p])
        q = new._new_point(k, [o2n[c] for c in mesh._cone[p]], mesh._tag[p], mesh._coords[p], verts)
        if k == EDGE:
            new._edge_index[new._cone[q]] = q
    new.generation = 0
    return new, old_to_new
