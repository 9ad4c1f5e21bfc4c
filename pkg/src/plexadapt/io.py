"""Gmsh MSH 2.2 and legacy VTK files, metric files and flat key = value configs."""
from __future__ import annotations

import os

import numpy as np

from .fields import NodalField
from .mesh import Mesh, MeshError, build_from_cells

__all__ = [
    "FormatError",
    "read_msh",
    "write_msh",
    "write_vtk",
    "read_metric",
    "write_metric",
    "read_kv",
]

MSH_LINE, MSH_TRIANGLE, MSH_POINT = 1, 2, 15


class FormatError(MeshError):
    """A file is malformed or uses an unsupported feature."""


def _fmt(x: float) -> str:
    return f"{x:.17g}"


# -- Gmsh --------------------------------------------------------------------


def _sections(lines):
    """Yield ``(name, body_lines, first_line_number)`` for each ``$Name ... $EndName`` block."""
    i = 0
    n = len(lines)
    while i < n:
        line = lines[i].strip()
        if not line:
            i += 1
            continue
        if not line.startswith("$"):
            raise FormatError(f"line {i + 1}: expected a section header, got {line!r}")
        name = line[1:]
        end = "$End" + name
        j = i + 1
        while j < n and lines[j].strip() != end:
            j += 1
        if j == n:
            raise FormatError(f"section ${name} starting at line {i + 1} is not closed")
        yield name, lines[i + 1 : j], i + 2
        i = j + 1


def read_msh(path) -> Mesh:
    """Read an ASCII MSH 2.2 file with triangles; line elements carry boundary tags.

    Point elements are ignored.  Node ids may be arbitrary positive integers;
    the mesh numbers vertices in order of appearance in ``$Nodes``.
    """
    with open(path) as f:
        lines = f.read().splitlines()
    nodes = coords = None
    triangles, edge_tags = [], {}
    seen_format = False
    for name, body, start in _sections(lines):
        try:
            if name == "MeshFormat":
                parts = body[0].split()
                if parts[0] not in ("2.2", "2.2.0"):
                    raise FormatError(f"unsupported MSH version {parts[0]} (need 2.2)")
                if len(parts) > 1 and parts[1] != "0":
                    raise FormatError("binary MSH files are not supported")
                seen_format = True
            elif name == "Nodes":
                count = int(body[0])
                if len(body) != count + 1:
                    raise FormatError(f"$Nodes declares {count} nodes but has {len(body) - 1} lines")
                rows = [ln.split() for ln in body[1:]]
                nodes = {int(r[0]): k for k, r in enumerate(rows)}
                if len(nodes) != count:
                    raise FormatError("duplicate node ids in $Nodes")
                coords = np.array([[float(r[1]), float(r[2])] for r in rows])
            elif name == "Elements":
                count = int(body[0])
                if len(body) != count + 1:
                    raise FormatError(f"$Elements declares {count} elements but has {len(body) - 1} lines")
                if nodes is None:
                    raise FormatError("$Elements appears before $Nodes")
                for k, ln in enumerate(body[1:]):
                    r = [int(x) for x in ln.split()]
                    etype, ntags = r[1], r[2]
                    conn = r[3 + ntags :]
                    tags = r[3 : 3 + ntags]
                    if etype == MSH_TRIANGLE:
                        triangles.append([nodes[v] for v in conn[:3]])
                    elif etype == MSH_LINE:
                        a, b = nodes[conn[0]], nodes[conn[1]]
                        edge_tags[(a, b)] = tags[0] if tags and tags[0] > 0 else 1
                    elif etype == MSH_POINT:
                        continue
                    else:
                        raise FormatError(f"element {r[0]} (line {start + k + 1}): unsupported element type {etype}")
        except (IndexError, ValueError, KeyError) as exc:
            if isinstance(exc, FormatError):
                raise
            raise FormatError(f"malformed ${name} section near line {start}: {exc}") from exc
    if not seen_format:
        raise FormatError("missing $MeshFormat section")
    if coords is None or not triangles:
        raise FormatError("file contains no nodes or no triangles")
    return build_from_cells(triangles, coords, edge_tags)


def _boundary_edge_tags(mesh: Mesh):
    idx = mesh.vertex_index()
    out = []
    for e in mesh.edge_ids().tolist():
        if mesh.is_boundary_edge(e):
            a, b = mesh.edge_vertices(e)
            out.append((int(idx[a]), int(idx[b]), mesh.tag(e)))
    return out


def write_msh(mesh: Mesh, path) -> None:
    """Write ASCII MSH 2.2: boundary edges as tagged lines, then triangles (1-based ids)."""
    xy = mesh.vertex_coords()
    tri = mesh.triangles()
    bnd = _boundary_edge_tags(mesh)
    out = ["$MeshFormat", "2.2 0 8", "$EndMeshFormat", "$Nodes", str(len(xy))]
    out += [f"{i + 1} {_fmt(x)} {_fmt(y)} 0" for i, (x, y) in enumerate(xy)]
    out += ["$EndNodes", "$Elements", str(len(bnd) + len(tri))]
    k = 0
    for a, b, t in bnd:
        k += 1
        out.append(f"{k} {MSH_LINE} 2 {t} {t} {a + 1} {b + 1}")
    for a, b, c in tri.tolist():
        k += 1
        out.append(f"{k} {MSH_TRIANGLE} 2 0 0 {a + 1} {b + 1} {c + 1}")
    out.append("$EndElements")
    _write_lines(path, out)


def _write_lines(path, lines) -> None:
    d = os.path.dirname(os.fspath(path))
    if d:
        os.makedirs(d, exist_ok=True)
    with open(path, "w", newline="\n") as f:
        f.write("\n".join(lines) + "\n")


# -- VTK ---------------------------------------------------------------------


def write_vtk(mesh: Mesh, fields: dict | None, path, title: str = "plexadapt") -> None:
    """Legacy ASCII VTK unstructured grid with point data, in vertex order.

    Scalars, vectors (z padded with 0) and symmetric tensors (as 3x3 with a
    zero third row and column) are written in the order of ``fields``.
    """
    fields = dict(fields or {})
    for name, fld in fields.items():
        if " " in name or not name:
            raise ValueError(f"invalid field name {name!r}")
        fld.check_bound(mesh)
    xy = mesh.vertex_coords()
    tri = mesh.triangles()
    out = ["# vtk DataFile Version 3.0", title, "ASCII", "DATASET UNSTRUCTURED_GRID",
           f"POINTS {len(xy)} double"]
    out += [f"{_fmt(x)} {_fmt(y)} 0" for x, y in xy]
    out.append(f"CELLS {len(tri)} {4 * len(tri)}")
    out += [f"3 {a} {b} {c}" for a, b, c in tri.tolist()]
    out.append(f"CELL_TYPES {len(tri)}")
    out += ["5"] * len(tri)
    if fields:
        out.append(f"POINT_DATA {len(xy)}")
    for name, fld in fields.items():
        v = fld.values
        if fld.kind == "scalar":
            out += [f"SCALARS {name} double 1", "LOOKUP_TABLE default"]
            out += [_fmt(x) for x in v.tolist()]
        elif fld.kind == "vector":
            out.append(f"VECTORS {name} double")
            out += [f"{_fmt(a)} {_fmt(b)} 0" for a, b in v.tolist()]
        else:
            out.append(f"TENSORS {name} double")
            for a, b, c in v.tolist():
                out.append(f"{_fmt(a)} {_fmt(b)} 0 {_fmt(b)} {_fmt(c)} 0 0 0 0")
    _write_lines(path, out)


# -- metric files -------------------------------------------------------------


def write_metric(M: NodalField, path) -> None:
    """One ``vid a11 a12 a22`` line per vertex, ids 1-based as in the MSH node numbering."""
    if M.kind != "tensor":
        raise ValueError("metric files hold tensor fields")
    _write_lines(path, [f"{i + 1} {_fmt(a)} {_fmt(b)} {_fmt(c)}" for i, (a, b, c) in enumerate(M.values.tolist())])


def read_metric(path, mesh: Mesh) -> NodalField:
    vals = np.full((mesh.num_vertices, 3), np.nan)
    with open(path) as f:
        for k, line in enumerate(f, 1):
            s = line.split("#", 1)[0].split()
            if not s:
                continue
            if len(s) != 4:
                raise FormatError(f"{path}:{k}: expected 'vid a11 a12 a22'")
            try:
                vid = int(s[0]) - 1
                row = [float(x) for x in s[1:]]
            except ValueError as exc:
                raise FormatError(f"{path}:{k}: {exc}") from exc
            if not 0 <= vid < mesh.num_vertices:
                raise FormatError(f"{path}:{k}: vertex id {vid + 1} out of range")
            vals[vid] = row
    missing = np.flatnonzero(np.isnan(vals[:, 0]))
    if len(missing):
        raise FormatError(f"{path}: no metric for vertex {missing[0] + 1} ({len(missing)} missing)")
    return NodalField(mesh, vals, "tensor")


# -- config ------------------------------------------------------------------


def read_kv(path) -> dict:
    """Parse ``key = value`` lines; ``#`` starts a comment.  Duplicate keys are errors."""
    out = {}
    with open(path) as f:
        for k, line in enumerate(f, 1):
            s = line.split("#", 1)[0].strip()
            if not s:
                continue
            if "=" not in s:
                raise FormatError(f"{path}:{k}: expected 'key = value'")
            key, val = (x.strip() for x in s.split("=", 1))
            if not key:
                raise FormatError(f"{path}:{k}: empty key")
            if key in out:
                raise FormatError(f"{path}:{k}: duplicate key {key!r}")
            out[key] = val
    return out
