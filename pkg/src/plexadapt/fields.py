"""P1 nodal fields and symmetric 2x2 tensor algebra.

Symmetric tensors are stored compactly as ``(a11, a12, a22)``; the array
helpers accept any ``(..., 3)`` array so that whole tensor fields are handled
in one call.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .mesh import Mesh, MeshError

__all__ = [
    "SymTensor2",
    "NodalField",
    "FieldError",
    "sym_eig",
    "sym_from_eig",
    "sym_abs",
    "sym_det",
    "eig",
    "abs_tensor",
    "evaluate",
    "barycentric",
    "metric_edge_length",
    "metric_edge_lengths",
]


class FieldError(ValueError):
    """A field is used with a mesh it is not bound to, or has the wrong shape."""


@dataclass(frozen=True)
class SymTensor2:
    a11: float
    a12: float
    a22: float

    @classmethod
    def from_matrix(cls, m) -> "SymTensor2":
        m = np.asarray(m, dtype=float)
        return cls(float(m[0, 0]), 0.5 * float(m[0, 1] + m[1, 0]), float(m[1, 1]))

    @classmethod
    def diag(cls, d1: float, d2: float) -> "SymTensor2":
        return cls(float(d1), 0.0, float(d2))

    def as_array(self) -> np.ndarray:
        return np.array([self.a11, self.a12, self.a22])

    def as_matrix(self) -> np.ndarray:
        return np.array([[self.a11, self.a12], [self.a12, self.a22]])

    @property
    def det(self) -> float:
        return self.a11 * self.a22 - self.a12 * self.a12

    def __add__(self, other: "SymTensor2") -> "SymTensor2":
        return SymTensor2(self.a11 + other.a11, self.a12 + other.a12, self.a22 + other.a22)

    def __mul__(self, s: float) -> "SymTensor2":
        return SymTensor2(self.a11 * s, self.a12 * s, self.a22 * s)

    __rmul__ = __mul__


# -- array kernels ---------------------------------------------------------


def sym_eig(t):
    """Closed-form eigen-decomposition of ``(..., 3)`` symmetric tensors.

    Returns ``(lam1, lam2, theta)`` with ``lam1 >= lam2``; the eigenvector of
    ``lam1`` is ``(cos theta, sin theta)`` and that of ``lam2`` is
    ``(-sin theta, cos theta)``.
    """
    t = np.asarray(t, dtype=float)
    a, b, c = t[..., 0], t[..., 1], t[..., 2]
    mean = 0.5 * (a + c)
    rad = np.hypot(0.5 * (a - c), b)
    theta = 0.5 * np.arctan2(2.0 * b, a - c)
    return mean + rad, mean - rad, theta


def sym_from_eig(lam1, lam2, theta) -> np.ndarray:
    c, s = np.cos(theta), np.sin(theta)
    a11 = lam1 * c * c + lam2 * s * s
    a12 = (lam1 - lam2) * c * s
    a22 = lam1 * s * s + lam2 * c * c
    return np.stack([a11, a12, a22], axis=-1)


def sym_abs(t) -> np.ndarray:
    """Replace eigenvalues by their absolute values."""
    l1, l2, th = sym_eig(t)
    return sym_from_eig(np.abs(l1), np.abs(l2), th)


def sym_det(t) -> np.ndarray:
    t = np.asarray(t, dtype=float)
    return t[..., 0] * t[..., 2] - t[..., 1] ** 2


def sym_mean(*ts) -> np.ndarray:
    return sum(np.asarray(t, dtype=float) for t in ts) / len(ts)


# -- scalar API ------------------------------------------------------------


def eig(sym: SymTensor2):
    """Return ``(lam1, lam2, e1, e2)`` with ``lam1 >= lam2`` and orthonormal eigenvectors."""
    l1, l2, th = sym_eig(sym.as_array())
    c, s = math.cos(th), math.sin(th)
    return float(l1), float(l2), np.array([c, s]), np.array([-s, c])


def abs_tensor(sym: SymTensor2) -> SymTensor2:
    return SymTensor2(*sym_abs(sym.as_array()).tolist())


def _as_sym_array(m) -> np.ndarray:
    if isinstance(m, SymTensor2):
        return m.as_array()
    return np.asarray(m, dtype=float)


def metric_edge_length(Ma, Mb, e) -> float:
    """Length of edge vector ``e`` under the arithmetic mean of two SPD metrics."""
    a, b = _as_sym_array(Ma), _as_sym_array(Mb)
    for t in (a, b):
        if not (t[0] > 0 and t[0] * t[2] - t[1] ** 2 > 0):
            raise FieldError(f"metric {t.tolist()} is not SPD")
    m = 0.5 * (a + b)
    ex, ey = float(e[0]), float(e[1])
    return math.sqrt(m[0] * ex * ex + 2.0 * m[1] * ex * ey + m[2] * ey * ey)


def metric_edge_lengths(xy, edges, metric) -> np.ndarray:
    """Vectorised metric lengths for an ``(n, 2)`` vertex-index edge array."""
    d = xy[edges[:, 1]] - xy[edges[:, 0]]
    m = 0.5 * (metric[edges[:, 0]] + metric[edges[:, 1]])
    q = m[:, 0] * d[:, 0] ** 2 + 2.0 * m[:, 1] * d[:, 0] * d[:, 1] + m[:, 2] * d[:, 1] ** 2
    return np.sqrt(np.maximum(q, 0.0))


# -- nodal fields ----------------------------------------------------------


class NodalField:
    """P1 field: one value per active vertex of a specific mesh generation.

    ``values`` has shape ``(V,)`` for scalars, ``(V, 2)`` for vectors and
    ``(V, 3)`` for symmetric tensors.
    """

    def __init__(self, mesh: Mesh, values, kind: str | None = None):
        values = np.asarray(values, dtype=float)
        if values.shape[0] != mesh.num_vertices:
            raise FieldError(f"field has {values.shape[0]} values for {mesh.num_vertices} vertices")
        if kind is None and values.ndim == 1:
            kind = "scalar"
        elif kind is None and values.ndim == 2:
            kind = {2: "vector", 3: "tensor"}.get(values.shape[1])
        if kind not in ("scalar", "vector", "tensor"):
            raise FieldError(f"cannot infer field kind from shape {values.shape}")
        self.mesh = mesh
        self.generation = mesh.generation
        self.values = values
        self.kind = kind

    def check_bound(self, mesh: Mesh) -> None:
        if mesh is not self.mesh:
            raise FieldError("field is bound to a different mesh")
        if mesh.generation != self.generation:
            raise FieldError("mesh was modified after the field was built; transfer it explicitly")

    @classmethod
    def from_function(cls, mesh: Mesh, func, kind: str | None = None) -> "NodalField":
        xy = mesh.vertex_coords()
        return cls(mesh, func(xy[:, 0], xy[:, 1]), kind)

    @classmethod
    def constant(cls, mesh: Mesh, value) -> "NodalField":
        value = np.asarray(value, dtype=float)
        vals = np.broadcast_to(value, (mesh.num_vertices,) + value.shape).copy()
        return cls(mesh, vals)

    def copy(self) -> "NodalField":
        return NodalField(self.mesh, self.values.copy(), self.kind)

    def __len__(self) -> int:
        return len(self.values)

    def __repr__(self) -> str:
        return f"NodalField({self.kind}, n={len(self.values)})"


def barycentric(p, a, b, c) -> np.ndarray:
    det = (b[0] - a[0]) * (c[1] - a[1]) - (b[1] - a[1]) * (c[0] - a[0])
    l1 = ((b[0] - p[0]) * (c[1] - p[1]) - (b[1] - p[1]) * (c[0] - p[0])) / det
    l2 = ((c[0] - p[0]) * (a[1] - p[1]) - (c[1] - p[1]) * (a[0] - p[0])) / det
    return np.array([l1, l2, 1.0 - l1 - l2])


def evaluate(field: NodalField, cell: int, point, tol: float = 1e-10):
    """Barycentric-linear value of ``field`` at ``point`` inside ``cell`` (a point id)."""
    mesh = field.mesh
    field.check_bound(mesh)
    if not mesh.is_active(cell) or mesh.kind(cell) != 2:
        raise MeshError(f"point {cell} is not an active cell")
    verts = mesh.cell_vertices(cell)
    lam = barycentric(point, *(mesh.coords(v) for v in verts))
    if lam.min() < -tol or lam.max() > 1.0 + tol:
        raise FieldError(f"point {tuple(point)} lies outside cell {cell} (barycentric {lam.tolist()})")
    idx = mesh.vertex_index()[list(verts)]
    vals = field.values[idx]
    out = np.tensordot(lam, vals, axes=(0, 0))
    if field.kind == "scalar":
        return float(out)
    if field.kind == "tensor":
        return SymTensor2(*out.tolist())
    return out
