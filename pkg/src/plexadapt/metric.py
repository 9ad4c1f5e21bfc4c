"""Hessian recovery, sub-interval Hessian averaging and the space-time L^p metric."""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .fields import FieldError, NodalField, sym_abs, sym_det, sym_eig, sym_from_eig
from .mesh import Mesh, MeshError

__all__ = [
    "MetricParams",
    "HessianAccumulator",
    "p1_gradients",
    "recover_hessian",
    "accumulate",
    "floor_determinant",
    "complexity_term",
    "lp_normalization",
    "lp_metric",
    "clamp_metric",
    "clamp_metric_array",
    "metric_complexity",
]


@dataclass
class MetricParams:
    """Inputs of the space-time metric besides the Hessians.

    ``tau_integrals[i]`` is the integral of 1/dt over sub-interval ``i``, i.e.
    its number of time steps for a constant step.  ``p`` may be ``math.inf``.
    ``eps_det`` is an absolute determinant floor; ``None`` means
    ``1e-10 * (1/h_max**2)**d``.
    """

    N_st: float
    p: float = 2.0
    d: int = 2
    tau_integrals: list[float] = field(default_factory=lambda: [1.0])
    h_min: float = 1e-4
    h_max: float = 1.0
    a_max: float = 1e3
    eps_det: float | None = None

    def __post_init__(self):
        if not self.N_st > 0:
            raise ValueError("N_st must be positive")
        if not (0 < self.h_min < self.h_max):
            raise ValueError("need 0 < h_min < h_max")
        if not self.a_max >= 1:
            raise ValueError("a_max must be >= 1")
        if not self.p >= 1:
            raise ValueError("p must be >= 1 (or math.inf)")
        if any(not t > 0 for t in self.tau_integrals):
            raise ValueError("tau integrals must be positive")

    @property
    def det_floor(self) -> float:
        if self.eps_det is not None:
            return self.eps_det
        return 1e-10 * (1.0 / self.h_max**2) ** self.d

    def exponent(self, num: float) -> float:
        """``num / (2p + d)``, with its p -> infinity limit."""
        if math.isinf(self.p):
            return 0.0
        return num / (2.0 * self.p + self.d)

    @property
    def time_exponent(self) -> float:
        """``2p / (2p + d)``."""
        return 1.0 if math.isinf(self.p) else 2.0 * self.p / (2.0 * self.p + self.d)

    @property
    def k_exponent(self) -> float:
        """``p / (2p + d)``."""
        return 0.5 if math.isinf(self.p) else self.p / (2.0 * self.p + self.d)


# -- Hessian recovery -------------------------------------------------------


def p1_gradients(mesh: Mesh):
    """Per-cell areas and basis-function gradients, shape ``(C,)`` and ``(C, 3, 2)``."""
    xy = mesh.vertex_coords()
    tri = mesh.triangles()
    p = xy[tri]
    # gradient of the basis function of local vertex k is rot90 of the opposite edge / 2A
    area = 0.5 * ((p[:, 1, 0] - p[:, 0, 0]) * (p[:, 2, 1] - p[:, 0, 1])
                  - (p[:, 1, 1] - p[:, 0, 1]) * (p[:, 2, 0] - p[:, 0, 0]))
    if np.any(area <= 0):
        bad = mesh.cell_ids()[np.flatnonzero(area <= 0)[0]]
        raise MeshError(f"cell {bad} is inverted or degenerate")
    grads = np.empty((len(tri), 3, 2))
    for k in range(3):
        b, c = p[:, (k + 1) % 3], p[:, (k + 2) % 3]
        grads[:, k, 0] = (b[:, 1] - c[:, 1]) / (2 * area)
        grads[:, k, 1] = (c[:, 0] - b[:, 0]) / (2 * area)
    return area, grads


def recover_hessian(mesh: Mesh, u: NodalField) -> NodalField:
    """Galerkin recovery of the Hessian of a P1 scalar field.

    Each component solves ``(phi, H_kl) = -(d_k phi, d_l u) + <phi n_k, d_l u>``
    with a lumped mass matrix; the boundary integral uses the gradient of the
    cell owning the boundary edge.  The result is symmetrised and boundary
    vertices then take the mean of their interior neighbours.
    """
    u.check_bound(mesh)
    if u.kind != "scalar":
        raise FieldError("Hessian recovery needs a scalar field")
    tri = mesh.triangles()
    nv = mesh.num_vertices
    area, grads = p1_gradients(mesh)
    # differences against the first vertex make constants recover exactly zero
    uc = u.values[tri]
    gu = np.einsum("ck,ckd->cd", uc - uc[:, :1], grads)

    rhs = np.zeros((nv, 2, 2))
    # -int d_k phi_i d_l u over each cell
    local = -area[:, None, None, None] * grads[:, :, :, None] * gu[:, None, None, :]
    np.add.at(rhs, tri.ravel(), local.reshape(-1, 2, 2))

    bedges, bcell = mesh.boundary_facets()
    if len(bedges):
        xy = mesh.vertex_coords()
        d = xy[bedges[:, 1]] - xy[bedges[:, 0]]
        # outward normal scaled by edge length (domain lies to the left)
        nL = np.column_stack([d[:, 1], -d[:, 0]])
        flux = 0.5 * nL[:, :, None] * gu[bcell][:, None, :]
        np.add.at(rhs, bedges[:, 0], flux)
        np.add.at(rhs, bedges[:, 1], flux)

    lumped = np.zeros(nv)
    np.add.at(lumped, tri.ravel(), np.repeat(area / 3.0, 3))
    H = rhs / lumped[:, None, None]
    out = np.column_stack([H[:, 0, 0], 0.5 * (H[:, 0, 1] + H[:, 1, 0]), H[:, 1, 1]])
    return NodalField(mesh, _extend_to_boundary(mesh, out), "tensor")


def _extend_to_boundary(mesh: Mesh, H: np.ndarray) -> np.ndarray:
    """Replace boundary values by the mean over interior neighbours.

    With the one-sided cell gradient in the boundary integral the normal-normal
    component is lost at boundary vertices (zero for any quadratic), which would
    drive the metric to its clamp along walls.  Boundary vertices without an
    interior neighbour (some corners) use already replaced boundary neighbours.
    """
    known = mesh.vertex_tags() == 0
    if known.all() or not known.any():
        return H
    e = mesh.edges_array()
    out = H.copy()
    while not known.all():
        total = np.zeros_like(H)
        count = np.zeros(len(H))
        for a, b in ((0, 1), (1, 0)):
            take = ~known[e[:, a]] & known[e[:, b]]
            np.add.at(total, e[take, a], out[e[take, b]])
            np.add.at(count, e[take, a], 1.0)
        fix = count > 0
        if not fix.any():
            break
        out[fix] = total[fix] / count[fix, None]
        known |= fix
    return out


# -- time averaging ---------------------------------------------------------


class HessianAccumulator:
    """Weighted running mean of ``|H|`` samples on one mesh."""

    def __init__(self, mesh: Mesh):
        self.mesh = mesh
        self.generation = mesh.generation
        self.sum = np.zeros((mesh.num_vertices, 3))
        self.weight = 0.0
        self.n_samples = 0
        self._plain_sum = np.zeros((mesh.num_vertices, 3))

    def add(self, H: NodalField, dt_weight: float) -> "HessianAccumulator":
        if H.mesh is not self.mesh or H.generation != self.generation:
            raise FieldError("Hessian sample is bound to a different mesh than the accumulator")
        if dt_weight < 0:
            raise ValueError("sample weight must be non-negative")
        a = sym_abs(H.values)
        self.sum += dt_weight * a
        self._plain_sum += a
        self.weight += dt_weight
        self.n_samples += 1
        return self

    def finalize(self) -> NodalField:
        """Weighted mean; falls back to the plain mean when all weights are zero."""
        if self.n_samples == 0:
            raise ValueError("no Hessian samples accumulated")
        if self.weight > 0:
            vals = self.sum / self.weight
        else:
            vals = self._plain_sum / self.n_samples
        return NodalField(self.mesh, vals, "tensor")


def accumulate(acc: HessianAccumulator, H_sample: NodalField, dt_weight: float) -> HessianAccumulator:
    return acc.add(H_sample, dt_weight)


# -- metric construction ----------------------------------------------------


def floor_determinant(t, eps: float) -> np.ndarray:
    """Raise the smaller eigenvalue of PSD tensors so that ``det >= eps``.

    If even the larger eigenvalue is below ``sqrt(eps)`` both are set to it.
    Tensors that already satisfy the floor are returned unchanged.
    """
    t = np.asarray(t, dtype=float)
    l1, l2, th = sym_eig(t)
    l1 = np.maximum(l1, 0.0)
    l2 = np.maximum(l2, 0.0)
    low = l1 * l2 < eps
    if not np.any(low):
        return t.copy()
    root = math.sqrt(eps)
    big = l1 >= root
    new1 = np.where(low & ~big, root, l1)
    new2 = np.where(low, np.where(big, eps / np.where(big, l1, 1.0), root), l2)
    out = t.copy()
    out[low] = sym_from_eig(new1[low], new2[low], th[low])
    return out


def _check_psd(values, what="Hessian") -> None:
    l1, l2, _ = sym_eig(values)
    scale = np.maximum(np.abs(l1), 1e-300)
    if np.any(l2 < -1e-10 * scale):
        i = int(np.argmin(l2 / scale))
        raise FieldError(f"{what} at vertex {i} is not positive semi-definite")


def _cell_integral(mesh: Mesh, nodal) -> float:
    tri = mesh.triangles()
    return float(np.sum(mesh.cell_areas() * nodal[tri].mean(axis=1)))


def complexity_term(mesh: Mesh, H_mean: NodalField, params: MetricParams) -> float:
    """``int (det H)^(p/(2p+d)) dx`` of the floored mean Hessian (vertex-average quadrature)."""
    H_mean.check_bound(mesh)
    _check_psd(H_mean.values)
    Hf = floor_determinant(H_mean.values, params.det_floor)
    return _cell_integral(mesh, sym_det(Hf) ** params.k_exponent)


def lp_normalization(meshes, H_means, params: MetricParams) -> float:
    """Global factor ``N_st^(2/d) (sum_j K_j n_j^(2p/(2p+d)))^(-2/d)``."""
    if not meshes or len(meshes) != len(H_means):
        raise ValueError("need one mean Hessian per sub-interval")
    if len(params.tau_integrals) != len(meshes):
        raise ValueError(f"{len(params.tau_integrals)} tau integrals for {len(meshes)} sub-intervals")
    d = params.d
    total = 0.0
    for mesh, H, n in zip(meshes, H_means, params.tau_integrals):
        total += complexity_term(mesh, H, params) * n**params.time_exponent
    return params.N_st ** (2.0 / d) * total ** (-2.0 / d)


def lp_metric(mesh_per_interval, H_mean_per_interval, params: MetricParams, clamp: bool = True):
    """Space-time L^p metrics, one per sub-interval, with global normalisation."""
    glob = lp_normalization(mesh_per_interval, H_mean_per_interval, params)
    out = []
    for mesh, H, n in zip(mesh_per_interval, H_mean_per_interval, params.tau_integrals):
        Hf = floor_determinant(H.values, params.det_floor)
        local = sym_det(Hf) ** (-params.exponent(1.0))
        scale = glob * n ** (-params.exponent(2.0)) * local
        M = NodalField(mesh, scale[:, None] * Hf, "tensor")
        out.append(clamp_metric(M, params) if clamp else M)
    return out


def clamp_metric_array(values, h_min: float, h_max: float, a_max: float) -> np.ndarray:
    l1, l2, th = sym_eig(values)
    lo, hi = 1.0 / h_max**2, 1.0 / h_min**2
    l1 = np.clip(l1, lo, hi)
    l2 = np.clip(l2, lo, hi)
    l2 = np.maximum(l2, l1 / a_max**2)
    return sym_from_eig(l1, l2, th)


def clamp_metric(M: NodalField, params: MetricParams) -> NodalField:
    """Bound eigenvalues to ``[1/h_max^2, 1/h_min^2]`` and anisotropy to ``a_max``."""
    vals = clamp_metric_array(M.values, params.h_min, params.h_max, params.a_max)
    return NodalField(M.mesh, vals, "tensor")


def metric_complexity(mesh: Mesh, M: NodalField) -> float:
    """Continuous complexity ``int sqrt(det M) dx``."""
    M.check_bound(mesh)
    return _cell_integral(mesh, np.sqrt(np.maximum(sym_det(M.values), 0.0)))
