"""SUPG-stabilised P1 solver for scalar advection by a divergence-free velocity.

Time stepping is the theta scheme (theta = 1/2 is Crank-Nicolson).  The
velocity is evaluated at cell centroids, which integrates the P1 terms exactly
for a cellwise constant velocity.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable

import numpy as np
import scipy.sparse as sp
from scipy.sparse.linalg import splu

from .fields import NodalField
from .mesh import Mesh
from .metric import HessianAccumulator, p1_gradients, recover_hessian

__all__ = [
    "SolverError",
    "AdvectionProblem",
    "SolverOptions",
    "AdvectionSolver",
    "velocity_2d",
    "initial_bubble",
    "bubble_problem",
    "step",
    "run_subinterval",
    "step_count",
    "mass",
    "l2_error",
]

BUBBLE_CENTER = (0.5, 0.75)
BUBBLE_RADIUS = 0.15
BUBBLE_EPS = 0.05
TAU_GUARD = 1e-12


class SolverError(RuntimeError):
    """The linear solve did not reach the requested tolerance, or the setup is inconsistent."""


def velocity_2d(x, y, t, T: float = 6.0):
    """Reversing single-vortex field from the stream function ``sin^2(pi x) sin^2(pi y) / pi``."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    g = math.cos(2.0 * math.pi * t / T)
    vx = -np.sin(np.pi * x) ** 2 * np.sin(2.0 * np.pi * y) * g
    vy = np.sin(2.0 * np.pi * x) * np.sin(np.pi * y) ** 2 * g
    return np.stack([vx, vy], axis=-1)


def initial_bubble(x, y):
    """Smoothed indicator of the disc of radius 0.15 around (0.5, 0.75)."""
    r = np.hypot(np.asarray(x, dtype=float) - BUBBLE_CENTER[0], np.asarray(y, dtype=float) - BUBBLE_CENTER[1])
    return 0.5 * (1.0 - np.tanh((r - BUBBLE_RADIUS) / BUBBLE_EPS))


@dataclass
class AdvectionProblem:
    """``velocity(x, y, t)`` returns an ``(..., 2)`` array; ``u0(x, y)`` the initial state."""

    velocity: Callable
    u0: Callable
    t_end: float
    T_period: float = 6.0
    # the weak form carries no boundary term, which is only consistent without inflow
    no_flow: bool = True

    def __post_init__(self):
        if not self.t_end > 0:
            raise ValueError("t_end must be positive")


def bubble_problem(T: float = 6.0, t_end: float | None = None) -> AdvectionProblem:
    """The reversing-vortex bubble benchmark; ``t_end`` defaults to ``T/2``."""
    return AdvectionProblem(
        velocity=lambda x, y, t: velocity_2d(x, y, t, T),
        u0=initial_bubble,
        t_end=T / 2 if t_end is None else t_end,
        T_period=T,
    )


@dataclass
class SolverOptions:
    dt: float = 0.01
    theta: float = 0.5
    supg: bool = True
    rtol: float = 1e-10

    def __post_init__(self):
        if not self.dt > 0:
            raise ValueError("dt must be positive")
        if not 0.0 <= self.theta <= 1.0:
            raise ValueError("theta must lie in [0, 1]")
        if not self.rtol > 0:
            raise ValueError("rtol must be positive")


class AdvectionSolver:
    """Assembler and stepper bound to one mesh.

    The sparsity pattern and P1 geometry are built once; every step assembles
    the cellwise blocks and solves directly.
    """

    def __init__(self, mesh: Mesh, problem: AdvectionProblem, opts: SolverOptions):
        self.mesh = mesh
        self.generation = mesh.generation
        self.problem = problem
        self.opts = opts
        self.tri = mesh.triangles()
        self.n = mesh.num_vertices
        self.area, self.grads = p1_gradients(mesh)
        xy = mesh.vertex_coords()
        self.centroid = xy[self.tri].mean(axis=1)
        rows = np.repeat(self.tri, 3, axis=1).ravel()
        cols = np.tile(self.tri, (1, 3)).ravel()
        key = rows.astype(np.int64) * self.n + cols
        uniq, self._slot = np.unique(key, return_inverse=True)
        self._indptr = np.searchsorted(uniq // self.n, np.arange(self.n + 1)).astype(np.int32)
        self._indices = (uniq % self.n).astype(np.int32)
        self._nnz = len(uniq)
        mloc = np.full((3, 3), 1.0 / 12.0) + np.eye(3) / 12.0
        self._mass_blocks = self.area[:, None, None] * mloc
        self._bnd = self._boundary_points(mesh)

    @staticmethod
    def _boundary_points(mesh: Mesh):
        edges, _ = mesh.boundary_facets()
        if not len(edges):
            return None
        xy = mesh.vertex_coords()
        a, b = xy[edges[:, 0]], xy[edges[:, 1]]
        d = b - a
        n = np.column_stack([d[:, 1], -d[:, 0]]) / np.hypot(d[:, 0], d[:, 1])[:, None]
        pts = np.concatenate([a, 0.5 * (a + b), b])
        return pts, np.concatenate([n, n, n])

    def _check_no_flow(self, t: float) -> None:
        if not self.problem.no_flow or self._bnd is None:
            return
        pts, nrm = self._bnd
        v = np.asarray(self.problem.velocity(pts[:, 0], pts[:, 1], t), dtype=float)
        flux = np.abs(np.einsum("ij,ij->i", v, nrm))
        if flux.max() > 1e-12:
            raise SolverError(f"velocity crosses the boundary at t={t:g} (|v.n| = {flux.max():.3g})")

    def _vel(self, t: float) -> np.ndarray:
        c = self.centroid
        return np.asarray(self.problem.velocity(c[:, 0], c[:, 1], t), dtype=float).reshape(-1, 2)

    def _matrix(self, blocks: np.ndarray) -> sp.csr_matrix:
        data = np.bincount(self._slot, weights=blocks.ravel(), minlength=self._nnz)
        return sp.csr_matrix((data, self._indices, self._indptr), shape=(self.n, self.n))

    def _tau(self, vg: np.ndarray, v: np.ndarray) -> np.ndarray:
        """Streamline parameter ``h_K / (2 |v| + guard)`` with ``h_K = 2 |v| / sum |v . grad phi|``."""
        speed = np.hypot(v[:, 0], v[:, 1])
        denom = np.abs(vg).sum(axis=1)
        # h_K / (2|v| + guard), simplified so that a vanishing velocity gives tau = 0
        safe = np.where(denom > 0, denom, 1.0)
        return np.where(denom > 0, speed / ((speed + 0.5 * TAU_GUARD) * safe), 0.0)

    def operators(self, t_n: float, dt: float):
        """Left and right matrices of one theta step from ``t_n`` to ``t_n + dt``."""
        th = self.opts.theta
        area, grads = self.area, self.grads
        v_old, v_new = self._vel(t_n), self._vel(t_n + dt)
        vg_old = np.einsum("cd,ckd->ck", v_old, grads)
        vg_new = np.einsum("cd,ckd->ck", v_new, grads)
        # Galerkin advection: int phi_i v . grad phi_j
        adv_old = (area / 3.0)[:, None, None] * np.broadcast_to(vg_old[:, None, :], (len(area), 3, 3))
        adv_new = (area / 3.0)[:, None, None] * np.broadcast_to(vg_new[:, None, :], (len(area), 3, 3))
        mass = self._mass_blocks
        if self.opts.supg:
            v_s = self._vel(t_n + th * dt)
            vg_s = np.einsum("cd,ckd->ck", v_s, grads)
            tau = self._tau(vg_s, v_s)
            ta = (tau * area)[:, None, None]
            mass = mass + (ta / 3.0) * vg_s[:, :, None]
            adv_old = adv_old + ta * vg_s[:, :, None] * vg_old[:, None, :]
            adv_new = adv_new + ta * vg_s[:, :, None] * vg_new[:, None, :]
        lhs = self._matrix(mass / dt + th * adv_new)
        rhs = self._matrix(mass / dt - (1.0 - th) * adv_old)
        return lhs, rhs

    def advance(self, u: np.ndarray, t_n: float, dt: float) -> np.ndarray:
        if self.mesh.generation != self.generation:
            raise SolverError("mesh changed after the solver was built")
        self._check_no_flow(t_n + dt)
        lhs, rhs = self.operators(t_n, dt)
        b = rhs @ u
        lu = splu(lhs.tocsc())
        x = lu.solve(b)
        scale = max(np.linalg.norm(b), np.linalg.norm(lhs @ x), 1e-300)
        for _ in range(3):
            r = b - lhs @ x
            if np.linalg.norm(r) <= self.opts.rtol * scale:
                return x
            x = x + lu.solve(r)
        raise SolverError(f"linear solve residual {np.linalg.norm(b - lhs @ x) / scale:.3g} above {self.opts.rtol:g}")


def step(mesh: Mesh, u_n: NodalField, t_n: float, opts: SolverOptions, problem: AdvectionProblem) -> NodalField:
    """One theta step of length ``opts.dt``."""
    u_n.check_bound(mesh)
    solver = AdvectionSolver(mesh, problem, opts)
    solver._check_no_flow(t_n)
    return NodalField(mesh, solver.advance(u_n.values, t_n, opts.dt), "scalar")


def step_count(t_start: float, t_end: float, dt: float) -> int:
    """Steps of a constant ``dt`` covering ``[t_start, t_end]``, the last one possibly shortened."""
    span = t_end - t_start
    if span < 0:
        raise ValueError("t_end must not precede t_start")
    return int(math.ceil(span / dt - 1e-9)) if span > 0 else 0


def _trapezoid_weights(times) -> np.ndarray:
    t = np.asarray(times, dtype=float)
    w = np.zeros(len(t))
    if len(t) > 1:
        gaps = np.diff(t)
        w[:-1] += 0.5 * gaps
        w[1:] += 0.5 * gaps
    return w


def run_subinterval(mesh: Mesh, u_start: NodalField, t_start: float, t_end: float,
                    opts: SolverOptions, problem: AdvectionProblem, sampler: int | None = 20,
                    monitor: Callable | None = None):
    """Advance from ``t_start`` to ``t_end`` with a constant step, sampling Hessians.

    ``sampler`` is the number of Hessian samples per sub-interval: the initial
    state, every ``ceil(steps / sampler)``-th step and the final step are
    recovered and averaged with trapezoidal time weights.  ``None`` skips
    Hessian sampling and returns ``None`` in place of the accumulator.
    ``monitor(k, t, u)`` is called after every step.
    """
    u_start.check_bound(mesh)
    nsteps = step_count(t_start, t_end, opts.dt)
    stride = max(1, math.ceil(nsteps / sampler)) if sampler else None
    solver = AdvectionSolver(mesh, problem, opts) if nsteps else None
    if solver is not None:
        solver._check_no_flow(t_start)
    u = u_start.values.copy()
    samples, times = [], []

    def take(t):
        samples.append(recover_hessian(mesh, NodalField(mesh, u, "scalar")))
        times.append(t)

    if stride is not None:
        take(t_start)
    t = t_start
    for k in range(1, nsteps + 1):
        dt = min(opts.dt, t_end - t) if k == nsteps else opts.dt
        u = solver.advance(u, t, dt)
        t = t_end if k == nsteps else t + dt
        if monitor is not None:
            monitor(k, t, u)
        if stride is not None and (k % stride == 0 or k == nsteps):
            take(t)
    acc = None
    if stride is not None:
        acc = HessianAccumulator(mesh)
        for H, w in zip(samples, _trapezoid_weights(times)):
            acc.add(H, float(w))
    return NodalField(mesh, u, "scalar"), acc


def mass(mesh: Mesh, u: NodalField) -> float:
    """Integral of a P1 field (exact: cell mean times area)."""
    u.check_bound(mesh)
    return float(np.sum(mesh.cell_areas() * u.values[mesh.triangles()].mean(axis=1)))


def l2_error(mesh: Mesh, u: NodalField, exact: Callable) -> float:
    """L2 distance between a P1 field and a function, with a 6-point degree-4 triangle rule."""
    u.check_bound(mesh)
    a, b = 0.445948490915965, 0.091576213509771
    wa, wb = 0.223381589678011, 0.109951743655322
    bary = np.array([[a, a, 1 - 2 * a], [a, 1 - 2 * a, a], [1 - 2 * a, a, a],
                     [b, b, 1 - 2 * b], [b, 1 - 2 * b, b], [1 - 2 * b, b, b]])
    w = np.array([wa] * 3 + [wb] * 3)
    xy = mesh.vertex_coords()
    tri = mesh.triangles()
    pts = np.einsum("qk,ckd->cqd", bary, xy[tri])
    uh = np.einsum("qk,ck->cq", bary, u.values[tri])
    ue = exact(pts[..., 0], pts[..., 1])
    return float(math.sqrt(np.sum(mesh.cell_areas()[:, None] * w * (uh - ue) ** 2)))
