"""Global fixed-point transient adaptation over time sub-intervals.

Each fixed-point iteration solves the whole time window on the current list of
sub-interval meshes, gathers a time-averaged Hessian per sub-interval, builds
the globally normalised space-time metric and remeshes every sub-interval for
the next iteration.
"""
from __future__ import annotations

import dataclasses
import logging
import math
import os
import time
import typing
from dataclasses import dataclass, field

import numpy as np

from .advection import (AdvectionProblem, SolverOptions, bubble_problem, l2_error, mass, run_subinterval,
                        step_count)
from .fields import NodalField
from .io import read_msh, write_vtk
from .mesh import Mesh, unit_square_mesh
from .metric import MetricParams, lp_metric, lp_normalization
from .remesh import AdaptOptions, adapt
from .transfer import interpolate_field

__all__ = [
    "ConfigError",
    "PipelineError",
    "AdaptConfig",
    "IterationRecord",
    "PipelineState",
    "fixed_point_adapt",
    "uniform_run",
    "n_st_for_vertices",
    "diagnostics_table",
    "write_diagnostics",
    "config_to_mapping",
]

log = logging.getLogger(__name__)

# measured ratio of vertex count to complexity * 2/sqrt(3) for adapted meshes
UNIT_MESH_FILL = 1.15


class ConfigError(ValueError):
    """Unknown key or unparsable value in a run configuration."""


class PipelineError(RuntimeError):
    """A module failed inside the pipeline; the message names iteration and sub-interval."""


def _parse_bool(s: str) -> bool:
    v = s.strip().lower()
    if v in ("1", "true", "yes", "on"):
        return True
    if v in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {s!r}")


def _parse_value(text: str, typ):
    """Convert ``text`` to the annotated field type (``X | None`` accepts ``none``)."""
    origin = typing.get_origin(typ)
    args = typing.get_args(typ)
    if origin is typing.Union or type(typ).__name__ == "UnionType":
        if text.strip().lower() in ("none", ""):
            return None
        inner = [a for a in args if a is not type(None)]
        return _parse_value(text, inner[0])
    if typ is bool:
        return _parse_bool(text)
    if typ is int:
        return int(text)
    if typ is float:
        return float(text)
    return text.strip()


@dataclass
class AdaptConfig:
    """All run parameters.

    Flat ``key = value`` configs set these fields directly or, for keys that
    belong to :class:`AdaptOptions` or :class:`SolverOptions`, the nested
    option objects.  ``N_st`` may be left unset when ``target_vertices`` is
    given; it is then derived with :func:`n_st_for_vertices`.
    """

    n_ptfx: int = 3
    n_adap: int = 10
    N_st: float | None = None
    target_vertices: float | None = None
    p: float = 2.0
    samples_per_interval: int = 20
    t_end: float = 3.0
    T_period: float = 6.0
    mesh_n: int = 40
    mesh_file: str | None = None
    h_min: float = 1e-3
    h_max: float = 0.3
    a_max: float = 100.0
    eps_det: float | None = None
    final_remesh: bool = False
    out_dir: str | None = None
    write_vtk: bool = True
    seed: int = 0
    adapt: AdaptOptions = field(default_factory=AdaptOptions)
    solver: SolverOptions = field(default_factory=SolverOptions)

    def __post_init__(self):
        if self.n_ptfx < 1 or self.n_adap < 1:
            raise ConfigError("n_ptfx and n_adap must be >= 1")
        if not self.t_end > 0:
            raise ConfigError("t_end must be positive")
        if self.N_st is None and self.target_vertices is None:
            raise ConfigError("set N_st or target_vertices")
        if self.samples_per_interval < 1:
            raise ConfigError("samples_per_interval must be >= 1")
        if self.mesh_n < 1:
            raise ConfigError("mesh_n must be >= 1")

    @classmethod
    def from_mapping(cls, items: dict) -> "AdaptConfig":
        """Build from string values; nested option keys are routed by name."""
        hints = typing.get_type_hints(cls)
        nested = {"adapt": AdaptOptions, "solver": SolverOptions}
        nested_hints = {k: typing.get_type_hints(t) for k, t in nested.items()}
        top, sub = {}, {k: {} for k in nested}
        for key, text in items.items():
            try:
                if key in hints and key not in nested:
                    top[key] = _parse_value(text, hints[key])
                    continue
                owner = next((k for k, h in nested_hints.items() if key in h), None)
                if owner is None:
                    raise ConfigError(f"unknown config key {key!r}")
                sub[owner][key] = _parse_value(text, nested_hints[owner][key])
            except ValueError as exc:
                if isinstance(exc, ConfigError):
                    raise
                raise ConfigError(f"bad value for {key!r}: {exc}") from exc
        try:
            for k, t in nested.items():
                top[k] = t(**sub[k])
            return cls(**top)
        except ValueError as exc:
            if isinstance(exc, ConfigError):
                raise
            raise ConfigError(str(exc)) from exc

    def boundaries(self) -> np.ndarray:
        return self.t_end * np.arange(self.n_adap + 1) / self.n_adap

    def steps_per_interval(self) -> list[int]:
        b = self.boundaries()
        return [step_count(b[i], b[i + 1], self.solver.dt) for i in range(self.n_adap)]

    def n_st(self) -> float:
        if self.N_st is not None:
            return float(self.N_st)
        return n_st_for_vertices(self.target_vertices, self.steps_per_interval())

    def metric_params(self) -> MetricParams:
        return MetricParams(N_st=self.n_st(), p=self.p, d=2,
                            tau_integrals=[float(max(n, 1)) for n in self.steps_per_interval()],
                            h_min=self.h_min, h_max=self.h_max, a_max=self.a_max, eps_det=self.eps_det)

    def problem(self) -> AdvectionProblem:
        return bubble_problem(self.T_period, self.t_end)

    def initial_mesh(self) -> Mesh:
        if self.mesh_file:
            return read_msh(self.mesh_file)
        return unit_square_mesh(self.mesh_n)


def n_st_for_vertices(vertices: float, steps) -> float:
    """Space-time complexity expected to give ``vertices`` per sub-interval mesh on average.

    Uses complexity ``C = V sqrt(3)/2 / fill`` per mesh and ``N_st = sum C n_i``.
    """
    c = vertices * math.sqrt(3.0) / 2.0 / UNIT_MESH_FILL
    return c * float(sum(max(n, 1) for n in steps))


@dataclass
class IterationRecord:
    index: int
    vertex_counts: list
    normalization: float | None = None
    return_error: float | None = None
    transfer_drift: list = field(default_factory=list)
    interval_drift: list = field(default_factory=list)
    overshoot: float = 0.0
    undershoot: float = 0.0
    timings: dict = field(default_factory=dict)

    @property
    def total_vertices(self) -> int:
        return int(sum(self.vertex_counts))

    @property
    def mean_vertices(self) -> float:
        return self.total_vertices / len(self.vertex_counts)


@dataclass
class PipelineState:
    config: AdaptConfig
    meshes: list
    solutions: list = field(default_factory=list)
    hessians: list = field(default_factory=list)
    steps: list = field(default_factory=list)
    metrics: list = field(default_factory=list)
    iterations: list = field(default_factory=list)
    adapt_calls: int = 0
    solve_sweeps: int = 0
    files: list = field(default_factory=list)

    @property
    def last(self) -> IterationRecord:
        return self.iterations[-1]


def _overshoot(u: np.ndarray):
    return max(float(u.max()) - 1.0, 0.0), max(-float(u.min()), 0.0)


def _sweep(state: PipelineState, j: int, rec: IterationRecord, problem: AdvectionProblem) -> None:
    """Solve all sub-intervals of iteration ``j`` on ``state.meshes``."""
    cfg = state.config
    b = cfg.boundaries()
    half = 0.5 * problem.T_period
    solutions, hessians = [], []
    u_prev = mesh_prev = None
    for i, mesh in enumerate(state.meshes):
        where = f"iteration {j + 1}, sub-interval {i + 1}"
        try:
            t0 = time.perf_counter()
            if i == 0:
                u = NodalField.from_function(mesh, problem.u0, "scalar")
            else:
                before = mass(mesh_prev, u_prev)
                u = interpolate_field(u_prev, mesh_prev, mesh)
                rec.transfer_drift.append(abs(mass(mesh, u) - before) / max(abs(before), 1e-300))
            t1 = time.perf_counter()
            m_start = mass(mesh, u)
            hit = {}

            def monitor(k, t, vals, _hit=hit):
                if abs(t - half) <= 1e-9 * problem.T_period:
                    _hit["u"] = vals.copy()

            u, acc = run_subinterval(mesh, u, b[i], b[i + 1], cfg.solver, problem,
                                     sampler=cfg.samples_per_interval, monitor=monitor)
            rec.interval_drift.append(abs(mass(mesh, u) - m_start) / max(abs(m_start), 1e-300))
            if "u" in hit:
                rec.return_error = l2_error(mesh, NodalField(mesh, hit["u"], "scalar"), problem.u0)
            over, under = _overshoot(u.values)
            rec.overshoot = max(rec.overshoot, over)
            rec.undershoot = max(rec.undershoot, under)
            H = acc.finalize()
            t2 = time.perf_counter()
        except Exception as exc:
            raise PipelineError(f"{where}: {type(exc).__name__}: {exc}") from exc
        rec.timings["transfer"] = rec.timings.get("transfer", 0.0) + (t1 - t0)
        rec.timings["solve"] = rec.timings.get("solve", 0.0) + (t2 - t1)
        solutions.append(u)
        hessians.append(H)
        if cfg.out_dir and cfg.write_vtk:
            path = os.path.join(cfg.out_dir, f"iter{j + 1}_interval{i + 1:03d}.vtk")
            write_vtk(mesh, {"u": u, "hessian": H}, path)
            state.files.append(path)
        u_prev, mesh_prev = u, mesh
    state.solutions, state.hessians = solutions, hessians
    state.solve_sweeps += 1


def fixed_point_adapt(config: AdaptConfig, progress=None, problem: AdvectionProblem | None = None) -> PipelineState:
    """Run the fixed-point loop; ``progress(record)`` is called after every iteration.

    ``problem`` replaces the bubble benchmark built from the config.
    """
    problem = problem or config.problem()
    mesh0 = config.initial_mesh()
    state = PipelineState(config, [mesh0] * config.n_adap)
    state.steps = config.steps_per_interval()
    params = config.metric_params()
    for j in range(config.n_ptfx):
        rec = IterationRecord(j + 1, [m.num_vertices for m in state.meshes])
        _sweep(state, j, rec, problem)
        if j < config.n_ptfx - 1 or config.final_remesh:
            t0 = time.perf_counter()
            try:
                rec.normalization = lp_normalization(state.meshes, state.hessians, params)
                metrics = lp_metric(state.meshes, state.hessians, params)
            except Exception as exc:
                raise PipelineError(f"iteration {j + 1}, metric: {type(exc).__name__}: {exc}") from exc
            t1 = time.perf_counter()
            new = []
            for i, (mesh, M) in enumerate(zip(state.meshes, metrics)):
                try:
                    new.append(adapt(mesh, M, config.adapt).mesh)
                except Exception as exc:
                    raise PipelineError(f"iteration {j + 1}, sub-interval {i + 1}: "
                                        f"{type(exc).__name__}: {exc}") from exc
                state.adapt_calls += 1
            rec.timings["metric"] = t1 - t0
            rec.timings["adapt"] = time.perf_counter() - t1
            state.metrics = metrics
            state.meshes = new
        state.iterations.append(rec)
        log.info("iteration %d: mean vertices %.0f, return error %s", j + 1, rec.mean_vertices, rec.return_error)
        if progress is not None:
            progress(rec)
    if config.out_dir:
        write_diagnostics(state, config.out_dir)
    return state


def uniform_run(config: AdaptConfig, vertices: float, problem: AdvectionProblem | None = None):
    """Solve the whole window on one structured mesh with about ``vertices`` vertices.

    Returns ``(mesh, u_end, record)`` using the same time step as the pipeline.
    """
    n = max(1, int(round(math.sqrt(vertices))) - 1)
    mesh = unit_square_mesh(n)
    problem = problem or config.problem()
    u = NodalField.from_function(mesh, problem.u0, "scalar")
    m0 = mass(mesh, u)
    rec = IterationRecord(0, [mesh.num_vertices] * config.n_adap)
    b = config.boundaries()
    t0 = time.perf_counter()
    for i in range(config.n_adap):
        start = mass(mesh, u)
        u, _ = run_subinterval(mesh, u, b[i], b[i + 1], config.solver, problem, sampler=None)
        rec.interval_drift.append(abs(mass(mesh, u) - start) / max(abs(start), 1e-300))
        over, under = _overshoot(u.values)
        rec.overshoot = max(rec.overshoot, over)
        rec.undershoot = max(rec.undershoot, under)
    rec.timings["solve"] = time.perf_counter() - t0
    if abs(config.t_end - 0.5 * problem.T_period) <= 1e-9 * problem.T_period:
        rec.return_error = l2_error(mesh, u, problem.u0)
    rec.transfer_drift = [abs(mass(mesh, u) - m0) / m0]
    return mesh, u, rec


def diagnostics_table(state: PipelineState) -> str:
    cfg = state.config
    lines = [f"# n_adap={cfg.n_adap} n_ptfx={cfg.n_ptfx} N_st={cfg.n_st():.6g} dt={cfg.solver.dt:g} "
             f"adapt_calls={state.adapt_calls} solve_sweeps={state.solve_sweeps}",
             "iter  mean_vertices  total_vertices  l2_return_error  max_transfer_drift  "
             "max_interval_drift  overshoot  undershoot"]
    for r in state.iterations:
        err = "n/a" if r.return_error is None else f"{r.return_error:.6e}"
        lines.append(f"{r.index:4d}  {r.mean_vertices:13.1f}  {r.total_vertices:14d}  {err:>15}  "
                     f"{max(r.transfer_drift, default=0.0):18.3e}  {max(r.interval_drift, default=0.0):18.3e}  "
                     f"{r.overshoot:9.3e}  {r.undershoot:10.3e}")
    lines.append("")
    lines.append("vertex counts per sub-interval")
    for r in state.iterations:
        lines.append(f"{r.index:4d}  " + " ".join(str(v) for v in r.vertex_counts))
    return "\n".join(lines) + "\n"


def timings_table(state: PipelineState) -> str:
    keys = ("transfer", "solve", "metric", "adapt")
    lines = ["iter  " + "  ".join(f"{k:>9}" for k in keys)]
    for r in state.iterations:
        lines.append(f"{r.index:4d}  " + "  ".join(f"{r.timings.get(k, 0.0):9.2f}" for k in keys))
    return "\n".join(lines) + "\n"


def write_diagnostics(state: PipelineState, out_dir: str) -> None:
    """``diagnostics.txt`` is deterministic; wall-clock times go to ``timings.txt``."""
    os.makedirs(out_dir, exist_ok=True)
    with open(os.path.join(out_dir, "diagnostics.txt"), "w") as f:
        f.write(diagnostics_table(state))
    with open(os.path.join(out_dir, "timings.txt"), "w") as f:
        f.write(timings_table(state))


def config_to_mapping(cfg: AdaptConfig) -> dict:
    """Flat ``key -> str`` view of a config, the inverse of :meth:`AdaptConfig.from_mapping`."""
    out = {}
    for f in dataclasses.fields(cfg):
        val = getattr(cfg, f.name)
        if dataclasses.is_dataclass(val):
            out.update({g.name: str(getattr(val, g.name)) for g in dataclasses.fields(val)})
        else:
            out[f.name] = "none" if val is None else str(val)
    return out
