"""Command-line interface: ``python -m plexadapt <command> ...``."""
from __future__ import annotations

import argparse
import logging
import os
import sys

import numpy as np

from .advection import SolverError
from .fields import FieldError, NodalField
from .io import FormatError, read_kv, read_metric, read_msh, write_metric, write_msh, write_vtk
from .mesh import MeshError, validate
from .metric import metric_complexity
from .pipeline import (AdaptConfig, ConfigError, PipelineError, diagnostics_table, fixed_point_adapt,
                       uniform_run)
from .remesh import AdaptOptions, adapt, cell_qualities, edge_lengths, unit_edge_fraction

__all__ = ["main", "build_parser"]

MODULE_ERRORS = (MeshError, FieldError, FormatError, ConfigError, PipelineError, SolverError, OSError, ValueError)


class UsageError(Exception):
    pass


def _load_config(path, required=True) -> AdaptConfig:
    if path is None:
        if required:
            raise UsageError("--config is required")
        return AdaptConfig(target_vertices=5000)
    return AdaptConfig.from_mapping(read_kv(path))


def _histogram(values, edges) -> list[str]:
    counts, _ = np.histogram(values, bins=edges)
    total = max(len(values), 1)
    lines = []
    for lo, hi, c in zip(edges[:-1], edges[1:], counts):
        lines.append(f"  [{lo:7.3f}, {hi:7.3f})  {c:8d}  {100.0 * c / total:6.2f}%")
    return lines


def cmd_validate(args) -> int:
    mesh = read_msh(args.mesh)
    rep = validate(mesh)
    if rep.ok:
        print(f"OK: {mesh.num_vertices} vertices, {mesh.num_edges} edges, {mesh.num_cells} cells")
        return 0
    print(str(rep), file=sys.stderr)
    return 1


def _metric_for(mesh, args):
    if args.metric:
        return read_metric(args.metric, mesh)
    if args.iso is not None:
        if not args.iso > 0:
            raise UsageError("--iso must be positive")
        return NodalField.constant(mesh, [1.0 / args.iso**2, 0.0, 1.0 / args.iso**2])
    raise UsageError("give a metric file or --iso H")


def cmd_diag(args) -> int:
    mesh = read_msh(args.mesh)
    M = _metric_for(mesh, args)
    L = edge_lengths(mesh, M)
    Q = cell_qualities(mesh, M)
    lo, hi = 1 / np.sqrt(2), np.sqrt(2)
    print(f"mesh: {mesh.num_vertices} vertices, {mesh.num_edges} edges, {mesh.num_cells} cells")
    print(f"metric complexity: {metric_complexity(mesh, M):.6g}")
    print(f"edges with metric length in [1/sqrt2, sqrt2]: {100.0 * unit_edge_fraction(L):.2f}%")
    print("edge length histogram")
    top = max(float(L.max()), 4.0)
    for line in _histogram(L, np.array([0.0, 0.4, lo, 1.0, hi, 2.5, top + 1e-9])):
        print(line)
    print(f"quality: min {Q.min():.4f} mean {Q.mean():.4f}")
    for line in _histogram(Q, np.linspace(0.0, 1.0 + 1e-9, 11)):
        print(line)
    return 0


def cmd_adapt(args) -> int:
    mesh = read_msh(args.mesh)
    M = read_metric(args.metric, mesh)
    opts = AdaptOptions()
    if args.config:
        opts = _load_config(args.config).adapt
    res = adapt(mesh, M, opts)
    out = args.out or "."
    os.makedirs(out, exist_ok=True)
    write_msh(res.mesh, os.path.join(out, "adapted.msh"))
    write_metric(res.metric, os.path.join(out, "adapted.metric"))
    frac = unit_edge_fraction(edge_lengths(res.mesh, res.metric))
    print(f"adapted: {res.mesh.num_vertices} vertices, {res.mesh.num_cells} cells, "
          f"{100 * frac:.1f}% unit edges, {res.stats['sweeps']} sweeps")
    return 0


def cmd_solve(args) -> int:
    cfg = _load_config(args.config, required=False)
    n = cfg.mesh_n
    mesh, u, rec = uniform_run(cfg, (n + 1) ** 2)
    if args.out:
        write_vtk(mesh, {"u": u}, os.path.join(args.out, "solution.vtk"))
    err = "n/a" if rec.return_error is None else f"{rec.return_error:.6e}"
    print(f"vertices {mesh.num_vertices}  dt {cfg.solver.dt:g}  L2 error vs u0 {err}  "
          f"max interval mass drift {max(rec.interval_drift):.3e}  overshoot {rec.overshoot:.3e}  "
          f"undershoot {rec.undershoot:.3e}")
    return 0


def cmd_run(args) -> int:
    cfg = _load_config(args.config)
    if args.out:
        cfg.out_dir = args.out
    state = fixed_point_adapt(cfg, progress=lambda r: logging.getLogger("plexadapt").info(
        "iteration %d done: mean vertices %.0f", r.index, r.mean_vertices))
    print(diagnostics_table(state), end="")
    return 0


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="flat key = value run configuration")
    common.add_argument("--out", help="output directory")
    common.add_argument("--verbose", "-v", action="store_true", help="log progress to stderr")
    p = argparse.ArgumentParser(prog="plexadapt", description="Anisotropic metric-based mesh adaptation")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("adapt", parents=[common], help="adapt an MSH mesh to a metric file")
    s.add_argument("mesh")
    s.add_argument("metric")
    s.set_defaults(func=cmd_adapt)

    s = sub.add_parser("solve", parents=[common], help="benchmark solve on a fixed structured mesh")
    s.set_defaults(func=cmd_solve)

    s = sub.add_parser("run", parents=[common], help="full fixed-point adaptive pipeline")
    s.set_defaults(func=cmd_run)

    s = sub.add_parser("validate", parents=[common], help="check mesh invariants")
    s.add_argument("mesh")
    s.set_defaults(func=cmd_validate)

    s = sub.add_parser("diag", parents=[common], help="edge length and quality histograms under a metric")
    s.add_argument("mesh")
    s.add_argument("metric", nargs="?")
    s.add_argument("--iso", type=float, help="use the isotropic metric (1/H^2) I instead of a file")
    s.set_defaults(func=cmd_diag)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"plexadapt {args.command}: {exc}", file=sys.stderr)
        return 2
    except MODULE_ERRORS as exc:
        print(f"plexadapt {args.command}: error: {exc}", file=sys.stderr)
        return 1


cli = main
