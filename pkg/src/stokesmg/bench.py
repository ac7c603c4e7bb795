"""Benchmark definitions, runs, sweeps and the ``stokesmg-bench`` command line."""

from __future__ import annotations

import argparse
import dataclasses
import itertools
import json
import logging
import os
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from typing import Callable, Optional, Sequence

import numpy as np

from . import mesh as meshmod
from .fespace import apply_dirichlet
from .mesh import tensor_multi_indices
from .metrics import RunRecord, aggregate_heatmap, median_time, write_runs
from .multigrid import Hierarchy, build_hierarchy, solve, with_smoothers

log = logging.getLogger("stokesmg.bench")

BENCHMARKS = ("laser", "cavity2d", "cavity3d", "turek", "cavity2d-dt")

#: Finest level index per benchmark (coarse meshes: 2x2, 2x2x2, 39-cell channel).
DEFAULT_LEVELS = {"laser": 3, "cavity2d": 3, "cavity3d": 2, "turek": 2, "cavity2d-dt": 3}

H_CHANNEL = 0.41


@dataclass
class Problem:
    name: str
    dim: int
    coarse: Callable[[], meshmod.LevelMesh]
    boundary_value: Callable
    dirichlet_ids: Optional[tuple] = None
    forcing: Optional[Callable] = None
    mu: float = 1.0
    gamma_rho: float = 0.0

    def meshes(self, levels):
        return meshmod.build_hierarchy(self.coarse(), levels)


def _box(dim):
    def make():
        m = meshmod.make_unit_hypercube(dim, 1)[-1]
        m.level, m.parent_of, m.child_index = 0, None, None
        return m
    return make


def _zero(x):
    return np.zeros_like(x)


def _lid(dim):
    # the closed top edge (including its corners) carries the lid velocity
    def g(x):
        v = np.zeros_like(x)
        v[np.isclose(x[:, -1], 1.0), 0] = 1.0
        return v
    return g


def laser_force(x):
    f = np.zeros_like(x)
    f[:, 1] = 0.001 * np.exp(-100.0 * np.sum((x - 0.75) ** 2, axis=1))
    return f


def turek_inflow(x):
    v = np.zeros_like(x)
    inflow = np.isclose(x[:, 0], 0.0)
    y = x[inflow, 1]
    v[inflow, 0] = 4.0 * y * (H_CHANNEL - y) / H_CHANNEL**2
    return v


def define_benchmark(name: str, dt: Optional[float] = None) -> Problem:
    if name == "laser":
        return Problem(name, 2, _box(2), _zero, forcing=laser_force, mu=0.0022)
    if name == "cavity2d":
        return Problem(name, 2, _box(2), _lid(2))
    if name == "cavity3d":
        return Problem(name, 3, _box(3), _lid(3))
    if name == "turek":
        ids = (meshmod.INFLOW, meshmod.WALL, meshmod.CYLINDER_ID)
        return Problem(name, 2, meshmod.make_channel_with_cylinder, turek_inflow, dirichlet_ids=ids)
    if name == "cavity2d-dt":
        dt = 1.0 if dt is None else float(dt)
        if dt <= 0:
            raise ValueError("time step must be positive")
        # one implicit Euler step from rest: (1/dt) u - div grad u + grad p = 0
        return Problem(name, 2, _box(2), _lid(2), gamma_rho=1.0 / dt)
    raise ValueError(f"unknown benchmark {name!r}; choose from {', '.join(BENCHMARKS)}")


@dataclass
class BenchmarkConfig:
    benchmark: str = "cavity2d"
    levels: Optional[int] = None
    k_A: int = 1
    k_S: int = 1
    steps: int = 2
    cycle: str = "W"
    diag: str = "loc"
    dt: Optional[float] = None
    tol: float = 1e-10
    max_iter: int = 15
    degree: int = 2
    out: Optional[str] = None
    vtk: Optional[str] = None

    def __post_init__(self):
        if self.benchmark not in BENCHMARKS:
            raise ValueError(f"unknown benchmark {self.benchmark!r}")
        if self.levels is None:
            self.levels = DEFAULT_LEVELS[self.benchmark]
        if self.cycle not in ("V", "W"):
            raise ValueError("cycle must be V or W")
        if self.diag not in ("exact", "d", "p", "loc"):
            raise ValueError(f"unknown diagonal choice {self.diag!r}")

    @classmethod
    def from_json(cls, path, **overrides):
        with open(path) as fh:
            data = json.load(fh)
        unknown = set(data) - {f.name for f in dataclasses.fields(cls)}
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        data.update({k: v for k, v in overrides.items() if v is not None})
        return cls(**data)


def setup(config: BenchmarkConfig):
    """Hierarchy and homogenized right-hand side for ``config``.

    Returns ``(problem, hierarchy, b, x_D)``; the solution is ``x_D + x``
    where ``x`` solves the constrained system with right-hand side ``b``.
    """
    prob = define_benchmark(config.benchmark, config.dt)
    meshes = prob.meshes(config.levels)
    h = build_hierarchy(meshes, config.k_A, config.k_S, config.steps, config.cycle, config.diag,
                        prob.mu, prob.gamma_rho, config.degree, prob.dirichlet_ids)
    op = h.finest
    dm = op.dofmap
    x_D = apply_dirichlet(dm, prob.boundary_value, np.zeros(dm.size))
    b = -op.apply_K(x_D, constrained=False)
    if prob.forcing is not None:
        b[: dm.n] += op.load_vector(prob.forcing)
    op.constraints.zero(b)
    return prob, h, b, x_D


def _record(config, h: Hierarchy, result, setup_time):
    return RunRecord(config.benchmark, config.levels, config.k_A, config.k_S, config.steps,
                     config.cycle, config.diag, config.dt, result.residuals,
                     median_time(result.iteration_times), result.status,
                     h.dofmaps[-1].size, setup_time)


def run(config: BenchmarkConfig):
    """Set up, solve and optionally write fields. Returns ``(record, solution, hierarchy)``."""
    t0 = time.perf_counter()
    prob, h, b, x_D = setup(config)
    t_setup = time.perf_counter() - t0
    log.info("%s: L=%d, %d dofs, setup %.2fs", config.benchmark, config.levels, h.dofmaps[-1].size, t_setup)
    res = solve(h, b, config.tol, config.max_iter)
    x = x_D + res.x
    rec = _record(config, h, res, t_setup)
    if config.vtk:
        write_fields(h.dofmaps[-1], x, config.vtk)
    return rec, x, h


def _sweep_one(args):
    config, h, b = args
    res = solve(h, b, config.tol, config.max_iter)
    return _record(config, h, res, float("nan"))


def sweep(config: BenchmarkConfig, k_A: Sequence[int] = range(4), k_S: Sequence[int] = range(4),
          steps: Sequence[int] = range(1, 5), jobs: int = 0):
    """Run the ``k_A x k_S x m`` grid; returns ``(records, rates_csv, reductions_csv)``.

    Levels, operators and the coarse factorization are shared across the
    grid; smoothers are set up once per degree pair. ``jobs > 0`` runs the
    solves in worker processes and drops the timing columns.
    """
    _, base, b, _ = setup(dataclasses.replace(config, k_A=min(k_A), k_S=min(k_S)))
    tasks = []
    for ka in k_A:
        for ks in k_S:
            h = with_smoothers(base, ka, ks, config.diag)
            for m in steps:
                cfg = dataclasses.replace(config, k_A=ka, k_S=ks, steps=m)
                tasks.append((cfg, dataclasses.replace(h, steps=m, calls=[0] * (h.L + 1)), b))
    if jobs > 0:
        with ProcessPoolExecutor(jobs) as ex:
            records = list(ex.map(_sweep_one, tasks))
        for r in records:
            r.T_iter = float("nan")
    else:
        records = [_sweep_one(t) for t in tasks]
    rates, reductions = aggregate_heatmap(records)
    return records, rates, reductions


def write_fields(dofmap, x, path):
    """Legacy ASCII VTK file: the velocity lattice as points, sub-cells as cells.

    Each ``Q_k`` cell is split into ``k**d`` linear sub-cells. The pressure
    is interpolated to the velocity nodes and written with the physical sign
    (``-p``, since the discrete form is ``b(u, q) = (q, div u)``).
    """
    dim, k, ns = dofmap.dim, dofmap.k, dofmap.n_scalar
    pts = np.zeros((ns, 3))
    pts[:, :dim] = dofmap.velocity_points
    vel = np.zeros((ns, 3))
    vel[:, :dim] = x[: dofmap.n].reshape(dim, ns).T

    psi = dofmap.basis_p.tensor_values(dofmap.basis_v.reference_nodes(dim))
    pres = np.empty(ns)
    pres[dofmap.l2g_v] = x[dofmap.n:][dofmap.l2g_p] @ psi.T

    stride = (k + 1) ** np.arange(dim)
    corners = [(0, 0), (1, 0), (1, 1), (0, 1)]
    if dim == 3:
        corners = [c + (0,) for c in corners] + [c + (1,) for c in corners]
    corners = np.array(corners)
    sub = tensor_multi_indices(k, dim)
    local = ((sub[:, None, :] + corners[None, :, :]) * stride).sum(axis=-1)  # (k^d, 2^d)
    conn = dofmap.l2g_v[:, local].reshape(-1, 2**dim)
    vtk_type = 9 if dim == 2 else 12

    with open(path, "w") as fh:
        fh.write("# vtk DataFile Version 3.0\nstokesmg solution\nASCII\nDATASET UNSTRUCTURED_GRID\n")
        fh.write(f"POINTS {ns} double\n")
        np.savetxt(fh, pts, fmt="%.12g")
        fh.write(f"CELLS {conn.shape[0]} {conn.size + conn.shape[0]}\n")
        np.savetxt(fh, np.column_stack([np.full(conn.shape[0], 2**dim), conn]), fmt="%d")
        fh.write(f"CELL_TYPES {conn.shape[0]}\n")
        np.savetxt(fh, np.full(conn.shape[0], vtk_type), fmt="%d")
        fh.write(f"POINT_DATA {ns}\nVECTORS velocity double\n")
        np.savetxt(fh, vel, fmt="%.12g")
        fh.write("SCALARS pressure double 1\nLOOKUP_TABLE default\n")
        np.savetxt(fh, -pres, fmt="%.12g")


# ---------------------------------------------------------------------------
# command line


def _int_list(text):
    return [int(t) for t in str(text).split(",") if t.strip()]


def _str_list(text):
    return [t.strip() for t in str(text).split(",") if t.strip()]


def _float_list(text):
    return [float(t) for t in str(text).split(",") if t.strip()]


def build_parser():
    p = argparse.ArgumentParser(
        prog="stokesmg-bench",
        description="Monolithic multigrid with Chebyshev-Uzawa smoothing on Taylor-Hood benchmarks. "
                    "Comma-separated values for --ka/--ks/--steps/--diag/--cycle run a sweep.")
    p.add_argument("--benchmark", choices=BENCHMARKS)
    p.add_argument("--levels", type=int, help="finest level index L (level 0 is the coarse mesh)")
    p.add_argument("--ka", type=_int_list, help="Chebyshev degree(s) for the velocity block")
    p.add_argument("--ks", type=_int_list, help="Chebyshev degree(s) for the Schur complement")
    p.add_argument("--steps", type=_int_list, help="pre/post smoothing step(s) m")
    p.add_argument("--cycle", type=_str_list, help="V and/or W")
    p.add_argument("--diag", type=_str_list, help="Schur diagonal choice(s): exact, d, p, loc")
    p.add_argument("--dt", type=_float_list, help="time step(s) for cavity2d-dt (gamma = 1/dt)")
    p.add_argument("--tol", type=float)
    p.add_argument("--max-iter", dest="max_iter", type=int)
    p.add_argument("--degree", type=int, help="velocity degree k of Q_k-Q_{k-1} (default 2)")
    p.add_argument("--out", help="output directory for CSV tables")
    p.add_argument("--vtk", help="write the solution of a single run to this VTK file")
    p.add_argument("--config", help="JSON file with BenchmarkConfig fields; flags override it")
    p.add_argument("--jobs", type=int, default=0, help="parallel sweep workers (disables timings)")
    p.add_argument("-v", "--verbose", action="store_true")
    return p


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    lists = {"k_A": args.ka, "k_S": args.ks, "steps": args.steps, "cycle": args.cycle, "diag": args.diag,
             "dt": args.dt}
    scalars = {"benchmark": args.benchmark, "levels": args.levels, "tol": args.tol,
               "max_iter": args.max_iter, "degree": args.degree, "out": args.out, "vtk": args.vtk}
    firsts = {k: v[0] for k, v in lists.items() if v}
    if args.config:
        base = BenchmarkConfig.from_json(args.config, **scalars, **firsts)
    else:
        base = BenchmarkConfig(**{k: v for k, v in {**scalars, **firsts}.items() if v is not None})
    grid = {k: (v if v else [getattr(base, k)]) for k, v in lists.items()}
    out = base.out or "."
    os.makedirs(out, exist_ok=True)

    is_sweep = any(len(v) > 1 for v in grid.values())
    records = []
    if not is_sweep:
        rec, _, _ = run(base)
        records.append(rec)
    else:
        for dt, cyc, diag in itertools.product(grid["dt"], grid["cycle"], grid["diag"]):
            cfg = dataclasses.replace(base, cycle=cyc, diag=diag, dt=dt, vtk=None)
            recs, rates, reds = sweep(cfg, grid["k_A"], grid["k_S"], grid["steps"], args.jobs)
            records.extend(recs)
            stem = os.path.join(out, f"heatmap_{cfg.benchmark}_L{cfg.levels}_{diag}_{cyc}")
            if dt is not None:
                stem += f"_dt{dt:g}"
            with open(stem + "_rates.csv", "w") as fh:
                fh.write(rates)
            with open(stem + "_reductions.csv", "w") as fh:
                fh.write(reds)
            tag = "" if dt is None else f", dt={dt:g}"
            print(f"# q heatmap ({cfg.benchmark}, diag={diag}, cycle={cyc}{tag}); rows m, columns k_A,k_S")
            print(rates, end="")
    with open(os.path.join(out, f"runs_{base.benchmark}.csv"), "w", newline="") as fh:
        write_runs(records, fh)
    for r in records:
        q = r.q if r.converging else None
        print(f"{r.benchmark} L={r.levels} dofs={r.dofs} k=({r.k_A},{r.k_S}) m={r.m} {r.cycle} "
              f"{r.diag}: {r.status} after {len(r.residuals) - 1} it, q={'-' if q is None else f'{q:.4f}'}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
