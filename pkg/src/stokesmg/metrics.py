"""Reduction rates, time-to-reduction and heatmap tables."""

from __future__ import annotations

import csv
import io
import math
from dataclasses import asdict, dataclass, field
from statistics import median
from typing import List, Optional, Sequence

HYPHEN = "-"

#: Column order of the per-run CSV (stable).
RUN_COLUMNS = ("benchmark", "levels", "dofs", "k_A", "k_S", "m", "cycle", "diag", "dt",
               "status", "iterations", "q", "T_iter", "T_eps", "reductions_per_second",
               "setup_time", "residuals")


def compute_q(residuals: Sequence[float]) -> Optional[float]:
    """``(r_j / r_{j-3})^(1/3)`` with ``j`` the last iteration; ``None`` if undefined."""
    if len(residuals) < 4:
        return None
    a, b = residuals[-1], residuals[-4]
    if not (math.isfinite(a) and math.isfinite(b)) or b <= 0:
        return None
    return (a / b) ** (1.0 / 3.0)


def compute_T(q: Optional[float], T_iter: float, eps: float = 0.1) -> Optional[float]:
    """Time to reduce the residual by ``eps``: ``T_iter log(eps) / log(q)``."""
    if q is None or not 0.0 < q < 1.0 or not T_iter > 0.0:
        return None
    return T_iter * math.log(eps) / math.log(q)


def classify(residuals: Sequence[float], solver_status: str = "max-iter") -> str:
    """``converged``, ``max-iter`` or ``diverged``.

    Diverged: reported so by the solver, a non-finite residual, or ``q >= 1``.
    """
    if solver_status == "diverged" or any(not math.isfinite(r) for r in residuals):
        return "diverged"
    q = compute_q(residuals)
    if q is not None and q >= 1.0:
        return "diverged"
    return solver_status


@dataclass
class RunRecord:
    benchmark: str
    levels: int
    k_A: int
    k_S: int
    m: int
    cycle: str = "W"
    diag: str = "loc"
    dt: Optional[float] = None
    residuals: List[float] = field(default_factory=list)
    T_iter: float = float("nan")
    status: str = "max-iter"
    dofs: int = 0
    setup_time: float = float("nan")

    def __post_init__(self):
        self.status = classify(self.residuals, self.status)

    @property
    def q(self):
        return compute_q(self.residuals)

    @property
    def converging(self):
        return self.status != "diverged" and self.q is not None

    @property
    def T_eps(self):
        return compute_T(self.q, self.T_iter) if self.converging else None

    @property
    def reductions_per_second(self):
        T = self.T_eps
        return 1.0 / T if T else None

    def row(self):
        fmt = lambda v: HYPHEN if v is None else v
        d = asdict(self)
        d.update(iterations=len(self.residuals) - 1,
                 q=fmt(self.q) if self.converging else HYPHEN,
                 T_eps=fmt(self.T_eps), reductions_per_second=fmt(self.reductions_per_second),
                 dt=fmt(self.dt), residuals=" ".join(f"{r:.6e}" for r in self.residuals))
        return {k: d[k] for k in RUN_COLUMNS}


def median_time(times: Sequence[float]) -> float:
    return float(median(times)) if times else float("nan")


def write_runs(records: Sequence[RunRecord], stream):
    w = csv.DictWriter(stream, fieldnames=list(RUN_COLUMNS))
    w.writeheader()
    for r in records:
        w.writerow(r.row())


def _table(records, value):
    cols = sorted({(r.k_A, r.k_S) for r in records})
    rows = sorted({r.m for r in records})
    cell = {(r.m, r.k_A, r.k_S): r for r in records}
    out = io.StringIO()
    w = csv.writer(out, lineterminator="\n")
    w.writerow(["m"] + [f"{a},{s}" for a, s in cols])
    for m in rows:
        line = [m]
        for a, s in cols:
            r = cell.get((m, a, s))
            v = value(r) if r is not None and r.converging else None
            line.append(HYPHEN if v is None else f"{v:.4f}")
        w.writerow(line)
    return out.getvalue()


def aggregate_heatmap(records: Sequence[RunRecord]):
    """Two CSV strings: rates ``q`` and ``eps``-reductions per second.

    Rows are smoothing steps ``m``, columns ``"k_A,k_S"``; non-convergent
    cells hold a hyphen. With no records only the header ``m`` is written.
    """
    records = list(records)
    return _table(records, lambda r: r.q), _table(records, lambda r: r.reductions_per_second)
