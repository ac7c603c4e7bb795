import io
import math

import pytest
from hypothesis import given, strategies as st

from stokesmg.metrics import (HYPHEN, RUN_COLUMNS, RunRecord, aggregate_heatmap, classify, compute_T,
                              compute_q, median_time, write_runs)


class TestComputeQ:
    def test_geometric(self):
        assert compute_q([1, 0.5, 0.25, 0.125]) == pytest.approx(0.5, rel=1e-15)

    def test_uses_last_three_steps(self):
        assert compute_q([1, 1e-1, 1e-2, 1e-3, 1e-4]) == pytest.approx(0.1, rel=1e-15)

    def test_growth_is_diverged(self):
        hist = [1, 0.9, 0.95, 1.1, 1.3]
        assert compute_q(hist) > 1.0
        assert classify(hist) == "diverged"

    def test_too_short(self):
        assert compute_q([1.0, 0.1, 0.01]) is None

    @given(st.lists(st.floats(1e-8, 1e3), min_size=4, max_size=12), st.floats(1e-6, 1e6))
    def test_scale_invariant(self, hist, c):
        assert compute_q([c * r for r in hist]) == pytest.approx(compute_q(hist), rel=1e-12)


class TestComputeT:
    def test_examples(self):
        assert compute_T(0.1, 1.0) == pytest.approx(1.0, rel=1e-15)
        assert compute_T(0.5, 2.0) == pytest.approx(6.643856189774724, rel=1e-14)
        assert compute_T(1.0, 1.0) is None
        assert compute_T(None, 1.0) is None

    @given(st.floats(1e-6, 0.999), st.floats(1e-6, 0.999), st.floats(1e-4, 1e2))
    def test_monotone_in_q(self, q1, q2, t):
        lo, hi = sorted((q1, q2))
        assert compute_T(lo, t) <= compute_T(hi, t)


class TestRunRecord:
    def test_converged_row(self):
        r = RunRecord("cavity2d", 3, 1, 1, 2, residuals=[1, 0.1, 0.01, 0.001, 1e-4], T_iter=0.5,
                      status="converged", dofs=2467)
        row = r.row()
        assert list(row) == list(RUN_COLUMNS)
        assert row["q"] == pytest.approx(0.1)
        assert row["T_eps"] == pytest.approx(0.5)
        assert row["reductions_per_second"] == pytest.approx(2.0)
        assert row["iterations"] == 4 and row["dt"] == HYPHEN

    def test_diverged_row(self):
        r = RunRecord("turek", 1, 0, 0, 1, residuals=[1.0, 20.0, 500.0, 1e4], status="diverged")
        assert not r.converging
        assert r.row()["q"] == HYPHEN and r.row()["T_eps"] == HYPHEN

    def test_non_finite(self):
        assert RunRecord("laser", 1, 0, 0, 1, residuals=[1.0, math.inf]).status == "diverged"

    def test_write_runs(self):
        buf = io.StringIO()
        write_runs([RunRecord("laser", 1, 0, 0, 1, residuals=[1.0, 0.5])], buf)
        header, line = buf.getvalue().splitlines()
        assert header.split(",") == list(RUN_COLUMNS)
        assert line.startswith("laser,1,")

    def test_median_time(self):
        assert median_time([3.0, 1.0, 2.0]) == 2.0
        assert math.isnan(median_time([]))


class TestHeatmap:
    def test_empty(self):
        assert aggregate_heatmap([]) == ("m\n", "m\n")

    def test_single(self):
        rec = RunRecord("cavity2d", 2, 2, 1, 3, residuals=[1, 0.5, 0.25, 0.125], T_iter=1.0,
                        status="converged")
        rates, red = aggregate_heatmap([rec])
        assert rates == 'm,"2,1"\n3,0.5000\n'
        assert red.splitlines()[1] == f"3,{1 / compute_T(0.5, 1.0):.4f}"

    def test_hyphen(self):
        recs = [RunRecord("turek", 1, 0, 0, m, residuals=[1, 30, 900, 3e4], status="diverged")
                for m in (1, 2)]
        recs.append(RunRecord("turek", 1, 1, 0, 1, residuals=[1, 0.5, 0.25, 0.125], T_iter=1.0))
        rates, _ = aggregate_heatmap(recs)
        assert rates.splitlines() == ['m,"0,0","1,0"', "1,-,0.5000", "2,-,-"]
