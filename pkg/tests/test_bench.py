import json
import math

import numpy as np
import pytest

from hyperode.bench import (
    PARETO_HEADER,
    SPEEDUP_HEADER,
    pareto_sweep,
    solver_name,
    speedup_table,
    write_manifest,
    write_pareto_csv,
    write_speedup_csv,
)
from hyperode.dopri5 import solve_dopri5
from hyperode.hypersolver import make_hypersolver
from hyperode.metrics import mlp_macs
from hyperode.problems import ProblemSpec, get_problem
from hyperode.solvers import VectorField, tableau_euler, tableau_midpoint, tableau_rk4

EULER = tableau_euler()
MIDPOINT = tableau_midpoint()
RK4 = tableau_rk4()
LINEAR1 = get_problem("linear1")


def _cubic_decay_problem(span_end=8.0):
    # dz = -z^3 decays smoothly from z0=2, but explicit Euler at eps=1
    # overshoots and overflows within a few steps
    field = VectorField(lambda s, z: -z ** 3, dim=1, name="cube", mac_per_eval=1)
    return ProblemSpec(name="cube", dim=1, field=field,
                       ic_sampler=lambda seed: np.array([2.0]),
                       span_default=(0.0, span_end), has_exact=False)


# --- pareto_sweep -------------------------------------------------------------


class TestParetoSweep:
    def test_single_cell_accounting(self):
        rows = pareto_sweep([EULER], LINEAR1, [10], [0, 1])
        assert len(rows) == 1
        r = rows[0]
        assert r.solver == "euler"
        assert r.K == 10
        assert r.eps == pytest.approx(0.1)
        assert r.nfe_f == 10  # 1 stage * 10 steps
        assert r.nfe_g == 0
        assert r.macs == 10 * LINEAR1.field.mac_per_eval
        assert not r.failed
        assert 0.0 < r.mape < 100.0
        assert r.global_err > 0.0
        assert r.walltime_ns > 0

    def test_doubling_K_doubles_macs_and_reduces_error(self):
        rows = pareto_sweep([EULER], LINEAR1, [10, 20], [0, 1, 2, 3])
        by_K = {r.K: r for r in rows}
        assert by_K[20].macs == 2 * by_K[10].macs
        assert by_K[20].mape < by_K[10].mape
        assert by_K[20].global_err < by_K[10].global_err

    def test_hyper_cell_counts_corrector(self):
        hs = make_hypersolver(EULER, n_z=1, hidden=(4,), seed=3)
        rows = pareto_sweep([hs], LINEAR1, [10], [0])
        r = rows[0]
        assert r.solver == "hyper-euler"
        assert r.nfe_f == 10
        assert r.nfe_g == 10
        assert r.macs == 10 * (LINEAR1.field.mac_per_eval + mlp_macs(hs.g))

    def test_rows_sorted_by_macs(self):
        rows = pareto_sweep([RK4, EULER], LINEAR1, [5, 10], [0])
        macs = [r.macs for r in rows]
        assert macs == sorted(macs)
        assert len(rows) == 4

    @pytest.mark.filterwarnings("ignore:overflow", "ignore:invalid value")
    def test_failed_cell_flagged_sweep_continues(self):
        prob = _cubic_decay_problem()
        rows = pareto_sweep([EULER], prob, [8, 64], [0])
        by_K = {r.K: r for r in rows}
        assert by_K[8].failed
        assert math.isnan(by_K[8].mape)
        assert by_K[8].macs == 8  # cost model still reported for the cell
        assert not by_K[64].failed
        assert math.isfinite(by_K[64].mape)

    def test_deterministic_modulo_walltime(self):
        a = pareto_sweep([EULER, MIDPOINT], LINEAR1, [4, 8], [0, 1])
        b = pareto_sweep([EULER, MIDPOINT], LINEAR1, [4, 8], [0, 1])
        for ra, rb in zip(a, b):
            assert (ra.solver, ra.K, ra.nfe_f, ra.nfe_g, ra.macs) == \
                   (rb.solver, rb.K, rb.nfe_f, rb.nfe_g, rb.macs)
            assert ra.eps == rb.eps
            assert ra.mape == rb.mape
            assert ra.global_err == rb.global_err

    def test_jobs_parallel_matches_serial(self):
        serial = pareto_sweep([EULER, MIDPOINT], LINEAR1, [4, 8], [0, 1])
        parallel = pareto_sweep([EULER, MIDPOINT], LINEAR1, [4, 8], [0, 1], jobs=4)
        for rs, rp in zip(serial, parallel):
            assert rs.solver == rp.solver and rs.K == rp.K
            assert rs.mape == rp.mape and rs.global_err == rp.global_err


# --- speedup_table ------------------------------------------------------------


class TestSpeedupTable:
    def test_reference_row_is_dopri5_at_speedup_one(self):
        rows = speedup_table([], LINEAR1, 1.0, [0])
        assert len(rows) == 1
        ref = rows[0]
        assert ref.solver == "dopri5"
        assert ref.speedup == 1.0
        res = solve_dopri5(LINEAR1.field.clone(), LINEAR1.sample_ic(0),
                           LINEAR1.span_default, 1e-7, 1e-7)
        assert ref.K == res.accepted
        assert ref.nfe_f == res.nfe

    def test_infinite_budget_gives_K1(self):
        rows = speedup_table([EULER], LINEAR1, float("inf"), [0])
        euler_row = rows[1]
        assert euler_row.solver == "euler"
        assert euler_row.K == 1
        assert euler_row.nfe_f == 1
        assert euler_row.reachable

    def test_found_K_is_minimal(self):
        budget = 1.0  # percent
        seeds = [0, 1]
        rows = speedup_table([EULER], LINEAR1, budget, seeds)
        K_min = rows[1].K
        assert rows[1].mape <= budget

        def mean_mape(K):
            vals = []
            for seed in seeds:
                ic = LINEAR1.sample_ic(seed)
                ref = solve_dopri5(LINEAR1.field.clone(), ic,
                                   LINEAR1.span_default, 1e-7, 1e-7).final
                from hyperode.solvers import solve_fixed
                traj = solve_fixed(EULER, LINEAR1.field.clone(), ic,
                                   LINEAR1.span_default, K)
                vals.append(float(np.mean(
                    np.abs(traj.terminal - ref) / np.abs(ref)) * 100.0))
            return float(np.mean(vals))

        assert mean_mape(K_min) <= budget
        assert K_min == 1 or mean_mape(K_min - 1) > budget

    def test_higher_order_needs_fewer_steps(self):
        rows = speedup_table([EULER, MIDPOINT], LINEAR1, 0.5, [0, 1])
        by_name = {r.solver: r for r in rows}
        assert by_name["midpoint"].K < by_name["euler"].K

    def test_unreachable_budget_flagged(self):
        rows = speedup_table([EULER], LINEAR1, 1e-12, [0], K_max=16)
        row = rows[1]
        assert not row.reachable
        assert math.isnan(row.speedup)
        assert row.K == 16

    def test_hypersolver_row_named_and_reachable(self):
        hs = make_hypersolver(EULER, n_z=1, hidden=(4,), seed=0)
        rows = speedup_table([hs], LINEAR1, float("inf"), [0])
        assert rows[1].solver == "hyper-euler"
        assert rows[1].K == 1


# --- output files -------------------------------------------------------------


class TestOutputs:
    def test_pareto_csv_header_and_rows(self, tmp_path):
        rows = pareto_sweep([EULER], LINEAR1, [5, 10], [0])
        path = tmp_path / "pareto.csv"
        write_pareto_csv(rows, path)
        lines = path.read_text().splitlines()
        assert lines[0] == PARETO_HEADER
        assert lines[0] == "solver,K,eps,nfe_f,nfe_g,macs,mape,global_err,walltime_ns"
        assert len(lines) == 3
        cells = lines[1].split(",")
        assert cells[0] == "euler"
        assert int(cells[1]) == rows[0].K
        assert float(cells[6]) == rows[0].mape

    def test_speedup_csv_header(self, tmp_path):
        rows = speedup_table([EULER], LINEAR1, float("inf"), [0])
        path = tmp_path / "speedup.csv"
        write_speedup_csv(rows, path)
        lines = path.read_text().splitlines()
        assert lines[0] == SPEEDUP_HEADER
        assert len(lines) == 3
        assert lines[1].startswith("dopri5,")

    def test_manifest_round_trip(self, tmp_path):
        path = tmp_path / "manifest.json"
        write_manifest(path, "linear1", [0, 1, 2], extra={"bundles": {"hyper-euler": "abc"}})
        doc = json.loads(path.read_text())
        assert doc["problem"] == "linear1"
        assert doc["seeds"] == [0, 1, 2]
        assert doc["tolerances"]["truth_atol"] == 1e-7
        assert doc["bundles"] == {"hyper-euler": "abc"}


def test_solver_name_helper():
    assert solver_name(EULER) == "euler"
    hs = make_hypersolver(MIDPOINT, n_z=2, hidden=(4,))
    assert solver_name(hs) == "hyper-midpoint"
