import json
import math

import numpy as np
import pytest

from hyperode.errors import MeshError, NumericError, RangeError, SingularParameterError
from hyperode.solvers import (
    ButcherTableau,
    Trajectory,
    VectorField,
    load_trajectory,
    rk_step,
    save_trajectory,
    solve_fixed,
    tableau_alpha,
    tableau_euler,
    tableau_heun,
    tableau_midpoint,
    tableau_rk4,
)


def exp_field():
    return VectorField(lambda s, z: z, dim=1, name="exp")


def zero_field(dim=2):
    return VectorField(lambda s, z: np.zeros(dim), dim=dim, name="zero")


ALL_TABLEAUS = [tableau_euler(), tableau_midpoint(), tableau_heun(), tableau_rk4()] + [
    tableau_alpha(a) for a in (0.3, 0.4, 0.5, 0.6, 0.7, 0.9, 1.0, 2.0, -0.5)
]


class TestTableaus:
    @pytest.mark.parametrize("tab", ALL_TABLEAUS, ids=lambda t: t.name)
    def test_consistency(self, tab):
        assert abs(tab.b.sum() - 1.0) <= 1e-12
        assert np.max(np.abs(tab.a.sum(axis=1) - tab.c)) <= 1e-12
        assert tab.c[0] == 0.0
        assert np.all(np.triu(tab.a) == 0.0)

    def test_orders(self):
        assert tableau_euler().order == 1
        assert tableau_midpoint().order == 2
        assert tableau_heun().order == 2
        assert tableau_rk4().order == 4
        assert tableau_alpha(0.7).order == 2

    def test_alpha_half_is_midpoint(self):
        a, m = tableau_alpha(0.5), tableau_midpoint()
        assert np.array_equal(a.a, m.a)
        assert np.array_equal(a.b, m.b)
        assert np.array_equal(a.c, m.c)

    def test_alpha_one_is_heun(self):
        a, h = tableau_alpha(1.0), tableau_heun()
        assert np.allclose(a.b, h.b, atol=1e-15)
        assert np.array_equal(a.a, h.a)

    def test_alpha_zero_rejected(self):
        with pytest.raises(SingularParameterError):
            tableau_alpha(0.0)

    def test_invalid_tableaus_rejected(self):
        with pytest.raises(ValueError):
            ButcherTableau("bad", 1, a=[[0.5]], b=[1.0], c=[0.0])  # not strictly lower
        with pytest.raises(ValueError):
            ButcherTableau("bad", 1, a=[[0.0]], b=[0.9], c=[0.0])  # sum(b) != 1
        with pytest.raises(ValueError):
            ButcherTableau("bad", 2, a=[[0.0, 0.0], [0.3, 0.0]], b=[0.5, 0.5], c=[0.0, 0.5])
        with pytest.raises(ValueError):
            ButcherTableau("bad", 2, a=[[0.0, 0.0], [0.5, 0.0]], b=[0.5, 0.5], c=[0.1, 0.5])


class TestRkStep:
    @pytest.mark.parametrize("tab", ALL_TABLEAUS[:4], ids=lambda t: t.name)
    def test_zero_field_fixed_point(self, tab):
        z = np.array([1.5, -2.0])
        psi, z_next = rk_step(tab, zero_field(), 0.0, z, 0.25)
        assert np.array_equal(z_next, z)
        assert np.all(psi == 0.0)

    def test_euler_exponential(self):
        _, z_next = rk_step(tableau_euler(), exp_field(), 0.0, np.array([1.0]), 0.1)
        assert abs(z_next[0] - 1.1) < 1e-15

    def test_rk4_exponential(self):
        # truncated exponential series: sum_{i=0..4} 0.1^i / i!
        _, z_next = rk_step(tableau_rk4(), exp_field(), 0.0, np.array([1.0]), 0.1)
        expected = sum(0.1 ** i / math.factorial(i) for i in range(5))
        assert abs(z_next[0] - expected) < 1e-15
        assert abs(z_next[0] - math.exp(0.1)) < 9e-8
        assert abs(z_next[0] - math.exp(0.1)) > 8e-8

    def test_psi_update_identity(self):
        f = VectorField(lambda s, z: np.sin(z) + s, dim=2)
        z = np.array([0.3, -0.8])
        psi, z_next = rk_step(tableau_heun(), f, 0.2, z, 0.05)
        assert np.allclose(z_next, z + 0.05 * psi, atol=1e-16)

    @pytest.mark.parametrize("tab", ALL_TABLEAUS[:4], ids=lambda t: t.name)
    def test_nfe_equals_stage_count(self, tab):
        f = exp_field()
        rk_step(tab, f, 0.0, np.array([1.0]), 0.1)
        assert f.nfe == tab.stages

    def test_rejects_nonpositive_eps(self):
        with pytest.raises(RangeError):
            rk_step(tableau_euler(), exp_field(), 0.0, np.array([1.0]), 0.0)

    def test_nonfinite_stage_raises_with_location(self):
        f = VectorField(lambda s, z: z * np.inf, dim=1)
        with pytest.raises(NumericError) as err:
            rk_step(tableau_heun(), f, 0.5, np.array([1.0]), 0.1)
        assert err.value.stage == 1
        assert err.value.s == 0.5


class TestSolveFixed:
    def test_zero_field_constant_trajectory(self):
        traj = solve_fixed(tableau_rk4(), zero_field(3), np.array([1.0, 2.0, 3.0]), (0.0, 1.0), 7)
        assert np.all(traj.states == np.array([1.0, 2.0, 3.0]))
        assert traj.K == 7

    def test_euler_repeated_multiplication(self):
        traj = solve_fixed(tableau_euler(), exp_field(), np.array([1.0]), (0.0, 1.0), 10)
        assert abs(traj.terminal[0] - 1.1 ** 10) < 1e-14

    @pytest.mark.parametrize("tab,K", [(tableau_euler(), 10), (tableau_rk4(), 10),
                                       (tableau_midpoint(), 25)], ids=["euler", "rk4", "midpoint"])
    def test_nfe_is_stages_times_K(self, tab, K):
        f = exp_field()
        solve_fixed(tab, f, np.array([1.0]), (0.0, 1.0), K)
        assert f.nfe == tab.stages * K

    def test_mesh_is_uniform_and_spans(self):
        traj = solve_fixed(tableau_euler(), exp_field(), np.array([1.0]), (0.5, 2.5), 8)
        assert traj.span == (0.5, 2.5)
        assert abs(traj.eps - 0.25) < 1e-15
        assert np.allclose(np.diff(traj.s_mesh), 0.25, atol=1e-15)

    @pytest.mark.parametrize("tab,expected_order", [
        (tableau_euler(), 1), (tableau_midpoint(), 2), (tableau_heun(), 2),
        (tableau_alpha(0.3), 2), (tableau_alpha(0.7), 2), (tableau_rk4(), 4),
    ], ids=lambda v: getattr(v, "name", v))
    def test_convergence_order_on_exponential(self, tab, expected_order):
        errs, epss = [], []
        for j in range(3, 11):
            K = 2 ** j
            traj = solve_fixed(tab, exp_field(), np.array([1.0]), (0.0, 1.0), K)
            err = abs(traj.terminal[0] - math.e)
            if err < 1e-13:  # fp floor, drop from the fit
                continue
            errs.append(err)
            epss.append(1.0 / K)
        slope = np.polyfit(np.log(epss), np.log(errs), 1)[0]
        assert abs(slope - expected_order) < 0.15

    def test_rejects_bad_K_and_span(self):
        with pytest.raises(MeshError):
            solve_fixed(tableau_euler(), exp_field(), np.array([1.0]), (0.0, 1.0), 0)
        with pytest.raises(RangeError):
            solve_fixed(tableau_euler(), exp_field(), np.array([1.0]), (1.0, 0.5), 4)

    @pytest.mark.filterwarnings("ignore:overflow")
    def test_blowup_reports_step_index(self):
        # z' = z^3 from 2 with a huge step blows up to inf quickly
        f = VectorField(lambda s, z: z ** 3, dim=1)
        with pytest.raises(NumericError) as err:
            solve_fixed(tableau_euler(), f, np.array([2.0]), (0.0, 10.0), 10)
        assert err.value.step is not None


class TestVectorField:
    def test_counter_counts_every_call(self):
        f = exp_field()
        for _ in range(5):
            f(0.0, np.array([1.0]))
        assert f.nfe == 5
        f.reset_nfe()
        assert f.nfe == 0

    def test_clone_has_private_counter(self):
        f = exp_field()
        f(0.0, np.array([1.0]))
        g = f.clone()
        assert g.nfe == 0
        g(0.0, np.array([1.0]))
        assert f.nfe == 1 and g.nfe == 1


class TestTrajectory:
    def test_rejects_nonuniform_mesh(self):
        with pytest.raises(MeshError):
            Trajectory(s_mesh=np.array([0.0, 0.1, 0.3]), states=np.zeros((3, 1)))

    def test_rejects_length_mismatch(self):
        with pytest.raises(MeshError):
            Trajectory(s_mesh=np.array([0.0, 0.1]), states=np.zeros((3, 1)))

    def test_properties(self):
        traj = Trajectory(s_mesh=np.linspace(0, 1, 5), states=np.arange(10.0).reshape(5, 2))
        assert traj.K == 4
        assert traj.dim == 2
        assert np.array_equal(traj.terminal, [8.0, 9.0])


class TestPersistence:
    def test_round_trip_value_exact(self, tmp_path):
        traj = solve_fixed(tableau_rk4(), exp_field(), np.array([1.0, math.pi]), (0.0, 1.0), 6)
        path = tmp_path / "traj.csv"
        save_trajectory(traj, path, problem="linear1", solver="rk4", seed=0, nfe=24)
        back = load_trajectory(path)
        assert np.array_equal(back.s_mesh, traj.s_mesh)
        assert np.array_equal(back.states, traj.states)

    def test_csv_header(self, tmp_path):
        traj = solve_fixed(tableau_euler(), zero_field(3), np.zeros(3), (0.0, 1.0), 2)
        path = tmp_path / "t.csv"
        save_trajectory(traj, path)
        header = path.read_text().splitlines()[0]
        assert header == "s,z0,z1,z2"

    def test_manifest_contents(self, tmp_path):
        traj = solve_fixed(tableau_heun(), exp_field(), np.array([1.0]), (0.0, 1.0), 10)
        path = tmp_path / "t.csv"
        save_trajectory(traj, path, problem="linear1", solver="heun", seed=3, nfe=20)
        manifest = json.loads((tmp_path / "t.json").read_text())
        assert manifest == {"problem": "linear1", "solver": "heun", "K": 10,
                            "span": [0.0, 1.0], "seed": 3, "nfe": 20}

    def test_rewrite_is_byte_identical(self, tmp_path):
        traj = solve_fixed(tableau_rk4(), exp_field(), np.array([1.0]), (0.0, 1.0), 5)
        p1, p2 = tmp_path / "a.csv", tmp_path / "b.csv"
        save_trajectory(traj, p1)
        save_trajectory(traj, p2)
        assert p1.read_bytes() == p2.read_bytes()
