import math

import numpy as np
import pytest

from hyperode.dopri5 import ground_truth_trajectory, solve_dopri5
from hyperode.errors import NumericError, RangeError, StiffnessError
from hyperode.solvers import VectorField


def exp_field():
    return VectorField(lambda s, z: z, dim=1, name="exp")


def rotation_field():
    return VectorField(lambda s, z: np.array([-z[1], z[0]]), dim=2, name="rot")


class TestSolve:
    def test_exponential_oracle(self):
        res = solve_dopri5(exp_field(), np.array([1.0]), (0.0, 1.0), 1e-7, 1e-7)
        assert abs(res.final[0] - math.e) < 1e-6

    def test_rotation_oracle(self):
        res = solve_dopri5(rotation_field(), np.array([1.0, 0.0]), (0.0, math.pi / 2), 1e-9, 1e-9)
        assert np.allclose(res.final, [0.0, 1.0], atol=1e-7)

    def test_zero_field_exact_and_unrejected(self):
        z0 = np.array([2.0, -3.0])
        res = solve_dopri5(VectorField(lambda s, z: np.zeros(2), dim=2), z0, (0.0, 1.0))
        assert np.array_equal(res.final, z0)
        assert res.rejected == 0

    def test_lands_exactly_on_endpoint(self):
        res = solve_dopri5(exp_field(), np.array([1.0]), (0.0, 0.73))
        assert res.s_points[-1] == 0.73
        assert res.s_points[0] == 0.0

    @pytest.mark.parametrize("tol", [1e-5, 1e-7, 1e-9])
    def test_tolerance_bound_on_exponential(self, tol):
        res = solve_dopri5(exp_field(), np.array([1.0]), (0.0, 1.0), tol, tol)
        assert abs(res.final[0] - math.e) <= 100 * (tol + tol * math.e)

    @pytest.mark.parametrize("tol", [1e-5, 1e-7, 1e-9])
    def test_accepted_error_estimates_at_most_one(self, tol):
        res = solve_dopri5(exp_field(), np.array([1.0]), (0.0, 1.0), tol, tol)
        assert len(res.error_estimates) == res.accepted
        assert np.all(res.error_estimates <= 1.0)

    def test_tightening_tolerance_does_not_hurt(self):
        errs = []
        for tol in (1e-5, 1e-6, 1e-7, 1e-8):
            res = solve_dopri5(exp_field(), np.array([1.0]), (0.0, 1.0), tol, tol)
            errs.append(abs(res.final[0] - math.e))
        assert all(a >= b for a, b in zip(errs, errs[1:]))

    def test_nfe_accounting(self):
        f = exp_field()
        res = solve_dopri5(f, np.array([1.0]), (0.0, 1.0))
        attempts = res.accepted + res.rejected
        assert res.nfe == 1 + 6 * attempts
        assert f.nfe == res.nfe

    def test_checkpoints_cover_mesh(self):
        res = solve_dopri5(exp_field(), np.array([1.0]), (0.0, 1.0))
        assert len(res.s_points) == res.accepted + 1
        assert np.all(np.diff(res.s_points) > 0)
        assert np.allclose(res.z_points[-1], res.final)

    def test_rejects_bad_arguments(self):
        with pytest.raises(RangeError):
            solve_dopri5(exp_field(), np.array([1.0]), (1.0, 0.0))
        with pytest.raises(RangeError):
            solve_dopri5(exp_field(), np.array([1.0]), (0.0, 1.0), atol=0.0)
        with pytest.raises(NumericError):
            solve_dopri5(exp_field(), np.array([np.nan]), (0.0, 1.0))

    def test_discontinuous_field_underflows_to_stiffness_error(self):
        # a 1e6 jump at s=0.5 with 1e-12 tolerances cannot be resolved by
        # any step above the underflow floor
        f = VectorField(lambda s, z: np.array([1e6 if s > 0.5 else 0.0]), dim=1)
        with pytest.raises(StiffnessError):
            solve_dopri5(f, np.array([0.0]), (0.0, 1.0), 1e-12, 1e-12)


class TestGroundTruth:
    def test_matches_exponential_everywhere(self):
        traj = ground_truth_trajectory(exp_field(), np.array([1.0]), (0.0, 1.0), K=10)
        expected = np.exp(traj.s_mesh)
        assert np.max(np.abs(traj.states[:, 0] - expected)) < 1e-6

    def test_mesh_shape(self):
        traj = ground_truth_trajectory(rotation_field(), np.array([1.0, 0.0]), (0.0, 2.0), K=8)
        assert traj.K == 8
        assert traj.span == (0.0, 2.0)
        assert traj.states.shape == (9, 2)

    def test_segment_restart_keeps_checkpoint_error_at_tolerance(self):
        # every checkpoint should be within solver tolerance of the truth,
        # not just the final state
        traj = ground_truth_trajectory(exp_field(), np.array([1.0]), (0.0, 1.0), K=20,
                                       atol=1e-9, rtol=1e-9)
        worst = np.max(np.abs(traj.states[:, 0] - np.exp(traj.s_mesh)))
        assert worst < 1e-7
