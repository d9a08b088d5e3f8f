"""
Whole-motion runs on the RH5 fixture. Each one is a full solve and takes
minutes, so the module only runs with ``pytest --run-slow``.
"""

import numpy as np
import pytest

import main
from config import get_settings
from costs import WrenchConeSpec
from hddp_dynamics import center_of_mass
from hddp_gaitplan import check_solution_limits, design_scaling_search, load_experiment, solve_experiment
from hddp_replay import replay
from hddp_trajio import cop_report, interpolate, read_trajectory, trajectory_from_solution

pytestmark = pytest.mark.slow

COP_SLACK = 0.002


@pytest.fixture(scope="module")
def solved(rh5, fixtures_path):
    cache = {}

    def run(name):
        if name not in cache:
            spec = load_experiment(fixtures_path / f"{name}.toml")
            problem, solution = solve_experiment(rh5, spec)
            cache[name] = (spec, problem, solution)
        return cache[name]

    return run


def _cop_excursions(spec, problem, solution):
    weights = spec.weight_values(get_settings())
    cone = WrenchConeSpec(mu=weights["mu"], coverage=weights["coverage"])
    traj = trajectory_from_solution(solution, problem, problem.model, spec.payload)
    return [np.max(np.abs(s.cop) - s.bound) for s in cop_report(traj, cone)], traj


def test_walking_with_weights(solved):
    spec, problem, solution = solved("walk_weights")
    assert solution.converged
    assert spec.knots == 50
    excursions, _ = _cop_excursions(spec, problem, solution)
    assert excursions and max(excursions) <= COP_SLACK
    assert check_solution_limits(problem, solution).passed
    assert solution.diagnostics.gap_norms[-1] <= 1e-9


def test_fast_walking_with_com_warm_start(solved):
    spec, problem, solution = solved("walk_fast")
    assert spec.warm_start.kind == "com-interpolated"
    assert solution.converged
    assert check_solution_limits(problem, solution).passed


def test_squat_range(solved):
    _, problem, solution = solved("squat_weights")
    assert solution.converged
    heights = [center_of_mass(problem.model, x[: problem.model.nq])[2] for x in solution.xs]
    assert max(heights) - min(heights) == pytest.approx(0.20, abs=0.02)
    assert check_solution_limits(problem, solution).passed


def test_small_jump_is_feasible(solved):
    _, problem, solution = solved("jump_1cm")
    assert check_solution_limits(problem, solution).passed


def test_high_jump_breaks_the_knee_velocity_limit(solved):
    _, problem, solution = solved("jump_10cm")
    report = check_solution_limits(problem, solution)
    assert not report.velocity_ok
    assert any(name.endswith("knee") for name in report.violators("velocity"))


def test_knee_velocity_design_scaling(rh5, fixtures_path):
    spec = load_experiment(fixtures_path / "jump_10cm.toml")
    result = design_scaling_search(rh5, spec, "knee:velocity", factor_step=0.5, cap=5.0)
    assert result.factor in (2.5, 3.0, 3.5)
    assert not result.log[0].feasible


def test_obstacle_jumps_report_torque_and_velocity_violations(solved):
    _, problem, solution = solved("jump_obstacles")
    report = check_solution_limits(problem, solution)
    assert not report.torque_ok
    assert not report.velocity_ok


def test_walking_replay_stays_within_bounds(solved):
    spec, problem, solution = solved("walk_weights")
    traj = trajectory_from_solution(solution, problem, problem.model, spec.payload)
    report = replay(problem.model, interpolate(traj, 1000.0))
    assert not report.fell
    assert report.within(0.03, 0.02)


def test_interpolation_passes_through_the_knots(solved):
    for name in ("walk_weights", "squat_weights", "jump_1cm"):
        spec, problem, solution = solved(name)
        traj = trajectory_from_solution(solution, problem, problem.model, spec.payload)
        interp = interpolate(traj, 1000.0)
        qs, vs = interp.at(traj.times)
        np.testing.assert_allclose(vs, traj.vs, atol=1e-10)
        np.testing.assert_allclose(qs[:, 7:], traj.qs[:, 7:], atol=1e-10)
        np.testing.assert_allclose(qs[:, :3], traj.qs[:, :3], atol=1e-10)
        # a quaternion and its negation are the same rotation
        dots = np.abs(np.sum(qs[:, 3:7] * traj.qs[:, 3:7], axis=1))
        np.testing.assert_allclose(dots, 1.0, atol=1e-10)
        if name == "walk_weights":
            assert interp.samples == 1501


def test_walking_solve_is_byte_deterministic(rh5, tmp_path):
    for name in ("a", "b"):
        assert main.main(["solve", "walk_weights", "--out-dir", str(tmp_path / name)]) == 0
    first = (tmp_path / "a" / "trajectory.csv").read_bytes()
    assert first == (tmp_path / "b" / "trajectory.csv").read_bytes()
    assert read_trajectory(tmp_path / "a" / "trajectory.csv", rh5).payload == {"left_hand": 5.0, "right_hand": 5.0}
