from types import SimpleNamespace

import numpy as np
import pytest

from costs import WrenchConeSpec
from hddp_dynamics import ContactSet
from hddp_model import attach_payload, model_hash
from hddp_trajio import (
    HashMismatchError,
    TrajectoryError,
    TrajectoryFile,
    TrajectoryParseError,
    cop_report,
    interpolate,
    read_trajectory,
    save_trajectory,
    trajectory_from_solution,
    write_interpolated,
)
from spatial import matrix_to_quat, quat_to_matrix, so3_exp
from zoo import standing_trajectory

FEET = ("left_foot", "right_foot")


def cubic_pendulum(model, knots=5, knot_dt=0.1):
    t = np.arange(knots + 1) * knot_dt
    return TrajectoryFile(
        model_hash=model_hash(model),
        knot_dt=knot_dt,
        times=t,
        qs=(t**3)[:, None],
        vs=(3 * t**2)[:, None],
        us=np.linspace(0.0, 1.0, knots)[:, None],
    )


def test_save_and_read_back(rh5, tmp_path):
    traj = standing_trajectory(rh5)
    path = save_trajectory(traj, tmp_path / "trajectory.csv")
    lines = path.read_text(encoding="utf-8").splitlines()
    assert lines[0] == "# hddp-trajectory version=1"
    assert lines[4] == f"# nq={rh5.nq} nv={rh5.nv} nu={rh5.nu}"
    assert lines[5] == "# frames=left_foot,right_foot"
    back = read_trajectory(path, rh5)
    np.testing.assert_array_equal(back.times, traj.times)
    np.testing.assert_array_equal(back.qs, traj.qs)
    np.testing.assert_array_equal(back.us, traj.us)
    np.testing.assert_array_equal(back.wrenches, traj.wrenches)
    assert back.frames == FEET
    assert back.active.all()


def test_resave_is_byte_stable(rh5, tmp_path):
    first = save_trajectory(standing_trajectory(rh5), tmp_path / "a.csv")
    second = save_trajectory(read_trajectory(first), tmp_path / "b.csv")
    assert first.read_bytes() == second.read_bytes()


def test_final_row_leaves_controls_empty(zoo, tmp_path):
    path = save_trajectory(cubic_pendulum(zoo["pendulum"]), tmp_path / "p.csv")
    last = path.read_text(encoding="utf-8").splitlines()[-1]
    assert last.split(",")[-1] == ""
    assert len(last.split(",")) == 4


def test_payload_is_part_of_the_hash(rh5, tmp_path):
    loaded = attach_payload(rh5, "left_hand", 5.0)
    traj = standing_trajectory(loaded, payload={"left_hand": 5.0})
    path = save_trajectory(traj, tmp_path / "loaded.csv")
    assert read_trajectory(path, rh5).payload == {"left_hand": 5.0}


def test_tampered_hash(rh5, tmp_path):
    path = save_trajectory(standing_trajectory(rh5), tmp_path / "t.csv")
    text = path.read_text(encoding="utf-8")
    path.write_text(text.replace(f"model_hash={model_hash(rh5)}", "model_hash=" + "0" * 64), encoding="utf-8")
    with pytest.raises(HashMismatchError):
        read_trajectory(path, rh5)
    assert read_trajectory(path).model_hash == "0" * 64


def test_truncated_file(rh5, tmp_path):
    path = save_trajectory(standing_trajectory(rh5), tmp_path / "t.csv")
    lines = path.read_text(encoding="utf-8").splitlines()
    path.write_text("\n".join(lines[:-1]) + "\n", encoding="utf-8")
    with pytest.raises(TrajectoryParseError, match="state rows"):
        read_trajectory(path, rh5)


def test_malformed_cells(zoo, tmp_path):
    path = save_trajectory(cubic_pendulum(zoo["pendulum"]), tmp_path / "p.csv")
    lines = path.read_text(encoding="utf-8").splitlines()

    bad = list(lines)
    bad[9] = "oops" + bad[9][bad[9].index(",") :]
    path.write_text("\n".join(bad) + "\n", encoding="utf-8")
    with pytest.raises(TrajectoryParseError) as ctx:
        read_trajectory(path)
    assert ctx.value.line == 10

    swapped = list(lines)
    swapped[9], swapped[10] = swapped[10], swapped[9]
    path.write_text("\n".join(swapped) + "\n", encoding="utf-8")
    with pytest.raises(TrajectoryParseError, match="increasing"):
        read_trajectory(path)

    path.write_text("\n".join(["# hddp-trajectory version=2", *lines[1:]]) + "\n", encoding="utf-8")
    with pytest.raises(TrajectoryParseError, match="version"):
        read_trajectory(path)


def test_missing_file(tmp_path):
    with pytest.raises(TrajectoryParseError):
        read_trajectory(tmp_path / "nothing.csv")


def test_constant_trajectory_interpolates_to_itself(rh5):
    traj = standing_trajectory(rh5)
    interp = interpolate(traj, 1000.0)
    assert interp.samples == 301
    np.testing.assert_allclose(interp.qs, np.tile(traj.qs[0], (301, 1)), atol=1e-12)
    np.testing.assert_allclose(interp.vs, 0.0, atol=1e-12)
    np.testing.assert_allclose(interp.us, np.tile(traj.us[0], (301, 1)), atol=1e-9)
    assert interp.active.all()


def test_sample_count_follows_duration_and_rate(rh5):
    interp = interpolate(standing_trajectory(rh5, knots=50), 1000.0)
    assert interp.samples == 1501
    assert interp.times[-1] == pytest.approx(1.5)
    assert interpolate(standing_trajectory(rh5, knots=50), 250.0).samples == 376


def test_hermite_reproduces_cubics(zoo):
    interp = interpolate(cubic_pendulum(zoo["pendulum"]), 200.0)
    np.testing.assert_allclose(interp.qs[:, 0], interp.times**3, atol=1e-12)
    np.testing.assert_allclose(interp.vs[:, 0], 3 * interp.times**2, atol=1e-10)
    # controls are linear between knots and held after the last one
    np.testing.assert_allclose(interp.us[interp.knot_indices[:-1], 0], np.linspace(0.0, 1.0, 5), atol=1e-12)


def test_base_moving_at_constant_velocity(rh5):
    traj = standing_trajectory(rh5)
    traj.vs[:, 0] = 0.2
    traj.qs[:, 0] += 0.2 * traj.times
    interp = interpolate(traj, 1000.0)
    np.testing.assert_allclose(interp.qs[:, 0], traj.qs[0, 0] + 0.2 * interp.times, atol=1e-12)
    np.testing.assert_allclose(interp.vs[:, 0], 0.2, atol=1e-12)
    q, _ = interp.at(0.0155)
    assert q[0, 0] == pytest.approx(traj.qs[0, 0] + 0.2 * 0.0155)


def test_interpolation_needs_two_knots(zoo):
    traj = cubic_pendulum(zoo["pendulum"], knots=1)
    traj.times, traj.qs, traj.vs, traj.us = traj.times[:1], traj.qs[:1], traj.vs[:1], traj.us[:0]
    with pytest.raises(TrajectoryError):
        interpolate(traj)
    with pytest.raises(TrajectoryError):
        interpolate(cubic_pendulum(zoo["pendulum"]), 0.0)


def test_write_interpolated(zoo, tmp_path):
    path = write_interpolated(interpolate(cubic_pendulum(zoo["pendulum"]), 100.0), tmp_path / "interpolated.csv")
    lines = path.read_text(encoding="utf-8").splitlines()
    assert lines[0].startswith("# hddp-interpolated")
    assert lines[1] == "t,q0,v0,u0"
    assert len(lines) == 2 + 51


def test_cop_report_skips_unloaded_and_inactive_feet(rh5):
    traj = standing_trajectory(rh5, knots=3)
    traj.wrenches[0, 0] = [0.0, 0.0, 100.0, 1.0, -2.0, 0.0]
    traj.wrenches[1, 0] = [0.0, 0.0, 0.5, 0.0, 0.0, 0.0]
    traj.active[2, 1] = False
    samples = cop_report(traj, WrenchConeSpec(half_x=0.1, half_y=0.04, coverage=0.5))
    assert len(samples) == 4
    first = samples[0]
    assert (first.time, first.frame) == (0.0, "left_foot")
    np.testing.assert_allclose(first.cop, [0.02, 0.01])
    assert first.excursion == pytest.approx(0.5)
    assert first.inside


def test_impulse_knots_are_merged(zoo):
    model = zoo["pendulum"]
    running = [
        SimpleNamespace(is_impulse=False, dt=0.1, contacts=ContactSet()),
        SimpleNamespace(is_impulse=True, dt=0.0, contacts=ContactSet(("tip",))),
        SimpleNamespace(is_impulse=False, dt=0.1, contacts=ContactSet(("tip",))),
    ]
    solution = SimpleNamespace(
        xs=[np.array([0.0, 0.0]), np.array([1.0, 1.0]), np.array([2.0, 0.0]), np.array([3.0, 0.0])],
        us=[np.array([5.0]), np.zeros(0), np.array([6.0])],
        wrenches=[{}, {"tip": np.ones(6)}, {"tip": np.full(6, 2.0)}],
    )
    traj = trajectory_from_solution(solution, SimpleNamespace(running=running), model)
    np.testing.assert_allclose(traj.times, [0.0, 0.1, 0.2])
    np.testing.assert_array_equal(traj.qs[:, 0], [0.0, 2.0, 3.0])
    np.testing.assert_array_equal(traj.us[:, 0], [5.0, 6.0])
    assert traj.frames == ("tip",)
    np.testing.assert_array_equal(traj.active[:, 0], [False, True])
    np.testing.assert_array_equal(traj.wrenches[1, 0], np.full(6, 2.0))
    assert traj.knot_dt == 0.1


def test_base_turning_past_half_a_revolution(rh5):
    traj = standing_trajectory(rh5)
    rate = 15.0
    r0 = quat_to_matrix(traj.qs[0, 3:7])
    traj.qs[:, 3:7] = [matrix_to_quat(r0 @ so3_exp(np.array([0.0, 0.0, rate * t]))) for t in traj.times]
    traj.vs[:, 3:6] = [0.0, 0.0, rate]
    assert rate * traj.times[-1] > np.pi
    interp = interpolate(traj, 1000.0)
    expected = r0 @ so3_exp(np.outer(rate * interp.times, [0.0, 0.0, 1.0]))
    np.testing.assert_allclose(quat_to_matrix(interp.qs[:, 3:7]), expected, atol=1e-9)
    np.testing.assert_allclose(interp.vs[:, 3:6], np.tile([0.0, 0.0, rate], (interp.samples, 1)), atol=1e-9)
