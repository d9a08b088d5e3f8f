import numpy as np
import pytest

import main
from hddp_model import model_hash
from hddp_trajio import TrajectoryFile, read_trajectory, save_trajectory
from hddp_utils import read_manifest
from zoo import PLANAR_BIPED, standing_trajectory


@pytest.fixture
def standing_file(rh5, tmp_path):
    return save_trajectory(standing_trajectory(rh5, knots=4), tmp_path / "standing.csv")


def test_missing_model_is_an_input_error(tmp_path, standing_file):
    assert main.main(["check-limits", str(standing_file), "--model", str(tmp_path / "none.model")]) == 1


def test_missing_experiment_is_an_input_error(tmp_path):
    assert main.main(["solve", str(tmp_path / "nowhere.toml"), "--out-dir", str(tmp_path / "out")]) == 1


def test_bad_payload_flag(tmp_path):
    code = main.main(["solve", "stand", "--payload", "left_hand", "--out-dir", str(tmp_path / "out")])
    assert code == 1


def test_truncated_trajectory(tmp_path, standing_file):
    lines = standing_file.read_text(encoding="utf-8").splitlines()
    standing_file.write_text("\n".join(lines[:-2]) + "\n", encoding="utf-8")
    assert main.main(["check-limits", str(standing_file)]) == 1
    assert main.main(["interp", str(standing_file), "--out-dir", str(tmp_path)]) == 1


def test_hash_mismatch(tmp_path, standing_file):
    model_path = tmp_path / "biped.model"
    model_path.write_text(PLANAR_BIPED, encoding="utf-8")
    assert main.main(["check-limits", str(standing_file), "--model", str(model_path)]) == 1
    assert main.main(["replay", str(standing_file), "--model", str(model_path), "--out-dir", str(tmp_path)]) == 1


def test_check_limits_of_a_standing_trajectory(standing_file, capsys):
    assert main.main(["check-limits", str(standing_file)]) == 0
    assert "left_knee" in capsys.readouterr().out


def test_check_limits_with_zero_knots(rh5, tmp_path):
    traj = standing_trajectory(rh5, knots=1)
    empty = TrajectoryFile(
        model_hash=model_hash(rh5),
        knot_dt=0.03,
        times=traj.times[:1],
        qs=traj.qs[:1],
        vs=traj.vs[:1],
        us=np.zeros((0, rh5.nu)),
    )
    path = save_trajectory(empty, tmp_path / "empty.csv")
    assert main.main(["check-limits", str(path)]) == 0
    assert main.main(["interp", str(path), "--out-dir", str(tmp_path)]) == 1


def test_interp_writes_dense_samples(tmp_path, standing_file):
    assert main.main(["interp", str(standing_file), "--rate", "500", "--out-dir", str(tmp_path / "dense")]) == 0
    lines = (tmp_path / "dense" / "interpolated.csv").read_text(encoding="utf-8").splitlines()
    assert len(lines) == 2 + 61


def test_standing_replay(tmp_path, standing_file):
    out = tmp_path / "replay"
    code = main.main(["replay", str(standing_file), "--out-dir", str(out), "--rate", "250", "--gnuplot"])
    assert code == 0
    assert (out / "replay.csv").is_file()
    assert (out / "replay.gp").is_file()
    manifest = read_manifest(out)
    assert manifest["command"] == "replay"
    assert manifest["exit_code"] == 0
    assert manifest["summary"]["fell"] is False


def test_limp_replay_exits_three(tmp_path, rh5):
    path = save_trajectory(standing_trajectory(rh5, knots=10), tmp_path / "standing.csv")
    code = main.main(
        ["replay", str(path), "--out-dir", str(tmp_path / "limp"), "--kp", "0", "--no-ff", "--rate", "250", "--max-deviation-z", "0.001"]
    )
    assert code == 3


def test_bad_limit_selector():
    assert main.main(["design-scale", "stand", "--limit", "knee-velocity"]) == 1
    assert main.main(["design-scale", "stand", "--limit", "tail:torque"]) == 1


def test_scaling_cap_below_one_exits_two(tmp_path):
    out = tmp_path / "scale"
    assert main.main(["design-scale", "stand", "--limit", "knee:velocity", "--cap", "0.5", "--out-dir", str(out)]) == 2
    rows = (out / "scaling.csv").read_text(encoding="utf-8").splitlines()
    assert rows == ["factor,converged,iterations,position_ok,torque_ok,velocity_ok,feasible"]


def test_short_solve_writes_every_output(tmp_path, rh5):
    out = tmp_path / "stand"
    code = main.main(["solve", "stand", "--max-iters", "1", "--out-dir", str(out), "--gnuplot"])
    assert code in (0, 2)
    for name in ("trajectory.csv", "diagnostics.csv", "cop.csv", "manifest.json", "base.gp", "diagnostics.gp"):
        assert (out / name).is_file(), name
    traj = read_trajectory(out / "trajectory.csv", rh5)
    assert traj.knots == 10
    manifest = read_manifest(out)
    assert manifest["options"]["max_iters"] == 1
    assert manifest["exit_code"] == code


def test_solve_is_deterministic(tmp_path):
    for name in ("a", "b"):
        main.main(["solve", "stand", "--max-iters", "2", "--out-dir", str(tmp_path / name)])
    first = (tmp_path / "a" / "trajectory.csv").read_bytes()
    assert first == (tmp_path / "b" / "trajectory.csv").read_bytes()


def test_help_lists_the_commands(capsys):
    with pytest.raises(SystemExit) as ctx:
        main.main(["--help"])
    assert ctx.value.code == 0
    out = capsys.readouterr().out
    for command in ("solve", "replay", "check-limits", "design-scale", "interp"):
        assert command in out
