import math
import unittest

import numpy as np
import pytest

from hddp_dynamics import frame_placement
from hddp_model import (
    ModelInvariantError,
    ModelParseError,
    TopologyError,
    attach_payload,
    dump_model,
    model_hash,
    neutral_state,
    parse_model,
)
from zoo import PENDULUM, POINT_MASS


def test_rh5_dimensions(rh5):
    assert rh5.has_free_base
    assert (rh5.nq, rh5.nv, rh5.nu) == (30, 29, 23)
    assert rh5.total_mass == pytest.approx(62.5, abs=1e-9)
    assert len(rh5.actuated_joint_names) == 23


def test_rh5_has_feet_corners_and_hands(rh5):
    for side in ("left", "right"):
        assert rh5.has_frame(f"{side}_foot")
        assert rh5.has_frame(f"{side}_hand")
        for corner in ("fl", "fr", "rl", "rr"):
            assert rh5.has_frame(f"{side}_foot_{corner}")


def test_rh5_neutral_state_is_mid_range(rh5):
    state = neutral_state(rh5)
    knee = rh5.revolute_joint_names.index("left_knee")
    assert state.q[rh5.joint_q_index[knee]] == pytest.approx(math.radians(44.0), abs=1e-12)
    hip1 = rh5.revolute_joint_names.index("left_hip1")
    assert state.q[rh5.joint_q_index[hip1]] == 0.0
    np.testing.assert_array_equal(state.q[3:7], [1.0, 0.0, 0.0, 0.0])
    np.testing.assert_array_equal(state.v, np.zeros(rh5.nv))


def test_single_free_body_dimensions():
    model = parse_model(POINT_MASS)
    assert (model.nq, model.nv, model.nu) == (7, 6, 0)
    assert model.actuation_matrix.shape == (6, 0)


def test_fixed_base_pendulum_dimensions():
    model = parse_model(PENDULUM)
    assert not model.has_free_base
    assert (model.nq, model.nv, model.nu) == (1, 1, 1)
    np.testing.assert_array_equal(model.actuation_matrix, [[1.0]])


def test_model_record_is_optional():
    body = "\n".join(line for line in PENDULUM.splitlines() if not line.startswith("model "))
    unnamed = parse_model(body, "fixtures/arm.model")
    assert unnamed.name == "arm"
    assert parse_model(body).name == "robot"
    assert parse_model(PENDULUM).name == "pendulum"
    assert (unnamed.nq, unnamed.nv, unnamed.nu) == (1, 1, 1)


def test_model_hash_is_deterministic(rh5, fixtures_path):
    other = parse_model((fixtures_path / "rh5.model").read_text(encoding="utf-8"), "copy.model")
    assert model_hash(rh5) == model_hash(other)
    assert len(model_hash(rh5)) == 64


def test_attach_payload_adds_mass_and_changes_hash(rh5):
    loaded = attach_payload(rh5, "left_hand", 5.0)
    assert loaded.total_mass == pytest.approx(rh5.total_mass + 5.0)
    assert model_hash(loaded) != model_hash(rh5)
    assert attach_payload(rh5, "left_hand", 0.0) is rh5


def test_attach_payload_rejects_negative_mass(rh5):
    with pytest.raises(ModelInvariantError):
        attach_payload(rh5, "left_hand", -1.0)


def test_dump_and_parse_preserves_structure(rh5):
    again = parse_model(dump_model(rh5), "dumped.model")
    assert (again.nq, again.nv, again.nu) == (rh5.nq, rh5.nv, rh5.nu)
    assert again.revolute_joint_names == rh5.revolute_joint_names
    np.testing.assert_allclose(again.body_masses, rh5.body_masses)
    q = neutral_state(rh5).q
    for frame in ("left_foot", "right_hand"):
        np.testing.assert_allclose(
            frame_placement(again, q, frame).translation, frame_placement(rh5, q, frame).translation, atol=1e-12
        )


class TestModelParser(unittest.TestCase):
    def test_bad_float_reports_line(self) -> None:
        text = "model bad\nbody a mass=abc\n"
        with self.assertRaises(ModelParseError) as ctx:
            parse_model(text, "bad.model")
        self.assertEqual(ctx.exception.line, 2)
        self.assertTrue(str(ctx.exception).startswith("bad.model:2:"))

    def test_unknown_key(self) -> None:
        text = "body a mass=1 colour=red\n"
        with self.assertRaises(ModelParseError) as ctx:
            parse_model(text, "bad.model")
        self.assertIn("colour", str(ctx.exception))

    def test_comments_and_blank_lines_are_ignored(self) -> None:
        model = parse_model("# header\n\n" + POINT_MASS + "  # trailing\n")
        self.assertEqual(model.nq, 7)

    def test_two_roots_is_a_topology_error(self) -> None:
        text = (
            "body a mass=1 inertia=0.1,0.1,0.1,0,0,0\n"
            "body b mass=1 inertia=0.1,0.1,0.1,0,0,0\n"
        )
        with self.assertRaises(TopologyError):
            parse_model(text)

    def test_child_before_parent_joint_is_rejected(self) -> None:
        text = (
            "body a mass=1 inertia=0.1,0.1,0.1,0,0,0\n"
            "body b mass=1 inertia=0.1,0.1,0.1,0,0,0\n"
            "body c mass=1 inertia=0.1,0.1,0.1,0,0,0\n"
            "joint j2 type=revolute parent=b child=c axis=0,0,1 limits=-1,1 vmax=1 taumax=1\n"
            "joint j1 type=revolute parent=a child=b axis=0,0,1 limits=-1,1 vmax=1 taumax=1\n"
        )
        with self.assertRaises(TopologyError):
            parse_model(text)

    def test_free_joint_must_come_first(self) -> None:
        text = (
            "body a mass=1 inertia=0.1,0.1,0.1,0,0,0\n"
            "body b mass=1 inertia=0.1,0.1,0.1,0,0,0\n"
            "joint j1 type=revolute parent=world child=a axis=0,0,1 limits=-1,1 vmax=1 taumax=1\n"
            "joint root type=free parent=world child=b\n"
        )
        with self.assertRaises(TopologyError):
            parse_model(text)

    def test_non_unit_axis_is_rejected(self) -> None:
        text = (
            "body a mass=1 inertia=0.1,0.1,0.1,0,0,0\n"
            "joint j type=revolute parent=world child=a axis=0,0,2 limits=-1,1 vmax=1 taumax=1\n"
        )
        with self.assertRaises(ModelInvariantError):
            parse_model(text)

    def test_inertia_triangle_inequality(self) -> None:
        text = "body a mass=1 inertia=0.1,0.1,0.5,0,0,0\n"
        with self.assertRaises(ModelInvariantError) as ctx:
            parse_model(text)
        self.assertEqual(ctx.exception.field, "rotational_inertia")

    def test_inverted_limits_are_rejected(self) -> None:
        text = (
            "body a mass=1 inertia=0.1,0.1,0.1,0,0,0\n"
            "joint j type=revolute parent=world child=a axis=0,0,1 limits=1,-1 vmax=1 taumax=1\n"
        )
        with self.assertRaises(ModelInvariantError):
            parse_model(text)

    def test_frame_on_unknown_body(self) -> None:
        with self.assertRaises(TopologyError):
            parse_model("body a mass=1 inertia=0.1,0.1,0.1,0,0,0\nframe f body=nowhere\n")


if __name__ == "__main__":
    unittest.main()
