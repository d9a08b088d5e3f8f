import math

import numpy as np
import pytest

from hddp_dynamics import (
    GRAVITY,
    ContactSet,
    ContactSingularityError,
    DynamicsError,
    State,
    UnknownFrameError,
    bias_forces,
    center_of_mass,
    com_jacobian,
    contact_drift,
    contact_dynamics_derivatives,
    contact_forward_dynamics,
    contact_jacobian,
    difference_configuration,
    forward_dynamics,
    forward_kinematics,
    frame_jacobian,
    frame_placement,
    frame_velocity,
    gravity_compensation,
    impulse_dynamics,
    impulse_dynamics_derivatives,
    integrate_configuration,
    integrate_jacobians,
    integrate_state,
    inverse_dynamics,
    kinetic_energy,
    mass_matrix,
    potential_energy,
)
from hddp_gaitplan import stance_state
from hddp_model import neutral_state
from spatial import so3_log
from zoo import random_state

H = 1e-6


def _fd_frame_jacobian(model, q, frame):
    jac = np.zeros((6, model.nv))
    for i in range(model.nv):
        step = np.zeros(model.nv)
        step[i] = H
        plus = frame_placement(model, integrate_configuration(model, q, step), frame)
        minus = frame_placement(model, integrate_configuration(model, q, -step), frame)
        jac[:3, i] = (plus.translation - minus.translation) / (2 * H)
        jac[3:, i] = so3_log(plus.rotation @ minus.rotation.T) / (2 * H)
    return jac


@pytest.mark.parametrize("name,frame", [("pendulum", "tip"), ("two_link", "hand"), ("planar_biped", "left_foot")])
def test_frame_jacobian_matches_finite_differences(zoo, name, frame):
    model = zoo[name]
    rng = np.random.default_rng(3)
    for _ in range(3):
        q = random_state(model, rng).q
        np.testing.assert_allclose(frame_jacobian(model, q, frame), _fd_frame_jacobian(model, q, frame), atol=1e-6)


def test_rh5_foot_jacobian_matches_finite_differences(rh5):
    q = random_state(rh5, np.random.default_rng(11)).q
    np.testing.assert_allclose(
        frame_jacobian(rh5, q, "right_foot"), _fd_frame_jacobian(rh5, q, "right_foot"), atol=1e-6
    )


def test_com_jacobian_matches_finite_differences(zoo):
    model = zoo["planar_biped"]
    q = random_state(model, np.random.default_rng(5)).q
    fd = np.zeros((3, model.nv))
    for i in range(model.nv):
        step = np.zeros(model.nv)
        step[i] = H
        fd[:, i] = (
            center_of_mass(model, integrate_configuration(model, q, step))
            - center_of_mass(model, integrate_configuration(model, q, -step))
        ) / (2 * H)
    np.testing.assert_allclose(com_jacobian(model, q), fd, atol=1e-6)


def test_pendulum_tip_velocity(zoo):
    model = zoo["pendulum"]
    theta, rate = 0.7, 1.3
    state = State([theta], [rate])
    placement = frame_placement(model, state.q, "tip")
    np.testing.assert_allclose(placement.translation, [-math.sin(theta), 0.0, -math.cos(theta)], atol=1e-12)
    velocity = frame_velocity(model, state, "tip")
    np.testing.assert_allclose(velocity[:3], rate * np.array([-math.cos(theta), 0.0, math.sin(theta)]), atol=1e-12)
    np.testing.assert_allclose(velocity[3:], [0.0, rate, 0.0], atol=1e-12)


def test_unknown_frame(zoo):
    with pytest.raises(UnknownFrameError):
        frame_placement(zoo["pendulum"], np.zeros(1), "nowhere")


def test_rh5_neutral_feet_are_mirrored(rh5):
    placements = forward_kinematics(rh5, neutral_state(rh5).q)
    left, right = placements["left_foot"].translation, placements["right_foot"].translation
    assert left[2] == pytest.approx(right[2], abs=1e-9)
    assert left[0] == pytest.approx(right[0], abs=1e-9)
    assert left[1] == pytest.approx(-right[1], abs=1e-9)


def test_rh5_sole_corners_span_the_foot(rh5):
    placements = forward_kinematics(rh5, neutral_state(rh5).q)
    rotation = placements["left_foot"].rotation
    local = {c: rotation.T @ (placements[f"left_foot_{c}"].translation - placements["left_foot"].translation) for c in ("fl", "fr", "rl", "rr")}
    assert local["fl"][0] - local["rl"][0] == pytest.approx(0.2, abs=1e-12)
    assert local["fl"][1] - local["fr"][1] == pytest.approx(0.08, abs=1e-12)


def test_base_translation_shifts_every_frame(rh5):
    q = random_state(rh5, np.random.default_rng(2)).q
    shifted = q.copy()
    shifted[:3] += [0.3, -0.2, 0.5]
    before, after = forward_kinematics(rh5, q), forward_kinematics(rh5, shifted)
    for name in ("left_foot", "right_hand", "pelvis"):
        np.testing.assert_allclose(after[name].translation - before[name].translation, [0.3, -0.2, 0.5], atol=1e-12)
    np.testing.assert_allclose(mass_matrix(rh5, shifted), mass_matrix(rh5, q), atol=1e-10)


@pytest.mark.parametrize("name", ["pendulum", "two_link", "planar_biped", "point_mass"])
def test_mass_matrix_is_symmetric_positive_definite(zoo, name):
    model = zoo[name]
    M = mass_matrix(model, random_state(model, np.random.default_rng(7)).q)
    np.testing.assert_allclose(M, M.T, atol=1e-12)
    assert np.linalg.eigvalsh(M).min() > 0


def test_mass_matrix_columns_from_inverse_dynamics(zoo):
    model = zoo["planar_biped"]
    q = random_state(model, np.random.default_rng(9)).q
    zero = np.zeros(model.nv)
    gravity = inverse_dynamics(model, q, zero, zero)
    M = mass_matrix(model, q)
    for i in range(model.nv):
        column = inverse_dynamics(model, q, zero, np.eye(model.nv)[i]) - gravity
        np.testing.assert_allclose(column, M[:, i], atol=1e-10)


def test_rh5_mass_matrix_columns_from_inverse_dynamics(rh5):
    q = random_state(rh5, np.random.default_rng(13)).q
    zero = np.zeros(rh5.nv)
    gravity = inverse_dynamics(rh5, q, zero, zero)
    M = mass_matrix(rh5, q)
    for i in (0, 5, 6, 12, 20, 28):
        column = inverse_dynamics(rh5, q, zero, np.eye(rh5.nv)[i]) - gravity
        np.testing.assert_allclose(column, M[:, i], atol=1e-9)


def test_single_free_body_mass_matrix_and_bias(zoo):
    model = zoo["point_mass"]
    q = np.array([0.0, 0.0, 1.0, 1.0, 0.0, 0.0, 0.0])
    np.testing.assert_allclose(mass_matrix(model, q), np.diag([2.0, 2.0, 2.0, 0.02, 0.02, 0.02]), atol=1e-14)
    np.testing.assert_allclose(bias_forces(model, q, np.zeros(6)), [0.0, 0.0, 2.0 * GRAVITY, 0.0, 0.0, 0.0], atol=1e-12)
    np.testing.assert_allclose(forward_dynamics(model, State(q, np.zeros(6)), np.zeros(0))[:3], [0.0, 0.0, -GRAVITY])


def test_energies(zoo):
    model = zoo["point_mass"]
    state = State([0.0, 0.0, 2.0, 1.0, 0.0, 0.0, 0.0], [1.0, 0.0, 0.0, 0.0, 0.0, 1.0])
    assert kinetic_energy(model, state) == pytest.approx(0.5 * 2.0 + 0.5 * 0.02)
    assert potential_energy(model, state.q) == pytest.approx(2.0 * GRAVITY * 2.0)


def test_contact_dynamics_satisfies_the_kkt_system(zoo):
    model = zoo["planar_biped"]
    rng = np.random.default_rng(21)
    contacts = ContactSet(("left_foot",))
    for _ in range(3):
        state = random_state(model, rng)
        tau = rng.normal(scale=5.0, size=model.nu)
        result = contact_forward_dynamics(model, state, contacts, tau)
        M = mass_matrix(model, state.q)
        J = contact_jacobian(model, state.q, contacts)
        lam = result.wrenches["left_foot"]
        residual = M @ result.vdot + bias_forces(model, state.q, state.v) - model.actuation_matrix @ tau - J.T @ lam
        np.testing.assert_allclose(residual, 0.0, atol=1e-8)
        np.testing.assert_allclose(J @ result.vdot + contact_drift(model, state, contacts), 0.0, atol=1e-8)


def test_rh5_double_support_kkt(rh5):
    rng = np.random.default_rng(4)
    state = random_state(rh5, rng, speed=0.2)
    contacts = ContactSet(("left_foot", "right_foot"))
    tau = rng.normal(scale=10.0, size=rh5.nu)
    result = contact_forward_dynamics(rh5, state, contacts, tau)
    J = contact_jacobian(rh5, state.q, contacts)
    assert J.shape == (12, rh5.nv)
    np.testing.assert_allclose(J @ result.vdot + contact_drift(rh5, state, contacts), 0.0, atol=1e-7)


def test_over_constrained_contacts_are_singular(zoo):
    model = zoo["planar_biped"]
    state = random_state(model, np.random.default_rng(1))
    with pytest.raises(ContactSingularityError) as ctx:
        contact_forward_dynamics(model, state, ContactSet(("left_foot", "right_foot")), np.zeros(model.nu))
    assert ctx.value.rank < ctx.value.expected


def test_wrong_torque_size(zoo):
    model = zoo["two_link"]
    with pytest.raises(DynamicsError):
        forward_dynamics(model, State(np.zeros(2), np.zeros(2)), np.zeros(3))


def test_standing_rh5_carries_its_weight(rh5):
    stance = stance_state(rh5)
    contacts = ContactSet(("left_foot", "right_foot"))
    tau, wrenches = gravity_compensation(rh5, stance, contacts)
    result = contact_forward_dynamics(rh5, stance, contacts, tau)
    assert np.max(np.abs(result.vdot)) < 1e-6
    total = 0.0
    for frame, wrench in result.wrenches.items():
        total += (frame_placement(rh5, stance.q, frame).rotation @ wrench[:3])[2]
        np.testing.assert_allclose(wrench, wrenches[frame], atol=1e-6)
    assert total == pytest.approx(62.5 * GRAVITY, abs=1e-6)


def test_impulse_is_a_no_op_at_rest(zoo):
    model = zoo["planar_biped"]
    state = random_state(model, np.random.default_rng(6))
    state = State(state.q, np.zeros(model.nv))
    result = impulse_dynamics(model, state, ContactSet(("left_foot",)))
    np.testing.assert_allclose(result.v_plus, 0.0, atol=1e-12)
    np.testing.assert_allclose(result.impulses["left_foot"], 0.0, atol=1e-12)


def test_point_mass_landing_impulse(zoo):
    model = zoo["point_mass"]
    state = State([0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0], [0.0, 0.0, -1.0, 0.0, 0.0, 0.0])
    result = impulse_dynamics(model, state, ContactSet(("sole",)))
    np.testing.assert_allclose(result.v_plus, 0.0, atol=1e-12)
    np.testing.assert_allclose(result.impulses["sole"], [0.0, 0.0, 2.0, 0.0, 0.0, 0.0], atol=1e-12)


def test_impulse_never_adds_kinetic_energy(zoo):
    model = zoo["planar_biped"]
    rng = np.random.default_rng(8)
    contacts = ContactSet(("right_foot",))
    for _ in range(5):
        state = random_state(model, rng, speed=1.0)
        result = impulse_dynamics(model, state, contacts)
        after = State(state.q, result.v_plus)
        assert kinetic_energy(model, after) <= kinetic_energy(model, state) + 1e-12
        np.testing.assert_allclose(contact_jacobian(model, state.q, contacts) @ result.v_plus, 0.0, atol=1e-9)


def test_integrate_state_fixed_point(zoo):
    model = zoo["planar_biped"]
    state = random_state(model, np.random.default_rng(0))
    state = State(state.q, np.zeros(model.nv))
    after = integrate_state(model, state, np.zeros(model.nv), 0.01)
    np.testing.assert_allclose(after.q, state.q, atol=1e-15)
    with pytest.raises(DynamicsError):
        integrate_state(model, state, np.zeros(model.nv), 0.0)


def test_integrate_quarter_turn_about_z(zoo):
    model = zoo["point_mass"]
    state = State([0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0], [0.0, 0.0, 0.0, 0.0, 0.0, math.pi / 2])
    after = integrate_state(model, state, np.zeros(6), 1.0)
    s = math.sqrt(0.5)
    np.testing.assert_allclose(after.q[3:7], [s, 0.0, 0.0, s], atol=1e-12)


def test_base_linear_velocity_is_local(zoo):
    model = zoo["point_mass"]
    s = math.sqrt(0.5)
    q = np.array([0.0, 0.0, 0.0, s, 0.0, 0.0, s])
    moved = integrate_configuration(model, q, np.array([1.0, 0.0, 0.0, 0.0, 0.0, 0.0]))
    np.testing.assert_allclose(moved[:3], [0.0, 1.0, 0.0], atol=1e-12)


def test_difference_inverts_integrate(zoo):
    model = zoo["planar_biped"]
    rng = np.random.default_rng(15)
    for _ in range(5):
        q = random_state(model, rng).q
        dq = rng.normal(scale=0.4, size=model.nv)
        np.testing.assert_allclose(difference_configuration(model, q, integrate_configuration(model, q, dq)), dq, atol=1e-10)


def test_integrate_jacobians_match_finite_differences(zoo):
    model = zoo["point_mass"]
    rng = np.random.default_rng(17)
    q = random_state(model, rng).q
    dq = rng.normal(scale=0.5, size=6)
    jq, jdq = integrate_jacobians(model, q, dq)
    base = integrate_configuration(model, q, dq)
    fd_q, fd_dq = np.zeros((6, 6)), np.zeros((6, 6))
    for i in range(6):
        e = np.zeros(6)
        e[i] = H
        fd_q[:, i] = difference_configuration(model, base, integrate_configuration(model, integrate_configuration(model, q, e), dq)) / H
        fd_dq[:, i] = difference_configuration(model, base, integrate_configuration(model, q, dq + e)) / H
    np.testing.assert_allclose(jq, fd_q, atol=1e-5)
    np.testing.assert_allclose(jdq, fd_dq, atol=1e-5)


def test_contact_dynamics_derivatives_match_finite_differences(zoo):
    model = zoo["planar_biped"]
    rng = np.random.default_rng(23)
    state = random_state(model, rng, speed=0.3)
    contacts = ContactSet(("left_foot",))
    tau = rng.normal(scale=5.0, size=model.nu)
    der = contact_dynamics_derivatives(model, state, contacts, tau)

    fd_u = np.zeros((model.nv, model.nu))
    for i in range(model.nu):
        e = np.zeros(model.nu)
        e[i] = 1e-4
        fd_u[:, i] = (
            contact_forward_dynamics(model, state, contacts, tau + e).vdot
            - contact_forward_dynamics(model, state, contacts, tau - e).vdot
        ) / 2e-4
    np.testing.assert_allclose(der.dvdot_du, fd_u, atol=1e-6)

    fd_x = np.zeros((model.nv, 2 * model.nv))
    for i in range(model.nv):
        e = np.zeros(model.nv)
        e[i] = H
        plus = State(integrate_configuration(model, state.q, e), state.v)
        minus = State(integrate_configuration(model, state.q, -e), state.v)
        fd_x[:, i] = (
            contact_forward_dynamics(model, plus, contacts, tau).vdot
            - contact_forward_dynamics(model, minus, contacts, tau).vdot
        ) / (2 * H)
        e[i] = 1e-4
        plus = State(state.q, state.v + e)
        minus = State(state.q, state.v - e)
        fd_x[:, model.nv + i] = (
            contact_forward_dynamics(model, plus, contacts, tau).vdot
            - contact_forward_dynamics(model, minus, contacts, tau).vdot
        ) / 2e-4
    np.testing.assert_allclose(der.dvdot_dx, fd_x, rtol=1e-4, atol=1e-4)
    assert der.dlam_dx.shape == (6, 2 * model.nv)
    assert der.dlam_du.shape == (6, model.nu)


def test_impulse_derivatives_shapes_and_velocity_block(zoo):
    model = zoo["planar_biped"]
    state = random_state(model, np.random.default_rng(29))
    contacts = ContactSet(("left_foot",))
    der = impulse_dynamics_derivatives(model, state, contacts)
    assert der.dvplus_dx.shape == (model.nv, 2 * model.nv)
    fd = np.zeros((model.nv, model.nv))
    for i in range(model.nv):
        e = np.zeros(model.nv)
        e[i] = 1e-4
        fd[:, i] = (
            impulse_dynamics(model, State(state.q, state.v + e), contacts).v_plus
            - impulse_dynamics(model, State(state.q, state.v - e), contacts).v_plus
        ) / 2e-4
    np.testing.assert_allclose(der.dvplus_dx[:, model.nv :], fd, atol=1e-8)
