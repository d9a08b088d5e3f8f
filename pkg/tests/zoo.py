"""Small models shared by the dynamics, cost and solver tests."""

import numpy as np

from hddp_dynamics import State
from spatial import quat_normalize

POINT_MASS = """
model point_mass
body body mass=2 com=0,0,0 inertia=0.02,0.02,0.02,0,0,0
joint root type=free parent=world child=body
frame sole body=body xyz=0,0,0
"""

PENDULUM = """
model pendulum
body link mass=1 com=0,0,-1 inertia=0.001,0.001,0.001,0,0,0
joint hinge type=revolute parent=world child=link axis=0,1,0 limits=-3,3 vmax=10 taumax=50
frame tip body=link xyz=0,0,-1
"""

TWO_LINK = """
model two_link
body upper mass=1.5 com=0,0,-0.25 inertia=0.03,0.03,0.002,0,0,0
body lower mass=1.0 com=0,0,-0.2 inertia=0.015,0.015,0.001,0,0,0
joint shoulder type=revolute parent=world child=upper axis=0,1,0 limits=-2.5,2.5 vmax=8 taumax=60
joint elbow type=revolute parent=upper child=lower axis=0,1,0 xyz=0,0,-0.5 limits=-2.5,2.5 vmax=8 taumax=40
frame hand body=lower xyz=0,0,-0.4
"""

# torso, two thighs, two shanks; hips and knees pitch only
PLANAR_BIPED = """
model planar_biped
body torso mass=12 com=0,0,0.25 inertia=0.3,0.3,0.05,0,0,0
body left_thigh mass=3 com=0,0,-0.2 inertia=0.04,0.04,0.004,0,0,0
body left_shank mass=2 com=0,0,-0.2 inertia=0.027,0.027,0.003,0,0,0
body right_thigh mass=3 com=0,0,-0.2 inertia=0.04,0.04,0.004,0,0,0
body right_shank mass=2 com=0,0,-0.2 inertia=0.027,0.027,0.003,0,0,0
joint root type=free parent=world child=torso
joint left_hip type=revolute parent=torso child=left_thigh axis=0,1,0 xyz=0,0.1,0 limits=-1.5,1.5 vmax=6 taumax=150
joint left_knee type=revolute parent=left_thigh child=left_shank axis=0,1,0 xyz=0,0,-0.4 limits=0,2.4 vmax=6 taumax=150
joint right_hip type=revolute parent=torso child=right_thigh axis=0,1,0 xyz=0,-0.1,0 limits=-1.5,1.5 vmax=6 taumax=150
joint right_knee type=revolute parent=right_thigh child=right_shank axis=0,1,0 xyz=0,0,-0.4 limits=0,2.4 vmax=6 taumax=150
frame left_foot body=left_shank xyz=0,0,-0.4
frame right_foot body=right_shank xyz=0,0,-0.4
"""

ZOO = {
    "point_mass": POINT_MASS,
    "pendulum": PENDULUM,
    "two_link": TWO_LINK,
    "planar_biped": PLANAR_BIPED,
}


def random_state(model, rng: np.random.Generator, speed: float = 0.5) -> State:
    """Random configuration inside the joint limits (wide ranges capped at +-2.5 rad)."""
    q = np.zeros(model.nq)
    if model.has_free_base:
        q[:3] = rng.uniform(-0.5, 0.5, 3)
        q[3:7] = quat_normalize(rng.normal(size=4))
    lower = np.maximum(model.position_lower, -2.5)
    upper = np.minimum(model.position_upper, 2.5)
    margin = 0.05 * (upper - lower)
    q[model.joint_q_index] = rng.uniform(lower + margin, upper - margin)
    return State(q, speed * rng.normal(size=model.nv))


def standing_trajectory(model, knots=10, knot_dt=0.03, payload=None, feet=("left_foot", "right_foot")):
    """Constant double-support stance with the torques and wrenches that hold it."""
    from hddp_dynamics import ContactSet, gravity_compensation
    from hddp_gaitplan import stance_state
    from hddp_model import model_hash
    from hddp_trajio import TrajectoryFile

    stance = stance_state(model, feet)
    tau, wrenches = gravity_compensation(model, stance, ContactSet(tuple(feet)))
    return TrajectoryFile(
        model_hash=model_hash(model),
        knot_dt=knot_dt,
        times=np.arange(knots + 1) * knot_dt,
        qs=np.tile(stance.q, (knots + 1, 1)),
        vs=np.zeros((knots + 1, model.nv)),
        us=np.tile(tau, (knots, 1)),
        frames=tuple(feet),
        active=np.ones((knots, len(feet)), dtype=bool),
        wrenches=np.tile(np.stack([wrenches[f] for f in feet]), (knots, 1, 1)),
        payload=dict(payload or {}),
    )
