"""
Rotation and spatial-vector helpers shared by the model, dynamics and cost layers.

Conventions:
    - quaternions are stored scalar-first (w, x, y, z) and kept unit norm
    - spatial motion and force vectors are ordered (linear, angular)
    - every helper accepts leading batch axes
"""

from dataclasses import dataclass, field

import numpy as np
from scipy.spatial.transform import Rotation

_SMALL_ANGLE = 1e-8


def skew(v: np.ndarray) -> np.ndarray:
    v = np.asarray(v, dtype=float)
    out = np.zeros(v.shape[:-1] + (3, 3))
    out[..., 0, 1] = -v[..., 2]
    out[..., 0, 2] = v[..., 1]
    out[..., 1, 0] = v[..., 2]
    out[..., 1, 2] = -v[..., 0]
    out[..., 2, 0] = -v[..., 1]
    out[..., 2, 1] = v[..., 0]
    return out


def quat_normalize(q: np.ndarray) -> np.ndarray:
    q = np.asarray(q, dtype=float)
    return q / np.linalg.norm(q, axis=-1, keepdims=True)


def quat_multiply(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    aw, ax, ay, az = np.moveaxis(np.asarray(a, dtype=float), -1, 0)
    bw, bx, by, bz = np.moveaxis(np.asarray(b, dtype=float), -1, 0)
    return np.stack(
        [
            aw * bw - ax * bx - ay * by - az * bz,
            aw * bx + ax * bw + ay * bz - az * by,
            aw * by - ax * bz + ay * bw + az * bx,
            aw * bz + ax * by - ay * bx + az * bw,
        ],
        axis=-1,
    )


def quat_conjugate(q: np.ndarray) -> np.ndarray:
    q = np.array(q, dtype=float)
    q[..., 1:] *= -1.0
    return q


def quat_to_matrix(q: np.ndarray) -> np.ndarray:
    q = quat_normalize(q)
    w, x, y, z = np.moveaxis(q, -1, 0)
    out = np.empty(q.shape[:-1] + (3, 3))
    out[..., 0, 0] = 1 - 2 * (y * y + z * z)
    out[..., 0, 1] = 2 * (x * y - w * z)
    out[..., 0, 2] = 2 * (x * z + w * y)
    out[..., 1, 0] = 2 * (x * y + w * z)
    out[..., 1, 1] = 1 - 2 * (x * x + z * z)
    out[..., 1, 2] = 2 * (y * z - w * x)
    out[..., 2, 0] = 2 * (x * z - w * y)
    out[..., 2, 1] = 2 * (y * z + w * x)
    out[..., 2, 2] = 1 - 2 * (x * x + y * y)
    return out


def matrix_to_quat(rotation: np.ndarray) -> np.ndarray:
    xyzw = Rotation.from_matrix(rotation).as_quat()
    q = np.concatenate([xyzw[..., 3:], xyzw[..., :3]], axis=-1)
    # w >= 0 so identical rotations serialize identically
    return np.where(q[..., :1] < 0.0, -q, q)


def quat_exp(omega: np.ndarray) -> np.ndarray:
    """Unit quaternion of the rotation vector ``omega``."""
    omega = np.asarray(omega, dtype=float)
    theta = np.linalg.norm(omega, axis=-1, keepdims=True)
    half = 0.5 * theta
    small = theta < _SMALL_ANGLE
    safe = np.where(small, 1.0, theta)
    scale = np.where(small, 0.5 - theta**2 / 48.0, np.sin(half) / safe)
    return np.concatenate([np.cos(half), scale * omega], axis=-1)


def quat_log(q: np.ndarray) -> np.ndarray:
    """Rotation vector of a unit quaternion, angle in [0, pi]."""
    q = np.asarray(q, dtype=float)
    q = np.where(q[..., :1] < 0.0, -q, q)
    w = q[..., :1]
    vec = q[..., 1:]
    norm = np.linalg.norm(vec, axis=-1, keepdims=True)
    small = norm < _SMALL_ANGLE
    safe = np.where(small, 1.0, norm)
    scale = np.where(small, 2.0 / np.maximum(w, _SMALL_ANGLE), 2.0 * np.arctan2(norm, w) / safe)
    return scale * vec


def so3_exp(omega: np.ndarray) -> np.ndarray:
    omega = np.asarray(omega, dtype=float)
    theta = np.linalg.norm(omega, axis=-1)[..., None, None]
    small = theta < _SMALL_ANGLE
    safe = np.where(small, 1.0, theta)
    a = np.where(small, 1.0 - theta**2 / 6.0, np.sin(theta) / safe)
    b = np.where(small, 0.5 - theta**2 / 24.0, (1.0 - np.cos(theta)) / safe**2)
    k = skew(omega)
    return np.eye(3) + a * k + b * (k @ k)


def so3_log(rotation: np.ndarray) -> np.ndarray:
    return Rotation.from_matrix(rotation).as_rotvec()


def right_jacobian(omega: np.ndarray) -> np.ndarray:
    omega = np.asarray(omega, dtype=float)
    theta = np.linalg.norm(omega, axis=-1)[..., None, None]
    small = theta < _SMALL_ANGLE
    safe = np.where(small, 1.0, theta)
    a = np.where(small, 0.5 - theta**2 / 24.0, (1.0 - np.cos(theta)) / safe**2)
    b = np.where(small, 1.0 / 6.0 - theta**2 / 120.0, (theta - np.sin(theta)) / safe**3)
    k = skew(omega)
    return np.eye(3) - a * k + b * (k @ k)


def right_jacobian_inv(omega: np.ndarray) -> np.ndarray:
    omega = np.asarray(omega, dtype=float)
    theta = np.linalg.norm(omega, axis=-1)[..., None, None]
    small = theta < 1e-4
    safe = np.where(small, 1.0, theta)
    c = np.where(
        small,
        1.0 / 12.0 + theta**2 / 720.0,
        1.0 / safe**2 - (1.0 + np.cos(safe)) / (2.0 * safe * np.sin(safe)),
    )
    k = skew(omega)
    return np.eye(3) + 0.5 * k + c * (k @ k)


def rpy_to_matrix(rpy: np.ndarray) -> np.ndarray:
    """Fixed-axis roll, pitch, yaw: ``Rz(yaw) @ Ry(pitch) @ Rx(roll)``."""
    return Rotation.from_euler("xyz", np.asarray(rpy, dtype=float)).as_matrix()


def axis_angle_matrix(axis: np.ndarray, angle: np.ndarray) -> np.ndarray:
    """Rotations about a fixed unit ``axis`` for a batch of angles."""
    angle = np.asarray(angle, dtype=float)[..., None, None]
    k = skew(np.asarray(axis, dtype=float))
    return np.eye(3) + np.sin(angle) * k + (1.0 - np.cos(angle)) * (k @ k)


def motion_cross(v: np.ndarray, m: np.ndarray) -> np.ndarray:
    """Spatial motion cross product ``v x m`` for (linear, angular) vectors."""
    lin, ang = v[..., :3], v[..., 3:]
    return np.concatenate(
        [np.cross(ang, m[..., :3]) + np.cross(lin, m[..., 3:]), np.cross(ang, m[..., 3:])],
        axis=-1,
    )


def force_cross(v: np.ndarray, f: np.ndarray) -> np.ndarray:
    """Spatial force cross product ``v x* f``."""
    lin, ang = v[..., :3], v[..., 3:]
    return np.concatenate(
        [np.cross(ang, f[..., :3]), np.cross(ang, f[..., 3:]) + np.cross(lin, f[..., :3])],
        axis=-1,
    )


def spatial_inertia(mass: np.ndarray, com: np.ndarray, inertia: np.ndarray) -> np.ndarray:
    """6x6 inertia about the world origin of a body with world CoM ``com``.

    ``inertia`` is the rotational inertia about the CoM in world axes.
    """
    mass = np.asarray(mass, dtype=float)[..., None, None]
    c = skew(com)
    out = np.zeros(c.shape[:-2] + (6, 6))
    out[..., :3, :3] = mass * np.eye(3)
    out[..., :3, 3:] = -mass * c
    out[..., 3:, :3] = mass * c
    out[..., 3:, 3:] = inertia - mass * (c @ c)
    return out


def shift_to_point(point: np.ndarray) -> np.ndarray:
    """Maps an origin-referenced twist to the velocity of ``point`` (world-aligned)."""
    point = np.asarray(point, dtype=float)
    out = np.zeros(point.shape[:-1] + (6, 6))
    out[..., :3, :3] = np.eye(3)
    out[..., :3, 3:] = -skew(point)
    out[..., 3:, 3:] = np.eye(3)
    return out


@dataclass(frozen=True, eq=False)
class Placement:
    """Rigid transform: ``world_point = rotation @ local_point + translation``."""

    rotation: np.ndarray = field(default_factory=lambda: np.eye(3))
    translation: np.ndarray = field(default_factory=lambda: np.zeros(3))

    @classmethod
    def from_xyz_rpy(cls, xyz, rpy) -> "Placement":
        return cls(rpy_to_matrix(rpy), np.asarray(xyz, dtype=float))

    def compose(self, other: "Placement") -> "Placement":
        return Placement(
            self.rotation @ other.rotation,
            self.rotation @ other.translation + self.translation,
        )

    def inverse(self) -> "Placement":
        rt = self.rotation.T
        return Placement(rt, -rt @ self.translation)

    def act(self, point: np.ndarray) -> np.ndarray:
        return self.rotation @ np.asarray(point, dtype=float) + self.translation

    def log_error(self, reference: "Placement") -> np.ndarray:
        """6D error (world translation offset, rotation vector of ``reference^T @ self``)."""
        return np.concatenate(
            [
                self.translation - reference.translation,
                so3_log(reference.rotation.T @ self.rotation),
            ]
        )
