"""Rigid-body transforms, Euler conversions, and trajectory composition.

Conventions (these define the on-disk and checkpoint semantics, so they
are fixed):

* An Euler triple is ``(roll, pitch, yaw)`` in radians, rotations about
  the x, y, and z axes respectively, composed as
  ``R = Rz(yaw) @ Ry(pitch) @ Rx(roll)``.
* A 6-DoF pose is 3 translation components in meters followed by the
  Euler triple.
* An SE3 maps points from its own frame into the reference frame:
  ``p_ref = R @ p_local + t`` (camera-to-world for camera poses).
* A relative pose between frames a and b is expressed in frame a:
  ``R_rel = R_a^T R_b``, ``t_rel = R_a^T (t_b - t_a)``.
* Gimbal lock (|pitch| = pi/2) decomposes with roll fixed to 0.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ContractError

# Composing long chains of relatives accumulates rounding in the rotation;
# project back onto SO(3) every this many steps.
REORTHONORMALIZE_EVERY = 100


def euler_to_rotation(euler):
    """Rotation matrix for (roll, pitch, yaw): R = Rz @ Ry @ Rx."""
    roll, pitch, yaw = (float(v) for v in euler)
    ca, sa = np.cos(roll), np.sin(roll)
    cb, sb = np.cos(pitch), np.sin(pitch)
    cc, sc = np.cos(yaw), np.sin(yaw)
    return np.array(
        [
            [cb * cc, cc * sa * sb - ca * sc, sc * sa + ca * cc * sb],
            [cb * sc, ca * cc + sa * sb * sc, ca * sb * sc - cc * sa],
            [-sb, cb * sa, ca * cb],
        ]
    )


def rotation_to_euler(R, orthonormal_tol=1e-6):
    """Recover (roll, pitch, yaw) from a rotation matrix.

    Inverse of `euler_to_rotation`; pitch lands in [-pi/2, pi/2]. The asin
    argument is clamped, and at gimbal lock (|pitch| = pi/2) the
    convention roll = 0 picks one of the infinitely many decompositions.

    Raises ContractError if R is not orthonormal within `orthonormal_tol`
    (max absolute deviation of R^T R from the identity).
    """
    R = np.asarray(R, dtype=np.float64)
    if R.shape != (3, 3):
        raise ContractError(f"rotation_to_euler: expected a 3x3 matrix, got {R.shape}")
    deviation = np.abs(R.T @ R - np.eye(3)).max()
    if deviation > orthonormal_tol:
        raise ContractError(
            f"rotation_to_euler: matrix deviates from orthonormal by {deviation:.3e} "
            f"(tolerance {orthonormal_tol:.1e})"
        )
    sin_pitch = np.clip(-R[2, 0], -1.0, 1.0)
    pitch = np.arcsin(sin_pitch)
    if abs(sin_pitch) >= 1.0 - 1e-12:
        # Gimbal lock: only roll+yaw or roll-yaw is observable.
        roll = 0.0
        yaw = np.arctan2(-R[0, 1], R[1, 1])
    else:
        roll = np.arctan2(R[2, 1], R[2, 2])
        yaw = np.arctan2(R[1, 0], R[0, 0])
    return np.array([roll, pitch, yaw])


def nearest_rotation(M):
    """Project a near-rotation matrix onto SO(3) (polar decomposition)."""
    u, _, vt = np.linalg.svd(np.asarray(M, dtype=np.float64))
    R = u @ vt
    if np.linalg.det(R) < 0:
        u = u.copy()
        u[:, -1] = -u[:, -1]
        R = u @ vt
    return R


@dataclass
class Pose6DoF:
    """Translation (meters) + Euler angles (radians), the network's output unit."""

    translation: np.ndarray
    euler: np.ndarray

    def __post_init__(self):
        self.translation = np.asarray(self.translation, dtype=np.float64).reshape(3)
        self.euler = np.asarray(self.euler, dtype=np.float64).reshape(3)

    @classmethod
    def identity(cls):
        return cls(np.zeros(3), np.zeros(3))

    @classmethod
    def from_vector(cls, v):
        v = np.asarray(v, dtype=np.float64).reshape(6)
        return cls(v[:3], v[3:])

    def as_vector(self):
        return np.concatenate([self.translation, self.euler])

    def to_se3(self):
        return SE3(euler_to_rotation(self.euler), self.translation)


@dataclass
class SE3:
    """Rigid transform: 3x3 rotation + translation vector."""

    rotation: np.ndarray
    translation: np.ndarray

    def __post_init__(self):
        self.rotation = np.asarray(self.rotation, dtype=np.float64).reshape(3, 3)
        self.translation = np.asarray(self.translation, dtype=np.float64).reshape(3)

    @classmethod
    def identity(cls):
        return cls(np.eye(3), np.zeros(3))

    def compose(self, other):
        """self ∘ other: apply `other` in self's frame."""
        return SE3(self.rotation @ other.rotation, self.rotation @ other.translation + self.translation)

    def inverse(self):
        return SE3(self.rotation.T, -self.rotation.T @ self.translation)

    def apply(self, points):
        """Map points (3,) or (N,3) from this frame to the reference frame."""
        p = np.asarray(points, dtype=np.float64)
        return p @ self.rotation.T + self.translation

    def as_matrix(self):
        m = np.eye(4)
        m[:3, :3] = self.rotation
        m[:3, 3] = self.translation
        return m

    def orthonormality_deviation(self):
        return float(np.abs(self.rotation.T @ self.rotation - np.eye(3)).max())


def relative_pose(a, b):
    """The 6-DoF motion from frame a to frame b, expressed in frame a."""
    r_rel = a.rotation.T @ b.rotation
    t_rel = a.rotation.T @ (b.translation - a.translation)
    return Pose6DoF(t_rel, rotation_to_euler(r_rel))


@dataclass
class Trajectory:
    """Ordered absolute poses, all in the first frame's coordinate system."""

    poses: list
    timestamps: list | None = None

    def __len__(self):
        return len(self.poses)

    def positions(self):
        """Stacked translations, shape (N, 3)."""
        return np.array([p.translation for p in self.poses])

    def anchored(self):
        """Re-expressed so the first pose is the identity."""
        first_inv = self.poses[0].inverse()
        return Trajectory([first_inv.compose(p) for p in self.poses], self.timestamps)


def compose_trajectory(relatives):
    """Chain relative poses into an absolute trajectory starting at identity.

    Returns len(relatives) + 1 poses; the rotation is projected back onto
    SO(3) every REORTHONORMALIZE_EVERY steps so that round-off stays below
    1e-9 over arbitrarily long chains.
    """
    poses = [SE3.identity()]
    current = SE3.identity()
    for i, rel in enumerate(relatives, start=1):
        step = rel.to_se3() if isinstance(rel, Pose6DoF) else rel
        current = current.compose(step)
        if i % REORTHONORMALIZE_EVERY == 0:
            current = SE3(nearest_rotation(current.rotation), current.translation)
        poses.append(current)
    return Trajectory(poses)


def trajectory_to_relatives(trajectory):
    """Per-step relative poses; exact inverse of compose_trajectory."""
    poses = trajectory.poses
    return [relative_pose(poses[i], poses[i + 1]) for i in range(len(poses) - 1)]


def rotation_angle(R):
    """Geodesic angle of a rotation matrix, via the clamped trace formula."""
    return float(np.arccos(np.clip((np.trace(R) - 1.0) / 2.0, -1.0, 1.0)))
