"""Minimal SO(3)/SE(3) toolkit: skew operators, exponential/log maps, rigid poses.

Rotations are plain 3x3 numpy arrays throughout; the perturbation convention is
right-multiplicative, R <- R @ exp_so3(delta_theta), with 6-vectors ordered
[delta_theta; delta_t].
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

_SMALL_ANGLE = 1e-8
_ORTHO_DRIFT = 1e-12


def skew(v: np.ndarray) -> np.ndarray:
    """Cross-product matrix: skew(v) @ w == np.cross(v, w)."""
    x, y, z = v
    return np.array([[0.0, -z, y],
                     [z, 0.0, -x],
                     [-y, x, 0.0]])


def exp_so3(omega: np.ndarray) -> np.ndarray:
    """Rodrigues formula; 2nd-order Taylor branch below the small-angle cutoff."""
    omega = np.asarray(omega, dtype=float)
    theta = float(np.linalg.norm(omega))
    K = skew(omega)
    if theta < _SMALL_ANGLE:
        return np.eye(3) + K + 0.5 * (K @ K)
    a = np.sin(theta) / theta
    b = (1.0 - np.cos(theta)) / (theta * theta)
    return np.eye(3) + a * K + b * (K @ K)


def log_so3(R: np.ndarray) -> np.ndarray:
    """Rotation vector of R; inverse of exp_so3 for angles in [0, pi)."""
    cos_theta = np.clip(0.5 * (np.trace(R) - 1.0), -1.0, 1.0)
    theta = float(np.arccos(cos_theta))
    axis_raw = np.array([R[2, 1] - R[1, 2], R[0, 2] - R[2, 0], R[1, 0] - R[0, 1]])
    if theta < _SMALL_ANGLE:
        return 0.5 * axis_raw
    if np.pi - theta < 1e-6:
        # Near pi the off-diagonal difference vanishes; recover the axis from R + I.
        B = 0.5 * (R + np.eye(3))
        axis = np.sqrt(np.maximum(np.diag(B), 0.0))
        k = int(np.argmax(axis))
        axis = B[:, k] / max(axis[k], 1e-12)
        axis /= np.linalg.norm(axis)
        # Pick the sign consistent with the off-diagonal residue.
        if np.dot(axis, axis_raw) < 0:
            axis = -axis
        return theta * axis
    return (theta / (2.0 * np.sin(theta))) * axis_raw


def so3_left_jacobian(phi: np.ndarray) -> np.ndarray:
    """Left Jacobian J_l of SO(3); integrates body rates into group displacement."""
    theta = float(np.linalg.norm(phi))
    K = skew(phi)
    if theta < _SMALL_ANGLE:
        return np.eye(3) + 0.5 * K + (K @ K) / 6.0
    t2 = theta * theta
    return (np.eye(3)
            + ((1.0 - np.cos(theta)) / t2) * K
            + ((theta - np.sin(theta)) / (t2 * theta)) * (K @ K))


def so3_right_jacobian_inv(phi: np.ndarray) -> np.ndarray:
    """Inverse right Jacobian; exact derivative of log(R exp(d)) at d=0."""
    theta = float(np.linalg.norm(phi))
    K = skew(phi)
    if theta < _SMALL_ANGLE:
        return np.eye(3) + 0.5 * K + (K @ K) / 12.0
    t2 = theta * theta
    c = 1.0 / t2 - (1.0 + np.cos(theta)) / (2.0 * theta * np.sin(theta))
    return np.eye(3) + 0.5 * K + c * (K @ K)


def orthonormalize(R: np.ndarray) -> np.ndarray:
    """Nearest rotation matrix by polar decomposition (det forced to +1)."""
    U, _, Vt = np.linalg.svd(R)
    D = np.eye(3)
    D[2, 2] = np.sign(np.linalg.det(U @ Vt))
    return U @ D @ Vt


def quat_from_matrix(R: np.ndarray) -> np.ndarray:
    """Unit quaternion (x, y, z, w) of a rotation matrix."""
    from scipy.spatial.transform import Rotation as _R

    return _R.from_matrix(R).as_quat()


def matrix_from_quat(q: np.ndarray) -> np.ndarray:
    """Rotation matrix from a quaternion (x, y, z, w)."""
    from scipy.spatial.transform import Rotation as _R

    return _R.from_quat(np.asarray(q, dtype=float)).as_matrix()


@dataclass(frozen=True)
class Pose:
    """Rigid transform p_world = rotation @ p_local + translation.

    Instances are immutable values; the stored arrays are marked read-only so
    they can be shared freely.
    """

    rotation: np.ndarray = field(default_factory=lambda: np.eye(3))
    translation: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self):
        R = np.array(self.rotation, dtype=float)
        t = np.array(self.translation, dtype=float).reshape(3)
        # Re-orthonormalize only when composition drift is measurable; keeps
        # long chains (1e4 composes) within 1e-9 of orthonormal.
        if abs(np.abs(R.T @ R - np.eye(3)).max()) > _ORTHO_DRIFT:
            R = orthonormalize(R)
        R.setflags(write=False)
        t.setflags(write=False)
        object.__setattr__(self, "rotation", R)
        object.__setattr__(self, "translation", t)

    @staticmethod
    def identity() -> "Pose":
        return Pose(np.eye(3), np.zeros(3))

    def compose(self, other: "Pose") -> "Pose":
        return Pose(self.rotation @ other.rotation,
                    self.rotation @ other.translation + self.translation)

    def __matmul__(self, other: "Pose") -> "Pose":
        return self.compose(other)

    def inverse(self) -> "Pose":
        Rt = self.rotation.T
        return Pose(Rt, -Rt @ self.translation)

    def apply(self, p: np.ndarray) -> np.ndarray:
        """Transform a 3-vector or an (N, 3) array of points."""
        p = np.asarray(p, dtype=float)
        if p.ndim == 1:
            return self.rotation @ p + self.translation
        return p @ self.rotation.T + self.translation

    def retract(self, delta: np.ndarray) -> "Pose":
        """Right-perturbation update from a 6-vector [delta_theta; delta_t]."""
        delta = np.asarray(delta, dtype=float)
        return Pose(self.rotation @ exp_so3(delta[:3]), self.translation + delta[3:])

    def local_delta(self, other: "Pose") -> np.ndarray:
        """6-vector [log(R^T R_other); t_other - t] taking self toward other."""
        return np.concatenate([log_so3(self.rotation.T @ other.rotation),
                               other.translation - self.translation])


def apply_pose(T: Pose, p: np.ndarray) -> np.ndarray:
    """Functional alias for Pose.apply."""
    return T.apply(p)
