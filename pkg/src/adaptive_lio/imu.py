"""Inertial machinery: NavState propagation between scans (midpoint rule),
motion de-skew of scan points against the propagated trajectory, and the pose
prior residual that anchors each frame's optimization to the prediction.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .geometry import Pose, exp_so3, log_so3, skew, so3_right_jacobian_inv
from .residuals import ResidualKind, ResidualTerm


class EmptySampleWindow(ValueError):
    pass


class NonMonotonicTimestamps(ValueError):
    pass


class PointOutsideWindow(ValueError):
    pass


@dataclass
class NavState:
    """Full estimator state: world-frame rotation/position/velocity plus biases."""

    rotation: np.ndarray
    position: np.ndarray
    velocity: np.ndarray
    gyro_bias: np.ndarray
    accel_bias: np.ndarray
    timestamp: float

    @staticmethod
    def initial(pose: Pose = None, velocity=None, timestamp: float = 0.0) -> "NavState":
        pose = pose or Pose.identity()
        vel = np.zeros(3) if velocity is None else np.asarray(velocity, dtype=float)
        return NavState(pose.rotation.copy(), pose.translation.copy(), vel,
                        np.zeros(3), np.zeros(3), float(timestamp))

    @property
    def pose(self) -> Pose:
        return Pose(self.rotation, self.position)


@dataclass
class ImuSample:
    timestamp: float
    gyro: np.ndarray       # rad/s, body frame
    accel: np.ndarray      # m/s^2, body frame specific force


class PoseTrajectory:
    """Piecewise-interpolated pose history over one propagation window."""

    def __init__(self, times: np.ndarray, rotations: list, translations: np.ndarray):
        self.times = np.asarray(times, dtype=float)
        self.rotations = rotations
        self.translations = np.asarray(translations, dtype=float)

    @property
    def t_start(self) -> float:
        return float(self.times[0])

    @property
    def t_end(self) -> float:
        return float(self.times[-1])

    def pose_at(self, t: float) -> Pose:
        if t < self.times[0] - 1e-9 or t > self.times[-1] + 1e-9:
            raise PointOutsideWindow(
                f"t={t} outside [{self.times[0]}, {self.times[-1]}]")
        i = int(np.clip(np.searchsorted(self.times, t) - 1, 0, len(self.times) - 2))
        t0, t1 = self.times[i], self.times[i + 1]
        s = 0.0 if t1 == t0 else float(np.clip((t - t0) / (t1 - t0), 0.0, 1.0))
        Ra, Rb = self.rotations[i], self.rotations[i + 1]
        R = Ra @ exp_so3(s * log_so3(Ra.T @ Rb))
        p = (1.0 - s) * self.translations[i] + s * self.translations[i + 1]
        return Pose(R, p)


@dataclass
class PropagationResult:
    state: NavState
    information: np.ndarray     # 6x6 prior information for the pose residual
    trajectory: PoseTrajectory


def propagate(state: NavState, samples: list, gravity: np.ndarray,
              w_rot: float = 1e4, w_trans: float = 1e4) -> PropagationResult:
    """Integrate IMU samples from the state's time to the last sample's time.

    Midpoint-rule integration with bias-corrected measurements; the returned
    information matrix is the documented diagonal surrogate scaled by 1/dt.
    """
    if not samples:
        raise EmptySampleWindow("propagate needs at least one IMU sample")
    times = np.array([s.timestamp for s in samples], dtype=float)
    if np.any(np.diff(times) < 0):
        raise NonMonotonicTimestamps("IMU samples must be time-ordered")

    g = np.asarray(gravity, dtype=float)
    R = state.rotation.copy()
    p = state.position.copy()
    v = state.velocity.copy()
    bg, ba = state.gyro_bias, state.accel_bias

    stamp_t = [state.timestamp]
    stamp_R = [R.copy()]
    stamp_p = [p.copy()]

    def step(dt, w0, a0, w1, a1):
        nonlocal R, p, v
        if dt <= 0:
            return
        w = 0.5 * (w0 + w1) - bg
        a = 0.5 * (a0 + a1) - ba
        R_mid = R @ exp_so3(w * (0.5 * dt))
        a_world = R_mid @ a + g
        p = p + v * dt + 0.5 * a_world * dt * dt
        v = v + a_world * dt
        R = R @ exp_so3(w * dt)

    first = samples[0]
    if first.timestamp > state.timestamp:
        step(first.timestamp - state.timestamp,
             np.asarray(first.gyro, float), np.asarray(first.accel, float),
             np.asarray(first.gyro, float), np.asarray(first.accel, float))
        stamp_t.append(first.timestamp)
        stamp_R.append(R.copy())
        stamp_p.append(p.copy())

    for s0, s1 in zip(samples[:-1], samples[1:]):
        step(s1.timestamp - s0.timestamp,
             np.asarray(s0.gyro, float), np.asarray(s0.accel, float),
             np.asarray(s1.gyro, float), np.asarray(s1.accel, float))
        stamp_t.append(s1.timestamp)
        stamp_R.append(R.copy())
        stamp_p.append(p.copy())

    end_t = float(times[-1])
    window = max(end_t - state.timestamp, 1e-6)
    info = np.diag([w_rot] * 3 + [w_trans] * 3) / window
    new_state = replace(state, rotation=R, position=p, velocity=v, timestamp=end_t)
    traj = PoseTrajectory(np.array(stamp_t), stamp_R, np.array(stamp_p))
    return PropagationResult(new_state, info, traj)


def _exp_so3_batch(omega: np.ndarray) -> np.ndarray:
    """Vectorized Rodrigues for an (N, 3) array of rotation vectors."""
    theta = np.linalg.norm(omega, axis=1)
    K = np.zeros((len(omega), 3, 3))
    K[:, 0, 1] = -omega[:, 2]
    K[:, 0, 2] = omega[:, 1]
    K[:, 1, 0] = omega[:, 2]
    K[:, 1, 2] = -omega[:, 0]
    K[:, 2, 0] = -omega[:, 1]
    K[:, 2, 1] = omega[:, 0]
    small = theta < 1e-8
    t_safe = np.where(small, 1.0, theta)
    a = np.where(small, 1.0, np.sin(t_safe) / t_safe)
    b = np.where(small, 0.5, (1.0 - np.cos(t_safe)) / (t_safe * t_safe))
    return np.eye(3) + a[:, None, None] * K + b[:, None, None] * (K @ K)


def deskew(points: np.ndarray, times: np.ndarray, traj: PoseTrajectory,
           t_ref: float = None) -> np.ndarray:
    """Move each point from its capture-time pose into the reference-time frame.

    Args:
        points: (N, 3) points in the sensor frame at their own timestamps.
        times: (N,) capture times, all within the trajectory window.
        t_ref: reference time (defaults to the trajectory end).

    Returns:
        (N, 3) points expressed in the sensor frame at t_ref.
    """
    points = np.asarray(points, dtype=float)
    times = np.asarray(times, dtype=float)
    if len(points) == 0:
        return points.copy()
    if times.min() < traj.t_start - 1e-9 or times.max() > traj.t_end + 1e-9:
        raise PointOutsideWindow("scan timestamps exceed the trajectory window")
    t_ref = traj.t_end if t_ref is None else float(t_ref)

    seg = np.clip(np.searchsorted(traj.times, times) - 1, 0, len(traj.times) - 2)
    t0 = traj.times[seg]
    t1 = traj.times[seg + 1]
    span = np.where(t1 > t0, t1 - t0, 1.0)
    s = np.clip((times - t0) / span, 0.0, 1.0)

    Ra = np.stack([traj.rotations[i] for i in seg])
    phis = np.stack([log_so3(traj.rotations[i].T @ traj.rotations[i + 1]) for i in seg])
    R_pt = Ra @ _exp_so3_batch(s[:, None] * phis)
    p_pt = (1.0 - s)[:, None] * traj.translations[seg] + s[:, None] * traj.translations[seg + 1]

    world = np.einsum("nij,nj->ni", R_pt, points) + p_pt
    T_ref = traj.pose_at(t_ref)
    return (world - T_ref.translation) @ T_ref.rotation


def prior_residual(predicted: Pose, current: Pose, information: np.ndarray) -> ResidualTerm:
    """Whitened pose deviation from the propagated prediction.

    value = U [log(R_pred^T R_cur); t_cur - t_pred] with U^T U = information;
    the rotation block of the Jacobian is the exact inverse right Jacobian.
    """
    info = np.asarray(information, dtype=float)
    U = np.linalg.cholesky(info).T
    phi = log_so3(predicted.rotation.T @ current.rotation)
    r = np.concatenate([phi, current.translation - predicted.translation])
    J = np.zeros((6, 6))
    J[:3, :3] = so3_right_jacobian_inv(phi)
    J[3:, 3:] = np.eye(3)
    return ResidualTerm(ResidualKind.PRIOR, U @ r, U @ J, 1.0)
