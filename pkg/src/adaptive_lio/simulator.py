"""Synthetic data generation: planar-patch worlds, piecewise-constant-twist
trajectories with closed-form kinematics, raycast LiDAR scans (optionally
motion-distorted and range-noisy), and analytic IMU streams.

Scene presets are engineered to exercise specific degeneracies: a corridor is
translation-degenerate along its axis, a faceted tunnel additionally weakens
roll, and a bare ground plane constrains only z, roll, and pitch.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .dataset import ScanFrame, write_dataset
from .geometry import Pose, exp_so3, quat_from_matrix, skew, so3_left_jacobian
from .imu import ImuSample

PRESETS = ("room", "corridor", "tunnel", "ground_only")


class InvalidDimensions(ValueError):
    pass


@dataclass
class PlanarPatch:
    center: np.ndarray
    normal: np.ndarray
    u_axis: np.ndarray
    v_axis: np.ndarray
    half_u: float = 0.0
    half_v: float = 0.0
    infinite: bool = False


@dataclass
class World:
    patches: list
    preset: str
    params: dict


def _rect(center, normal, u_axis, half_u, half_v) -> PlanarPatch:
    n = np.asarray(normal, dtype=float)
    n = n / np.linalg.norm(n)
    u = np.asarray(u_axis, dtype=float)
    u = u / np.linalg.norm(u)
    v = np.cross(n, u)
    return PlanarPatch(np.asarray(center, dtype=float), n, u, v,
                       float(half_u), float(half_v))


def make_world(preset: str, params: dict = None) -> World:
    params = dict(params or {})
    if preset == "room":
        sx, sy, sz = params.get("size", (10.0, 8.0, 3.0))
        if min(sx, sy, sz) <= 0:
            raise InvalidDimensions("room dimensions must be positive")
        params["size"] = [sx, sy, sz]
        patches = [
            _rect([0, 0, 0], [0, 0, 1], [1, 0, 0], sx / 2, sy / 2),
            _rect([0, 0, sz], [0, 0, -1], [1, 0, 0], sx / 2, sy / 2),
            _rect([sx / 2, 0, sz / 2], [-1, 0, 0], [0, 1, 0], sy / 2, sz / 2),
            _rect([-sx / 2, 0, sz / 2], [1, 0, 0], [0, 1, 0], sy / 2, sz / 2),
            _rect([0, sy / 2, sz / 2], [0, -1, 0], [1, 0, 0], sx / 2, sz / 2),
            _rect([0, -sy / 2, sz / 2], [0, 1, 0], [1, 0, 0], sx / 2, sz / 2),
        ]
    elif preset == "corridor":
        length = params.setdefault("length", 50.0)
        width = params.setdefault("width", 4.0)
        height = params.setdefault("height", 3.0)
        if min(length, width, height) <= 0:
            raise InvalidDimensions("corridor dimensions must be positive")
        patches = [
            _rect([0, 0, 0], [0, 0, 1], [1, 0, 0], length / 2, width / 2),
            _rect([0, 0, height], [0, 0, -1], [1, 0, 0], length / 2, width / 2),
            _rect([0, width / 2, height / 2], [0, -1, 0], [1, 0, 0], length / 2, height / 2),
            _rect([0, -width / 2, height / 2], [0, 1, 0], [1, 0, 0], length / 2, height / 2),
        ]
    elif preset == "tunnel":
        radius = params.setdefault("radius", 2.0)
        length = params.setdefault("length", 60.0)
        facets = int(params.setdefault("facets", 12))
        if radius <= 0 or length <= 0 or facets < 3:
            raise InvalidDimensions("tunnel needs positive radius/length and >= 3 facets")
        half_v = radius * math.tan(math.pi / facets)
        patches = []
        for k in range(facets):
            phi = -math.pi / 2 + 2 * math.pi * k / facets
            radial = np.array([0.0, math.cos(phi), math.sin(phi)])
            center = np.array([0.0, 0.0, radius]) + radius * radial
            patches.append(_rect(center, -radial, [1, 0, 0], length / 2, half_v))
    elif preset == "ground_only":
        patch = _rect([0, 0, 0], [0, 0, 1], [1, 0, 0], 0.0, 0.0)
        patch.infinite = True
        patches = [patch]
    else:
        raise InvalidDimensions(f"unknown preset {preset!r}; expected one of {PRESETS}")
    return World(patches, preset, params)


# -- trajectories --------------------------------------------------------------


@dataclass
class TwistSegment:
    omega: np.ndarray       # body angular rate, rad/s
    velocity: np.ndarray    # body linear rate, m/s
    duration: float

    def __post_init__(self):
        self.omega = np.asarray(self.omega, dtype=float)
        self.velocity = np.asarray(self.velocity, dtype=float)
        if self.duration <= 0:
            raise InvalidDimensions("segment duration must be positive")
        if np.linalg.norm(self.omega) > 2.0 or np.linalg.norm(self.velocity) > 3.0:
            raise InvalidDimensions("twist magnitude outside sensor-plausible bounds")


@dataclass
class TrajectorySpec:
    """Piecewise-constant body twist; poses/velocities/IMU are closed form."""

    start: Pose
    segments: list

    @property
    def duration(self) -> float:
        return float(sum(s.duration for s in self.segments))

    def _segment_state(self, t: float):
        """(segment, base pose at segment start, elapsed time within it)."""
        t = min(max(t, 0.0), self.duration)
        pose = self.start
        remaining = t
        for seg in self.segments:
            if remaining <= seg.duration or seg is self.segments[-1]:
                return seg, pose, min(remaining, seg.duration)
            pose = pose.compose(_twist_pose(seg.omega, seg.velocity, seg.duration))
            remaining -= seg.duration
        raise RuntimeError("unreachable")

    def pose_at(self, t: float) -> Pose:
        seg, base, tau = self._segment_state(t)
        return base.compose(_twist_pose(seg.omega, seg.velocity, tau))

    def poses_at(self, times: np.ndarray):
        """Vectorized pose evaluation: (N, 3, 3) rotations and (N, 3) positions.

        Times are bucketed per segment; within a segment the rotation axis is
        fixed, so Rodrigues terms reduce to scalar sin/cos arrays.
        """
        times = np.asarray(times, dtype=float)
        R_out = np.empty((len(times), 3, 3))
        p_out = np.empty((len(times), 3))
        starts = np.concatenate([[0.0], np.cumsum([s.duration for s in self.segments])])
        clipped = np.clip(times, 0.0, self.duration)
        seg_idx = np.clip(np.searchsorted(starts, clipped, side="right") - 1,
                          0, len(self.segments) - 1)
        base = self.start
        for j, seg in enumerate(self.segments):
            sel = seg_idx == j
            if np.any(sel):
                tau = clipped[sel] - starts[j]
                theta_dot = float(np.linalg.norm(seg.omega))
                if theta_dot < 1e-12:
                    R_seg = np.broadcast_to(np.eye(3), (tau.size, 3, 3))
                    disp = tau[:, None] * seg.velocity
                else:
                    K = skew(seg.omega / theta_dot)
                    K2 = K @ K
                    th = theta_dot * tau
                    sin_t, cos_t = np.sin(th), np.cos(th)
                    R_seg = (np.eye(3) + sin_t[:, None, None] * K
                             + (1.0 - cos_t)[:, None, None] * K2)
                    a = (1.0 - cos_t) / theta_dot
                    b = (th - sin_t) / theta_dot
                    Jv = (tau[:, None, None] * np.eye(3)
                          + a[:, None, None] * K + b[:, None, None] * K2)
                    disp = np.einsum("nij,j->ni", Jv, seg.velocity)
                R_out[sel] = np.einsum("ab,nbc->nac", base.rotation, R_seg)
                p_out[sel] = base.translation + disp @ base.rotation.T
            base = base.compose(_twist_pose(seg.omega, seg.velocity, seg.duration))
        return R_out, p_out

    def velocity_world(self, t: float) -> np.ndarray:
        seg, base, tau = self._segment_state(t)
        return self.pose_at(t).rotation @ seg.velocity

    def imu_true(self, t: float, gravity: np.ndarray):
        """(gyro, specific force) in the body frame at time t, noiseless."""
        seg, base, tau = self._segment_state(t)
        R = self.pose_at(t).rotation
        a_world = R @ np.cross(seg.omega, seg.velocity)
        f_body = R.T @ (a_world - np.asarray(gravity, dtype=float))
        return seg.omega.copy(), f_body

    def to_meta(self) -> dict:
        q = quat_from_matrix(self.start.rotation)
        return {
            "start": {"position": list(self.start.translation),
                      "quaternion_xyzw": list(q)},
            "segments": [{"omega": list(s.omega), "velocity": list(s.velocity),
                          "duration": s.duration} for s in self.segments],
        }


def _twist_pose(omega: np.ndarray, velocity: np.ndarray, tau: float) -> Pose:
    phi = omega * tau
    return Pose(exp_so3(phi), so3_left_jacobian(phi) @ (velocity * tau))


def default_trajectory(preset: str, params: dict) -> TrajectorySpec:
    if preset == "room":
        start = Pose(np.eye(3), np.array([0.0, -2.0, 1.5]))
        segs = [TwistSegment([0, 0, 0.3], [0.6, 0, 0], 3600.0)]
    elif preset == "corridor":
        start = Pose(np.eye(3), np.array([-params["length"] / 2 + 3.0, 0.0,
                                          params["height"] / 2]))
        segs = [TwistSegment([0, 0, 0], [1.0, 0, 0], 3600.0)]
    elif preset == "tunnel":
        start = Pose(np.eye(3), np.array([-params["length"] / 2 + 3.0, 0.0,
                                          params["radius"]]))
        segs = [TwistSegment([0.05, 0, 0], [1.0, 0, 0], 3600.0)]
    elif preset == "ground_only":
        start = Pose(np.eye(3), np.array([0.0, 0.0, 1.5]))
        segs = [TwistSegment([0, 0, 0], [0.8, 0, 0], 3600.0)]
    else:
        raise InvalidDimensions(f"unknown preset {preset!r}")
    return TrajectorySpec(start, segs)


# -- sensors -------------------------------------------------------------------


def synthesize_imu(traj: TrajectorySpec, rate_hz: float, gravity,
                   gyro_noise: float = 0.0, accel_noise: float = 0.0,
                   gyro_bias=None, accel_bias=None, seed: int = 0,
                   duration: float = None) -> list:
    """Sample the analytic body rates; optional white noise and constant biases."""
    if rate_hz <= 0:
        raise InvalidDimensions("imu rate must be positive")
    duration = traj.duration if duration is None else float(duration)
    n = int(round(duration * rate_hz))
    times = np.arange(n + 1) / rate_hz
    bg = np.zeros(3) if gyro_bias is None else np.asarray(gyro_bias, dtype=float)
    ba = np.zeros(3) if accel_bias is None else np.asarray(accel_bias, dtype=float)
    rng = np.random.default_rng([int(seed), 0xD1CE])
    samples = []
    for t in times:
        w, f = traj.imu_true(float(t), gravity)
        w = w + bg
        f = f + ba
        if gyro_noise > 0:
            w = w + rng.normal(0.0, gyro_noise, 3)
        if accel_noise > 0:
            f = f + rng.normal(0.0, accel_noise, 3)
        samples.append(ImuSample(float(t), w, f))
    return samples


def raycast_scan(world: World, traj: TrajectorySpec, t_start: float, t_end: float,
                 n_rays: int, rng: np.random.Generator, sigma: float = 0.0,
                 cone_half_angle_deg: float = 35.0, range_max: float = 100.0,
                 min_range: float = 0.05):
    """Cast one scan's rays against the world along the moving sensor.

    Ray directions are drawn uniformly inside a forward cone (solid-state-style
    non-repetitive pattern) with capture times spread across the scan window.

    Returns:
        (ScanFrame, reference_points) where reference_points are the same noisy
        hits expressed in the sensor frame at scan end (the undistorted cloud).
    """
    if sigma < 0:
        raise InvalidDimensions("range noise sigma must be nonnegative")
    times = np.linspace(t_start, t_end, n_rays)
    cos_cone = math.cos(math.radians(cone_half_angle_deg))
    cos_theta = rng.uniform(cos_cone, 1.0, n_rays)
    phi = rng.uniform(0.0, 2.0 * math.pi, n_rays)
    sin_theta = np.sqrt(1.0 - cos_theta**2)
    dirs_sensor = np.column_stack([cos_theta,
                                   sin_theta * np.cos(phi),
                                   sin_theta * np.sin(phi)])
    noise = rng.normal(0.0, sigma, n_rays) if sigma > 0 else np.zeros(n_rays)

    R, origins = traj.poses_at(times)
    dirs_world = np.einsum("nij,nj->ni", R, dirs_sensor)

    best_s = np.full(n_rays, np.inf)
    for patch in world.patches:
        denom = dirs_world @ patch.normal
        with np.errstate(divide="ignore", invalid="ignore"):
            s = ((patch.center - origins) @ patch.normal) / denom
        valid = (np.abs(denom) > 1e-12) & (s >= min_range) & (s <= range_max)
        if not patch.infinite:
            hits = origins + s[:, None] * dirs_world
            rel = hits - patch.center
            valid &= (np.abs(rel @ patch.u_axis) <= patch.half_u) \
                & (np.abs(rel @ patch.v_axis) <= patch.half_v)
        best_s = np.where(valid & (s < best_s), s, best_s)

    hit = np.isfinite(best_s)
    s_noisy = best_s[hit] + noise[hit]
    pts_sensor = s_noisy[:, None] * dirs_sensor[hit]
    pts_world = origins[hit] + s_noisy[:, None] * dirs_world[hit]
    T_end = traj.pose_at(t_end)
    reference = (pts_world - T_end.translation) @ T_end.rotation

    frame = ScanFrame(points=pts_sensor, times=times[hit],
                      t_start=t_start, t_end=t_end, gt_pose=T_end)
    return frame, reference


def generate_dataset(out_dir: str, preset: str, params: dict = None,
                     seed: int = 0, duration: float = 20.0,
                     scan_rate_hz: float = 10.0, imu_rate_hz: float = 1000.0,
                     n_rays: int = 10000, sigma: float = 0.0,
                     trajectory: TrajectorySpec = None,
                     gravity=(0.0, 0.0, -9.81)) -> dict:
    """Build and write a full sequence; returns the meta dict that was stored."""
    world = make_world(preset, params)
    traj = trajectory or default_trajectory(preset, world.params)
    if duration > traj.duration:
        raise InvalidDimensions("duration exceeds the trajectory specification")
    n_scans = int(round(duration * scan_rate_hz))
    period = 1.0 / scan_rate_hz

    scans = []
    groundtruth = []
    for k in range(n_scans):
        rng = np.random.default_rng([int(seed), k])
        frame, _ = raycast_scan(world, traj, k * period, (k + 1) * period,
                                n_rays, rng, sigma)
        scans.append(frame)
        groundtruth.append(((k + 1) * period, frame.gt_pose))

    imu = synthesize_imu(traj, imu_rate_hz, gravity, seed=seed, duration=duration)
    v0 = traj.velocity_world(0.0)
    meta = {
        "preset": preset,
        "params": world.params,
        "seed": int(seed),
        "duration": duration,
        "scan_rate_hz": scan_rate_hz,
        "imu_rate_hz": imu_rate_hz,
        "n_rays": n_rays,
        "sigma": sigma,
        "gravity": list(gravity),
        "initial": {
            "position": list(traj.start.translation),
            "quaternion_xyzw": list(quat_from_matrix(traj.start.rotation)),
            "velocity": list(v0),
        },
        "trajectory": traj.to_meta(),
    }
    write_dataset(out_dir, scans, imu, groundtruth, meta)
    return meta
