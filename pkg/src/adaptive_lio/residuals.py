"""Residual construction for the per-frame MAP problem: point-to-plane,
distribution-to-distribution (GICP-style), and the normal-direction angle
constraint, each with analytic Jacobians w.r.t. the 6-DoF pose perturbation
[delta_theta; delta_t] under the right-multiplicative convention.

Single-correspondence functions implement each formula literally; build_residuals
produces the same terms vectorized over a whole scan (equality is covered by
tests).
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field

import numpy as np

from .geometry import Pose, skew


class DegenerateDirection(ValueError):
    """Angle residual undefined: displacement shorter than the direction floor."""


class NonSpdCovariance(ValueError):
    """Combined GICP covariance not positive definite even after regularization."""


class ResidualKind(enum.Enum):
    POINT_TO_PLANE = "p2p"
    GICP = "gicp"
    ANGLE = "angle"
    PRIOR = "prior"


@dataclass
class ResidualTerm:
    """One linearized constraint: residual value, (m, 6) Jacobian, scalar weight."""

    kind: ResidualKind
    value: np.ndarray
    jacobian: np.ndarray
    weight: float = 1.0
    point_index: int = -1
    voxel_key: tuple = None

    def __post_init__(self):
        self.value = np.atleast_1d(np.asarray(self.value, dtype=float))
        self.jacobian = np.asarray(self.jacobian, dtype=float).reshape(-1, 6)
        if self.jacobian.shape[0] != self.value.shape[0]:
            raise ValueError("jacobian row count must match residual dimension")
        if not np.isfinite(self.weight) or self.weight <= 0:
            raise ValueError("weight must be finite and positive")


@dataclass
class Correspondence:
    """Scan point (LiDAR frame) paired with a map voxel's plane."""

    scan_point: np.ndarray
    map_point: np.ndarray    # voxel centroid, global frame
    normal: np.ndarray       # fitted plane normal d2, unit length
    voxel_covariance: np.ndarray = None
    voxel_key: tuple = None
    point_index: int = -1


def point_to_plane(corr: Correspondence, T: Pose, weight: float = 1.0) -> ResidualTerm:
    """Signed distance n . (R q + t - Q) with Jacobian [-n^T R [q]x, n^T]."""
    q = np.asarray(corr.scan_point, dtype=float)
    n = np.asarray(corr.normal, dtype=float)
    r = float(n @ (T.rotation @ q + T.translation - corr.map_point))
    j_rot = -(n @ T.rotation) @ skew(q)
    return ResidualTerm(ResidualKind.POINT_TO_PLANE, r,
                        np.concatenate([j_rot, n])[None, :], weight,
                        corr.point_index, corr.voxel_key)


def gicp(corr: Correspondence, T: Pose, point_cov: np.ndarray,
         lambda_reg: float = 1e-3, weight: float = 1.0) -> ResidualTerm:
    """Whitened displacement L^-1 (R q + t - Q), with L L^T the combined covariance.

    The whitener is held fixed over the linearization (standard frozen-L GICP
    approximation), so the Jacobian is L^-1 [-R [q]x, I].
    """
    q = np.asarray(corr.scan_point, dtype=float)
    S = (np.asarray(corr.voxel_covariance, dtype=float)
         + T.rotation @ np.asarray(point_cov, dtype=float) @ T.rotation.T
         + lambda_reg * np.eye(3))
    try:
        L = np.linalg.cholesky(S)
    except np.linalg.LinAlgError as exc:
        raise NonSpdCovariance("combined covariance not SPD after regularization") from exc
    d = T.rotation @ q + T.translation - corr.map_point
    r = np.linalg.solve(L, d)
    J_unw = np.hstack([-T.rotation @ skew(q), np.eye(3)])
    J = np.linalg.solve(L, J_unw)
    return ResidualTerm(ResidualKind.GICP, r, J, weight,
                        corr.point_index, corr.voxel_key)


def _angle_parts(corr: Correspondence, T: Pose, epsilon_d: float):
    q = np.asarray(corr.scan_point, dtype=float)
    q_local = T.inverse().apply(corr.map_point)
    dq = q - q_local
    d1 = T.rotation @ dq
    norm = float(np.linalg.norm(d1))
    if norm < epsilon_d:
        raise DegenerateDirection(f"|d1| = {norm:.3e} below floor {epsilon_d:.3e}")
    return dq, d1 / norm, norm


def angle_residual(corr: Correspondence, T: Pose, epsilon_d: float = 1e-4,
                   weight: float = 1.0) -> ResidualTerm:
    """Direction-vs-normal residual 1 - (d1/|d1|) . d2, in [0, 2]."""
    _, u, _ = _angle_parts(corr, T, epsilon_d)
    e = 1.0 - float(u @ corr.normal)
    return ResidualTerm(ResidualKind.ANGLE, e,
                        angle_jacobian(corr, T, epsilon_d), weight,
                        corr.point_index, corr.voxel_key)


def angle_jacobian(corr: Correspondence, T: Pose, epsilon_d: float = 1e-4) -> np.ndarray:
    """1x6 Jacobian of the angle residual; rotation block only.

    Composed literally as -d2^T (I - u u^T) (1/|d1|) (-R [dq]x); the displacement
    dq is a constant of the linearization, so the translation block is zero.
    """
    dq, u, norm = _angle_parts(corr, T, epsilon_d)
    d2 = np.asarray(corr.normal, dtype=float)
    proj = np.eye(3) - np.outer(u, u)
    j_rot = -(d2 @ proj) @ ((1.0 / norm) * (-(T.rotation @ skew(dq))))
    J = np.zeros((1, 6))
    J[0, :3] = j_rot
    return J


# -- whole-scan construction --------------------------------------------------


@dataclass
class KindArrays:
    """Struct-of-arrays for one residual class: values, Jacobians, weights."""

    values: np.ndarray       # (n,) or (n, 3)
    jacobians: np.ndarray    # (n, 6) or (n, 3, 6)
    weights: np.ndarray      # (n,)
    point_index: np.ndarray  # (n,)
    voxel_keys: np.ndarray   # (n, 3) int

    @staticmethod
    def empty(dim: int) -> "KindArrays":
        shape_v = (0,) if dim == 1 else (0, dim)
        shape_j = (0, 6) if dim == 1 else (0, dim, 6)
        return KindArrays(np.zeros(shape_v), np.zeros(shape_j), np.zeros(0),
                          np.zeros(0, dtype=int), np.zeros((0, 3), dtype=int))

    def __len__(self) -> int:
        return len(self.weights)


@dataclass
class MatchStats:
    matched: int = 0
    unmatched: int = 0
    skipped_angle: int = 0


@dataclass
class ResidualBlock:
    """All residual terms of one linearization, grouped by class."""

    p2p: KindArrays = field(default_factory=lambda: KindArrays.empty(1))
    gicp: KindArrays = field(default_factory=lambda: KindArrays.empty(3))
    angle: KindArrays = field(default_factory=lambda: KindArrays.empty(1))

    def rows(self):
        """Flatten to (A, b, w) with one row per scalar residual component.

        Row weights repeat each term's weight across its components, so
        A^T diag(w) A and A^T diag(w) b reproduce the weighted normal equations.
        """
        As, bs, ws = [], [], []
        if len(self.p2p):
            As.append(self.p2p.jacobians)
            bs.append(self.p2p.values)
            ws.append(self.p2p.weights)
        if len(self.gicp):
            As.append(self.gicp.jacobians.reshape(-1, 6))
            bs.append(self.gicp.values.reshape(-1))
            ws.append(np.repeat(self.gicp.weights, 3))
        if len(self.angle):
            As.append(self.angle.jacobians)
            bs.append(self.angle.values)
            ws.append(self.angle.weights)
        if not As:
            return np.zeros((0, 6)), np.zeros(0), np.zeros(0)
        return np.vstack(As), np.concatenate(bs), np.concatenate(ws)

    def cost(self) -> float:
        _, b, w = self.rows()
        return float(np.sum(w * b * b))

    def counts(self) -> dict:
        return {"p2p": len(self.p2p), "gicp": len(self.gicp), "angle": len(self.angle)}

    def terms(self) -> list:
        """Materialize per-correspondence ResidualTerm objects (test/debug path)."""
        out = []
        for kind, arrs in ((ResidualKind.POINT_TO_PLANE, self.p2p),
                           (ResidualKind.GICP, self.gicp),
                           (ResidualKind.ANGLE, self.angle)):
            for i in range(len(arrs)):
                out.append(ResidualTerm(kind, arrs.values[i], arrs.jacobians[i],
                                        float(arrs.weights[i]),
                                        int(arrs.point_index[i]),
                                        tuple(int(k) for k in arrs.voxel_keys[i])))
        return out


def _skew_batch(v: np.ndarray) -> np.ndarray:
    n = len(v)
    out = np.zeros((n, 3, 3))
    out[:, 0, 1] = -v[:, 2]
    out[:, 0, 2] = v[:, 1]
    out[:, 1, 0] = v[:, 2]
    out[:, 1, 2] = -v[:, 0]
    out[:, 2, 0] = -v[:, 1]
    out[:, 2, 1] = v[:, 0]
    return out


def _huber(weights: np.ndarray, mags: np.ndarray, delta: float) -> np.ndarray:
    scale = np.minimum(1.0, delta / np.maximum(mags, 1e-300))
    return weights * scale


def build_residuals(points: np.ndarray, snapshot, T: Pose, cfg):
    """Construct every enabled residual class for one scan against a map snapshot.

    Args:
        points: (N, 3) scan points in the LiDAR frame (already de-skewed).
        snapshot: voxel map snapshot providing query_batch().
        T: current pose iterate.
        cfg: EstimatorConfig carrying toggles, weights, and thresholds.

    Returns:
        (ResidualBlock, MatchStats); deterministic term order by point index.
    """
    points = np.asarray(points, dtype=float)
    stats = MatchStats()
    block = ResidualBlock()
    if len(points) == 0:
        return block, stats

    world = T.apply(points)
    voxels = snapshot.query_batch(world)
    # Correspondence quality gate: only voxels whose statistics describe a
    # clean plane, and only points near it. Mixed-surface voxels (wall/floor
    # edges) and stale frozen planes otherwise inject large biased residuals.
    idx = [i for i, v in enumerate(voxels)
           if v is not None and v.planarity >= cfg.planarity_min
           and abs(float(v.normal @ (world[i] - v.centroid))) <= cfg.max_correspondence_dist]
    stats.matched = len(idx)
    stats.unmatched = len(points) - len(idx)
    if not idx:
        return block, stats

    idx = np.asarray(idx, dtype=int)
    q = points[idx]
    w = world[idx]
    normals = np.stack([voxels[i].normal for i in idx])
    centroids = np.stack([voxels[i].centroid for i in idx])
    keys = np.stack([voxels[i].key for i in idx]).astype(int)
    R = T.rotation
    diff = w - centroids

    if cfg.enable_p2p:
        vals = np.einsum("ij,ij->i", normals, diff)
        j_rot = -np.cross(normals @ R, q)
        jac = np.hstack([j_rot, normals])
        weights = np.full(len(idx), cfg.w_p2p)
        if cfg.huber_enabled:
            weights = _huber(weights, np.abs(vals), cfg.huber_delta_metric)
        block.p2p = KindArrays(vals, jac, weights, idx.copy(), keys.copy())

    if cfg.enable_gicp:
        covs = np.stack([voxels[i].covariance for i in idx])
        iso = cfg.gicp_point_sigma**2 + cfg.lambda_reg
        S = covs + iso * np.eye(3)
        L = np.linalg.cholesky(S)
        vals = np.linalg.solve(L, diff[:, :, None])[:, :, 0]
        J_unw = np.concatenate([-np.einsum("ab,nbc->nac", R, _skew_batch(q)),
                                np.broadcast_to(np.eye(3), (len(idx), 3, 3))], axis=2)
        jac = np.linalg.solve(L, J_unw)
        weights = np.full(len(idx), cfg.w_gicp)
        if cfg.huber_enabled:
            weights = _huber(weights, np.linalg.norm(vals, axis=1), cfg.huber_delta_metric)
        block.gicp = KindArrays(vals, jac, weights, idx.copy(), keys.copy())

    if cfg.enable_angle:
        norms = np.linalg.norm(diff, axis=1)
        ok = norms >= cfg.epsilon_d
        stats.skipped_angle = int(np.count_nonzero(~ok))
        if np.any(ok):
            u = diff[ok] / norms[ok, None]
            vals = 1.0 - np.einsum("ij,ij->i", u, normals[ok])
            # (d2 x u)^T R: algebraic reduction of the projector/skew chain.
            j_rot = np.cross(normals[ok], u) @ R
            jac = np.hstack([j_rot, np.zeros_like(j_rot)])
            weights = np.full(int(np.count_nonzero(ok)), cfg.w_ang)
            if cfg.huber_enabled:
                weights = _huber(weights, np.abs(vals), cfg.huber_delta_angle)
            block.angle = KindArrays(vals, jac, weights, idx[ok], keys[ok])

    return block, stats


def diagnostics_rows(frame: int, block: ResidualBlock, stats: MatchStats) -> list:
    """Rows for the per-frame residual diagnostics CSV."""
    rows = []
    for kind, arrs in (("p2p", block.p2p), ("gicp", block.gicp), ("angle", block.angle)):
        if len(arrs):
            mags = np.linalg.norm(arrs.values, axis=1) \
                if arrs.values.ndim > 1 else np.abs(arrs.values)
            mean_abs, max_abs = float(mags.mean()), float(mags.max())
        else:
            mean_abs = max_abs = 0.0
        rows.append({"frame": frame, "kind": kind, "count": len(arrs),
                     "mean_abs": mean_abs, "max_abs": max_abs,
                     "skipped": stats.skipped_angle if kind == "angle" else 0})
    return rows
