"""Absolute Pose Error evaluation: timestamp association, first-pose (or
Umeyama) alignment, and translational max/mean/RMSE summaries.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .geometry import Pose, log_so3


class NoAssociations(ValueError):
    """No estimate/ground-truth pairs within the association window."""


@dataclass
class ApeSummary:
    rmse: float
    mean: float
    max: float
    count: int


def _check_strictly_increasing(traj, name: str) -> None:
    times = [t for t, _ in traj]
    if any(b <= a for a, b in zip(times, times[1:])):
        raise ValueError(f"{name} timestamps must be strictly increasing")


def associate(est, gt, max_dt: float = 0.01):
    """Pair poses by nearest timestamp, each pose used at most once.

    Args:
        est, gt: [(t, Pose), ...] with strictly increasing timestamps.
        max_dt: association window in seconds.

    Returns:
        [(est_pose, gt_pose), ...] ordered by estimate timestamp.

    Raises:
        NoAssociations: nothing matched within the window.
    """
    if max_dt <= 0:
        raise ValueError("max_dt must be positive")
    _check_strictly_increasing(est, "estimate")
    _check_strictly_increasing(gt, "ground truth")
    candidates = sorted(
        (abs(te - tg), i, j)
        for i, (te, _) in enumerate(est)
        for j, (tg, _) in enumerate(gt)
        if abs(te - tg) <= max_dt
    )
    used_e, used_g = set(), set()
    matches = []
    for _, i, j in candidates:
        if i not in used_e and j not in used_g:
            used_e.add(i)
            used_g.add(j)
            matches.append((i, j))
    if not matches:
        raise NoAssociations(f"no pairs within {max_dt} s")
    matches.sort()
    return [(est[i][1], gt[j][1]) for i, j in matches]


def align_first_pose(pairs):
    """Left-multiply every estimate by gt0 * est0^-1 so the first pair coincides."""
    if not pairs:
        raise ValueError("need at least one pair")
    est0, gt0 = pairs[0]
    correction = gt0.compose(est0.inverse())
    return [(correction.compose(e), g) for e, g in pairs]


def align_umeyama(pairs):
    """Rigid SE(3) alignment (no scale) of estimate positions onto ground truth."""
    if not pairs:
        raise ValueError("need at least one pair")
    P = np.array([e.translation for e, _ in pairs])
    Q = np.array([g.translation for _, g in pairs])
    mu_p, mu_q = P.mean(axis=0), Q.mean(axis=0)
    W = (Q - mu_q).T @ (P - mu_p)
    U, _, Vt = np.linalg.svd(W)
    D = np.eye(3)
    D[2, 2] = np.sign(np.linalg.det(U @ Vt))
    R = U @ D @ Vt
    t = mu_q - R @ mu_p
    correction = Pose(R, t)
    return [(correction.compose(e), g) for e, g in pairs]


def ape(pairs) -> ApeSummary:
    """Translational APE over aligned pairs: rmse, mean, max."""
    if not pairs:
        raise ValueError("need at least one pair")
    errors = np.array([np.linalg.norm(e.translation - g.translation)
                       for e, g in pairs])
    return ApeSummary(rmse=float(np.sqrt(np.mean(errors**2))),
                      mean=float(np.mean(errors)),
                      max=float(np.max(errors)),
                      count=len(errors))


def rotation_errors(pairs) -> np.ndarray:
    """Per-pair geodesic rotation angles (radians); diagnostics only."""
    return np.array([np.linalg.norm(log_so3(g.rotation.T @ e.rotation))
                     for e, g in pairs])


COMPARISON_HEADER = "sequence,method,rmse,mean,max,frames"


def comparison_row(sequence: str, method: str, summary: ApeSummary) -> str:
    return "%s,%s,%.6f,%.6f,%.6f,%d" % (sequence, method, summary.rmse,
                                        summary.mean, summary.max, summary.count)
