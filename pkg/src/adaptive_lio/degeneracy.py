"""Degeneracy assessment: accumulate the Gauss-Newton Hessian of the scan
residuals, score the conditioning of its rotational and translational blocks,
and fuse in an angle-consistency score to a single frame stability value s_deg.

Two score mappings are provided. "paper_eq11" is the literal published formula
s = 1 - exp(-(1 - 1/max(kappa, 1))), which *increases* with ill-conditioning;
"prose_consistent" (default) is s = exp(-(1 - 1/max(kappa, 1))), which decreases
monotonically from 1 toward 1/e as conditioning worsens and therefore matches
the low-score-means-degenerate gating semantics.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .residuals import ResidualBlock, ResidualKind


@dataclass
class DegeneracyReport:
    """Conditioning and stability summary of one frame's final linearization."""

    H: np.ndarray = field(default_factory=lambda: np.zeros((6, 6)))
    kappa_r: float = 1.0
    kappa_t: float = 1.0
    lambda_r_max: float = 0.0
    lambda_r_min: float = 0.0
    lambda_t_max: float = 0.0
    lambda_t_min: float = 0.0
    s_r: float = 1.0
    s_t: float = 1.0
    s_struct: float = 1.0
    mean_angle_residual: float = 0.0
    n_angle: int = 0
    s_angle: float = 1.0
    s_deg: float = 1.0


def accumulate_hessian(terms) -> np.ndarray:
    """Weighted Gauss-Newton Hessian sum(w_i J_i^T J_i) over ResidualTerm objects."""
    H = np.zeros((6, 6))
    for t in terms:
        H += t.weight * (t.jacobian.T @ t.jacobian)
    return H


def accumulate_hessian_rows(A: np.ndarray, w: np.ndarray) -> np.ndarray:
    """Same sum from flattened rows: A^T diag(w) A."""
    if len(A) == 0:
        return np.zeros((6, 6))
    return A.T @ (w[:, None] * A)


def split_blocks(H: np.ndarray):
    """Rotational (top-left) and translational (bottom-right) 3x3 blocks."""
    H = np.asarray(H, dtype=float)
    return H[:3, :3].copy(), H[3:, 3:].copy()


def _singular_values(block: np.ndarray) -> np.ndarray:
    # Symmetric PSD blocks: eigenvalues equal singular values; clamp noise at 0.
    return np.maximum(np.linalg.eigvalsh(0.5 * (block + block.T)), 0.0)


def condition_numbers(H_rr: np.ndarray, H_tt: np.ndarray, epsilon: float = 1e-8):
    """(kappa_r, kappa_t) with the min singular value clamped at epsilon and the
    ratio clamped below at 1; also returns the extreme singular values."""
    out = []
    extremes = []
    for block in (H_rr, H_tt):
        sv = _singular_values(block)
        kappa = max(sv[-1] / max(sv[0], epsilon), 1.0)
        out.append(float(kappa))
        extremes.append((float(sv[-1]), float(sv[0])))
    return out[0], out[1], extremes[0], extremes[1]


def stability_scores(kappa_r: float, kappa_t: float,
                     variant: str = "prose_consistent"):
    """Map condition numbers to bounded scores; see module docstring for variants."""
    def one(kappa: float) -> float:
        x = 1.0 - 1.0 / max(kappa, 1.0)
        if variant == "paper_eq11":
            return 1.0 - math.exp(-x)
        if variant == "prose_consistent":
            return math.exp(-x)
        raise ValueError(f"unknown stability score variant {variant!r}")

    return one(kappa_r), one(kappa_t)


def fuse_scores(s_r: float, s_t: float, mean_angle_residual: float, n_angle: int,
                alpha: float = 0.5, gamma: float = 0.5):
    """Convex fusions: s_struct = a*s_r + (1-a)*s_t; s_angle = exp(-mean_e);
    s_deg = g*s_struct + (1-g)*s_angle. With no angle evidence s_angle is 1."""
    if not (0.0 <= alpha <= 1.0 and 0.0 <= gamma <= 1.0):
        raise ValueError("alpha and gamma must lie in [0, 1]")
    s_struct = alpha * s_r + (1.0 - alpha) * s_t
    s_angle = math.exp(-mean_angle_residual) if n_angle > 0 else 1.0
    s_deg = gamma * s_struct + (1.0 - gamma) * s_angle
    return s_struct, s_angle, s_deg


def assess(block: ResidualBlock, alpha: float = 0.5, gamma: float = 0.5,
           epsilon: float = 1e-8, variant: str = "prose_consistent") -> DegeneracyReport:
    """Full per-frame assessment from a residual block.

    The Hessian is accumulated from the point-to-plane and angle terms (the
    classes whose Jacobians reflect scene geometry); GICP whitening and the
    inertial prior are excluded so conditioning measures the environment, not
    the regularization.
    """
    rows_A, rows_w = [], []
    if len(block.p2p):
        rows_A.append(block.p2p.jacobians)
        rows_w.append(block.p2p.weights)
    if len(block.angle):
        rows_A.append(block.angle.jacobians)
        rows_w.append(block.angle.weights)
    if rows_A:
        H = accumulate_hessian_rows(np.vstack(rows_A), np.concatenate(rows_w))
    else:
        H = np.zeros((6, 6))

    H_rr, H_tt = split_blocks(H)
    kappa_r, kappa_t, (lr_max, lr_min), (lt_max, lt_min) = \
        condition_numbers(H_rr, H_tt, epsilon)
    s_r, s_t = stability_scores(kappa_r, kappa_t, variant)
    n_angle = len(block.angle)
    mean_e = float(block.angle.values.mean()) if n_angle else 0.0
    s_struct, s_angle, s_deg = fuse_scores(s_r, s_t, mean_e, n_angle, alpha, gamma)
    return DegeneracyReport(H=H, kappa_r=kappa_r, kappa_t=kappa_t,
                            lambda_r_max=lr_max, lambda_r_min=lr_min,
                            lambda_t_max=lt_max, lambda_t_min=lt_min,
                            s_r=s_r, s_t=s_t, s_struct=s_struct,
                            mean_angle_residual=mean_e, n_angle=n_angle,
                            s_angle=s_angle, s_deg=s_deg)


TRACE_HEADER = "frame,t,kappa_r,kappa_t,s_r,s_t,s_struct,mean_e_theta,s_angle,s_deg,gated"


def trace_row(frame: int, t: float, report: DegeneracyReport, gated: bool) -> str:
    return ("%d,%.6f,%.9g,%.9g,%.9g,%.9g,%.9g,%.9g,%.9g,%.9g,%d"
            % (frame, t, report.kappa_r, report.kappa_t, report.s_r, report.s_t,
               report.s_struct, report.mean_angle_residual, report.s_angle,
               report.s_deg, int(gated)))
