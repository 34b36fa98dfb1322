"""Per-frame MAP estimation: propagate and de-skew, iterate damped Gauss-Newton
on the 6-DoF pose against the frozen map snapshot, assess degeneracy from the
final linearization, and apply the gated map update.

Frames are processed strictly sequentially; the voxel map mutates only between
optimizations.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field, replace

import numpy as np

from .config import EstimatorConfig
from .degeneracy import DegeneracyReport, assess
from .geometry import Pose, log_so3
from .imu import NavState, deskew, prior_residual, propagate
from .residuals import MatchStats, ResidualBlock, build_residuals, diagnostics_rows
from .voxel_map import VoxelMap, frame_gate


class NoCorrespondences(RuntimeError):
    """No scan point found a usable voxel; the frame falls back to the prior."""


class MapOutcome(enum.Enum):
    UPDATED = "updated"
    GATED_OUT = "gated_out"


@dataclass
class FrameResult:
    frame: int
    t: float
    pose: Pose
    iterations: int
    converged: bool
    report: DegeneracyReport
    map_outcome: MapOutcome
    stats: MatchStats = field(default_factory=MatchStats)
    residual_counts: dict = field(default_factory=dict)
    residual_summary: list = field(default_factory=list)
    insert_counts: dict = field(default_factory=dict)
    cost_initial: float = 0.0
    cost_final: float = 0.0
    error: str = None


def _fallback_report() -> DegeneracyReport:
    """Sentinel report for frames without usable correspondences.

    Scores are zeroed outright (rather than via the kappa formulas, which map a
    zero Hessian to kappa = 1) so the frame is always excluded from the map and
    the gating invariant s_deg < tau still holds.
    """
    return DegeneracyReport(kappa_r=1e8, kappa_t=1e8, s_r=0.0, s_t=0.0,
                            s_struct=0.0, s_angle=0.0, s_deg=0.0)


def _prior_cost(predicted: Pose, pose: Pose, information: np.ndarray) -> float:
    term = prior_residual(predicted, pose, information)
    return float(term.value @ term.value)


def process_frame(scan, imu_window: list, vmap: VoxelMap, state: NavState,
                  cfg: EstimatorConfig, frame_index: int = 0) -> tuple:
    """Run one frame through the pipeline; returns (FrameResult, new NavState).

    The voxel map is mutated in place when the frame passes the update gate.
    """
    prop = propagate(state, imu_window, np.asarray(cfg.gravity, dtype=float),
                     cfg.prior_w_rot, cfg.prior_w_trans)
    points = deskew(scan.points, scan.times, prop.trajectory)
    predicted = prop.state.pose
    t_end = prop.state.timestamp

    if len(vmap) == 0:
        # Bootstrap: an empty map yields no residuals and hence no score; the
        # first frame seeds the map at full confidence.
        vmap_counts = vmap.insert_batch(predicted.apply(points), 1.0)
        result = FrameResult(frame_index, t_end, predicted, 0, True,
                             DegeneracyReport(), MapOutcome.UPDATED,
                             insert_counts=vmap_counts)
        return result, prop.state

    snapshot = vmap.snapshot()
    pose = predicted
    block, stats = build_residuals(points, snapshot, pose, cfg)
    if stats.matched == 0:
        result = FrameResult(frame_index, t_end, predicted, 0, False,
                             _fallback_report(), MapOutcome.GATED_OUT,
                             stats=stats, error=NoCorrespondences.__name__)
        return result, prop.state

    cost = block.cost() + _prior_cost(predicted, pose, prop.information)
    cost_initial = cost
    lam = cfg.lm_lambda_init
    iterations = 0
    converged = False

    for _ in range(cfg.max_iterations):
        A, b, w = block.rows()
        prior = prior_residual(predicted, pose, prop.information)
        H = A.T @ (w[:, None] * A) + prior.jacobian.T @ prior.jacobian
        g = A.T @ (w * b) + prior.jacobian.T @ prior.value
        iterations += 1

        accepted = False
        delta = None
        for _ in range(cfg.lm_max_rejects):
            try:
                delta = np.linalg.solve(H + lam * np.eye(6), -g)
            except np.linalg.LinAlgError:
                lam *= cfg.lm_lambda_factor
                continue
            candidate = pose.retract(delta)
            cand_block, cand_stats = build_residuals(points, snapshot, candidate, cfg)
            cand_cost = cand_block.cost() + _prior_cost(predicted, candidate,
                                                        prop.information)
            if cand_cost <= cost + 1e-12:
                pose, block, stats, cost = candidate, cand_block, cand_stats, cand_cost
                lam = max(lam / cfg.lm_lambda_factor, 1e-12)
                accepted = True
                break
            lam *= cfg.lm_lambda_factor
        if not accepted:
            break
        if float(np.linalg.norm(delta)) < cfg.convergence_threshold:
            converged = True
            break

    report = assess(block, cfg.alpha, cfg.gamma, cfg.epsilon, cfg.score_variant)
    gate_open = frame_gate(report.s_deg, cfg.tau_global) if cfg.enable_gating else True
    insert_counts = {}
    if gate_open:
        insert_counts = vmap.insert_batch(pose.apply(points), report.s_deg)
        outcome = MapOutcome.UPDATED
    else:
        outcome = MapOutcome.GATED_OUT

    new_state = _corrected_state(prop.state, state, predicted, pose, cfg)
    result = FrameResult(frame_index, t_end, pose, iterations, converged, report,
                         outcome, stats=stats, residual_counts=block.counts(),
                         residual_summary=diagnostics_rows(frame_index, block, stats),
                         insert_counts=insert_counts,
                         cost_initial=cost_initial, cost_final=cost)
    return result, new_state


def _corrected_state(propagated: NavState, previous: NavState,
                     predicted: Pose, pose: Pose, cfg: EstimatorConfig) -> NavState:
    """Fold the optimized pose back into the state.

    The propagated velocity is kept and corrected by the pose-update rate
    (differencing poses outright makes the next prediction a two-step position
    extrapolation, which accumulates error linearly under a strong prior);
    biases drift slowly toward the constant offsets that would explain the
    pose correction over the window.
    """
    window = max(propagated.timestamp - previous.timestamp, 1e-6)
    dphi = log_so3(predicted.rotation.T @ pose.rotation)
    dpos = pose.translation - predicted.translation
    velocity = propagated.velocity + dpos / window
    gyro_bias = propagated.gyro_bias - cfg.bias_gain * dphi / window
    accel_bias = propagated.accel_bias \
        - cfg.bias_gain * 2.0 * (pose.rotation.T @ dpos) / (window * window)
    return replace(propagated, rotation=pose.rotation.copy(),
                   position=pose.translation.copy(), velocity=velocity,
                   gyro_bias=gyro_bias, accel_bias=accel_bias)


@dataclass
class SequenceResult:
    trajectory: list           # [(t, Pose)] at scan-end times
    frames: list               # FrameResult per scan
    voxel_map: VoxelMap


def run_sequence(dataset, cfg: EstimatorConfig) -> SequenceResult:
    """Fold process_frame over a dataset; per-frame failures are recorded in the
    frame results and never abort the sequence."""
    vmap = VoxelMap(side=cfg.voxel_side, capacity=cfg.map_capacity,
                    min_points_for_plane=cfg.min_points_for_plane, beta=cfg.beta,
                    refit_max_points=cfg.refit_max_points,
                    per_voxel_gate=cfg.per_voxel_gate,
                    delta_margin=cfg.delta_margin,
                    neighbor_fallback=cfg.neighbor_fallback)
    state = NavState.initial(dataset.initial_pose, dataset.initial_velocity,
                             timestamp=0.0)
    imu_times = np.array([s.timestamp for s in dataset.imu])

    trajectory = []
    results = []
    for k, scan in enumerate(dataset.scans):
        lo = np.searchsorted(imu_times, state.timestamp - 1e-9)
        hi = np.searchsorted(imu_times, scan.t_end + 1e-9)
        window = dataset.imu[lo:hi]
        try:
            result, state = process_frame(scan, window, vmap, state, cfg, k)
        except Exception as exc:  # recorded, not fatal
            result = FrameResult(k, scan.t_end, state.pose, 0, False,
                                 _fallback_report(), MapOutcome.GATED_OUT,
                                 error=f"{type(exc).__name__}: {exc}")
            state = replace(state, timestamp=scan.t_end)
        trajectory.append((result.t, result.pose))
        results.append(result)
    return SequenceResult(trajectory, results, vmap)
