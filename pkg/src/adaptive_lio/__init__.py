"""Environment-adaptive LiDAR-inertial odometry on synthetic degenerate scenes.

Submodules: geometry (SO(3)/SE(3)), voxel_map (hashed plane map with confidence),
residuals (point-to-plane / GICP / angle constraints), degeneracy (Hessian
conditioning scores), imu (propagation, de-skew, prior), estimator (per-frame
MAP loop), simulator (worlds, trajectories, sensors), evaluation (APE), cli.
"""

__version__ = "0.1.0"
