"""Pipeline configuration: one dataclass holding every tunable, a published JSON
schema, and the method presets used by the ablation runner.

Precedence when building an effective config: defaults < config file < CLI flags.
"""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass
from typing import Any

import jsonschema

SCORE_VARIANTS = ("prose_consistent", "paper_eq11")
METHOD_PRESETS = ("baseline", "angle_only", "full")


@dataclass
class EstimatorConfig:
    """Every free parameter of the odometry pipeline, with defaults.

    Method presets only touch ``enable_angle`` and ``enable_gating``; everything
    else stays as configured so ablations differ in exactly one mechanism.
    """

    # Optimizer
    max_iterations: int = 10
    convergence_threshold: float = 1e-6
    lm_lambda_init: float = 1e-4
    lm_lambda_factor: float = 10.0
    lm_max_rejects: int = 8

    # Residual classes
    enable_p2p: bool = True
    enable_gicp: bool = True
    enable_angle: bool = True
    w_p2p: float = 1.0
    w_gicp: float = 1.0
    w_ang: float = 0.1
    lambda_reg: float = 1e-3
    gicp_point_sigma: float = 0.0
    epsilon_d: float = 1e-4
    planarity_min: float = 9.0
    max_correspondence_dist: float = 0.3
    huber_enabled: bool = False
    huber_delta_metric: float = 0.1
    huber_delta_angle: float = 0.1

    # Degeneracy scoring
    alpha: float = 0.5
    gamma: float = 0.5
    epsilon: float = 1e-8
    tau_global: float = 0.3
    score_variant: str = "prose_consistent"
    enable_gating: bool = True

    # Voxel map
    voxel_side: float = 0.5
    min_points_for_plane: int = 6
    beta: float = 0.9
    map_capacity: int = 2**20
    refit_max_points: int = 50
    neighbor_fallback: bool = True
    per_voxel_gate: bool = False
    delta_margin: float = 0.3

    # Inertial prior
    prior_w_rot: float = 1e4
    prior_w_trans: float = 1e4
    gravity: tuple = (0.0, 0.0, -9.81)
    bias_gain: float = 0.01

    def __post_init__(self):
        if self.score_variant not in SCORE_VARIANTS:
            raise ValueError(f"score_variant must be one of {SCORE_VARIANTS}")
        for name in ("alpha", "gamma", "beta"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ValueError(f"{name} must lie in [0, 1], got {v}")
        for name in ("convergence_threshold", "voxel_side", "epsilon",
                     "epsilon_d", "tau_global", "lm_lambda_init"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["gravity"] = list(d["gravity"])
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "EstimatorConfig":
        validate_config(d)
        known = {f.name for f in dataclasses.fields(cls)}
        kwargs = {k: v for k, v in d.items() if k in known}
        if "gravity" in kwargs:
            kwargs["gravity"] = tuple(kwargs["gravity"])
        return cls(**kwargs)

    def apply_method(self, method: str) -> "EstimatorConfig":
        """Return a copy with the ablation preset's toggles applied."""
        if method == "baseline":
            return dataclasses.replace(self, enable_angle=False, enable_gating=False)
        if method == "angle_only":
            return dataclasses.replace(self, enable_angle=True, enable_gating=False)
        if method == "full":
            return dataclasses.replace(self, enable_angle=True, enable_gating=True)
        raise ValueError(f"unknown method preset {method!r}; expected one of {METHOD_PRESETS}")


def config_schema() -> dict:
    """JSON schema for config files; every key optional, unknown keys rejected."""
    num = {"type": "number"}
    pos = {"type": "number", "exclusiveMinimum": 0}
    unit = {"type": "number", "minimum": 0, "maximum": 1}
    boolean = {"type": "boolean"}
    props = {
        "max_iterations": {"type": "integer", "minimum": 0},
        "convergence_threshold": pos,
        "lm_lambda_init": pos,
        "lm_lambda_factor": {"type": "number", "exclusiveMinimum": 1},
        "lm_max_rejects": {"type": "integer", "minimum": 1},
        "enable_p2p": boolean,
        "enable_gicp": boolean,
        "enable_angle": boolean,
        "w_p2p": pos,
        "w_gicp": pos,
        "w_ang": pos,
        "lambda_reg": pos,
        "gicp_point_sigma": {"type": "number", "minimum": 0},
        "epsilon_d": pos,
        "planarity_min": {"type": "number", "minimum": 0},
        "max_correspondence_dist": pos,
        "huber_enabled": boolean,
        "huber_delta_metric": pos,
        "huber_delta_angle": pos,
        "alpha": unit,
        "gamma": unit,
        "epsilon": pos,
        "tau_global": pos,
        "score_variant": {"enum": list(SCORE_VARIANTS)},
        "enable_gating": boolean,
        "voxel_side": pos,
        "min_points_for_plane": {"type": "integer", "minimum": 3},
        "beta": unit,
        "map_capacity": {"type": "integer", "minimum": 1},
        "refit_max_points": {"type": "integer", "minimum": 0},
        "neighbor_fallback": boolean,
        "per_voxel_gate": boolean,
        "delta_margin": num,
        "prior_w_rot": pos,
        "prior_w_trans": pos,
        "gravity": {"type": "array", "items": num, "minItems": 3, "maxItems": 3},
        "bias_gain": unit,
    }
    return {
        "$schema": "https://json-schema.org/draft/2020-12/schema",
        "title": "adaptive-lio estimator configuration",
        "type": "object",
        "properties": props,
        "additionalProperties": False,
    }


def validate_config(d: dict) -> None:
    jsonschema.validate(d, config_schema())


def load_config_file(path: str) -> EstimatorConfig:
    with open(path) as f:
        data = json.load(f)
    return EstimatorConfig.from_dict(data)


def merge_overrides(base: EstimatorConfig, overrides: dict[str, Any]) -> EstimatorConfig:
    """Apply non-None override values on top of a config (flags beat file)."""
    clean = {k: v for k, v in overrides.items() if v is not None}
    if not clean:
        return base
    merged = base.to_dict()
    merged.update(clean)
    return EstimatorConfig.from_dict(merged)
