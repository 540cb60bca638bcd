"""One JSON configuration file mirroring every tunable constant.

The defaults below are the pipeline's reference values; a user config file
only needs the keys it overrides, and command-line flags override the file.
"""

from __future__ import annotations

import copy
import json
from pathlib import Path

from .bev import GridSpec
from .errors import ConfigInvalid
from .geometry import CameraIntrinsics
from .loss import LossConfig
from .pipeline import Anchor, ScorerConfig
from .proposals import DEFAULT_GROUND_MARGIN
from .sampling import SamplerConfig
from .simulate import EgoMotion, SimConfig, SimObject

DEFAULTS = {
    "grid": {
        "x_range": [2.5, 40.0],
        "y_range": [-18.0, 18.0],
        "z_range": [-2.73, 1.27],
        "height": 608,
        "width": 608,
        "stride": 4,
    },
    "sampler": {"confidence_threshold": 0.08, "sample_count": 60, "seed": 0},
    "scorer": {
        "score_threshold": 0.08,
        "moving_weight": 0.4,
        "inconsistency_weight": 0.15,
        "k_frames": 3,
    },
    "loss": {"alpha": 0.5, "gamma": 1.5},
    "anchors": [
        {"name": "pedestrian", "dims": [0.45, 1.70, 0.27]},
        {"name": "cyclist", "dims": [0.54, 1.90, 1.75]},
        {"name": "vehicle", "dims": [1.88, 1.63, 4.58]},
    ],
    "heuristic": {"ground_margin": DEFAULT_GROUND_MARGIN},
    "simulate": {
        "n_frames": 10,
        "seed": 0,
        "intrinsics": {
            "fx": 500.0,
            "fy": 500.0,
            "cx": 800.0,
            "cy": 187.0,
            "width": 1600,
            "height": 448,
        },
        "ground_y": 2.55,
        "ground_extent": [-18.0, 18.0, 4.0, 40.0],
        "ground_density": 40.0,
        "ego": {"position": [0.0, 0.0], "heading": 0.0, "velocity": [0.0, 0.1], "yaw_rate": 0.0},
        "objects": [
            {"cls": "vehicle", "position": [3.17, 22.36], "yaw": 0.74, "velocity": [-0.02, 0.86]},
            {"cls": "vehicle", "position": [-5.31, 31.27], "yaw": -0.71, "velocity": [0.12, -0.87]},
            {"cls": "vehicle", "position": [-11.54, 25.10], "yaw": 0.75, "velocity": [0.0, -0.90]},
            {"cls": "cyclist", "position": [11.73, 19.78], "yaw": 0.03, "velocity": [-0.32, 0.36]},
            {"cls": "pedestrian", "position": [11.13, 31.00], "yaw": 0.45, "velocity": [-0.29, 0.41]},
            {"cls": "pedestrian", "position": [-14.35, 14.24], "yaw": 0.29, "velocity": [0.27, -0.38]},
            {"cls": "vehicle", "position": [13.71, 13.76], "yaw": 0.45},
            {"cls": "pedestrian", "position": [-0.42, 16.00], "yaw": 0.15},
        ],
    },
}


def _merge(base: dict, override: dict) -> dict:
    out = copy.deepcopy(base)
    for key, value in override.items():
        if isinstance(value, dict) and isinstance(out.get(key), dict):
            out[key] = _merge(out[key], value)
        else:
            out[key] = copy.deepcopy(value)
    return out


def load_config(path=None) -> dict:
    """The defaults, deep-merged with an optional JSON config file."""
    if path is None:
        return copy.deepcopy(DEFAULTS)
    try:
        user = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise ConfigInvalid(f"{path}: {exc}") from exc
    if not isinstance(user, dict):
        raise ConfigInvalid(f"{path}: config root must be an object")
    return _merge(DEFAULTS, user)


def grid_spec(cfg: dict) -> GridSpec:
    g = cfg["grid"]
    return GridSpec(
        x_range=tuple(g["x_range"]),
        y_range=tuple(g["y_range"]),
        z_range=tuple(g["z_range"]),
        height=g["height"],
        width=g["width"],
        stride=g["stride"],
    )


def sampler_config(cfg: dict) -> SamplerConfig:
    s = cfg["sampler"]
    return SamplerConfig(
        confidence_threshold=s["confidence_threshold"],
        sample_count=s["sample_count"],
        seed=s["seed"],
    )


def scorer_config(cfg: dict) -> ScorerConfig:
    s = cfg["scorer"]
    return ScorerConfig(
        score_threshold=s["score_threshold"],
        moving_weight=s["moving_weight"],
        inconsistency_weight=s["inconsistency_weight"],
        k_frames=s["k_frames"],
    )


def loss_config(cfg: dict) -> LossConfig:
    return LossConfig(alpha=cfg["loss"]["alpha"], gamma=cfg["loss"]["gamma"])


def anchors(cfg: dict) -> list[Anchor]:
    return [Anchor(a["name"], a["dims"]) for a in cfg["anchors"]]


def sim_config(cfg: dict) -> SimConfig:
    s = cfg["simulate"]
    intr = s["intrinsics"]
    ego = s.get("ego", {})
    try:
        return SimConfig(
            n_frames=s["n_frames"],
            objects=[
                SimObject(
                    cls=o["cls"],
                    position=tuple(o["position"]),
                    dims=tuple(o["dims"]) if "dims" in o else None,
                    yaw=o.get("yaw", 0.0),
                    velocity=tuple(o.get("velocity", (0.0, 0.0))),
                    yaw_rate=o.get("yaw_rate", 0.0),
                    density=o.get("density"),
                )
                for o in s["objects"]
            ],
            intrinsics=CameraIntrinsics(
                intr["fx"], intr["fy"], intr["cx"], intr["cy"], intr["width"], intr["height"]
            ),
            ego=EgoMotion(
                position=tuple(ego.get("position", (0.0, 0.0))),
                heading=ego.get("heading", 0.0),
                velocity=tuple(ego.get("velocity", (0.0, 0.0))),
                yaw_rate=ego.get("yaw_rate", 0.0),
            ),
            ground_y=s["ground_y"],
            ground_extent=tuple(s["ground_extent"]),
            ground_density=s["ground_density"],
        )
    except KeyError as exc:
        raise ConfigInvalid(f"simulate config is missing {exc}") from exc
