"""Run configuration: TOML file plus flag overrides, with a stable digest.

All randomness in a run flows from the named seeds here; the config
digest is embedded in every output file so reruns can be verified
byte-for-byte.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Mapping

try:
    import tomllib  # Python >= 3.11
except ModuleNotFoundError:  # pragma: no cover
    import tomli as tomllib

from .errors import DomainError


@dataclass(frozen=True)
class RunConfig:
    # paths
    ground_truth: str | None = None
    detections: str | None = None
    labeled_ids: str | None = None
    categories: tuple[str, ...] | None = None
    out_dir: str = "out"
    # protocol
    strategy: str = "wcr"
    init_fraction: float = 0.1
    batch_fraction: float = 0.1
    iterations: int = 4
    double_weight_fraction: float = 0.2
    # seeds
    seed_init: int = 0
    seed_random: int = 1
    seed_gmm: int = 2
    seed_simdet: int = 3
    seed_synth: int = 4
    # scoring
    k_min: int = 1
    k_max: int = 8
    min_score: float = 0.05
    w1_floor: float = 10.0
    w1_raw: bool = False
    # tiling
    window: int = 1024
    stride: int = 824
    min_inside_fraction: float = 0.5
    # evaluation
    iou_threshold: float = 0.5
    ap_mode: str = "all_points"
    # synthetic dataset / detector
    synth_categories: int = 15
    synth_images: int = 500
    synth_exponent: float = 1.5
    synth_outlier_fraction: float = 0.05
    synth_mean_objects: float = 6.0
    synth_empty_fraction: float = 0.55
    eval_images: int = 200
    skill_half_saturation: float = 8.0
    skill_miss_floor: float = 0.7
    skill_fp_rate: float = 2.0
    skill_loc_noise: float = 8.0
    skill_kappa: float = 25.0

    def __post_init__(self) -> None:
        for name in ("init_fraction", "batch_fraction", "double_weight_fraction"):
            v = getattr(self, name)
            if not 0 < v < 1:
                raise DomainError(f"{name} must be in (0, 1), got {v}")
        if not 0 < self.stride <= self.window:
            raise DomainError("need window >= stride > 0")
        if self.strategy not in ("random", "lc", "wc", "wcr"):
            raise DomainError(f"unknown strategy {self.strategy!r}")

    @property
    def effective_w1_floor(self) -> float:
        return 1.0 if self.w1_raw else self.w1_floor

    def digest(self) -> str:
        data = dataclasses.asdict(self)
        blob = json.dumps(data, sort_keys=True, default=list)
        return hashlib.sha256(blob.encode("utf-8")).hexdigest()[:16]


def _coerce(field: dataclasses.Field, value: Any) -> Any:
    if field.name == "categories" and value is not None:
        return tuple(value)
    return value


def build_config(
    file_path: str | Path | None = None, overrides: Mapping[str, Any] | None = None
) -> RunConfig:
    """Defaults, then config file values, then CLI flag overrides (flags win)."""
    values: dict[str, Any] = {}
    if file_path is not None:
        with open(file_path, "rb") as fh:
            data = tomllib.load(fh)
        for key, value in data.items():
            if key not in _FIELDS:
                raise DomainError(f"unknown config key {key!r}")
            values[key] = value
    for key, value in (overrides or {}).items():
        if value is not None:
            values[key] = value
    kwargs = {k: _coerce(_FIELDS[k], v) for k, v in values.items()}
    return RunConfig(**kwargs)


_FIELDS = {f.name: f for f in dataclasses.fields(RunConfig)}
