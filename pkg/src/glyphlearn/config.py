"""Run configuration: every tunable default in one validated structure.

All knobs that modules consume (thresholds, architecture sizes, optimizer
settings, temperatures) live here so a single JSON file reproduces a run.
``RunConfig.validate`` rejects out-of-range values naming the offending key.
"""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, field

from .errors import DataError


@dataclass
class SplineConfig:
    residual_threshold: float = 2.0  # mean px residual at 105x105 scale
    min_stroke_length: float = 9.0  # px of polyline length
    max_control: int = 30


@dataclass
class RenderConfig:
    sigma_min: float = 0.5
    sigma_max: float = 5.0
    eps_min: float = 1e-4
    eps_max: float = 0.5
    canvas_blur: float = 0.5  # fixed blur of the canvas-memory compositor
    sample_spacing: float = 0.5  # px between consecutive spline samples
    min_samples: int = 16
    max_samples: int = 240


@dataclass
class ArchConfig:
    """Network sizes. Small defaults keep single-core inference tractable;
    every field is tunable."""

    pool: int = 2  # average-pool factor on the canvas before encoding
    channels: list[int] = field(default_factory=lambda: [8, 16, 32])
    loc_hidden: int = 96
    term_hidden: int = 48
    lstm_hidden: int = 128
    attn_hidden: int = 48
    mixture_components: int = 10
    sigma_floor: float = 1e-3
    max_strokes: int = 10
    max_steps: int = 50


@dataclass
class TokenNoiseConfig:
    sigma_loc: float = 2.0  # px, start-location jitter
    sigma_traj: float = 1.0  # px, per-control-point jitter
    affine_cov_diag: list[float] = field(default_factory=lambda: [0.04, 0.04, 4.0, 4.0])


@dataclass
class InferenceConfig:
    n_walks: int = 100
    cover_frac: float = 0.95
    junction_merge_radius: int = 2
    angle_scale_deg: float = 45.0
    exhaustive_cap: int = 64  # max order x direction configs enumerated exactly
    random_search_budget: int = 64
    max_candidates: int = 24  # parse proposals scored per image
    top_k: int = 5
    opt_steps: int = 200
    opt_lr: float = 0.1
    refit_steps: int = 60
    refit_lr: float = 0.1


@dataclass
class TrainConfig:
    lr: float = 1e-3
    batch_size: int = 32
    grad_clip: float = 5.0
    epochs: int = 30
    holdout_fraction: float = 0.1
    canonical_order: bool = True  # sort corpus by content digest before batching


@dataclass
class TaskConfig:
    exemplar_temperature: float = 8.0  # flattens parse weights when resampling
    concept_temperature: float = 0.5
    concept_sigma: float = 2.75  # mid-box render blur for concept grids
    concept_eps: float = 1e-3
    hessian_step: float = 1e-4  # relative step for curvature finite differences
    hessian_jitter: float = 1e-6


@dataclass
class RunConfig:
    canvas_size: int = 105
    seed: int = 0
    workers: int = 1  # parallel-map width for per-image work
    spline: SplineConfig = field(default_factory=SplineConfig)
    render: RenderConfig = field(default_factory=RenderConfig)
    arch: ArchConfig = field(default_factory=ArchConfig)
    token_noise: TokenNoiseConfig = field(default_factory=TokenNoiseConfig)
    inference: InferenceConfig = field(default_factory=InferenceConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    tasks: TaskConfig = field(default_factory=TaskConfig)

    # -- validation ----------------------------------------------------

    _RANGES = {
        "canvas_size": (16, 512),
        "workers": (1, 256),
        "spline.residual_threshold": (1e-9, 50.0),
        "spline.min_stroke_length": (0.0, 200.0),
        "spline.max_control": (2, 200),
        "render.sigma_min": (1e-3, 50.0),
        "render.sigma_max": (1e-3, 50.0),
        "render.eps_min": (1e-9, 0.5),
        "render.eps_max": (1e-9, 0.5),
        "render.canvas_blur": (0.05, 10.0),
        "render.sample_spacing": (0.05, 10.0),
        "render.min_samples": (2, 10000),
        "render.max_samples": (2, 10000),
        "arch.pool": (1, 8),
        "arch.loc_hidden": (1, 4096),
        "arch.term_hidden": (1, 4096),
        "arch.lstm_hidden": (1, 4096),
        "arch.attn_hidden": (1, 4096),
        "arch.mixture_components": (1, 128),
        "arch.sigma_floor": (1e-9, 1.0),
        "arch.max_strokes": (1, 64),
        "arch.max_steps": (1, 512),
        "token_noise.sigma_loc": (1e-6, 100.0),
        "token_noise.sigma_traj": (1e-6, 100.0),
        "inference.n_walks": (1, 100000),
        "inference.cover_frac": (0.0, 1.0),
        "inference.junction_merge_radius": (0, 16),
        "inference.angle_scale_deg": (1.0, 360.0),
        "inference.exhaustive_cap": (1, 100000),
        "inference.random_search_budget": (1, 100000),
        "inference.max_candidates": (1, 10000),
        "inference.top_k": (1, 100),
        "inference.opt_steps": (1, 100000),
        "inference.opt_lr": (1e-9, 10.0),
        "inference.refit_steps": (1, 100000),
        "inference.refit_lr": (1e-9, 10.0),
        "train.lr": (1e-9, 1.0),
        "train.batch_size": (1, 8192),
        "train.grad_clip": (1e-3, 1e6),
        "train.epochs": (1, 100000),
        "train.holdout_fraction": (0.0, 0.9),
        "tasks.exemplar_temperature": (1e-3, 16.0),
        "tasks.concept_temperature": (1e-3, 16.0),
        "tasks.concept_sigma": (1e-3, 50.0),
        "tasks.concept_eps": (1e-9, 0.5),
        "tasks.hessian_step": (1e-9, 1.0),
        "tasks.hessian_jitter": (1e-12, 1.0),
    }

    def validate(self) -> "RunConfig":
        for key, (lo, hi) in self._RANGES.items():
            obj = self
            *path, leaf = key.split(".")
            for part in path:
                obj = getattr(obj, part)
            val = getattr(obj, leaf)
            if not (lo <= val <= hi):
                raise DataError(f"config key '{key}' = {val!r} outside [{lo}, {hi}]")
        if self.render.sigma_min > self.render.sigma_max:
            raise DataError("config key 'render.sigma_min' exceeds 'render.sigma_max'")
        if self.render.eps_min > self.render.eps_max:
            raise DataError("config key 'render.eps_min' exceeds 'render.eps_max'")
        if len(self.arch.channels) < 1 or any(c < 1 or c > 1024 for c in self.arch.channels):
            raise DataError("config key 'arch.channels' must list sizes in [1, 1024]")
        if len(self.token_noise.affine_cov_diag) != 4 or any(
            v <= 0 for v in self.token_noise.affine_cov_diag
        ):
            raise DataError("config key 'token_noise.affine_cov_diag' needs 4 positive entries")
        return self

    # -- (de)serialization ----------------------------------------------

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    @classmethod
    def from_dict(cls, data: dict) -> "RunConfig":
        known = {f.name: f for f in dataclasses.fields(cls)}
        kwargs = {}
        for key, value in data.items():
            if key not in known:
                raise DataError(f"unknown config key '{key}'")
            ftype = known[key].default_factory if known[key].default_factory is not dataclasses.MISSING else None
            if isinstance(value, dict) and ftype is not None:
                section = ftype()
                names = {f.name for f in dataclasses.fields(section)}
                for k in value:
                    if k not in names:
                        raise DataError(f"unknown config key '{key}.{k}'")
                kwargs[key] = type(section)(**value)
            else:
                kwargs[key] = value
        return cls(**kwargs).validate()

    @classmethod
    def load(cls, path: str) -> "RunConfig":
        try:
            with open(path, "r", encoding="utf-8") as fh:
                data = json.load(fh)
        except OSError as e:
            raise DataError(f"cannot read config file {path}: {e}") from e
        except json.JSONDecodeError as e:
            raise DataError(f"config file {path} is not valid JSON: {e}") from e
        return cls.from_dict(data)

    def save(self, path: str) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(self.to_json())
            fh.write("\n")


DEFAULT_CONFIG = RunConfig()
