"""Differentiable rasterization of stroke programs and the Bernoulli image
likelihood.

Each stroke is sampled densely along its spline; every sample deposits an
isotropic Gaussian blob onto an ink accumulator that saturates through
``ink = 1 - exp(-acc)``. Pixel noise mixes the ink map toward its
complement: ``p = (1 - eps) * ink + eps * (1 - ink)``. Everything is smooth
in the stroke coordinates, the blur, and the noise level, so image
likelihood gradients flow back to the drawing parameters.

The same machinery at a small fixed blur provides the deterministic canvas
memory used by the autoregressive concept model (max-composite, grayscale).
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .config import RenderConfig
from .drawing import CharacterToken
from .errors import ContractError
from .splines import bspline_basis
from .token_model import apply_affine

Array = np.ndarray

PROB_FLOOR = 1e-6  # pixel probabilities stay inside (floor, 1 - floor)


@dataclass
class RenderParams:
    """Rendering blur (px) and pixel-noise level."""

    sigma: float
    eps: float

    def validate(self, cfg: RenderConfig) -> "RenderParams":
        if not (cfg.sigma_min <= self.sigma <= cfg.sigma_max):
            raise ContractError(
                f"sigma {self.sigma} outside [{cfg.sigma_min}, {cfg.sigma_max}]"
            )
        if not (cfg.eps_min <= self.eps <= cfg.eps_max):
            raise ContractError(f"eps {self.eps} outside [{cfg.eps_min}, {cfg.eps_max}]")
        return self

    @classmethod
    def mid_box(cls, cfg: RenderConfig) -> "RenderParams":
        return cls(0.5 * (cfg.sigma_min + cfg.sigma_max), 0.5 * (cfg.eps_min + cfg.eps_max))

    @classmethod
    def sample_uniform(cls, cfg: RenderConfig, rng: np.random.Generator) -> "RenderParams":
        return cls(
            float(rng.uniform(cfg.sigma_min, cfg.sigma_max)),
            float(rng.uniform(cfg.eps_min, cfg.eps_max)),
        )


@dataclass
class PixelMap:
    """Per-pixel ink probabilities, strictly inside (0, 1)."""

    probabilities: Array

    def __post_init__(self):
        self.probabilities = np.asarray(self.probabilities, dtype=np.float64)
        lo, hi = self.probabilities.min(), self.probabilities.max()
        if lo < PROB_FLOOR or hi > 1.0 - PROB_FLOOR:
            raise ContractError(f"pixel probabilities [{lo}, {hi}] escape the open unit box")

    @property
    def shape(self) -> tuple[int, int]:
        return self.probabilities.shape


def as_binary_image(arr, size: int | None = None) -> Array:
    img = np.asarray(arr)
    if img.ndim != 2 or not np.isin(img, (0, 1)).all():
        raise ContractError("binary image must be a 2-D array of {0, 1}")
    if size is not None and img.shape != (size, size):
        raise ContractError(f"image shape {img.shape} does not match canvas {size}x{size}")
    return img.astype(np.uint8)


def blank_canvas(size: int) -> Array:
    return np.zeros((size, size), dtype=np.float64)


# ---------------------------------------------------------------------------
# spline sampling


@lru_cache(maxsize=4096)
def _sampling_basis(n_ctrl: int, n_samples: int) -> Array:
    basis = bspline_basis(np.linspace(0.0, 1.0, n_samples), n_ctrl)
    basis.setflags(write=False)
    return basis


def sample_count(ctrl_values: Array, cfg: RenderConfig) -> int:
    """Samples per stroke: proportional to control-polygon length, floored."""
    poly = float(np.linalg.norm(np.diff(ctrl_values, axis=0), axis=1).sum())
    return int(np.clip(round(poly / cfg.sample_spacing), cfg.min_samples, cfg.max_samples))


def stroke_samples_t(ctrl: Tensor, cfg: RenderConfig) -> Tensor:
    """Dense sample points along one stroke's spline (differentiable)."""
    n = sample_count(ctrl.value, cfg)
    return ad.matmul(ad.constant(_sampling_basis(ctrl.shape[0], n)), ctrl)


# ---------------------------------------------------------------------------
# differentiable rasterization core


def ink_t(warped_ctrl: list[Tensor], sigma: Tensor, size: int, cfg: RenderConfig) -> Tensor:
    """Saturating ink map of a full drawing at blur ``sigma``."""
    acc = None
    for ctrl in warped_ctrl:
        pts = stroke_samples_t(ctrl, cfg)
        dep = ad.blob_deposit(pts, sigma, size, size)
        acc = dep if acc is None else ad.add(acc, dep)
    if acc is None:
        return ad.constant(np.zeros((size, size)))
    return ad.sub(1.0, ad.exp(ad.mul(-1.0, acc)))


def prob_map_t(
    warped_ctrl: list[Tensor], sigma: Tensor, eps: Tensor, size: int, cfg: RenderConfig
) -> Tensor:
    """Pixel probability map ``(1 - eps) * ink + eps * (1 - ink)``, clamped
    into the open unit box (the clamp only binds for eps below the floor)."""
    ink = ink_t(warped_ctrl, sigma, size, cfg)
    p = ad.add(ad.mul(ink, ad.sub(1.0, ad.mul(2.0, eps))), eps)
    return ad.minimum(ad.maximum(p, PROB_FLOOR), 1.0 - PROB_FLOOR)


def image_log_lik_t(image: Array, p: Tensor) -> Tensor:
    """Bernoulli log-likelihood of a binary image under a probability map."""
    if image.shape != p.shape:
        raise ContractError(f"image shape {image.shape} vs probability map {p.shape}")
    bits = ad.constant(np.asarray(image, dtype=np.float64))
    return ad.reduce_sum(
        ad.add(ad.mul(bits, ad.log(p)), ad.mul(ad.sub(1.0, bits), ad.log(ad.sub(1.0, p))))
    )


def f_render_t(ctrl: Tensor, canvas: Tensor, size: int, cfg: RenderConfig) -> Tensor:
    """Canvas-memory update: max-composite the new stroke's ink at the fixed
    canvas blur. Deterministic, grayscale in [0, 1], differentiable."""
    new_ink = ink_t([ctrl], ad.constant(cfg.canvas_blur), size, cfg)
    return ad.maximum(canvas, new_ink)


# ---------------------------------------------------------------------------
# public (numpy-facing) surface


def render_token(
    token: CharacterToken, rp: RenderParams, size: int, cfg: RenderConfig
) -> PixelMap:
    """Rasterize a token (affine warp applied) into a pixel probability map."""
    rp.validate(cfg)
    warped = [ad.constant(c) for c in apply_affine(token)]
    p = prob_map_t(warped, ad.constant(rp.sigma), ad.constant(rp.eps), size, cfg)
    return PixelMap(p.value)


def image_log_lik(image: Array, pmap: PixelMap) -> float:
    if image.shape != pmap.shape:
        raise ContractError(f"image shape {image.shape} vs probability map {pmap.shape}")
    p = pmap.probabilities
    bits = np.asarray(image, dtype=np.float64)
    return float((bits * np.log(p) + (1.0 - bits) * np.log1p(-p)).sum())


def f_render(start: Array, rel_points: Array, canvas: Array, cfg: RenderConfig) -> Array:
    """Numpy canvas update from a stroke's start + relative control points."""
    ctrl = np.asarray(start, dtype=np.float64).reshape(1, 2) + np.asarray(rel_points, dtype=np.float64)
    size = canvas.shape[0]
    out = f_render_t(ad.constant(ctrl), ad.constant(canvas), size, cfg)
    return out.value


def sample_binary_image(pmap: PixelMap, rng: np.random.Generator) -> Array:
    """Draw a binary image pixelwise from the probability map."""
    return (rng.random(pmap.shape) < pmap.probabilities).astype(np.uint8)
