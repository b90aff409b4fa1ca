"""Minimal cubic B-spline stroke representation.

Raw pen trajectories (ordered pixel coordinates, origin top-left, x right,
y down) are compressed to the fewest-control-point clamped uniform B-spline
whose least-squares fit meets a residual threshold. Control-point counts
below 4 degrade the degree (2 points = line, 3 = quadratic) so short
strokes stay representable.

Coordinates are (x, y) pairs throughout; images index [row=y, col=x].
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .config import SplineConfig
from .errors import ContractError, DataError

Array = np.ndarray


class DegenerateStrokeError(ContractError):
    """Stroke collapses to fewer than two distinct points."""


@dataclass
class Spline:
    """Clamped uniform B-spline, cubic where the control count allows."""

    control_points: Array  # (n, 2), n >= 2

    def __post_init__(self):
        self.control_points = np.asarray(self.control_points, dtype=np.float64)
        if self.control_points.ndim != 2 or self.control_points.shape[1] != 2:
            raise ContractError(f"control points must be (n, 2), got {self.control_points.shape}")
        if len(self.control_points) < 2:
            raise ContractError("a spline needs at least 2 control points")
        if not np.all(np.isfinite(self.control_points)):
            raise ContractError("control points must be finite")

    @property
    def n_control(self) -> int:
        return len(self.control_points)


@dataclass
class StrokeEncoding:
    """Start point plus relative control points (first pinned to the origin).

    ``offsets[t] == rel_points[t+1] - rel_points[t]`` and the absolute
    control point t is ``start + rel_points[t]``.
    """

    start: Array  # (2,)
    offsets: Array  # (d, 2)
    rel_points: Array = field(default=None)  # (d+1, 2), rel_points[0] == (0, 0)

    def __post_init__(self):
        self.start = np.asarray(self.start, dtype=np.float64)
        self.offsets = np.asarray(self.offsets, dtype=np.float64).reshape(-1, 2)
        if self.rel_points is None:
            self.rel_points = np.concatenate(
                [np.zeros((1, 2)), np.cumsum(self.offsets, axis=0)], axis=0
            )
        else:
            self.rel_points = np.asarray(self.rel_points, dtype=np.float64)
        if self.rel_points[0, 0] != 0.0 or self.rel_points[0, 1] != 0.0:
            raise ContractError("first relative point must be exactly (0, 0)")
        expect = np.concatenate([np.zeros((1, 2)), np.cumsum(self.offsets, axis=0)], axis=0)
        if self.rel_points.shape != expect.shape or not np.allclose(
            self.rel_points, expect, rtol=0, atol=1e-9
        ):
            raise ContractError("rel_points inconsistent with offsets")

    @property
    def n_points(self) -> int:
        return len(self.rel_points)


# ---------------------------------------------------------------------------
# basis machinery


def clamped_knots(n_ctrl: int, degree: int) -> Array:
    interior = n_ctrl - degree - 1
    inner = (np.arange(1, interior + 1)) / (interior + 1)
    return np.concatenate([np.zeros(degree + 1), inner, np.ones(degree + 1)])


def spline_degree(n_ctrl: int) -> int:
    return min(3, n_ctrl - 1)


def bspline_basis(params: Array, n_ctrl: int) -> Array:
    """Cox-de Boor basis matrix (len(params), n_ctrl) on s in [0, 1]."""
    s = np.asarray(params, dtype=np.float64)
    p = spline_degree(n_ctrl)
    t = clamped_knots(n_ctrl, p)
    m = len(t) - 1
    basis = np.zeros((len(s), m))
    for j in range(m):
        if t[j] < t[j + 1]:
            basis[:, j] = (s >= t[j]) & (s < t[j + 1])
    # the right endpoint belongs to the last non-empty span
    last = int(np.flatnonzero(np.diff(t) > 0)[-1])
    basis[s >= t[-1], last] = 1.0
    for d in range(1, p + 1):
        nxt = np.zeros((len(s), m - d))
        for j in range(m - d):
            den_l = t[j + d] - t[j]
            if den_l > 0:
                nxt[:, j] += (s - t[j]) / den_l * basis[:, j]
            den_r = t[j + d + 1] - t[j + 1]
            if den_r > 0:
                nxt[:, j] += (t[j + d + 1] - s) / den_r * basis[:, j + 1]
        basis = nxt
    return basis


def eval_spline(spline: Spline, num_samples: int) -> Array:
    """Sample the curve at uniformly spaced parameters over [0, 1]."""
    if num_samples < 2:
        raise ContractError("num_samples must be >= 2")
    s = np.linspace(0.0, 1.0, num_samples)
    return bspline_basis(s, spline.n_control) @ spline.control_points


# ---------------------------------------------------------------------------
# fitting


def dedup_points(points: Array) -> Array:
    """Drop consecutive identical points."""
    points = np.asarray(points, dtype=np.float64).reshape(-1, 2)
    if len(points) <= 1:
        return points
    keep = np.ones(len(points), dtype=bool)
    keep[1:] = np.any(points[1:] != points[:-1], axis=1)
    return points[keep]


def chord_length_params(points: Array) -> Array:
    seg = np.linalg.norm(np.diff(points, axis=0), axis=1)
    total = seg.sum()
    if total == 0:
        raise DegenerateStrokeError("stroke has zero length")
    return np.concatenate([[0.0], np.cumsum(seg) / total])


def arc_length(points: Array) -> float:
    points = np.asarray(points, dtype=np.float64).reshape(-1, 2)
    if len(points) < 2:
        return 0.0
    return float(np.linalg.norm(np.diff(points, axis=0), axis=1).sum())


def fit_spline(points: Array, n_ctrl: int, params: Array | None = None):
    """Least-squares fit at a fixed control count.

    Returns (Spline | None, mean residual, full_rank flag); a rank-deficient
    system yields None so callers can fall back to another count.
    """
    points = np.asarray(points, dtype=np.float64)
    if params is None:
        params = chord_length_params(points)
    basis = bspline_basis(params, n_ctrl)
    ctrl, _, rank, _ = np.linalg.lstsq(basis, points, rcond=None)
    if rank < n_ctrl:
        return None, np.inf, False
    resid = float(np.linalg.norm(basis @ ctrl - points, axis=1).mean())
    return Spline(ctrl), resid, True


def fit_minimal_spline(
    stroke: Array,
    residual_threshold: float,
    max_control: int = 30,
    params: Array | None = None,
) -> Spline:
    """Fewest-control-point spline whose mean per-point residual meets the
    threshold.

    Control counts are searched incrementally from 2 up to
    ``min(len(stroke), max_control)``; data points get chord-length
    parameters unless ``params`` overrides them. If no count meets the
    threshold the best fit found is returned.
    """
    pts = dedup_points(stroke)
    if len(pts) < 2:
        raise DegenerateStrokeError(
            f"stroke has {len(pts)} distinct point(s); need at least 2"
        )
    if params is None:
        params = chord_length_params(pts)
    else:
        params = np.asarray(params, dtype=np.float64)
        if len(params) != len(pts):
            raise ContractError("params length must match deduplicated points")
    best: Spline | None = None
    best_resid = np.inf
    for n in range(2, min(len(pts), max_control) + 1):
        spline, resid, ok = fit_spline(pts, n, params)
        if not ok:
            continue  # singular system: fall back to the next count
        if resid < best_resid:
            best, best_resid = spline, resid
        if resid <= residual_threshold:
            return spline
    if best is None:
        raise DegenerateStrokeError("no non-singular fit exists for this stroke")
    return best


# ---------------------------------------------------------------------------
# encoding


def encode_stroke(spline: Spline) -> StrokeEncoding:
    """Split a spline into start point + relative control points."""
    ctrl = spline.control_points
    start = ctrl[0].copy()
    rel = ctrl - start
    return StrokeEncoding(start=start, offsets=np.diff(rel, axis=0), rel_points=rel)


def decode_stroke(enc: StrokeEncoding) -> Spline:
    return Spline(enc.start[None, :] + enc.rel_points)


# ---------------------------------------------------------------------------
# drawing-level preprocessing


def preprocess_drawing(strokes: list[Array], cfg: SplineConfig) -> list[Spline]:
    """Filter out tiny strokes and fit the survivors.

    Strokes whose polyline length falls below ``cfg.min_stroke_length`` are
    dropped (this also removes dots and other degenerate marks); order is
    preserved. Raises if nothing survives.
    """
    if not strokes:
        raise DataError("drawing has no strokes")
    out: list[Spline] = []
    for stroke in strokes:
        pts = dedup_points(stroke)
        if arc_length(pts) < cfg.min_stroke_length:
            continue
        out.append(fit_minimal_spline(pts, cfg.residual_threshold, cfg.max_control))
    if not out:
        raise DataError("all strokes fell below the minimum length threshold")
    return out
