"""Procedural desk-scale drawing corpus.

A catalog of 40 glyph classes (bars, bends, arcs, crossings, and 2-3 stroke
composites) generates stroke drawings with within-class jitter that mirrors
the exemplar noise model: per-stroke start offsets, smooth shape jitter, and
a small global affine. Each drawing carries its rendered binary image and
the ground-truth segmentation, so bottom-up inference can be scored against
the generating strokes.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .config import RunConfig
from .drawing import CharacterType
from .errors import ContractError
from .render import PixelMap, RenderParams, render_token
from .rng import substream
from .splines import preprocess_drawing
from .token_model import CharacterToken

Array = np.ndarray


def _line(p0, p1, n=30):
    t = np.linspace(0.0, 1.0, n)[:, None]
    return np.asarray(p0) * (1 - t) + np.asarray(p1) * t


def _arc(center, radius, a0_deg, a1_deg, n=44, ry=None):
    t = np.radians(np.linspace(a0_deg, a1_deg, n))
    cx, cy = center
    ry = radius if ry is None else ry
    return np.stack([cx + radius * np.cos(t), cy + ry * np.sin(t)], axis=1)


def _scurve(p0, p1, amp, n=50):
    t = np.linspace(0.0, 1.0, n)
    base = _line(p0, p1, n)
    d = np.asarray(p1, dtype=float) - np.asarray(p0, dtype=float)
    normal = np.array([-d[1], d[0]])
    norm = np.linalg.norm(normal)
    normal = normal / norm if norm else np.array([0.0, 1.0])
    return base + np.outer(amp * np.sin(2 * np.pi * t), normal)


def _bend(p0, corner, p1, n=24):
    return np.concatenate([_line(p0, corner, n), _line(corner, p1, n)[1:]], axis=0)


def _catalog() -> list[tuple[str, callable]]:
    """(name, builder) pairs; builders return lists of stroke polylines."""
    c = 52.0
    entries: list[tuple[str, callable]] = [
        ("bar_h", lambda: [_line((24, c), (80, c))]),
        ("bar_v", lambda: [_line((c, 24), (c, 80))]),
        ("bar_diag_dn", lambda: [_line((26, 26), (78, 78))]),
        ("bar_diag_up", lambda: [_line((26, 78), (78, 26))]),
        ("bar_short_h", lambda: [_line((34, 38), (72, 38))]),
        ("bar_short_v", lambda: [_line((38, 34), (38, 72))]),
        ("bend_l", lambda: [_bend((30, 28), (30, 76), (76, 76))]),
        ("bend_gamma", lambda: [_bend((30, 76), (30, 28), (76, 28))]),
        ("bend_seven", lambda: [_bend((28, 30), (76, 30), (76, 78))]),
        ("bend_j", lambda: [_bend((76, 26), (76, 74), (30, 74))]),
        ("arc_up", lambda: [_arc((c, 62), 26, 180, 360)]),
        ("arc_dn", lambda: [_arc((c, 40), 26, 0, 180)]),
        ("arc_left", lambda: [_arc((62, c), 26, 90, 270)]),
        ("arc_right", lambda: [_arc((40, c), 26, -90, 90)]),
        ("s_curve", lambda: [_scurve((32, 26), (72, 78), 9.0)]),
        ("zigzag", lambda: [np.concatenate([_line((26, 32), (52, 60), 22), _line((52, 60), (66, 34), 14)[1:], _line((66, 34), (82, 72), 16)[1:]])]),
        ("plus", lambda: [_line((c, 28), (c, 76)), _line((28, c), (76, c))]),
        ("cross_x", lambda: [_line((30, 30), (76, 76)), _line((30, 76), (76, 30))]),
        ("tee", lambda: [_line((28, 32), (78, 32)), _line((c, 32), (c, 80))]),
        ("tee_left", lambda: [_line((34, 26), (34, 78)), _line((34, c), (80, c))]),
        ("corner_two", lambda: [_line((30, 30), (30, 74)), _line((30, 74), (76, 74))]),
        ("rails_h", lambda: [_line((28, 38), (78, 38)), _line((28, 68), (78, 68))]),
        ("rails_v", lambda: [_line((38, 28), (38, 78)), _line((68, 28), (68, 78))]),
        ("vee", lambda: [_line((30, 30), (c, 78)), _line((c, 78), (76, 30))]),
        ("dee", lambda: [_line((38, 28), (38, 78)), _arc((38, 53), 26, -90, 90, ry=25)]),
        ("cup_bar", lambda: [_arc((c, 48), 24, 0, 180), _line((28, 36), (76, 36))]),
        ("arc_over_bar", lambda: [_arc((c, 52), 22, 180, 360), _line((28, 70), (76, 70))]),
        ("bar_on_arc", lambda: [_line((c, 26), (c, 58)), _arc((c, 56), 22, 0, 180)]),
        ("ring", lambda: [_arc((c, c), 25, 0, 360, n=72)]),
        ("ring_bar", lambda: [_arc((c, 42), 17, 0, 360, n=56), _line((c, 60), (c, 84))]),
        ("cee", lambda: [_arc((60, c), 27, 70, 290, n=52)]),
        ("hook", lambda: [np.concatenate([_line((40, 24), (40, 62), 30), _arc((52, 62), 12, 180, 330, n=26)[1:]])]),
        ("aitch", lambda: [_line((34, 28), (34, 78)), _line((70, 28), (70, 78)), _line((34, 53), (70, 53))]),
        ("triangle", lambda: [_line((c, 28), (78, 74)), _line((78, 74), (28, 74)), _line((28, 74), (c, 28))]),
        ("asterisk", lambda: [_line((c, 26), (c, 78)), _line((32, 36), (74, 68)), _line((32, 68), (74, 36))]),
        ("pi", lambda: [_line((26, 34), (80, 34)), _line((38, 34), (38, 78)), _line((66, 34), (66, 78))]),
        ("eff", lambda: [_line((36, 26), (36, 78)), _line((36, 26), (76, 26)), _line((36, 50), (68, 50))]),
        ("ladder", lambda: [_line((36, 28), (36, 76)), _line((68, 28), (68, 76)), _line((36, 40), (68, 62))]),
        ("arrow", lambda: [_line((28, c), (78, c)), _line((60, 36), (78, c)), _line((60, 68), (78, c))]),
        ("kay", lambda: [_line((36, 26), (36, 78)), _line((36, 52), (72, 26)), _line((36, 52), (72, 78))]),
    ]
    return entries


CATALOG = _catalog()
N_CLASSES = len(CATALOG)


@dataclass
class ToyDrawing:
    class_id: int
    class_name: str
    drawing_id: str
    strokes: list[Array]  # generating polylines, ground-truth segmentation
    image: Array  # binary canvas

    @property
    def kappa_true(self) -> int:
        return len(self.strokes)


def _jitter_drawing(strokes: list[Array], rng: np.random.Generator, cfg: RunConfig) -> list[Array]:
    out = []
    scale = 1.0 + rng.normal(0.0, 0.045, 2)
    shift = rng.normal(0.0, 2.2, 2)
    allpts = np.concatenate(strokes)
    com = allpts.mean(axis=0)
    for s in strokes:
        start_off = rng.normal(0.0, 1.6, 2)
        t = np.linspace(0, 2 * np.pi, len(s))
        phase = rng.uniform(0, 2 * np.pi, 2)
        wobble = np.stack(
            [rng.normal(0, 0.7) * np.sin(t + phase[0]), rng.normal(0, 0.7) * np.sin(t + phase[1])],
            axis=1,
        )
        pts = (s - com) * scale + com + shift + start_off + wobble
        out.append(np.clip(pts, 4.0, cfg.canvas_size - 5.0))
    return out


def render_strokes_to_image(strokes: list[Array], cfg: RunConfig, sigma: float = 0.7) -> Array:
    """Deterministic binary image of raw polylines (threshold at 0.5)."""
    splines = preprocess_drawing(strokes, cfg.spline)
    ctype = CharacterType.from_splines(splines)
    pm = render_token(
        CharacterToken.from_type(ctype), RenderParams(sigma, 0.001), cfg.canvas_size, cfg.render
    )
    return (pm.probabilities > 0.5).astype(np.uint8)


def synthesize_toy_corpus(
    n_classes: int, n_per_class: int, seed: int, cfg: RunConfig | None = None, class_offset: int = 0
) -> list[ToyDrawing]:
    """Deterministic corpus: class ``class_offset + i`` for i < n_classes."""
    cfg = cfg or RunConfig()
    if class_offset + n_classes > N_CLASSES:
        raise ContractError(
            f"catalog has {N_CLASSES} classes; requested offset {class_offset} + {n_classes}"
        )
    out = []
    for ci in range(class_offset, class_offset + n_classes):
        name, builder = CATALOG[ci]
        for j in range(n_per_class):
            rng = substream(seed, f"toy/{ci}/{j}")
            strokes = _jitter_drawing(builder(), rng, cfg)
            image = render_strokes_to_image(strokes, cfg)
            out.append(ToyDrawing(ci, name, f"{name}_{j:03d}", strokes, image))
    return out


def corpus_types(drawings: list[ToyDrawing], cfg: RunConfig) -> list[CharacterType]:
    """Preprocess drawings into concept programs for training."""
    return [
        CharacterType.from_splines(preprocess_drawing(d.strokes, cfg.spline)) for d in drawings
    ]
