"""Concept-level and exemplar-level drawing parameters.

A character type is the concept's motor program: stroke count, per-stroke
start locations, and relative spline control points. A character token is
one exemplar's realization: noised copies of those quantities plus a global
affine warp (scale-x, scale-y, shift-x, shift-y).
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field

import numpy as np

from .errors import ContractError
from .splines import Spline, encode_stroke

Array = np.ndarray


@dataclass
class CharacterType:
    """Motor program shared by all exemplars of a concept."""

    starts: list[Array]  # each (2,), pixel coordinates
    trajectories: list[Array]  # each (d_i + 1, 2) relative points, row 0 == (0, 0)

    def __post_init__(self):
        self.starts = [np.asarray(s, dtype=np.float64).reshape(2) for s in self.starts]
        self.trajectories = [
            np.asarray(t, dtype=np.float64).reshape(-1, 2) for t in self.trajectories
        ]
        self.validate()

    def validate(self) -> "CharacterType":
        if len(self.starts) < 1 or len(self.starts) != len(self.trajectories):
            raise ContractError(
                f"type needs matching starts/trajectories, got {len(self.starts)}/{len(self.trajectories)}"
            )
        for i, traj in enumerate(self.trajectories):
            if len(traj) < 2:
                raise ContractError(f"stroke {i} has fewer than one offset")
            if traj[0, 0] != 0.0 or traj[0, 1] != 0.0:
                raise ContractError(f"stroke {i} first relative point is not (0, 0)")
            if not np.all(np.isfinite(traj)) or not np.all(np.isfinite(self.starts[i])):
                raise ContractError(f"stroke {i} has non-finite coordinates")
        return self

    @property
    def kappa(self) -> int:
        return len(self.starts)

    @property
    def stroke_lengths(self) -> list[int]:
        """Offset counts d_i per stroke."""
        return [len(t) - 1 for t in self.trajectories]

    def absolute_strokes(self) -> list[Array]:
        """Per-stroke absolute spline control points."""
        return [s[None, :] + t for s, t in zip(self.starts, self.trajectories)]

    def copy(self) -> "CharacterType":
        return CharacterType([s.copy() for s in self.starts], [t.copy() for t in self.trajectories])

    def digest(self) -> str:
        h = hashlib.sha1()
        for s, t in zip(self.starts, self.trajectories):
            h.update(np.ascontiguousarray(s).tobytes())
            h.update(np.ascontiguousarray(t).tobytes())
        return h.hexdigest()

    @classmethod
    def from_splines(cls, splines: list[Spline]) -> "CharacterType":
        encs = [encode_stroke(sp) for sp in splines]
        return cls([e.start for e in encs], [e.rel_points for e in encs])


@dataclass
class CharacterToken:
    """One exemplar's drawing parameters, congruent with its parent type."""

    starts: list[Array]  # each (2,)
    trajectories: list[Array]  # each (d_i + 1, 2); first row is free here
    affine: Array = field(default_factory=lambda: np.array([1.0, 1.0, 0.0, 0.0]))

    def __post_init__(self):
        self.starts = [np.asarray(s, dtype=np.float64).reshape(2) for s in self.starts]
        self.trajectories = [
            np.asarray(t, dtype=np.float64).reshape(-1, 2) for t in self.trajectories
        ]
        self.affine = np.asarray(self.affine, dtype=np.float64).reshape(4)

    @property
    def kappa(self) -> int:
        return len(self.starts)

    def validate_against(self, ctype: CharacterType) -> "CharacterToken":
        if self.kappa != ctype.kappa:
            raise ContractError(f"token has {self.kappa} strokes, type has {ctype.kappa}")
        for i, (tt, ct) in enumerate(zip(self.trajectories, ctype.trajectories)):
            if tt.shape != ct.shape:
                raise ContractError(
                    f"stroke {i}: token trajectory {tt.shape} vs type {ct.shape}"
                )
        if not np.all(np.isfinite(self.affine)):
            raise ContractError("affine parameters must be finite")
        return self

    def copy(self) -> "CharacterToken":
        return CharacterToken(
            [s.copy() for s in self.starts],
            [t.copy() for t in self.trajectories],
            self.affine.copy(),
        )

    @classmethod
    def from_type(cls, ctype: CharacterType) -> "CharacterToken":
        """Zero-noise token: the type's own parameters under an identity warp."""
        return cls(
            [s.copy() for s in ctype.starts],
            [t.copy() for t in ctype.trajectories],
            np.array([1.0, 1.0, 0.0, 0.0]),
        )
