"""Exemplar distribution given a concept: Gaussian motor noise plus a global
affine warp.

Locations and every relative control point get isotropic Gaussian jitter;
the warp scales about the drawing's center of mass and then translates it,
so the scale and shift components act independently. Densities are exact
and differentiable w.r.t. both token and type parameters.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .config import TokenNoiseConfig
from .drawing import CharacterToken, CharacterType
from .errors import ContractError

Array = np.ndarray

AFFINE_MEAN = np.array([1.0, 1.0, 0.0, 0.0])
MIN_AFFINE_SCALE = 0.1
LOG_2PI = float(np.log(2.0 * np.pi))


@dataclass
class TokenNoiseParams:
    sigma_loc: float = 2.0
    sigma_traj: float = 1.0
    affine_cov: Array = field(default_factory=lambda: np.diag([0.04, 0.04, 4.0, 4.0]))

    def __post_init__(self):
        self.affine_cov = np.asarray(self.affine_cov, dtype=np.float64).reshape(4, 4)
        if self.sigma_loc <= 0 or self.sigma_traj <= 0:
            raise ContractError("noise scales must be positive")
        if not np.allclose(self.affine_cov, self.affine_cov.T):
            raise ContractError("affine covariance must be symmetric")
        eigvals = np.linalg.eigvalsh(self.affine_cov)
        if np.any(eigvals <= 0):
            raise ContractError("affine covariance must be positive-definite")
        self._prec = np.linalg.inv(self.affine_cov)
        self._logdet = float(np.linalg.slogdet(self.affine_cov)[1])

    @classmethod
    def from_config(cls, cfg: TokenNoiseConfig) -> "TokenNoiseParams":
        return cls(cfg.sigma_loc, cfg.sigma_traj, np.diag(cfg.affine_cov_diag))


def sample_token(
    ctype: CharacterType, noise: TokenNoiseParams, rng: np.random.Generator
) -> CharacterToken:
    """Draw an exemplar: jittered starts/control points and a random warp."""
    starts = [s + rng.normal(0.0, noise.sigma_loc, 2) for s in ctype.starts]
    trajs = [t + rng.normal(0.0, noise.sigma_traj, t.shape) for t in ctype.trajectories]
    chol = np.linalg.cholesky(noise.affine_cov)
    affine = AFFINE_MEAN + chol @ rng.standard_normal(4)
    return CharacterToken(starts, trajs, affine)


# ---------------------------------------------------------------------------
# log-density


def _iso_gauss_logpdf_t(x: Tensor, mean: Tensor, sigma: float) -> Tensor:
    """Sum of independent 2-D isotropic Gaussian log-densities over rows."""
    diff = ad.sub(x, mean)
    quad = ad.reduce_sum(ad.mul(diff, diff))
    n_points = int(np.prod(x.shape[:-1])) if x.ndim > 1 else 1
    const = -n_points * (LOG_2PI + 2.0 * np.log(sigma))
    return ad.add(ad.mul(-0.5 / sigma**2, quad), const)


def token_log_prob_t(
    token_starts: list[Tensor],
    token_trajs: list[Tensor],
    affine: Tensor,
    type_starts: list[Tensor],
    type_trajs: list[Tensor],
    noise: TokenNoiseParams,
) -> Tensor:
    """Differentiable joint log-density of a token given its type."""
    terms = []
    for ts, ys in zip(token_starts, type_starts):
        terms.append(_iso_gauss_logpdf_t(ts, ys, noise.sigma_loc))
    for tt, xt in zip(token_trajs, type_trajs):
        terms.append(_iso_gauss_logpdf_t(tt, xt, noise.sigma_traj))
    diff = ad.sub(affine, ad.constant(AFFINE_MEAN))
    quad = ad.reduce_sum(ad.mul(ad.matmul(ad.reshape(diff, (1, 4)), ad.constant(noise._prec)), ad.reshape(diff, (1, 4))))
    terms.append(ad.add(ad.mul(-0.5, quad), -0.5 * (4.0 * LOG_2PI + noise._logdet)))
    total = terms[0]
    for t in terms[1:]:
        total = ad.add(total, t)
    return total


def token_log_prob(token: CharacterToken, ctype: CharacterType, noise: TokenNoiseParams) -> float:
    """Plain-number wrapper over the differentiable density."""
    token.validate_against(ctype)
    t = token_log_prob_t(
        [ad.constant(s) for s in token.starts],
        [ad.constant(x) for x in token.trajectories],
        ad.constant(token.affine),
        [ad.constant(s) for s in ctype.starts],
        [ad.constant(x) for x in ctype.trajectories],
        noise,
    )
    return float(t.value)


# ---------------------------------------------------------------------------
# affine warp


def apply_affine_t(token_starts: list[Tensor], token_trajs: list[Tensor], affine: Tensor) -> list[Tensor]:
    """Warped absolute control points per stroke, differentiable.

    Scaling is anchored at the pre-warp center of mass of all control
    points, then the shift translates the result; scales are clamped at
    0.1 so degenerate warps stay invertible.
    """
    abs_strokes = [ad.add(ad.reshape(s, (1, 2)), t) for s, t in zip(token_starts, token_trajs)]
    allpts = ad.concat(abs_strokes, axis=0)
    com = ad.reshape(ad.reduce_mean(allpts, axis=0), (1, 2))
    scale = ad.maximum(affine[0:2], MIN_AFFINE_SCALE)
    shift = affine[2:4]
    out = []
    for pts in abs_strokes:
        centered = ad.sub(pts, com)
        out.append(ad.add(ad.add(ad.mul(centered, ad.reshape(scale, (1, 2))), com), ad.reshape(shift, (1, 2))))
    return out


def apply_affine(token: CharacterToken) -> list[Array]:
    """Warped splines of a token (numpy), ready for rasterization."""
    out = apply_affine_t(
        [ad.constant(s) for s in token.starts],
        [ad.constant(x) for x in token.trajectories],
        ad.constant(token.affine),
    )
    return [t.value for t in out]


# ---------------------------------------------------------------------------
# noise fitting


def fit_token_noise(
    groups: list[list[CharacterType]], default: TokenNoiseParams | None = None
) -> TokenNoiseParams:
    """Pooled maximum-likelihood noise scales from within-class residuals.

    Each group holds drawings of one class with congruent stroke structure;
    residuals are displacements from the class mean. Groups whose drawings
    disagree in structure are skipped. Affine covariance keeps its default
    (it is not identifiable from unregistered residuals).
    """
    default = default or TokenNoiseParams()
    loc_sq, loc_n = 0.0, 0
    traj_sq, traj_n = 0.0, 0
    for group in groups:
        if len(group) < 2:
            continue
        ref = group[0]
        shapes = [t.shape for t in ref.trajectories]
        if any(
            d.kappa != ref.kappa or [t.shape for t in d.trajectories] != shapes for d in group
        ):
            continue
        starts = np.stack([np.stack(d.starts) for d in group])  # (m, kappa, 2)
        loc_res = starts - starts.mean(axis=0, keepdims=True)
        loc_sq += float((loc_res**2).sum())
        loc_n += loc_res.size
        for i in range(ref.kappa):
            # skip the first relative point: the type invariant pins it to 0
            trajs = np.stack([d.trajectories[i][1:] for d in group])
            res = trajs - trajs.mean(axis=0, keepdims=True)
            traj_sq += float((res**2).sum())
            traj_n += res.size
    if loc_n == 0 or traj_n == 0:
        return default
    return TokenNoiseParams(
        sigma_loc=max(np.sqrt(loc_sq / loc_n), 1e-3),
        sigma_traj=max(np.sqrt(traj_sq / traj_n), 1e-3),
        affine_cov=default.affine_cov,
    )
