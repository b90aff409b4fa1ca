"""Bivariate Gaussian mixtures: exact log-density and tempered sampling.

The mixture parameterization (weights, means, per-axis scales, correlation)
matches what the network heads emit. Densities run on autodiff tensors so
gradients flow to both the parameters and the query point; sampling is plain
numpy.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .errors import ContractError

Array = np.ndarray


@dataclass
class GmmParams:
    """K-component bivariate mixture; fields may be numpy arrays or Tensors."""

    weights: object  # (K,) simplex
    means: object  # (K, 2)
    scales: object  # (K, 2), positive
    corrs: object  # (K,), in (-1, 1)

    def numpy(self) -> "GmmParams":
        def val(x):
            return x.value if isinstance(x, Tensor) else np.asarray(x, dtype=np.float64)

        return GmmParams(val(self.weights), val(self.means), val(self.scales), val(self.corrs))

    def validate(self) -> "GmmParams":
        g = self.numpy()
        if abs(g.weights.sum() - 1.0) > 1e-9:
            raise ContractError(f"mixture weights sum to {g.weights.sum()}, not 1")
        if np.any(g.scales <= 0):
            raise ContractError("mixture scales must be positive")
        if np.any(np.abs(g.corrs) >= 1):
            raise ContractError("mixture correlations must lie in (-1, 1)")
        return self

    @property
    def k(self) -> int:
        w = self.weights.value if isinstance(self.weights, Tensor) else self.weights
        return len(w)


@dataclass
class SamplerConfig:
    """Temperature-controlled sampling; T=1 reproduces the raw mixture."""

    temperature: float = 1.0

    def __post_init__(self):
        if not (0.0 < self.temperature <= 16.0):
            raise ContractError(f"temperature {self.temperature} outside (0, 16]")


def gmm_log_pdf(params: GmmParams, point) -> Tensor:
    """log sum_k w_k N(point; mu_k, Sigma_k) via log-sum-exp.

    ``point`` may be (2,) or (N, 2); the result is scalar or (N,).
    """
    w = ad.as_tensor(params.weights)
    mu = ad.as_tensor(params.means)
    sc = ad.as_tensor(params.scales)
    rho = ad.as_tensor(params.corrs)
    pt = ad.as_tensor(point)
    single = pt.ndim == 1
    if single:
        pt = ad.reshape(pt, (1, 2))
    # component log-densities, shape (N, K)
    dx = ad.sub(ad.reshape(pt[:, 0], (-1, 1)), ad.reshape(mu[:, 0], (1, -1)))
    dy = ad.sub(ad.reshape(pt[:, 1], (-1, 1)), ad.reshape(mu[:, 1], (1, -1)))
    sx = ad.reshape(sc[:, 0], (1, -1))
    sy = ad.reshape(sc[:, 1], (1, -1))
    r = ad.reshape(rho, (1, -1))
    one_m_r2 = ad.sub(1.0, ad.mul(r, r))
    zx = ad.div(dx, sx)
    zy = ad.div(dy, sy)
    quad = ad.sub(ad.add(ad.mul(zx, zx), ad.mul(zy, zy)), ad.mul(ad.mul(2.0, r), ad.mul(zx, zy)))
    log_norm = ad.add(
        ad.add(ad.log(ad.mul(sx, sy)), ad.mul(0.5, ad.log(one_m_r2))),
        float(np.log(2.0 * np.pi)),
    )
    comp = ad.sub(ad.mul(-0.5, ad.div(quad, one_m_r2)), log_norm)
    logw = ad.reshape(ad.log(w), (1, -1))
    out = ad.logsumexp(ad.add(comp, logw), axis=1)
    if single:
        out = ad.reshape(out, ())
    return out


def temper_weights(weights: Array, temperature: float) -> Array:
    """Renormalized softmax(log w / T)."""
    logits = np.log(np.maximum(weights, 1e-300)) / temperature
    logits -= logits.max()
    e = np.exp(logits)
    return e / e.sum()


def gmm_sample(params: GmmParams, sc: SamplerConfig, rng: np.random.Generator) -> Array:
    """Draw one point: tempered component choice, then a bivariate normal
    whose covariance is scaled by T (scales multiplied by sqrt(T))."""
    g = params.numpy()
    temp = sc.temperature
    probs = temper_weights(g.weights, temp)
    k = int(rng.choice(len(probs), p=probs))
    sx, sy = g.scales[k] * np.sqrt(temp)
    r = g.corrs[k]
    z1, z2 = rng.standard_normal(2)
    x = g.means[k, 0] + sx * z1
    y = g.means[k, 1] + sy * (r * z1 + np.sqrt(1.0 - r * r) * z2)
    return np.array([x, y])


def gmm_mode_of_top_component(params: GmmParams) -> Array:
    """Zero-temperature limit: the mean of the argmax-weight component."""
    g = params.numpy()
    return g.means[int(np.argmax(g.weights))].copy()


def bernoulli_log_prob(p: float, outcome: bool) -> float:
    p = min(max(p, 1e-12), 1.0 - 1e-12)
    return float(np.log(p) if outcome else np.log1p(-p))


def temper_logit(logit: float, temperature: float) -> float:
    return logit / temperature
