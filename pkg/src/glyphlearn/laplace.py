"""Laplace approximation of integrals exp(f) around local maxima.

The curvature comes from central finite differences of an analytic gradient
(no second-order tape needed); the negated Hessian is symmetrized and, if
necessary, jittered until positive-definite so the Gaussian integral is
always defined. Works for any (f, grad) pair, which lets synthetic
closed-form densities exercise the exact code path used on real parses.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from .errors import NumericalError

Array = np.ndarray

LOG_2PI = float(np.log(2.0 * np.pi))


def hessian_from_gradient(
    grad_fn: Callable[[Array], Array], z0: Array, rel_step: float = 1e-4
) -> Array:
    """Central-difference Hessian of f from its gradient, symmetrized."""
    z0 = np.asarray(z0, dtype=np.float64)
    d = z0.size
    hess = np.empty((d, d))
    for j in range(d):
        step = rel_step * max(1.0, abs(z0[j]))
        zp = z0.copy()
        zp[j] += step
        zm = z0.copy()
        zm[j] -= step
        gp = np.asarray(grad_fn(zp), dtype=np.float64)
        gm = np.asarray(grad_fn(zm), dtype=np.float64)
        hess[:, j] = (gp - gm) / (2.0 * step)
    return 0.5 * (hess + hess.T)


@dataclass
class LaplaceTerm:
    log_integral: float
    dim: int
    jitter: float  # 0.0 when -H was already positive-definite
    jittered: bool


def laplace_log_integral(
    f0: float,
    grad_fn: Callable[[Array], Array],
    z0: Array,
    rel_step: float = 1e-4,
    jitter0: float = 1e-6,
    max_jitter: float = 1e6,
) -> LaplaceTerm:
    """log of the Gaussian-curvature integral of exp(f) around a mode z0:
    f(z0) + (d/2) log(2 pi) - 1/2 log det(-H(z0))."""
    z0 = np.asarray(z0, dtype=np.float64)
    d = z0.size
    hess = hessian_from_gradient(grad_fn, z0, rel_step)
    if not np.all(np.isfinite(hess)):
        raise NumericalError("Hessian evaluation produced non-finite entries")
    neg = -hess
    jitter = 0.0
    lam = jitter0
    while True:
        try:
            chol = np.linalg.cholesky(neg + jitter * np.eye(d))
            break
        except np.linalg.LinAlgError:
            jitter = lam
            lam *= 2.0
            if jitter > max_jitter:
                raise NumericalError("negated Hessian cannot be made positive-definite")
    logdet = 2.0 * float(np.log(np.diag(chol)).sum())
    return LaplaceTerm(
        log_integral=float(f0) + 0.5 * d * LOG_2PI - 0.5 * logdet,
        dim=d,
        jitter=jitter,
        jittered=jitter > 0.0,
    )


def logsumexp_values(values) -> float:
    arr = np.asarray(list(values), dtype=np.float64)
    if arr.size == 0:
        raise NumericalError("log-sum-exp of an empty set")
    top = arr.max()
    return float(top + np.log(np.exp(arr - top).sum()))
