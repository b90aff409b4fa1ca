"""Independent numerical oracles shared by the test suite.

Everything here is deliberately simple and slow: brute-force enumeration,
finite differences, and grid quadrature. The oracles never call the code
paths they check.
"""

from __future__ import annotations

from typing import Callable

import numpy as np


def fd_gradient(f: Callable[[np.ndarray], float], x: np.ndarray, step: float = 1e-5) -> np.ndarray:
    """Central finite differences of a scalar function of an array."""
    x = np.array(x, dtype=np.float64)
    grad = np.zeros_like(x)
    flat = x.ravel()
    gflat = grad.ravel()
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + step
        fp = f(x)
        flat[i] = orig - step
        fm = f(x)
        flat[i] = orig
        gflat[i] = (fp - fm) / (2.0 * step)
    return grad


def rel_err(a: np.ndarray, b: np.ndarray) -> float:
    """Max-norm relative error of ``a`` against reference ``b``."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    denom = max(float(np.max(np.abs(b))) if b.size else 0.0, 1e-8)
    return float(np.max(np.abs(a - b))) / denom if a.size else 0.0


def grid_quadrature_2d(
    logpdf: Callable[[np.ndarray], np.ndarray],
    center: np.ndarray,
    half_width: float,
    n: int = 400,
) -> float:
    """Integrate exp(logpdf) over a square grid around ``center``."""
    xs = np.linspace(center[0] - half_width, center[0] + half_width, n)
    ys = np.linspace(center[1] - half_width, center[1] + half_width, n)
    gx, gy = np.meshgrid(xs, ys, indexing="ij")
    pts = np.stack([gx.ravel(), gy.ravel()], axis=1)
    vals = np.exp(logpdf(pts))
    dx = xs[1] - xs[0]
    dy = ys[1] - ys[0]
    return float(vals.sum() * dx * dy)


def quadrature_1d(
    logpdf: Callable[[np.ndarray], np.ndarray], lo: float, hi: float, n: int = 20001
) -> float:
    xs = np.linspace(lo, hi, n)
    vals = np.exp(logpdf(xs))
    return float(np.trapezoid(vals, xs))


def pixel_degree_graph(skeleton: np.ndarray):
    """Brute-force endpoint/junction analysis of a 1-px skeleton image.

    Returns (endpoint count, junction-cluster count, cycle count) computed
    directly from pixel degrees and union-find over 8-connectivity, with
    junction pixels within Chebyshev distance 2 merged into one cluster.
    """
    pts = np.argwhere(skeleton > 0)
    coords = {tuple(p) for p in pts}

    def nbrs(p):
        """8-neighbors under reduced adjacency: a diagonal link is dropped
        when either shared orthogonal cell is itself a skeleton pixel."""
        r, c = p
        out = []
        for dr in (-1, 0, 1):
            for dc in (-1, 0, 1):
                if dr == dc == 0:
                    continue
                q = (r + dr, c + dc)
                if q not in coords:
                    continue
                if dr != 0 and dc != 0:
                    if (r, c + dc) in coords or (r + dr, c) in coords:
                        continue
                out.append(q)
        return out

    degree = {p: len(nbrs(p)) for p in coords}
    endpoints = [p for p, d in degree.items() if d == 1]
    junction_px = [p for p, d in degree.items() if d >= 3]

    # cluster junction pixels within Chebyshev distance 2
    parent = {p: p for p in junction_px}

    def find(p):
        while parent[p] != p:
            parent[p] = parent[parent[p]]
            p = parent[p]
        return p

    for i, p in enumerate(junction_px):
        for q in junction_px[i + 1 :]:
            if max(abs(p[0] - q[0]), abs(p[1] - q[1])) <= 2:
                parent[find(p)] = find(q)
    junction_clusters = {find(p) for p in junction_px}

    # cycles: E - V + C for each connected component of the whole skeleton
    comp = {p: p for p in coords}

    def cfind(p):
        while comp[p] != p:
            comp[p] = comp[comp[p]]
            p = comp[p]
        return p

    edges = 0
    for p in coords:
        for q in nbrs(p):
            if q > p:
                edges += 1
                ra, rb = cfind(p), cfind(q)
                if ra != rb:
                    comp[ra] = rb
    n_comp = len({cfind(p) for p in coords})
    cycles = edges - len(coords) + n_comp
    return len(endpoints), len(junction_clusters), cycles
