"""Product quadrature on balls in spherical coordinates.

A ball integral ``int_{|z| < R} f(z) dz`` is written as
``int_0^R s^(d-1) int_{S^(d-1)} f(s w) dw ds``.  The sphere is parametrized by
``t = cos(polar angle)`` measured from a chosen axis, so an oscillation
``exp(i s |r| t)`` along that axis is resolved by the rule in ``t`` alone.
"""

from __future__ import annotations

from functools import lru_cache

import numpy as np
from scipy import special


@lru_cache(maxsize=256)
def gauss_legendre(n: int) -> tuple[np.ndarray, np.ndarray]:
    x, w = np.polynomial.legendre.leggauss(n)
    x.setflags(write=False)
    w.setflags(write=False)
    return x, w


@lru_cache(maxsize=64)
def _gegenbauer(n: int, alpha: float) -> tuple[np.ndarray, np.ndarray]:
    x, w = special.roots_gegenbauer(n, alpha)
    return x, w


@lru_cache(maxsize=64)
def sphere_rule(d: int, n_t: int, n_phi: int) -> tuple[np.ndarray, np.ndarray]:
    """Nodes on S^(d-1) (first coordinate is ``t``) and weights summing to its area."""
    if d == 1:
        return np.array([[1.0], [-1.0]]), np.array([1.0, 1.0])
    if d == 2:
        phi = 2 * np.pi * (np.arange(n_phi) + 0.5) / n_phi
        pts = np.stack([np.cos(phi), np.sin(phi)], axis=1)
        return pts, np.full(n_phi, 2 * np.pi / n_phi)
    # weight (1 - t^2)^((d-3)/2) is Gauss-Legendre for d = 3, Gegenbauer otherwise
    if d == 3:
        t, wt = gauss_legendre(n_t)
    else:
        t, wt = _gegenbauer(n_t, (d - 2) / 2)
    sub_pts, sub_w = sphere_rule(d - 1, n_t, n_phi)
    radius = np.sqrt(1 - t**2)
    pts = np.concatenate(
        [np.repeat(t, len(sub_w))[:, None], (radius[:, None, None] * sub_pts[None]).reshape(-1, d - 1)],
        axis=1,
    )
    weights = (wt[:, None] * sub_w[None]).reshape(-1)
    return pts, weights


def panel_rule(breaks: np.ndarray, orders: list[int]) -> tuple[np.ndarray, np.ndarray]:
    """Composite Gauss-Legendre rule on consecutive panels ``[breaks[i], breaks[i+1]]``."""
    nodes, weights = [], []
    for (a, b), n in zip(zip(breaks[:-1], breaks[1:]), orders):
        x, w = gauss_legendre(n)
        nodes.append(0.5 * (b - a) * x + 0.5 * (a + b))
        weights.append(0.5 * (b - a) * w)
    return np.concatenate(nodes), np.concatenate(weights)


def dyadic_breaks(outer: float, inner: float, depth: int, extra: tuple[float, ...] = ()) -> np.ndarray:
    """Breakpoints ``0, inner/2^depth, ..., inner/2, inner`` followed by ``extra`` and ``outer``."""
    pts = [0.0] + [inner / 2**i for i in range(depth, 0, -1)] + [inner]
    pts += [e for e in extra if inner < e < outer]
    if outer > inner:
        pts.append(outer)
    return np.array(pts)


def frame(axis: np.ndarray) -> np.ndarray:
    """Orthogonal matrix whose first column is ``axis`` (any unit vector if zero)."""
    axis = np.asarray(axis, dtype=float)
    d = len(axis)
    norm = np.linalg.norm(axis)
    if norm == 0:
        return np.eye(d)
    u = axis / norm
    # Householder reflection sending e_1 to u
    e1 = np.zeros(d)
    e1[0] = 1.0
    v = e1 - u
    nv = np.linalg.norm(v)
    if nv < 1e-15:
        return np.eye(d)
    v /= nv
    return np.eye(d) - 2 * np.outer(v, v)
