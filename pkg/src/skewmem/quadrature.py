"""Quadrature rules for balls, spheres and annulus-segmented radial integrals.

Radial integrals are always split at the membrane radii so that each
Gauss-Legendre panel sees a smooth integrand. Spheres use a product rule
(Gauss-Legendre in the polar cosine times a uniform azimuthal grid) in
three dimensions and a fixed-seed Monte Carlo rule in higher dimensions.
"""

from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from scipy.special import gammaln


def sphere_area(dim):
    """Surface area of the unit sphere in ``dim`` dimensions."""
    return float(2.0 * np.exp(0.5 * dim * np.log(np.pi) - gammaln(0.5 * dim)))


def ball_volume(dim, radius=1.0):
    return sphere_area(dim) * radius**dim / dim


@lru_cache(maxsize=64)
def _leggauss(n):
    return np.polynomial.legendre.leggauss(n)


def gauss_legendre(n, a, b):
    """Nodes and weights of the ``n``-point Gauss-Legendre rule on [a, b]."""
    t, w = _leggauss(int(n))
    half = 0.5 * (b - a)
    return a + half * (t + 1.0), half * w


@dataclass(frozen=True)
class SphereRule:
    """Unit directions and weights integrating over the unit sphere."""

    dim: int
    directions: np.ndarray
    weights: np.ndarray
    exact: bool

    def __len__(self):
        return len(self.weights)


@lru_cache(maxsize=32)
def sphere_rule(dim, n, seed=12345):
    """Quadrature rule on the unit sphere S^{dim-1}.

    For ``dim == 3`` this is ``n`` Gauss-Legendre nodes in cos(theta) times
    ``2n`` equispaced azimuths, exact for spherical polynomials of degree
    below ``2n``. For ``dim > 3`` it is ``n**2`` uniform random directions
    from a fixed seed, flagged ``exact=False``.
    """
    if dim == 3:
        ct, wt = _leggauss(n)
        phi = (np.arange(2 * n) + 0.5) * (np.pi / n)
        st = np.sqrt(1.0 - ct**2)
        ct_g, ph_g = np.meshgrid(ct, phi, indexing="ij")
        st_g = np.broadcast_to(st[:, None], ct_g.shape)
        dirs = np.stack(
            [st_g * np.cos(ph_g), st_g * np.sin(ph_g), ct_g], axis=-1
        ).reshape(-1, 3)
        w = np.outer(wt, np.full(2 * n, np.pi / n)).ravel()
        return SphereRule(3, dirs, w, True)
    if dim < 3:
        raise ValueError("dimension must be at least 3")
    rng = np.random.default_rng(seed)
    m = n * n
    g = rng.standard_normal((m, dim))
    dirs = g / np.linalg.norm(g, axis=1, keepdims=True)
    return SphereRule(dim, dirs, np.full(m, sphere_area(dim) / m), False)


def split_interval(lo, hi, cuts):
    """Breakpoints of [lo, hi] refined by every cut strictly inside it."""
    inner = [c for c in sorted(set(float(c) for c in cuts)) if lo < c < hi]
    return [lo, *inner, hi]


@dataclass(frozen=True)
class ShellRule:
    """Product rule over a (possibly degenerate) spherical shell.

    ``points`` has shape (N, dim); ``weights`` already include the Jacobian
    ``r**(dim-1)`` so that ``sum(weights * F(points))`` approximates the
    volume integral of F.
    """

    points: np.ndarray
    weights: np.ndarray
    radii: np.ndarray


def shell_rule(lo, hi, dim, cuts=(), n_radial=64, n_sphere=16, center=None):
    """Product quadrature over {lo < |x - center| < hi}, panels split at ``cuts``."""
    sph = sphere_rule(dim, n_sphere)
    edges = split_interval(lo, hi, cuts)
    rs, ws = [], []
    for a, b in zip(edges[:-1], edges[1:]):
        if b <= a:
            continue
        r, w = gauss_legendre(n_radial, a, b)
        rs.append(r)
        ws.append(w * r ** (dim - 1))
    r = np.concatenate(rs)
    wr = np.concatenate(ws)
    pts = (r[:, None, None] * sph.directions[None, :, :]).reshape(-1, dim)
    if center is not None:
        pts = pts + np.asarray(center, dtype=float)
    w = (wr[:, None] * sph.weights[None, :]).ravel()
    return ShellRule(pts, w, np.repeat(r, len(sph)))


def sphere_points(radius, dim, n_sphere=16, center=None):
    """Points and surface weights on the sphere of given radius."""
    sph = sphere_rule(dim, n_sphere)
    pts = radius * sph.directions
    if center is not None:
        pts = pts + np.asarray(center, dtype=float)
    return pts, sph.weights * radius ** (dim - 1)
