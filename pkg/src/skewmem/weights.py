"""Membrane geometry, the annulus step weight, smooth densities and hypothesis checks.

The step weight ``phi`` is constant on the annuli cut out by the membrane
radii. Inner membranes ``l_k`` accumulate at 0 and at ``m0``; outer
membranes ``r_k`` accumulate at ``m0`` and escape to infinity. Only
finitely many are represented: an analytic family is enumerated over
``|k| <= k_max`` and membranes with negligible skew are dropped.
"""

from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np
from scipy import integrate

from .errors import EvaluationError, HypothesisViolation, ValidationError
from .quadrature import shell_rule, sphere_area


# ----------------------------------------------------------------------------
# membranes


@dataclass(frozen=True)
class TruncationNote:
    dropped_inner: int = 0
    dropped_outer: int = 0
    dropped_mass: float = 0.0
    tail_mass: float = 0.0
    k_max: Optional[int] = None

    @property
    def total(self):
        return self.dropped_mass + self.tail_mass


@dataclass(frozen=True)
class MembraneSet:
    """Finite membrane geometry.

    ``inner`` holds pairs ``(l_k, gamma_k)`` where ``gamma_k`` is the weight on
    the annulus just inside ``l_k``; ``gamma_top`` is the weight between the
    last inner radius and ``m0``. ``outer`` holds pairs ``(r_k, w)`` where ``w``
    is the weight just outside ``r_k``; ``gammabar_bottom`` is the weight
    between ``m0`` and the first outer radius.
    """

    m0: float
    inner: tuple = ()
    gamma_top: float = 1.0
    outer: tuple = ()
    gammabar_bottom: float = 1.0
    truncation_note: TruncationNote = field(default_factory=TruncationNote)
    # untruncated family data used by check_h1: (lo, hi, weight) per annulus
    family_annuli: tuple = ()
    origin_limit: Optional[float] = None
    inner_increments: tuple = ()
    outer_increments: tuple = ()

    def __post_init__(self):
        inner = tuple((float(a), float(g)) for a, g in self.inner)
        outer = tuple((float(a), float(g)) for a, g in self.outer)
        object.__setattr__(self, "inner", inner)
        object.__setattr__(self, "outer", outer)
        object.__setattr__(self, "m0", float(self.m0))
        object.__setattr__(self, "gamma_top", float(self.gamma_top))
        object.__setattr__(self, "gammabar_bottom", float(self.gammabar_bottom))
        _validate_geometry(self)

    @property
    def breaks(self):
        """All membrane radii in increasing order, ``m0`` included."""
        return np.array([a for a, _ in self.inner] + [self.m0] + [a for a, _ in self.outer])

    @property
    def levels(self):
        """Annulus weights; ``levels[i]`` lives on ``(breaks[i-1], breaks[i])``."""
        lv = [g for _, g in self.inner] + [self.gamma_top, self.gammabar_bottom]
        lv += [g for _, g in self.outer]
        return np.array(lv)

    @property
    def gamma(self):
        return self.gamma_top

    @property
    def gammabar(self):
        return self.gammabar_bottom

    def scaled(self, c):
        """Copy with every weight multiplied by ``c``."""
        return MembraneSet(
            self.m0,
            tuple((a, c * g) for a, g in self.inner),
            c * self.gamma_top,
            tuple((a, c * g) for a, g in self.outer),
            c * self.gammabar_bottom,
            self.truncation_note,
            tuple((lo, hi, c * g) for lo, hi, g in self.family_annuli),
            None if self.origin_limit is None else c * self.origin_limit,
            tuple(c * x for x in self.inner_increments),
            tuple(c * x for x in self.outer_increments),
        )


def _validate_geometry(ms):
    if not (np.isfinite(ms.m0) and ms.m0 > 0):
        raise ValidationError(f"m0 must be a positive finite radius, got {ms.m0}")
    radii = ms.breaks
    if radii[0] <= 0:
        raise ValidationError("membrane radii must be positive")
    if np.any(np.diff(radii) <= 0):
        bad = int(np.argmin(np.diff(radii)))
        raise ValidationError(
            f"membrane radii not strictly increasing near {radii[bad]!r}, {radii[bad + 1]!r}"
        )
    if any(a >= ms.m0 for a, _ in ms.inner) or any(a <= ms.m0 for a, _ in ms.outer):
        raise ValidationError("inner radii must lie below m0 and outer radii above it")
    lv = ms.levels
    if not np.all(np.isfinite(lv)) or np.any(lv <= 0):
        raise ValidationError(f"weights must be positive and finite, got {lv.tolist()}")


def skew_of(g_left, g_right):
    return (g_right - g_left) / (g_right + g_left)


@dataclass(frozen=True)
class AnalyticFamily:
    """Doubly infinite membrane family indexed by k in Z.

    ``inner_weight(k)`` is the weight on ``(l_{k-1}, l_k)`` and
    ``outer_weight(k)`` the weight on ``(r_{k-1}, r_k)``. The limits
    ``gamma`` (k -> +inf, inner), ``gammabar`` (k -> -inf, outer) and
    ``gamma_origin`` (k -> -inf, inner) default to the family evaluated at
    ``+-k_max``.
    """

    m0: float
    inner_radius: Callable[[int], float]
    inner_weight: Callable[[int], float]
    outer_radius: Callable[[int], float]
    outer_weight: Callable[[int], float]
    k_max: int = 60
    gamma: Optional[float] = None
    gammabar: Optional[float] = None
    gamma_origin: Optional[float] = None


def logistic_radii(m0, base=2.0):
    """Radii ``l_k = m0 / (1 + base**-k)`` and ``r_k = m0 (1 + base**k)``."""
    return (lambda k: m0 / (1.0 + base ** (-k))), (lambda k: m0 * (1.0 + base ** k))


def geometric_weights(base=1.0, amplitude=0.0, ratio=0.5):
    """Weights ``base + amplitude * ratio**|k|``."""
    return lambda k: base + amplitude * ratio ** abs(k)


def build_membranes(spec, truncation_tolerance=0.0, tail_bound=0.05):
    """Build a finite :class:`MembraneSet`.

    Parameters
    ----------
    spec : AnalyticFamily or mapping
        Either an analytic family or a mapping with keys ``m0``, ``inner``,
        ``gamma_top``, ``outer``, ``gammabar_bottom`` (explicit lists).
    truncation_tolerance : float
        Membranes with ``|g_right - g_left| / (g_right + g_left)`` strictly below
        this value are dropped and recorded in the truncation note.
    tail_bound : float
        Summed weight variation allowed over ``k_max < |k| <= 2 k_max``; a
        larger value is read as a divergent variation sum.
    """
    if truncation_tolerance < 0:
        raise ValidationError("truncation_tolerance must be nonnegative")
    if isinstance(spec, AnalyticFamily):
        return _build_from_family(spec, truncation_tolerance, tail_bound)
    return _build_explicit(dict(spec), truncation_tolerance)


def _build_explicit(spec, tol):
    unknown = set(spec) - {"m0", "inner", "gamma_top", "outer", "gammabar_bottom"}
    if unknown:
        raise ValidationError(f"unknown membrane keys: {sorted(unknown)}")
    m0 = float(spec["m0"])
    inner = [(float(a), float(g)) for a, g in spec.get("inner", ())]
    outer = [(float(a), float(g)) for a, g in spec.get("outer", ())]
    gtop = float(spec.get("gamma_top", inner[-1][1] if inner else 1.0))
    gbot = float(spec.get("gammabar_bottom", outer[0][1] if outer else gtop))
    # validate before dropping anything so that errors point at the input
    MembraneSet(m0, inner, gtop, outer, gbot)

    inner_incr = [inner[i + 1][1] - inner[i][1] for i in range(len(inner) - 1)]
    if inner:
        inner_incr.append(gtop - inner[-1][1])
    outer_incr = []
    if outer:
        outer_incr = [outer[0][1] - gbot] + [outer[i + 1][1] - outer[i][1] for i in range(len(outer) - 1)]

    kept_in, dropped_in, mass = [], 0, 0.0
    uppers = [g for _, g in inner[1:]] + [gtop]
    for (a, g), g_up in zip(inner, uppers):
        if abs(skew_of(g, g_up)) >= tol:
            kept_in.append((a, g))
        else:
            dropped_in += 1
            mass += abs(g_up - g)
    kept_out, dropped_out = [], 0
    lowers = [gbot] + [g for _, g in outer[:-1]]
    for (a, g), g_low in zip(outer, lowers):
        if abs(skew_of(g_low, g)) >= tol:
            kept_out.append((a, g))
        else:
            dropped_out += 1
            mass += abs(g - g_low)
    note = TruncationNote(dropped_in, dropped_out, mass, 0.0, None)
    return MembraneSet(
        m0, kept_in, gtop, kept_out, gbot, note,
        inner_increments=tuple(inner_incr), outer_increments=tuple(outer_incr),
    )


def _build_from_family(fam, tol, tail_bound):
    K = int(fam.k_max)
    ks = np.arange(-K, K + 1)
    l = np.array([fam.inner_radius(int(k)) for k in ks], dtype=float)
    g = np.array([fam.inner_weight(int(k)) for k in range(-K, K + 2)], dtype=float)
    r = np.array([fam.outer_radius(int(k)) for k in ks], dtype=float)
    gb = np.array([fam.outer_weight(int(k)) for k in range(-K, K + 2)], dtype=float)
    if np.any(~np.isfinite(g)) or np.any(g <= 0) or np.any(~np.isfinite(gb)) or np.any(gb <= 0):
        raise ValidationError("family weights must be positive and finite")
    gamma = fam.gamma if fam.gamma is not None else float(g[-1])
    gammabar = fam.gammabar if fam.gammabar is not None else float(gb[0])
    origin = fam.gamma_origin if fam.gamma_origin is not None else float(g[0])

    # membrane l_k separates g[k] (inside) and g[k+1] (outside); same for r_k
    ci = skew_of(g[:-1], g[1:])
    co = skew_of(gb[:-1], gb[1:])
    keep_i = np.abs(ci) >= tol
    keep_o = np.abs(co) >= tol
    for name, radii, keep in (("inner", l, keep_i), ("outer", r, keep_o)):
        kept = radii[keep]
        if np.any(~np.isfinite(kept)) or np.any(np.diff(kept) <= 0):
            raise ValidationError(
                f"retained {name} radii are not strictly increasing in floating point; "
                "raise the truncation tolerance or lower k_max"
            )
    inner = [(float(a), float(w)) for a, w, kp in zip(l, g[:-1], keep_i) if kp]
    outer = [(float(a), float(w)) for a, w, kp in zip(r, gb[1:], keep_o) if kp]

    dg = np.abs(np.diff(g))
    dgb = np.abs(np.diff(gb))
    dropped = float(dg[~keep_i].sum() + dgb[~keep_o].sum())
    tail = _family_tail(fam, K)
    if not np.isfinite(tail) or tail > tail_bound:
        raise HypothesisViolation(
            f"weight variation over k_max < |k| <= 2 k_max is {tail:.3g} > {tail_bound:.3g}; "
            "the variation sum does not appear to converge"
        )
    note = TruncationNote(int((~keep_i).sum()), int((~keep_o).sum()), dropped, tail, K)
    annuli = [(0.0, float(l[0]), float(origin))]
    annuli += [(float(a), float(b), float(w)) for a, b, w in zip(l[:-1], l[1:], g[1:-1])]
    return MembraneSet(
        fam.m0, inner, gamma, outer, gammabar, note,
        family_annuli=tuple(annuli), origin_limit=float(origin),
        inner_increments=tuple(float(x) for x in np.diff(g)),
        outer_increments=tuple(float(x) for x, k in zip(np.diff(gb), ks) if k <= 0),
    )


def _family_tail(fam, K):
    """Variation of the summable sequences over K < |k| <= 2K."""
    hi = range(K + 1, 2 * K + 1)
    s = 0.0
    for k in hi:
        s += abs(fam.inner_weight(k + 1) - fam.inner_weight(k))
        s += abs(fam.inner_weight(-k + 1) - fam.inner_weight(-k))
        s += abs(fam.outer_weight(-k + 1) - fam.outer_weight(-k))
    return float(s)


def phi(ms, r):
    """Step weight at radius ``r`` (scalar or array).

    Exactly on a membrane radius the average of the two adjacent annulus
    weights is returned.
    """
    r_arr = np.asarray(r, dtype=float)
    if np.any(r_arr < 0):
        raise ValidationError("radius must be nonnegative")
    br = ms.breaks
    lv = ms.levels
    idx = np.searchsorted(br, r_arr, side="left")
    out = lv[idx]
    on = (idx < len(br)) & (br[np.minimum(idx, len(br) - 1)] == r_arr)
    if np.any(on):
        out = np.where(on, 0.5 * (lv[idx] + lv[np.minimum(idx + 1, len(lv) - 1)]), out)
    return float(out) if np.ndim(out) == 0 else out


@dataclass(frozen=True)
class H1Report:
    sum_inner: float
    sum_outer: float
    tail_bound: float
    delta_r: dict
    passed: bool

    def as_dict(self):
        return {
            "sum_inner": self.sum_inner,
            "sum_outer": self.sum_outer,
            "tail_bound": self.tail_bound,
            "delta_r": {str(k): v for k, v in self.delta_r.items()},
            "pass": self.passed,
        }


def min_phi_on_ball(ms, radius):
    """Infimum of the step weight over the ball of given radius."""
    br = ms.breaks
    lv = ms.levels
    n = int(np.searchsorted(br, radius, side="left")) + 1
    vals = list(lv[:n])
    for lo, hi, w in ms.family_annuli:
        if lo < radius:
            vals.append(w)
    if ms.origin_limit is not None:
        vals.append(ms.origin_limit)
    return float(min(vals))


def check_h1(ms, probe_radii):
    """Summability of the weight increments and local positivity of phi."""
    sum_in = float(np.sum(np.abs(ms.inner_increments)))
    sum_out = float(np.sum(np.abs(ms.outer_increments)))
    tail = ms.truncation_note.tail_mass
    deltas = {float(r): min_phi_on_ball(ms, float(r)) for r in probe_radii}
    ok = all(np.isfinite([sum_in, sum_out, tail])) and all(d > 0 for d in deltas.values())
    return H1Report(sum_in, sum_out, tail, deltas, bool(ok))


# ----------------------------------------------------------------------------
# densities


@dataclass(frozen=True)
class RadialProfile:
    """Radial density ``rho(x) = value(|x|)`` with its first derivative."""

    value: Callable
    deriv: Callable
    singular_at_origin: bool = False


@dataclass(frozen=True)
class DensityModel:
    """Smooth part of the symmetrising density.

    ``rho`` maps an array of shape (..., dim) to (...); ``grad_rho`` maps
    (..., dim) to (..., dim).
    """

    dim: int
    rho: Callable
    grad_rho: Callable
    radial_profile: Optional[RadialProfile] = None
    name: str = "custom"
    params: dict = field(default_factory=dict)
    fd_gradient: bool = False

    def __post_init__(self):
        if int(self.dim) != self.dim or self.dim < 3:
            raise ValidationError(f"dimension must be an integer >= 3, got {self.dim}")

    @property
    def is_radial(self):
        return self.radial_profile is not None


def _radial_density(dim, value, deriv, name, params, singular=False):
    def rho(x):
        x = np.asarray(x, dtype=float)
        return value(np.linalg.norm(x, axis=-1))

    def grad(x):
        x = np.asarray(x, dtype=float)
        r = np.linalg.norm(x, axis=-1)
        with np.errstate(invalid="ignore", divide="ignore"):
            fac = np.where(r > 0, deriv(r) / np.where(r > 0, r, 1.0), 0.0)
        return fac[..., None] * x

    prof = RadialProfile(value, deriv, singular)
    return DensityModel(dim, rho, grad, prof, name, dict(params))


def constant_density(dim=3, c=1.0):
    if c <= 0:
        raise ValidationError("constant density must be positive")
    return _radial_density(
        dim, lambda r: np.full_like(np.asarray(r, dtype=float), c), lambda r: np.zeros_like(np.asarray(r, dtype=float)),
        "constant", {"c": c},
    )


def gaussian_density(dim=3, a=1.0):
    """``exp(-a |x|^2)``."""
    return _radial_density(
        dim, lambda r: np.exp(-a * np.asarray(r) ** 2), lambda r: -2 * a * np.asarray(r) * np.exp(-a * np.asarray(r) ** 2),
        "gaussian", {"a": a},
    )


def power_density(dim=3, b=2.0):
    """``(1 + |x|^2)^(-b/2)``."""
    return _radial_density(
        dim,
        lambda r: (1.0 + np.asarray(r) ** 2) ** (-0.5 * b),
        lambda r: -b * np.asarray(r) * (1.0 + np.asarray(r) ** 2) ** (-0.5 * b - 1.0),
        "power", {"b": b},
    )


def pure_power_density(dim=3, b=0.0):
    """``|x|^b`` with ``-dim < b < dim``."""
    if not -dim < b < dim:
        raise ValidationError(f"pure power exponent must lie in (-{dim}, {dim}), got {b}")
    return _radial_density(
        dim, lambda r: np.asarray(r, dtype=float) ** b, lambda r: b * np.asarray(r, dtype=float) ** (b - 1.0),
        "pure_power", {"b": b}, singular=b < 0 or 0 < b < 1,
    )


def density_from_callable(dim, rho, grad_rho=None, name="custom"):
    """Wrap a user density; without ``grad_rho`` central differences are used and flagged."""
    if grad_rho is not None:
        return DensityModel(dim, rho, grad_rho, None, name)

    def fd_grad(x):
        x = np.asarray(x, dtype=float)
        step = 1e-5 * (1.0 + np.linalg.norm(x, axis=-1))
        out = np.empty_like(x)
        for j in range(x.shape[-1]):
            e = np.zeros(x.shape[-1])
            e[j] = 1.0
            dx = step[..., None] * e
            out[..., j] = (rho(x + dx) - rho(x - dx)) / (2 * step)
        return out

    return DensityModel(dim, rho, fd_grad, None, name, fd_gradient=True)


DENSITIES = {
    "constant": constant_density,
    "gaussian": gaussian_density,
    "power": power_density,
    "pure_power": pure_power_density,
}


def make_density(name, dim=3, **params):
    try:
        factory = DENSITIES[name]
    except KeyError:
        raise ValidationError(f"unknown density {name!r}; choose from {sorted(DENSITIES)}") from None
    return factory(dim, **params)


def drift_ac(dm, x):
    """Absolutely continuous drift ``grad rho / (2 rho)`` at ``x`` (shape (..., dim))."""
    x = np.asarray(x, dtype=float)
    rho = np.asarray(dm.rho(x), dtype=float)
    if np.any(~(rho > 0)):
        bad = np.argwhere(~(np.atleast_1d(rho) > 0))[0]
        where = x if x.ndim == 1 else x.reshape(-1, x.shape[-1])[bad[0]]
        raise EvaluationError("density is not positive", where=np.asarray(where).tolist())
    g = np.asarray(dm.grad_rho(x), dtype=float)
    if not np.all(np.isfinite(g)):
        bad = np.argwhere(~np.isfinite(g.reshape(-1, x.shape[-1])).all(axis=1))[0]
        where = x if x.ndim == 1 else x.reshape(-1, x.shape[-1])[bad[0]]
        raise EvaluationError("density gradient is not finite", where=np.asarray(where).tolist())
    return g / (2.0 * rho[..., None])


def radial_drift_ac(dm, r):
    """``rho'(r) / (2 rho(r))`` for a radial density."""
    prof = dm.radial_profile
    if prof is None:
        raise ValidationError("density has no radial profile")
    r = np.asarray(r, dtype=float)
    return prof.deriv(r) / (2.0 * prof.value(r))


# ----------------------------------------------------------------------------
# combined weight


@dataclass(frozen=True)
class WeightField:
    membranes: MembraneSet
    density: DensityModel

    @property
    def dim(self):
        return self.density.dim

    def psi(self, x):
        """Combined weight ``rho * phi`` at points of shape (..., dim)."""
        x = np.asarray(x, dtype=float)
        return self.density.rho(x) * phi(self.membranes, np.linalg.norm(x, axis=-1))


def psi_mass(wf, lo, hi, density_only=False):
    """Mass of ``psi dx`` (or ``rho dx``) on the shell ``lo < |x| < hi``.

    Radial densities are integrated with adaptive quadrature on each annulus
    segment; other densities use the product rule.
    """
    dim = wf.dim
    ms = wf.membranes
    prof = wf.density.radial_profile
    if prof is None:
        rule = shell_rule(lo, hi, dim, cuts=ms.breaks, n_radial=64, n_sphere=16)
        vals = wf.density.rho(rule.points)
        if not density_only:
            vals = vals * phi(ms, rule.radii)
        return float(np.sum(rule.weights * vals))
    edges = [lo] + [a for a in ms.breaks if lo < a < hi] + [hi]
    total = 0.0
    for a, b in zip(edges[:-1], edges[1:]):
        w = 1.0 if density_only else phi(ms, 0.5 * (a + b))
        val, _ = integrate.quad(
            lambda u: float(prof.value(u)) * u ** (dim - 1), a, b,
            epsabs=0.0, epsrel=1e-12, limit=200,
        )
        total += w * val
    return sphere_area(dim) * total


# ----------------------------------------------------------------------------
# A2 diagnostic


@dataclass(frozen=True)
class BallSampler:
    """Finite family of balls and the per-ball product rule size."""

    centers: np.ndarray
    radii: np.ndarray
    n_radial: int = 32
    n_sphere: int = 12


@dataclass(frozen=True)
class A2Estimate:
    sup_ratio: float
    worst_ball: tuple
    ratios: np.ndarray


def a2_ratio(psi, center, radius, dim, n_radial=32, n_sphere=12, cuts=()):
    """``(avg_B psi)(avg_B 1/psi)`` on one ball by product quadrature.

    ``cuts`` are radii (about the ball center) where the radial panels are split.
    """
    rule = shell_rule(0.0, radius, dim, cuts=cuts, n_radial=n_radial, n_sphere=n_sphere, center=center)
    v = np.asarray(psi(rule.points), dtype=float)
    if np.any(~np.isfinite(v)) or np.any(v <= 0):
        raise HypothesisViolation(f"nonpositive weight sample in ball centered at {np.asarray(center).tolist()}")
    vol = rule.weights.sum()
    return float(np.sum(rule.weights * v) / vol * np.sum(rule.weights / v) / vol)


def a2_estimate(wf, sampler):
    """Largest sampled A2 ratio; a lower bound on the A2 constant, never a proof."""
    psi = wf.psi if isinstance(wf, WeightField) else wf
    centers = np.atleast_2d(np.asarray(sampler.centers, dtype=float))
    radii = np.broadcast_to(np.asarray(sampler.radii, dtype=float), (len(centers),))
    dim = centers.shape[1]
    ratios = np.empty(len(centers))
    for i, (c, R) in enumerate(zip(centers, radii)):
        cuts = ()
        if isinstance(wf, WeightField) and np.linalg.norm(c) == 0:
            cuts = wf.membranes.breaks
        ratios[i] = a2_ratio(psi, c, R, dim, sampler.n_radial, sampler.n_sphere, cuts)
    i = int(np.argmax(ratios))
    return A2Estimate(float(ratios[i]), (tuple(centers[i].tolist()), float(radii[i])), ratios)


def sample_balls(dim, n, max_radius=4.0, seed=0, include_origin=True):
    """Random ball family for :func:`a2_estimate` (log-uniform radii)."""
    rng = np.random.default_rng(seed)
    centers = rng.uniform(-max_radius, max_radius, size=(n, dim))
    radii = np.exp(rng.uniform(np.log(1e-2), np.log(max_radius), size=n))
    if include_origin:
        centers[0] = 0.0
    return BallSampler(centers, radii)
