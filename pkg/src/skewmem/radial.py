"""One-dimensional reduction: skew coefficients, radial drift and scale function.

The scale function of the radial diffusion has density
``exp(-int 2 b)`` inside each annulus and jumps by the factor
``(1 - alpha) / alpha`` across a membrane of skewness ``alpha``; with this
normalisation a path started on the membrane leaves a symmetric shell on
the outside with probability exactly ``alpha``.
"""

import csv
import io
from dataclasses import dataclass, field, replace
from fractions import Fraction
from functools import cached_property
from typing import Callable, Optional

import numpy as np
from scipy import integrate

from .errors import EvaluationError, ValidationError
from .weights import MembraneSet, WeightField, radial_drift_ac


@dataclass(frozen=True)
class SkewEntry:
    radius: float
    alpha: float
    coeff: float
    revuz_weight: float
    gamma_left: float
    gamma_right: float


def _entry(radius, g_left, g_right):
    # exact rationals give correctly rounded alpha and coeff, so an exact
    # rescaling of the weights cannot change them
    gl, gr = Fraction(g_left), Fraction(g_right)
    alpha = float(gr / (gr + gl))
    coeff = float((gr - gl) / (gr + gl))
    return SkewEntry(float(radius), alpha, coeff, float(0.5 * (g_left + g_right)), float(g_left), float(g_right))


@dataclass(frozen=True)
class SkewTable:
    entries: tuple = ()

    def __post_init__(self):
        r = [e.radius for e in self.entries]
        if any(b <= a for a, b in zip(r[:-1], r[1:])):
            raise ValidationError("skew table radii must be strictly increasing")
        for e in self.entries:
            if not 0.0 < e.alpha < 1.0:
                raise ValidationError(f"alpha must lie in (0, 1), got {e.alpha} at {e.radius}")

    def __len__(self):
        return len(self.entries)

    def __iter__(self):
        return iter(self.entries)

    @property
    def radii(self):
        return np.array([e.radius for e in self.entries], dtype=float)

    @property
    def alphas(self):
        return np.array([e.alpha for e in self.entries], dtype=float)

    @property
    def coeffs(self):
        return np.array([e.coeff for e in self.entries], dtype=float)

    def active(self):
        """Entries with nonzero skew, i.e. the ones that affect paths."""
        return SkewTable(tuple(e for e in self.entries if e.coeff != 0.0))

    def entry_at(self, radius, tol=1e-12):
        for e in self.entries:
            if abs(e.radius - radius) <= tol * max(1.0, abs(radius)):
                return e
        raise KeyError(radius)

    def with_alpha(self, radius, alpha):
        """Copy with one membrane's skewness replaced (negative controls)."""
        out = []
        for e in self.entries:
            if e.radius == radius:
                e = replace(e, alpha=float(alpha), coeff=float(2 * alpha - 1))
            out.append(e)
        return SkewTable(tuple(out))

    def swapped(self):
        """Copy with every ``alpha`` replaced by ``1 - alpha``."""
        return SkewTable(tuple(replace(e, alpha=1.0 - e.alpha, coeff=-e.coeff) for e in self.entries))

    def to_csv(self, fh=None):
        buf = fh if fh is not None else io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["radius", "alpha", "coeff", "revuz_weight"])
        for e in self.entries:
            w.writerow([repr(e.radius), repr(e.alpha), repr(e.coeff), repr(e.revuz_weight)])
        if fh is None:
            return buf.getvalue()


def skew_coefficients(ms: MembraneSet) -> SkewTable:
    """Skewness of every represented membrane, ``m0`` always included."""
    br = ms.breaks
    lv = ms.levels
    return SkewTable(tuple(_entry(a, lv[i], lv[i + 1]) for i, a in enumerate(br)))


def single_membrane_table(radius, alpha):
    """Skew table with one membrane given directly by its skewness."""
    return SkewTable((_entry(radius, 1.0 - alpha, alpha),))


@dataclass(frozen=True)
class RadialModel:
    """Radial diffusion: drift, membranes and the interval used for boundary values."""

    dim: int
    skew: SkewTable
    drift_radial: Callable
    domain: tuple = (0.0, np.inf)
    bessel: bool = True
    singular_at_origin: bool = True
    label: str = ""
    # drift without the Bessel term, used by the simulator near the origin
    drift_without_bessel: Optional[Callable] = None

    def drift(self, r):
        return self.drift_radial(np.asarray(r, dtype=float))

    def with_domain(self, lo, hi):
        return replace(self, domain=(float(lo), float(hi)))

    @cached_property
    def _scale_nodes(self):
        return _ScaleNodes(self)


def radial_model(wf: WeightField, skew: Optional[SkewTable] = None, *, bessel=True, domain=(0.0, np.inf)):
    """Radial model of a weight field with a radial density.

    The drift is ``(d-1)/(2r) + rho'(r)/(2 rho(r))``; ``bessel=False``
    drops the first term (negative control only).
    """
    dm = wf.density
    if dm.radial_profile is None:
        raise ValidationError("radial reduction requires a radially symmetric density")
    if skew is None:
        skew = skew_coefficients(wf.membranes)
    d = dm.dim

    if bessel:
        def drift(r):
            return (d - 1) / (2.0 * r) + radial_drift_ac(dm, r)
    else:
        def drift(r):
            return radial_drift_ac(dm, r)

    singular = bessel or dm.radial_profile.singular_at_origin
    return RadialModel(
        d, skew, drift, tuple(domain), bessel, singular, dm.name,
        lambda r: radial_drift_ac(dm, np.asarray(r, dtype=float)),
    )


def driftless_model(skew: SkewTable, domain=(0.0, 1.0), dim=3):
    """Radial model with zero drift, used for oracle checks and the 1D harness."""
    return RadialModel(dim, skew, lambda r: np.zeros_like(np.asarray(r, dtype=float)), tuple(domain), False, False, "driftless")


class _ScaleNodes:
    """Scale-function values at the segment ends of the model domain (memoised)."""

    def __init__(self, rm):
        lo, hi = rm.domain
        if not (lo >= 0 and hi > lo):
            raise EvaluationError("radial domain must satisfy 0 <= lo < hi", where=rm.domain)
        if lo == 0 and rm.singular_at_origin:
            raise EvaluationError("radial domain touches the singular point 0", where=rm.domain)
        self.rm = rm
        self.lo = lo
        self.hi = hi
        inside = [e for e in rm.skew.entries if lo < e.radius < hi]
        self.cuts = np.array([e.radius for e in inside])
        self.jumps = np.array([(1.0 - e.alpha) / e.alpha for e in inside])
        self._starts = None

    def _log_slope_integral(self, a, b):
        if b == a:
            return 0.0
        f = lambda u: 2.0 * float(self.rm.drift(u))
        val, _ = integrate.quad(f, a, b, epsabs=1e-12, epsrel=1e-12, limit=200)
        if not np.isfinite(val):
            raise EvaluationError("drift integral is not finite", where=(a, b))
        return val

    def _segment(self, a, b, log_slope_a):
        """Integral of the scale density over [a, b] given its log at a."""
        if b == a:
            return 0.0

        def dens(u):
            return np.exp(log_slope_a - self._log_slope_integral(a, u))

        val, _ = integrate.quad(dens, a, b, epsabs=1e-13, epsrel=1e-12, limit=200)
        return val

    def starts(self):
        """(segment start, log scale density at start, scale value at start)."""
        if self._starts is None:
            edges = [self.lo, *self.cuts.tolist()]
            out = []
            logs, s = 0.0, 0.0
            for i, a in enumerate(edges):
                if i > 0:
                    # crossing the membrane multiplies the density by (1-alpha)/alpha
                    logs = logs_end + np.log(self.jumps[i - 1])
                    s = s_end
                out.append((a, logs, s))
                b = edges[i + 1] if i + 1 < len(edges) else None
                if b is not None:
                    logs_end = logs - self._log_slope_integral(a, b)
                    s_end = s + self._segment(a, b, logs)
            self._starts = out
        return self._starts

    def value(self, r):
        if not (self.lo <= r <= self.hi):
            raise EvaluationError("radius outside the radial domain", where=r)
        st = self.starts()
        i = int(np.searchsorted(self.cuts, r, side="right"))
        a, logs, s = st[i]
        return s + self._segment(a, r, logs)


def scale_function(rm: RadialModel, r):
    """Scale function normalised by ``s(domain[0]) = 0`` (scalar or array)."""
    nodes = rm._scale_nodes
    if np.ndim(r) == 0:
        return nodes.value(float(r))
    return np.array([nodes.value(float(x)) for x in np.ravel(r)]).reshape(np.shape(r))


def exit_probability(rm: RadialModel, r0, a, b):
    """Probability that the radial diffusion from ``r0`` leaves (a, b) through b."""
    if not a <= r0 <= b or a == b:
        raise ValidationError(f"need a < r0 < b, got a={a}, r0={r0}, b={b}")
    lo, hi = rm.domain
    if a < lo or b > hi:
        raise ValidationError(f"[{a}, {b}] is not inside the model domain {rm.domain}")
    sa, s0, sb = scale_function(rm, a), scale_function(rm, r0), scale_function(rm, b)
    return (s0 - sa) / (sb - sa)
