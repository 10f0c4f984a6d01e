"""Deterministic checks of the analytic identities behind the weighted form.

All volume integrals use the product rule of :mod:`skewmem.quadrature` on
balls split at the membrane radii, so every radial panel sees a smooth
integrand. Errors are estimated by repeating a computation with half the
radial nodes.
"""

from dataclasses import asdict, dataclass, field
from typing import Callable, Optional

import numpy as np
from scipy import integrate

from .errors import EvaluationError, ValidationError
from .quadrature import shell_rule, sphere_points
from .radial import skew_coefficients
from .weights import WeightField, min_phi_on_ball, phi, psi_mass

# ----------------------------------------------------------------------------
# test functions


@dataclass(frozen=True)
class TestFunction:
    """Smooth function with analytic gradient and Laplacian.

    ``support_radius`` bounds the support (``inf`` for functions that are
    not compactly supported); ``cuts`` are radii where the function is
    smooth but not analytic and radial panels should be split.
    """

    __test__ = False

    name: str
    value: Callable
    grad: Callable
    laplacian: Callable
    support_radius: float = np.inf
    cuts: tuple = ()
    params: dict = field(default_factory=dict)

    def __call__(self, x):
        return self.value(x)


@dataclass(frozen=True)
class TestFunctionPair:
    __test__ = False

    f: TestFunction
    g: TestFunction

    @property
    def support_radius(self):
        return min(self.f.support_radius, self.g.support_radius)


def _radial(name, prof, d1, d2, support, cuts, params):
    """Lift a radial profile F(r) with F', F'' to a function on R^d."""

    def value(x):
        x = np.asarray(x, dtype=float)
        return prof(np.linalg.norm(x, axis=-1))

    def grad(x):
        x = np.asarray(x, dtype=float)
        r = np.linalg.norm(x, axis=-1)
        safe = np.where(r > 0, r, 1.0)
        fac = np.where(r > 0, d1(r) / safe, 0.0)
        return fac[..., None] * x

    def laplacian(x):
        x = np.asarray(x, dtype=float)
        d = x.shape[-1]
        r = np.linalg.norm(x, axis=-1)
        safe = np.where(r > 0, r, 1.0)
        # at the origin F'(r)/r -> F''(0)
        return np.where(r > 0, d2(r) + (d - 1) * d1(r) / safe, d * d2(r))

    return TestFunction(name, value, grad, laplacian, float(support), tuple(cuts), dict(params))


def _bump_1d(t):
    """``exp(1 - 1/(1 - t^2))`` on |t| < 1 and its first two derivatives."""
    t = np.asarray(t, dtype=float)
    inside = np.abs(t) < 1
    s = np.where(inside, 1.0 - t**2, 1.0)
    b = np.where(inside, np.exp(1.0 - 1.0 / s), 0.0)
    b1 = b * (-2.0 * t / s**2)
    b2 = b * (4.0 * t**2 / s**4 - 2.0 / s**2 - 8.0 * t**2 / s**3)
    return b, np.where(inside, b1, 0.0), np.where(inside, b2, 0.0)


def radial_bump(center=0.0, width=1.0, amplitude=1.0):
    """Bump of ``|x|`` supported on ``|r - center| < width``, peak ``amplitude`` at ``center``."""
    if width <= 0:
        raise ValidationError("bump width must be positive")
    if center != 0 and center - width < 0:
        raise ValidationError("an off-center bump must satisfy center >= width")
    c, w, A = float(center), float(width), float(amplitude)
    prof = lambda r: A * _bump_1d((r - c) / w)[0]
    d1 = lambda r: A * _bump_1d((r - c) / w)[1] / w
    d2 = lambda r: A * _bump_1d((r - c) / w)[2] / w**2
    cuts = [x for x in (c - w, c + w) if x > 0]
    return _radial("radial_bump", prof, d1, d2, c + w, cuts, {"center": c, "width": w, "amplitude": A})


def _smooth_step(u):
    """Equal to 1 for u <= 0, 0 for u >= 1, C-infinity in between; with derivatives."""
    u = np.asarray(u, dtype=float)

    def E(t):
        tt = np.where(t > 0, t, 1.0)
        e = np.where(t > 0, np.exp(-1.0 / tt), 0.0)
        e1 = np.where(t > 0, e / tt**2, 0.0)
        e2 = np.where(t > 0, e * (1.0 / tt**4 - 2.0 / tt**3), 0.0)
        return e, e1, e2

    a, a1, a2 = E(1.0 - u)
    a1, a2 = -a1, a2
    b, b1, b2 = E(u)
    D = a + b
    D1 = a1 + b1
    N1 = a1 * b - a * b1
    s = a / D
    s1 = N1 / D**2
    N1p = a2 * b - a * b2
    s2 = (N1p * D - 2.0 * N1 * D1) / D**3
    return s, s1, s2


def plateau(inner=0.5, outer=1.0, level=1.0):
    """Radial function equal to ``level`` on ``|x| <= inner`` and 0 beyond ``outer``."""
    if not 0 <= inner < outer:
        raise ValidationError("plateau needs 0 <= inner < outer")
    lo, hi, L = float(inner), float(outer), float(level)
    w = hi - lo
    prof = lambda r: L * _smooth_step((r - lo) / w)[0]
    d1 = lambda r: L * _smooth_step((r - lo) / w)[1] / w
    d2 = lambda r: L * _smooth_step((r - lo) / w)[2] / w**2
    return _radial("plateau", prof, d1, d2, hi, [c for c in (lo, hi) if c > 0], {"inner": lo, "outer": hi, "level": L})


def constant_function(c=1.0):
    return _radial(
        "constant", lambda r: np.full_like(r, c), lambda r: np.zeros_like(r), lambda r: np.zeros_like(r),
        np.inf, (), {"c": float(c)},
    )


def affine_bump(offset=1.0, slope=(1.0, 0.0, 0.0), center=0.0, width=1.0):
    """``(offset + slope . x) * radial_bump(center, width)``, a non-radial test function."""
    v = np.asarray(slope, dtype=float)
    bump = radial_bump(center, width)

    def lin(x):
        return offset + np.asarray(x, dtype=float) @ v

    def value(x):
        return lin(x) * bump.value(x)

    def grad(x):
        return v * bump.value(x)[..., None] + lin(x)[..., None] * bump.grad(x)

    def laplacian(x):
        return 2.0 * (bump.grad(x) @ v) + lin(x) * bump.laplacian(x)

    return TestFunction(
        "affine_bump", value, grad, laplacian, bump.support_radius, bump.cuts,
        {"offset": float(offset), "slope": v.tolist(), "center": float(center), "width": float(width)},
    )


CATALOG = {
    "radial_bump": radial_bump,
    "plateau": plateau,
    "constant": constant_function,
    "affine_bump": affine_bump,
}


def make_test_function(kind, **params):
    try:
        factory = CATALOG[kind]
    except KeyError:
        raise ValidationError(f"unknown test function {kind!r}; choose from {sorted(CATALOG)}") from None
    return factory(**params)


def vanishes_outside(tf: TestFunction, dim=3, n=200, seed=0, margin=1e-9):
    """Check that ``tf`` and its gradient are zero at random points past the support."""
    if not np.isfinite(tf.support_radius):
        return False
    rng = np.random.default_rng(seed)
    u = rng.standard_normal((n, dim))
    u /= np.linalg.norm(u, axis=1, keepdims=True)
    r = tf.support_radius * (1.0 + margin) + rng.exponential(tf.support_radius, size=n)
    x = u * r[:, None]
    return bool(np.all(tf.value(x) == 0) and np.all(tf.grad(x) == 0))


# ----------------------------------------------------------------------------
# quadrature


@dataclass(frozen=True)
class QuadratureConfig:
    """Node counts: radial Gauss points per annulus segment and sphere rule order.

    ``mc_samples`` is the sphere sample count used in dimensions above 3,
    where the sphere rule is a fixed-seed Monte Carlo rule with
    ``n_sphere**2`` directions unless ``mc_samples`` is given.
    """

    n_radial: int = 64
    n_sphere: int = 16
    mc_samples: Optional[int] = None
    max_rel_error: float = 1e-3

    def __post_init__(self):
        if self.n_radial < 4 or self.n_sphere < 2:
            raise ValidationError("need at least 4 radial nodes and 2 sphere nodes")

    def sphere_order(self, dim):
        if dim > 3 and self.mc_samples:
            return max(2, int(np.ceil(np.sqrt(self.mc_samples))))
        return self.n_sphere

    def coarse(self):
        return QuadratureConfig(max(4, self.n_radial // 2), self.n_sphere, self.mc_samples, self.max_rel_error)


@dataclass(frozen=True)
class Estimate:
    value: float
    error: float


def _ball_integral(integrand, radius, wf, qc, extra_cuts=()):
    if not np.isfinite(radius):
        raise ValidationError("integration needs a bounded support")
    dim = wf.dim
    cuts = list(wf.membranes.breaks) + list(extra_cuts)
    rule = shell_rule(0.0, radius, dim, cuts=cuts, n_radial=qc.n_radial, n_sphere=qc.sphere_order(dim))
    vals = np.asarray(integrand(rule.points, rule.radii), dtype=float)
    if not np.all(np.isfinite(vals)):
        raise EvaluationError("integrand is not finite at a quadrature node", where=radius)
    # fixed summation order keeps reported values reproducible
    return float(np.sum(rule.weights * vals))


def _estimate(integrand, radius, wf, qc, extra_cuts=()):
    fine = _ball_integral(integrand, radius, wf, qc, extra_cuts)
    coarse = _ball_integral(integrand, radius, wf, qc.coarse(), extra_cuts)
    err = abs(fine - coarse)
    scale = max(abs(fine), abs(coarse))
    if err > qc.max_rel_error * scale and err > 1e-12:
        raise EvaluationError(
            f"quadrature did not converge (fine {fine:.6g}, coarse {coarse:.6g}); "
            "the integrand may have a non-integrable singularity",
            where=radius,
        )
    return Estimate(fine, err)


def _psi_at(wf, x, r):
    return wf.density.rho(x) * phi(wf.membranes, r)


def dirichlet_form(f, g, wf: WeightField, qc: QuadratureConfig = QuadratureConfig()):
    """``1/2 * integral of grad f . grad g * rho * phi`` with an error estimate."""
    radius = min(f.support_radius, g.support_radius)

    def integrand(x, r):
        return 0.5 * np.sum(f.grad(x) * g.grad(x), axis=-1) * _psi_at(wf, x, r)

    return _estimate(integrand, radius, wf, qc, f.cuts + g.cuts)


def surface_flux(f, g, wf, radius, qc=QuadratureConfig()):
    """``integral over |x| = radius of (grad f . nu) g rho dsigma``."""
    dim = wf.dim
    pts, w = sphere_points(radius, dim, qc.sphere_order(dim))
    nu = pts / radius
    vals = np.sum(f.grad(pts) * nu, axis=-1) * g.value(pts) * wf.density.rho(pts)
    return float(np.sum(w * vals))


@dataclass(frozen=True)
class IBPReport:
    lhs: float
    rhs: float
    volume_term: float
    surface_terms: dict
    abs_residual: float
    rel_residual: float
    quadrature_error: float
    truncation_budget: float
    n_radial: int

    def as_dict(self):
        out = asdict(self)
        out["surface_terms"] = {repr(k): v for k, v in self.surface_terms.items()}
        return out


def ibp_residual(f, g, wf: WeightField, qc: QuadratureConfig = QuadratureConfig()):
    """Compare ``-E(f, g)`` with the volume term plus the membrane surface terms.

    The surface term of a membrane at ``a`` is
    ``(gamma_right - gamma_left) / 2 * integral over |x| = a of (grad f . nu) g rho``.
    The relative residual divides by ``max(|lhs|, |rhs|)``.
    """
    radius = min(f.support_radius, g.support_radius)
    form = dirichlet_form(f, g, wf, qc)
    dm = wf.density

    def integrand(x, r):
        rho = dm.rho(x)
        drift = np.sum(f.grad(x) * dm.grad_rho(x), axis=-1) / (2.0 * rho)
        return (0.5 * f.laplacian(x) + drift) * g.value(x) * rho * phi(wf.membranes, r)

    vol = _estimate(integrand, radius, wf, qc, f.cuts + g.cuts)
    surf = {}
    for e in skew_coefficients(wf.membranes):
        if e.radius < radius:
            surf[e.radius] = 0.5 * (e.gamma_right - e.gamma_left) * surface_flux(f, g, wf, e.radius, qc)
    lhs = -form.value
    rhs = vol.value + sum(surf.values())
    res = abs(lhs - rhs)
    scale = max(abs(lhs), abs(rhs))
    rel = res / scale if scale > 0 else 0.0

    budget = 0.0
    note = wf.membranes.truncation_note
    if note.total > 0:
        probe = np.linspace(0.0, radius, 65)[1:-1]
        worst = max(abs(surface_flux(f, g, wf, float(a), qc)) for a in probe)
        budget = 0.5 * note.total * worst
    return IBPReport(lhs, rhs, vol.value, surf, res, rel, form.error + vol.error, budget, qc.n_radial)


def ibp_refinement(f, g, wf, nodes=(16, 32, 64), n_sphere=16):
    """Relative residuals for increasing radial node counts."""
    return [ibp_residual(f, g, wf, QuadratureConfig(n, n_sphere, max_rel_error=np.inf)).rel_residual for n in nodes]


# ----------------------------------------------------------------------------
# trace inequality


@dataclass(frozen=True)
class TraceReport:
    lhs: float
    rhs: float
    passed: bool
    constant: float
    constant_kind: str
    rhs_proof: float
    proof_constant: float
    proof_constant_holds: bool
    delta: float
    density_volume: float
    grad_sqrt_rho_norm: float
    energy: float

    @property
    def ratio(self):
        return self.lhs / self.rhs if self.rhs > 0 else (0.0 if self.lhs == 0 else np.inf)

    def as_dict(self):
        out = asdict(self)
        out["ratio"] = self.ratio
        out["pass"] = out.pop("passed")
        return out


CONSTANTS = ("divergence", "proof")


def trace_inequality_check(f, l, wf: WeightField, qc: QuadratureConfig = QuadratureConfig(), constant="divergence"):
    """Bound the weighted boundary mass of ``f`` on ``|x| = l`` by its weighted H1 norm.

    ``lhs = integral over |x| = l of |f| rho`` and
    ``rhs = C(l) * (integral over B_l of (|grad f|^2 + f^2) rho phi)^(1/2)``.
    Two constants are available, with ``delta = inf phi`` on the ball,
    ``V = rho dx(B_l)`` and ``G = ||grad sqrt(rho)||`` in L2(B_l):

    * ``"proof"``: ``sqrt(8 / delta) * (V^(1/2) + G)``;
    * ``"divergence"``: ``delta^(-1/2) * sqrt(V + (2 G + (d / l) V^(1/2))^2)``,
      from the divergence theorem applied to ``|f| rho x / l``.

    The report always carries both; ``passed`` uses the selected one.
    """
    if constant not in CONSTANTS:
        raise ValidationError(f"constant must be one of {CONSTANTS}")
    if not l > 0:
        raise ValidationError("trace radius must be positive")
    dim = wf.dim
    dm = wf.density
    pts, w = sphere_points(l, dim, qc.sphere_order(dim))
    lhs = float(np.sum(w * np.abs(f.value(pts)) * dm.rho(pts)))

    def energy_int(x, r):
        gf = f.grad(x)
        return (np.sum(gf * gf, axis=-1) + f.value(x) ** 2) * _psi_at(wf, x, r)

    def grad_xi_int(x, r):
        gr = dm.grad_rho(x)
        return np.sum(gr * gr, axis=-1) / (4.0 * dm.rho(x))

    energy = _estimate(energy_int, l, wf, qc, f.cuts).value
    vol = psi_mass(wf, 0.0, l, density_only=True)
    gxi = float(np.sqrt(_estimate(grad_xi_int, l, wf, qc).value))
    delta = min_phi_on_ball(wf.membranes, l)

    c_proof = np.sqrt(8.0 / delta) * (np.sqrt(vol) + gxi)
    c_div = np.sqrt((vol + (2.0 * gxi + dim / l * np.sqrt(vol)) ** 2) / delta)
    root = np.sqrt(max(energy, 0.0))
    rhs_proof = float(c_proof * root)
    c = c_div if constant == "divergence" else c_proof
    rhs = float(c * root)
    # tolerate rounding when both sides vanish or coincide
    tol = 1e-12 * max(1.0, abs(rhs))
    return TraceReport(
        lhs, rhs, bool(lhs <= rhs + tol), float(c), constant, rhs_proof, float(c_proof),
        bool(lhs <= rhs_proof + 1e-12 * max(1.0, rhs_proof)), float(delta), float(vol), gxi, float(energy),
    )


# ----------------------------------------------------------------------------
# volume growth


@dataclass(frozen=True)
class GrowthReport:
    radii: np.ndarray
    volumes: np.ndarray
    exponent: float
    conservative_diag: str
    recurrent_diag: str
    fit_window: tuple
    recurrence_partial_integral: float

    @property
    def recurrent(self):
        return self.recurrent_diag == "PASS-heuristic"

    @property
    def conservative(self):
        return self.conservative_diag == "PASS-heuristic"

    def as_dict(self):
        return {
            "radii": self.radii.tolist(),
            "volumes": self.volumes.tolist(),
            "fitted_exponent": self.exponent,
            "conservative_diag": self.conservative_diag,
            "recurrent_diag": self.recurrent_diag,
            "fit_window": list(self.fit_window),
            "recurrence_partial_integral": self.recurrence_partial_integral,
        }


def growth_criteria(wf: WeightField, r_grid=None, fit_fraction=0.5):
    """Volumes ``psi dx(B_r)`` on a grid and heuristic growth diagnostics.

    The exponent is the least-squares slope of ``log V`` against ``log r``
    over the last ``fit_fraction`` of the grid. Conservativeness is
    reported as a heuristic pass whenever the exponent is finite
    (polynomial growth); recurrence as a heuristic pass iff the exponent is
    at most 2, where ``integral of r / V(r)`` diverges.
    """
    r = np.geomspace(1.0, 1e4, 41) if r_grid is None else np.asarray(r_grid, dtype=float)
    if r.ndim != 1 or len(r) < 3 or np.any(np.diff(r) <= 0) or r[0] <= 0:
        raise ValidationError("r_grid must be an increasing positive grid with at least 3 points")
    vols = np.empty(len(r))
    acc = psi_mass(wf, 0.0, float(r[0]))
    vols[0] = acc
    for i in range(1, len(r)):
        acc += psi_mass(wf, float(r[i - 1]), float(r[i]))
        vols[i] = acc
    if not np.all(np.isfinite(vols)) or np.any(vols <= 0):
        raise EvaluationError("volume quadrature failed", where=float(r[np.argmin(np.isfinite(vols))]))
    k = max(2, int(np.ceil(fit_fraction * len(r))))
    lr, lv = np.log(r[-k:]), np.log(vols[-k:])
    slope = float(np.polyfit(lr, lv, 1)[0])
    cons = "PASS-heuristic" if np.isfinite(slope) else "FAIL"
    rec = "PASS-heuristic" if slope <= 2.0 else "FAIL"
    partial = float(integrate.trapezoid(r / vols, r))
    return GrowthReport(r, vols, slope, cons, rec, (float(r[-k]), float(r[-1])), partial)
