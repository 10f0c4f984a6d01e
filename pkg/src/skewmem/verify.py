"""Statistical tests that compare simulated paths with analytic targets.

Each test returns a :class:`TestReport` whose pass flag is recomputed from
its own fields, so a serialized report can be checked without rerunning.
"""

import json
from dataclasses import asdict, dataclass, field, replace
from typing import Optional

import numpy as np
from scipy import stats

from .analysis import growth_criteria
from .errors import BandwidthError, ConfigError, HypothesisViolation, ValidationError
from .radial import RadialModel, SkewTable, exit_probability, radial_model
from .simulate import SimConfig, first_exit_radial, simulate_full, simulate_radial
from .weights import WeightField, psi_mass

CRITERIA = ("se", "pvalue", "rel")


@dataclass
class TestReport:
    """Outcome of one statistical test.

    ``criterion`` selects the pass rule: ``"se"`` passes iff
    ``|estimate - target| <= k * stderr``, ``"pvalue"`` iff
    ``p_value >= threshold`` and ``"rel"`` iff
    ``|estimate - target| <= rel_tol * |target|``.
    """

    __test__ = False

    name: str
    estimate: float
    target: float
    n: int
    criterion: str = "se"
    stderr: Optional[float] = None
    p_value: Optional[float] = None
    k: float = 3.0
    threshold: float = 0.01
    rel_tol: Optional[float] = None
    config: dict = field(default_factory=dict)
    details: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.criterion not in CRITERIA:
            raise ValidationError(f"criterion must be one of {CRITERIA}")

    @property
    def passed(self):
        if self.criterion == "se":
            return bool(abs(self.estimate - self.target) <= self.k * self.stderr)
        if self.criterion == "pvalue":
            return bool(self.p_value >= self.threshold)
        return bool(abs(self.estimate - self.target) <= self.rel_tol * abs(self.target))

    def as_dict(self):
        out = asdict(self)
        out["pass"] = self.passed
        return out

    def to_json(self):
        return json.dumps(_jsonable(self.as_dict()), sort_keys=True)

    def row(self):
        spread = f"se={self.stderr:.3g}" if self.stderr is not None else ""
        if self.p_value is not None:
            spread = (spread + " " if spread else "") + f"p={self.p_value:.3g}"
        return f"{self.name:<24} {'PASS' if self.passed else 'FAIL':<5} est={self.estimate:.6g} target={self.target:.6g} {spread} n={self.n}"


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, np.generic):
        return obj.item()
    return obj


def report_table(reports):
    return "\n".join(r.row() for r in reports)


def config_echo(cfg: SimConfig):
    d = asdict(cfg)
    d["x0"] = np.atleast_1d(np.asarray(cfg.x0, dtype=float)).tolist()
    return d


def derived_seed(seed, stream):
    """Independent seed for a second simulation inside one test."""
    ss = np.random.SeedSequence([int(seed), 0x5EED, int(stream)])
    return int(ss.generate_state(1, np.uint64)[0])


# ----------------------------------------------------------------------------


def crossing_probability_test(rm: RadialModel, a, eps, cfg: SimConfig, *, upper_eps=None, sim_skew: Optional[SkewTable] = None, k=3.0):
    """Exit side of the shell ``(a - eps, a + upper_eps)`` for paths started on the membrane ``a``.

    The target comes from the scale function of ``rm``. ``sim_skew``
    replaces the skew table used for simulation only (negative controls).
    """
    up = eps if upper_eps is None else upper_eps
    try:
        rm.skew.entry_at(a)
    except KeyError:
        raise ConfigError(f"no membrane at radius {a}") from None
    lo, hi = a - eps, a + up
    if not lo > 0:
        raise ConfigError("the shell must stay away from the origin")
    others = [e.radius for e in rm.skew if lo <= e.radius <= hi and abs(e.radius - a) > 1e-12 * max(1.0, a)]
    if others:
        raise ConfigError(f"shell ({lo}, {hi}) contains other membranes at {others}")
    target = exit_probability(rm.with_domain(lo, hi), a, lo, hi)
    sim_rm = rm if sim_skew is None else replace(rm, skew=sim_skew)
    run_cfg = replace(cfg, x0=float(a))
    ex = first_exit_radial(sim_rm, run_cfg, lo, hi)
    n = ex.n
    if n == 0:
        raise ConfigError("no path left the shell before the horizon; increase the horizon")
    est = ex.upper_fraction
    se = float(np.sqrt(target * (1.0 - target) / n))
    return TestReport(
        "crossing_probability", est, float(target), n, "se", se, k=k,
        config=config_echo(run_cfg),
        details={"radius": a, "shell": [lo, hi], "censored": int(ex.censored.sum()), "alpha": rm.skew.entry_at(a).alpha},
    )


def radial_consistency_test(wf: WeightField, st: SkewTable, cfg: SimConfig, *, bessel=True, threshold=0.01):
    """Two-sample KS test between ``|X_T|`` from the full and ``r_T`` from the radial simulator."""
    if cfg.n_paths < 100:
        raise ConfigError("radial consistency needs at least 100 paths per sample")
    full_cfg = replace(cfg, record_every=None, keep_increments=False)
    ef = simulate_full(wf, st, full_cfg)
    rm = radial_model(wf, st, bessel=bessel)
    rad_cfg = replace(full_cfg, x0=cfg.start_radius(), seed=derived_seed(cfg.seed, 1))
    er = simulate_radial(rm, rad_cfg)
    res = stats.ks_2samp(ef.final_radii(), er.final_radii())
    return TestReport(
        "radial_consistency" if bessel else "radial_consistency_no_bessel",
        float(res.statistic), 0.0, int(cfg.n_paths), "pvalue", p_value=float(res.pvalue), threshold=threshold,
        config=config_echo(cfg), details={"bessel": bessel, "radial_seed": rad_cfg.seed},
    )


def silverman_bandwidth(samples):
    """Silverman's rule for a Gaussian product kernel on an (n, d) sample."""
    n, d = samples.shape
    sigma = float(np.mean(np.std(samples, axis=0, ddof=1)))
    return sigma * (4.0 / ((d + 2.0) * n)) ** (1.0 / (d + 4.0))


def _kernel(samples, point, bw):
    d = samples.shape[1]
    z2 = np.sum((samples - point) ** 2, axis=1) / bw**2
    return np.exp(-0.5 * z2) / ((2.0 * np.pi) ** (d / 2.0) * bw**d)


def reversibility_test(wf: WeightField, st: SkewTable, cfg: SimConfig, x, y, bandwidth=None, *, rel_tol=0.10, n_boot=200, min_window=50):
    """Symmetry of ``p_T(x, y) / psi(y)`` under exchanging ``x`` and ``y``.

    The densities are kernel estimates from ``cfg.n_paths`` paths started at
    each point; the target ratio is 1 and the standard error comes from a
    bootstrap over paths.
    """
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if np.allclose(x, y):
        raise ValidationError("x and y must differ")
    br = wf.membranes.breaks
    for p in (x, y):
        if np.any(np.isclose(np.linalg.norm(p), br, rtol=0, atol=1e-12)):
            raise ValidationError("evaluation points must lie off the membranes")
    base = replace(cfg, record_every=None, keep_increments=False)
    from_x = simulate_full(wf, st, replace(base, x0=tuple(x))).final_positions()
    from_y = simulate_full(wf, st, replace(base, x0=tuple(y), seed=derived_seed(cfg.seed, 2))).final_positions()
    bw = float(bandwidth) if bandwidth is not None else silverman_bandwidth(np.vstack([from_x, from_y]))
    win_x = int(np.sum(np.linalg.norm(from_x - y, axis=1) < bw))
    win_y = int(np.sum(np.linalg.norm(from_y - x, axis=1) < bw))
    if min(win_x, win_y) < min_window:
        raise BandwidthError(f"only {min(win_x, win_y)} samples within the bandwidth {bw:.3g}; widen the bandwidth")
    kx = _kernel(from_x, y, bw)
    ky = _kernel(from_y, x, bw)
    psi_x = float(wf.psi(x))
    psi_y = float(wf.psi(y))
    est = (kx.mean() / psi_y) / (ky.mean() / psi_x)
    rng = np.random.default_rng(derived_seed(cfg.seed, 3))
    n = len(kx)
    boot = np.empty(n_boot)
    for b in range(n_boot):
        bx = kx[rng.integers(0, n, n)].mean()
        by = ky[rng.integers(0, n, n)].mean()
        boot[b] = (bx / psi_y) / (by / psi_x)
    return TestReport(
        "reversibility", float(est), 1.0, n, "rel", float(np.std(boot, ddof=1)), rel_tol=rel_tol,
        config=config_echo(cfg),
        details={"x": x.tolist(), "y": y.tolist(), "bandwidth": bw, "window_counts": [win_x, win_y]},
    )


def occupation_ratio_test(wf: WeightField, st: SkewTable, cfg: SimConfig, A, B, *, rel_tol=0.25, r_grid=None):
    """Ratio of pooled occupation times of two annuli against their ``psi`` masses."""
    diag = growth_criteria(wf, r_grid)
    if not diag.recurrent:
        raise HypothesisViolation(
            f"configuration looks transient (volume exponent {diag.exponent:.3g} > 2); "
            "occupation ratios need not converge",
            report=diag.as_dict(),
        )
    A = (float(A[0]), float(A[1]))
    B = (float(B[0]), float(B[1]))
    for lo, hi in (A, B):
        if not 0 <= lo < hi < np.inf:
            raise ValidationError("annuli must be bounded with lo < hi")
    target = psi_mass(wf, *A) / psi_mass(wf, *B)
    ens = simulate_full(wf, st, replace(cfg, record_every=None, keep_increments=False), bands=(A, B))
    ta, tb = ens.occupation[:, 0], ens.occupation[:, 1]
    if tb.sum() <= 0:
        raise ConfigError("no path visited the reference annulus; increase the horizon")
    est = float(ta.sum() / tb.sum())
    n = len(ta)
    # delta method for a ratio of means over independent paths
    se = float(np.std(ta - est * tb, ddof=1) / (np.sqrt(n) * tb.mean())) if n > 1 else np.inf
    return TestReport(
        "occupation_ratio", est, float(target), n, "rel", se, rel_tol=rel_tol,
        config=config_echo(cfg),
        details={"A": list(A), "B": list(B), "volume_exponent": diag.exponent},
    )
