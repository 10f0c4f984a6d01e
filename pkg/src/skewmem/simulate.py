"""Path simulation of the full and the radial SDE with skew membranes.

Both simulators take Euler steps and resolve membrane interaction on the
radial coordinate. For a step ``r -> y`` near a membrane ``a`` the default
``"bridge"`` scheme keeps the distance ``|y - a|`` and chooses the side
from the exact skew Brownian transition law: with
``q = 1 / (1 + exp(2 |r - a| |y - a| / h))`` the path ends outside with
probability ``1 - 2 (1 - alpha) q`` if it started outside and ``2 alpha q``
if it started inside (``alpha`` when it started on the membrane). A
side switch mirrors the part of the step after the membrane hit, so twice
the drift accumulated in the mean remaining time is added back. The
``"reflect"`` scheme only acts on observed crossings and puts the path
outside with probability ``alpha``.

Randomness comes from one Philox stream per block of ``block_size`` paths,
keyed by ``(seed, block index)``, so results do not depend on the number of
worker threads.
"""

import json
import struct
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
from scipy.special import erfcx, expit

from .errors import StepSizeError, UsageError, ValidationError
from .radial import RadialModel, SkewTable
from .weights import WeightField, drift_ac

SCHEMES = ("bridge", "reflect")


@dataclass(frozen=True)
class SimConfig:
    dim: int = 3
    horizon: float = 1.0
    step: float = 1e-3
    n_paths: int = 1000
    seed: int = 0
    shell_eps: float = 0.05
    x0: object = 1.0
    scheme: str = "bridge"
    record_every: Optional[int] = 1
    keep_increments: bool = False
    block_size: int = 16384
    workers: int = 1
    max_halvings: int = 20
    max_depth: int = 40

    def __post_init__(self):
        if not self.step > 0:
            raise ValidationError("step must be positive")
        if not self.horizon >= self.step:
            raise ValidationError("horizon must be at least one step")
        if not self.shell_eps > 0:
            raise ValidationError("shell_eps must be positive")
        if int(self.n_paths) < 1:
            raise ValidationError("n_paths must be at least 1")
        if self.scheme not in SCHEMES:
            raise ValidationError(f"scheme must be one of {SCHEMES}, got {self.scheme!r}")
        if self.record_every is not None and int(self.record_every) < 1:
            raise ValidationError("record_every must be a positive integer or None")
        if int(self.block_size) < 1 or int(self.workers) < 1:
            raise ValidationError("block_size and workers must be positive")
        if not 0 <= int(self.seed) < 2**64:
            raise ValidationError("seed must be a 64-bit unsigned integer")

    @property
    def n_steps(self):
        return int(round(self.horizon / self.step))

    def start_vector(self):
        x0 = np.atleast_1d(np.asarray(self.x0, dtype=float))
        if x0.size == 1:
            out = np.zeros(self.dim)
            out[0] = x0[0]
            return out
        if x0.size != self.dim:
            raise ValidationError(f"x0 has {x0.size} coordinates, expected {self.dim}")
        return x0

    def start_radius(self):
        return float(np.linalg.norm(self.start_vector()))

    def record_steps(self):
        n = self.n_steps
        if self.keep_increments or self.record_every == 1:
            return np.arange(n + 1)
        if self.record_every is None:
            return np.array([0, n])
        ks = np.arange(0, n + 1, int(self.record_every))
        if ks[-1] != n:
            ks = np.append(ks, n)
        return ks


def block_rng(seed, block):
    """Counter-based generator for one block of paths."""
    ss = np.random.SeedSequence([int(seed) & 0xFFFFFFFFFFFFFFFF, int(block)])
    return np.random.Generator(np.random.Philox(ss))


# ----------------------------------------------------------------------------
# membrane resolution


def time_after_hit(d1, d2, h):
    """Mean time left after the first hit of a level by a Brownian bridge.

    The bridge runs over ``[0, h]`` from distance ``d1`` to distance ``d2``
    of the level and is conditioned to touch it. With ``A = d1 / sqrt(h)``,
    ``S = (d1 + d2) / sqrt(h)`` and the Mills ratio ``R``,
    ``E[h - tau] = h * (1 - A * R(S))``.
    """
    sh = np.sqrt(h)
    A = np.asarray(d1, dtype=float) / sh
    S = A + np.asarray(d2, dtype=float) / sh
    mills = np.sqrt(np.pi / 2.0) * erfcx(S / np.sqrt(2.0))
    return h * np.clip(1.0 - A * mills, 0.0, 1.0)


def resolve_skew(r, y, h, radii, alphas, u, scheme="bridge", drift=None):
    """Resolve the radial step ``r -> y`` against the nearest active membrane.

    Returns the new radii and a mask of paths whose step touches two or more
    membranes (those need substepping). Steps that stay on one side with
    ``2 |r - a| |y - a| / h > 80`` are left alone: their side-switch
    probability is below ``e**-80``.

    ``drift`` is the radial drift of each path. Mirroring the part of the
    step after the membrane hit also mirrors the drift accumulated there;
    the bridge scheme adds back twice its conditional mean so the drift
    keeps its direction.
    """
    r = np.asarray(r, dtype=float)
    y = np.asarray(y, dtype=float)
    out_r = y.copy()
    m = len(radii)
    if m == 0:
        return out_r, np.zeros(r.shape, dtype=bool)
    lo = np.minimum(r, y)
    hi = np.maximum(r, y)
    i_lo = np.searchsorted(radii, lo, side="left")
    i_hi = np.searchsorted(radii, hi, side="right")
    n_in = i_hi - i_lo
    multi = n_in >= 2

    below = np.maximum(i_lo - 1, 0)
    above = np.minimum(i_lo, m - 1)
    cut = 40.0 * h
    ab = radii[below]
    aa = radii[above]
    prod_b = np.where(i_lo >= 1, (r - ab) * (y - ab), np.inf)
    prod_a = np.where(i_lo < m, (r - aa) * (y - aa), np.inf)
    sel = np.flatnonzero((n_in >= 1) | (prod_b <= cut) | (prod_a <= cut))
    if len(sel) == 0:
        return out_r, multi
    r, y, u = r[sel], y[sel], u[sel]
    j = np.where(n_in[sel] >= 1, above[sel], np.where(prod_b[sel] <= prod_a[sel], below[sel], above[sel]))
    a = radii[j]
    al = alphas[j]
    if scheme == "bridge":
        q = expit(-2.0 * np.abs(r - a) * np.abs(y - a) / h)
        p_out = np.where(r >= a, 1.0 - 2.0 * (1.0 - al) * q, 2.0 * al * q)
    elif scheme == "reflect":
        crossed = (r - a) * (y - a) <= 0
        p_out = np.where(crossed, al, (y > a).astype(float))
    else:
        raise ValidationError(f"unknown scheme {scheme!r}")
    go_out = u < p_out
    keep = go_out == (y >= a)
    mirror = 2.0 * a - y
    if drift is not None and scheme == "bridge":
        b = np.asarray(drift, dtype=float)[sel]
        moved = mirror + 2.0 * b * time_after_hit(np.abs(r - a), np.abs(y - a), h)
        # a correction that overshoots the membrane is folded back
        moved = np.where((moved - a) * (mirror - a) < 0, 2.0 * a - moved, moved)
        mirror = np.where(moved > 0, moved, mirror)
    keep |= mirror <= 0
    out_r[sel] = np.where(keep, y, mirror)
    return out_r, multi


def _norm(x):
    return np.sqrt(np.einsum("...i,...i->...", x, x))


class _RadialGeometry:
    vector = False

    def __init__(self, rm: RadialModel):
        self.rm = rm
        self.reflect_origin = not rm.singular_at_origin
        self.bessel_dim = int(rm.dim) if rm.bessel else 0
        ac = rm.drift_without_bessel
        if ac is None and rm.bessel:
            ac = lambda r: rm.drift(r) - (rm.dim - 1) / (2.0 * r)
        self.ac = ac

    def radius(self, x):
        return x

    def drift(self, x):
        return np.asarray(self.rm.drift(x), dtype=float)

    def drift_size(self, b):
        return np.abs(b)

    def propose(self, x, h, dw, rng):
        """Proposed radius and the size of the drift that must stay resolvable."""
        b = self.drift(x)
        y = x + b * h + dw
        size = np.abs(b)
        brad = b
        if self.bessel_dim:
            # close to the origin the Bessel part is stepped exactly as the
            # norm of a d-dimensional Gaussian step, with dw as its first axis
            near = x < 2.0 * (self.bessel_dim - 1) * np.sqrt(h)
            if np.any(near):
                xn = x[near]
                extra = rng.standard_normal((len(xn), self.bessel_dim - 1))
                bac = np.asarray(self.ac(xn), dtype=float)
                y = y.copy()
                size = size.copy()
                y[near] = np.sqrt((xn + dw[near]) ** 2 + h * np.sum(extra**2, axis=1)) + bac * h
                size[near] = np.abs(bac)
        return y, size, brad

    def with_radius(self, y, ry, rnew):
        return rnew


class _FullGeometry:
    vector = True
    reflect_origin = False

    def __init__(self, wf: WeightField):
        self.dm = wf.density
        self.prof = wf.density.radial_profile
        self.flat = wf.density.name == "constant"

    def radius(self, x):
        return _norm(x)

    def drift(self, x):
        if self.flat:
            return np.zeros_like(x)
        if self.prof is not None:
            r = _norm(x)
            val = self.prof.value(r)
            if np.any(~(val > 0)):
                return drift_ac(self.dm, x)
            fac = self.prof.deriv(r) / (2.0 * val * r)
            if not np.all(np.isfinite(fac)):
                return drift_ac(self.dm, x)
            return fac[..., None] * x
        return drift_ac(self.dm, x)

    def drift_size(self, b):
        return _norm(b)

    def propose(self, x, h, dw, rng):
        b = self.drift(x)
        r = _norm(x)
        # radial drift of |X|: the Bessel term plus the radial part of b
        brad = (x.shape[-1] - 1) / (2.0 * r)
        if not self.flat:
            brad = brad + np.einsum("...i,...i->...", b, x) / r
        return x + b * h + dw, self.drift_size(b), brad

    def with_radius(self, y, ry, rnew):
        return y * (rnew / ry)[..., None]


class _Stepper:
    """Euler step with membrane resolution and Brownian-bridge substepping."""

    def __init__(self, geom, skew: SkewTable, cfg: SimConfig):
        act = skew.active()
        self.geom = geom
        self.radii = act.radii
        self.alphas = act.alphas
        self.scheme = cfg.scheme
        self.max_halvings = cfg.max_halvings
        self.max_depth = cfg.max_depth
        self.singular = isinstance(geom, _RadialGeometry) and not geom.reflect_origin

    def _finish(self, xnew):
        g = self.geom
        if isinstance(g, _RadialGeometry):
            if g.reflect_origin:
                return np.abs(xnew)
            if np.any(~(xnew > 0)):
                raise StepSizeError(
                    "a radial path reached radius <= 0; the origin is polar for d >= 3, "
                    "use a smaller step"
                )
        return xnew

    def step(self, x, h, dw, u, rng):
        g = self.geom
        y, size, brad = g.propose(x, h, dw, rng)
        r = g.radius(x)
        ry = g.radius(y)
        slow = ~(size * h <= 0.5 * np.sqrt(h))
        if self.singular:
            slow |= ~(ry > 0)
        rnew, multi = resolve_skew(r, ry, h, self.radii, self.alphas, u, self.scheme, brad)
        xnew = y
        sw = rnew != ry
        if np.any(sw):
            xnew = y.copy()
            xnew[sw] = g.with_radius(y[sw], ry[sw], rnew[sw])
        slow |= multi
        if np.any(slow):
            if xnew is y:
                xnew = y.copy()
            for i in np.flatnonzero(slow):
                xnew[i] = self._substep(x[i], dw[i], h, rng, 0, 0)
        return self._finish(xnew)

    def _substep(self, x, dw, h, rng, depth, halvings):
        g = self.geom
        xa = np.asarray(x, dtype=float)[None]
        y, size, brad = g.propose(xa, h, np.asarray(dw, dtype=float)[None], rng)
        r = g.radius(xa)
        ry = g.radius(y)
        big = not (size[0] * h <= 0.5 * np.sqrt(h))
        if self.singular and not ry[0] > 0:
            big = True
        n_in = 0
        if len(self.radii):
            lo, hi = min(r[0], ry[0]), max(r[0], ry[0])
            n_in = int(np.searchsorted(self.radii, hi, "right") - np.searchsorted(self.radii, lo, "left"))
        if (big and halvings < self.max_halvings) or (n_in >= 2 and depth < self.max_depth):
            z = rng.standard_normal(np.shape(dw))
            dw1 = 0.5 * dw + 0.5 * np.sqrt(h) * z
            x = self._substep(x, dw1, 0.5 * h, rng, depth + 1, halvings + int(big))
            return self._substep(x, dw - dw1, 0.5 * h, rng, depth + 1, halvings + int(big))
        u = rng.random(1)
        # at the depth cap only the membrane nearest to the start is resolved
        rnew, _ = resolve_skew(r, ry, h, self.radii, self.alphas, u, self.scheme, brad)
        if rnew[0] != ry[0]:
            y = g.with_radius(y, ry, rnew)
        return y[0]


# ----------------------------------------------------------------------------
# trajectories


@dataclass
class Trajectory:
    """One simulated path.

    ``local_time`` and ``crossings`` are keyed by membrane radius. The
    signed crossing count is ``(sign(r_T - a) - sign(r_0 - a)) / 2``
    accumulated step by step, so a path started on the membrane contributes
    half counts. ``increments`` holds the driving Brownian increments when
    they were kept.
    """

    times: np.ndarray
    positions: np.ndarray
    local_time: dict
    crossings: dict
    step: float
    shell_eps: float
    record_steps: np.ndarray
    increments: Optional[np.ndarray] = None
    max_radius: float = np.nan

    @property
    def radii(self):
        p = self.positions
        return p if p.ndim == 1 else np.linalg.norm(p, axis=-1)

    @property
    def full_resolution(self):
        return len(self.record_steps) > 1 and np.all(np.diff(self.record_steps) == 1)


@dataclass
class Ensemble:
    """Paths of one simulation run, stored as arrays with the path axis first."""

    times: np.ndarray
    positions: np.ndarray
    local_time: np.ndarray
    crossings: np.ndarray
    tracked: np.ndarray
    step: float
    shell_eps: float
    record_steps: np.ndarray
    increments: Optional[np.ndarray] = None
    occupation: Optional[np.ndarray] = None
    bands: tuple = ()
    max_radius: Optional[np.ndarray] = None
    config: Optional[SimConfig] = None

    def __len__(self):
        return self.positions.shape[0]

    def __getitem__(self, i):
        return Trajectory(
            self.times,
            self.positions[i],
            {float(a): self.local_time[i, :, k] for k, a in enumerate(self.tracked)},
            {float(a): float(self.crossings[i, k]) for k, a in enumerate(self.tracked)},
            self.step,
            self.shell_eps,
            self.record_steps,
            None if self.increments is None else self.increments[i],
            float(self.max_radius[i]) if self.max_radius is not None else np.nan,
        )

    def __iter__(self):
        for i in range(len(self)):
            yield self[i]

    @property
    def radii(self):
        p = self.positions
        return p if p.ndim == 2 else np.linalg.norm(p, axis=-1)

    def final_radii(self):
        return self.radii[:, -1]

    def final_positions(self):
        return self.positions[:, -1]


def _run_block(stepper, x0, n, cfg, rng, tracked, bands):
    h = cfg.step
    sqh = np.sqrt(h)
    n_steps = cfg.n_steps
    rec = cfg.record_steps()
    rec_pos = {int(k): i for i, k in enumerate(rec)}
    vec = stepper.geom.vector
    dim = cfg.dim
    shape = (n, dim) if vec else (n,)
    x = np.broadcast_to(x0, shape).astype(float).copy()
    m = len(tracked)
    pos = np.empty((n, len(rec)) + ((dim,) if vec else ()))
    lt_rec = np.empty((n, len(rec), m))
    lt = np.zeros((n, m))
    cross = np.zeros((n, m))
    occ = np.zeros((n, len(bands)))
    incr = np.empty((n, n_steps) + ((dim,) if vec else ())) if cfg.keep_increments else None
    geom = stepper.geom
    r = geom.radius(x)
    rmax = r.copy()
    pos[:, 0] = x
    lt_rec[:, 0] = 0.0
    lt_fac = h / (2.0 * cfg.shell_eps)
    for k in range(1, n_steps + 1):
        dw = sqh * rng.standard_normal(shape)
        u = rng.random(n)
        if m:
            lt += lt_fac * (np.abs(r[:, None] - tracked[None, :]) < cfg.shell_eps)
        for j, (lo, hi) in enumerate(bands):
            occ[:, j] += h * ((r > lo) & (r < hi))
        x = stepper.step(x, h, dw, u, rng)
        r_new = geom.radius(x)
        if m:
            # half steps of the point-symmetric sign: a path started on the
            # membrane has crossed by 1/2 once it leaves
            cross += 0.5 * (np.sign(r_new[:, None] - tracked[None, :]) - np.sign(r[:, None] - tracked[None, :]))
        r = r_new
        np.maximum(rmax, r, out=rmax)
        if incr is not None:
            incr[:, k - 1] = dw
        i = rec_pos.get(k)
        if i is not None:
            pos[:, i] = x
            lt_rec[:, i] = lt
    return pos, lt_rec, cross, occ, incr, rmax


def _simulate(stepper, x0, cfg, tracked, bands):
    n_total = int(cfg.n_paths)
    bs = int(cfg.block_size)
    blocks = [(b, min(bs, n_total - b * bs)) for b in range((n_total + bs - 1) // bs)]

    def work(item):
        b, n = item
        return _run_block(stepper, x0, n, cfg, block_rng(cfg.seed, b), tracked, bands)

    if cfg.workers > 1 and len(blocks) > 1:
        with ThreadPoolExecutor(max_workers=int(cfg.workers)) as ex:
            results = list(ex.map(work, blocks))
    else:
        results = [work(bl) for bl in blocks]
    pos, lt, cross, occ, incr, rmax = (
        np.concatenate([res[i] for res in results]) if results[0][i] is not None else None
        for i in range(6)
    )
    rec = cfg.record_steps()
    return Ensemble(
        rec * cfg.step, pos, lt, cross, tracked, cfg.step, cfg.shell_eps, rec,
        incr, occ, tuple(bands), rmax, cfg,
    )


def _tracked(skew, extra):
    t = sorted(set(skew.radii.tolist()) | set(float(a) for a in (extra or ())))
    return np.array(t, dtype=float)


def simulate_radial(rm: RadialModel, cfg: SimConfig, *, track=(), bands=()):
    """Simulate the radial SDE; returns an :class:`Ensemble` of ``cfg.n_paths`` paths.

    ``track`` adds radii (besides the membranes) whose local time and
    crossings are accumulated; ``bands`` are radial intervals whose
    occupation time is accumulated per path.
    """
    r0 = cfg.start_radius()
    if not r0 > 0:
        raise ValidationError("start radius must be positive")
    stepper = _Stepper(_RadialGeometry(rm), rm.skew, cfg)
    return _simulate(stepper, np.float64(r0), cfg, _tracked(rm.skew, track), bands)


def simulate_full(wf: WeightField, st: SkewTable, cfg: SimConfig, *, track=(), bands=()):
    """Simulate the d-dimensional SDE; membranes act along the outward normal."""
    x0 = cfg.start_vector()
    if wf.dim != cfg.dim:
        raise ValidationError(f"config dimension {cfg.dim} differs from the weight field dimension {wf.dim}")
    if not np.linalg.norm(x0) > 0:
        raise ValidationError("start point must differ from the origin")
    stepper = _Stepper(_FullGeometry(wf), st, cfg)
    return _simulate(stepper, x0, cfg, _tracked(st, track), bands)


@dataclass
class ExitSample:
    exit_upper: np.ndarray
    exit_time: np.ndarray
    censored: np.ndarray

    @property
    def n(self):
        return int((~self.censored).sum())

    @property
    def upper_fraction(self):
        ok = ~self.censored
        return float(self.exit_upper[ok].mean())


def first_exit_radial(rm: RadialModel, cfg: SimConfig, lo, hi, bridge_exit=True):
    """Exit side and time of the radial process from (lo, hi), started at ``cfg.x0``.

    Paths still inside at ``cfg.horizon`` are reported as censored. With
    ``bridge_exit`` a path also exits when the Brownian bridge between two
    grid points leaves the interval, which removes the O(sqrt(h)) bias of
    monitoring the exit on the grid only.
    """
    r0 = cfg.start_radius()
    if not lo <= r0 <= hi:
        raise ValidationError("start radius must lie in the exit interval")
    stepper = _Stepper(_RadialGeometry(rm), rm.skew, cfg)
    n_total = int(cfg.n_paths)
    bs = int(cfg.block_size)
    h = cfg.step
    sqh = np.sqrt(h)
    ups, times, cens = [], [], []
    for b in range((n_total + bs - 1) // bs):
        n = min(bs, n_total - b * bs)
        rng = block_rng(cfg.seed, b)
        x = np.full(n, r0)
        idx = np.arange(n)
        up = np.zeros(n, dtype=bool)
        t_exit = np.full(n, np.nan)
        done = np.zeros(n, dtype=bool)
        for k in range(1, cfg.n_steps + 1):
            m = len(idx)
            dw = sqh * rng.standard_normal(m)
            u = rng.random(m)
            x_prev = x
            x = stepper.step(x, h, dw, u, rng)
            out = (x <= lo) | (x >= hi)
            up_now = x >= hi
            if bridge_exit:
                # exit between grid points along the Brownian bridge
                v = rng.random(m)
                p_lo = np.exp(-2.0 * np.maximum(x_prev - lo, 0) * np.maximum(x - lo, 0) / h)
                p_hi = np.exp(-2.0 * np.maximum(hi - x_prev, 0) * np.maximum(hi - x, 0) / h)
                hit_lo = ~out & (v < p_lo)
                hit_hi = ~out & ~hit_lo & (v < p_lo + p_hi)
                out = out | hit_lo | hit_hi
                up_now = (up_now & ~hit_lo) | hit_hi
            if np.any(out):
                gone = idx[out]
                up[gone] = up_now[out]
                t_exit[gone] = k * h
                done[gone] = True
                idx = idx[~out]
                x = x[~out]
                if len(idx) == 0:
                    break
        ups.append(up)
        times.append(t_exit)
        cens.append(~done)
    return ExitSample(np.concatenate(ups), np.concatenate(times), np.concatenate(cens))


# ----------------------------------------------------------------------------
# local time and Tanaka


def _tracked_index(traj, a):
    keys = np.array(list(traj.local_time.keys()), dtype=float)
    hit = np.flatnonzero(np.isclose(keys, a, rtol=1e-12, atol=0.0))
    if len(hit) == 0:
        raise UsageError(f"radius {a} is not tracked by this trajectory")
    return float(keys[hit[0]])


def local_time_estimate(traj: Trajectory, a, eps=None):
    """Occupation estimate of the symmetric local time of the radius at ``a``.

    ``(1 / 2 eps) * sum_{s < t} h 1{| |X_s| - a | < eps}`` on the recorded
    grid. With the simulation's own ``eps`` the accumulator is returned;
    any other ``eps`` needs a full-resolution trajectory.
    """
    key = _tracked_index(traj, a)
    if eps is None or eps == traj.shell_eps:
        return traj.local_time[key]
    if not traj.full_resolution:
        raise UsageError("a different shell width needs a full-resolution trajectory")
    r = traj.radii
    occ = (np.abs(r[:-1] - key) < eps) * (traj.step / (2.0 * eps))
    return np.concatenate([[0.0], np.cumsum(occ)])


def tanaka_residual(traj: Trajectory, a, eps=None):
    """Residual of the symmetric Tanaka identity for ``| |X_t| - a |``.

    ``R_t = |r_t - a| - |r_0 - a| - sum sign(r_s - a) (r_{s+1} - r_s) - l_t``
    with the point-symmetric sign.
    """
    if traj.increments is None or not traj.full_resolution:
        raise UsageError("Tanaka residual needs a trajectory with retained increments")
    key = _tracked_index(traj, a)
    r = traj.radii
    ell = local_time_estimate(traj, key, eps)
    stoch = np.concatenate([[0.0], np.cumsum(np.sign(r[:-1] - key) * np.diff(r))])
    return np.abs(r - key) - abs(r[0] - key) - stoch - ell


# ----------------------------------------------------------------------------
# export

FRAME_MAGIC = b"SKSM"
FRAME_VERSION = 1
_HEADER = struct.Struct("<4sIIQQ")


def write_frames(ens: Ensemble, fh):
    """Binary frame format.

    Header (little endian): magic ``b"SKSM"``, uint32 version, uint32 dim
    (1 for radial paths), uint64 n_paths, uint64 grid size. Then the grid
    times and the positions (path-major, then time, then coordinate), all
    as little-endian float64.
    """
    pos = ens.positions
    dim = 1 if pos.ndim == 2 else pos.shape[2]
    fh.write(_HEADER.pack(FRAME_MAGIC, FRAME_VERSION, dim, pos.shape[0], pos.shape[1]))
    fh.write(np.ascontiguousarray(ens.times, dtype="<f8").tobytes())
    fh.write(np.ascontiguousarray(pos, dtype="<f8").tobytes())


def read_frames(fh):
    """Inverse of :func:`write_frames`: returns ``(times, positions)``."""
    head = fh.read(_HEADER.size)
    magic, version, dim, n_paths, n_grid = _HEADER.unpack(head)
    if magic != FRAME_MAGIC:
        raise ValidationError("not a trajectory frame file")
    if version != FRAME_VERSION:
        raise ValidationError(f"unsupported frame version {version}")
    times = np.frombuffer(fh.read(8 * n_grid), dtype="<f8")
    pos = np.frombuffer(fh.read(8 * n_paths * n_grid * dim), dtype="<f8")
    shape = (n_paths, n_grid) if dim == 1 else (n_paths, n_grid, dim)
    return times, pos.reshape(shape)


def _fmt(v):
    return repr(float(v))


def write_csv(ens: Ensemble, fh, downsample=1):
    """One row per path and retained grid time."""
    pos = ens.positions
    dim = 1 if pos.ndim == 2 else pos.shape[2]
    cols = ["path", "time"] + (["r"] if dim == 1 else [f"x{j}" for j in range(dim)] + ["r"])
    fh.write(",".join(cols) + "\n")
    sel = np.arange(0, len(ens.times), int(downsample))
    if sel[-1] != len(ens.times) - 1:
        sel = np.append(sel, len(ens.times) - 1)
    rad = ens.radii
    for p in range(len(ens)):
        for i in sel:
            row = [str(p), _fmt(ens.times[i])]
            if dim == 1:
                row.append(_fmt(pos[p, i]))
            else:
                row += [_fmt(c) for c in pos[p, i]] + [_fmt(rad[p, i])]
            fh.write(",".join(row) + "\n")


def write_local_time_csv(ens: Ensemble, fh, downsample=1):
    fh.write(",".join(["path", "time"] + [f"lt_{float(a)!r}" for a in ens.tracked]) + "\n")
    sel = np.arange(0, len(ens.times), int(downsample))
    if sel[-1] != len(ens.times) - 1:
        sel = np.append(sel, len(ens.times) - 1)
    for p in range(len(ens)):
        for i in sel:
            fh.write(",".join([str(p), _fmt(ens.times[i])] + [_fmt(v) for v in ens.local_time[p, i]]) + "\n")


def write_jsonl(ens: Ensemble, fh, downsample=1):
    sel = np.arange(0, len(ens.times), int(downsample))
    if sel[-1] != len(ens.times) - 1:
        sel = np.append(sel, len(ens.times) - 1)
    for p in range(len(ens)):
        rec = {
            "path": p,
            "times": ens.times[sel].tolist(),
            "positions": ens.positions[p, sel].tolist(),
            "local_time": {repr(float(a)): ens.local_time[p, sel, k].tolist() for k, a in enumerate(ens.tracked)},
            "crossings": {repr(float(a)): float(ens.crossings[p, k]) for k, a in enumerate(ens.tracked)},
        }
        fh.write(json.dumps(rec) + "\n")
