"""Acceptance suite: one test per criterion, each printing a PASS/FAIL line.

Run with ``pytest tests/test_acceptance.py -v``; add ``-m "not slow"`` to
skip the two long Monte Carlo runs.
"""

from fractions import Fraction
from pathlib import Path

import numpy as np
import pytest

from skewmem import cli
from skewmem.analysis import growth_criteria, ibp_refinement, ibp_residual, radial_bump
from skewmem.radial import driftless_model, radial_model, single_membrane_table, skew_coefficients
from skewmem.simulate import SimConfig, simulate_radial, tanaka_residual
from skewmem.verify import crossing_probability_test, occupation_ratio_test, radial_consistency_test, reversibility_test
from skewmem.weights import (
    WeightField,
    build_membranes,
    constant_density,
    gaussian_density,
    power_density,
    pure_power_density,
)


@pytest.fixture
def say(capsys):
    def emit(number, ok, text):
        with capsys.disabled():
            print(f"\n[criterion {number:>2}] {'PASS' if ok else 'FAIL'}  {text}")

    return emit


def field(gl, gr, m0=1.0, density=None):
    return WeightField(build_membranes({"m0": m0, "gamma_top": gl, "gammabar_bottom": gr}), density or constant_density(3))


def test_01_skew_coefficients(say):
    rng = np.random.default_rng(20240101)
    worst, exact_ok, rescale_ok = 0.0, True, True
    for _ in range(20):
        gl, gr = 10.0 ** rng.uniform(-4, 4, size=2)
        e = skew_coefficients(build_membranes({"m0": 1.0, "gamma_top": gl, "gammabar_bottom": gr})).entries[0]
        alpha = Fraction(gr) / (Fraction(gr) + Fraction(gl))
        worst = max(worst, abs(e.alpha - float(alpha)), abs(e.coeff - float(2 * alpha - 1)))
        exact_ok &= e.alpha == float(alpha)
        # rescalings that are exact in floating point: powers of two, and integer factors on integer weights
        il, ir = (int(v) for v in rng.integers(1, 2**20, size=2))
        base = skew_coefficients(build_membranes({"m0": 1.0, "gamma_top": float(il), "gammabar_bottom": float(ir)})).entries[0]
        for c in (2.0 ** int(rng.integers(-40, 40)), float(rng.integers(2, 2**20))):
            sl, sr = (gl * c, gr * c) if np.log2(c).is_integer() else (il * c, ir * c)
            ref = e if np.log2(c).is_integer() else base
            other = skew_coefficients(build_membranes({"m0": 1.0, "gamma_top": sl, "gammabar_bottom": sr})).entries[0]
            rescale_ok &= other.alpha == ref.alpha and other.coeff == ref.coeff
    ok = worst <= 1e-15 and exact_ok and rescale_ok
    say(1, ok, f"max |alpha - exact| = {worst:.2e}, correctly rounded: {exact_ok}, rescaling bit-identical: {rescale_ok}")
    assert ok


def test_02_crossing_probability(say):
    rm = radial_model(field(1.0, 2.0, m0=0.5))
    cfg = SimConfig(horizon=0.05, step=1e-5, n_paths=100_000, seed=202402)
    rep = crossing_probability_test(rm, 0.5, 0.05, cfg)
    control = crossing_probability_test(rm, 0.5, 0.05, cfg, sim_skew=rm.skew.swapped())
    ok = rep.passed and not control.passed
    say(2, ok, f"est {rep.estimate:.5f} target {rep.target:.5f} se {rep.stderr:.5f}; swapped-alpha control est {control.estimate:.5f} ({'rejected' if not control.passed else 'accepted'})")
    assert ok


def test_03_integration_by_parts(say):
    configs = {
        "flat": field(1.0, 1.0),
        "one membrane": field(1.0, 2.0),
        "three membranes, gaussian": WeightField(
            build_membranes({"m0": 1.0, "inner": [(0.5, 0.5)], "gamma_top": 1.0, "outer": [(1.5, 3.0)], "gammabar_bottom": 2.0}),
            gaussian_density(3, 1.0),
        ),
    }
    f, g = radial_bump(0.8, 0.75), radial_bump(1.1, 0.9)
    parts, ok = [], True
    for name, wf in configs.items():
        rel = ibp_residual(f, g, wf).rel_residual
        ladder = ibp_refinement(f, g, wf)
        dec = all(b < a for a, b in zip(ladder, ladder[1:]))
        ok &= rel < 1e-6 and dec
        parts.append(f"{name}: {rel:.1e} (ladder {', '.join(f'{v:.0e}' for v in ladder)})")
    say(3, ok, "; ".join(parts))
    assert ok


def test_04_radial_consistency(say):
    wf = field(1.0, 3.0)
    st = skew_coefficients(wf.membranes)
    cfg = SimConfig(horizon=1.0, step=1e-3, n_paths=10_000, seed=202404, x0=(1.0, 0.0, 0.0), record_every=None)
    rep = radial_consistency_test(wf, st, cfg)
    control = radial_consistency_test(wf, st, cfg, bessel=False)
    ok = rep.p_value >= 0.01 and control.p_value < 1e-3
    say(4, ok, f"KS p = {rep.p_value:.3g} with the Bessel drift, {control.p_value:.3g} without it")
    assert ok


def test_05_tanaka_refinement(say):
    rm = radial_model(field(1.0, 2.0))
    levels = [(1e-3, 0.05), (1e-4, 0.02), (1e-5, 0.01)]
    means = []
    for h, eps in levels:
        cfg = SimConfig(horizon=0.1, step=h, n_paths=10_000, seed=202405, x0=1.0, shell_eps=eps, keep_increments=True)
        ens = simulate_radial(rm, cfg)
        means.append(float(np.mean([np.max(np.abs(tanaka_residual(tr, 1.0))) for tr in ens])))
    ratios = [a / b for a, b in zip(means, means[1:])]
    mean_ratio = float(np.mean(ratios))
    ok = all(b < a for a, b in zip(means, means[1:])) and mean_ratio >= 1.5
    say(5, ok, f"mean max|R| {', '.join(f'{m:.4f}' for m in means)}; ratios {', '.join(f'{r:.3f}' for r in ratios)}; mean ratio {mean_ratio:.3f}")
    assert ok


@pytest.mark.slow
def test_06_reversibility(say):
    wf = field(1.0, 2.0)
    cfg = SimConfig(horizon=0.5, step=1e-3, n_paths=1_000_000, seed=202406)
    rep = reversibility_test(wf, skew_coefficients(wf.membranes), cfg, (0.6, 0.0, 0.0), (1.4, 0.0, 0.0))
    say(6, rep.passed, f"ratio {rep.estimate:.4f} (bootstrap se {rep.stderr:.4f}, bandwidth {rep.details['bandwidth']:.3g})")
    assert rep.passed


def test_07_local_time_closed_form(say):
    # level far from the domain ends: a 1D Brownian motion started at the level
    rm = driftless_model(single_membrane_table(10.0, 0.5), domain=(0.0, 20.0))
    cfg = SimConfig(horizon=1.0, step=1e-4, n_paths=100_000, seed=202407, x0=10.0, shell_eps=0.02, record_every=None)
    ens = simulate_radial(rm, cfg)
    lt = ens.local_time[:, -1, 0]
    target = np.sqrt(2.0 / np.pi)
    rel = abs(lt.mean() - target) / target
    ok = rel <= 0.05
    say(7, ok, f"E[local time] {lt.mean():.4f} vs {target:.4f} (rel err {rel:.2%})")
    assert ok


def test_08_growth_criteria(say):
    cases = [
        ("constant", constant_density(3), 3.0, False),
        ("(1+|x|^2)^-1", power_density(3, 2.0), 1.0, True),
        ("|x|^-2", pure_power_density(3, -2.0), 1.0, True),
    ]
    ok, parts = True, []
    for name, dm, expo, rec in cases:
        rep = growth_criteria(field(1.0, 1.0, density=dm))
        good = abs(rep.exponent - expo) <= 0.02 * expo and rep.recurrent is rec and rep.conservative
        ok &= good
        parts.append(f"{name}: {rep.exponent:.4f} {'recurrent' if rep.recurrent else 'transient'}")
    say(8, ok, "; ".join(parts))
    assert ok


@pytest.mark.slow
def test_09_occupation_ratio(say):
    wf = field(1.0, 1.0, density=power_density(3, 2.0))
    cfg = SimConfig(horizon=1000.0, step=1e-2, n_paths=1000, seed=202409, x0=(1.5, 0.0, 0.0))
    rep = occupation_ratio_test(wf, skew_coefficients(wf.membranes), cfg, (1.0, 2.0), (2.0, 3.0))
    say(9, rep.passed, f"ratio {rep.estimate:.4f} vs target {rep.target:.4f} (rel err {abs(rep.estimate / rep.target - 1):.1%})")
    assert rep.passed


def test_10_determinism_across_workers(tmp_path, say):
    cfg = tmp_path / "run.yaml"
    cfg.write_text(
        "dim: 3\nmembranes: {m0: 1.0, gamma_top: 1.0, gammabar_bottom: 2.0}\n"
        "density: {kind: gaussian, a: 0.5}\n"
        "simulation: {horizon: 0.2, step: 1.0e-3, n_paths: 5000, seed: 202410, x0: [0.9, 0.1, 0.0], "
        "record_every: 10, block_size: 512}\n"
    )
    names = {"csv": "trajectories.csv", "json": "trajectories.jsonl", "bin": "trajectories.bin"}
    same = True
    for fmt, name in names.items():
        blobs = []
        for workers in (1, 4):
            out = tmp_path / f"{fmt}-{workers}"
            code = cli.run(["simulate", "--config", str(cfg), "--workers", str(workers), "--format", fmt, "--out-dir", str(out)], echo=lambda *a, **k: None)
            assert code == 0
            blobs.append(tuple((out / n).read_bytes() for n in (name, "local_time.csv")))
        same &= blobs[0] == blobs[1]
    say(10, same, "trajectory and local-time artifacts byte-identical for 1 and 4 workers in csv, json and bin")
    assert same
