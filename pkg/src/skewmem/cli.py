"""Command line front end.

Subcommands ``simulate``, ``verify``, ``analyze``, ``coeffs`` and
``validate`` read a YAML config, write their artifacts to the output
directory and finish with a ``manifest.json``. Exit codes: 0 pass,
1 usage error, 2 validation error, 3 test failure.
"""

import argparse
import json
import os
import platform
import sys
import time
from datetime import datetime, timezone
from pathlib import Path

import numpy as np
import scipy

from . import __version__
from .analysis import dirichlet_form, growth_criteria, ibp_residual, trace_inequality_check
from .config import apply_overrides, build_model, config_hash, load_config, test_function
from .errors import EvaluationError, HypothesisViolation, SkewMemError, StepSizeError, UsageError
from .radial import radial_model
from .simulate import simulate_full, simulate_radial, write_csv, write_frames, write_jsonl, write_local_time_csv
from .verify import (
    crossing_probability_test,
    occupation_ratio_test,
    radial_consistency_test,
    report_table,
    reversibility_test,
)
from .weights import check_h1, a2_estimate, drift_ac, sample_balls

OUT_DIR_ENV = "SKEWMEM_OUT_DIR"
EXIT_OK, EXIT_USAGE, EXIT_VALIDATION, EXIT_TEST = 0, 1, 2, 3
TESTS = ("crossing", "radial_consistency", "reversibility", "occupation")


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def build_parser():
    p = _Parser(prog="skewmem", description="Skew diffusions with spherical membranes.")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)
    for name, helptext in (
        ("simulate", "simulate paths and local times"),
        ("verify", "run statistical tests"),
        ("analyze", "deterministic identity checks"),
        ("coeffs", "write the skew coefficient table"),
        ("validate", "check the weight hypotheses only"),
    ):
        s = sub.add_parser(name, help=helptext)
        s.add_argument("--config", required=True)
        s.add_argument("--seed", type=int)
        s.add_argument("--paths", type=int)
        s.add_argument("--step", type=float)
        s.add_argument("--horizon", type=float)
        s.add_argument("--workers", type=int)
        s.add_argument("--out-dir")
        s.add_argument("--format", choices=("csv", "json", "bin"))
        if name == "verify":
            s.add_argument("--test", choices=TESTS + ("all",), default="all")
            s.add_argument("--membrane", type=float, help="membrane radius for the crossing test")
    return p


def _out_dir(arg):
    d = Path(arg or os.environ.get(OUT_DIR_ENV) or "skewmem-out")
    d.mkdir(parents=True, exist_ok=True)
    return d


def _versions():
    return {
        "skewmem": __version__,
        "python": platform.python_version(),
        "numpy": np.__version__,
        "scipy": scipy.__version__,
    }


def _write_json(path, obj):
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True, default=_default)
        fh.write("\n")


def _default(o):
    if isinstance(o, np.ndarray):
        return o.tolist()
    if isinstance(o, np.generic):
        return o.item()
    raise TypeError(type(o))


# ----------------------------------------------------------------------------
# subcommands; each returns (exit code, list of written paths)


def _simulate(model, out):
    cfg = model.raw
    fmt = cfg["output"]["format"]
    ds = cfg["output"]["downsample"]
    if cfg["simulation"]["mode"] == "radial":
        rm = radial_model(model.weight_field, model.skew)
        ens = simulate_radial(rm, model.sim)
    else:
        ens = simulate_full(model.weight_field, model.skew, model.sim)
    written = []
    if fmt == "bin":
        path = out / "trajectories.bin"
        with open(path, "wb") as fh:
            write_frames(ens, fh)
    elif fmt == "json":
        path = out / "trajectories.jsonl"
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            write_jsonl(ens, fh, ds)
    else:
        path = out / "trajectories.csv"
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            write_csv(ens, fh, ds)
    written.append(path)
    lt_path = out / "local_time.csv"
    with open(lt_path, "w", encoding="utf-8", newline="\n") as fh:
        write_local_time_csv(ens, fh, ds)
    written.append(lt_path)
    return EXIT_OK, written


def _verify(model, out, which, echo=print):
    cfg = model.raw
    tests = cfg["tests"]
    names = [which] if which != "all" else [t for t in TESTS if t in tests] or ["crossing"]
    wf, st, sim = model.weight_field, model.skew, model.sim
    reports = []
    for name in names:
        t = tests.get(name) or {}
        if name == "crossing":
            a = t.get("membrane")
            if a is None:
                active = st.active()
                a = float(active.radii[0]) if len(active) else float(model.membranes.m0)
            rm = radial_model(wf, st)
            reports.append(crossing_probability_test(
                rm, a, t.get("eps") or sim.shell_eps, sim, upper_eps=t.get("upper_eps"), k=t.get("k") or 3.0,
            ))
        elif name == "radial_consistency":
            reports.append(radial_consistency_test(
                wf, st, sim, bessel=t.get("bessel", True) is not False, threshold=t.get("threshold") or 0.01,
            ))
        elif name == "reversibility":
            if "x" not in t or "y" not in t:
                raise UsageError("tests.reversibility needs x and y")
            reports.append(reversibility_test(wf, st, sim, t["x"], t["y"], t.get("bandwidth"), rel_tol=t.get("rel_tol") or 0.10))
        elif name == "occupation":
            if "A" not in t or "B" not in t:
                raise UsageError("tests.occupation needs annuli A and B")
            g = cfg["analysis"]["growth"]
            grid = np.geomspace(g["r_min"], g["r_max"], int(g["n"]))
            reports.append(occupation_ratio_test(wf, st, sim, t["A"], t["B"], rel_tol=t.get("rel_tol") or 0.25, r_grid=grid))
    path = out / "reports.jsonl"
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for r in reports:
            fh.write(r.to_json() + "\n")
    table = out / "reports.txt"
    table.write_text(report_table(reports) + "\n", encoding="utf-8")
    for r in reports:
        echo(r.to_json())
    ok = all(r.passed for r in reports)
    return (EXIT_OK if ok else EXIT_TEST), [path, table]


def _analyze(model, out):
    cfg = model.raw
    a = cfg["analysis"]
    wf, qc = model.weight_field, model.quadrature
    f, g = test_function(cfg, "f"), test_function(cfg, "g")
    form = dirichlet_form(f, g, wf, qc)
    ibp = ibp_residual(f, g, wf, qc)
    tr = a["trace"]
    trace = trace_inequality_check(f, tr["radius"], wf, qc, tr["constant"])
    gr = a["growth"]
    growth = growth_criteria(wf, np.geomspace(gr["r_min"], gr["r_max"], int(gr["n"])), gr["fit_fraction"])
    ibp_ok = ibp.rel_residual <= a["ibp_tolerance"]
    report = {
        "dirichlet_form": {"value": form.value, "error": form.error},
        "ibp": dict(ibp.as_dict(), tolerance=a["ibp_tolerance"], **{"pass": ibp_ok}),
        "trace": trace.as_dict(),
        "growth": growth.as_dict(),
    }
    path = out / "analysis.json"
    _write_json(path, report)
    ok = ibp_ok and trace.passed
    return (EXIT_OK if ok else EXIT_TEST), [path]


def _coeffs(model, out, echo=print):
    path = out / "skew_table.csv"
    text = model.skew.to_csv()
    path.write_text(text, encoding="utf-8")
    echo(text, end="")
    return EXIT_OK, [path]


def validation_report(model):
    """Hypothesis checks: weight summability, positivity, A2 sampling, density positivity."""
    wf = model.weight_field
    probes = model.raw["analysis"]["h1_probe_radii"]
    h1 = check_h1(model.membranes, probes)
    report = {"h1": h1.as_dict()}
    balls = sample_balls(wf.dim, 64, max_radius=4.0, seed=0)
    try:
        a2 = a2_estimate(wf, balls)
        report["a2"] = {"sup_ratio": a2.sup_ratio, "worst_ball": list(a2.worst_ball), "pass": bool(np.isfinite(a2.sup_ratio))}
    except HypothesisViolation as exc:
        report["a2"] = {"pass": False, "error": str(exc)}
    rng = np.random.default_rng(0)
    pts = rng.standard_normal((256, wf.dim)) * 2.0
    try:
        drift_ac(wf.density, pts)
        report["density"] = {"pass": True}
    except EvaluationError as exc:
        report["density"] = {"pass": False, "error": str(exc)}
    report["pass"] = all(v["pass"] for v in report.values())
    return report


def _validate(model, out):
    report = validation_report(model)
    path = out / "validation.json"
    _write_json(path, report)
    if not report["pass"]:
        raise HypothesisViolation("weight hypotheses fail", report=report)
    return EXIT_OK, [path]


# ----------------------------------------------------------------------------


def run(argv=None, echo=print):
    """Run one subcommand; returns the exit code."""
    started = time.time()
    try:
        args = build_parser().parse_args(argv)
    except UsageError as exc:
        echo(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except SystemExit as exc:  # --help
        return EXIT_OK if not exc.code else EXIT_USAGE
    out = _out_dir(args.out_dir)
    code, written, report = EXIT_OK, [], None
    cfg = None
    try:
        cfg = load_config(args.config)
        cfg = apply_overrides(
            cfg, seed=args.seed, paths=args.paths, step=args.step, horizon=args.horizon, workers=args.workers,
            fmt=args.format, membrane=getattr(args, "membrane", None),
        )
        model = build_model(cfg)
        if args.command == "simulate":
            code, written = _simulate(model, out)
        elif args.command == "verify":
            code, written = _verify(model, out, args.test, echo)
        elif args.command == "analyze":
            code, written = _analyze(model, out)
        elif args.command == "coeffs":
            code, written = _coeffs(model, out, echo)
        else:
            code, written = _validate(model, out)
    except UsageError as exc:
        echo(f"usage error: {exc}", file=sys.stderr)
        code = EXIT_USAGE
    except HypothesisViolation as exc:
        echo(f"hypothesis violation: {exc}", file=sys.stderr)
        code, report = EXIT_VALIDATION, exc.report
        if report is not None:
            path = out / "violation.json"
            _write_json(path, report)
            written.append(path)
    except (SkewMemError, ValueError) as exc:
        echo(f"validation error: {exc}", file=sys.stderr)
        code = EXIT_VALIDATION
    manifest = {
        "subcommand": args.command,
        "config_path": str(args.config),
        "config_hash": config_hash(cfg) if cfg is not None else None,
        "seed": cfg["simulation"]["seed"] if cfg is not None else None,
        "outputs": [p.name for p in written],
        "exit_code": code,
        "started_at": datetime.fromtimestamp(started, timezone.utc).isoformat(),
        "wall_clock_seconds": time.time() - started,
        "versions": _versions(),
        "config": cfg,
    }
    _write_json(out / "manifest.json", manifest)
    return code


def main(argv=None):
    sys.exit(run(argv))


if __name__ == "__main__":
    main()
