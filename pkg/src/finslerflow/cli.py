"""Command-line front end.

Subcommands map one-to-one onto the library's experiment surfaces:

    simulate        integrate one orbit, emit CSV + stats
    spectrum        analytic vs measured exceptional lengths
    closed          closed-geodesic sweep over a seed grid
    conjugate       first conjugate times along seeded orbits
    rotation        rotation numbers of seeded off-equator orbits
    counterexample  the five-check verification of the perturbed metric
    conjugacy       flow-conjugacy verdict for two metrics

Every command prints a JSON report (embedding the resolved configuration,
the seed, and the package version) and, when --outdir is given, writes the
report, any delimited output, and rendered figures there.  All randomness
flows from a single seed, so identical configurations reproduce identical
reports.  Exit codes: 0 success, 2 precondition violation, 3 numerical
failure.
"""

from __future__ import annotations

import argparse
import json
import os
import sys

import numpy as np

from . import __version__
from . import charts as ch
from .analysis import (
    SearchGrid,
    detect_closure,
    find_closed_geodesics,
    rotation_numbers,
)
from .counterexample import CounterexampleParams, verify_counterexample
from .errors import (
    DegenerateWind,
    EquatorialOrbit,
    FinslerFlowError,
    IdenticalImages,
    InadmissibleAlpha,
    NotConstantCurvature,
    NotNormalized,
    NumericalBreakdown,
    PoleSingularity,
    RefinementDiverged,
    RootBracketFailure,
    ToleranceFailure,
)
from .flow import IntegratorOptions, integrate
from .metrics import (
    ChainMetric,
    KatokMetric,
    RoundMetric,
    make_metric,
    metric_config,
    spectrum,
)
from .models import conjugacy_invariants, conjugacy_verdict, deform_to_closed
from .variational import variational_flow_batch

PRECONDITION_ERRORS = (
    ValueError,
    KeyError,
    InadmissibleAlpha,
    NotNormalized,
    DegenerateWind,
    EquatorialOrbit,
    NotConstantCurvature,
    IdenticalImages,
)
NUMERICAL_ERRORS = (
    ToleranceFailure,
    RootBracketFailure,
    NumericalBreakdown,
    RefinementDiverged,
    PoleSingularity,
)


def parse_metric(text: str):
    """Parse 'round', 'katok:alpha=0.3', 'chain:alpha=0.3,beta=-0.3',
    'perturbed:t0=0.05,...' into a metric."""
    name, _, rest = text.partition(":")
    name = name.strip().lower()
    kw = {}
    if rest:
        for item in rest.split(","):
            k, _, v = item.partition("=")
            if not _:
                raise ValueError(f"malformed metric option {item!r}")
            kw[k.strip()] = float(v)
    if name == "round":
        return RoundMetric()
    if name == "katok":
        return KatokMetric(kw["alpha"])
    if name == "chain":
        return ChainMetric(KatokMetric(kw["alpha"]), kw["beta"])
    if name == "perturbed":
        return make_metric({"variant": "perturbed", "params": kw})
    raise ValueError(f"unknown metric {name!r}")


def parse_init(metric, text: str) -> ch.PhaseState:
    """Parse 'theta=0.2,phi=0,dir=east' (or 'meridian') into a unit covector."""
    if text.strip().lower() == "meridian":
        text = "theta=0,phi=0,dir=north"
    fields = {}
    for item in text.split(","):
        k, _, v = item.partition("=")
        fields[k.strip().lower()] = v.strip()
    theta = float(fields.get("theta", 0.0))
    phi = float(fields.get("phi", 0.0))
    direction = fields.get("dir", "east").lower()
    named = {"east": (0.0, 1.0), "west": (0.0, -1.0), "north": (1.0, 0.0), "south": (-1.0, 0.0)}
    if direction in named:
        pt, pf = named[direction]
    else:
        psi = float(direction)
        pt, pf = np.cos(psi), np.sin(psi)
    arr = metric.normalize(np.array([[theta, phi, pt, pf]]), np.array([ch.CHART_Z]))[0]
    return ch.PhaseState.from_array(arr, ch.ChartId.ZPOLAR)


def random_unit_covectors(metric, rng, n, theta_cap=1.2, min_amplitude=None):
    """Seeded random unit covectors; optionally reject near-equatorial rows."""
    out = []
    while len(out) < n:
        th = rng.uniform(-theta_cap, theta_cap)
        phv = rng.uniform(0.0, 2.0 * np.pi)
        psi = rng.uniform(0.0, 2.0 * np.pi)
        arr = metric.normalize(
            np.array([[th, phv, np.cos(psi), np.sin(psi)]]), np.array([ch.CHART_Z])
        )[0]
        if min_amplitude is not None and abs(arr[0]) < min_amplitude and abs(arr[2]) < min_amplitude:
            continue
        out.append(arr)
    return np.array(out)


def measured_spectrum(metric, opts=None, tol=1e-8):
    """Detected equatorial closed-geodesic lengths (the exceptional pair)."""
    opts = opts or IntegratorOptions(rel_tol=1e-11, abs_tol=1e-13)
    lam = metric.lambda_norm
    out = {}
    for key, eastward, expect in (
        ("L_short", metric.lambda_raw >= 0.5, np.pi / (1.0 - lam)),
        ("L_long", metric.lambda_raw < 0.5, np.pi / lam),
    ):
        arr = metric.normalize(
            np.array([[0.0, 0.0, 0.0, 1.0 if eastward else -1.0]]), np.array([ch.CHART_Z])
        )[0]
        init = ch.PhaseState.from_array(arr, ch.ChartId.ZPOLAR)
        traj = integrate(metric, init, 1.35 * expect, opts)
        rec = detect_closure(traj, tol=tol, opts=opts)
        if rec is not None:
            out[key] = rec.length
            out[key + "_residual"] = rec.residual
            out[key + "_winding"] = rec.winding
    if "L_short" in out and "L_long" in out:
        out["reciprocal_sum"] = 1.0 / out["L_short"] + 1.0 / out["L_long"]
    return out


def _emit(report, args, writers=()):
    """Print the JSON report; write report + extras into --outdir."""
    text = json.dumps(report, indent=2, sort_keys=True)
    print(text)
    outdir = getattr(args, "outdir", None)
    if outdir:
        os.makedirs(outdir, exist_ok=True)
        with open(os.path.join(outdir, "report.json"), "w") as fh:
            fh.write(text + "\n")
        for writer in writers:
            writer(outdir)
    return 0


def _base_report(command, args, metric=None):
    rep = {
        "command": command,
        "version": __version__,
        "seed": getattr(args, "seed", None),
        "config": {k: v for k, v in sorted(vars(args).items()) if k not in ("func",)},
    }
    if metric is not None:
        rep["metric"] = metric_config(metric)
        rep["lambda"] = metric.lambda_norm
    return rep


def _opts_from(args):
    kw = {}
    if getattr(args, "rel_tol", None) is not None:
        kw["rel_tol"] = args.rel_tol
    if getattr(args, "abs_tol", None) is not None:
        kw["abs_tol"] = args.abs_tol
    else:
        kw.setdefault("rel_tol", 1e-11)
        kw["abs_tol"] = 1e-13
    return IntegratorOptions(**kw)


# -- commands ----------------------------------------------------------------


def cmd_simulate(args):
    metric = parse_metric(args.metric)
    init = parse_init(metric, args.init)
    opts = _opts_from(args)
    traj = integrate(metric, init, args.length, opts)
    from .analysis import integral_drift

    drift_h, drift_pf = integral_drift(traj, stride=max(1, len(traj.t) // 4000))
    report = _base_report("simulate", args, metric)
    report["stats"] = traj.summary_dict()
    report["drift"] = {"dual_norm": drift_h, "p_phi": drift_pf}
    rec = detect_closure(traj, tol=args.closure_tol, opts=opts)
    report["closure"] = rec.to_dict() if rec is not None else None

    def write_csv(outdir):
        traj.to_csv(os.path.join(outdir, "trajectory.csv"))

    writers = [write_csv]
    if not args.no_figures:
        from .reporting import save_trajectory_figure

        writers.append(lambda d: save_trajectory_figure(traj, os.path.join(d, "trajectory.png")))
    return _emit(report, args, writers)


def cmd_spectrum(args):
    metric = parse_metric(args.metric)
    analytic = spectrum(metric.lambda_norm).to_dict()
    measured = measured_spectrum(metric, _opts_from(args))
    report = _base_report("spectrum", args, metric)
    report["analytic"] = analytic
    report["measured"] = measured
    writers = []
    if not args.no_figures:
        from .reporting import save_spectrum_figure

        writers.append(
            lambda d: save_spectrum_figure(analytic, measured, os.path.join(d, "spectrum.png"))
        )
    return _emit(report, args, writers)


def cmd_closed(args):
    metric = parse_metric(args.metric)
    grid = SearchGrid(directions=args.directions, horizon=args.horizon)
    records = find_closed_geodesics(metric, grid, tol=args.tol)
    report = _base_report("closed", args, metric)
    report["count"] = len(records)
    report["records"] = [r.to_dict() for r in records]
    writers = []
    if not args.no_figures:
        from .reporting import save_closed_geodesics_figure

        writers.append(
            lambda d: save_closed_geodesics_figure(records, os.path.join(d, "closed_geodesics.png"))
        )

    def write_csv(outdir):
        import csv

        with open(os.path.join(outdir, "closed_geodesics.csv"), "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["length", "winding", "residual", "exceptional", "on_equator"])
            for r in records:
                w.writerow([repr(r.length), r.winding, repr(r.residual), r.exceptional, r.on_equator])

    writers.append(write_csv)
    return _emit(report, args, writers)


def cmd_conjugate(args):
    metric = parse_metric(args.metric)
    rng = np.random.default_rng(args.seed)
    inits = random_unit_covectors(metric, rng, args.samples)
    jrecs = variational_flow_batch(
        metric, inits, np.full(len(inits), ch.CHART_Z), np.pi + 0.4, opts=_opts_from(args)
    )
    entries = []
    for jr in jrecs:
        entries.append(
            {
                "first_conjugate_time": jr.first_conjugate_time,
                "deviation_from_pi": None
                if jr.first_conjugate_time is None
                else abs(jr.first_conjugate_time - np.pi),
                "K_min": float(np.min(jr.K)) if len(jr.K) else None,
                "K_max": float(np.max(jr.K)) if len(jr.K) else None,
            }
        )
    report = _base_report("conjugate", args, metric)
    report["orbits"] = entries
    devs = [e["deviation_from_pi"] for e in entries if e["deviation_from_pi"] is not None]
    report["max_deviation_from_pi"] = max(devs) if devs else None
    writers = []
    if not args.no_figures:
        from .reporting import save_jacobi_figure

        writers.append(lambda d: save_jacobi_figure(jrecs, os.path.join(d, "jacobi.png")))
    return _emit(report, args, writers)


def cmd_rotation(args):
    metric = parse_metric(args.metric)
    rng = np.random.default_rng(args.seed)
    inits = random_unit_covectors(metric, rng, args.samples, min_amplitude=0.05)
    data = rotation_numbers(
        metric, inits, np.full(len(inits), ch.CHART_Z), args.half_oscillations
    )
    report = _base_report("rotation", args, metric)
    report["rotation_numbers"] = [d.rotation for d in data]
    report["mean"] = float(np.mean([d.rotation for d in data]))
    report["oscillation_symmetry_defect"] = float(
        max(abs(d.theta_max + d.theta_min) for d in data)
    )
    writers = []
    if not args.no_figures:
        from .reporting import save_rotation_figure

        writers.append(lambda d: save_rotation_figure(data, os.path.join(d, "rotation.png")))
    return _emit(report, args, writers)


def cmd_counterexample(args):
    params = CounterexampleParams(
        base_alpha=args.base_alpha,
        t0=args.t0,
        w_theta=args.w_theta,
        w_p=args.w_p,
        w_energy=args.w_energy,
        plateau=args.plateau,
    )
    rep = verify_counterexample(
        params,
        seed=args.seed,
        n_other=args.n_other,
        other_horizon=args.other_horizon,
        n_conjugate=args.n_conjugate,
        hessian_grid=tuple(int(v) for v in args.hessian_grid.split("x")),
    )
    report = _base_report("counterexample", args)
    report.update(rep.to_dict())
    writers = []
    if not args.no_figures:
        from .reporting import save_counterexample_figure

        writers.append(
            lambda d: save_counterexample_figure(rep, os.path.join(d, "counterexample.png"))
        )
    return _emit(report, args, writers)


def cmd_conjugacy(args):
    from .analysis import estimate_lambda

    entries = []
    for label in (args.metric_a, args.metric_b):
        metric = parse_metric(label)
        lam_est = estimate_lambda(metric)
        measured = measured_spectrum(metric, _opts_from(args))
        entries.append(
            {
                "metric": label,
                "lambda_estimate": lam_est,
                "measured_shortest": measured.get("L_short"),
                "measured_second": measured.get("L_long"),
                "invariants": list(conjugacy_invariants(lam_est)),
                "closing_deformation": deform_to_closed(lam_est),
            }
        )
    verdict = conjugacy_verdict(
        entries[0]["measured_shortest"], entries[1]["measured_shortest"], args.tol
    )
    report = _base_report("conjugacy", args)
    report["metrics"] = entries
    report["verdict"] = verdict
    writers = []
    if not args.no_figures:
        from .reporting import save_conjugacy_figure

        writers.append(lambda d: save_conjugacy_figure(entries, os.path.join(d, "conjugacy.png")))
    return _emit(report, args, writers)


# -- parser ------------------------------------------------------------------


def build_parser():
    parser = argparse.ArgumentParser(
        prog="finslerflow",
        description="geodesic-flow laboratory for constant-flag-curvature Finsler metrics on the 2-sphere",
    )
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--seed", type=int, default=42)
        p.add_argument("--outdir", default=None)
        p.add_argument("--no-figures", action="store_true")
        p.add_argument("--rel-tol", type=float, default=None)
        p.add_argument("--abs-tol", type=float, default=None)
        p.add_argument("--config", default=None, help="JSON file overriding defaults")

    p = sub.add_parser("simulate", help="integrate one orbit")
    p.add_argument("--metric", required=True)
    p.add_argument("--init", default="theta=0.2,phi=0,dir=east")
    p.add_argument("--length", type=float, required=True)
    p.add_argument("--closure-tol", type=float, default=1e-8)
    common(p)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("spectrum", help="analytic vs measured exceptional lengths")
    p.add_argument("--metric", required=True)
    common(p)
    p.set_defaults(func=cmd_spectrum)

    p = sub.add_parser("closed", help="closed-geodesic sweep")
    p.add_argument("--metric", required=True)
    p.add_argument("--horizon", type=float, default=None)
    p.add_argument("--directions", type=int, default=16)
    p.add_argument("--tol", type=float, default=1e-8)
    common(p)
    p.set_defaults(func=cmd_closed)

    p = sub.add_parser("conjugate", help="first conjugate times")
    p.add_argument("--metric", required=True)
    p.add_argument("--samples", type=int, default=10)
    common(p)
    p.set_defaults(func=cmd_conjugate)

    p = sub.add_parser("rotation", help="rotation numbers")
    p.add_argument("--metric", required=True)
    p.add_argument("--samples", type=int, default=10)
    p.add_argument("--half-oscillations", type=int, default=16)
    common(p)
    p.set_defaults(func=cmd_rotation)

    p = sub.add_parser("counterexample", help="verify the perturbed metric")
    p.add_argument("--base-alpha", type=float, default=CounterexampleParams.base_alpha)
    p.add_argument("--t0", type=float, default=CounterexampleParams.t0)
    p.add_argument("--w-theta", type=float, default=CounterexampleParams.w_theta)
    p.add_argument("--w-p", type=float, default=CounterexampleParams.w_p)
    p.add_argument("--w-energy", type=float, default=CounterexampleParams.w_energy)
    p.add_argument("--plateau", type=float, default=CounterexampleParams.plateau)
    p.add_argument("--n-other", type=int, default=50)
    p.add_argument("--other-horizon", type=float, default=300.0)
    p.add_argument("--n-conjugate", type=int, default=20)
    p.add_argument("--hessian-grid", default="20x20x40")
    common(p)
    p.set_defaults(func=cmd_counterexample)

    p = sub.add_parser("conjugacy", help="flow-conjugacy verdict for two metrics")
    p.add_argument("--metric-a", required=True)
    p.add_argument("--metric-b", required=True)
    p.add_argument("--tol", type=float, default=1e-5)
    common(p)
    p.set_defaults(func=cmd_conjugacy)

    return parser


def main(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    # --config supplies defaults; explicit flags still win
    overrides = {}
    if "--config" in argv:
        try:
            cfg_path = argv[argv.index("--config") + 1]
        except IndexError:
            print("precondition violation: --config needs a path", file=sys.stderr)
            return 2
        with open(cfg_path) as fh:
            overrides = {k.replace("-", "_"): v for k, v in json.load(fh).items()}
    parser = build_parser()
    if overrides:
        for action in parser._subparsers._group_actions[0].choices.values():
            action.set_defaults(**overrides)
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except PRECONDITION_ERRORS as exc:
        print(f"precondition violation: {exc}", file=sys.stderr)
        return 2
    except NUMERICAL_ERRORS as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return 3
    except FinslerFlowError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
