"""Command-line front end: ``anglestab <command> <scenario> [options]``.

Exit codes: 0 success, 2 parse/validation, 3 power-flow divergence,
4 numerical failure, 5 no CCT bracket, 6 non-equilibrium operating point.
"""
from __future__ import annotations

import argparse
import csv
import json
import math
import os
import sys
import tempfile
import time
from pathlib import Path

from . import __version__
from . import scenario as scn
from . import smallsignal as ss
from . import studies as st
from .dynsim import DEG, simulate, write_trace_csv
from .errors import (
    AnglestabError,
    DivergedError,
    InitializationError,
    NoBracketError,
    NumericalError,
    ScenarioError,
    StructuralError,
)
from .powergrid import solve_power_flow

EXIT_OK, EXIT_PARSE, EXIT_DIVERGED, EXIT_NUMERICAL, EXIT_NO_BRACKET, EXIT_NON_EQUILIBRIUM = 0, 2, 3, 4, 5, 6
OUT_ENV = "ANGLESTAB_OUTPUT_DIR"


# -- helpers -----------------------------------------------------------------


def resolve_scenario(arg: str) -> Path:
    """A file path, or the name of a bundled scenario."""
    p = Path(arg)
    if p.exists():
        return p
    try:
        return scn.bundled(arg)
    except ScenarioError:
        raise ScenarioError(f"scenario {arg!r} not found (neither a file nor a bundled name)") from None


def parse_overrides(items) -> list:
    out = []
    for item in items or ():
        path, eq, value = item.partition("=")
        if not eq or not path.strip():
            raise ScenarioError(f"override {item!r} must look like path=value")
        out.append((path.strip(), value.strip()))
    return out


def load_scenario(args) -> scn.Scenario:
    sc = scn.load(resolve_scenario(args.scenario))
    for path, value in parse_overrides(getattr(args, "override", None)):
        sc = scn.apply_override(sc, path, value)
    return sc


def output_dir(args, command: str) -> Path:
    if args.out:
        d = Path(args.out)
    else:
        root = Path(os.environ.get(OUT_ENV, "anglestab-out"))
        d = root / f"{command}-{Path(args.scenario).stem}"
    d.mkdir(parents=True, exist_ok=True)
    return d


def write_atomic(path: Path, text: str) -> None:
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.")
    with os.fdopen(fd, "w") as fh:
        fh.write(text)
    os.replace(tmp, path)


def write_manifest(out: Path, args, command: str, started: float, files) -> None:
    manifest = {
        "scenario": str(args.scenario),
        "command": command,
        "argv": getattr(args, "argv", sys.argv[1:]),
        "output_dir": str(out),
        "tool_version": __version__,
        "files": sorted(files),
        "wall_time_s": round(time.perf_counter() - started, 3),
    }
    write_atomic(out / "manifest.json", json.dumps(manifest, indent=2) + "\n")


def disturbance_class(sc: scn.Scenario) -> str:
    if sc.study.kind == "small_signal":
        return st.SMALL
    if sc.study.kind == "fault" or any(e.action == "fault" for e in sc.events):
        return st.LARGE
    return st.SMALL


def first_event_time(sc: scn.Scenario) -> float:
    return min((e.time for e in sc.events), default=0.0)


def assess(sc: scn.Scenario, trace):
    """Verdict, taxonomy label and (for small disturbances) a ringdown estimate."""
    s = sc.study
    t_start = s.t_start if s.t_start > 0 else first_event_time(sc)
    estimate = None
    if disturbance_class(sc) == st.SMALL:
        verdict = st.small_disturbance_verdict(trace, t_start, growth_tol=s.growth_tol,
                                               angle_threshold=s.angle_threshold, window=s.window)
        channel = s.channel or f"{trace.devices()[0]}.angle"
        estimate = st.estimate_oscillation(trace, channel, t_start)
    else:
        verdict = st.detect_loss_of_sync(trace, s.angle_threshold, s.window, t_ref=t_start,
                                         min_slip_rate=s.min_slip_rate)
    return verdict, st.classify_event(verdict, scn.technologies(sc)), estimate


def estimate_fields(est) -> dict:
    if est is None:
        return {}
    return {
        "oscillation.frequency_hz": est.frequency,
        "oscillation.growth_rate": est.growth_rate,
        "oscillation.amplitude": est.amplitude,
        "oscillation.fit_residual": est.fit_residual,
    }


def _gnuplot(trace_name: str, names) -> str:
    cols = [(k + 2, n) for k, n in enumerate(names) if n.endswith(".angle")]
    plots = ", ".join(f"'{trace_name}' using 1:{c} with lines title '{n}'" for c, n in cols)
    return (
        "set datafile separator ','\nset key autotitle columnhead\n"
        "set xlabel 'time (s)'\nset ylabel 'angle w.r.t. infinite bus (deg)'\n"
        f"plot {plots}\n"
    )


# -- commands ----------------------------------------------------------------


def cmd_powerflow(args) -> int:
    started = time.perf_counter()
    sc = load_scenario(args)
    net = scn.build_network(sc)
    sol = solve_power_flow(net, scn.injections(sc), tol=sc.system.pf_tol, max_iter=sc.system.pf_max_iter)
    out = output_dir(args, "powerflow")
    rows = []
    for bus_id in sol.bus_ids:
        v = sol.voltage(bus_id)
        s = sol.injection(bus_id) * sol.s_base
        ang = math.atan2(v.imag, v.real) * DEG
        rows.append((bus_id, abs(v), 0.0 if ang == 0 else ang, s.real, s.imag))
    print(f"power flow converged in {sol.iterations} iterations (max mismatch {sol.max_mismatch:.2e} pu)")
    print(f"{'bus':>5} {'V (pu)':>10} {'angle (deg)':>12} {'P (MW)':>11} {'Q (MVAr)':>11}")
    for r in rows:
        print(f"{r[0]:>5d} {r[1]:>10.5f} {r[2]:>12.4f} {r[3]:>11.2f} {r[4]:>11.2f}")
    with open(out / "powerflow.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["bus", "v_pu", "angle_deg", "p_mw", "q_mvar"])
        for r in rows:
            w.writerow([r[0]] + [f"{x:.10g}" for x in r[1:]])
    write_manifest(out, args, "powerflow", started, ["powerflow.csv"])
    return EXIT_OK


def cmd_simulate(args) -> int:
    started = time.perf_counter()
    sc = load_scenario(args)
    snap = scn.build_snapshot(sc)
    cfg = scn.sim_config(sc, dt=args.dt, t_end=args.t_end, stride=args.stride, integrator=args.integrator)
    out = output_dir(args, "simulate")
    try:
        trace = simulate(snap, scn.build_events(sc), cfg)
    except NumericalError as exc:
        partial = getattr(exc, "trace", None)
        if partial is not None:
            write_trace_csv(partial, out / "trace.csv")
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    write_trace_csv(trace, out / "trace.csv")
    verdict, label, est = assess(sc, trace)
    params = {"scenario": sc.system.name or Path(args.scenario).stem, "t_end": cfg.t_end, "dt": cfg.dt,
              "integrator": cfg.integrator}
    results = {**st.verdict_fields(verdict, label), **estimate_fields(est)}
    report = st.flat_report("simulate", params, results)
    write_atomic(out / "verdict.txt", report)
    files = ["trace.csv", "verdict.txt"]
    if args.gnuplot:
        write_atomic(out / "angles.gp", _gnuplot("trace.csv", trace.names))
        files.append("angles.gp")
    sys.stdout.write(report)
    write_manifest(out, args, "simulate", started, files)
    return EXIT_OK


def run_cct(sc: scn.Scenario, lo=None, hi=None, tol=None, expand=0) -> st.CctResult:
    snap = scn.build_snapshot(sc)
    template, _ = scn.fault_template(sc)
    s = sc.study
    lo = s.cct_lo if lo is None else lo
    hi = s.cct_hi if hi is None else hi
    tol = s.cct_tol if tol is None else tol

    def detector(tr):
        return st.detect_loss_of_sync(tr, s.angle_threshold, s.window, t_ref=template.fault_time,
                                      min_slip_rate=s.min_slip_rate)

    return st.find_cct(snap, template, lo, hi, tol=tol, config=scn.sim_config(sc), expand=expand,
                       detector=detector)


def cmd_cct(args) -> int:
    started = time.perf_counter()
    sc = load_scenario(args)
    out = output_dir(args, "cct")
    try:
        res = run_cct(sc, args.lo, args.hi, args.tol, args.expand)
    except NoBracketError as exc:
        print(f"no bracket: {exc}", file=sys.stderr)
        print(f"lo_stable = {exc.lo_stable}\nhi_stable = {exc.hi_stable}")
        return EXIT_NO_BRACKET
    params = {"scenario": sc.system.name or Path(args.scenario).stem, "fault_event": sc.study.fault_event,
              "clear_event": sc.study.clear_event, "tol": res.tolerance}
    results = {
        "cct_s": res.cct,
        "bracket_stable_s": res.bracket[0],
        "bracket_unstable_s": res.bracket[1],
        "bracket_width_s": res.bracket[1] - res.bracket[0],
        "evaluations": res.evaluations,
        "simulations": res.simulations,
        "probes": [f"{d:.6f}:{'stable' if s else 'unstable'}" for d, s in res.probes],
    }
    report = st.flat_report("cct", params, results)
    write_atomic(out / "cct.txt", report)
    sys.stdout.write(report)
    write_manifest(out, args, "cct", started, ["cct.txt"])
    return EXIT_OK


def run_modes(sc: scn.Scenario):
    snap = scn.build_snapshot(sc)
    return ss.eigenmodes(ss.linearize(snap))


def cmd_modes(args) -> int:
    started = time.perf_counter()
    sc = load_scenario(args)
    out = output_dir(args, "modes")
    modes = run_modes(sc)
    ss.write_modes_csv(modes, out / "modes.csv")
    print(f"{'id':>3} {'re':>11} {'im':>11} {'f (Hz)':>8} {'zeta':>9}  top states")
    for k, m in enumerate(modes, 1):
        flag = " *" if m.damping_ratio < 0 else "  "
        print(f"{k:>3} {m.eigenvalue.real:>11.4f} {m.eigenvalue.imag:>11.4f} {m.frequency:>8.4f} "
              f"{m.damping_ratio:>9.4f}{flag} {', '.join(m.top_states(3))}")
    if any(m.damping_ratio < 0 for m in modes):
        print("* negative damping")
    write_manifest(out, args, "modes", started, ["modes.csv"])
    return EXIT_OK


# -- sweep -------------------------------------------------------------------

SWEEP_COLUMNS = {
    "modes": ["least_re", "least_im", "least_freq_hz", "least_damping_ratio", "min_damping_ratio"],
    "cct": ["cct_s", "bracket_stable_s", "bracket_unstable_s", "evaluations", "simulations"],
    "simulate": ["verdict", "first_violation_time", "violating_devices", "proposed_label",
                 "oscillation_freq_hz", "oscillation_growth_rate"],
}


def sweep_row(sc: scn.Scenario, study: str) -> dict:
    if study == "modes":
        modes = run_modes(sc)
        m = ss.least_damped(modes)
        return {
            "least_re": m.eigenvalue.real if m else None,
            "least_im": m.eigenvalue.imag if m else None,
            "least_freq_hz": m.frequency if m else None,
            "least_damping_ratio": m.damping_ratio if m else None,
            "min_damping_ratio": min(x.damping_ratio for x in modes),
        }
    if study == "cct":
        r = run_cct(sc, expand=4)
        return {"cct_s": r.cct, "bracket_stable_s": r.bracket[0], "bracket_unstable_s": r.bracket[1],
                "evaluations": r.evaluations, "simulations": r.simulations}
    snap = scn.build_snapshot(sc)
    trace = simulate(snap, scn.build_events(sc), scn.sim_config(sc))
    verdict, label, est = assess(sc, trace)
    return {
        "verdict": "stable" if verdict.stable else "unstable",
        "first_violation_time": verdict.first_violation_time,
        "violating_devices": ";".join(verdict.violating_devices),
        "proposed_label": label.proposed,
        "oscillation_freq_hz": est.frequency if est else None,
        "oscillation_growth_rate": est.growth_rate if est else None,
    }


def _cell(v) -> str:
    if v is None:
        return ""
    if isinstance(v, float):
        return f"{v:.10g}"
    return str(v)


def cmd_sweep(args) -> int:
    started = time.perf_counter()
    base = load_scenario(args)
    values = [v.strip() for v in args.values.split(",") if v.strip()]
    if not values:
        raise ScenarioError("--values needs at least one value")
    for v in values:
        try:
            float(v)
        except ValueError:
            raise ScenarioError(f"sweep value {v!r} is not a number") from None
    scn.apply_override(base, args.param, values[0])  # validates the path before any run
    out = output_dir(args, "sweep")
    cols = SWEEP_COLUMNS[args.study]
    rows = []
    for v in values:
        try:
            row = {"status": "ok", "error": "", **sweep_row(scn.apply_override(base, args.param, v), args.study)}
        except AnglestabError as exc:
            row = {"status": "failed", "error": str(exc).replace("\n", " ")}
        rows.append((v, row))
        print(f"{args.param} = {v}: {row['status']}", file=sys.stderr)
    with open(out / "sweep.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["param", "value", "study", "status"] + cols + ["error"])
        for v, row in rows:
            w.writerow([args.param, v, args.study, row["status"]] + [_cell(row.get(c)) for c in cols]
                       + [row["error"]])
    sys.stdout.write((out / "sweep.csv").read_text())
    write_manifest(out, args, "sweep", started, ["sweep.csv"])
    if all(row["status"] == "failed" for _, row in rows):
        return EXIT_NUMERICAL
    return EXIT_OK


# -- entry point -------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="anglestab", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=f"anglestab {__version__}")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp):
        sp.add_argument("scenario", help="scenario file or bundled scenario name")
        sp.add_argument("--out", help=f"output directory (default: ${OUT_ENV} or ./anglestab-out)")
        sp.add_argument("--override", action="append", metavar="PATH=VALUE",
                        help="set a scenario value, e.g. gfm.d_gfm=193 (repeatable)")

    sp = sub.add_parser("powerflow", help="solve the load flow")
    common(sp)
    sp.set_defaults(func=cmd_powerflow)

    sp = sub.add_parser("simulate", help="time-domain run with stability verdict")
    common(sp)
    sp.add_argument("--dt", type=float)
    sp.add_argument("--t-end", dest="t_end", type=float)
    sp.add_argument("--stride", type=int)
    sp.add_argument("--integrator", choices=["trapezoidal", "rk4"])
    sp.add_argument("--gnuplot", action="store_true", help="also write a gnuplot script for the angles")
    sp.set_defaults(func=cmd_simulate)

    sp = sub.add_parser("cct", help="critical clearing time by bisection")
    common(sp)
    sp.add_argument("--lo", type=float)
    sp.add_argument("--hi", type=float)
    sp.add_argument("--tol", type=float)
    sp.add_argument("--expand", type=int, default=0, help="bracket expansion steps when an endpoint fails")
    sp.set_defaults(func=cmd_cct)

    sp = sub.add_parser("modes", help="eigenvalues and participation at the initial operating point")
    common(sp)
    sp.set_defaults(func=cmd_modes)

    sp = sub.add_parser("sweep", help="repeat a study over values of one parameter")
    common(sp)
    sp.add_argument("--param", required=True, help="override path; join several with '+'")
    sp.add_argument("--values", required=True, help="comma-separated numbers")
    sp.add_argument("--study", choices=sorted(SWEEP_COLUMNS), default="modes")
    sp.set_defaults(func=cmd_sweep)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    argv = sys.argv[1:] if argv is None else list(argv)
    args = parser.parse_args(argv)
    args.argv = argv
    try:
        return args.func(args)
    except (ScenarioError, StructuralError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_PARSE
    except DivergedError as exc:
        print(f"power flow diverged: {exc}", file=sys.stderr)
        return EXIT_DIVERGED
    except InitializationError as exc:
        print(f"not an equilibrium: {exc}", file=sys.stderr)
        return EXIT_NON_EQUILIBRIUM
    except NoBracketError as exc:
        print(f"no bracket: {exc}", file=sys.stderr)
        return EXIT_NO_BRACKET
    except NumericalError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL


if __name__ == "__main__":
    sys.exit(main())
