"""Acceptance suite: one test per criterion, each printing a PASS/FAIL line.

Run with ``pytest tests/test_acceptance.py -s -v``; the lines are also
repeated in the terminal summary.
"""
import csv
import math
import time

import numpy as np
import pytest

from anglestab import cli
from anglestab import scenario as scn
from anglestab import smallsignal as ss
from anglestab import studies as st
from anglestab.dynsim import LoadScale, SimConfig, simulate

from conftest import bundled, snapshot, trace

RESULTS = []

SM, GFM = "SM-1", "GFM-VSC-2"
ANGLES = (f"{SM}.angle", f"{GFM}.angle")


def report(n, ok, detail):
    line = f"{'PASS' if ok else 'FAIL'} criterion {n:>2}: {detail}"
    RESULTS.append(line)
    print("\n" + line)
    assert ok, line


def fault_events(clear_after):
    sc = bundled("fault1_150ms")
    template, _ = scn.fault_template(sc)
    return template.events(clear_after)


def verdict_of(name):
    sc = bundled(name)
    return cli.assess(sc, trace(name))


def test_01_equilibrium_hold():
    started = time.perf_counter()
    tr = simulate(snapshot("canonical"), (), SimConfig(t_end=10.0, dt=1e-3))
    elapsed = time.perf_counter() - started
    drift = max(float(np.max(np.abs(tr[c] - tr[c][0]))) for c in tr.names)
    report(1, drift < 1e-6 and elapsed < 5.0,
           f"max drift {drift:.2e} (< 1e-6) over {len(tr.names)} channels, runtime {elapsed:.2f} s (< 5 s)")


def test_02_fault_dichotomy():
    v150, _, _ = verdict_of("fault1_150ms")
    v200, _, _ = verdict_of("fault1_200ms")
    ok = v150.stable and not v200.stable and set(v200.violating_devices) == {SM, GFM}
    report(2, ok, f"150 ms {'stable' if v150.stable else 'unstable'}, "
                  f"200 ms {'stable' if v200.stable else 'unstable'} with violators {list(v200.violating_devices)}")


def test_03_cct_bracket():
    res = cli.run_cct(bundled("fault1_150ms"))
    width = res.bracket[1] - res.bracket[0]
    ok = 0.150 < res.cct < 0.200 and width <= 0.002 + 1e-12 and res.simulations <= 8
    report(3, ok, f"CCT {res.cct * 1e3:.2f} ms in (150, 200), bracket {res.bracket[0] * 1e3:.2f}-"
                  f"{res.bracket[1] * 1e3:.2f} ms (width {width * 1e3:.3f} <= 2), {res.simulations} simulations (<= 8)")


def test_04_equal_area_oracle():
    started = time.perf_counter()
    sc = bundled("smib_classical")
    snap = snapshot("smib_classical")
    m = snap.system.device(SM)
    delta0 = snap.x[m.offset] - snap.system.infinite_bus.angle
    pm = snap.x[m.offset + 8]
    ref = st.equal_area_cct(delta0, m.spec.params.h, pm, snap.system.omega_s)
    res = cli.run_cct(sc, lo=0.1, hi=0.5, tol=0.002)
    elapsed = time.perf_counter() - started
    err = abs(res.cct - ref)
    report(4, err < 0.002 and elapsed < 30.0,
           f"bisection {res.cct * 1e3:.2f} ms vs closed form {ref * 1e3:.2f} ms (|diff| {err * 1e3:.2f} < 2 ms), "
           f"runtime {elapsed:.1f} s (< 30 s)")


def test_05_case_a_damped():
    verdict, _, est = verdict_of("caseA_loadstep")
    modes = ss.eigenmodes(ss.linearize(snapshot("caseA_loadstep")))
    zmin = min(m.damping_ratio for m in modes)
    ok = verdict.stable and zmin > 0 and est.growth_rate is not None and est.growth_rate < 0
    report(5, ok, f"verdict {'stable' if verdict.stable else 'unstable'}, min damping ratio {zmin:.4f} (> 0), "
                  f"ringdown growth {est.growth_rate:.3f} 1/s (< 0)")


def test_06_case_b_unstable_mode():
    snap = snapshot("caseB_loadstep")
    mode = ss.least_damped(ss.eigenmodes(ss.linearize(snap)))
    tr = trace("caseB_loadstep")
    t0 = bundled("caseB_loadstep").study.t_start
    # the trace rings about the post-step operating point, so compare against the model there
    post = ss.linearize(ss.find_equilibrium(snap, [LoadScale(5, 0.9)]))
    rep = ss.mode_time_consistency(post, tr, f"{SM}.angle", t_start=t0)
    pre = ss.mode_time_consistency(ss.linearize(snap), tr, f"{SM}.angle", t_start=t0)
    print(f"\n  info: against the pre-step model, growth error {pre.growth_error:.1%}, "
          f"frequency error {pre.freq_error:.1%}")
    ok = (mode.damping_ratio < 0 and 0.3 <= mode.frequency <= 0.8 and rep.conclusive
          and rep.growth_error < 0.10 and rep.freq_error < 0.05)
    report(6, ok, f"least-damped {mode.eigenvalue.real:.4f}{mode.eigenvalue.imag:+.4f}j, "
                  f"{mode.frequency:.4f} Hz, damping ratio {mode.damping_ratio:.4f} (< 0); "
                  f"trace growth {rep.estimate.growth_rate:.4f} vs {rep.model_growth:.4f} "
                  f"(error {rep.growth_error:.1%} < 10%), frequency {rep.estimate.frequency:.4f} vs "
                  f"{rep.model_frequency:.4f} Hz (error {rep.freq_error:.1%} < 5%)")


def _sweep(tmp_path, name, param, values, study):
    out = tmp_path / f"{study}-{param}"
    started = time.perf_counter()
    code = cli.main(["sweep", name, "--param", param, "--values", values, "--study", study, "--out", str(out)])
    elapsed = time.perf_counter() - started
    with open(out / "sweep.csv", newline="") as fh:
        rows = list(csv.DictReader(fh))
    return code, rows, elapsed


def test_07a_cct_falls_with_dispatch(tmp_path):
    code, rows, elapsed = _sweep(tmp_path, "fault1_150ms", f"{SM}.p_mw+{GFM}.p_mw", "600,650,700", "cct")
    ccts = [float(r["cct_s"]) if r["status"] == "ok" else math.nan for r in rows]
    ok = code == 0 and all(b <= a for a, b in zip(ccts, ccts[1:])) and elapsed < 120.0
    report("7a", ok, "CCT over 600/650/700 MW = " + " / ".join(f"{c * 1e3:.1f}" for c in ccts)
           + f" ms (non-increasing), sweep {elapsed:.1f} s (< 120 s)")


def test_07b_damping_rises_with_d_gfm(tmp_path):
    code, rows, elapsed = _sweep(tmp_path, "caseB_loadstep", "gfm.d_gfm", "20,100,193", "modes")
    z = [float(r["least_damping_ratio"]) for r in rows]
    ok = code == 0 and all(b >= a for a, b in zip(z, z[1:])) and elapsed < 120.0
    report("7b", ok, "least-damped ratio over D_GFM 20/100/193 = " + " / ".join(f"{x:.4f}" for x in z)
           + f" (non-decreasing), sweep {elapsed:.1f} s (< 120 s)")


def test_07c_pss_adds_damping(tmp_path):
    code, rows, elapsed = _sweep(tmp_path, "caseB_loadstep", "machine.pss.enabled", "0,1", "modes")
    off, on = (float(r["least_damping_ratio"]) for r in rows)
    ok = code == 0 and on > off and elapsed < 120.0
    report("7c", ok, f"least-damped ratio PSS off {off:.4f}, on {on:.4f} (strictly larger), "
                     f"sweep {elapsed:.1f} s (< 120 s)")


def test_08_numerical_hygiene():
    snap = snapshot("fault1_150ms")
    ev = fault_events(0.15)
    cfg = scn.sim_config(bundled("fault1_150ms"))
    base = trace("fault1_150ms")
    half = simulate(snap, ev, SimConfig(t_end=cfg.t_end, dt=cfg.dt / 2))
    rk4 = simulate(snap, ev, SimConfig(t_end=cfg.t_end, dt=cfg.dt, integrator="rk4"))
    d_half = max(float(np.max(np.abs(base[c] - half[c][::2]))) for c in ANGLES)
    d_rk4 = max(float(np.max(np.abs(base[c] - rk4[c]))) for c in ANGLES)

    eq = snapshot("caseA_loadstep")
    model = ss.linearize(eq)
    dx = np.zeros(model.n)
    k = model.state_labels.index(f"{SM}.delta")
    dx[k] = 1e-4
    pert = simulate(eq.with_state(eq.x + dx), (), SimConfig(t_end=5.0))
    lin = model.response(dx, pert.times)[:, k]
    sim = np.radians(pert[f"{SM}.angle"]) - eq.x[k]
    rel = float(np.max(np.abs(sim - lin)) / np.max(np.abs(lin)))
    ok = d_half < 0.5 and d_rk4 < 0.2 and rel < 0.02
    report(8, ok, f"step halving {d_half:.4f} deg (< 0.5), trapezoidal vs rk4 {d_rk4:.4f} deg (< 0.2), "
                  f"linear vs 1e-4 perturbation {rel:.1e} relative (< 0.02) over 5 s")


def test_09_limiter_safety():
    worst = {}
    for name in scn.bundled_names():
        sc = bundled(name)
        for g in sc.gfms:
            worst[f"{name}:{g.name}"] = (float(np.max(trace(name)[f"{g.name}.I"])), g.params.i_max)
    ok = bool(worst) and all(i <= lim + 1e-6 for i, lim in worst.values())
    peak = max(worst.values(), key=lambda v: v[0] - v[1])
    report(9, ok, f"{len(worst)} converter traces, peak |I| {peak[0]:.6f} pu vs i_max {peak[1]} (+1e-6)")


def test_10_classification_contract():
    v_large, lab_large, _ = verdict_of("fault1_200ms")
    v_small, lab_small, _ = verdict_of("caseB_loadstep")
    want = {"rotor_angle_large", "converter_driven_slow"}, {"rotor_angle_small", "converter_driven_slow"}
    ok = (not v_large.stable and not v_small.stable
          and lab_large.proposed == "angle_stability_large_disturbance"
          and lab_small.proposed == "angle_stability_small_disturbance"
          and set(lab_large.legacy) == want[0] and set(lab_small.legacy) == want[1])
    report(10, ok, f"fault: {lab_large.proposed} {sorted(lab_large.legacy)}; "
                   f"load step: {lab_small.proposed} {sorted(lab_small.legacy)}")
